//! Numerical toolkit for Λ-coalescents whose driving measure has an atom
//! at zero (a Kingman component): rate functionals, speed-of-descent
//! functions, exact block-count simulation, the Gaussian small-time limit
//! process, and a Monte-Carlo experiment harness tying them together.

pub mod experiments;
pub mod limit;
pub mod measure;
pub mod quad;
pub mod rates;
pub mod sim;
pub mod speed;
pub mod stats;
pub mod util;

pub use measure::{DrivingMeasure, MeasureConfig, MeasureError};
pub use rates::{RateFunctional, TransitionRow};
pub use speed::{SpeedFunction, SpeedVariant};
