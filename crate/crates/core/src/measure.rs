//! Driving measures Λ = c·δ₀ + (1−c)Λ₁ on [0, 1].
//!
//! The Kingman mass c = Λ({0}) must be strictly positive. The non-Kingman
//! part Λ₁ is a mixture of point atoms on (0, 1] and Beta densities on
//! (0, 1). A measure is validated (and its weights renormalized) once at
//! construction and is immutable afterwards, so it can be shared freely
//! across worker threads.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, QuadratureFailure};
use crate::util::ln_beta;

/// Raw configuration as read from JSON:
/// `{"kingman_mass": c, "atoms": [{"y", "w"}], "betas": [{"alpha", "beta", "w"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub kingman_mass: f64,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    #[serde(default)]
    pub betas: Vec<BetaConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomConfig {
    pub y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub w: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("total mass {total} differs from 1 by {deviation:e} (>= 1e-9)")]
    NonProbability { total: f64, deviation: f64 },
    #[error("Kingman atom must be strictly positive, got {mass}")]
    NoKingmanAtom { mass: f64 },
    #[error("atom location {location} outside (0, 1]")]
    BadSupport { location: f64 },
    #[error("{field} must be strictly positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
}

/// Point mass of Λ₁ at `location` with (unnormalized) weight `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Beta(alpha, beta) density component of Λ₁ with weight `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaComponent {
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
}

impl BetaComponent {
    pub(crate) fn ln_norm(&self) -> f64 {
        ln_beta(self.alpha, self.beta)
    }
}

/// Validated probability measure Λ = c·δ₀ + Σ wᵢ·δ_{yᵢ} + Σ wⱼ·Beta(αⱼ, βⱼ).
///
/// Weights are stored already scaled so that `kingman_mass` plus all
/// component weights sum to exactly 1 (up to rounding); the component
/// weights therefore carry the (1−c) factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingMeasure {
    kingman_mass: f64,
    atoms: Vec<Atom>,
    beta_components: Vec<BetaComponent>,
}

/// Relative tolerance for Λ₁ quadrature.
pub const LAMBDA1_QUAD_REL_TOL: f64 = 1e-10;

impl DrivingMeasure {
    /// Validate raw fields; renormalizes the weights when the raw total is
    /// within 1e-9 of 1 and errors otherwise.
    pub fn validate(config: &MeasureConfig) -> Result<Self, MeasureError> {
        let c = config.kingman_mass;
        if !c.is_finite() || c <= 0.0 {
            return Err(MeasureError::NoKingmanAtom { mass: c });
        }
        for a in &config.atoms {
            if !(a.y > 0.0 && a.y <= 1.0) {
                return Err(MeasureError::BadSupport { location: a.y });
            }
            if !(a.w > 0.0 && a.w.is_finite()) {
                return Err(MeasureError::NonPositive {
                    field: "atom weight",
                    value: a.w,
                });
            }
        }
        for b in &config.betas {
            if !(b.alpha > 0.0 && b.alpha.is_finite()) {
                return Err(MeasureError::NonPositive {
                    field: "beta alpha",
                    value: b.alpha,
                });
            }
            if !(b.beta > 0.0 && b.beta.is_finite()) {
                return Err(MeasureError::NonPositive {
                    field: "beta beta",
                    value: b.beta,
                });
            }
            if !(b.w > 0.0 && b.w.is_finite()) {
                return Err(MeasureError::NonPositive {
                    field: "beta weight",
                    value: b.w,
                });
            }
        }
        let total = c
            + config.atoms.iter().map(|a| a.w).sum::<f64>()
            + config.betas.iter().map(|b| b.w).sum::<f64>();
        let deviation = (total - 1.0).abs();
        if deviation >= 1e-9 {
            return Err(MeasureError::NonProbability { total, deviation });
        }
        let scale = 1.0 / total;
        Ok(Self {
            kingman_mass: c * scale,
            atoms: config
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.y,
                    weight: a.w * scale,
                })
                .collect(),
            beta_components: config
                .betas
                .iter()
                .map(|b| BetaComponent {
                    alpha: b.alpha,
                    beta: b.beta,
                    weight: b.w * scale,
                })
                .collect(),
        })
    }

    /// Λ = δ₀: the standard Kingman coalescent.
    pub fn pure_kingman() -> Self {
        Self {
            kingman_mass: 1.0,
            atoms: Vec::new(),
            beta_components: Vec::new(),
        }
    }

    /// Λ = c·δ₀ + (1−c)·δ_y.
    pub fn kingman_with_atom(c: f64, y: f64) -> Result<Self, MeasureError> {
        Self::validate(&MeasureConfig {
            kingman_mass: c,
            atoms: vec![AtomConfig { y, w: 1.0 - c }],
            betas: Vec::new(),
        })
    }

    /// Λ = c·δ₀ + (1−c)·Beta(alpha, beta).
    pub fn kingman_with_beta(c: f64, alpha: f64, beta: f64) -> Result<Self, MeasureError> {
        Self::validate(&MeasureConfig {
            kingman_mass: c,
            atoms: Vec::new(),
            betas: vec![BetaConfig {
                alpha,
                beta,
                w: 1.0 - c,
            }],
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, String> {
        let config: MeasureConfig = serde_json::from_str(s).map_err(|e| e.to_string())?;
        Self::validate(&config).map_err(|e| e.to_string())
    }

    pub fn to_config(&self) -> MeasureConfig {
        MeasureConfig {
            kingman_mass: self.kingman_mass,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomConfig {
                    y: a.location,
                    w: a.weight,
                })
                .collect(),
            betas: self
                .beta_components
                .iter()
                .map(|b| BetaConfig {
                    alpha: b.alpha,
                    beta: b.beta,
                    w: b.weight,
                })
                .collect(),
        }
    }

    pub fn kingman_mass(&self) -> f64 {
        self.kingman_mass
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn beta_components(&self) -> &[BetaComponent] {
        &self.beta_components
    }

    pub fn is_pure_kingman(&self) -> bool {
        self.atoms.is_empty() && self.beta_components.is_empty()
    }

    pub fn has_beta_components(&self) -> bool {
        !self.beta_components.is_empty()
    }

    /// Content fingerprint; downstream caches key on this when sharing
    /// tables across several measures.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.kingman_mass.to_bits().hash(&mut h);
        for a in &self.atoms {
            a.location.to_bits().hash(&mut h);
            a.weight.to_bits().hash(&mut h);
        }
        for b in &self.beta_components {
            b.alpha.to_bits().hash(&mut h);
            b.beta.to_bits().hash(&mut h);
            b.weight.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// ∫ g dΛ₁ with Λ₁ normalized to a probability measure; exactly 0 when
    /// c = 1. Atom contributions are exact; Beta contributions use adaptive
    /// quadrature at relative tolerance 1e-10.
    pub fn integrate_lambda1<F: Fn(f64) -> f64>(&self, g: F) -> Result<f64, QuadratureFailure> {
        let lambda1_weight = 1.0 - self.kingman_mass;
        if lambda1_weight <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.weighted_lambda1_integral(&g)? / lambda1_weight)
    }

    /// (1−c)·∫ g dΛ₁ using the stored (already (1−c)-scaled) weights. This
    /// is the combination every rate functional actually needs, and it
    /// avoids the 0/0 at c = 1.
    pub fn weighted_lambda1_integral<F: Fn(f64) -> f64>(
        &self,
        g: &F,
    ) -> Result<f64, QuadratureFailure> {
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.weight * g(a.location);
        }
        for b in &self.beta_components {
            total += b.weight * beta_expectation(b, g)?;
        }
        Ok(total)
    }
}

/// E_{Beta(α,β)}[g(Y)] by adaptive quadrature.
///
/// For α ≤ 1 the density has an integrable singularity at 0; substituting
/// y = u^{1/α} turns the density factor into a constant and leaves only
/// whatever singularity g itself carries.
fn beta_expectation<F: Fn(f64) -> f64>(
    comp: &BetaComponent,
    g: &F,
) -> Result<f64, QuadratureFailure> {
    let alpha = comp.alpha;
    let beta = comp.beta;
    let ln_b = comp.ln_norm();
    // seed panels log-spaced toward 0 so narrow features near the origin
    // (scale 1/q for the rate integrands) are seen immediately
    let seeds = [0.0, 1e-12, 1e-9, 1e-6, 1e-3, 0.1, 0.5, 1.0];
    if alpha <= 1.0 {
        // y = u^{1/α}: E[g] = (1/α B) ∫ g(u^{1/α}) (1−u^{1/α})^{β−1} du,
        // with the u^{(α−1)/α} density factor absorbed by the Jacobian
        let inv_alpha = 1.0 / alpha;
        let f = |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let y = u.powf(inv_alpha);
            let tail = if y >= 1.0 {
                if beta == 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((beta - 1.0) * (-y).ln_1p()).exp()
            };
            g(y.min(1.0)) * tail * inv_alpha * (-ln_b).exp()
        };
        quad::integrate_seeded(f, &seeds, LAMBDA1_QUAD_REL_TOL, 0.0)
    } else {
        let f = |y: f64| {
            if y <= 0.0 || y >= 1.0 {
                // Kronrod nodes are interior, so endpoints are only reached
                // through panel degeneracy; the density vanishes there for α > 1
                return 0.0;
            }
            let ln_density = (alpha - 1.0) * y.ln() + (beta - 1.0) * (-y).ln_1p() - ln_b;
            g(y) * ln_density.exp()
        };
        quad::integrate_seeded(f, &seeds, LAMBDA1_QUAD_REL_TOL, 0.0)
    }
}

impl Hash for DrivingMeasure {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.fingerprint().hash(state);
    }
}
