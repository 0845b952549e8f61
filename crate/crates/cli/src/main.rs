//! Command-line front end: evaluate rate functionals and speeds, run
//! simulations and Monte-Carlo experiments, and emit CSV/JSON results.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 acceptance-criterion failure (`experiment`/`oracle-check` with
//! `--assert`).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use coalfluct::experiments::{
    run_fclt_experiment, run_oracle_equivalence, run_sharpness_experiment, ExperimentError,
    ExperimentReport, FcltConfig, Normalization, OracleConfig, SharpnessConfig,
};
use coalfluct::limit;
use coalfluct::measure::{DrivingMeasure, MeasureConfig};
use coalfluct::rates::RateFunctional;
use coalfluct::sim::{self, Backend, SimConfig};
use coalfluct::speed::{SpeedFunction, SpeedVariant};

#[derive(Parser)]
#[command(name = "coalfluct", version, about = "Lambda-coalescent block-count toolkit")]
struct Cli {
    /// Worker threads for experiments (default: COALFLUCT_THREADS or all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the rate functionals at a point
    Psi(PsiArgs),
    /// Evaluate a speed of descent at a time
    Speed(SpeedArgs),
    /// Simulate one block-count path and dump it as CSV
    Simulate(SimulateArgs),
    /// Sample the Gaussian limit process on a grid
    Limit(LimitArgs),
    /// Run a Monte-Carlo experiment described by a JSON config
    Experiment(ExperimentArgs),
    /// Cross-backend law-equivalence check
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct PsiArgs {
    /// Path to the measure JSON file
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    q: f64,
    /// Evaluate the exponential variant instead
    #[arg(long)]
    star: bool,
    /// Report psi1(q)/q^{3/2} instead
    #[arg(long)]
    over_q32: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    V,
    Vstar,
    W,
}

#[derive(Args)]
struct SpeedArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    t: f64,
    #[arg(long, value_enum, default_value = "v")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Report (1/sqrt(t))((c t/2) v_t - 1) instead of v_t
    #[arg(long)]
    drift_ratio: bool,
    /// Report v_t/v*_t - 1 instead of v_t
    #[arg(long)]
    gap: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Chain,
    Paintbox,
    Partition,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long)]
    n0: u32,
    #[arg(long)]
    t_end: f64,
    #[arg(long, value_enum, default_value = "chain")]
    backend: BackendArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// CSV output path (stdout when omitted); a .meta.json sidecar is
    /// written next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LimitArgs {
    /// Comma-separated strictly increasing positive times
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    scale_c: f64,
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the Euler discretization of the limit equation instead of the
    /// exact increment sampler
    #[arg(long)]
    euler: bool,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Text,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config: {"kind": "fclt"|"sharpness"|"oracle", "measure": {...}, ...}
    #[arg(long)]
    config: PathBuf,
    /// Exit with code 3 unless every criterion passes
    #[arg(long)]
    assert: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stream raw per-replicate fluctuation values to this CSV (fclt only)
    #[arg(long)]
    raw_csv: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    measure: PathBuf,
    #[arg(long)]
    n: u32,
    /// Comma-separated query times
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    t: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    assert: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ExperimentFile {
    Fclt {
        measure: MeasureConfig,
        epsilon: f64,
        grid: Vec<f64>,
        normalization: Normalization,
        replicates: usize,
        n0: u32,
        seed: u64,
    },
    Sharpness {
        measure: MeasureConfig,
        epsilons: Vec<f64>,
        replicates: usize,
        n0: u32,
        seed: u64,
    },
    Oracle {
        measure: MeasureConfig,
        n: u32,
        t_grid: Vec<f64>,
        replicates: usize,
        seed: u64,
    },
}

enum CliError {
    Config(String),
    Numerical(String),
    CriterionFailed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::CriterionFailed => 3,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config { .. } | ExperimentError::InsufficientN0 { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn load_measure(path: &PathBuf) -> Result<DrivingMeasure, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    DrivingMeasure::from_json_str(&text).map_err(CliError::Config)
}

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn emit_report(
    report: &ExperimentReport,
    format: FormatArg,
    out: &Option<PathBuf>,
    assert: bool,
) -> Result<(), CliError> {
    let content = match format {
        FormatArg::Json => report.to_json(),
        FormatArg::Text => report.to_text_table(),
    };
    write_output(out, &content)?;
    if assert && !report.passed() {
        return Err(CliError::CriterionFailed);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads.or_else(|| {
        std::env::var("COALFLUCT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Psi(args) => {
            let rf = RateFunctional::new(load_measure(&args.measure)?);
            let value = if args.over_q32 {
                rf.psi1_over_q32(args.q)
            } else if args.star {
                rf.psi_star(args.q)
            } else {
                rf.psi(args.q)
            }
            .map_err(|e| CliError::Numerical(e.to_string()))?;
            println!("{value}");
            Ok(())
        }
        Command::Speed(args) => {
            let rf = Arc::new(RateFunctional::new(load_measure(&args.measure)?));
            let variant = match args.variant {
                VariantArg::V => SpeedVariant::V,
                VariantArg::Vstar => SpeedVariant::VStar,
                VariantArg::W => SpeedVariant::W,
            };
            let sf = SpeedFunction::with_tolerance(rf, variant, args.tolerance);
            let value = if args.drift_ratio {
                sf.drift_ratio(args.t)
            } else if args.gap {
                sf.v_vstar_gap(args.t)
            } else {
                sf.value(args.t)
            }
            .map_err(|e| CliError::Numerical(e.to_string()))?;
            println!("{value}");
            Ok(())
        }
        Command::Simulate(args) => {
            let measure = load_measure(&args.measure)?;
            let rf = RateFunctional::new(measure.clone());
            let (path, cfg) = match args.backend {
                BackendArg::Partition => {
                    let path = sim::simulate_partition_oracle(
                        &rf,
                        args.n0,
                        args.t_end,
                        args.seed,
                        args.stream,
                    )
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                    (path, None)
                }
                other => {
                    let cfg = SimConfig {
                        n0: args.n0,
                        t_end: args.t_end,
                        backend: match other {
                            BackendArg::Chain => Backend::Chain,
                            BackendArg::Paintbox => Backend::PaintboxOracle,
                            BackendArg::Partition => unreachable!(),
                        },
                        seed: args.seed,
                        stream: args.stream,
                    };
                    let path = sim::simulate(&rf, &cfg)
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                    (path, Some(cfg))
                }
            };
            let mut csv = Vec::new();
            path.write_csv(&mut csv)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let csv = String::from_utf8(csv).expect("csv is utf8");
            write_output(&args.out, &csv)?;
            let meta = match &cfg {
                Some(cfg) => path.metadata_json(&measure, cfg),
                None => serde_json::json!({
                    "measure": measure.to_config(),
                    "backend": "partition",
                    "n0": args.n0,
                    "t_end": args.t_end,
                    "seed": args.seed,
                    "stream": args.stream,
                    "events": path.events().len(),
                    "final_count": path.final_count(),
                }),
            };
            match &args.out {
                Some(p) => {
                    let meta_path = p.with_extension("meta.json");
                    fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
                        .map_err(|e| CliError::Config(format!("cannot write sidecar: {e}")))?;
                }
                None => eprintln!("{}", serde_json::to_string(&meta).unwrap()),
            }
            Ok(())
        }
        Command::Limit(args) => {
            let mut out = String::from("path,t,value\n");
            for p in 0..args.paths {
                let mut rng = sim::replicate_rng(args.seed, p as u64);
                let path = if args.euler {
                    limit::euler_sde_path(&args.grid, args.scale_c, args.step, &mut rng)
                } else {
                    limit::sample_limit_path(&args.grid, args.scale_c, &mut rng)
                }
                .map_err(|e| CliError::Config(e.to_string()))?;
                for (t, v) in path.grid.iter().zip(&path.values) {
                    out.push_str(&format!("{p},{t},{v:.16e}\n"));
                }
            }
            write_output(&args.out, &out)
        }
        Command::Experiment(args) => {
            let text = fs::read_to_string(&args.config)
                .map_err(|e| CliError::Config(format!("cannot read config: {e}")))?;
            let file: ExperimentFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("bad experiment config: {e}")))?;
            match file {
                ExperimentFile::Fclt {
                    measure,
                    epsilon,
                    grid,
                    normalization,
                    replicates,
                    n0,
                    seed,
                } => {
                    let measure = DrivingMeasure::validate(&measure)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let cfg = FcltConfig {
                        epsilon,
                        grid,
                        normalization,
                        replicates,
                        n0,
                        seed,
                    };
                    let (report, sample) = run_fclt_experiment(&measure, &cfg)?;
                    if let Some(raw) = &args.raw_csv {
                        let mut buf = Vec::new();
                        sample
                            .write_csv(&mut buf)
                            .map_err(|e| CliError::Config(e.to_string()))?;
                        fs::write(raw, buf)
                            .map_err(|e| CliError::Config(format!("cannot write raw csv: {e}")))?;
                    }
                    emit_report(&report, args.format, &args.out, args.assert)
                }
                ExperimentFile::Sharpness {
                    measure,
                    epsilons,
                    replicates,
                    n0,
                    seed,
                } => {
                    let measure = DrivingMeasure::validate(&measure)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let cfg = SharpnessConfig {
                        epsilons,
                        replicates,
                        n0,
                        seed,
                    };
                    let report = run_sharpness_experiment(&measure, &cfg)?;
                    emit_report(&report, args.format, &args.out, args.assert)
                }
                ExperimentFile::Oracle {
                    measure,
                    n,
                    t_grid,
                    replicates,
                    seed,
                } => {
                    let measure = DrivingMeasure::validate(&measure)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let cfg = OracleConfig {
                        n,
                        t_grid,
                        replicates,
                        seed,
                    };
                    let report = run_oracle_equivalence(&measure, &cfg)?;
                    emit_report(&report, args.format, &args.out, args.assert)
                }
            }
        }
        Command::OracleCheck(args) => {
            let measure = load_measure(&args.measure)?;
            let cfg = OracleConfig {
                n: args.n,
                t_grid: args.t.clone(),
                replicates: args.replicates,
                seed: args.seed,
            };
            let report = run_oracle_equivalence(&measure, &cfg)?;
            emit_report(&report, args.format, &None, args.assert)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems are configuration errors: report on stderr,
            // exit 1 (clap's default would exit 2)
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            if is_help {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(msg) => eprintln!("error: {msg}"),
                CliError::Numerical(msg) => eprintln!("numerical failure: {msg}"),
                CliError::CriterionFailed => eprintln!("acceptance criteria not met"),
            }
            ExitCode::from(e.code())
        }
    }
}
