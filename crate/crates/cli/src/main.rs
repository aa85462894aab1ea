//! Command-line interface: `simulate` runs a Monte-Carlo sweep to CSV,
//! `estimate` fits one histogram, `project` maps a tensor onto the
//! probability simplex.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.
//! Replicates run in parallel; set RAYON_NUM_THREADS to bound the pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mvdens::estimator::{estimate_density, DensityEstimateInputs, EstimatorOptions};
use mvdens::io::{read_tensor_file, write_tensor_file};
use mvdens::model::{HistogramTensor, MultiviewModel, RngSeed};
use mvdens::scaling::ScalingRule;
use mvdens::tensor::{DenseTensor, Shape};
use mvdens::{simplex_projection, Error};

use mvdens_cli::{aggregate, run_experiment, write_csv, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "mvdens",
    about = "Low-rank multiview probability tensor estimation from multinomial counts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment described by a JSON config and write CSV.
    Simulate(SimulateArgs),
    /// Estimate a density tensor from a saved histogram.
    Estimate(EstimateArgs),
    /// Project a tensor onto the probability simplex.
    Project(ProjectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Path to the experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: `desk` or `paper-full` (slow).
    #[arg(long)]
    preset: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Print per-(method, grid point) mean and standard error to stdout.
    #[arg(long)]
    summary: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Histogram counts: .mvt1 (integer-valued tensor) or .json
    /// ({"dims": [...], "counts": [...]}).
    #[arg(long)]
    counts: PathBuf,
    /// Scaling rule: none | oracle | oracle-cp | slice-oracle | slice-est.
    #[arg(long, default_value = "none")]
    rule: String,
    /// Target Tucker ranks, comma separated (e.g. 3,3,3).
    #[arg(long)]
    ranks: String,
    /// Ground-truth model JSON (required by oracle and slice-oracle rules).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Independent pilot histogram for slice-est (defaults to --counts).
    #[arg(long)]
    pilot: Option<PathBuf>,
    /// Split counts by multinomial thinning before estimation.
    #[arg(long)]
    thinning: bool,
    /// Seed for the thinning split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Project the estimate onto the probability simplex.
    #[arg(long)]
    project: bool,
    /// Output report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    /// Input tensor (.mvt1 or .json {"dims": [...], "data": [...]}).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output tensor, same format as the input extension.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Project(args) => cmd_project(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mvdens: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Format(_) | Error::NotImplemented(_) => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let cfg = match (&args.config, args.preset.as_deref()) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Some("desk")) => ExperimentConfig::desk_default(),
        (None, Some("paper-full")) => {
            eprintln!(
                "warning: the paper-full preset runs p = 50, n up to 1e6, 50 replicates; \
                 expect a long wall time"
            );
            ExperimentConfig::paper_full()
        }
        (None, Some(other)) => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected desk or paper-full)"
            )))
        }
        _ => {
            return Err(Error::InvalidArgument(
                "simulate needs exactly one of --config or --preset".into(),
            ))
        }
    };
    let rows = run_experiment(&cfg)?;
    write_csv(&rows, &cfg, &args.out)?;
    eprintln!("wrote {} rows to {}", rows.len(), args.out.display());
    if args.summary {
        for agg in aggregate(&rows) {
            println!(
                "{} grid {} (n = {}): frobenius {:.6e} +- {:.2e}, l1 {:.6e} +- {:.2e} ({} reps)",
                agg.method,
                agg.grid_index,
                agg.n,
                agg.mean_frobenius,
                agg.se_frobenius,
                agg.mean_l1,
                agg.se_l1,
                agg.count
            );
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CountsDocument {
    dims: Vec<usize>,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct TensorDocument {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct EstimateDocument {
    rule: String,
    ranks: Vec<usize>,
    effective_ranks: Vec<usize>,
    n: u64,
    dims: Vec<usize>,
    split_totals: Option<[u64; 3]>,
    p_hat: Vec<f64>,
    q_hat: Vec<f64>,
}

fn read_counts(path: &Path) -> Result<HistogramTensor, Error> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(io_err)?;
        let doc: CountsDocument =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("counts json: {e}")))?;
        HistogramTensor::new(&Shape::new(doc.dims)?, doc.counts)
    } else {
        let tensor = read_tensor_file(path)?;
        let counts = tensor
            .data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
                    Err(Error::Format(format!(
                        "count tensor entry {v} is not a nonnegative integer"
                    )))
                } else {
                    Ok(v as u64)
                }
            })
            .collect::<Result<Vec<u64>, Error>>()?;
        HistogramTensor::new(&tensor.shape().clone(), counts)
    }
}

fn read_dense(path: &Path) -> Result<DenseTensor, Error> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: TensorDocument =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("tensor json: {e}")))?;
        DenseTensor::from_vec(Shape::new(doc.dims)?, doc.data)
    } else {
        read_tensor_file(path)
    }
}

fn write_dense(tensor: &DenseTensor, path: &Path) -> Result<(), Error> {
    if path.extension().is_some_and(|e| e == "json") {
        let doc = TensorDocument {
            dims: tensor.shape().dims().to_vec(),
            data: tensor.data().to_vec(),
        };
        fs::write(path, serde_json::to_string(&doc).expect("serializes")).map_err(|e| {
            Error::Io {
                path: path.display().to_string(),
                source: e,
            }
        })
    } else {
        write_tensor_file(tensor, path)
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    let rule: ScalingRule = args.rule.parse()?;
    let ranks = args
        .ranks
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad rank component '{s}'")))
        })
        .collect::<Result<Vec<usize>, Error>>()?;
    let y = read_counts(&args.counts)?;
    let model = match &args.model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            Some(MultiviewModel::from_json(&text)?)
        }
        None => None,
    };
    let pilot = args.pilot.as_deref().map(read_counts).transpose()?;

    let mut opts = EstimatorOptions::with_ranks(&ranks);
    opts.thinning = args.thinning;
    opts.simplex_projection = args.project;
    let inputs = DensityEstimateInputs {
        model: model.as_ref(),
        pilot: pilot.as_ref(),
    };
    let mut rng = RngSeed::new(args.seed, 0).rng();
    let report = estimate_density(&y, rule, &opts, inputs, Some(&mut rng))?;

    let doc = EstimateDocument {
        rule: rule.name().into(),
        ranks,
        effective_ranks: report.effective_ranks.clone(),
        n: y.n(),
        dims: y.shape().dims().to_vec(),
        split_totals: report.split_totals,
        p_hat: report.p_hat.data().to_vec(),
        q_hat: report.q_hat.data().to_vec(),
    };
    fs::write(
        &args.out,
        serde_json::to_string(&doc).expect("report serializes"),
    )
    .map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    eprintln!("wrote estimate to {}", args.out.display());
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<(), Error> {
    let tensor = read_dense(&args.input)?;
    let projected = simplex_projection(&tensor);
    write_dense(&projected, &args.out)?;
    eprintln!(
        "projected {:?} tensor onto the simplex -> {}",
        tensor.shape().dims(),
        args.out.display()
    );
    Ok(())
}
