//! Experiment execution: expand the config into a grid, run every
//! (grid point, replicate) task on its own derived seed, and collect rows in
//! a scheduling-independent order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rayon::prelude::*;

use mvdens::estimator::{estimate_no_thinning, estimate_with_thinning, EstimatorOptions};
use mvdens::evaluation::{
    frobenius_error, l1_error, normalized_frobenius_error, normalized_l1_error, ErrorRecord,
};
use mvdens::model::{model_to_tensor, sample_histogram, sample_model, MultiviewModel, RngSeed};
use mvdens::scaling::{RankOneScaling, ScalingRule};
use mvdens::tensor::DenseTensor;
use mvdens::{Error, Result};

use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::output::ResultRow;

/// One resolved grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub index: usize,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub hetero_strength: f64,
    pub n: u64,
}

/// Which estimators run at a grid point, with row labels.
#[derive(Debug, Clone, Copy)]
struct MethodSpec {
    method: Method,
    thinning: bool,
}

impl MethodSpec {
    fn label(&self) -> String {
        if self.thinning {
            format!("{}-thinning", self.method.name())
        } else {
            self.method.name().to_string()
        }
    }
}

// rng stream layout: two tag bits keep model, data, and split draws on
// disjoint streams for the same (grid, replicate)
const STREAM_MODEL: u64 = 1 << 62;
const STREAM_DATA: u64 = 2 << 62;
const STREAM_SPLIT: u64 = 3 << 62;

fn stream(tag: u64, grid: usize, replicate: usize) -> u64 {
    tag | ((grid as u64) << 32) | replicate as u64
}

/// Expand the config into its grid.
pub fn build_grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let base = |index: usize, n: u64| GridPoint {
        index,
        dims: cfg.dims.clone(),
        rank: cfg.rank,
        hetero_strength: cfg.hetero_strength,
        n,
    };
    match cfg.kind {
        ExperimentKind::VaryN | ExperimentKind::ThinningCompare => cfg
            .n_values
            .iter()
            .enumerate()
            .map(|(i, &n)| base(i, n))
            .collect(),
        ExperimentKind::VaryH => cfg
            .h_values
            .as_ref()
            .expect("validated")
            .iter()
            .enumerate()
            .map(|(i, &h)| GridPoint {
                hetero_strength: h,
                ..base(i, cfg.n_values[0])
            })
            .collect(),
        ExperimentKind::VaryPR => cfg
            .pr_values
            .as_ref()
            .expect("validated")
            .iter()
            .enumerate()
            .map(|(i, pt)| GridPoint {
                index: i,
                dims: vec![pt.p; cfg.dims.len()],
                rank: pt.rank,
                hetero_strength: cfg.hetero_strength,
                n: pt.n,
            })
            .collect(),
        ExperimentKind::SingleEstimate => vec![base(0, cfg.n_values[0])],
    }
}

fn method_specs(cfg: &ExperimentConfig) -> Vec<MethodSpec> {
    match cfg.kind {
        ExperimentKind::ThinningCompare => cfg
            .methods
            .iter()
            .flat_map(|&m| {
                [
                    MethodSpec {
                        method: m,
                        thinning: false,
                    },
                    MethodSpec {
                        method: m,
                        thinning: true,
                    },
                ]
            })
            .collect(),
        _ => cfg
            .methods
            .iter()
            .map(|&m| MethodSpec {
                method: m,
                thinning: false,
            })
            .collect(),
    }
}

/// Run the whole experiment. Per-replicate estimator failures become rows
/// with a status message; only configuration errors abort.
///
/// Replicates run in parallel (respecting RAYON_NUM_THREADS); output order is
/// (grid index, replicate, method) regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let grid = build_grid(cfg);
    let specs = method_specs(cfg);
    let fingerprint_base = cfg.to_json();

    let tasks: Vec<(usize, usize)> = grid
        .iter()
        .flat_map(|g| (0..cfg.replicates).map(move |rep| (g.index, rep)))
        .collect();

    let mut rows: Vec<ResultRow> = tasks
        .par_iter()
        .map(|&(grid_ix, rep)| run_task(cfg, &grid[grid_ix], rep, &specs, &fingerprint_base))
        .collect::<Result<Vec<Vec<ResultRow>>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        (a.grid_index, a.replicate, &a.method).cmp(&(b.grid_index, b.replicate, &b.method))
    });
    Ok(rows)
}

fn run_task(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    replicate: usize,
    specs: &[MethodSpec],
    fingerprint_base: &str,
) -> Result<Vec<ResultRow>> {
    let seed = cfg.base_seed;
    let mut model_rng = RngSeed::new(seed, stream(STREAM_MODEL, point.index, replicate)).rng();
    let model = sample_model(
        &point.dims,
        point.rank,
        point.hetero_strength,
        cfg.alpha,
        cfg.weights.clone(),
        &mut model_rng,
    )?;
    let truth = model_to_tensor(&model);

    let mut fingerprint = DefaultHasher::new();
    (fingerprint_base, point.index, replicate).hash(&mut fingerprint);
    let fingerprint = format!("{:016x}", fingerprint.finish());

    // one histogram per replicate, shared by every method
    let observed = if cfg.noiseless {
        Observation::Exact(truth.scaled(point.n as f64))
    } else {
        let mut data_rng = RngSeed::new(seed, stream(STREAM_DATA, point.index, replicate)).rng();
        Observation::Counts(sample_histogram(&truth, point.n, &mut data_rng)?)
    };

    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let started = Instant::now();
        let estimate = run_method(cfg, point, replicate, *spec, &model, &truth, &observed);
        let wall_time_s = started.elapsed().as_secs_f64();
        let mut row = ResultRow {
            kind: cfg.kind,
            method: spec.label(),
            grid_index: point.index,
            replicate,
            dims: point.dims.clone(),
            rank: point.rank,
            hetero_strength: point.hetero_strength,
            alpha: cfg.alpha,
            n: point.n,
            seed,
            status: "ok".into(),
            record: None,
            config_fingerprint: fingerprint.clone(),
            wall_time_s,
        };
        match estimate {
            Ok(p_hat) => {
                row.record = Some(ErrorRecord {
                    frobenius: frobenius_error(&p_hat, &truth)?,
                    l1: l1_error(&p_hat, &truth)?,
                    normalized_frobenius: normalized_frobenius_error(
                        &p_hat, &truth, point.rank, point.n,
                    )?,
                    normalized_l1: normalized_l1_error(&p_hat, &truth, point.rank, point.n)?,
                    replicate,
                    config_fingerprint: fingerprint.clone(),
                });
            }
            Err(e) => {
                row.status = sanitize(&e.to_string());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

enum Observation {
    Counts(mvdens::HistogramTensor),
    Exact(DenseTensor),
}

/// Produce the density estimate for one method. The estimators see the same
/// observation; thinned runs draw their split from a dedicated stream so the
/// method list order never perturbs other draws.
fn run_method(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    replicate: usize,
    spec: MethodSpec,
    model: &MultiviewModel,
    truth: &DenseTensor,
    observed: &Observation,
) -> Result<DenseTensor> {
    if spec.method == Method::Histogram {
        let p_hat = match observed {
            Observation::Counts(y) => y.to_density()?,
            Observation::Exact(y) => y.scaled(1.0 / point.n as f64),
        };
        return Ok(p_hat);
    }

    let rule = spec.method.scaling_rule().expect("histogram handled above");
    let scaling = match rule {
        ScalingRule::None => RankOneScaling::all_ones(&point.dims)?,
        ScalingRule::Oracle => RankOneScaling::oracle(model, None)?,
        ScalingRule::SliceOracle => RankOneScaling::slice_normalization(truth)?,
        ScalingRule::SliceEst => match observed {
            Observation::Counts(y) => RankOneScaling::empirical_slice_normalization(y)?,
            Observation::Exact(_) => RankOneScaling::slice_normalization(truth)?,
        },
        ScalingRule::OracleCp => {
            return Err(Error::NotImplemented("oracle-cp scaling".into()));
        }
    };

    let mut opts = EstimatorOptions::with_ranks(&cfg.target_ranks(&point.dims, point.rank));
    opts.simplex_projection = cfg.projection;

    let report = if spec.thinning {
        let y = match observed {
            Observation::Counts(y) => y,
            Observation::Exact(_) => {
                return Err(Error::InvalidArgument(
                    "thinning needs integer counts, not a noiseless injection".into(),
                ))
            }
        };
        let mut split_rng =
            RngSeed::new(cfg.base_seed, stream(STREAM_SPLIT, point.index, replicate)).rng();
        estimate_with_thinning(y, &scaling, &opts, &mut split_rng)?
    } else {
        let (tensor, total) = match observed {
            Observation::Counts(y) => (y.to_tensor(), y.n() as f64),
            Observation::Exact(y) => (y.clone(), point.n as f64),
        };
        estimate_no_thinning(&tensor, total, &scaling, &opts)?
    };
    Ok(report.p_hat)
}

fn sanitize(msg: &str) -> String {
    let cleaned: String = msg
        .chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect();
    format!("error: {cleaned}")
}
