//! CSV emission and aggregation. Floats are written with 17 significant
//! digits so a parse-back reproduces them exactly; the resolved config is
//! embedded as a header comment for provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mvdens::evaluation::ErrorRecord;
use mvdens::{Error, Result};

use crate::config::{ExperimentConfig, ExperimentKind};

/// One CSV row: config axes, error record, timing.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub kind: ExperimentKind,
    pub method: String,
    pub grid_index: usize,
    pub replicate: usize,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub hetero_strength: f64,
    pub alpha: f64,
    pub n: u64,
    pub seed: u64,
    pub status: String,
    /// Error measurements; absent when the estimator failed.
    pub record: Option<ErrorRecord>,
    pub config_fingerprint: String,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn frobenius(&self) -> Option<f64> {
        self.record.as_ref().map(|r| r.frobenius)
    }

    pub fn l1(&self) -> Option<f64> {
        self.record.as_ref().map(|r| r.l1)
    }
}

pub const BASE_HEADER: [&str; 16] = [
    "kind",
    "method",
    "grid_index",
    "replicate",
    "dims",
    "rank",
    "hetero_strength",
    "alpha",
    "n",
    "seed",
    "status",
    "frobenius_error",
    "l1_error",
    "normalized_frobenius_error",
    "normalized_l1_error",
    "config_fingerprint",
];

/// 17 significant digits: enough for a bit-exact f64 round trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::VaryN => "vary-n",
        ExperimentKind::VaryH => "vary-h",
        ExperimentKind::VaryPR => "vary-p-r",
        ExperimentKind::ThinningCompare => "thinning-compare",
        ExperimentKind::SingleEstimate => "single-estimate",
    }
}

/// Render rows to CSV text. The `timing` flag appends the wall_time_s
/// column; leaving it off keeps equal-seed runs byte-identical.
pub fn render_csv(rows: &[ResultRow], cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("# mvdens simulate results\n");
    out.push_str(&format!("# config: {}\n", cfg.to_json()));
    let mut header: Vec<&str> = BASE_HEADER.to_vec();
    if cfg.timing {
        header.push("wall_time_s");
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let dims = row
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let mut fields = vec![
            kind_name(row.kind).to_string(),
            row.method.clone(),
            row.grid_index.to_string(),
            row.replicate.to_string(),
            dims,
            row.rank.to_string(),
            format_float(row.hetero_strength),
            format_float(row.alpha),
            row.n.to_string(),
            row.seed.to_string(),
            row.status.clone(),
            format_opt(row.frobenius()),
            format_opt(row.l1()),
            format_opt(row.record.as_ref().map(|r| r.normalized_frobenius)),
            format_opt(row.record.as_ref().map(|r| r.normalized_l1)),
            row.config_fingerprint.clone(),
        ];
        if cfg.timing {
            fields.push(format_float(row.wall_time_s));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[ResultRow], cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(render_csv(rows, cfg).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
}

/// Mean and standard error per (method, grid point).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub grid_index: usize,
    pub n: u64,
    pub count: usize,
    pub mean_frobenius: f64,
    pub se_frobenius: f64,
    pub mean_l1: f64,
    pub se_l1: f64,
}

/// Aggregate successful rows by (method, grid point), preserving first-seen
/// order. Rows with a failure status are skipped.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    type Group = (String, usize, u64, Vec<(f64, f64)>);
    let mut groups: Vec<Group> = Vec::new();
    for row in rows {
        let (Some(fro), Some(l1)) = (row.frobenius(), row.l1()) else {
            continue;
        };
        match groups
            .iter_mut()
            .find(|(m, g, _, _)| *m == row.method && *g == row.grid_index)
        {
            Some((_, _, _, values)) => values.push((fro, l1)),
            None => groups.push((row.method.clone(), row.grid_index, row.n, vec![(fro, l1)])),
        }
    }
    groups
        .into_iter()
        .map(|(method, grid_index, n, values)| {
            let count = values.len();
            let (mf, sf) = mean_se(values.iter().map(|v| v.0));
            let (ml, sl) = mean_se(values.iter().map(|v| v.1));
            AggregateRow {
                method,
                grid_index,
                n,
                count,
                mean_frobenius: mf,
                se_frobenius: sf,
                mean_l1: ml,
                se_l1: sl,
            }
        })
        .collect()
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
