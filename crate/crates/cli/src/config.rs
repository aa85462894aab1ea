//! Experiment configuration: a single JSON document, validated up front so
//! bad fields fail with a named diagnostic before any work starts.

use serde::{Deserialize, Serialize};

use mvdens::{Error, Result, ScalingRule};

/// What the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Sweep the sample size over `n_values`.
    VaryN,
    /// Sweep the heteroskedasticity strength over `h_values` at fixed n.
    VaryH,
    /// Sweep (dimension, rank, n) triples from `pr_values`.
    VaryPR,
    /// Compare the thinned and unthinned pipelines over `n_values`.
    ThinningCompare,
    /// One grid point, every method once per replicate.
    SingleEstimate,
}

/// Estimation methods selectable in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Histogram,
    Unscaled,
    Oracle,
    SliceOracle,
    SliceEst,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Histogram => "histogram",
            Method::Unscaled => "unscaled",
            Method::Oracle => "oracle",
            Method::SliceOracle => "slice-oracle",
            Method::SliceEst => "slice-est",
        }
    }

    pub fn scaling_rule(&self) -> Option<ScalingRule> {
        match self {
            Method::Histogram => None,
            Method::Unscaled => Some(ScalingRule::None),
            Method::Oracle => Some(ScalingRule::Oracle),
            Method::SliceOracle => Some(ScalingRule::SliceOracle),
            Method::SliceEst => Some(ScalingRule::SliceEst),
        }
    }
}

/// One (dimension, rank, sample size) grid point for the vary-p-r sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrPoint {
    pub p: usize,
    pub rank: usize,
    pub n: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Tensor dimensions; overridden per grid point by vary-p-r.
    pub dims: Vec<usize>,
    /// Model CP rank R.
    pub rank: usize,
    /// Heteroskedasticity strength H >= 1.
    #[serde(default = "default_h")]
    pub hetero_strength: f64,
    /// Dirichlet concentration scale.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Mixture weights; uniform 1/R when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Sample sizes (the grid for vary-n and thinning-compare; first entry
    /// elsewhere).
    pub n_values: Vec<u64>,
    /// Heteroskedasticity grid for vary-h.
    #[serde(default)]
    pub h_values: Option<Vec<f64>>,
    /// (p, rank, n) grid for vary-p-r.
    #[serde(default)]
    pub pr_values: Option<Vec<PrPoint>>,
    pub methods: Vec<Method>,
    /// Target Tucker ranks; defaults to `rank` in every mode.
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Project density estimates onto the probability simplex.
    #[serde(default)]
    pub projection: bool,
    /// single-estimate only: feed the exact mean tensor n * P instead of a
    /// multinomial draw.
    #[serde(default)]
    pub noiseless: bool,
    /// Emit the wall_time_s column. Off by default so that equal seeds give
    /// byte-identical CSV output.
    #[serde(default)]
    pub timing: bool,
}

fn default_h() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.8
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("config: replicates must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("config: methods must be nonempty".into()));
        }
        if self.dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "config: dims needs at least two modes".into(),
            ));
        }
        if self.rank == 0 {
            return Err(Error::InvalidArgument("config: rank must be >= 1".into()));
        }
        if self.hetero_strength < 1.0 {
            return Err(Error::InvalidArgument(
                "config: hetero_strength must be >= 1".into(),
            ));
        }
        if self.alpha <= 0.0 || self.alpha.is_nan() {
            return Err(Error::InvalidArgument("config: alpha must be > 0".into()));
        }
        match self.kind {
            ExperimentKind::VaryH => {
                if self.h_values.as_ref().is_none_or(Vec::is_empty) {
                    return Err(Error::InvalidArgument(
                        "config: vary-h needs a nonempty h_values grid".into(),
                    ));
                }
            }
            ExperimentKind::VaryPR
                if self.pr_values.as_ref().is_none_or(Vec::is_empty) => {
                    return Err(Error::InvalidArgument(
                        "config: vary-p-r needs a nonempty pr_values grid".into(),
                    ));
                }
            _ => {}
        }
        if self.n_values.is_empty() && !matches!(self.kind, ExperimentKind::VaryPR) {
            return Err(Error::InvalidArgument(
                "config: n_values must be nonempty".into(),
            ));
        }
        if self.noiseless && !matches!(self.kind, ExperimentKind::SingleEstimate) {
            return Err(Error::InvalidArgument(
                "config: noiseless injection is only available for single-estimate".into(),
            ));
        }
        if let Some(ranks) = &self.ranks {
            if ranks.len() != self.dims.len() {
                return Err(Error::InvalidArgument(format!(
                    "config: {} target ranks for {} modes",
                    ranks.len(),
                    self.dims.len()
                )));
            }
        }
        Ok(())
    }

    /// Target Tucker ranks, defaulting to R per mode.
    pub fn target_ranks(&self, dims: &[usize], rank: usize) -> Vec<usize> {
        match &self.ranks {
            Some(r) if self.kind != ExperimentKind::VaryPR => r.clone(),
            _ => vec![rank; dims.len()],
        }
    }

    /// The full-scale reference settings: p = 50, R = 4, H = 100, 50
    /// replicates, n up to 10^6. Slow; the CLI prints a warning.
    pub fn paper_full() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::VaryN,
            dims: vec![50, 50, 50],
            rank: 4,
            hetero_strength: 100.0,
            alpha: 0.8,
            weights: None,
            n_values: vec![10_000, 30_000, 100_000, 300_000, 1_000_000],
            h_values: None,
            pr_values: None,
            methods: vec![Method::Histogram, Method::Unscaled],
            ranks: None,
            replicates: 50,
            base_seed: 1,
            projection: false,
            noiseless: false,
            timing: false,
        }
    }

    /// Desk-scale default: p = 20, R = 3, H = 50, 10 replicates.
    pub fn desk_default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::VaryN,
            dims: vec![20, 20, 20],
            rank: 3,
            hetero_strength: 50.0,
            alpha: 0.8,
            weights: None,
            n_values: vec![10_000, 40_000, 160_000],
            h_values: None,
            pr_values: None,
            methods: vec![Method::Histogram, Method::Unscaled],
            ranks: None,
            replicates: 10,
            base_seed: 7,
            projection: false,
            noiseless: false,
            timing: false,
        }
    }
}
