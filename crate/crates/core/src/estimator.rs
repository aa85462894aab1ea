//! The spectral density-tensor estimators.
//!
//! The no-thinning pipeline scales the histogram, initializes per-mode
//! subspaces with Deflated-HeteroPCA on hollowed Gram matrices, refines each
//! subspace by a truncated SVD after projecting along the other modes'
//! initial estimates, projects the scaled tensor onto the refined subspaces,
//! and divides by the sample size. The thinned variant runs the three stages
//! on three independent multinomial splits of the counts.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::simplex_projection;
use crate::heteropca::{deflated_hetero_pca, DeflationSchedule, SubspaceEstimate};
use crate::linalg::top_r_svd;
use crate::model::{model_to_tensor, thinning_split, HistogramTensor, MultiviewModel};
use crate::scaling::{RankOneScaling, ScalingRule};
use crate::tensor::DenseTensor;

/// Knobs for the spectral estimators.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    /// Target Tucker ranks (r_1, ..., r_d).
    pub ranks: Vec<usize>,
    /// Iteration budgets for the deflation steps inside HeteroPCA.
    pub schedule: DeflationSchedule,
    /// Split the counts into three independent parts (initialization,
    /// refinement, projection) instead of reusing the full histogram.
    pub thinning: bool,
    /// Project the final density estimate onto the probability simplex.
    pub simplex_projection: bool,
}

impl EstimatorOptions {
    pub fn with_ranks(ranks: &[usize]) -> Self {
        EstimatorOptions {
            ranks: ranks.to_vec(),
            schedule: DeflationSchedule::default(),
            thinning: false,
            simplex_projection: false,
        }
    }

    fn validate(&self, dims: &[usize]) -> Result<()> {
        if self.ranks.len() != dims.len() {
            return Err(Error::invalid(format!(
                "{} target ranks given for an order-{} tensor",
                self.ranks.len(),
                dims.len()
            )));
        }
        for (k, (&r, &p)) in self.ranks.iter().zip(dims).enumerate() {
            if r == 0 || r > p {
                return Err(Error::invalid(format!(
                    "target rank {r} out of range for mode {k} (dimension {p})"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a single estimation run produces.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    /// Scaled estimate of Q = P * M.
    pub q_hat: DenseTensor,
    /// Density estimate P-hat = Q-hat * M^{(-1)}, simplex-projected when the
    /// option is set.
    pub p_hat: DenseTensor,
    pub initial_subspaces: Vec<SubspaceEstimate>,
    pub refined_subspaces: Vec<SubspaceEstimate>,
    /// Effective refined ranks after capping r_k at the product of the other
    /// modes' target ranks.
    pub effective_ranks: Vec<usize>,
    /// Split totals (n_1, n_2, n_3) when thinning was used.
    pub split_totals: Option<[u64; 3]>,
}

impl EstimateReport {
    /// Spectral diagnostics of the scaled variance profile M * M * P-hat:
    /// the weakest retained mode-wise singular value of Q-hat and the
    /// fiber/slice/max masses entering the error-rate bounds. Computed on
    /// demand; materializes one tensor of the full size.
    pub fn diagnostics(&self, scaling: &RankOneScaling) -> Result<ScaledVarianceDiagnostics> {
        let profile = scaling.apply(&scaling.apply(&self.p_hat, false)?, false)?;
        let mut lambda_tucker = f64::INFINITY;
        for (k, r) in self.effective_ranks.iter().enumerate() {
            let m = self.q_hat.matricize(k)?;
            let wide = if m.rows() <= m.cols() { m } else { m.transpose() };
            let (_, sv) = top_r_svd(&wide, *r)?;
            lambda_tucker = lambda_tucker.min(sv[*r - 1]);
        }
        let r_max = *self.effective_ranks.iter().max().unwrap() as f64;
        let r_prod: f64 = self.effective_ranks.iter().map(|&r| r as f64).product();
        let fiber = profile.fiber_l1_max();
        let max_abs = profile.norm_inf();
        Ok(ScaledVarianceDiagnostics {
            lambda_tucker,
            fiber_l1: fiber,
            slice_l1: profile.slice_l1_max(),
            max_abs,
            eta_max: (r_max * fiber).max(r_prod * max_abs),
        })
    }
}

/// Fiber/slice masses of the scaled variance profile and the weakest
/// mode-wise signal strength; reported, never enforced.
#[derive(Debug, Clone, Copy)]
pub struct ScaledVarianceDiagnostics {
    pub lambda_tucker: f64,
    pub fiber_l1: f64,
    pub slice_l1: f64,
    pub max_abs: f64,
    pub eta_max: f64,
}

/// Scaled density tensor estimation without thinning: initialize, refine,
/// and project all on the same (scaled) counts `y`, then divide by `n`.
///
/// `y` holds raw counts (or their noiseless surrogate n * P); `n` is the
/// total mass used for the final normalization.
pub fn estimate_no_thinning(
    y: &DenseTensor,
    n: f64,
    scaling: &RankOneScaling,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    if n < 1.0 || n.is_nan() {
        return Err(Error::invalid(format!(
            "total count must be at least 1, got {n}"
        )));
    }
    opts.validate(y.shape().dims())?;
    let scaled = scaling.apply(y, false)?;
    let initial = initialize_subspaces(&scaled, opts)?;
    let (refined, effective_ranks) = refine_subspaces(&scaled, &initial, opts)?;
    let x_hat = project_onto(&scaled, &refined)?;
    finish_report(x_hat, n, scaling, opts, initial, refined, effective_ranks, None)
}

/// Scaled density tensor estimation with multinomial thinning: the counts
/// are split per cell into three independent parts, which drive the
/// initialization, refinement, and projection stages respectively.
pub fn estimate_with_thinning(
    y: &HistogramTensor,
    scaling: &RankOneScaling,
    opts: &EstimatorOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EstimateReport> {
    let (y1, y2, y3) = thinning_split(y, rng)?;
    estimate_from_split(&y1, &y2, &y3, scaling, opts)
}

/// The post-split thinned pipeline, exposed so deterministic splits can be
/// injected (e.g. the exact even split of a divisible noiseless tensor).
pub fn estimate_from_split(
    y1: &HistogramTensor,
    y2: &HistogramTensor,
    y3: &HistogramTensor,
    scaling: &RankOneScaling,
    opts: &EstimatorOptions,
) -> Result<EstimateReport> {
    if y3.n() == 0 {
        return Err(Error::DegenerateSplit);
    }
    let totals = [y1.n(), y2.n(), y3.n()];
    opts.validate(y1.shape().dims())?;
    let s1 = scaling.apply(&y1.to_tensor(), false)?;
    let s2 = scaling.apply(&y2.to_tensor(), false)?;
    let s3 = scaling.apply(&y3.to_tensor(), false)?;
    let initial = initialize_subspaces(&s1, opts)?;
    let (refined, effective_ranks) = refine_subspaces(&s2, &initial, opts)?;
    let x_hat = project_onto(&s3, &refined)?;
    finish_report(
        x_hat,
        y3.n() as f64,
        scaling,
        opts,
        initial,
        refined,
        effective_ranks,
        Some(totals),
    )
}

/// Mode-wise Deflated-HeteroPCA on the hollowed Gram matrices of the scaled
/// tensor.
fn initialize_subspaces(
    scaled: &DenseTensor,
    opts: &EstimatorOptions,
) -> Result<Vec<SubspaceEstimate>> {
    let d = scaled.shape().order();
    let mut subspaces = Vec::with_capacity(d);
    for k in 0..d {
        let unfolded = scaled.matricize(k)?;
        let gram = unfolded.gram().off_diag_projection()?;
        let sub = deflated_hetero_pca(&gram, opts.ranks[k], &opts.schedule)?;
        subspaces.push(sub.with_mode(k));
    }
    Ok(subspaces)
}

/// Per-mode truncated SVD of the tensor projected along every other mode's
/// initial subspace. The refined rank is capped at the product of the other
/// modes' target ranks, which bounds the matrix width.
#[allow(clippy::needless_range_loop)]
fn refine_subspaces(
    scaled: &DenseTensor,
    initial: &[SubspaceEstimate],
    opts: &EstimatorOptions,
) -> Result<(Vec<SubspaceEstimate>, Vec<usize>)> {
    let d = scaled.shape().order();
    let mut refined = Vec::with_capacity(d);
    let mut effective = Vec::with_capacity(d);
    for k in 0..d {
        let mut core = scaled.clone();
        for h in 0..d {
            if h != k {
                core = core.mode_product(h, &initial[h].basis.transpose())?;
            }
        }
        let unfolded = core.matricize(k)?;
        let width: usize = (0..d).filter(|&h| h != k).map(|h| opts.ranks[h]).product();
        let r_eff = opts.ranks[k].min(width).min(unfolded.rows());
        let (basis, _) = top_r_svd(&unfolded, r_eff)?;
        refined.push(SubspaceEstimate::new(basis).with_mode(k));
        effective.push(r_eff);
    }
    Ok((refined, effective))
}

/// X-hat = scaled x_k (U_k U_k^T) over all modes.
fn project_onto(scaled: &DenseTensor, subspaces: &[SubspaceEstimate]) -> Result<DenseTensor> {
    let mut out = scaled.clone();
    for (k, sub) in subspaces.iter().enumerate() {
        let projector = sub.basis.matmul(&sub.basis.transpose())?;
        out = out.mode_product(k, &projector)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    x_hat: DenseTensor,
    n: f64,
    scaling: &RankOneScaling,
    opts: &EstimatorOptions,
    initial: Vec<SubspaceEstimate>,
    refined: Vec<SubspaceEstimate>,
    effective_ranks: Vec<usize>,
    split_totals: Option<[u64; 3]>,
) -> Result<EstimateReport> {
    let q_hat = x_hat.scaled(1.0 / n);
    let mut p_hat = scaling.apply(&q_hat, true)?;
    if opts.simplex_projection {
        p_hat = simplex_projection(&p_hat);
    }
    Ok(EstimateReport {
        q_hat,
        p_hat,
        initial_subspaces: initial,
        refined_subspaces: refined,
        effective_ranks,
        split_totals,
    })
}

/// Which extra inputs a scaling rule needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DensityEstimateInputs<'a> {
    /// Ground-truth model; required by the oracle and slice-oracle rules.
    pub model: Option<&'a MultiviewModel>,
    /// Independent pilot histogram for the empirical slice rule; when absent
    /// the main histogram doubles as the pilot.
    pub pilot: Option<&'a HistogramTensor>,
}

/// Full density-estimation pipeline: build the scaling tensor for `rule`,
/// run the spectral estimator (thinned or not per the options), unscale, and
/// optionally project onto the simplex.
pub fn estimate_density(
    y: &HistogramTensor,
    rule: ScalingRule,
    opts: &EstimatorOptions,
    inputs: DensityEstimateInputs<'_>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<EstimateReport> {
    let dims = y.shape().dims().to_vec();
    let scaling = match rule {
        ScalingRule::None => RankOneScaling::all_ones(&dims)?,
        ScalingRule::Oracle => {
            let model = inputs.model.ok_or_else(|| {
                Error::invalid("the oracle scaling rule needs the true model")
            })?;
            RankOneScaling::oracle(model, None)?
        }
        ScalingRule::OracleCp => {
            return Err(Error::NotImplemented(
                "oracle-cp scaling (ALS CP decomposition is not robust to heteroskedastic \
                 noise)"
                    .into(),
            ));
        }
        ScalingRule::SliceOracle => {
            let model = inputs.model.ok_or_else(|| {
                Error::invalid("the slice-oracle scaling rule needs the true model")
            })?;
            RankOneScaling::slice_normalization(&model_to_tensor(model))?
        }
        ScalingRule::SliceEst => {
            let pilot = inputs.pilot.unwrap_or(y);
            RankOneScaling::empirical_slice_normalization(pilot)?
        }
    };
    if opts.thinning {
        let rng = rng.ok_or_else(|| {
            Error::invalid("thinning needs a random number generator for the split")
        })?;
        estimate_with_thinning(y, &scaling, opts, rng)
    } else {
        estimate_no_thinning(&y.to_tensor(), y.n() as f64, &scaling, opts)
    }
}
