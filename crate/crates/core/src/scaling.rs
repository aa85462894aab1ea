//! Rank-one scaling tensors M = b_1 o ... o b_d and the rules for building
//! them. Scaling rebalances the multinomial variance profile without raising
//! the CP/Tucker rank; the inverse-scaling Frobenius norm controls how much
//! the unscaling step can amplify error.
//!
//! Scalings are stored factorized and applied entry by entry; the full tensor
//! is never materialized outside of tests.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{HistogramTensor, MultiviewModel};
use crate::tensor::{compensated_sum, increment, DenseTensor, Shape};

/// One positive vector per mode; represents M = b_1 o ... o b_d.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneScaling {
    factors: Vec<Vec<f64>>,
}

impl RankOneScaling {
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::invalid("scaling needs at least two modes"));
        }
        for (k, b) in factors.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::invalid(format!("scaling mode {k} is empty")));
            }
            if let Some(i) = b.iter().position(|&v| v <= 0.0 || v.is_nan() || v.is_infinite()) {
                return Err(Error::domain(format!(
                    "scaling entry ({k},{i}) = {} is not strictly positive and finite",
                    b[i]
                )));
            }
        }
        Ok(RankOneScaling { factors })
    }

    /// No-op scaling (all ones), used for Frobenius estimation.
    pub fn all_ones(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        Ok(RankOneScaling {
            factors: shape.dims().iter().map(|&p| vec![1.0; p]).collect(),
        })
    }

    /// Oracle factor-based scaling from the true model:
    /// sigma_{k,i} = gamma_{k,i} max_r a_r^(k)(i), (b_k)_i =
    /// sqrt(sum_h sigma_{k,h} / sigma_{k,i}). Zero sigma is a hard error
    /// naming the coordinate; pruning is the caller's job.
    pub fn oracle(model: &MultiviewModel, gamma: Option<&[Vec<f64>]>) -> Result<Self> {
        let dims = model.dims();
        if let Some(g) = gamma {
            if g.len() != dims.len() || g.iter().zip(&dims).any(|(gk, &p)| gk.len() != p) {
                return Err(Error::invalid(
                    "gamma weights must have one positive entry per (mode, coordinate)",
                ));
            }
        }
        let mut factors = Vec::with_capacity(dims.len());
        for (k, &p_k) in dims.iter().enumerate() {
            let mut sigma = vec![0.0f64; p_k];
            for (i, s) in sigma.iter_mut().enumerate() {
                let mut best = 0.0f64;
                for r in 0..model.rank() {
                    best = best.max(model.factor(k, r)[i]);
                }
                let g = gamma.map_or(1.0, |g| g[k][i]);
                if g <= 0.0 || g.is_nan() {
                    return Err(Error::domain(format!(
                        "gamma weight ({k},{i}) must be positive"
                    )));
                }
                *s = g * best;
                if *s == 0.0 {
                    return Err(Error::domain(format!(
                        "oracle scaling undefined: sigma is zero at mode {k}, coordinate {i}; \
                         remove that empty slice first"
                    )));
                }
            }
            let total = compensated_sum(sigma.iter().copied());
            factors.push(sigma.iter().map(|&s| (total / s).sqrt()).collect());
        }
        RankOneScaling::new(factors)
    }

    /// Population slice normalization: (b_k)_i =
    /// max(Slice^{(k,i)}(P), 1/p_k)^{-1/2}. The floor handles empty slices.
    pub fn slice_normalization(p: &DenseTensor) -> Result<Self> {
        if p.data().iter().any(|&v| v < 0.0) || (p.norm_l1() - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(
                "slice normalization needs a density tensor input",
            ));
        }
        let dims = p.shape().dims().to_vec();
        let mut factors = Vec::with_capacity(dims.len());
        for (k, &p_k) in dims.iter().enumerate() {
            let floor = 1.0 / p_k as f64;
            let sums = p.slice_sums(k);
            factors.push(sums.iter().map(|&s| s.max(floor).powf(-0.5)).collect());
        }
        RankOneScaling::new(factors)
    }

    /// Plug-in slice normalization from a pilot histogram: empirical slice
    /// fractions with the same 1/p_k floor.
    pub fn empirical_slice_normalization(y0: &HistogramTensor) -> Result<Self> {
        if y0.n() == 0 {
            return Err(Error::invalid(
                "empirical slice normalization needs at least one observation",
            ));
        }
        let n0 = y0.n() as f64;
        let counts = y0.to_tensor();
        let dims = counts.shape().dims().to_vec();
        let mut factors = Vec::with_capacity(dims.len());
        for (k, &p_k) in dims.iter().enumerate() {
            let floor = 1.0 / p_k as f64;
            let sums = counts.slice_sums(k);
            factors.push(
                sums.iter()
                    .map(|&s| (s / n0).max(floor).powf(-0.5))
                    .collect(),
            );
        }
        RankOneScaling::new(factors)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn factor(&self, mode: usize) -> &[f64] {
        &self.factors[mode]
    }

    /// Multiply (or, with `invert`, divide) every entry of `a` by
    /// prod_k (b_k)_{i_k}, streaming over cells.
    pub fn apply(&self, a: &DenseTensor, invert: bool) -> Result<DenseTensor> {
        if self.dims() != a.shape().dims() {
            return Err(Error::invalid(format!(
                "scaling dims {:?} do not match tensor dims {:?}",
                self.dims(),
                a.shape().dims()
            )));
        }
        let dims = a.shape().dims().to_vec();
        let mut out = a.clone();
        let mut idx = vec![0usize; dims.len()];
        for slot in out.data_mut() {
            let mut m = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                m *= self.factors[k][i];
            }
            if invert {
                *slot /= m;
            } else {
                *slot *= m;
            }
            increment(&mut idx, &dims);
        }
        Ok(out)
    }

    /// ||M^{(-1)}||_F = prod_k ||b_k^{(-1)}||_2, computed factorized.
    pub fn inverse_frobenius(&self) -> f64 {
        self.factors
            .iter()
            .map(|b| compensated_sum(b.iter().map(|v| 1.0 / (v * v))).sqrt())
            .product()
    }

    /// Largest entry of M, computed factorized.
    pub fn max_entry(&self) -> f64 {
        self.factors
            .iter()
            .map(|b| b.iter().cloned().fold(f64::MIN, f64::max))
            .product()
    }
}

/// Scaling rule selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingRule {
    /// All-ones scaling (Frobenius estimation).
    None,
    /// Oracle factor-based scaling; needs the true model.
    Oracle,
    /// Oracle scaling estimated by an ALS CP decomposition. Reserved: the
    /// decomposition is not robust to heteroskedastic noise and is not
    /// implemented.
    OracleCp,
    /// Slice normalization from the true slice marginals; needs the model.
    SliceOracle,
    /// Slice normalization from empirical slice marginals.
    SliceEst,
}

impl ScalingRule {
    pub const ALL: [ScalingRule; 5] = [
        ScalingRule::None,
        ScalingRule::Oracle,
        ScalingRule::OracleCp,
        ScalingRule::SliceOracle,
        ScalingRule::SliceEst,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScalingRule::None => "none",
            ScalingRule::Oracle => "oracle",
            ScalingRule::OracleCp => "oracle-cp",
            ScalingRule::SliceOracle => "slice-oracle",
            ScalingRule::SliceEst => "slice-est",
        }
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScalingRule::ALL
            .iter()
            .find(|r| r.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown scaling rule '{s}' (expected none|oracle|oracle-cp|slice-oracle|slice-est)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_to_tensor, sample_histogram, sample_model, RngSeed};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        RngSeed::new(seed, 0).rng()
    }

    fn materialize(m: &RankOneScaling) -> DenseTensor {
        DenseTensor::outer_product(
            &(0..m.dims().len())
                .map(|k| m.factor(k).to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut r = rng(seed);
        let shape = Shape::new(dims.to_vec()).unwrap();
        let data = (0..shape.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        DenseTensor::from_vec(shape, data).unwrap()
    }

    // -- all_ones --

    #[test]
    fn all_ones_materializes_to_ones_and_is_identity() {
        let m = RankOneScaling::all_ones(&[2, 3]).unwrap();
        assert!(materialize(&m).data().iter().all(|&v| v == 1.0));
        assert_abs_diff_eq!(m.inverse_frobenius(), 6f64.sqrt(), epsilon = 1e-14);
        let a = random_tensor(&[2, 3], 31);
        assert_eq!(m.apply(&a, false).unwrap(), a);
        assert_eq!(m.apply(&a, true).unwrap(), a);
    }

    // -- oracle scaling --

    #[test]
    fn oracle_rank_one_is_inverse_sqrt_factor() {
        let a = vec![0.5, 0.3, 0.2];
        let model =
            MultiviewModel::new(vec![1.0], vec![vec![a.clone()], vec![vec![0.5, 0.5]]]).unwrap();
        let m = RankOneScaling::oracle(&model, None).unwrap();
        // sum of sigma is 1 for a single component, so b_i = sqrt(1 / a_i)
        for (i, &ai) in a.iter().enumerate() {
            assert_abs_diff_eq!(m.factor(0)[i], (1.0 / ai).sqrt(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(m.inverse_frobenius(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn oracle_uniform_factors_give_constant_sqrt_p() {
        let model = MultiviewModel::new(
            vec![0.5, 0.5],
            vec![
                vec![vec![0.25; 4], vec![0.25; 4]],
                vec![vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]],
            ],
        )
        .unwrap();
        let m = RankOneScaling::oracle(&model, None).unwrap();
        for &v in m.factor(0) {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-14);
        }
        for &v in m.factor(1) {
            assert_abs_diff_eq!(v, 3f64.sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn oracle_inverse_frobenius_is_exactly_one() {
        let mut r = rng(32);
        for trial in 0..10 {
            let model = sample_model(&[7, 5, 6], 3, 25.0, 0.8, None, &mut r).unwrap();
            let m = RankOneScaling::oracle(&model, None).unwrap();
            assert_abs_diff_eq!(m.inverse_frobenius(), 1.0, epsilon = 1e-12);
            let _ = trial;
        }
    }

    #[test]
    fn oracle_scaled_fiber_mass_is_controlled() {
        // Fiber_l1(P * M * M) <= R^d p_max, checked by materializing
        let mut r = rng(33);
        let model = sample_model(&[6, 6, 6], 3, 20.0, 0.8, None, &mut r).unwrap();
        let p = model_to_tensor(&model);
        let m = RankOneScaling::oracle(&model, None).unwrap();
        let scaled = m
            .apply(&m.apply(&p, false).unwrap(), false)
            .unwrap();
        let bound = 27.0 * 6.0; // R^d * p_max
        assert!(
            scaled.fiber_l1_max() <= bound * (1.0 + 1e-12),
            "fiber mass {} exceeds {bound}",
            scaled.fiber_l1_max()
        );
    }

    #[test]
    fn oracle_zero_sigma_is_a_named_error() {
        let model = MultiviewModel::new(
            vec![1.0],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]]],
        )
        .unwrap();
        let err = RankOneScaling::oracle(&model, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mode 0") && msg.contains("coordinate 1"), "{msg}");
    }

    #[test]
    fn oracle_gamma_weights_enter_sigma() {
        let model = MultiviewModel::new(
            vec![1.0],
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
        )
        .unwrap();
        let gamma = vec![vec![1.0, 4.0], vec![1.0, 1.0]];
        let m = RankOneScaling::oracle(&model, Some(&gamma)).unwrap();
        // sigma_0 = (0.5, 2.0), sum 2.5: b = (sqrt(5), sqrt(1.25))
        assert_abs_diff_eq!(m.factor(0)[0], 5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.factor(0)[1], 1.25f64.sqrt(), epsilon = 1e-14);
    }

    // -- slice normalization --

    #[test]
    fn slice_normalization_uniform_hits_floor() {
        let shape = Shape::new(vec![4, 4, 4]).unwrap();
        let p = DenseTensor::constant(shape, 1.0 / 64.0);
        let m = RankOneScaling::slice_normalization(&p).unwrap();
        for k in 0..3 {
            for &v in m.factor(k) {
                assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(m.inverse_frobenius(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slice_normalization_truncates_empty_slices() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        let mut p = DenseTensor::zeros(shape);
        p.set(&[1, 0], 0.5);
        p.set(&[1, 1], 0.5);
        let m = RankOneScaling::slice_normalization(&p).unwrap();
        // empty mode-0 slice 0 uses the floor 1/2
        assert_abs_diff_eq!(m.factor(0)[0], 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.factor(0)[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn slice_normalization_inverse_frobenius_bound() {
        // ||M^{(-1)}||_F <= 2^{d/2}, via materialization
        let mut r = rng(34);
        for trial in 0..10 {
            let model = sample_model(&[5, 5, 5], 3, 30.0, 0.8, None, &mut r).unwrap();
            let p = model_to_tensor(&model);
            let m = RankOneScaling::slice_normalization(&p).unwrap();
            let inv = materialize(&m).entrywise_inverse().unwrap();
            assert_abs_diff_eq!(m.inverse_frobenius(), inv.norm_fro(), epsilon = 1e-10);
            assert!(
                m.inverse_frobenius() <= 2f64.powf(1.5) + 1e-12,
                "trial {trial}: bound violated: {}",
                m.inverse_frobenius()
            );
            // per-mode mass bound behind the proposition
            for k in 0..3 {
                let s: f64 = m.factor(k).iter().map(|b| 1.0 / (b * b)).sum();
                assert!(s <= 2.0 + 1e-12);
            }
        }
    }

    // -- empirical slice normalization --

    #[test]
    fn empirical_point_mass_uses_floor_elsewhere() {
        let shape = Shape::new(vec![2, 3]).unwrap();
        let y0 = HistogramTensor::new(&shape, vec![7, 0, 0, 0, 0, 0]).unwrap();
        let m = RankOneScaling::empirical_slice_normalization(&y0).unwrap();
        assert_abs_diff_eq!(m.factor(0)[0], 1.0, epsilon = 1e-14); // slice fraction 1
        assert_abs_diff_eq!(m.factor(0)[1], 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(m.factor(1)[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.factor(1)[1], 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn empirical_exact_expected_counts_match_population_rule() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        let p = DenseTensor::constant(shape.clone(), 0.25);
        let y0 = HistogramTensor::new(&shape, vec![25, 25, 25, 25]).unwrap();
        let emp = RankOneScaling::empirical_slice_normalization(&y0).unwrap();
        let pop = RankOneScaling::slice_normalization(&p).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(emp.factor(k)[i], pop.factor(k)[i], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn empirical_converges_to_population_within_sqrt2() {
        let mut r = rng(35);
        let model = sample_model(&[10, 10, 10], 3, 10.0, 0.8, None, &mut r).unwrap();
        let p = model_to_tensor(&model);
        let pop = RankOneScaling::slice_normalization(&p).unwrap();
        for _ in 0..20 {
            let y0 = sample_histogram(&p, 100_000, &mut r).unwrap();
            let emp = RankOneScaling::empirical_slice_normalization(&y0).unwrap();
            for k in 0..3 {
                for i in 0..10 {
                    let ratio = emp.factor(k)[i] / pop.factor(k)[i];
                    assert!(
                        (2f64.powf(-0.5)..=2f64.powf(0.5)).contains(&ratio),
                        "ratio {ratio} outside [2^-1/2, 2^1/2] at ({k},{i})"
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_is_scale_free() {
        // doubling all counts leaves the slice fractions, hence the scaling,
        // unchanged
        let shape = Shape::new(vec![2, 2]).unwrap();
        let y = HistogramTensor::new(&shape, vec![1, 2, 3, 4]).unwrap();
        let y2 = HistogramTensor::new(&shape, vec![2, 4, 6, 8]).unwrap();
        let a = RankOneScaling::empirical_slice_normalization(&y).unwrap();
        let b = RankOneScaling::empirical_slice_normalization(&y2).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(a.factor(k)[i], b.factor(k)[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn empirical_rejects_empty_histogram() {
        let shape = Shape::new(vec![2, 2]).unwrap();
        let y0 = HistogramTensor::new(&shape, vec![0; 4]).unwrap();
        assert!(RankOneScaling::empirical_slice_normalization(&y0).is_err());
    }

    // -- apply / inverse_frobenius --

    #[test]
    fn apply_round_trips() {
        let mut r = rng(36);
        let factors: Vec<Vec<f64>> = vec![
            (0..3).map(|_| r.gen_range(0.2..3.0)).collect(),
            (0..4).map(|_| r.gen_range(0.2..3.0)).collect(),
            (0..2).map(|_| r.gen_range(0.2..3.0)).collect(),
        ];
        let m = RankOneScaling::new(factors).unwrap();
        let a = random_tensor(&[3, 4, 2], 37);
        let back = m.apply(&m.apply(&a, false).unwrap(), true).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            let rel = (x - y).abs() / y.abs().max(1e-300);
            assert!(rel < 1e-12, "round trip off by {rel}");
        }
    }

    #[test]
    fn apply_matches_materialized_hadamard() {
        let m = RankOneScaling::new(vec![vec![1.0, 2.0], vec![3.0, 0.5, 2.0]]).unwrap();
        let a = random_tensor(&[2, 3], 38);
        let fast = m.apply(&a, false).unwrap();
        let slow = a.hadamard(&materialize(&m)).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn apply_preserves_matricization_rank() {
        let mut r = rng(39);
        let model = sample_model(&[5, 6, 4], 2, 10.0, 0.8, None, &mut r).unwrap();
        let p = model_to_tensor(&model);
        let m = RankOneScaling::slice_normalization(&p).unwrap();
        let scaled = m.apply(&p, false).unwrap();
        for mode in 0..3 {
            for t in [&p, &scaled] {
                let mat = t.matricize(mode).unwrap().transpose();
                let k = mat.cols();
                let (_, sv) = crate::linalg::top_r_svd(&mat, k).unwrap();
                let rank = sv.iter().filter(|&&s| s / sv[0].max(1e-300) > 1e-9).count();
                assert!(rank <= 2, "mode {mode}: rank {rank} after scaling");
            }
        }
    }

    #[test]
    fn apply_rejects_dim_mismatch() {
        let m = RankOneScaling::all_ones(&[2, 2]).unwrap();
        let a = random_tensor(&[2, 3], 40);
        assert!(m.apply(&a, false).is_err());
    }

    #[test]
    fn inverse_frobenius_matches_materialization() {
        let m = RankOneScaling::new(vec![vec![0.5, 1.5], vec![2.0, 1.0, 0.25]]).unwrap();
        let expected = materialize(&m).entrywise_inverse().unwrap().norm_fro();
        assert_abs_diff_eq!(m.inverse_frobenius(), expected, epsilon = 1e-12);
    }

    #[test]
    fn holder_bound_holds_numerically() {
        // ||(A - B) * M^{(-1)}||_1 <= ||A - B||_F ||M^{(-1)}||_F
        let mut r = rng(41);
        for trial in 0..10 {
            let factors: Vec<Vec<f64>> = vec![
                (0..4).map(|_| r.gen_range(0.3..2.0)).collect(),
                (0..3).map(|_| r.gen_range(0.3..2.0)).collect(),
            ];
            let m = RankOneScaling::new(factors).unwrap();
            let a = random_tensor(&[4, 3], 100 + trial);
            let b = random_tensor(&[4, 3], 200 + trial);
            let diff = DenseTensor::from_vec(
                a.shape().clone(),
                a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
            )
            .unwrap();
            let unscaled = m.apply(&diff, true).unwrap();
            assert!(
                unscaled.norm_l1() <= diff.norm_fro() * m.inverse_frobenius() + 1e-12,
                "trial {trial}: Holder bound violated"
            );
        }
    }

    #[test]
    fn invalid_factors_are_rejected() {
        assert!(RankOneScaling::new(vec![vec![1.0]]).is_err());
        assert!(RankOneScaling::new(vec![vec![1.0, 0.0], vec![1.0]]).is_err());
        assert!(RankOneScaling::new(vec![vec![1.0, -2.0], vec![1.0]]).is_err());
        assert!(RankOneScaling::new(vec![vec![1.0, f64::INFINITY], vec![1.0]]).is_err());
    }

    #[test]
    fn scaling_rule_parse_and_display() {
        for rule in ScalingRule::ALL {
            assert_eq!(rule.name().parse::<ScalingRule>().unwrap(), rule);
        }
        assert!("bogus".parse::<ScalingRule>().is_err());
    }
}
