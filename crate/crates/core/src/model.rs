//! The multiview generative model: mixture-of-product density tensors,
//! heteroskedastic Dirichlet factor sampling, multinomial histogram draws,
//! multinomial thinning, and the fiber-slice balance parameter xi.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{compensated_sum, increment, CompensatedSum, DenseTensor, Shape};

const PROB_TOL: f64 = 1e-12;

/// Seed plus stream id; equal pairs replay identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngSeed { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Mixture weights and per-mode factor probability vectors; the generative
/// ground truth P = sum_r w_r a_r^(1) o ... o a_r^(d).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiviewModel {
    weights: Vec<f64>,
    /// factors[k][r] is the length-p_k probability vector of component r in
    /// mode k.
    factors: Vec<Vec<Vec<f64>>>,
}

impl MultiviewModel {
    pub fn new(weights: Vec<f64>, factors: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("model needs at least one component"));
        }
        if factors.len() < 2 {
            return Err(Error::invalid("model needs at least two modes"));
        }
        check_probability_vector(&weights, "mixture weights")?;
        for (k, mode) in factors.iter().enumerate() {
            if mode.len() != weights.len() {
                return Err(Error::invalid(format!(
                    "mode {} has {} factor vectors but there are {} weights",
                    k,
                    mode.len(),
                    weights.len()
                )));
            }
            let p_k = mode[0].len();
            for (r, a) in mode.iter().enumerate() {
                if a.len() != p_k {
                    return Err(Error::invalid(format!(
                        "factor ({k},{r}) has length {} but mode {k} has dimension {p_k}",
                        a.len()
                    )));
                }
                check_probability_vector(a, &format!("factor ({k},{r})"))?;
            }
        }
        Ok(MultiviewModel { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|mode| mode[0].len()).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, mode: usize, component: usize) -> &[f64] {
        &self.factors[mode][component]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MultiviewModel = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("model json: {e}")))?;
        MultiviewModel::new(raw.weights, raw.factors)
    }
}

fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| x.is_nan() || x < 0.0 || x.is_infinite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total = compensated_sum(v.iter().copied());
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Nonnegative integer count tensor with its recorded total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramTensor {
    dims: Vec<usize>,
    counts: Vec<u64>,
    n: u64,
}

impl HistogramTensor {
    pub fn new(shape: &Shape, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != shape.len() {
            return Err(Error::invalid(format!(
                "count vector length {} does not match shape size {}",
                counts.len(),
                shape.len()
            )));
        }
        let n = counts.iter().sum();
        Ok(HistogramTensor {
            dims: shape.dims().to_vec(),
            counts,
            n,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.dims.clone()).expect("validated at construction")
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Counts as a real tensor (not normalized).
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_vec(self.shape(), self.counts.iter().map(|&c| c as f64).collect())
            .expect("lengths agree")
    }

    /// Empirical density Y/n.
    pub fn to_density(&self) -> Result<DenseTensor> {
        if self.n == 0 {
            return Err(Error::invalid(
                "cannot normalize a histogram with zero total count",
            ));
        }
        let n = self.n as f64;
        Ok(self.to_tensor().scaled(1.0 / n))
    }
}

/// Materialize the model's density tensor. The result is renormalized so its
/// l1 mass is exactly 1 up to rounding; CP rank stays at most R.
pub fn model_to_tensor(model: &MultiviewModel) -> DenseTensor {
    let shape = Shape::new(model.dims()).expect("model dims are valid");
    let d = model.order();
    let mut data = vec![0.0; shape.len()];
    let mut idx = vec![0usize; d];
    for slot in data.iter_mut() {
        let mut acc = 0.0;
        for r in 0..model.rank() {
            let mut prod = model.weights[r];
            for (k, &i) in idx.iter().enumerate() {
                prod *= model.factors[k][r][i];
            }
            acc += prod;
        }
        *slot = acc;
        increment(&mut idx, shape.dims());
    }
    let mut t = DenseTensor::from_vec(shape, data).expect("lengths agree");
    let total = t.norm_l1();
    if total > 0.0 {
        t = t.scaled(1.0 / total);
    }
    t
}

/// Geometric heteroskedasticity profile b_j = exp((j-1)/(p_max-1) * ln H),
/// normalized to mean exactly one. The extreme ratio stays H.
pub fn heteroskedastic_profile(p_max: usize, h: f64) -> Result<Vec<f64>> {
    if h < 1.0 || h.is_nan() {
        return Err(Error::invalid(format!(
            "heteroskedasticity strength must be at least 1, got {h}"
        )));
    }
    if p_max == 0 {
        return Err(Error::invalid("profile length must be positive"));
    }
    if h == 1.0 {
        return Ok(vec![1.0; p_max]);
    }
    if p_max < 2 {
        return Err(Error::invalid(
            "profile needs at least two coordinates when H > 1",
        ));
    }
    let log_h = h.ln();
    let raw: Vec<f64> = (0..p_max)
        .map(|j| ((j as f64) / ((p_max - 1) as f64) * log_h).exp())
        .collect();
    let mean = compensated_sum(raw.iter().copied()) / p_max as f64;
    Ok(raw.into_iter().map(|b| b / mean).collect())
}

/// Draw a model with heteroskedastic Dirichlet factors: per (mode, component)
/// the truncated profile is independently permuted and scaled by `alpha` to
/// form the Dirichlet concentration vector. Weights default to uniform 1/R.
pub fn sample_model(
    dims: &[usize],
    rank: usize,
    h: f64,
    alpha: f64,
    weights: Option<Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<MultiviewModel> {
    if alpha <= 0.0 || alpha.is_nan() {
        return Err(Error::invalid(format!(
            "Dirichlet concentration scale must be positive, got {alpha}"
        )));
    }
    if rank == 0 {
        return Err(Error::invalid("rank must be positive"));
    }
    let shape = Shape::new(dims.to_vec())?;
    let p_max = shape.max_dim();
    let profile = heteroskedastic_profile(p_max, h)?;

    let weights = match weights {
        Some(w) => {
            if w.len() != rank {
                return Err(Error::invalid(format!(
                    "{} weights given for rank {rank}",
                    w.len()
                )));
            }
            check_probability_vector(&w, "mixture weights")?;
            w
        }
        None => vec![1.0 / rank as f64; rank],
    };

    let mut factors = Vec::with_capacity(dims.len());
    for &p_k in dims {
        let mut mode = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut concentration: Vec<f64> = profile[..p_k].to_vec();
            permute(&mut concentration, rng);
            for c in &mut concentration {
                *c *= alpha;
            }
            mode.push(sample_dirichlet(&concentration, rng));
        }
        factors.push(mode);
    }
    MultiviewModel::new(weights, factors)
}

/// Fisher-Yates shuffle driven by the caller's stream.
fn permute<T>(values: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.gen_range(0..=i);
        values.swap(i, j);
    }
}

/// Dirichlet draw via normalized gamma variates. A degenerate all-zero draw
/// (possible only deep in the underflow regime) falls back to a point mass at
/// a uniformly chosen coordinate.
fn sample_dirichlet(concentration: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            let g = Gamma::new(a, 1.0).expect("positive shape");
            let x: f64 = g.sample(rng);
            if x.is_finite() {
                x
            } else {
                0.0
            }
        })
        .collect();
    let total = compensated_sum(draws.iter().copied());
    if total <= 0.0 {
        let winner = rng.gen_range(0..draws.len());
        draws.iter_mut().for_each(|x| *x = 0.0);
        draws[winner] = 1.0;
        return draws;
    }
    for x in &mut draws {
        *x /= total;
    }
    draws
}

/// Y ~ Multinomial(n, P) via sequential conditional binomials over cells in
/// linear order; O(cells) draws, reproducible under the seed.
pub fn sample_histogram(
    p: &DenseTensor,
    n: u64,
    rng: &mut ChaCha8Rng,
) -> Result<HistogramTensor> {
    validate_density(p, 1e-9)?;
    let cells = p.data().len();
    let mut counts = vec![0u64; cells];
    let mut remaining = n;
    let mut rem_mass = 1.0f64;
    for (i, &prob) in p.data().iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == cells {
            counts[i] = remaining;
            break;
        }
        let cond = if rem_mass > 0.0 {
            (prob / rem_mass).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let draw = Binomial::new(remaining, cond)
            .expect("probability is clamped")
            .sample(rng);
        counts[i] = draw;
        remaining -= draw;
        rem_mass -= prob;
    }
    let h = HistogramTensor::new(&p.shape().clone(), counts)?;
    debug_assert_eq!(h.n, n);
    Ok(h)
}

fn validate_density(p: &DenseTensor, tol: f64) -> Result<()> {
    if p.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("density tensor has a negative entry"));
    }
    let total = p.norm_l1();
    if (total - 1.0).abs() > tol {
        return Err(Error::invalid(format!(
            "density tensor has l1 mass {total}, expected 1"
        )));
    }
    Ok(())
}

/// Split each cell count into three parts Multinomial(y; 1/3, 1/3, 1/3).
/// Counts are conserved exactly: y1 + y2 + y3 = y cellwise.
pub fn thinning_split(
    y: &HistogramTensor,
    rng: &mut ChaCha8Rng,
) -> Result<(HistogramTensor, HistogramTensor, HistogramTensor)> {
    let cells = y.counts.len();
    let mut c1 = vec![0u64; cells];
    let mut c2 = vec![0u64; cells];
    let mut c3 = vec![0u64; cells];
    for (i, &count) in y.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let first = Binomial::new(count, 1.0 / 3.0).unwrap().sample(rng);
        let second = Binomial::new(count - first, 0.5).unwrap().sample(rng);
        c1[i] = first;
        c2[i] = second;
        c3[i] = count - first - second;
    }
    let shape = y.shape();
    Ok((
        HistogramTensor::new(&shape, c1)?,
        HistogramTensor::new(&shape, c2)?,
        HistogramTensor::new(&shape, c3)?,
    ))
}

/// Fiber-slice balance parameter: the largest ratio of a fiber's mass to the
/// product of the d-1 slice masses surrounding it. Fibers whose surrounding
/// slice product vanishes carry no mass and are skipped.
pub fn xi(p: &DenseTensor) -> f64 {
    let shape = p.shape();
    let d = shape.order();
    let slice_masses: Vec<Vec<f64>> = (0..d).map(|mode| p.slice_sums(mode)).collect();

    let mut worst = 0.0f64;
    for mode in 0..d {
        let m = p.matricize(mode).expect("mode in range");
        let rest: Vec<usize> = (0..d).filter(|&k| k != mode).collect();
        let rest_dims: Vec<usize> = rest.iter().map(|&k| shape.dim(k)).collect();
        let mut rest_idx = vec![0usize; rest.len()];
        for col in 0..m.cols() {
            let mut fiber = CompensatedSum::default();
            for h in 0..m.rows() {
                fiber.add(m.get(h, col).abs());
            }
            let mut slice_product = 1.0;
            for (pos, &k) in rest.iter().enumerate() {
                slice_product *= slice_masses[k][rest_idx[pos]];
            }
            if slice_product > 0.0 {
                worst = worst.max(fiber.value() / slice_product);
            }
            increment(&mut rest_idx, &rest_dims);
        }
    }
    worst
}
