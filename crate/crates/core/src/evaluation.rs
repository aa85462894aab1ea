//! Post-processing and metrics: Euclidean projection onto the probability
//! simplex, Frobenius / entrywise-l1 errors, and minimax-normalized error
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CompensatedSum, DenseTensor};

/// Euclidean projection of the vectorized tensor onto the probability
/// simplex: z_i = (x_i - theta)_+ with theta chosen so the result sums to
/// one. Sort-and-scan, O(m log m).
pub fn simplex_projection(a: &DenseTensor) -> DenseTensor {
    let theta = simplex_threshold(a.data());
    let mut out = a.clone();
    for v in out.data_mut() {
        *v = (*v - theta).max(0.0);
    }
    out
}

fn simplex_threshold(x: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = CompensatedSum::default();
    // i = 0 always qualifies (v - (v - 1) = 1 > 0), so theta is always set
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        prefix.add(v);
        let candidate = (prefix.value() - 1.0) / (i + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    theta
}

/// ||a - b||_F with a shape check.
pub fn frobenius_error(estimate: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    check_shapes(estimate, truth)?;
    let mut acc = CompensatedSum::default();
    for (x, y) in estimate.data().iter().zip(truth.data()) {
        let d = x - y;
        acc.add(d * d);
    }
    Ok(acc.value().sqrt())
}

/// ||a - b||_1 with a shape check.
pub fn l1_error(estimate: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    check_shapes(estimate, truth)?;
    let mut acc = CompensatedSum::default();
    for (x, y) in estimate.data().iter().zip(truth.data()) {
        acc.add((x - y).abs());
    }
    Ok(acc.value())
}

fn check_shapes(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "error metric shape mismatch: {:?} vs {:?}",
            a.shape().dims(),
            b.shape().dims()
        )));
    }
    Ok(())
}

/// Frobenius error rescaled by the minimax rate:
/// ||e||_F * sqrt(n / (R * Fiber_l1(P))).
pub fn normalized_frobenius_error(
    estimate: &DenseTensor,
    truth: &DenseTensor,
    rank: usize,
    n: u64,
) -> Result<f64> {
    let fiber = truth.fiber_l1_max();
    if fiber <= 0.0 {
        return Err(Error::domain(
            "normalized Frobenius error undefined: the reference tensor has zero fiber mass",
        ));
    }
    let err = frobenius_error(estimate, truth)?;
    Ok(err * ((n as f64) / (rank as f64 * fiber)).sqrt())
}

/// l1 error rescaled by the minimax rate: ||e||_1 * sqrt(n / (R * p_max)).
pub fn normalized_l1_error(
    estimate: &DenseTensor,
    truth: &DenseTensor,
    rank: usize,
    n: u64,
) -> Result<f64> {
    let err = l1_error(estimate, truth)?;
    let p_max = truth.shape().max_dim();
    Ok(err * ((n as f64) / (rank as f64 * p_max as f64)).sqrt())
}

/// Per-replicate error measurements plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub frobenius: f64,
    pub l1: f64,
    pub normalized_frobenius: f64,
    pub normalized_l1: f64,
    pub replicate: usize,
    pub config_fingerprint: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(dims: &[usize], data: Vec<f64>) -> DenseTensor {
        DenseTensor::from_vec(Shape::new(dims.to_vec()).unwrap(), data).unwrap()
    }

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(dims.to_vec()).unwrap();
        let data = (0..shape.len()).map(|_| r.gen_range(-1.0..1.5)).collect();
        DenseTensor::from_vec(shape, data).unwrap()
    }

    fn random_simplex_point(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|_| -rng.gen_range(0.0f64..1.0).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    // -- simplex projection --

    #[test]
    fn projecting_a_density_changes_nothing() {
        let p = tensor(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let z = simplex_projection(&p);
        for (a, b) in z.data().iter().zip(p.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_coordinate_thresholding() {
        // (0.5, 0.7): theta = 0.1, output (0.4, 0.6)
        let z = simplex_projection(&tensor(&[2, 1], vec![0.5, 0.7]));
        assert_abs_diff_eq!(z.data()[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(z.data()[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn negative_coordinate_clipping() {
        // (-1, 0): theta = -1, output (0, 1)
        let z = simplex_projection(&tensor(&[2, 1], vec![-1.0, 0.0]));
        assert_eq!(z.data()[0], 0.0);
        assert_abs_diff_eq!(z.data()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_output_is_a_density_and_idempotent() {
        for seed in 0..5 {
            let a = random_tensor(&[3, 4, 2], seed);
            let z = simplex_projection(&a);
            assert!(z.data().iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(z.norm_l1(), 1.0, epsilon = 1e-12);
            let zz = simplex_projection(&z);
            for (x, y) in zz.data().iter().zip(z.data()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_nonexpansive_toward_densities() {
        // ||proj(A) - P||_F <= ||A - P||_F and l1 within factor 2
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for seed in 0..10 {
            let a = random_tensor(&[3, 3], seed);
            let z = simplex_projection(&a);
            let p_data = random_simplex_point(9, &mut rng);
            let p = tensor(&[3, 3], p_data);
            assert!(
                frobenius_error(&z, &p).unwrap() <= frobenius_error(&a, &p).unwrap() + 1e-12
            );
            assert!(l1_error(&z, &p).unwrap() <= 2.0 * l1_error(&a, &p).unwrap() + 1e-12);
        }
    }

    #[test]
    fn projection_is_l1_closest_point() {
        // ||A - proj(A)||_1 <= ||A - q||_1 for 200 random simplex points q
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = random_tensor(&[4, 3], 52);
        let z = simplex_projection(&a);
        let own = l1_error(&a, &z).unwrap();
        for _ in 0..200 {
            let q = tensor(&[4, 3], random_simplex_point(12, &mut rng));
            assert!(own <= l1_error(&a, &q).unwrap() + 1e-12);
        }
    }

    // -- errors --

    #[test]
    fn zero_error_for_identical_tensors() {
        let p = tensor(&[2, 2], vec![0.25; 4]);
        assert_eq!(frobenius_error(&p, &p).unwrap(), 0.0);
        assert_eq!(l1_error(&p, &p).unwrap(), 0.0);
        assert_eq!(normalized_frobenius_error(&p, &p, 1, 100).unwrap(), 0.0);
        assert_eq!(normalized_l1_error(&p, &p, 1, 100).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_point_masses() {
        let a = tensor(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let b = tensor(&[2, 2], vec![0.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(l1_error(&a, &b).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frobenius_error(&a, &b).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn errors_match_loop_oracle() {
        let a = random_tensor(&[3, 2, 2], 53);
        let b = random_tensor(&[3, 2, 2], 54);
        let fro: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let l1: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert_abs_diff_eq!(frobenius_error(&a, &b).unwrap(), fro, epsilon = 1e-13);
        assert_abs_diff_eq!(l1_error(&a, &b).unwrap(), l1, epsilon = 1e-13);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = random_tensor(&[2, 2], 55);
        let b = random_tensor(&[2, 3], 56);
        assert!(frobenius_error(&a, &b).is_err());
        assert!(l1_error(&a, &b).is_err());
    }

    #[test]
    fn normalized_errors_compose_their_pieces() {
        let p = tensor(&[2, 2], vec![0.4, 0.1, 0.3, 0.2]);
        let q = tensor(&[2, 2], vec![0.35, 0.15, 0.3, 0.2]);
        let (rank, n) = (2usize, 400u64);
        let expected_f = frobenius_error(&q, &p).unwrap()
            * ((n as f64) / (rank as f64 * p.fiber_l1_max())).sqrt();
        assert_abs_diff_eq!(
            normalized_frobenius_error(&q, &p, rank, n).unwrap(),
            expected_f,
            epsilon = 1e-13
        );
        let expected_l1 =
            l1_error(&q, &p).unwrap() * ((n as f64) / (rank as f64 * 2.0)).sqrt();
        assert_abs_diff_eq!(
            normalized_l1_error(&q, &p, rank, n).unwrap(),
            expected_l1,
            epsilon = 1e-13
        );
    }

    #[test]
    fn defining_scale_gives_unit_normalized_error() {
        // an error of exactly sqrt(R * Fiber / n) normalizes to 1
        let p = tensor(&[2, 2], vec![0.4, 0.1, 0.3, 0.2]);
        let (rank, n) = (2usize, 1000u64);
        let target = ((rank as f64) * p.fiber_l1_max() / (n as f64)).sqrt();
        // perturb one cell by the target amount
        let mut q = p.clone();
        q.data_mut()[0] += target;
        assert_abs_diff_eq!(
            normalized_frobenius_error(&q, &p, rank, n).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_fiber_mass_is_a_domain_error() {
        let z = tensor(&[2, 2], vec![0.0; 4]);
        assert!(matches!(
            normalized_frobenius_error(&z, &z, 1, 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn normalized_errors_invariant_under_joint_permutation() {
        let p = random_tensor(&[3, 3], 57);
        let q = random_tensor(&[3, 3], 58);
        let perm = crate::tensor::Matrix::from_fn(3, 3, |i, j| {
            let target = [2usize, 0, 1];
            if target[i] == j {
                1.0
            } else {
                0.0
            }
        });
        let pp = p.mode_product(0, &perm).unwrap();
        let qp = q.mode_product(0, &perm).unwrap();
        assert_abs_diff_eq!(
            normalized_frobenius_error(&q, &p, 2, 99).unwrap(),
            normalized_frobenius_error(&qp, &pp, 2, 99).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normalized_l1_error(&q, &p, 2, 99).unwrap(),
            normalized_l1_error(&qp, &pp, 2, 99).unwrap(),
            epsilon = 1e-12
        );
    }
}
