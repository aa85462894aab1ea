//! Small-matrix spectral helpers: a cyclic Jacobi symmetric eigensolver and
//! truncated SVD built on it. Sized for desk-scale problems (p up to a few
//! hundred), where robustness and determinism matter more than asymptotics.
//!
//! Sign convention: the first coordinate of each returned eigen/singular
//! vector whose magnitude exceeds 1e-12 is made nonnegative, so repeated runs
//! produce identical output.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-14;
const HESTENES_MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a symmetric matrix via cyclic Jacobi.
/// The input is symmetrized as (G + G^T)/2 first. Eigenvalues are returned in
/// descending order with matching eigenvector columns.
pub fn sym_eig(g: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let a = g.symmetrized()?;
    let n = a.rows();
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[i * n + j].abs());
            }
        }
        if off <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for i in 0..(n.saturating_sub(1)) {
            for j in (i + 1)..n {
                let apq = m[i * n + j];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[i * n + i];
                let aqq = m[j * n + j];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // rotate rows/columns i and j of m
                for k in 0..n {
                    let mik = m[i * n + k];
                    let mjk = m[j * n + k];
                    m[i * n + k] = c * mik - s * mjk;
                    m[j * n + k] = s * mik + c * mjk;
                }
                for k in 0..n {
                    let mki = m[k * n + i];
                    let mkj = m[k * n + j];
                    m[k * n + i] = c * mki - s * mkj;
                    m[k * n + j] = s * mki + c * mkj;
                }
                // accumulate rotation into v (columns i, j)
                for k in 0..n {
                    let vki = v[k * n + i];
                    let vkj = v[k * n + j];
                    v[k * n + i] = c * vki - s * vkj;
                    v[k * n + j] = s * vki + c * vkj;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge after {sweeps} sweeps on a {n}x{n} matrix"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|r| v[r * n + src]).collect();
        fix_sign(&mut col);
        for (r, &x) in col.iter().enumerate() {
            vectors.set(r, c, x);
        }
    }
    Ok((values, vectors))
}

/// Top-r eigenpairs (algebraically largest) of a symmetric matrix.
/// Eigenvector columns are orthonormal to machine precision.
pub fn top_r_eig_sym(g: &Matrix, r: usize) -> Result<(Vec<f64>, Matrix)> {
    let p = g.rows();
    if r == 0 || r > p {
        return Err(Error::invalid(format!(
            "requested rank {r} out of range for a {p}x{p} matrix"
        )));
    }
    let (values, vectors) = sym_eig(g)?;
    Ok((values[..r].to_vec(), vectors.truncate_cols(r)))
}

/// Spectrum of a symmetric matrix for rank-selection purposes: descending
/// eigenvalues with negatives clipped at zero.
pub fn clipped_spectrum(g: &Matrix) -> Result<Vec<f64>> {
    let (values, _) = sym_eig(g)?;
    Ok(values.into_iter().map(|v| v.max(0.0)).collect())
}

/// Top-r left singular vectors and singular values of a rectangular matrix.
///
/// Wide matrices (rows <= cols) go through the rows x rows Gram
/// eigendecomposition; tall ones through one-sided Hestenes Jacobi on the
/// columns, which keeps small singular values accurate.
pub fn top_r_svd(m: &Matrix, r: usize) -> Result<(Matrix, Vec<f64>)> {
    let (rows, cols) = (m.rows(), m.cols());
    if r == 0 || r > rows.min(cols) {
        return Err(Error::invalid(format!(
            "requested rank {r} out of range for a {rows}x{cols} matrix"
        )));
    }
    if rows <= cols {
        let (values, vectors) = sym_eig(&m.gram())?;
        let singular = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
        Ok((vectors.truncate_cols(r), singular))
    } else {
        let (u, sigma) = hestenes_svd(m)?;
        Ok((u.truncate_cols(r), sigma[..r].to_vec()))
    }
}

/// One-sided Jacobi SVD: orthogonalize the columns of `m` by plane rotations;
/// surviving column norms are the singular values.
#[allow(clippy::needless_range_loop)] // rotations touch columns i and j in lockstep
fn hestenes_svd(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let rows = m.rows();
    let cols = m.cols();
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| m.column(c)).collect();

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < HESTENES_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for i in 0..cols.saturating_sub(1) {
            for j in (i + 1)..cols {
                let (mut aii, mut ajj, mut aij) = (0.0, 0.0, 0.0);
                for k in 0..rows {
                    aii += a[i][k] * a[i][k];
                    ajj += a[j][k] * a[j][k];
                    aij += a[i][k] * a[j][k];
                }
                if aij.abs() <= 1e-15 * (aii * ajj).sqrt() || aij == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (ajj - aii) / (2.0 * aij);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..rows {
                    let x = a[i][k];
                    let y = a[j][k];
                    a[i][k] = c * x - s * y;
                    a[j][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "one-sided Jacobi SVD did not converge after {sweeps} sweeps on a {rows}x{cols} matrix"
        )));
    }

    let mut norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = Matrix::zeros(rows, cols);
    let mut sigma = vec![0.0; cols];
    let scale = norms.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for (c, &src) in order.iter().enumerate() {
        let mut col = if norms[src] > 1e-13 * scale {
            let inv = 1.0 / norms[src];
            a[src].iter().map(|v| v * inv).collect::<Vec<f64>>()
        } else {
            norms[src] = 0.0;
            complete_basis(&basis, rows)?
        };
        // one re-orthogonalization pass keeps the basis orthonormal to 1e-14
        // even when trailing singular values are tiny
        orthogonalize_against(&mut col, &basis);
        normalize(&mut col)?;
        fix_sign(&mut col);
        sigma[c] = norms[src];
        for (rix, &x) in col.iter().enumerate() {
            u.set(rix, c, x);
        }
        basis.push(col);
    }
    Ok((u, sigma))
}

/// Deterministic completion: first canonical basis vector with a significant
/// component outside the current span.
fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    for cand in 0..dim {
        let mut col = vec![0.0; dim];
        col[cand] = 1.0;
        orthogonalize_against(&mut col, basis);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for v in &mut col {
                *v /= norm;
            }
            return Ok(col);
        }
    }
    Err(Error::Numerical(
        "could not complete an orthonormal basis".into(),
    ))
}

fn orthogonalize_against(col: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = col.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in col.iter_mut().zip(b) {
            *x -= dot * y;
        }
    }
}

fn normalize(col: &mut [f64]) -> Result<()> {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numerical("cannot normalize a zero vector".into()));
    }
    for v in col.iter_mut() {
        *v /= norm;
    }
    Ok(())
}

fn fix_sign(col: &mut [f64]) {
    if let Some(&lead) = col.iter().find(|v| v.abs() > 1e-12) {
        if lead < 0.0 {
            for v in col.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Frobenius distance between the orthogonal projectors spanned by two
/// column-orthonormal matrices. Insensitive to basis rotations and signs.
pub fn projector_distance(u: &Matrix, v: &Matrix) -> f64 {
    assert_eq!(u.rows(), v.rows());
    let pu = u.matmul(&u.transpose()).unwrap();
    let pv = v.matmul(&v.transpose()).unwrap();
    let mut acc = 0.0;
    for (a, b) in pu.data().iter().zip(pv.data()) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

/// Max deviation of U^T U from the identity.
pub fn orthonormality_defect(u: &Matrix) -> f64 {
    let g = u.transpose().matmul(u).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}
