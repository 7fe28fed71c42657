//! Thin wrappers over faer's dense symmetric routines.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::matrix_free::eigen::{partial_self_adjoint_eigen, partial_self_adjoint_eigen_scratch, PartialEigenParams};
use faer::matrix_free::LinOp;
use faer::{Col, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Leading `count` eigenpairs of a symmetric matrix, eigenvalues descending.
/// Column `l` of the returned matrix is the eigenvector for `values[l]`.
pub fn top_eigenpairs(a: MatRef<'_, f64>, count: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let count = count.min(n);
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..count).map(|l| s[n - 1 - l]).collect();
    let vectors = Mat::from_fn(n, count, |i, l| u[(i, n - 1 - l)]);
    Ok((values, vectors))
}

pub(crate) fn faer_par() -> Par {
    #[cfg(feature = "parallel")]
    {
        Par::rayon(0)
    }
    #[cfg(not(feature = "parallel"))]
    {
        Par::Seq
    }
}

/// Leading `count` eigenpairs of a positive definite operator by restarted
/// Krylov–Schur iteration, eigenvalues descending. `None` when
/// fewer than `count` pairs converge.
pub fn top_eigenpairs_matrix_free(op: &dyn LinOp<f64>, count: usize) -> Option<(Vec<f64>, Mat<f64>)> {
    let n = op.nrows();
    let count = count.min(n);
    if count == 0 {
        return Some((Vec::new(), Mat::zeros(n, 0)));
    }
    let par = faer_par();
    let mut params = PartialEigenParams::default();
    params.max_dim = (2 * count).max(count + 64).min(n);
    let mut mem = MemBuffer::new(partial_self_adjoint_eigen_scratch(op, count, par, params));
    // deterministic start with weight on every direction
    let mut v0 = Col::from_fn(n, |i| 1.0 + 0.25 * ((i * 7919 % 101) as f64 / 101.0));
    let norm = v0.norm_l2();
    v0 /= norm;
    let mut vectors = Mat::zeros(n, count);
    let mut values = vec![0.0; count];
    let info = partial_self_adjoint_eigen(
        vectors.as_mut(),
        &mut values,
        op,
        v0.as_ref(),
        f64::EPSILON * 128.0,
        par,
        MemStack::new(&mut mem),
        params,
    );
    if info.n_converged_eigen < count {
        return None;
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    Some((order.iter().map(|&l| values[l]).collect(), Mat::from_fn(n, count, |i, l| vectors[(i, order[l])])))
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn eigenvalues_desc(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut v = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    v.reverse();
    Ok(v)
}

/// Largest eigenvalue of a small symmetric positive semi-definite matrix
/// stored row-major in `a` (`n × n`).
pub fn max_eigenvalue_psd(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => 0.0,
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], a[1], a[3]);
            let half_tr = 0.5 * (p + r);
            let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            half_tr + disc
        }
        _ => {
            let m = Mat::from_fn(n, n, |i, j| a[i * n + j]);
            m.self_adjoint_eigenvalues(Side::Lower)
                .ok()
                .and_then(|v| v.last().copied())
                .unwrap_or_else(|| power_iteration(a, n))
        }
    }
}

fn power_iteration(a: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
            .collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Orthonormal basis of the column span (thin QR).
pub fn orthonormalize(a: MatRef<'_, f64>) -> Mat<f64> {
    if a.ncols() == 0 {
        return Mat::zeros(a.nrows(), 0);
    }
    a.qr().compute_thin_Q()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_pairs_are_descending_and_satisfy_definition() {
        let n = 6;
        let a = Mat::from_fn(n, n, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let (vals, vecs) = top_eigenpairs(a.as_ref(), 3).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for l in 0..3 {
            for i in 0..n {
                let av: f64 = (0..n).map(|j| a[(i, j)] * vecs[(j, l)]).sum();
                assert!((av - vals[l] * vecs[(i, l)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_two_by_two() {
        let a = [2.0, 1.0, 1.0, 2.0];
        assert!((max_eigenvalue_psd(&a, 2) - 3.0).abs() < 1e-14);
        let b = [4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 9.0];
        assert!((max_eigenvalue_psd(&b, 3) - 9.0).abs() < 1e-12);
    }
}
