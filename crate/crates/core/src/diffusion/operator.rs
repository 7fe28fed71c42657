//! Low-rank Markov operator and its eigendecomposition.
//!
//! With row sums `r = K 1` and column sums `c = Kᵀ 1` the operator is
//! `W_l = D_r⁻¹ K D_c⁻¹ Kᵀ`. It is row-stochastic and reversible with
//! stationary distribution `π ∝ r`. Writing `B = D_r^{-1/2} K D_c^{-1/2}`,
//! the symmetric conjugate `D_r^{1/2} W_l D_r^{-1/2} = B Bᵀ` shares its
//! non-zero spectrum with the small `n_l × n_l` matrix `Bᵀ B`.

use std::collections::HashMap;

use faer::dyn_stack::{MemStack, StackReq};
use faer::matrix_free::LinOp;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut, MatRef, Par};

use super::embedding::DiffusionEmbedding;
use super::kernel::SparseKernel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

/// Second eigenvalue at or above `1 − SPECTRAL_GAP_TOLERANCE` means a
/// disconnected kernel graph.
pub const SPECTRAL_GAP_TOLERANCE: f64 = 1e-8;

/// Landmark count from which the reduced problem is solved iteratively
/// instead of densely (when at most a quarter of the spectrum is wanted).
pub const ITERATIVE_MIN_LANDMARKS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum Solver {
    Auto,
    Dense,
    Iterative,
}

/// Reduced eigenvalues at or below this are discarded before lifting.
const NULL_EIGENVALUE: f64 = 1e-12;

fn prepared(kernel: &SparseKernel, renormalize: bool) -> Result<SparseKernel> {
    if !kernel.empty_rows().is_empty() {
        return Err(Error::Connectivity { orphans: kernel.empty_rows() });
    }
    if kernel.col_sums().iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Argument("kernel has an empty landmark column".into()));
    }
    Ok(if renormalize { kernel.density_renormalized() } else { kernel.clone() })
}

/// Row sums of `W_l`, evaluated by explicit sparse products `D_r⁻¹ K D_c⁻¹ Kᵀ 1`.
pub fn implied_row_sums(kernel: &SparseKernel, renormalize: bool) -> Result<Vec<f64>> {
    let k = prepared(kernel, renormalize)?;
    let r = k.row_sums();
    let c = k.col_sums();
    // Kᵀ 1 is c; scale by D_c⁻¹ then apply K and D_r⁻¹
    let mut kt1 = vec![0.0; k.cols()];
    for j in 0..k.rows() {
        let (cols, vals) = k.row(j);
        for (&i, &v) in cols.iter().zip(vals) {
            kt1[i] += v;
        }
    }
    let y: Vec<f64> = kt1.iter().zip(&c).map(|(a, b)| a / b).collect();
    Ok((0..k.rows())
        .map(|j| {
            let (cols, vals) = k.row(j);
            cols.iter().zip(vals).map(|(&i, &v)| v * y[i]).sum::<f64>() / r[j]
        })
        .collect())
}

/// `B = D_r^{-1/2} K D_c^{-1/2}`.
fn gram_factor(k: &SparseKernel) -> SparseKernel {
    let r = k.row_sums();
    let c = k.col_sums();
    k.scaled(|j, i| 1.0 / (r[j] * c[i]).sqrt())
}

/// `Bᵀ B` as a dense row-major matrix.
fn dense_gram(b: &SparseKernel) -> Vec<f64> {
    let n_l = b.cols();
    let columns = b.columns();
    let mut m = vec![0.0; n_l * n_l];
    par::for_each_chunk_mut(&mut m, n_l, |a, row| {
        for &(j, bja) in &columns[a] {
            let (cols, vals) = b.row(j);
            for (&i, &bji) in cols.iter().zip(vals) {
                row[i] += bja * bji;
            }
        }
    });
    // exact symmetry for the eigensolver
    for a in 0..n_l {
        for i in a + 1..n_l {
            let v = 0.5 * (m[a * n_l + i] + m[i * n_l + a]);
            m[a * n_l + i] = v;
            m[i * n_l + a] = v;
        }
    }
    m
}

/// `Bᵀ B` in sparse column form, entries sorted by row.
fn sparse_gram(b: &SparseKernel) -> Vec<Vec<(usize, f64)>> {
    let n_l = b.cols();
    let columns = b.columns();
    par::map_range(n_l, |a| {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &(j, bja) in &columns[a] {
            let (cols, vals) = b.row(j);
            for (&i, &bji) in cols.iter().zip(vals) {
                *acc.entry(i).or_insert(0.0) += bja * bji;
            }
        }
        let mut col: Vec<(usize, f64)> = acc.into_iter().collect();
        col.sort_unstable_by_key(|e| e.0);
        col
    })
}

/// Shift above the top of the spectrum (which is 1) for shift-invert.
const SHIFT: f64 = 1.0 + 1e-3;

/// `x ↦ (σI − BᵀB)⁻¹ x` through a sparse Cholesky factor. Eigenvalues near 1
/// cluster tightly; the inversion spreads them apart so Krylov iteration
/// converges in few restarts.
#[derive(Debug)]
struct ShiftInvert {
    llt: Llt<usize, f64>,
    n: usize,
}

impl ShiftInvert {
    fn new(gram: &[Vec<(usize, f64)>]) -> Option<Self> {
        let n = gram.len();
        let mut triplets = Vec::with_capacity(gram.iter().map(Vec::len).sum::<usize>() + n);
        for (a, col) in gram.iter().enumerate() {
            triplets.push(Triplet::new(a, a, SHIFT));
            // lower triangle only
            triplets.extend(col.iter().filter(|e| e.0 >= a).map(|&(i, v)| Triplet::new(i, a, -v)));
        }
        let shifted = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
        let llt = shifted.sp_cholesky(faer::Side::Lower).ok()?;
        Some(ShiftInvert { llt, n })
    }
}

impl LinOp<f64> for ShiftInvert {
    fn apply_scratch(&self, _rhs_ncols: usize, _par: Par) -> StackReq {
        StackReq::EMPTY
    }

    fn nrows(&self) -> usize {
        self.n
    }

    fn ncols(&self) -> usize {
        self.n
    }

    fn apply(&self, mut out: MatMut<'_, f64>, rhs: MatRef<'_, f64>, _par: Par, _stack: &mut MemStack) {
        out.copy_from(rhs);
        self.llt.solve_in_place(out);
    }

    fn conj_apply(&self, out: MatMut<'_, f64>, rhs: MatRef<'_, f64>, par: Par, stack: &mut MemStack) {
        self.apply(out, rhs, par, stack)
    }
}

/// Leading eigenpairs of `BᵀB` by shift-invert; eigenvalues are recovered as
/// Rayleigh quotients.
fn iterative_eigenpairs(b: &SparseKernel, count: usize) -> Option<(Vec<f64>, Mat<f64>)> {
    let gram = sparse_gram(b);
    let op = ShiftInvert::new(&gram)?;
    let (_, v) = linalg::top_eigenpairs_matrix_free(&op, count)?;
    let mut mu: Vec<f64> = (0..count)
        .map(|l| {
            let x = v.col(l);
            gram.iter().enumerate().map(|(a, col)| x[a] * col.iter().map(|&(i, m)| m * x[i]).sum::<f64>()).sum()
        })
        .collect();
    mu.iter_mut().for_each(|m| *m = m.clamp(0.0, 1.0));
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&p, &q| mu[q].total_cmp(&mu[p]));
    Some((order.iter().map(|&l| mu[l]).collect(), Mat::from_fn(v.nrows(), count, |i, l| v[(i, order[l])])))
}

fn dense_eigenpairs(b: &SparseKernel, count: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let n_l = b.cols();
    let m = dense_gram(b);
    let reduced = Mat::from_fn(n_l, n_l, |a, i| m[a * n_l + i]);
    drop(m);
    linalg::top_eigenpairs(reduced.as_ref(), count)
}

fn reduced_eigenpairs(b: &SparseKernel, count: usize, solver: Solver) -> Result<(Vec<f64>, Mat<f64>)> {
    let n_l = b.cols();
    let iterative = match solver {
        Solver::Dense => false,
        Solver::Iterative => true,
        Solver::Auto => n_l >= ITERATIVE_MIN_LANDMARKS && 4 * count <= n_l,
    };
    if iterative {
        if let Some(pairs) = iterative_eigenpairs(b, count) {
            return Ok(pairs);
        }
        log::warn!("iterative eigensolver did not converge; falling back to the dense solver");
    }
    dense_eigenpairs(b, count)
}

/// Eigendecomposes `W_l` and returns the leading `modes` eigenpairs with
/// eigenvalues `λ = √μ` (μ an eigenvalue of `W_l`).
pub fn build_diffusion_operator(kernel: &SparseKernel, modes: usize, renormalize: bool) -> Result<DiffusionEmbedding> {
    build_with_solver(kernel, modes, renormalize, Solver::Auto)
}

pub(crate) fn build_with_solver(
    kernel: &SparseKernel,
    modes: usize,
    renormalize: bool,
    solver: Solver,
) -> Result<DiffusionEmbedding> {
    if modes == 0 {
        return Err(Error::Argument("need at least one eigenpair".into()));
    }
    let k = prepared(kernel, renormalize)?;
    let n = k.rows();
    let n_l = k.cols();
    let b = gram_factor(&k);
    let (mu, v) = reduced_eigenpairs(&b, modes.min(n_l), solver)?;
    if mu.len() > 1 && mu[1] >= 1.0 - SPECTRAL_GAP_TOLERANCE {
        return Err(Error::MultiComponent { second: mu[1] });
    }
    let keep = mu.iter().take_while(|&&x| x > NULL_EIGENVALUE).count().max(1);
    if keep < mu.len() {
        log::debug!("dropping {} numerically null eigenpairs", mu.len() - keep);
    }

    let r = k.row_sums();
    let total: f64 = r.iter().sum();
    let stationary: Vec<f64> = r.iter().map(|x| x / total).collect();
    let inv_sqrt_mu: Vec<f64> = mu[..keep].iter().map(|x| 1.0 / x.sqrt()).collect();
    let sqrt_total = total.sqrt();

    // ψ_l = √(Σr) · D_r^{-1/2} B v_l / √μ_l is π-orthonormal
    let mut vectors = vec![0.0; n * keep];
    par::for_each_chunk_mut(&mut vectors, keep, |j, row| {
        let (cols, vals) = b.row(j);
        let scale = sqrt_total / r[j].sqrt();
        for (l, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (&i, &x) in cols.iter().zip(vals) {
                acc += x * v[(i, l)];
            }
            *out = acc * inv_sqrt_mu[l] * scale;
        }
    });
    // deterministic signs: largest-magnitude entry positive
    for l in 0..keep {
        let mut best = 0usize;
        for j in 1..n {
            if vectors[j * keep + l].abs() > vectors[best * keep + l].abs() * (1.0 + 1e-9) {
                best = j;
            }
        }
        if vectors[best * keep + l] < 0.0 {
            for j in 0..n {
                vectors[j * keep + l] = -vectors[j * keep + l];
            }
        }
    }
    let eigenvalues: Vec<f64> = mu[..keep].iter().map(|x| x.max(0.0).sqrt().min(1.0)).collect();
    DiffusionEmbedding::new(eigenvalues, vectors, stationary)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small symmetric chain kernel; connected.
    fn chain(n: usize, eps: f64) -> SparseKernel {
        let mut dense = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let d = (i as f64 - j as f64).abs();
                dense[j * n + i] = (-d * d / eps).exp();
            }
        }
        SparseKernel::from_dense(n, n, &dense)
    }

    #[test]
    fn implied_rows_are_stochastic() {
        let k = chain(9, 2.0);
        for renorm in [false, true] {
            for s in implied_row_sums(&k, renorm).unwrap() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leading_mode_is_constant_and_spectrum_bounded() {
        let e = build_diffusion_operator(&chain(12, 3.0), 12, true).unwrap();
        assert!((e.eigenvalues()[0] - 1.0).abs() < 1e-10);
        for i in 0..e.n() {
            assert!((e.eigenvector_entry(i, 0) - 1.0).abs() < 1e-8);
        }
        assert!(e.eigenvalues().iter().all(|&l| (0.0..=1.0).contains(&l)));
        // π-orthonormality
        for a in 0..e.modes() {
            for b in 0..e.modes() {
                let dot: f64 = (0..e.n())
                    .map(|i| e.stationary()[i] * e.eigenvector_entry(i, a) * e.eigenvector_entry(i, b))
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8, "({a},{b}) {dot}");
            }
        }
    }

    #[test]
    fn iterative_solver_matches_dense() {
        // 2D cloud, Gaussian kernel against every third point
        let n = 600;
        let pts: Vec<(f64, f64)> = (0..n).map(|i| ((i % 30) as f64 * 0.1, (i / 30) as f64 * 0.1 + 0.01 * (i as f64).sin())).collect();
        let cols: Vec<usize> = (0..n).step_by(3).collect();
        let mut dense = vec![0.0; n * cols.len()];
        for j in 0..n {
            for (a, &i) in cols.iter().enumerate() {
                let d2 = (pts[j].0 - pts[i].0).powi(2) + (pts[j].1 - pts[i].1).powi(2);
                dense[j * cols.len() + a] = (-d2 / 0.08).exp();
            }
        }
        let k = SparseKernel::from_dense(n, cols.len(), &dense);
        let a = build_with_solver(&k, 20, true, Solver::Dense).unwrap();
        let b = build_with_solver(&k, 20, true, Solver::Iterative).unwrap();
        for l in 0..20 {
            assert!((a.eigenvalues()[l] - b.eigenvalues()[l]).abs() < 1e-10, "mode {l}");
        }
        // compare spans through distances, which ignore basis choice in clusters
        for (i, j) in [(0, 599), (17, 300), (250, 251)] {
            for s in [5.0, 50.0] {
                let (x, y) = (a.diffusion_distance(i, j, s), b.diffusion_distance(i, j, s));
                assert!((x - y).abs() <= 1e-7 * x.max(y), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut dense = vec![0.0; 16];
        for (j, i) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)] {
            dense[j * 4 + i] = 1.0;
        }
        let k = SparseKernel::from_dense(4, 4, &dense);
        assert!(matches!(build_diffusion_operator(&k, 4, false), Err(Error::MultiComponent { .. })));
    }
}
