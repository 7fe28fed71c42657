//! Covariance-based separation fields, the grid FTLE oracle, and kNN
//! log-density.
//!
//! Separation of a particle is `(1/τ) log λ₁(C)` where `C = Σ_j y_j y_jᵀ`
//! sums outer products of offsets `y_j` from the particle to its spatial
//! neighbours. `λ₁(C)` equals the top eigenvalue of the `k × k` Gram matrix
//! `G_ab = y_a · y_b`, which is what gets decomposed.

use serde::Serialize;

use crate::diffusion::DiffusionEmbedding;
use crate::error::{Error, Result};
use crate::field::{Direction, FieldKind, FieldMeta, ScalarField};
use crate::linalg;
use crate::par;
use crate::spatial::KdTree;
use crate::trajectory::{integrate_flow, FlowSpec, SeedGrid, TrajectoryDataset};

pub use crate::field::opacity_map;

/// Neighbourhood size used when none is given: 9 in 2-D, 27 in 3-D.
pub fn default_k(dim: usize) -> usize {
    if dim == 3 {
        27
    } else {
        9
    }
}

/// Default neighbour count for density estimates.
pub const DENSITY_K: usize = 27;

/// Smallest covariance eigenvalue fed to the logarithm.
const EIGEN_FLOOR: f64 = 1e-300;

/// Distance floor for coincident points in density estimates.
const DISTANCE_FLOOR: f64 = 1e-12;

impl Direction {
    /// Time step whose positions define neighbourhoods.
    pub fn anchor_step(self, steps: usize) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => steps - 1,
        }
    }
}

/// `k` nearest neighbours of every particle, `n × k` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Self-excluded kNN at the anchor time of `direction`.
pub fn spatial_knn(ds: &TrajectoryDataset, direction: Direction, k: usize) -> Result<Neighborhoods> {
    knn_at_step(ds, direction.anchor_step(ds.steps()), k)
}

pub fn knn_at_step(ds: &TrajectoryDataset, step: usize, k: usize) -> Result<Neighborhoods> {
    let n = ds.n();
    if k == 0 || k >= n {
        return Err(Error::Argument(format!("need 1 ≤ k < n, got k={k} for n={n}")));
    }
    if step >= ds.steps() {
        return Err(Error::Argument(format!("time step {step} out of range (T={})", ds.steps())));
    }
    let tree = KdTree::new(ds.snapshot(step), ds.dim());
    let lists = par::map_range(n, |i| {
        tree.knn_stable(ds.position(i, step), k, Some(i))
            .into_iter()
            .map(|nb| nb.index)
            .collect::<Vec<_>>()
    });
    Ok(Neighborhoods { k, indices: lists.concat() })
}

/// Largest eigenvalue of `Σ_a y_a y_aᵀ` for offsets `y_a = f(a)`.
fn gram_top_eigenvalue(k: usize, offsets: &[Vec<f64>]) -> f64 {
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let v: f64 = offsets[a].iter().zip(&offsets[b]).map(|(x, y)| x * y).sum();
            g[a * k + b] = v;
            g[b * k + a] = v;
        }
    }
    linalg::max_eigenvalue_psd(&g, k)
}

fn separation_value(lambda: f64, tau: f64) -> f64 {
    lambda.max(EIGEN_FLOOR).ln() / tau
}

fn check_neighbors(ds: &TrajectoryDataset, k: usize) -> Result<()> {
    if k < ds.dim() {
        return Err(Error::DegenerateNeighborhood { particle: 0, found: k, needed: ds.dim() });
    }
    Ok(())
}

/// γ from stacked positions over every step except the anchor.
pub fn particle_separation(ds: &TrajectoryDataset, direction: Direction, k: usize) -> Result<ScalarField> {
    check_neighbors(ds, k)?;
    let nb = spatial_knn(ds, direction, k)?;
    let steps = ds.steps();
    let dim = ds.dim();
    let anchor = direction.anchor_step(steps);
    let tau = ds.duration();
    let values = par::map_range(ds.n(), |i| {
        let pi = ds.trajectory(i);
        let offsets: Vec<Vec<f64>> = nb
            .of(i)
            .iter()
            .map(|&j| {
                let pj = ds.trajectory(j);
                let mut y = Vec::with_capacity((steps - 1) * dim);
                for t in (0..steps).filter(|&t| t != anchor) {
                    for c in 0..dim {
                        y.push(pj[t * dim + c] - pi[t * dim + c]);
                    }
                }
                y
            })
            .collect();
        separation_value(gram_top_eigenvalue(k, &offsets), tau)
    });
    let mut meta = FieldMeta::new(FieldKind::ParticleSeparation);
    meta.direction = Some(direction);
    meta.k = Some(k);
    Ok(ScalarField::new(values, meta))
}

/// γ_s: offsets taken in the scale-`s` diffusion embedding.
pub fn diffusion_separation(
    ds: &TrajectoryDataset,
    e: &DiffusionEmbedding,
    s: f64,
    direction: Direction,
    k: usize,
) -> Result<ScalarField> {
    if e.n() != ds.n() {
        return Err(Error::Argument(format!("embedding has {} particles, dataset {}", e.n(), ds.n())));
    }
    check_neighbors(ds, k)?;
    let nb = spatial_knn(ds, direction, k)?;
    let scaled = e.at_scale(s);
    let tau = ds.duration();
    let values = par::map_range(ds.n(), |i| {
        let pi = scaled.point(i);
        let offsets: Vec<Vec<f64>> = nb
            .of(i)
            .iter()
            .map(|&j| scaled.point(j).iter().zip(pi).map(|(a, b)| a - b).collect())
            .collect();
        separation_value(gram_top_eigenvalue(k, &offsets), tau)
    });
    let mut meta = FieldMeta::new(FieldKind::DiffusionSeparation);
    meta.direction = Some(direction);
    meta.scale = Some(s);
    meta.k = Some(k);
    Ok(ScalarField::new(values, meta))
}

/// Values on a rectangular lattice, x varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridField {
    pub grid: SeedGrid,
    pub values: Vec<f64>,
}

impl GridField {
    fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.grid.dim());
        let mut acc = 1;
        for &r in &self.grid.resolution {
            s.push(acc);
            acc *= r;
        }
        s
    }

    /// Lattice coordinates of flat index `idx`.
    pub fn cell(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        self.grid
            .resolution
            .iter()
            .map(|&r| {
                let c = rem % r;
                rem /= r;
                c
            })
            .collect()
    }

    /// Flat index of the lattice node nearest to `x` (clamped to the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let strides = self.strides();
        (0..self.grid.dim())
            .map(|a| {
                let h = self.grid.spacing(a);
                let r = self.grid.resolution[a];
                let c = if h > 0.0 {
                    ((x[a] - self.grid.domain[a].0) / h).round().clamp(0.0, (r - 1) as f64) as usize
                } else {
                    0
                };
                c * strides[a]
            })
            .sum()
    }

    /// Multilinear interpolation at `x` (clamped to the grid box).
    pub fn sample(&self, x: &[f64]) -> f64 {
        let d = self.grid.dim();
        let strides = self.strides();
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        let mut step = vec![0usize; d];
        for a in 0..d {
            let h = self.grid.spacing(a);
            let r = self.grid.resolution[a];
            if h == 0.0 || r == 1 {
                continue;
            }
            let u = ((x[a] - self.grid.domain[a].0) / h).clamp(0.0, (r - 1) as f64);
            let c = (u.floor() as usize).min(r - 2);
            base += c * strides[a];
            frac[a] = u - c as f64;
            step[a] = strides[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += step[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

/// FTLE `(1/(2τ)) log λ_max(JᵀJ)` from a sampled map.
///
/// `mapped` holds, for every lattice node, the image of that node
/// (`width` values, possibly several stacked positions). `J` is estimated
/// with central differences between neighbouring nodes, one-sided on the
/// boundary.
pub fn ftle_from_samples(grid: &SeedGrid, mapped: &[f64], width: usize, tau: f64) -> Result<GridField> {
    let n = grid.len();
    let d = grid.dim();
    if mapped.len() != n * width {
        return Err(Error::Argument("sampled map does not match the grid".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument("duration must be positive".into()));
    }
    if grid.resolution.iter().any(|&r| r < 2) {
        return Err(Error::Argument("finite differences need at least 2 nodes per axis".into()));
    }
    let shell = GridField { grid: grid.clone(), values: Vec::new() };
    let strides = shell.strides();
    let values = par::map_range(n, |idx| {
        let cell = shell.cell(idx);
        // J is width × d, column a = ∂φ/∂x_a
        let mut jac = vec![0.0; width * d];
        for a in 0..d {
            let r = grid.resolution[a];
            let (lo, hi) = match cell[a] {
                0 => (idx, idx + strides[a]),
                c if c == r - 1 => (idx - strides[a], idx),
                _ => (idx - strides[a], idx + strides[a]),
            };
            let span = grid.spacing(a) * ((hi - lo) / strides[a]) as f64;
            for row in 0..width {
                jac[row * d + a] = (mapped[hi * width + row] - mapped[lo * width + row]) / span;
            }
        }
        let mut jtj = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                jtj[a * d + b] = (0..width).map(|row| jac[row * d + a] * jac[row * d + b]).sum();
            }
        }
        linalg::max_eigenvalue_psd(&jtj, d).max(EIGEN_FLOOR).ln() / (2.0 * tau)
    });
    Ok(GridField { grid: grid.clone(), values })
}

/// FTLE of an analytic flow on `spec.grid` over `[t1, t1 + τ]`.
///
/// With `time_averaged` the map stacks the positions at every saved step
/// after `t1` (time-major), giving the time-averaged variant.
pub fn grid_ftle(spec: &FlowSpec, time_averaged: bool) -> Result<GridField> {
    let mut spec = spec.clone();
    spec.seed_time = None;
    if !time_averaged {
        spec.steps = 2;
        spec.substeps = spec.substeps.max(64);
    }
    let ds = integrate_flow(&spec)?;
    let d = ds.dim();
    let steps = ds.steps();
    let width = (steps - 1) * d;
    let mut mapped = Vec::with_capacity(ds.n() * width);
    for i in 0..ds.n() {
        mapped.extend_from_slice(&ds.trajectory(i)[d..]);
    }
    ftle_from_samples(&spec.grid, &mapped, width, spec.tau)
}

/// `log Σ_j 1/‖p_i − p_j‖` over the `k` nearest neighbours at `step`.
pub fn knn_log_density(ds: &TrajectoryDataset, step: usize, k: usize) -> Result<ScalarField> {
    let n = ds.n();
    if k == 0 || k >= n {
        return Err(Error::Argument(format!("need 1 ≤ k < n, got k={k} for n={n}")));
    }
    if step >= ds.steps() {
        return Err(Error::Argument(format!("time step {step} out of range (T={})", ds.steps())));
    }
    let tree = KdTree::new(ds.snapshot(step), ds.dim());
    let values = par::map_range(n, |i| {
        tree.knn(ds.position(i, step), k, Some(i))
            .iter()
            .map(|nb| 1.0 / nb.dist().max(DISTANCE_FLOOR))
            .sum::<f64>()
            .ln()
    });
    let mut meta = FieldMeta::new(FieldKind::Density);
    meta.k = Some(k);
    meta.time_step = Some(step);
    Ok(ScalarField::new(values, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_grid(side: usize, steps: usize) -> TrajectoryDataset {
        let times: Vec<f64> = (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect();
        let mut pos = Vec::new();
        for y in 0..side {
            for x in 0..side {
                for _ in 0..steps {
                    pos.extend_from_slice(&[x as f64, y as f64]);
                }
            }
        }
        TrajectoryDataset::new(2, times, pos).unwrap()
    }

    #[test]
    fn lattice_knn_is_the_surrounding_ring() {
        let ds = static_grid(5, 2);
        let nb = spatial_knn(&ds, Direction::Forward, 8).unwrap();
        let mut ring = nb.of(12).to_vec();
        ring.sort_unstable();
        assert_eq!(ring, vec![6, 7, 8, 11, 13, 16, 17, 18]);
    }

    #[test]
    fn static_lattice_separation_is_log_six() {
        let ds = static_grid(5, 2);
        let f = particle_separation(&ds, Direction::Forward, 8).unwrap();
        assert!((f.values[12] - 6f64.ln()).abs() < 1e-12);
        let b = particle_separation(&ds, Direction::Backward, 8).unwrap();
        assert!((b.values[12] - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_neighbors_is_degenerate() {
        let ds = static_grid(4, 2);
        assert!(matches!(
            particle_separation(&ds, Direction::Forward, 1),
            Err(Error::DegenerateNeighborhood { needed: 2, .. })
        ));
    }

    #[test]
    fn linear_map_ftle_is_log_two() {
        let grid = SeedGrid::new(vec![6, 5], vec![(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let pts = grid.points();
        let doubled: Vec<f64> = pts.iter().map(|x| 2.0 * x).collect();
        let f = ftle_from_samples(&grid, &doubled, 2, 1.0).unwrap();
        assert!(f.values.iter().all(|v| (v - 2f64.ln()).abs() < 1e-12));
        let id = ftle_from_samples(&grid, &pts, 2, 1.0).unwrap();
        assert!(id.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grid_sampling_interpolates_linear_data() {
        let grid = SeedGrid::new(vec![4, 3], vec![(0.0, 3.0), (0.0, 1.0)]).unwrap();
        let pts = grid.points();
        let values: Vec<f64> = pts.chunks(2).map(|p| 2.0 * p[0] - p[1]).collect();
        let g = GridField { grid, values };
        assert!((g.sample(&[1.25, 0.3]) - (2.5 - 0.3)).abs() < 1e-12);
        assert_eq!(g.nearest_node(&[2.9, 0.6]), 3 + 4);
        assert_eq!(g.cell(7), vec![3, 1]);
    }

    #[test]
    fn equidistant_neighbors_give_log_k_over_r() {
        // centre plus 4 points at radius 2
        let pts = [[0.0, 0.0], [2.0, 0.0], [-2.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
        let mut pos = Vec::new();
        for p in pts {
            pos.extend_from_slice(&p);
            pos.extend_from_slice(&p);
        }
        let ds = TrajectoryDataset::new(2, vec![0.0, 1.0], pos).unwrap();
        let f = knn_log_density(&ds, 0, 4).unwrap();
        assert!((f.values[0] - (4.0f64 / 2.0).ln()).abs() < 1e-12);
        assert!(knn_log_density(&ds, 0, 5).is_err());
    }
}
