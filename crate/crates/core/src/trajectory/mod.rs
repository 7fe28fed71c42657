//! Particle trajectories: the dataset type, analytic flow generation,
//! file formats, and the time-integrated distance between trajectories.

mod flow;
mod io;

pub use flow::{evaluate_flow_map, evaluate_velocity, integrate_flow, rk4_advect, Flow, FlowSpec, SeedGrid};
pub use io::{load_csv, load_ptrj, load_trajectories, write_ptrj, write_trajectories, PositionPrecision};

use crate::error::{Error, Result};

/// `n` particles sampled at `T` shared time steps in `d` ∈ {2, 3} dimensions.
///
/// Positions are stored particle-major, then time, then dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    n: usize,
    dim: usize,
    times: Vec<f64>,
    positions: Vec<f64>,
}

impl TrajectoryDataset {
    pub fn new(dim: usize, times: Vec<f64>, positions: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!("dimension must be 2 or 3, got {dim}")));
        }
        let steps = times.len();
        if steps < 2 {
            return Err(Error::Validation(format!("need at least 2 time steps, got {steps}")));
        }
        if let Some(k) = (1..steps).find(|&k| !(times[k] > times[k - 1])) {
            return Err(Error::Validation(format!(
                "times must be strictly increasing (t[{}]={} , t[{k}]={})",
                k - 1,
                times[k - 1],
                times[k]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("non-finite time value".into()));
        }
        let stride = steps * dim;
        if positions.len() % stride != 0 {
            return Err(Error::Validation(format!(
                "position buffer of length {} is not a multiple of T·d = {stride}",
                positions.len()
            )));
        }
        if let Some(bad) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite position for particle {} at step {}",
                bad / stride,
                (bad % stride) / dim
            )));
        }
        let n = positions.len() / stride;
        if n == 0 {
            return Err(Error::Validation("dataset has no particles".into()));
        }
        Ok(TrajectoryDataset { n, dim, times, positions })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// τ = t_T − t_1.
    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn position(&self, particle: usize, step: usize) -> &[f64] {
        let base = (particle * self.steps() + step) * self.dim;
        &self.positions[base..base + self.dim]
    }

    pub fn trajectory(&self, particle: usize) -> &[f64] {
        let len = self.steps() * self.dim;
        &self.positions[particle * len..(particle + 1) * len]
    }

    /// Positions of all particles at one step, point-major.
    pub fn snapshot(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.dim);
        for i in 0..self.n {
            out.extend_from_slice(self.position(i, step));
        }
        out
    }

    /// Axis-aligned bounds over all particles and times.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.positions.chunks_exact(self.dim) {
            for a in 0..self.dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        lo.iter().zip(&hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    /// Returns a copy with `f(step, position)` applied to every stored position.
    pub fn map_positions<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let mut positions = self.positions.clone();
        let steps = self.steps();
        for (c, p) in positions.chunks_exact_mut(self.dim).enumerate() {
            f(c % steps, p);
        }
        TrajectoryDataset::new(self.dim, self.times.clone(), positions)
    }

    /// Keeps only the listed time steps (must be increasing).
    pub fn select_steps(&self, steps: &[usize]) -> Result<Self> {
        let times: Vec<f64> = steps.iter().map(|&k| self.times[k]).collect();
        let mut positions = Vec::with_capacity(self.n * steps.len() * self.dim);
        for i in 0..self.n {
            for &k in steps {
                positions.extend_from_slice(self.position(i, k));
            }
        }
        TrajectoryDataset::new(self.dim, times, positions)
    }

    /// Reverses the time axis: step k of the result is step T−1−k of `self`,
    /// at time −t_{T−1−k}.
    pub fn time_reversed(&self) -> Self {
        let steps = self.steps();
        let times: Vec<f64> = self.times.iter().rev().map(|t| -t).collect();
        let mut positions = Vec::with_capacity(self.positions.len());
        for i in 0..self.n {
            for k in (0..steps).rev() {
                positions.extend_from_slice(self.position(i, k));
            }
        }
        TrajectoryDataset { n: self.n, dim: self.dim, times, positions }
    }
}

/// Trapezoid weights over `times`, normalized by the covered duration, so
/// that `Σ_k w_k f_k` is the time average of `f`.
pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let steps = times.len();
    let span = times[steps - 1] - times[0];
    let mut w = vec![0.0; steps];
    for k in 0..steps - 1 {
        let half = 0.5 * (times[k + 1] - times[k]) / span;
        w[k] += half;
        w[k + 1] += half;
    }
    w
}

/// Time-integrated Euclidean distance between the trajectories of particles
/// `i` and `j`, normalized by the dataset duration.
pub fn dynamic_distance(ds: &TrajectoryDataset, i: usize, j: usize) -> f64 {
    assert!(i < ds.n() && j < ds.n(), "particle index out of range");
    let times = ds.times();
    let dist = |k: usize| euclid(ds.position(i, k), ds.position(j, k));
    let mut total = 0.0;
    let mut prev = dist(0);
    for k in 0..times.len() - 1 {
        let next = dist(k + 1);
        total += 0.5 * (times[k + 1] - times[k]) * (prev + next);
        prev = next;
    }
    total / ds.duration()
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Packed trajectories and trapezoid weights for repeated dynamic-distance
/// evaluation, optionally restricted to every `stride`-th time step.
#[derive(Debug, Clone)]
pub struct TrajectoryMetric {
    dim: usize,
    steps: Vec<usize>,
    weights: Vec<f64>,
    packed: Vec<f64>,
}

impl TrajectoryMetric {
    /// Uses every time step; equals [`dynamic_distance`].
    pub fn full(ds: &TrajectoryDataset) -> Self {
        Self::subsampled(ds, 1)
    }

    /// Uses steps `0, stride, 2·stride, …` (each < T).
    pub fn subsampled(ds: &TrajectoryDataset, stride: usize) -> Self {
        let stride = stride.max(1);
        let mut steps: Vec<usize> = (0..ds.steps()).step_by(stride).collect();
        if steps.len() < 2 {
            // a single sample cannot define a time integral; fall back to the endpoints
            steps = vec![0, ds.steps() - 1];
        }
        let times: Vec<f64> = steps.iter().map(|&k| ds.times()[k]).collect();
        let weights = trapezoid_weights(&times);
        let packed = if stride == 1 {
            ds.positions().to_vec()
        } else {
            let mut p = Vec::with_capacity(ds.n() * steps.len() * ds.dim());
            for i in 0..ds.n() {
                for &k in &steps {
                    p.extend_from_slice(ds.position(i, k));
                }
            }
            p
        };
        TrajectoryMetric { dim: ds.dim(), steps, weights, packed }
    }

    /// Time steps (indices into the dataset) this metric evaluates.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.packed.len() / (self.steps.len() * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        let len = self.steps.len() * self.dim;
        &self.packed[i * len..(i + 1) * len]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        let d = self.dim;
        let mut total = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let mut s = 0.0;
            for c in k * d..(k + 1) * d {
                let diff = a[c] - b[c];
                s += diff * diff;
            }
            total += w * s.sqrt();
        }
        total
    }
}
