//! Per-landmark, per-step kernel bandwidths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::par;
use crate::spatial::KdTree;
use crate::trajectory::TrajectoryDataset;

/// Which points a landmark's bandwidth neighbours are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthPool {
    /// Other landmarks. The landmark spacing bounds the usable kernel width.
    #[default]
    Landmarks,
    /// All particles.
    Particles,
}

/// σ for every landmark (row) and time step (column).
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTable {
    sigma: Vec<f64>,
    steps: usize,
    pub n_neighbors: usize,
    pub alpha: f64,
}

impl BandwidthTable {
    /// Builds a table from explicit values, `sigma[landmark * steps + step]`.
    pub fn from_values(sigma: Vec<f64>, steps: usize, n_neighbors: usize, alpha: f64) -> Result<Self> {
        if steps == 0 || sigma.len() % steps != 0 {
            return Err(Error::Argument("bandwidth table shape mismatch".into()));
        }
        if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument("bandwidths must be positive and finite".into()));
        }
        Ok(BandwidthTable { sigma, steps, n_neighbors, alpha })
    }

    pub fn landmarks(&self) -> usize {
        self.sigma.len() / self.steps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma(&self, landmark: usize, step: usize) -> f64 {
        self.sigma[landmark * self.steps + step]
    }

    /// All steps for one landmark.
    pub fn row(&self, landmark: usize) -> &[f64] {
        &self.sigma[landmark * self.steps..(landmark + 1) * self.steps]
    }
}

pub fn compute_bandwidths(
    ds: &TrajectoryDataset,
    lm: &LandmarkSet,
    n_neighbors: usize,
    pool: BandwidthPool,
) -> Result<BandwidthTable> {
    lm.validate(ds.n())?;
    let pool_size = match pool {
        BandwidthPool::Landmarks => lm.len(),
        BandwidthPool::Particles => ds.n(),
    };
    if n_neighbors == 0 || n_neighbors >= pool_size {
        return Err(Error::Argument(format!(
            "bandwidths need 1 ≤ neighbors < pool size, got {n_neighbors} neighbors for {pool_size} points"
        )));
    }
    let steps = ds.steps();
    let dim = ds.dim();
    let n_l = lm.len();
    let floor = 1e-12 * ds.diagonal().max(f64::MIN_POSITIVE);

    // column-major (step, landmark) while computing, one tree per step
    let per_step: Vec<Vec<f64>> = par::map_range(steps, |k| {
        let (points, exclude_of): (Vec<f64>, Box<dyn Fn(usize) -> usize>) = match pool {
            BandwidthPool::Landmarks => {
                let mut pts = Vec::with_capacity(n_l * dim);
                for &i in &lm.indices {
                    pts.extend_from_slice(ds.position(i, k));
                }
                (pts, Box::new(|col| col))
            }
            BandwidthPool::Particles => (ds.snapshot(k), Box::new(|col| lm.indices[col])),
        };
        let tree = KdTree::new(points, dim);
        (0..n_l)
            .map(|col| {
                let q = ds.position(lm.indices[col], k);
                let nb = tree.knn_stable(q, n_neighbors, Some(exclude_of(col)));
                nb.iter().map(|x| x.dist()).sum::<f64>() / nb.len() as f64
            })
            .collect()
    });

    let mut sigma = vec![0.0; n_l * steps];
    let mut floored = 0usize;
    for (k, col) in per_step.iter().enumerate() {
        for (l, &s) in col.iter().enumerate() {
            sigma[l * steps + k] = if s < floor {
                floored += 1;
                floor
            } else {
                s
            };
        }
    }
    if floored > 0 {
        log::warn!("{floored} bandwidth(s) collapsed by coincident positions; floored at {floor:e}");
    }
    Ok(BandwidthTable { sigma, steps, n_neighbors, alpha: 1.0 })
}
