//! Landmark selection (random, FPS, temporally subsampled FPS) and the
//! subspace-error evaluation harness.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use faer::{Mat, MatRef};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{build_embedding, DiffusionParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::trajectory::{TrajectoryDataset, TrajectoryMetric};

/// Default temporal stride for T-FPS.
pub const DEFAULT_STRIDE: usize = 5;

/// Relative slack under which two max-min distances are treated as tied.
const FPS_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Fps,
    Tfps,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Fps => "fps",
            Strategy::Tfps => "tfps",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "fps" => Ok(Strategy::Fps),
            "tfps" | "t-fps" => Ok(Strategy::Tfps),
            other => Err(Error::Config(format!("unknown landmark strategy '{other}'"))),
        }
    }
}

/// Particle indices used as kernel columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub indices: Vec<usize>,
    pub strategy: Strategy,
    pub rng_seed: u64,
    pub stride: usize,
}

impl LandmarkSet {
    /// Every particle, in index order.
    pub fn all(n: usize) -> Self {
        LandmarkSet { indices: (0..n).collect(), strategy: Strategy::Fps, rng_seed: 0, stride: 1 }
    }

    /// Validates `indices` against a dataset of `n` particles.
    pub fn from_indices(indices: Vec<usize>, n: usize) -> Result<Self> {
        let set = LandmarkSet { indices, strategy: Strategy::Random, rng_seed: 0, stride: 1 };
        set.validate(n)?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() || self.indices.len() > n {
            return Err(Error::Argument(format!(
                "landmark count {} outside 1..={n}",
                self.indices.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &self.indices {
            if i >= n {
                return Err(Error::Argument(format!("landmark index {i} out of range (n={n})")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("duplicate landmark index {i}")));
            }
        }
        Ok(())
    }
}

pub fn select_landmarks(
    ds: &TrajectoryDataset,
    count: usize,
    strategy: Strategy,
    rng_seed: u64,
    stride: usize,
) -> Result<LandmarkSet> {
    let n = ds.n();
    if count == 0 || count > n {
        return Err(Error::Argument(format!("cannot select {count} landmarks from {n} particles")));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (indices, stride) = match strategy {
        Strategy::Random => (index::sample(&mut rng, n, count).into_vec(), 1),
        Strategy::Fps => {
            let first = rng.random_range(0..n);
            (farthest_point_sampling(&TrajectoryMetric::full(ds), count, first), 1)
        }
        Strategy::Tfps => {
            let first = rng.random_range(0..n);
            (farthest_point_sampling(&TrajectoryMetric::subsampled(ds, stride), count, first), stride)
        }
    };
    Ok(LandmarkSet { indices, strategy, rng_seed, stride })
}

/// Greedy max-min selection under `metric`, starting from `first`.
///
/// Keeps one running minimum distance per particle, so the total work is
/// `O(n · count)` metric evaluations. Ties (within a relative 1e-12) go to
/// the lowest particle index.
pub fn farthest_point_sampling(metric: &TrajectoryMetric, count: usize, first: usize) -> Vec<usize> {
    let n = metric.len();
    let count = count.min(n);
    let mut chosen = Vec::with_capacity(count);
    if count == 0 {
        return chosen;
    }
    let mut selected = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        chosen.push(current);
        selected[current] = true;
        if chosen.len() == count {
            return chosen;
        }
        let max = par::update_and_max(&mut min_dist, |j, v| {
            let d = metric.distance(current, j);
            if d < *v {
                *v = d;
            }
        });
        let cut = max * (1.0 - FPS_TIE_TOLERANCE);
        current = (0..n)
            .find(|&j| !selected[j] && min_dist[j] >= cut && max > 0.0)
            .or_else(|| (0..n).find(|&j| !selected[j]))
            .expect("fewer chosen than particles");
    }
}

/// ‖(I − U Uᵀ) U_l‖_F / ‖U‖_F for bases with orthonormal columns over the same rows.
pub fn subspace_error(landmark_basis: MatRef<'_, f64>, reference: MatRef<'_, f64>) -> Result<f64> {
    if landmark_basis.nrows() != reference.nrows() {
        return Err(Error::Argument(format!(
            "basis row counts differ: {} vs {}",
            landmark_basis.nrows(),
            reference.nrows()
        )));
    }
    let u_norm = reference.norm_l2();
    if u_norm == 0.0 {
        return Err(Error::Argument("reference basis is empty".into()));
    }
    let coeff = reference.transpose() * landmark_basis;
    let residual = landmark_basis - reference * &coeff;
    Ok(residual.norm_l2() / u_norm)
}

/// Orthonormal basis of the leading `k` non-trivial diffusion coordinates.
pub fn leading_basis(e: &crate::diffusion::DiffusionEmbedding, k: usize) -> Mat<f64> {
    let cols = k.min(e.modes().saturating_sub(1));
    let raw = Mat::from_fn(e.n(), cols, |i, l| e.eigenvector_entry(i, l + 1));
    linalg::orthonormalize(raw.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub strategies: Vec<Strategy>,
    pub counts: Vec<usize>,
    pub subspaces: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub stride: usize,
    pub params: DiffusionParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategies: vec![Strategy::Random, Strategy::Fps, Strategy::Tfps],
            counts: vec![250, 500, 1000],
            subspaces: vec![50, 150, 250],
            trials: 10,
            base_seed: 0,
            stride: DEFAULT_STRIDE,
            params: DiffusionParams::default(),
        }
    }
}

/// One CSV row of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub strategy: Strategy,
    pub n_l: usize,
    pub subspace: usize,
    pub trial: usize,
    pub error: f64,
    pub select_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub strategy: Strategy,
    pub n_l: usize,
    pub subspace: usize,
    pub median_error: f64,
    pub median_seconds: f64,
}

/// Compares landmark subspaces against the full-particle reference.
///
/// The reference embedding uses every particle as a landmark. A landmark
/// build that fails (e.g. orphaned particles) records an error of 1.0, the
/// value for a subspace with no overlap.
pub fn eval_landmarks(ds: &TrajectoryDataset, config: &EvalConfig) -> Result<Vec<EvalRecord>> {
    let max_sub = config.subspaces.iter().copied().max().unwrap_or(0);
    let mut params = config.params.clone();
    params.modes = Some(max_sub + 1);
    let reference = build_embedding(ds, &LandmarkSet::all(ds.n()), &params)?;
    let ref_bases: Vec<Mat<f64>> = config.subspaces.iter().map(|&k| leading_basis(&reference, k)).collect();

    let mut records = Vec::new();
    for trial in 0..config.trials {
        let seed = config.base_seed.wrapping_add(trial as u64);
        for &strategy in &config.strategies {
            for &count in &config.counts {
                let start = Instant::now();
                let lm = select_landmarks(ds, count.min(ds.n()), strategy, seed, config.stride)?;
                let select_seconds = start.elapsed().as_secs_f64();
                let built = build_embedding(ds, &lm, &params);
                for (s, &k) in config.subspaces.iter().enumerate() {
                    let error = match &built {
                        Ok(e) => subspace_error(leading_basis(e, k).as_ref(), ref_bases[s].as_ref())?,
                        Err(err) => {
                            log::warn!("{strategy} n_l={count} trial {trial}: {err}");
                            1.0
                        }
                    };
                    records.push(EvalRecord { strategy, n_l: count, subspace: k, trial, error, select_seconds });
                }
            }
        }
    }
    Ok(records)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty set");
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Median error and selection time per (strategy, n_l, subspace).
pub fn summarize(records: &[EvalRecord]) -> Vec<EvalSummary> {
    let mut keys: Vec<(Strategy, usize, usize)> = Vec::new();
    for r in records {
        let key = (r.strategy, r.n_l, r.subspace);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, n_l, subspace)| {
            let group: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.n_l == n_l && r.subspace == subspace)
                .collect();
            let mut errs: Vec<f64> = group.iter().map(|r| r.error).collect();
            let mut secs: Vec<f64> = group.iter().map(|r| r.select_seconds).collect();
            EvalSummary {
                strategy,
                n_l,
                subspace,
                median_error: median(&mut errs),
                median_seconds: median(&mut secs),
            }
        })
        .collect()
}

/// Writes records as `strategy,n_l,subspace,trial,error,select_seconds`.
pub fn write_eval_csv<W: std::io::Write>(records: &[EvalRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["strategy", "n_l", "subspace", "trial", "error", "select_seconds"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in records {
        out.write_record([
            r.strategy.to_string(),
            r.n_l.to_string(),
            r.subspace.to_string(),
            r.trial.to_string(),
            format!("{:.9e}", r.error),
            format!("{:.6}", r.select_seconds),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
