//! Sparse particle × landmark kernel.

use serde::{Deserialize, Serialize};

use super::bandwidth::BandwidthTable;
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::par;
use crate::spatial::KdTree;
use crate::trajectory::TrajectoryDataset;

/// Divisor applied to the per-step sum of scaled squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelTimeScale {
    /// `T − 1`: the window length counted in sampling intervals.
    #[default]
    Steps,
    /// `t_T − t_1` in simulation time units.
    Duration,
}

impl KernelTimeScale {
    pub fn divisor(self, ds: &TrajectoryDataset) -> f64 {
        match self {
            KernelTimeScale::Steps => (ds.steps() - 1) as f64,
            KernelTimeScale::Duration => ds.duration(),
        }
    }
}

/// Row-compressed `n × n_l` kernel; rows are particles, columns landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    n: usize,
    n_l: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    pub threshold: f64,
}

impl SparseKernel {
    /// Builds from per-column `(row, value)` lists; rows are sorted within
    /// each output row by column.
    pub fn from_columns(n: usize, columns: Vec<Vec<(usize, f64)>>, threshold: f64) -> Self {
        let n_l = columns.len();
        let mut counts = vec![0usize; n + 1];
        for col in &columns {
            for &(j, _) in col {
                counts[j + 1] += 1;
            }
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let nnz = row_ptr[n];
        let mut cols = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut fill = counts;
        for (i, col) in columns.into_iter().enumerate() {
            for (j, v) in col {
                cols[fill[j]] = i;
                values[fill[j]] = v;
                fill[j] += 1;
            }
        }
        SparseKernel { n, n_l, row_ptr, cols, values, threshold }
    }

    /// Dense `n × n_l` row-major input; zeros are skipped.
    pub fn from_dense(n: usize, n_l: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n_l);
        let columns = (0..n_l)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let v = dense[j * n_l + i];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_columns(n, columns, 0.0)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.n_l
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values stored in row `j`.
    pub fn row(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[j]..self.row_ptr[j + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        let (c, v) = self.row(j);
        c.binary_search(&i).map(|p| v[p]).unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.row(j).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_l];
        for (&i, &v) in self.cols.iter().zip(&self.values) {
            c[i] += v;
        }
        c
    }

    /// Rows with no stored entry.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.row_ptr[j] == self.row_ptr[j + 1]).collect()
    }

    /// Per-column `(row, value)` lists.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n_l];
        for j in 0..self.n {
            let (c, v) = self.row(j);
            for (&i, &x) in c.iter().zip(v) {
                out[i].push((j, x));
            }
        }
        out
    }

    /// Scales every entry `(j, i)` by `f(j, i)`, keeping the pattern.
    pub fn scaled(&self, f: impl Fn(usize, usize) -> f64) -> SparseKernel {
        let mut out = self.clone();
        for j in 0..self.n {
            for p in self.row_ptr[j]..self.row_ptr[j + 1] {
                out.values[p] *= f(j, self.cols[p]);
            }
        }
        out
    }

    /// `K[j][i] / (r_j c_i)` with the current row and column sums.
    pub fn density_renormalized(&self) -> SparseKernel {
        let r = self.row_sums();
        let c = self.col_sums();
        self.scaled(|j, i| 1.0 / (r[j] * c[i]))
    }
}

pub fn build_landmark_kernel(
    ds: &TrajectoryDataset,
    lm: &LandmarkSet,
    bw: &BandwidthTable,
    threshold: f64,
    time_scale: KernelTimeScale,
) -> Result<SparseKernel> {
    lm.validate(ds.n())?;
    if bw.landmarks() != lm.len() || bw.steps() != ds.steps() {
        return Err(Error::Argument("bandwidth table does not match landmarks and dataset".into()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Argument(format!("kernel threshold must lie in [0, 1), got {threshold}")));
    }
    if !(bw.alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must be positive, got {}", bw.alpha)));
    }
    let n = ds.n();
    let steps = ds.steps();
    let dim = ds.dim();
    let norm = time_scale.divisor(ds);
    // an entry is kept iff its exponent stays ≤ cutoff
    let cutoff = if threshold > 0.0 { -threshold.ln() } else { f64::INFINITY };
    let tree = (threshold > 0.0).then(|| KdTree::new(ds.snapshot(0), dim));

    let columns: Vec<Vec<(usize, f64)>> = par::map_range(lm.len(), |col| {
        let li = lm.indices[col];
        let weights: Vec<f64> = bw
            .row(col)
            .iter()
            .map(|s| {
                let w = bw.alpha * s;
                1.0 / (w * w * norm)
            })
            .collect();
        let anchor = ds.trajectory(li);
        let candidates: Vec<usize> = match &tree {
            // first-step term alone must not exceed the cutoff
            Some(t) => {
                let radius = (cutoff / weights[0]).sqrt();
                let mut c: Vec<usize> = t.within_radius(&anchor[..dim], radius).iter().map(|nb| nb.index).collect();
                c.sort_unstable();
                c
            }
            None => (0..n).collect(),
        };
        let mut out = Vec::with_capacity(candidates.len());
        for j in candidates {
            let other = ds.trajectory(j);
            let mut e = 0.0;
            for k in 0..steps {
                let a = &anchor[k * dim..(k + 1) * dim];
                let b = &other[k * dim..(k + 1) * dim];
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                e += d2 * weights[k];
                if e > cutoff {
                    break;
                }
            }
            if e > cutoff {
                continue;
            }
            let v = (-e).exp();
            if v >= threshold {
                out.push((j, v));
            }
        }
        out
    });

    let kernel = SparseKernel::from_columns(n, columns, threshold);
    let orphans = kernel.empty_rows();
    if !orphans.is_empty() {
        return Err(Error::Connectivity { orphans });
    }
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_particles(dx: f64) -> TrajectoryDataset {
        TrajectoryDataset::new(2, vec![0.0, 1.0], vec![0.0, 0.0, 0.0, 0.0, dx, 0.0, dx, 0.0]).unwrap()
    }

    #[test]
    fn constant_offset_substitutes_directly() {
        let d = 0.7;
        let sigma = 0.9;
        let alpha = 1.2;
        let ds = two_particles(d);
        let lm = LandmarkSet::from_indices(vec![0], 2).unwrap();
        let bw = BandwidthTable::from_values(vec![sigma, sigma], 2, 1, alpha).unwrap();
        let k = build_landmark_kernel(&ds, &lm, &bw, 0.0, KernelTimeScale::Duration).unwrap();
        let expected = (-2.0 * d * d / (alpha * sigma * alpha * sigma)).exp();
        assert!((k.get(1, 0) - expected).abs() < 1e-15);
        assert_eq!(k.get(0, 0), 1.0);
        // T = 2 and τ = 1 make both time scales coincide
        let k2 = build_landmark_kernel(&ds, &lm, &bw, 0.0, KernelTimeScale::Steps).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn entries_below_threshold_are_dropped_and_orphans_reported() {
        // exponent 2·d²/σ² chosen so the value is ≈ 1e-7
        let sigma = 1.0;
        let d = (7.0 * 10f64.ln() / 2.0).sqrt();
        let ds = two_particles(d);
        let lm = LandmarkSet::from_indices(vec![0], 2).unwrap();
        let bw = BandwidthTable::from_values(vec![sigma, sigma], 2, 1, 1.0).unwrap();
        let dense = build_landmark_kernel(&ds, &lm, &bw, 0.0, KernelTimeScale::Steps).unwrap();
        assert!((dense.get(1, 0) - 1e-7).abs() < 1e-18);
        match build_landmark_kernel(&ds, &lm, &bw, 1e-6, KernelTimeScale::Steps) {
            Err(Error::Connectivity { orphans }) => assert_eq!(orphans, vec![1]),
            other => panic!("expected connectivity error, got {other:?}"),
        }
    }

    #[test]
    fn csr_accessors_agree_with_dense() {
        let dense = vec![1.0, 0.0, 0.5, 0.25, 0.0, 1.0];
        let k = SparseKernel::from_dense(3, 2, &dense);
        assert_eq!(k.nnz(), 4);
        assert_eq!(k.row_sums(), vec![1.0, 0.75, 1.0]);
        assert_eq!(k.col_sums(), vec![1.5, 1.25]);
        assert_eq!(k.get(1, 1), 0.25);
        assert_eq!(k.get(0, 1), 0.0);
        assert_eq!(k.columns()[1], vec![(1, 0.25), (2, 1.0)]);
    }
}
