//! Spectral embedding and diffusion-distance queries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldMeta, ScalarField};
use crate::par;

/// Eigenvalues and π-orthonormal right eigenvectors of the diffusion
/// operator. Mode 0 is the trivial constant eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionEmbedding {
    n: usize,
    m: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<f64>,
    stationary: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedDistance {
    pub value: f64,
    /// Both embeddings vanished; `value` is 0 by convention.
    pub degenerate: bool,
}

impl DiffusionEmbedding {
    /// `eigenvectors` is `n × m` row-major.
    pub fn new(eigenvalues: Vec<f64>, eigenvectors: Vec<f64>, stationary: Vec<f64>) -> Result<Self> {
        let m = eigenvalues.len();
        let n = stationary.len();
        if m == 0 || n == 0 {
            return Err(Error::Validation("embedding needs at least one mode and one particle".into()));
        }
        if eigenvectors.len() != n * m {
            return Err(Error::Validation(format!(
                "eigenvector buffer has {} entries, expected {n}·{m}",
                eigenvectors.len()
            )));
        }
        if eigenvalues.iter().any(|l| !(-1e-10..=1.0 + 1e-10).contains(l)) {
            return Err(Error::Validation("eigenvalues must lie in [0, 1]".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Validation("eigenvalues must be non-increasing".into()));
        }
        if eigenvectors.iter().chain(&stationary).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite embedding entry".into()));
        }
        Ok(DiffusionEmbedding { n, m, eigenvalues, eigenvectors, stationary })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modes(&self) -> usize {
        self.m
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Row-major `n × m` eigenvector buffer.
    pub fn eigenvectors(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn eigenvector_entry(&self, i: usize, l: usize) -> f64 {
        self.eigenvectors[i * self.m + l]
    }

    /// `λ_l^s` for the non-trivial modes. `s = 0` gives ones.
    pub fn scale_factors(&self, s: f64) -> Vec<f64> {
        self.eigenvalues[1..].iter().map(|&l| l.powf(s)).collect()
    }

    /// Φ_s(i): component `l − 1` is `λ_l^s u^l_i` for `l ≥ 1`.
    pub fn embedding(&self, i: usize, s: f64) -> Vec<f64> {
        let row = &self.eigenvectors[i * self.m + 1..(i + 1) * self.m];
        self.scale_factors(s).iter().zip(row).map(|(w, u)| w * u).collect()
    }

    pub fn diffusion_distance(&self, i: usize, j: usize, s: f64) -> f64 {
        let w = self.scale_factors(s);
        self.distance_with(&w, i, j)
    }

    fn distance_with(&self, w: &[f64], i: usize, j: usize) -> f64 {
        let a = &self.eigenvectors[i * self.m + 1..(i + 1) * self.m];
        let b = &self.eigenvectors[j * self.m + 1..(j + 1) * self.m];
        let mut s2 = 0.0;
        for ((w, x), y) in w.iter().zip(a).zip(b) {
            let d = w * (x - y);
            s2 += d * d;
        }
        s2.sqrt()
    }

    /// `d_s² / (‖Φ_s(i)‖² + ‖Φ_s(j)‖²)`, in [0, 2].
    pub fn normalized_diffusion_distance(&self, i: usize, j: usize, s: f64) -> NormalizedDistance {
        let a = self.embedding(i, s);
        let b = self.embedding(j, s);
        let na: f64 = a.iter().map(|x| x * x).sum();
        let nb: f64 = b.iter().map(|x| x * x).sum();
        let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let denom = na + nb;
        if denom > 0.0 && denom.is_finite() {
            NormalizedDistance { value: (d2 / denom).min(2.0), degenerate: false }
        } else {
            NormalizedDistance { value: 0.0, degenerate: true }
        }
    }

    /// Materializes Φ_s for every particle.
    pub fn at_scale(&self, s: f64) -> ScaledEmbedding {
        let w = self.scale_factors(s);
        let width = w.len();
        let mut coords = vec![0.0; self.n * width];
        if width > 0 {
            par::for_each_chunk_mut(&mut coords, width, |i, row| {
                let u = &self.eigenvectors[i * self.m + 1..(i + 1) * self.m];
                for ((r, wl), ul) in row.iter_mut().zip(&w).zip(u) {
                    *r = wl * ul;
                }
            });
        }
        ScaledEmbedding { n: self.n, width, scale: s, coords }
    }

    /// Per particle, the smallest diffusion distance to any source.
    pub fn distance_field(&self, sources: &[usize], s: f64) -> Result<ScalarField> {
        if sources.is_empty() {
            return Err(Error::Argument("distance field needs at least one source".into()));
        }
        if let Some(&bad) = sources.iter().find(|&&i| i >= self.n) {
            return Err(Error::Argument(format!("source {bad} out of range (n={})", self.n)));
        }
        let scaled = self.at_scale(s);
        let values = par::map_range(self.n, |j| {
            sources.iter().map(|&src| scaled.distance(src, j)).fold(f64::INFINITY, f64::min)
        });
        let mut meta = FieldMeta::new(FieldKind::Distance);
        meta.scale = Some(s);
        meta.sources = Some(sources.to_vec());
        Ok(ScalarField::new(values, meta))
    }
}

/// Φ_s for all particles, `n × width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledEmbedding {
    n: usize,
    width: usize,
    scale: f64,
    coords: Vec<f64>,
}

impl ScaledEmbedding {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Keeps the first `dims` coordinates.
    pub fn truncated(self, dims: usize) -> ScaledEmbedding {
        if dims >= self.width {
            return self;
        }
        let coords = self.coords.chunks_exact(self.width.max(1)).flat_map(|r| r[..dims].iter().copied()).collect();
        ScaledEmbedding { n: self.n, width: dims, scale: self.scale, coords }
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.width..(i + 1) * self.width]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn distance2(&self, i: usize, j: usize) -> f64 {
        self.point(i).iter().zip(self.point(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance2(i, j).sqrt()
    }

    /// Distances from `i` to every particle.
    pub fn distances_from(&self, i: usize) -> Vec<f64> {
        par::map_range(self.n, |j| self.distance(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DiffusionEmbedding {
        // three particles, three modes
        DiffusionEmbedding::new(
            vec![1.0, 0.8, 0.5],
            vec![1.0, 1.0, 0.5, 1.0, -0.5, 1.0, 1.0, 0.0, -2.0],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn zero_scale_returns_raw_entries() {
        let e = toy();
        assert_eq!(e.embedding(1, 0.0), vec![-0.5, 1.0]);
    }

    #[test]
    fn distance_matches_embedding_norm() {
        let e = toy();
        for s in [0.0, 1.0, 2.5, 10.0] {
            let a = e.embedding(0, s);
            let b = e.embedding(2, s);
            let d = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!((e.diffusion_distance(0, 2, s) - d).abs() < 1e-12);
            assert!((e.at_scale(s).distance(0, 2) - d).abs() < 1e-12);
        }
        assert_eq!(e.diffusion_distance(1, 1, 3.0), 0.0);
    }

    #[test]
    fn huge_scale_underflows_to_zero() {
        let e = toy();
        let phi = e.embedding(0, 1e6);
        assert!(phi.iter().all(|&x| x == 0.0));
        let nd = e.normalized_diffusion_distance(0, 1, 1e6);
        assert!(nd.degenerate);
        assert_eq!(nd.value, 0.0);
    }

    #[test]
    fn normalized_distance_is_bounded() {
        let e = toy();
        let nd = e.normalized_diffusion_distance(0, 1, 1.0);
        assert!(!nd.degenerate);
        assert!((0.0..=2.0).contains(&nd.value));
        assert_eq!(e.normalized_diffusion_distance(2, 2, 1.0).value, 0.0);
    }

    #[test]
    fn distance_field_takes_minimum_over_sources() {
        let e = toy();
        let f = e.distance_field(&[0, 2], 1.0).unwrap();
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[2], 0.0);
        let expect = e.diffusion_distance(1, 0, 1.0).min(e.diffusion_distance(1, 2, 1.0));
        assert_eq!(f.values[1], expect);
        assert_eq!(f.meta.sources, Some(vec![0, 2]));
        assert!(e.distance_field(&[], 1.0).is_err());
        assert!(e.distance_field(&[3], 1.0).is_err());
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(DiffusionEmbedding::new(vec![1.0, 1.2], vec![0.0; 4], vec![0.5, 0.5]).is_err());
        assert!(DiffusionEmbedding::new(vec![0.5, 0.9], vec![0.0; 4], vec![0.5, 0.5]).is_err());
        assert!(DiffusionEmbedding::new(vec![1.0], vec![0.0; 3], vec![0.5, 0.5]).is_err());
    }
}
