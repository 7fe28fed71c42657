//! The immutable dataset/embedding pair behind the service, plus the
//! get-or-compute cache of serialized query results.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use axum::body::Bytes;
use driftscope::separation::{default_k, diffusion_separation, knn_log_density, particle_separation, DENSITY_K};
use driftscope::similarity::{cluster_embedding, multi_source_field, similarity_neighborhood};
use driftscope::{DiffusionEmbedding, Direction, Error, Result, TrajectoryDataset};
use serde::Serialize;

/// Exact parameter tuple of a cached result. Scales are keyed by bit pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CacheKey {
    Separation { scale: Option<u64>, direction: Direction, k: usize },
    Density { step: usize },
    Field { sources: Vec<usize>, scale: u64 },
    Partition { sources: Vec<usize>, scale: u64 },
    Clusters { k: usize, scale: u64 },
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub n: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub scales_hint: Vec<f64>,
    pub bounds: Bounds,
    pub modes: usize,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Bounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Clusters<'a> {
    k: usize,
    scale: f64,
    seed: u64,
    labels: &'a [usize],
}

pub struct Session {
    dataset: TrajectoryDataset,
    embedding: DiffusionEmbedding,
    seed: u64,
    cache: Mutex<HashMap<CacheKey, Bytes>>,
    computed: AtomicUsize,
}

/// Little-endian f32 encoding of a per-particle array.
pub fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Bytes {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Bytes::from(out)
}

fn json_bytes<T: Serialize>(value: &T) -> Bytes {
    Bytes::from(serde_json::to_vec(value).expect("serializable response"))
}

/// Roughly log-spaced scales from 1 to where `λ_1^s` drops to 1%.
fn scales_hint(e: &DiffusionEmbedding) -> Vec<f64> {
    let lambda1 = e.eigenvalues().get(1).copied().unwrap_or(0.0);
    let top = if lambda1 > 0.0 && lambda1 < 1.0 { (0.01f64.ln() / lambda1.ln()).clamp(1.0, 1e6) } else { 1.0 };
    let mut out = vec![0.0];
    let count = 12;
    for i in 0..count {
        let s = top.powf(i as f64 / (count - 1) as f64);
        let rounded = if s < 10.0 { (s * 10.0).round() / 10.0 } else { s.round() };
        if out.last() != Some(&rounded) {
            out.push(rounded);
        }
    }
    out
}

impl Session {
    pub fn new(dataset: TrajectoryDataset, embedding: DiffusionEmbedding, seed: u64) -> Result<Self> {
        if dataset.n() != embedding.n() {
            return Err(Error::Validation(format!(
                "embedding has {} particles but the dataset has {}",
                embedding.n(),
                dataset.n()
            )));
        }
        Ok(Session { dataset, embedding, seed, cache: Mutex::new(HashMap::new()), computed: AtomicUsize::new(0) })
    }

    pub fn dataset(&self) -> &TrajectoryDataset {
        &self.dataset
    }

    pub fn embedding(&self) -> &DiffusionEmbedding {
        &self.embedding
    }

    /// Number of results computed (not served from cache) so far.
    pub fn computations(&self) -> usize {
        self.computed.load(Ordering::SeqCst)
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    /// Returns the cached body for `key`, computing it on a miss. Concurrent
    /// misses may compute twice; the first insertion wins.
    pub fn get_or_compute(&self, key: CacheKey, compute: impl FnOnce() -> Result<Bytes>) -> Result<Bytes> {
        if let Some(hit) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let body = compute()?;
        self.computed.fetch_add(1, Ordering::SeqCst);
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        Ok(cache.entry(key).or_insert(body).clone())
    }

    pub fn meta(&self) -> Bytes {
        let ds = &self.dataset;
        let (min, max) = ds.bounds();
        let e = &self.embedding;
        json_bytes(&Meta {
            n: ds.n(),
            steps: ds.steps(),
            d: ds.dim(),
            times: ds.times().to_vec(),
            scales_hint: scales_hint(e),
            bounds: Bounds { min, max },
            modes: e.modes(),
            eigenvalues: e.eigenvalues().iter().take(32).copied().collect(),
        })
    }

    pub fn positions(&self, step: usize) -> Bytes {
        f32_bytes(self.dataset.snapshot(step))
    }

    /// Concatenated `T·d` trajectories in request order.
    pub fn trajectories(&self, ids: &[usize]) -> Bytes {
        f32_bytes(ids.iter().flat_map(|&i| self.dataset.trajectory(i).iter().copied()))
    }

    /// γ without a scale, γ_s with one.
    pub fn separation(&self, scale: Option<f64>, direction: Direction, k: Option<usize>) -> Result<Bytes> {
        let k = k.unwrap_or_else(|| default_k(self.dataset.dim()));
        let key = CacheKey::Separation { scale: scale.map(f64::to_bits), direction, k };
        self.get_or_compute(key, || {
            let field = match scale {
                None => particle_separation(&self.dataset, direction, k)?,
                Some(s) => diffusion_separation(&self.dataset, &self.embedding, s, direction, k)?,
            };
            Ok(f32_bytes(field.values))
        })
    }

    pub fn density(&self, step: usize) -> Result<Bytes> {
        self.get_or_compute(CacheKey::Density { step }, || {
            Ok(f32_bytes(knn_log_density(&self.dataset, step, DENSITY_K)?.values))
        })
    }

    /// Smallest distance to any source, one f32 per particle.
    pub fn field(&self, sources: &[usize], scale: f64) -> Result<Bytes> {
        let key = CacheKey::Field { sources: sources.to_vec(), scale: scale.to_bits() };
        self.get_or_compute(key, || Ok(f32_bytes(multi_source_field(&self.embedding, sources, scale)?.distances)))
    }

    /// Nearest-source assignment and distances as JSON.
    pub fn partition(&self, sources: &[usize], scale: f64) -> Result<Bytes> {
        let key = CacheKey::Partition { sources: sources.to_vec(), scale: scale.to_bits() };
        self.get_or_compute(key, || Ok(json_bytes(&multi_source_field(&self.embedding, sources, scale)?)))
    }

    pub fn neighborhood(&self, source: usize, scale: f64, radius: f64, max_count: usize) -> Result<Bytes> {
        Ok(json_bytes(&similarity_neighborhood(&self.embedding, source, scale, radius, max_count)?))
    }

    pub fn clusters(&self, k: usize, scale: f64) -> Result<Bytes> {
        self.get_or_compute(CacheKey::Clusters { k, scale: scale.to_bits() }, || {
            let labels = cluster_embedding(&self.embedding, scale, k, self.seed)?;
            Ok(json_bytes(&Clusters { k, scale, seed: self.seed, labels: &labels }))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use driftscope::diffusion::DiffusionEmbedding;

    fn session() -> Session {
        let ds = TrajectoryDataset::new(2, vec![0.0, 1.0], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 3.0, 0.0]).unwrap();
        let e = DiffusionEmbedding::new(vec![1.0, 0.5], vec![1.0, -1.0, 1.0, 0.0, 1.0, 2.0], vec![0.3, 0.3, 0.4])
            .unwrap();
        Session::new(ds, e, 0).unwrap()
    }

    #[test]
    fn first_insertion_wins() {
        let s = session();
        let key = CacheKey::Density { step: 0 };
        let a = s.get_or_compute(key.clone(), || Ok(Bytes::from_static(b"a"))).unwrap();
        let b = s.get_or_compute(key, || Ok(Bytes::from_static(b"b"))).unwrap();
        assert_eq!((a.as_ref(), b.as_ref()), (&b"a"[..], &b"a"[..]));
        assert_eq!(s.computations(), 1);
    }

    #[test]
    fn failures_are_not_cached() {
        let s = session();
        let key = CacheKey::Density { step: 1 };
        assert!(s.get_or_compute(key.clone(), || Err(Error::Argument("no".into()))).is_err());
        assert_eq!(s.cached_entries(), 0);
        assert!(s.get_or_compute(key, || Ok(Bytes::new())).is_ok());
    }

    #[test]
    fn mismatched_embedding_is_rejected() {
        let ds = TrajectoryDataset::new(2, vec![0.0, 1.0], vec![0.0; 8]).unwrap();
        let e = DiffusionEmbedding::new(vec![1.0], vec![1.0; 3], vec![0.3, 0.3, 0.4]).unwrap();
        assert!(Session::new(ds, e, 0).is_err());
    }

    #[test]
    fn f32_encoding_is_little_endian() {
        assert_eq!(f32_bytes([1.0, -2.5]).as_ref(), [1.0f32.to_le_bytes(), (-2.5f32).to_le_bytes()].concat());
    }

    #[test]
    fn scale_hint_starts_at_zero_and_increases() {
        let hint = scales_hint(session().embedding());
        assert_eq!(hint[0], 0.0);
        assert!(hint.windows(2).all(|w| w[0] < w[1]));
        // λ1 = 0.5 reaches 1% near s = 6.6
        assert!((*hint.last().unwrap() - 6.6).abs() < 0.05);
    }
}
