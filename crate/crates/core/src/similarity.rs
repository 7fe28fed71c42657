//! Similarity queries on a diffusion embedding: thresholded neighbourhoods,
//! nearest-source partitions and k-means clustering of Φ_s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffusion::{DiffusionEmbedding, ScaledEmbedding};
use crate::error::{Error, Result};
use crate::par;

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborhoodResult {
    pub source: usize,
    pub scale: f64,
    /// Source first; FPS order when subsampled, otherwise by distance.
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
    pub radius: f64,
    pub max_count: usize,
    /// Size of the candidate set before subsampling.
    pub candidates: usize,
}

fn check_source(e: &DiffusionEmbedding, source: usize) -> Result<()> {
    if source >= e.n() {
        return Err(Error::Argument(format!("particle {source} out of range (n={})", e.n())));
    }
    Ok(())
}

/// Particles within `radius` of `source` at scale `s`, in index order.
pub fn candidate_set(e: &DiffusionEmbedding, source: usize, s: f64, radius: f64) -> Result<Vec<usize>> {
    check_source(e, source)?;
    let scaled = e.at_scale(s);
    Ok(candidates_in(&scaled, source, radius).0)
}

fn candidates_in(scaled: &ScaledEmbedding, source: usize, radius: f64) -> (Vec<usize>, Vec<f64>) {
    let d = scaled.distances_from(source);
    let idx: Vec<usize> = (0..scaled.n()).filter(|&j| j == source || d[j] <= radius).collect();
    (idx, d)
}

/// Particles within `radius` of `source`; more than `max_count` are thinned
/// by farthest point sampling under d_s, starting at the source.
pub fn similarity_neighborhood(
    e: &DiffusionEmbedding,
    source: usize,
    s: f64,
    radius: f64,
    max_count: usize,
) -> Result<NeighborhoodResult> {
    check_source(e, source)?;
    if !(radius > 0.0) || radius.is_nan() {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    if max_count == 0 {
        return Err(Error::Argument("max count must be at least 1".into()));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Argument(format!("scale must be finite and non-negative, got {s}")));
    }
    let scaled = e.at_scale(s);
    let (cands, dist) = candidates_in(&scaled, source, radius);
    let total = cands.len();
    let members = if total <= max_count {
        let mut m = cands;
        m.sort_by(|&a, &b| {
            (a != source)
                .cmp(&(b != source))
                .then(dist[a].total_cmp(&dist[b]))
                .then(a.cmp(&b))
        });
        m
    } else {
        fps_subset(&scaled, &cands, source, max_count)
    };
    let distances = members.iter().map(|&j| if j == source { 0.0 } else { dist[j] }).collect();
    Ok(NeighborhoodResult { source, scale: s, members, distances, radius, max_count, candidates: total })
}

/// Greedy max-min subset of `pool` (index-sorted), starting at `first`.
/// Ties go to the lowest particle index.
fn fps_subset(scaled: &ScaledEmbedding, pool: &[usize], first: usize, count: usize) -> Vec<usize> {
    let mut min_d = vec![f64::INFINITY; pool.len()];
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::with_capacity(count);
    let mut current = first;
    while out.len() < count {
        out.push(current);
        if let Ok(p) = pool.binary_search(&current) {
            taken[p] = true;
        }
        if out.len() == count {
            break;
        }
        let max = par::update_and_max(&mut min_d, |p, v| {
            let d = scaled.distance(current, pool[p]);
            if d < *v {
                *v = d;
            }
        });
        let cut = max * (1.0 - TIE_TOLERANCE);
        let next = (0..pool.len())
            .find(|&p| !taken[p] && min_d[p] >= cut)
            .or_else(|| (0..pool.len()).find(|&p| !taken[p]));
        match next {
            Some(p) => current = pool[p],
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourcePartition {
    pub sources: Vec<usize>,
    pub scale: f64,
    /// Position in `sources` of each particle's nearest source.
    pub nearest: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Nearest source per particle at scale `s`. Ties go to the earlier source.
pub fn multi_source_field(e: &DiffusionEmbedding, sources: &[usize], s: f64) -> Result<SourcePartition> {
    if sources.is_empty() {
        return Err(Error::Argument("at least one source is required".into()));
    }
    for (a, &src) in sources.iter().enumerate() {
        check_source(e, src)?;
        if sources[..a].contains(&src) {
            return Err(Error::Argument(format!("duplicate source {src}")));
        }
    }
    let scaled = e.at_scale(s);
    let pairs = par::map_range(e.n(), |j| {
        let mut best = (0usize, f64::INFINITY);
        for (a, &src) in sources.iter().enumerate() {
            let d = if src == j { 0.0 } else { scaled.distance(src, j) };
            if d < best.1 {
                best = (a, d);
            }
        }
        best
    });
    Ok(SourcePartition {
        sources: sources.to_vec(),
        scale: s,
        nearest: pairs.iter().map(|p| p.0).collect(),
        distances: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Seeded k-means on Φ_s (k-means++ initialisation, several restarts).
///
/// Labels are renumbered in order of first appearance, so equal partitions
/// produce equal label vectors.
pub fn cluster_embedding(e: &DiffusionEmbedding, s: f64, k: usize, rng_seed: u64) -> Result<Vec<usize>> {
    cluster_leading(e, s, k, rng_seed, usize::MAX)
}

/// As [`cluster_embedding`], restricted to the leading `dims` non-trivial
/// coordinates of Φ_s.
pub fn cluster_leading(e: &DiffusionEmbedding, s: f64, k: usize, rng_seed: u64, dims: usize) -> Result<Vec<usize>> {
    const RESTARTS: usize = 8;
    let n = e.n();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("need 1 ≤ k ≤ n, got k={k} for n={n}")));
    }
    let scaled = e.at_scale(s).truncated(dims);
    if k == 1 || scaled.width() == 0 {
        return Ok(vec![0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let run = kmeans(&scaled, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.0 < b.0) {
            best = Some(run);
        }
    }
    let labels = best.expect("at least one restart").1;
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    Ok(labels
        .into_iter()
        .map(|l| {
            if remap[l] == usize::MAX {
                remap[l] = next;
                next += 1;
            }
            remap[l]
        })
        .collect())
}

/// Lloyd iterations from a k-means++ start; returns (inertia, labels).
fn kmeans(scaled: &ScaledEmbedding, k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    const MAX_ITERS: usize = 300;
    let n = scaled.n();
    let w = scaled.width();
    let mut centers = kmeans_pp(scaled, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let assigned = par::map_range(n, |i| nearest_center(scaled.point(i), &centers, w));
        let changed = assigned.iter().zip(&labels).any(|(a, b)| a.0 != *b);
        labels = assigned.iter().map(|a| a.0).collect();
        inertia = assigned.iter().map(|a| a.1).sum();
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * w];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (acc, x) in sums[l * w..(l + 1) * w].iter_mut().zip(scaled.point(i)) {
                *acc += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for a in 0..w {
                    centers[c * w + a] = sums[c * w + a] / counts[c] as f64;
                }
            }
        }
    }
    (inertia, labels)
}

fn nearest_center(x: &[f64], centers: &[f64], w: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(w).enumerate() {
        let d = dist2(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Index drawn with probability proportional to `mass`; uniform if all zero.
fn draw(mass: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..mass.len());
    }
    let mut target = rng.random::<f64>() * total;
    for (i, &v) in mass.iter().enumerate() {
        if target < v {
            return i;
        }
        target -= v;
    }
    mass.len() - 1
}

fn kmeans_pp(scaled: &ScaledEmbedding, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = scaled.n();
    let w = scaled.width();
    let mut centers = Vec::with_capacity(k * w);
    centers.extend_from_slice(scaled.point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(scaled.point(i), &centers[..w])).collect();
    for _ in 1..k {
        let pick = draw(&d2, rng);
        let start = centers.len();
        centers.extend_from_slice(scaled.point(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(dist2(scaled.point(i), &centers[start..start + w]));
        }
    }
    centers
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Points on a line in a one-mode embedding; λ₁ = 1 keeps d_s = |x_i − x_j|.
    fn line(xs: &[f64]) -> DiffusionEmbedding {
        let n = xs.len();
        let mut v = Vec::new();
        for &x in xs {
            v.extend_from_slice(&[1.0, x]);
        }
        DiffusionEmbedding::new(vec![1.0, 1.0], v, vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn small_radius_returns_only_source() {
        let e = line(&[0.0, 1.0, 2.0]);
        let r = similarity_neighborhood(&e, 1, 1.0, 0.5, 10).unwrap();
        assert_eq!(r.members, vec![1]);
        assert_eq!(r.distances, vec![0.0]);
    }

    #[test]
    fn large_cap_returns_all_candidates_by_distance() {
        let e = line(&[0.0, 1.0, 2.5, 0.4, 9.0]);
        let r = similarity_neighborhood(&e, 0, 1.0, 3.0, 10).unwrap();
        assert_eq!(r.members, vec![0, 3, 1, 2]);
        assert_eq!(r.candidates, 4);
        assert!(r.distances.iter().all(|&d| d <= 3.0));
    }

    #[test]
    fn subsampling_spreads_members() {
        let e = line(&[0.0, 0.1, 0.2, 0.3, 1.0, 2.0]);
        let r = similarity_neighborhood(&e, 0, 1.0, 5.0, 3).unwrap();
        assert_eq!(r.members, vec![0, 5, 4]);
    }

    #[test]
    fn argument_errors() {
        let e = line(&[0.0, 1.0]);
        assert!(similarity_neighborhood(&e, 2, 1.0, 1.0, 1).is_err());
        assert!(similarity_neighborhood(&e, 0, 1.0, 0.0, 1).is_err());
        assert!(similarity_neighborhood(&e, 0, 1.0, 1.0, 0).is_err());
        assert!(multi_source_field(&e, &[0, 0], 1.0).is_err());
        assert!(cluster_embedding(&e, 1.0, 3, 0).is_err());
    }

    #[test]
    fn sources_claim_themselves_and_ties_go_first() {
        let e = line(&[0.0, 1.0, 2.0]);
        let p = multi_source_field(&e, &[2, 0], 1.0).unwrap();
        assert_eq!(p.nearest, vec![1, 0, 0]);
        assert_eq!(p.distances, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn kmeans_separates_two_groups() {
        let e = line(&[0.0, 0.1, 0.05, 5.0, 5.1, 4.9]);
        let labels = cluster_embedding(&e, 1.0, 2, 7).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(cluster_embedding(&e, 1.0, 1, 7).unwrap(), vec![0; 6]);
        assert_eq!(labels, cluster_embedding(&e, 1.0, 2, 7).unwrap());
    }
}
