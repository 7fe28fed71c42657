//! A bucketed k-d tree over points of arbitrary (small) dimension.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;

/// Relative tolerance under which two squared distances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist2.sqrt()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    /// Builds a tree over `points`, laid out point-major with `dim` coordinates each.
    pub fn new(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(points.len() % dim, 0, "point buffer is not a multiple of dim");
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            points,
            perm: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest spread
        let dim = self.dim;
        let mut axis = 0;
        let mut spread = -1.0;
        for a in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &p in &self.perm[start..end] {
                let v = self.points[p * dim + a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > spread {
                spread = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        {
            let points = &self.points;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a * dim + axis].total_cmp(&points[b * dim + axis])
            });
        }
        let value = self.points[self.perm[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn dist2(&self, p: usize, q: &[f64]) -> f64 {
        let base = p * self.dim;
        let mut s = 0.0;
        for (a, &qa) in q.iter().enumerate() {
            let d = self.points[base + a] - qa;
            s += d * d;
        }
        s
    }

    /// The `k` nearest points to `q`, sorted by (distance, index). `exclude`
    /// removes one index (typically the query particle itself).
    pub fn knn(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        debug_assert_eq!(q.len(), self.dim);
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap
            .into_iter()
            .map(|HeapItem(dist2, index)| Neighbor { index, dist2 })
            .collect();
        out.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.index.cmp(&b.index)));
        out
    }

    fn knn_rec(
        &self,
        node: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &p in &self.perm[start..end] {
                    if Some(p) == exclude {
                        continue;
                    }
                    let d2 = self.dist2(p, q);
                    if heap.len() < k {
                        heap.push(HeapItem(d2, p));
                    } else if let Some(top) = heap.peek() {
                        if HeapItem(d2, p) < *top {
                            heap.pop();
                            heap.push(HeapItem(d2, p));
                        }
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, exclude, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |h| h.0)
                };
                if diff * diff <= worst {
                    self.knn_rec(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Like [`KdTree::knn`], but distances equal within [`TIE_TOLERANCE`]
    /// are ordered by index. The result is stable under round-off-level
    /// perturbations of the coordinates (e.g. after a rigid motion).
    pub fn knn_stable(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let mut fetch = (k + 4).min(available);
        loop {
            let mut found = self.knn(q, fetch, exclude);
            normalize_ties(&mut found);
            if found.len() <= k {
                return found;
            }
            let boundary = found[k - 1].dist2;
            let last = found[found.len() - 1].dist2;
            if fetch < available && tied(boundary, last) {
                fetch = (fetch * 2).min(available);
                continue;
            }
            found.truncate(k);
            return found;
        }
    }

    /// All points within distance `radius` of `q` (inclusive), unsorted.
    pub fn within_radius(&self, q: &[f64], radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &p in &self.perm[start..end] {
                        let d2 = self.dist2(p, q);
                        if d2 <= r2 {
                            out.push(Neighbor { index: p, dist2: d2 });
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
        out
    }
}

fn tied(a: f64, b: f64) -> bool {
    (b - a).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Reorders runs of (near-)equal distances by index. Input must be sorted by distance.
fn normalize_ties(found: &mut [Neighbor]) {
    let mut g = 0;
    while g < found.len() {
        let anchor = found[g].dist2;
        let mut e = g + 1;
        while e < found.len() && tied(anchor, found[e].dist2) {
            e += 1;
        }
        found[g..e].sort_by_key(|nb| nb.index);
        g = e;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[f64], dim: usize, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let n = points.len() / dim;
        let mut all: Vec<(f64, usize)> = (0..n)
            .filter(|&i| Some(i) != exclude)
            .map(|i| {
                let d2: f64 = (0..dim).map(|a| (points[i * dim + a] - q[a]).powi(2)).sum();
                (d2, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2, 3] {
            let n = 700;
            let pts: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
            let tree = KdTree::new(pts.clone(), dim);
            for i in (0..n).step_by(13) {
                let q = &pts[i * dim..(i + 1) * dim];
                let got: Vec<usize> = tree.knn(q, 9, Some(i)).iter().map(|n| n.index).collect();
                assert_eq!(got, brute(&pts, dim, q, 9, Some(i)));
            }
        }
    }

    #[test]
    fn radius_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let tree = KdTree::new(pts.clone(), 2);
        let q = [0.4, 0.6];
        let mut got: Vec<usize> = tree.within_radius(&q, 0.1).iter().map(|n| n.index).collect();
        got.sort_unstable();
        let want: Vec<usize> = (0..500)
            .filter(|&i| (pts[2 * i] - 0.4).powi(2) + (pts[2 * i + 1] - 0.6).powi(2) <= 0.01)
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn stable_knn_breaks_lattice_ties_by_index() {
        // 5x5 unit lattice; the centre has 4 neighbours at 1, 4 at sqrt 2, 4 at 2.
        let mut pts = Vec::new();
        for y in 0..5 {
            for x in 0..5 {
                pts.push(x as f64);
                pts.push(y as f64);
            }
        }
        let centre = 12;
        let tree = KdTree::new(pts.clone(), 2);
        let nb = tree.knn_stable(&[2.0, 2.0], 9, Some(centre));
        assert_eq!(nb.len(), 9);
        // first eight are the surrounding ring, ninth is the lowest-index point at distance 2
        assert!(nb[..8].iter().all(|n| n.dist2 <= 2.0 + 1e-12));
        assert_eq!(nb[8].index, 2);

        // perturb coordinates at round-off level: selection must not change
        let jitter: Vec<f64> = pts
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 3 == 0 { 1e-14 } else { -1e-14 })
            .collect();
        let tree2 = KdTree::new(jitter, 2);
        let nb2 = tree2.knn_stable(&[2.0, 2.0], 9, Some(centre));
        let a: Vec<usize> = nb.iter().map(|n| n.index).collect();
        let b: Vec<usize> = nb2.iter().map(|n| n.index).collect();
        assert_eq!(a, b);
    }
}
