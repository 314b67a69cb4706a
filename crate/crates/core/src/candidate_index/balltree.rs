use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::IndexError;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A hypersphere covering `order[start..end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub centroid: Vec<f64>,
    pub radius: f64,
    pub start: usize,
    pub end: usize,
    /// Indices into the node array; `None` for leaves.
    pub children: Option<(usize, usize)>,
}

impl Node {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Ball tree over points of equal dimension. Internal nodes split along the
/// dimension of largest spread at the median; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallTree {
    points: Vec<Vec<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl BallTree {
    pub fn build(points: Vec<Vec<f64>>, leaf_size: usize) -> Result<Self, IndexError> {
        if points.is_empty() {
            return Err(IndexError::Empty);
        }
        if leaf_size == 0 {
            return Err(IndexError::Config("leaf size must be at least 1".into()));
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(IndexError::Dimension { expected: dim, found: p.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(IndexError::Config("points must be finite".into()));
        }
        let mut tree = BallTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
            leaf_size,
        };
        tree.build_node(0, tree.points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let members = &self.order[start..end];
        let dim = self.points[members[0]].len();
        let mut centroid = vec![0.0; dim];
        for &i in members {
            for (c, v) in centroid.iter_mut().zip(&self.points[i]) {
                *c += v;
            }
        }
        let n = members.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);
        let radius = members
            .iter()
            .map(|&i| euclidean(&centroid, &self.points[i]))
            .fold(0.0, f64::max);
        let id = self.nodes.len();
        self.nodes.push(Node {
            centroid,
            radius,
            start,
            end,
            children: None,
        });
        if end - start <= self.leaf_size {
            return id;
        }

        let spread_dim = (0..dim)
            .map(|d| {
                let (lo, hi) = self.order[start..end]
                    .iter()
                    .map(|&i| self.points[i][d])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (d, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        let points = &self.points;
        self.order[start..end].sort_by(|&a, &b| {
            points[a][spread_dim]
                .total_cmp(&points[b][spread_dim])
                .then(a.cmp(&b))
        });
        let mid = start + (end - start) / 2;
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Point indices covered by a node.
    pub fn members(&self, node: &Node) -> &[usize] {
        &self.order[node.start..node.end]
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match nodes[id].children {
                Some((l, r)) => 1 + go(nodes, l).max(go(nodes, r)),
                None => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// The `k` nearest points as `(index, distance)`, ascending by distance
    /// and then by index.
    pub fn query(&self, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>, IndexError> {
        if k == 0 {
            return Err(IndexError::Config("k must be at least 1".into()));
        }
        if q.len() != self.dimension() {
            return Err(IndexError::Dimension {
                expected: self.dimension(),
                found: q.len(),
            });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.distance))
            .collect())
    }

    fn search(&self, id: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        let to_center = euclidean(q, &node.centroid);
        if heap.len() == k {
            let worst = heap.peek().expect("full heap").distance;
            let lower = to_center - node.radius;
            // Slack keeps rounding from pruning an exact tie.
            if lower > worst * (1.0 + 1e-12) + 1e-12 {
                return;
            }
        }
        match node.children {
            None => {
                for &i in &self.order[node.start..node.end] {
                    let c = Candidate {
                        distance: euclidean(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Some((l, r)) => {
                let dl = euclidean(q, &self.nodes[l].centroid);
                let dr = euclidean(q, &self.nodes[r].centroid);
                let (first, second) = if dr < dl { (r, l) } else { (l, r) };
                self.search(first, q, k, heap);
                self.search(second, q, k, heap);
            }
        }
    }

    /// Checks coverage, leaf sizes and ball containment.
    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |m: String| Err(IndexError::Corrupt(m));
        if self.nodes.is_empty() || self.order.len() != self.points.len() {
            return bad("node array or permutation is incomplete".into());
        }
        let mut seen = vec![false; self.points.len()];
        for &i in &self.order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return bad("permutation is not a bijection".into());
            }
        }
        let root = &self.nodes[0];
        if root.start != 0 || root.end != self.points.len() {
            return bad("root does not cover all points".into());
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.start >= node.end || node.end > self.order.len() {
                return bad(format!("node {id} has an invalid range"));
            }
            for &i in self.members(node) {
                let d = euclidean(&node.centroid, &self.points[i]);
                if d > node.radius * (1.0 + 1e-12) + 1e-12 {
                    return bad(format!("point {i} lies outside node {id}"));
                }
            }
            match node.children {
                None if node.len() > self.leaf_size => {
                    return bad(format!("leaf {id} holds {} points", node.len()));
                }
                Some((l, r)) => {
                    let (ln, rn) = match (self.nodes.get(l), self.nodes.get(r)) {
                        (Some(a), Some(b)) => (a, b),
                        _ => return bad(format!("node {id} has dangling children")),
                    };
                    if ln.start != node.start || ln.end != rn.start || rn.end != node.end {
                        return bad(format!("children of node {id} do not partition it"));
                    }
                }
                None => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect()
    }

    fn brute_force(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (i, d)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn singleton_is_one_leaf() {
        let tree = BallTree::build(vec![vec![1.0, 2.0]], 16).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.nodes()[0].radius, 0.0);
        assert!(tree.nodes()[0].is_leaf());
    }

    #[test]
    fn node_count_and_depth_follow_median_recurrence() {
        fn count(n: usize, leaf: usize) -> usize {
            if n <= leaf { 1 } else { 1 + count(n / 2, leaf) + count(n - n / 2, leaf) }
        }
        fn depth(n: usize, leaf: usize) -> usize {
            if n <= leaf { 0 } else { 1 + depth(n - n / 2, leaf) }
        }
        for (n, leaf) in [(200, 16), (200, 3), (17, 16), (1, 1), (64, 1)] {
            let tree = BallTree::build(random_points(n, 4, n as u64), leaf).unwrap();
            assert_eq!(tree.nodes().len(), count(n, leaf), "n={n} leaf={leaf}");
            assert_eq!(tree.depth(), depth(n, leaf));
            tree.validate().unwrap();
            let leaves: usize = tree.nodes().iter().filter(|x| x.is_leaf()).map(Node::len).sum();
            assert_eq!(leaves, n);
        }
    }

    #[test]
    fn matches_brute_force() {
        let points = random_points(500, 8, 42);
        let tree = BallTree::build(points.clone(), 16).unwrap();
        let queries = random_points(100, 8, 7);
        for q in &queries {
            for k in [1, 5, 15] {
                assert_eq!(tree.query(q, k).unwrap(), brute_force(&points, q, k));
            }
        }
    }

    #[test]
    fn ties_resolve_by_index() {
        let points = vec![vec![1.0], vec![-1.0], vec![1.0], vec![0.0], vec![1.0]];
        let tree = BallTree::build(points.clone(), 1).unwrap();
        let got = tree.query(&[1.0], 4).unwrap();
        assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 2, 4, 3]);
        assert_eq!(got, brute_force(&points, &[1.0], 4));
    }

    #[test]
    fn self_match_and_exhaustive_k() {
        let points = random_points(30, 3, 5);
        let tree = BallTree::build(points.clone(), 4).unwrap();
        let hit = tree.query(&points[17], 1).unwrap();
        assert_eq!(hit, vec![(17, 0.0)]);
        let all = tree.query(&points[0], 100).unwrap();
        assert_eq!(all.len(), 30);
        assert!(all.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn duplicate_points_still_split() {
        let tree = BallTree::build(vec![vec![0.0, 0.0]; 40], 4).unwrap();
        tree.validate().unwrap();
        let got = tree.query(&[0.0, 0.0], 3).unwrap();
        assert_eq!(got, vec![(0, 0.0), (1, 0.0), (2, 0.0)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(BallTree::build(vec![], 4), Err(IndexError::Empty)));
        assert!(BallTree::build(vec![vec![0.0], vec![0.0, 1.0]], 4).is_err());
        let tree = BallTree::build(vec![vec![0.0]], 4).unwrap();
        assert!(tree.query(&[0.0, 0.0], 1).is_err());
        assert!(tree.query(&[0.0], 0).is_err());
    }
}
