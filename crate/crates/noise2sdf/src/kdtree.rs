//! A small 3D k-d tree for nearest-neighbor queries.
//!
//! Ties on distance are broken toward the lowest point index, so queries are
//! deterministic and agree with a brute-force scan that keeps the first
//! minimum.

use crate::geom::{dist2, Point3};

#[derive(Debug, Clone)]
struct Node {
    /// Index into the original point array.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Immutable k-d tree over a borrowed-at-build point slice (points are
/// copied in; the tree owns its data).
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<Node>,
    root: i32,
}

/// One neighbor result: original index plus squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    /// Total order used everywhere: smaller distance first, lower index on
    /// ties.
    fn key(&self) -> (f64, usize) {
        (self.dist2, self.index)
    }

    fn better_than(&self, other: &Neighbor) -> bool {
        self.key() < other.key()
    }
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
        assert!(!points.is_empty(), "cannot build a k-d tree over no points");
        let mut indices: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        tree.root = tree.build_rec(&mut indices);
        tree
    }

    fn build_rec(&mut self, indices: &mut [u32]) -> i32 {
        if indices.is_empty() {
            return -1;
        }
        // Split on the widest axis; median by (coordinate, index) gives a
        // deterministic tree for any input order.
        let axis = self.widest_axis(indices);
        indices.sort_unstable_by(|&a, &b| {
            let ca = self.points[a as usize].coord(axis as usize);
            let cb = self.points[b as usize].coord(axis as usize);
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        let mid = indices.len() / 2;
        let point = indices[mid];
        let (left_slice, rest) = indices.split_at_mut(mid);
        let right_slice = &mut rest[1..];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis,
            left: -1,
            right: -1,
        });
        let left = self.build_rec(left_slice);
        let right = self.build_rec(right_slice);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    fn widest_axis(&self, indices: &[u32]) -> u8 {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in indices {
            let p = self.points[i as usize];
            for a in 0..3 {
                let c = p.coord(a);
                min[a] = min[a].min(c);
                max[a] = max[a].max(c);
            }
        }
        let mut best = 0;
        for a in 1..3 {
            if max[a] - min[a] > max[best] - min[best] {
                best = a;
            }
        }
        best as u8
    }

    /// Nearest neighbor of `q`; ties go to the lowest index.
    pub fn nearest(&self, q: Point3) -> Neighbor {
        self.nearest_excluding(q, None)
    }

    /// Nearest neighbor of `q`, optionally skipping one index (a point
    /// querying its own cloud).
    pub fn nearest_excluding(&self, q: Point3, exclude: Option<usize>) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_rec(self.root, q, exclude, &mut best);
        best
    }

    fn nearest_rec(&self, node_id: i32, q: Point3, exclude: Option<usize>, best: &mut Neighbor) {
        if node_id < 0 {
            return;
        }
        let node = &self.nodes[node_id as usize];
        let idx = node.point as usize;
        if Some(idx) != exclude {
            let cand = Neighbor {
                index: idx,
                dist2: dist2(q, self.points[idx]),
            };
            if cand.better_than(best) {
                *best = cand;
            }
        }
        let diff = q.coord(node.axis as usize) - self.points[idx].coord(node.axis as usize);
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.nearest_rec(near, q, exclude, best);
        if diff * diff <= best.dist2 {
            self.nearest_rec(far, q, exclude, best);
        }
    }

    /// The `k` nearest neighbors of `q` in ascending `(dist2, index)` order,
    /// optionally excluding one index. Panics if fewer than `k` candidates
    /// exist.
    pub fn knn_excluding(&self, q: Point3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        assert!(k >= 1);
        let available = self.points.len() - usize::from(exclude.is_some());
        assert!(k <= available, "asked for {k} neighbors of {available}");
        let mut heap: Vec<Neighbor> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, q, k, exclude, &mut heap);
        heap.sort_unstable_by(|a, b| a.key().partial_cmp(&b.key()).unwrap());
        heap
    }

    fn knn_rec(
        &self,
        node_id: i32,
        q: Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut Vec<Neighbor>,
    ) {
        if node_id < 0 {
            return;
        }
        let node = &self.nodes[node_id as usize];
        let idx = node.point as usize;
        if Some(idx) != exclude {
            let cand = Neighbor {
                index: idx,
                dist2: dist2(q, self.points[idx]),
            };
            if heap.len() < k {
                heap.push(cand);
                if heap.len() == k {
                    // Max at front via simple sort; k stays small here.
                    heap.sort_unstable_by(|a, b| b.key().partial_cmp(&a.key()).unwrap());
                }
            } else if cand.key() < heap[0].key() {
                heap[0] = cand;
                heap.sort_unstable_by(|a, b| b.key().partial_cmp(&a.key()).unwrap());
            }
        }
        let diff = q.coord(node.axis as usize) - self.points[idx].coord(node.axis as usize);
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.knn_rec(near, q, k, exclude, heap);
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[0].dist2
        };
        if diff * diff <= bound {
            self.knn_rec(far, q, k, exclude, heap);
        }
    }
}

/// Brute-force nearest neighbor with the same tie rule (first minimum wins).
/// Shared by tests and the exhaustive-search reference metrics.
pub fn nearest_brute(points: &[Point3], q: Point3, exclude: Option<usize>) -> Neighbor {
    let mut best = Neighbor {
        index: usize::MAX,
        dist2: f64::INFINITY,
    };
    for (i, &p) in points.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = dist2(q, p);
        if (d, i) < (best.dist2, best.index) {
            best = Neighbor { index: i, dist2: d };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::stream_rng;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let points = cloud(500, 1);
        let tree = KdTree::build(&points);
        let queries = cloud(1000, 2);
        for q in queries {
            let a = tree.nearest(q);
            let b = nearest_brute(&points, q, None);
            assert_eq!(a.index, b.index);
            assert_eq!(a.dist2, b.dist2);
        }
    }

    #[test]
    fn nearest_excluding_self() {
        let points = cloud(300, 3);
        let tree = KdTree::build(&points);
        for (i, &p) in points.iter().enumerate() {
            let a = tree.nearest_excluding(p, Some(i));
            let b = nearest_brute(&points, p, Some(i));
            assert_eq!(a.index, b.index);
            assert_eq!(a.dist2, b.dist2);
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let points = cloud(200, 4);
        let tree = KdTree::build(&points);
        for q in cloud(50, 5) {
            let got = tree.knn_excluding(q, 7, None);
            let mut all: Vec<Neighbor> = points
                .iter()
                .enumerate()
                .map(|(i, &p)| Neighbor {
                    index: i,
                    dist2: dist2(q, p),
                })
                .collect();
            all.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap());
            for (g, w) in got.iter().zip(all.iter().take(7)) {
                assert_eq!(g.index, w.index);
                assert_eq!(g.dist2, w.dist2);
            }
        }
    }

    #[test]
    fn duplicate_points_tie_break_to_lowest_index() {
        let p = Point3::new(0.25, -0.5, 0.75);
        let points = vec![p, p, p, Point3::new(2.0, 0.0, 0.0)];
        let tree = KdTree::build(&points);
        let n = tree.nearest(p);
        assert_eq!(n.index, 0);
        assert_eq!(n.dist2, 0.0);
        let n = tree.nearest_excluding(p, Some(0));
        assert_eq!(n.index, 1);
        let knn = tree.knn_excluding(p, 3, Some(1));
        assert_eq!(knn[0].index, 0);
        assert_eq!(knn[1].index, 2);
        assert_eq!(knn[2].index, 3);
    }
}
