//! Exact k-nearest-neighbor search over 3D points.
//!
//! A balanced kd-tree is built in batch over a point slice; the map layer
//! keeps recently inserted points in a linear tail and rebuilds periodically,
//! so queries stay exact at all times. Ties in distance are broken by point
//! index (insertion order).

use crate::manifold::Vec3;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

pub struct KdTree {
    nodes: Vec<Node>,
    root: u32,
    len: usize,
}

/// (squared distance, point index), ordered so equal distances prefer the
/// smaller index.
pub type Neighbor = (f64, u32);

#[inline]
fn better(a: &Neighbor, b: &Neighbor) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Bounded best-k list; tiny k, so insertion into a sorted vec wins over a
/// heap.
pub struct BestK {
    k: usize,
    items: Vec<Neighbor>,
}

impl BestK {
    pub fn new(k: usize) -> Self {
        BestK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn worst_dist2(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.items.len() - 1].0
        }
    }

    pub fn offer(&mut self, cand: Neighbor) {
        if self.items.len() == self.k {
            let worst = self.items[self.items.len() - 1];
            if !better(&cand, &worst) {
                return;
            }
        }
        let pos = self.items.partition_point(|it| better(it, &cand));
        self.items.insert(pos, cand);
        if self.items.len() > self.k {
            self.items.pop();
        }
    }

    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.items
    }
}

impl KdTree {
    pub fn empty() -> Self {
        KdTree {
            nodes: Vec::new(),
            root: NONE,
            len: 0,
        }
    }

    pub fn build(points: &[Vec3]) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(points, &mut idx[..], &mut nodes);
        KdTree {
            nodes,
            root,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    fn build_rec(points: &[Vec3], idx: &mut [u32], nodes: &mut Vec<Node>) -> u32 {
        if idx.is_empty() {
            return NONE;
        }
        // split on the axis with the widest spread
        let mut lo = Vec3::from_element(f64::INFINITY);
        let mut hi = Vec3::from_element(f64::NEG_INFINITY);
        for &i in idx.iter() {
            let p = &points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let spread = hi - lo;
        let axis = if spread.x >= spread.y && spread.x >= spread.z {
            0
        } else if spread.y >= spread.z {
            1
        } else {
            2
        };

        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let point = idx[mid];
        let node_id = nodes.len() as u32;
        nodes.push(Node {
            point,
            axis: axis as u8,
            left: NONE,
            right: NONE,
        });
        let (left_idx, rest) = idx.split_at_mut(mid);
        let right_idx = &mut rest[1..];
        let left = Self::build_rec(points, left_idx, nodes);
        let right = Self::build_rec(points, right_idx, nodes);
        nodes[node_id as usize].left = left;
        nodes[node_id as usize].right = right;
        node_id
    }

    /// Offers every point within reach of the current best set to `best`.
    pub fn knn_into(&self, points: &[Vec3], query: &Vec3, best: &mut BestK) {
        if self.root != NONE {
            self.search(self.root, points, query, best);
        }
    }

    fn search(&self, node_id: u32, points: &[Vec3], query: &Vec3, best: &mut BestK) {
        let node = self.nodes[node_id as usize];
        let p = &points[node.point as usize];
        let d2 = (p - query).norm_squared();
        best.offer((d2, node.point));

        let axis = node.axis as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near != NONE {
            self.search(near, points, query, best);
        }
        // the far side can still hold an equal-distance, smaller-index point,
        // so prune only on strict inequality
        if far != NONE && delta * delta <= best.worst_dist2() {
            self.search(far, points, query, best);
        }
    }
}
