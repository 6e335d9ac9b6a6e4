use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result, Vec3};

use super::PointCloud;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree over a snapshot of a cloud's points.
///
/// Radius queries are boundary inclusive; k-NN results are ordered by
/// `(distance, index)`, so equidistant points resolve to the lower index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
    source_id: String,
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec(), cloud.id())
    }

    pub fn from_points(points: Vec<Vec3>, source_id: &str) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut index = Self {
            perm: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
            source_id: source_id.to_string(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.perm[start..end];
        let mut lo = self.points[slice[0]];
        let mut hi = lo;
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let dim = extent.imax();
        if extent[dim] == 0.0 {
            // all coincident
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.perm[start + mid]][dim];
        self.nodes.push(Node::Split {
            dim,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    /// All indices with `|p - center| <= radius`, in ascending index order.
    pub fn radius_query(&self, center: &Vec3, radius: f64) -> Result<Vec<usize>> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
        }
        let mut out = Vec::new();
        self.radius_rec(0, center, radius, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn radius_rec(&self, node: usize, center: &Vec3, radius: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if (self.points[i] - center).norm() <= radius {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = center[dim] - value;
                // left holds coords <= value, right holds coords >= value
                if diff <= radius {
                    self.radius_rec(left, center, radius, out);
                }
                if -diff <= radius {
                    self.radius_rec(right, center, radius, out);
                }
            }
        }
    }

    /// The `k` nearest indices ordered by `(distance, index)`.
    pub fn knn_query(&self, center: &Vec3, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len() {
            return Err(Error::OutOfRange {
                what: "k",
                value: k,
                min: 1,
                max: self.len(),
            });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, center, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| c.index).collect())
    }

    fn knn_rec(&self, node: usize, center: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Candidate {
                        dist: (self.points[i] - center).norm(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = center[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, center, k, heap);
                // equal plane distance can still hide a lower-index tie
                if heap.len() < k || diff.abs() <= heap.peek().expect("heap is full").dist {
                    self.knn_rec(far, center, k, heap);
                }
            }
        }
    }

    /// Nearest index and its distance.
    pub fn nearest(&self, center: &Vec3) -> (usize, f64) {
        let i = self.knn_query(center, 1).expect("index is non-empty")[0];
        (i, (self.points[i] - center).norm())
    }
}
