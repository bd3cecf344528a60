//! Exact nearest-neighbour search over 3D points.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Static k-d tree. Queries return the closest point; equal distances resolve
/// to the lowest index.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let idx: Vec<usize> = (0..points.len()).collect();
        KdTree {
            points,
            root: build(points, idx),
        }
    }

    /// `(index, squared distance)` of the nearest point, `None` when empty.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = None;
        self.search(&self.root, q, &mut best);
        best
    }

    fn search(&self, node: &Node, q: &Vector3<f64>, best: &mut Option<(usize, f64)>) {
        match node {
            Node::Leaf(idx) => {
                for &i in idx {
                    let d = (self.points[i] - q).norm_squared();
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis] - value;
                let (near, far) = if delta <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule.
                if best.is_none_or(|(_, bd)| delta * delta <= bd) {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Vector3<f64>], mut idx: Vec<usize>) -> Node {
    if idx.len() <= LEAF_SIZE {
        return Node::Leaf(idx);
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in &idx {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    if hi[axis] - lo[axis] <= 0.0 {
        return Node::Leaf(idx);
    }
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[idx[mid]][axis];
    // Points equal to the split value may land on either side, which the
    // search handles because it visits both halves whenever |delta| <= best.
    let right = idx.split_off(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, idx)),
        right: Box::new(build(points, right)),
    }
}
