use nalgebra::Vector3;

const LEAF: usize = 8;

/// Static 3-D kd-tree over a point set, split on the widest axis at the
/// median. Immutable once built, so shared queries are safe.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    axes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance_squared: f64,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        build(&tree.points, &mut tree.order, &mut tree.axes);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    /// Nearest indexed point; ties resolve to the first one visited.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            distance_squared: f64::INFINITY,
        };
        self.search(&self.order, &self.axes, q, &mut best);
        Some(best)
    }

    fn search(&self, order: &[usize], axes: &[u8], q: &Vector3<f64>, best: &mut Neighbor) {
        if order.len() <= LEAF {
            for &i in order {
                let d = (self.points[i] - q).norm_squared();
                if d < best.distance_squared || (d == best.distance_squared && i < best.index) {
                    *best = Neighbor {
                        index: i,
                        distance_squared: d,
                    };
                }
            }
            return;
        }
        let mid = order.len() / 2;
        let i = order[mid];
        let axis = axes[mid] as usize;
        let d = (self.points[i] - q).norm_squared();
        if d < best.distance_squared || (d == best.distance_squared && i < best.index) {
            *best = Neighbor {
                index: i,
                distance_squared: d,
            };
        }
        let diff = q[axis] - self.points[i][axis];
        let (near, far) = if diff < 0.0 {
            ((&order[..mid], &axes[..mid]), (&order[mid + 1..], &axes[mid + 1..]))
        } else {
            ((&order[mid + 1..], &axes[mid + 1..]), (&order[..mid], &axes[..mid]))
        };
        self.search(near.0, near.1, q, best);
        if diff * diff <= best.distance_squared {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], axes: &mut [u8]) {
    if order.len() <= LEAF {
        return;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (axes_left, axes_rest) = axes.split_at_mut(mid);
    build(points, left, axes_left);
    build(points, &mut rest[1..], &mut axes_rest[1..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn agrees_with_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..200),
            queries in prop::collection::vec(prop::array::uniform3(-6.0f64..6.0), 1..20),
        ) {
            let pts: Vec<_> = pts.into_iter().map(Vector3::from).collect();
            let tree = KdTree::new(&pts);
            for q in queries {
                let q = Vector3::from(q);
                let got = tree.nearest(&q).unwrap();
                let want = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(got.distance_squared, want);
            }
        }
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest(&Vector3::zeros()).is_none());
    }
}
