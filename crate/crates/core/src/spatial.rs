//! Exact KD-tree over k-dimensional points.
//!
//! Used with k = 3 for geometry and k = 33 for FPFH feature matching. All
//! query modes return exactly what a linear scan would, ordered by
//! `(squared distance, index)`.

use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Maximum number of points stored in a leaf.
pub const LEAF_SIZE: usize = 16;

/// Neighborhood query mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SearchParam {
    /// The `max_nn` nearest points.
    Knn { max_nn: usize },
    /// Every point within `radius` (inclusive).
    Radius { radius: f64 },
    /// The nearest points, at most `max_nn`, each within `radius`.
    Hybrid { radius: f64, max_nn: usize },
}

impl SearchParam {
    pub fn validate(&self) -> Result<()> {
        let bad_radius = |r: f64| !(r >= 0.0 && r.is_finite());
        match *self {
            SearchParam::Knn { max_nn: 0 } => Err(Error::invalid("max_nn must be positive")),
            SearchParam::Radius { radius } if bad_radius(radius) => {
                Err(Error::invalid(format!("radius must be finite and non-negative, got {radius}")))
            }
            SearchParam::Hybrid { radius, max_nn } => {
                if bad_radius(radius) {
                    Err(Error::invalid(format!("radius must be finite and non-negative, got {radius}")))
                } else if max_nn == 0 {
                    Err(Error::invalid("max_nn must be positive"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
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
    data: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Neighbors of one query, ascending by `(squared distance, index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances2: Vec<f64>,
}

impl Neighbors {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl KdTree {
    /// Builds a tree over `n = data.len() / dim` points stored row-major.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid("cannot build a KD-tree over zero points"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("KD-tree points must be finite"));
        }
        let n = data.len() / dim;
        let mut tree = KdTree {
            dim,
            data,
            order: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n.div_ceil(LEAF_SIZE)),
        };
        tree.build(0, n);
        Ok(tree)
    }

    pub fn from_points(points: &[Vector3<f64>]) -> Result<Self> {
        let data = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        Self::from_flat(data, 3)
    }

    /// Builds from rows of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::invalid("rows have differing dimensions"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_flat(data, dim.max(1))
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        {
            let (dim, data) = (self.dim, &self.data);
            let key = |i: usize| data[i * dim + axis];
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                key(a).total_cmp(&key(b)).then(a.cmp(&b))
            });
        }
        let value = self.data[self.order[mid] * self.dim + axis];
        self.nodes.push(Node::Split { axis, value, left: 0, right: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.data[i * self.dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// True when the whole tree is a single leaf.
    pub fn root_is_leaf(&self) -> bool {
        matches!(self.nodes[0], Node::Leaf { .. })
    }

    /// Checks the structural invariants: leaf capacity, each point exactly once,
    /// and the split ordering.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![false; self.len()];
        self.check_node(0, &mut seen) && seen.iter().all(|&s| s)
    }

    fn check_node(&self, id: usize, seen: &mut [bool]) -> bool {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                if end - start > LEAF_SIZE {
                    return false;
                }
                for &i in &self.order[start..end] {
                    if std::mem::replace(&mut seen[i], true) {
                        return false;
                    }
                }
                true
            }
            Node::Split { axis, value, left, right } => {
                let ok_side = |node: usize, le: bool| {
                    self.leaf_members(node)
                        .iter()
                        .all(|&i| if le { self.point(i)[axis] <= value } else { self.point(i)[axis] >= value })
                };
                ok_side(left, true) && ok_side(right, false) && self.check_node(left, seen) && self.check_node(right, seen)
            }
        }
    }

    fn leaf_members(&self, id: usize) -> Vec<usize> {
        match self.nodes[id] {
            Node::Leaf { start, end } => self.order[start..end].to_vec(),
            Node::Split { left, right, .. } => {
                let mut v = self.leaf_members(left);
                v.extend(self.leaf_members(right));
                v
            }
        }
    }

    /// Runs one query.
    pub fn search(&self, query: &[f64], param: SearchParam) -> Result<Neighbors> {
        let mut buf = Vec::new();
        self.search_into(query, param, &mut buf)?;
        Ok(Neighbors {
            indices: buf.iter().map(|&(_, i)| i).collect(),
            distances2: buf.iter().map(|&(d, _)| d).collect(),
        })
    }

    pub fn search_point(&self, query: &Vector3<f64>, param: SearchParam) -> Result<Neighbors> {
        self.search(query.as_slice(), param)
    }

    /// Query writing `(squared distance, index)` pairs into a reusable buffer.
    pub fn search_into(&self, query: &[f64], param: SearchParam, out: &mut Vec<(f64, usize)>) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has dimension {}, tree has dimension {}",
                query.len(),
                self.dim
            )));
        }
        param.validate()?;
        out.clear();
        match param {
            SearchParam::Knn { max_nn } => self.knn(0, query, max_nn, f64::INFINITY, out),
            SearchParam::Hybrid { radius, max_nn } => self.knn(0, query, max_nn, radius * radius, out),
            SearchParam::Radius { radius } => {
                self.radius(0, query, radius * radius, out);
                out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
        }
        Ok(())
    }

    /// Nearest neighbor of `query`, if any lies within `max_dist2`.
    pub fn nearest_within(&self, query: &[f64], max_dist2: f64) -> Option<(usize, f64)> {
        debug_assert_eq!(query.len(), self.dim);
        let mut buf = Vec::with_capacity(1);
        self.knn(0, query, 1, max_dist2, &mut buf);
        buf.first().map(|&(d, i)| (i, d))
    }

    // `out` stays sorted ascending and holds at most `k` entries.
    fn knn(&self, id: usize, q: &[f64], k: usize, bound2: f64, out: &mut Vec<(f64, usize)>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(self.point(i), q);
                    if d > bound2 {
                        continue;
                    }
                    let cand = (d, i);
                    if out.len() == k {
                        if !less(cand, out[k - 1]) {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out.partition_point(|&e| less(e, cand));
                    out.insert(pos, cand);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn(near, q, k, bound2, out);
                let worst = if out.len() == k { out[k - 1].0 } else { bound2 };
                if diff * diff <= worst {
                    self.knn(far, q, k, bound2, out);
                }
            }
        }
    }

    fn radius(&self, id: usize, q: &[f64], r2: f64, out: &mut Vec<(f64, usize)>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(self.point(i), q);
                    if d <= r2 {
                        out.push((d, i));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius(right, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn brute(data: &[Vec<f64>], q: &[f64], param: SearchParam) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = data
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match param {
            SearchParam::Knn { max_nn } => all.truncate(max_nn),
            SearchParam::Radius { radius } => all.retain(|e| e.0 <= radius * radius),
            SearchParam::Hybrid { radius, max_nn } => {
                all.retain(|e| e.0 <= radius * radius);
                all.truncate(max_nn);
            }
        }
        all
    }

    fn random_rows(rng: &mut Xoshiro256PlusPlus, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn single_point_is_leaf() {
        let tree = KdTree::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(tree.root_is_leaf());
        let nb = tree.search(&[1.0, 2.0, 3.0], SearchParam::Knn { max_nn: 1 }).unwrap();
        assert_eq!(nb.indices, vec![0]);
        assert_eq!(nb.distances2, vec![0.0]);
    }

    #[test]
    fn empty_and_mismatch_errors() {
        assert!(matches!(KdTree::from_flat(vec![], 3), Err(Error::InvalidArgument(_))));
        let tree = KdTree::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            tree.search(&[0.0, 0.0], SearchParam::Knn { max_nn: 1 }),
            Err(Error::InvalidArgument(_))
        ));
        assert!(tree.search(&[0.0; 3], SearchParam::Knn { max_nn: 0 }).is_err());
    }

    #[test]
    fn zero_radius_off_grid_is_empty() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let rows = random_rows(&mut rng, 200, 3);
        let tree = KdTree::from_rows(&rows).unwrap();
        let nb = tree.search(&[0.123456, 0.654321, 0.5], SearchParam::Radius { radius: 0.0 }).unwrap();
        assert!(nb.is_empty());
    }

    #[test]
    fn stored_point_is_its_own_nearest() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let rows = random_rows(&mut rng, 1000, 3);
        let tree = KdTree::from_rows(&rows).unwrap();
        assert!(tree.check_invariants());
        for i in (0..1000).step_by(37) {
            let nb = tree.search(&rows[i], SearchParam::Knn { max_nn: 1 }).unwrap();
            assert_eq!((nb.indices[0], nb.distances2[0]), (i, 0.0));
        }
    }

    #[test]
    fn matches_linear_scan_3d() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let rows = random_rows(&mut rng, 1000, 3);
        let tree = KdTree::from_rows(&rows).unwrap();
        for t in 0..300 {
            let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
            let param = match t % 3 {
                0 => SearchParam::Knn { max_nn: 1 + t % 40 },
                1 => SearchParam::Radius { radius: 0.05 + 0.001 * t as f64 },
                _ => SearchParam::Hybrid { radius: 0.1, max_nn: 30 },
            };
            let mut got = Vec::new();
            tree.search_into(&q, param, &mut got).unwrap();
            assert_eq!(got, brute(&rows, &q, param), "param {param:?}");
        }
    }

    #[test]
    fn matches_linear_scan_33d() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
        let rows = random_rows(&mut rng, 1000, 33);
        let tree = KdTree::from_rows(&rows).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..33).map(|_| rng.random::<f64>()).collect();
            let got = tree.search(&q, SearchParam::Knn { max_nn: 1 }).unwrap();
            let want = brute(&rows, &q, SearchParam::Knn { max_nn: 1 });
            assert_eq!(got.indices[0], want[0].1);
        }
    }

    #[test]
    fn duplicate_points_break_ties_by_index() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 3) as f64, 0.0, 0.0]).collect();
        let tree = KdTree::from_rows(&rows).unwrap();
        assert!(tree.check_invariants());
        let nb = tree.search(&[0.0, 0.0, 0.0], SearchParam::Knn { max_nn: 5 }).unwrap();
        assert_eq!(nb.indices, vec![0, 3, 6, 9, 12]);
    }

    proptest! {
        #[test]
        fn distances_monotone_and_exact(
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..300),
            q in prop::array::uniform3(-1.5f64..1.5),
            k in 1usize..50,
            r in 0.0f64..1.0,
        ) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
            let tree = KdTree::from_rows(&rows).unwrap();
            prop_assert!(tree.check_invariants());
            for param in [SearchParam::Knn { max_nn: k }, SearchParam::Radius { radius: r }, SearchParam::Hybrid { radius: r, max_nn: k }] {
                let nb = tree.search(&q, param).unwrap();
                prop_assert!(nb.distances2.windows(2).all(|w| w[0] <= w[1]));
                let got: Vec<(f64, usize)> = nb.distances2.iter().copied().zip(nb.indices.iter().copied()).collect();
                prop_assert_eq!(got, brute(&rows, &q, param));
            }
        }
    }
}
