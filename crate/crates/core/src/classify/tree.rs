//! Binary decision trees: CART with Gini impurity for classification and
//! squared-error trees for the boosting stages.
//!
//! Splits are searched exhaustively over every feature and every midpoint
//! between consecutive distinct values; a sample goes left when
//! `x[feature] <= threshold`. Ties in cost go to the lowest feature index,
//! then the lowest threshold.

use rayon::prelude::*;

use super::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf {
        offset: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; every leaf owns `width` consecutive entries of
/// `values`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { offset } => return &self.values[offset..offset + self.width],
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.usize(self.nodes.len());
        for n in &self.nodes {
            match *n {
                Node::Leaf { offset } => {
                    w.u8(0);
                    w.usize(offset);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(1);
                    w.usize(feature);
                    w.f64(threshold);
                    w.usize(left);
                    w.usize(right);
                }
            }
        }
        w.usize(self.width);
        w.f64s(&self.values);
    }

    pub(crate) fn read(r: &mut Reader<'_>, feature_dim: usize) -> Result<Self> {
        let n = r.usize()?;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            nodes.push(match r.u8()? {
                0 => Node::Leaf { offset: r.usize()? },
                1 => Node::Split {
                    feature: r.usize()?,
                    threshold: r.f64()?,
                    left: r.usize()?,
                    right: r.usize()?,
                },
                t => return Err(Error::ModelDecode(format!("bad tree node tag {t}"))),
            });
        }
        let width = r.usize()?;
        let values = r.f64s()?;
        let t = Tree { nodes, width, values };
        t.check(feature_dim)?;
        Ok(t)
    }

    fn check(&self, feature_dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::ModelDecode(format!("malformed tree: {m}")));
        if self.nodes.is_empty() {
            return bad("no nodes");
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { offset } => {
                    if offset + self.width > self.values.len() {
                        return bad("leaf offset out of range");
                    }
                }
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    // preorder: children come after their parent
                    if feature >= feature_dim || left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                        return bad("split references out of range");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Node cost (weighted impurity) from sufficient statistics.
pub(crate) trait Criterion: Sync {
    type Stats: Clone + Send + Sync;
    fn empty(&self) -> Self::Stats;
    fn add(&self, s: &mut Self::Stats, i: usize);
    fn sub(&self, s: &mut Self::Stats, i: usize);
    fn cost(&self, s: &Self::Stats) -> f64;
    fn is_pure(&self, s: &Self::Stats) -> bool;
    fn leaf(&self, idx: &[usize]) -> Vec<f64>;
    fn width(&self) -> usize;
}

/// `n · gini = n − Σ c_k² / n`; leaves hold class frequencies.
pub(crate) struct Gini<'a> {
    pub y: &'a [usize],
    pub n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Stats = (Vec<f64>, f64);

    fn empty(&self) -> Self::Stats {
        (vec![0.0; self.n_classes], 0.0)
    }

    fn add(&self, s: &mut Self::Stats, i: usize) {
        s.0[self.y[i]] += 1.0;
        s.1 += 1.0;
    }

    fn sub(&self, s: &mut Self::Stats, i: usize) {
        s.0[self.y[i]] -= 1.0;
        s.1 -= 1.0;
    }

    fn cost(&self, s: &Self::Stats) -> f64 {
        if s.1 == 0.0 {
            return 0.0;
        }
        s.1 - s.0.iter().map(|c| c * c).sum::<f64>() / s.1
    }

    fn is_pure(&self, s: &Self::Stats) -> bool {
        s.0.iter().filter(|&&c| c > 0.0).count() <= 1
    }

    fn leaf(&self, idx: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes];
        for &i in idx {
            v[self.y[i]] += 1.0;
        }
        let n = idx.len() as f64;
        v.iter_mut().for_each(|c| *c /= n);
        v
    }

    fn width(&self) -> usize {
        self.n_classes
    }
}

/// Sum of squared errors around the node mean; the leaf value is supplied
/// by `leaf_fn` so boosting can use Newton steps.
pub(crate) struct SquaredError<'a, F: Fn(&[usize]) -> f64 + Sync> {
    pub target: &'a [f64],
    pub leaf_fn: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> Criterion for SquaredError<'_, F> {
    type Stats = (f64, f64, f64);

    fn empty(&self) -> Self::Stats {
        (0.0, 0.0, 0.0)
    }

    fn add(&self, s: &mut Self::Stats, i: usize) {
        let t = self.target[i];
        s.0 += t;
        s.1 += t * t;
        s.2 += 1.0;
    }

    fn sub(&self, s: &mut Self::Stats, i: usize) {
        let t = self.target[i];
        s.0 -= t;
        s.1 -= t * t;
        s.2 -= 1.0;
    }

    fn cost(&self, s: &Self::Stats) -> f64 {
        if s.2 <= 0.0 {
            return 0.0;
        }
        (s.1 - s.0 * s.0 / s.2).max(0.0)
    }

    fn is_pure(&self, s: &Self::Stats) -> bool {
        self.cost(s) <= 1e-12 * (1.0 + s.1)
    }

    fn leaf(&self, idx: &[usize]) -> Vec<f64> {
        vec![(self.leaf_fn)(idx)]
    }

    fn width(&self) -> usize {
        1
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Growth {
    pub max_depth: usize,
    pub min_leaf: usize,
}

struct Candidate {
    cost: f64,
    feature: usize,
    threshold: f64,
}

fn better(cost: f64, best: f64) -> bool {
    cost < best - 1e-12 * best.abs().max(1.0)
}

fn best_split_for_feature<C: Criterion>(
    x: &Matrix,
    idx: &[usize],
    f: usize,
    crit: &C,
    total: &C::Stats,
    min_leaf: usize,
) -> Option<Candidate> {
    let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (x.get(i, f), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = order.len();
    let mut left = crit.empty();
    let mut right = total.clone();
    let mut best: Option<Candidate> = None;
    for p in 0..m - 1 {
        crit.add(&mut left, order[p].1);
        crit.sub(&mut right, order[p].1);
        let (a, b) = (order[p].0, order[p + 1].0);
        if a == b {
            continue;
        }
        let nl = p + 1;
        if nl < min_leaf || m - nl < min_leaf {
            continue;
        }
        let cost = crit.cost(&left) + crit.cost(&right);
        if best.as_ref().is_none_or(|c| better(cost, c.cost)) {
            let mut t = a + (b - a) / 2.0;
            if t >= b {
                t = a;
            }
            best = Some(Candidate {
                cost,
                feature: f,
                threshold: t,
            });
        }
    }
    best
}

pub(crate) fn grow<C: Criterion>(x: &Matrix, rows: &[usize], crit: &C, g: Growth) -> Tree {
    let mut tree = Tree {
        nodes: Vec::new(),
        width: crit.width(),
        values: Vec::new(),
    };
    grow_node(x, rows.to_vec(), 0, crit, g, &mut tree);
    tree
}

fn grow_node<C: Criterion>(
    x: &Matrix,
    idx: Vec<usize>,
    depth: usize,
    crit: &C,
    g: Growth,
    tree: &mut Tree,
) -> usize {
    let me = tree.nodes.len();
    let mut total = crit.empty();
    for &i in &idx {
        crit.add(&mut total, i);
    }
    let splittable = depth < g.max_depth && idx.len() >= 2 * g.min_leaf.max(1) && !crit.is_pure(&total);
    let split = if splittable {
        let per_feature: Vec<Option<Candidate>> = (0..x.cols())
            .into_par_iter()
            .map(|f| best_split_for_feature(x, &idx, f, crit, &total, g.min_leaf.max(1)))
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| better(c.cost, b.cost)) {
                best = Some(c);
            }
        }
        best
    } else {
        None
    };
    match split {
        None => {
            let offset = tree.values.len();
            tree.values.extend(crit.leaf(&idx));
            tree.nodes.push(Node::Leaf { offset });
        }
        Some(c) => {
            tree.nodes.push(Node::Leaf { offset: 0 });
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.into_iter().partition(|&i| x.get(i, c.feature) <= c.threshold);
            let left = grow_node(x, l, depth + 1, crit, g, tree);
            let right = grow_node(x, r, depth + 1, crit, g, tree);
            tree.nodes[me] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            };
        }
    }
    me
}

/// CART classification tree over all rows of `x`.
pub fn fit_classification_tree(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
) -> Tree {
    let rows: Vec<usize> = (0..x.rows()).collect();
    grow(
        x,
        &rows,
        &Gini { y, n_classes },
        Growth {
            max_depth,
            min_leaf,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(t: &Tree, x: &Matrix, y: &[usize]) -> f64 {
        let hits = (0..x.rows())
            .filter(|&i| crate::matrix::argmax(t.leaf(x.row(i))) == y[i])
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn step_is_split_at_a_midpoint() {
        let x = Matrix::from_rows(&[[-2.0], [-1.0], [1.0], [3.0]]);
        let y = [0, 0, 1, 1];
        let t = fit_classification_tree(&x, &y, 2, 1, 1);
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 0.0, left: 1, right: 2 });
        assert_eq!(acc(&t, &x, &y), 1.0);
    }

    #[test]
    fn pure_input_is_one_leaf() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        let t = fit_classification_tree(&x, &[2, 2, 2], 3, 5, 1);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.leaf(&[0.0]), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn xor_needs_depth_two() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        let y = [0, 1, 1, 0];
        // every depth-1 stump: one side gets a 1:1 mix, so at most 3 of 4
        // points can be right, and with lowest-index argmax exactly 2
        let t1 = fit_classification_tree(&x, &y, 2, 1, 1);
        assert!(acc(&t1, &x, &y) <= 0.75);
        let t2 = fit_classification_tree(&x, &y, 2, 2, 1);
        assert_eq!(acc(&t2, &x, &y), 1.0);
    }

    #[test]
    fn ties_go_to_the_lowest_feature() {
        // both columns separate perfectly
        let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 6.0]]);
        let t = fit_classification_tree(&x, &[0, 1], 2, 1, 1);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let t = fit_classification_tree(&x, &[0, 1, 1, 1], 2, 3, 2);
        // the only admissible cut is 2|2
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 1.5, left: 1, right: 2 });
        assert_eq!(t.n_leaves(), 2);
    }

    #[test]
    fn hand_built_tree_routes_to_leaf_frequencies() {
        let t = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { offset: 0 },
                Node::Split { feature: 1, threshold: -1.0, left: 3, right: 4 },
                Node::Leaf { offset: 2 },
                Node::Leaf { offset: 4 },
            ],
            width: 2,
            values: vec![0.75, 0.25, 0.1, 0.9, 0.5, 0.5],
        };
        assert_eq!(t.leaf(&[0.5, 9.0]), &[0.75, 0.25]);
        assert_eq!(t.leaf(&[0.6, -1.0]), &[0.1, 0.9]);
        assert_eq!(t.leaf(&[0.6, -0.9]), &[0.5, 0.5]);
        assert_eq!(t.depth(), 2);
    }
}
