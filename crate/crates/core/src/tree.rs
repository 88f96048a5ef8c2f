//! Binary decision trees with vector-valued leaves and the tree-generating prior.
//!
//! Trees are stored flat in preorder: node 0 is the root, the left child of a
//! split at node `i` is `i + 1`, and leaves are numbered `0..L` in the order
//! they are visited. Every structural edit rebuilds that canonical layout, so two
//! trees with the same shape and rules compare equal.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Split `x[var] <= cut` goes left, everything else right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub var: usize,
    pub cut: f64,
}

impl SplitRule {
    pub fn new(var: usize, cut: f64) -> Self {
        Self { var, cut }
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.var] <= self.cut
    }
}

/// Dense row-major matrix used for fast per-observation tree traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl RowMatrix {
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (nrows, ncols) = m.shape();
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            data.extend(m.row(i).iter());
        }
        Self { data, nrows, ncols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        Self {
            data: rows.concat(),
            nrows: rows.len(),
            ncols,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.nrows).map(move |i| self.data[i * self.ncols + j])
    }
}

/// Candidate thresholds per encoded covariate; the universe of splitting rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutpointTable {
    cuts: Vec<Vec<f64>>,
}

impl CutpointTable {
    /// Panics unless every list is strictly increasing and finite.
    pub fn new(cuts: Vec<Vec<f64>>) -> Self {
        for c in &cuts {
            assert!(c.iter().all(|v| v.is_finite()), "non-finite cutpoint");
            assert!(c.windows(2).all(|w| w[0] < w[1]), "cutpoints must be strictly increasing");
        }
        Self { cuts }
    }

    /// Thresholds for each column of `x`.
    ///
    /// A column with at most `n_cutpoints` distinct values gets the midpoints
    /// between consecutive distinct values (so indicators split at 0.5); a richer
    /// column gets `n_cutpoints` equally spaced empirical quantiles at levels
    /// `i / (n_cutpoints + 1)`, deduplicated and kept strictly below the maximum.
    pub fn from_data(x: &RowMatrix, n_cutpoints: usize) -> Self {
        let cuts = (0..x.ncols())
            .map(|j| {
                let mut v: Vec<f64> = x.column(j).collect();
                v.sort_by(f64::total_cmp);
                let mut uniq = v.clone();
                uniq.dedup();
                if uniq.len() <= 1 {
                    return Vec::new();
                }
                if uniq.len() <= n_cutpoints {
                    return uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                }
                let max = *uniq.last().unwrap();
                let mut out: Vec<f64> = (1..=n_cutpoints)
                    .map(|i| crate::metrics::quantile_sorted(&v, i as f64 / (n_cutpoints + 1) as f64))
                    .filter(|&c| c < max)
                    .collect();
                out.dedup();
                out
            })
            .collect();
        Self::new(cuts)
    }

    pub fn n_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, var: usize) -> &[f64] {
        &self.cuts[var]
    }

    /// Number of thresholds `c` with `lo < c < hi`.
    pub fn count_between(&self, var: usize, lo: f64, hi: f64) -> usize {
        let (a, b) = self.range_between(var, lo, hi);
        b - a
    }

    fn range_between(&self, var: usize, lo: f64, hi: f64) -> (usize, usize) {
        let c = &self.cuts[var];
        let a = c.partition_point(|&v| v <= lo);
        let b = c.partition_point(|&v| v < hi);
        (a, b.max(a))
    }

    pub fn nth_between(&self, var: usize, lo: f64, hi: f64, k: usize) -> f64 {
        let (a, b) = self.range_between(var, lo, hi);
        assert!(a + k < b, "rule index out of range");
        self.cuts[var][a + k]
    }

    pub fn contains(&self, var: usize, cut: f64) -> bool {
        var < self.cuts.len() && self.cuts[var].binary_search_by(|v| v.total_cmp(&cut)).is_ok()
    }
}

/// Per-variable open interval `(lo, hi]` of covariate values reaching a node.
pub type Region = Vec<(f64, f64)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { leaf: usize },
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

/// Recursive form used while editing.
#[derive(Debug, Clone)]
enum Shape {
    Leaf,
    Split(SplitRule, Box<Shape>, Box<Shape>),
}

impl Default for DecisionTree {
    fn default() -> Self {
        Self::stump()
    }
}

impl DecisionTree {
    pub fn stump() -> Self {
        Self {
            nodes: vec![Node::Leaf { leaf: 0 }],
            n_leaves: 1,
        }
    }

    /// A tree whose root splits on `rule` with the given subtrees.
    pub fn from_split(rule: SplitRule, left: DecisionTree, right: DecisionTree) -> Self {
        Self::from_shape(&Shape::Split(
            rule,
            Box::new(left.shape(0)),
            Box::new(right.shape(0)),
        ))
    }

    fn from_shape(shape: &Shape) -> Self {
        fn push(shape: &Shape, nodes: &mut Vec<Node>, leaves: &mut usize) -> usize {
            let id = nodes.len();
            match shape {
                Shape::Leaf => {
                    nodes.push(Node::Leaf { leaf: *leaves });
                    *leaves += 1;
                }
                Shape::Split(rule, l, r) => {
                    nodes.push(Node::Leaf { leaf: usize::MAX });
                    let left = push(l, nodes, leaves);
                    let right = push(r, nodes, leaves);
                    nodes[id] = Node::Split {
                        rule: *rule,
                        left,
                        right,
                    };
                }
            }
            id
        }
        let mut nodes = Vec::new();
        let mut n_leaves = 0;
        push(shape, &mut nodes, &mut n_leaves);
        Self { nodes, n_leaves }
    }

    fn shape(&self, id: usize) -> Shape {
        self.edited_shape(id, &|_| None)
    }

    fn edited_shape(&self, id: usize, edit: &dyn Fn(usize) -> Option<Shape>) -> Shape {
        if let Some(s) = edit(id) {
            return s;
        }
        match self.nodes[id] {
            Node::Leaf { .. } => Shape::Leaf,
            Node::Split { rule, left, right } => Shape::Split(
                rule,
                Box::new(self.edited_shape(left, edit)),
                Box::new(self.edited_shape(right, edit)),
            ),
        }
    }

    fn rebuild(&self, edit: &dyn Fn(usize) -> Option<Shape>) -> Self {
        Self::from_shape(&self.edited_shape(0, edit))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves
    }

    pub fn is_stump(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Index of the leaf whose cell contains `x`.
    #[inline]
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { leaf } => return leaf,
                Node::Split { rule, left, right } => {
                    id = if rule.goes_left(x) { left } else { right };
                }
            }
        }
    }

    /// Leaf index of every row.
    pub fn assign(&self, rows: &RowMatrix) -> Vec<usize> {
        (0..rows.nrows()).map(|i| self.leaf_of(rows.row(i))).collect()
    }

    pub fn leaf_counts(&self, assignment: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_leaves];
        for &l in assignment {
            counts[l] += 1;
        }
        counts
    }

    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if let Node::Split { left, right, .. } = self.nodes[i] {
                d[left] = d[i] + 1;
                d[right] = d[i] + 1;
            }
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if let Node::Split { left, right, .. } = self.nodes[i] {
                p[left] = Some(i);
                p[right] = Some(i);
            }
        }
        p
    }

    /// Covariate region reaching each node, as per-variable `(lo, hi]` bounds.
    pub fn regions(&self, n_vars: usize) -> Vec<Region> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        out[0] = vec![(f64::NEG_INFINITY, f64::INFINITY); n_vars];
        for i in 0..self.nodes.len() {
            if let Node::Split { rule, left, right } = self.nodes[i] {
                let mut l = out[i].clone();
                let mut r = out[i].clone();
                l[rule.var].1 = l[rule.var].1.min(rule.cut);
                r[rule.var].0 = r[rule.var].0.max(rule.cut);
                out[left] = l;
                out[right] = r;
            }
        }
        out
    }

    /// Number of splitting rules available at each node: thresholds strictly
    /// inside the node's region, summed over variables.
    pub fn rule_counts(&self, cutpoints: &CutpointTable) -> Vec<usize> {
        self.regions(cutpoints.n_vars())
            .iter()
            .map(|reg| count_rules(reg, cutpoints))
            .collect()
    }

    pub fn leaf_node_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Leaf { .. }))
            .collect()
    }

    pub fn internal_ids(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Split { .. }))
            .collect()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable_ids(&self) -> Vec<usize> {
        let is_leaf = |i: usize| matches!(self.nodes[i], Node::Leaf { .. });
        (0..self.nodes.len())
            .filter(|&i| match self.nodes[i] {
                Node::Split { left, right, .. } => is_leaf(left) && is_leaf(right),
                Node::Leaf { .. } => false,
            })
            .collect()
    }

    /// `(parent, child)` pairs of internal nodes.
    pub fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.nodes.len() {
            if let Node::Split { left, right, .. } = self.nodes[i] {
                for c in [left, right] {
                    if matches!(self.nodes[c], Node::Split { .. }) {
                        out.push((i, c));
                    }
                }
            }
        }
        out
    }

    pub fn rule(&self, node: usize) -> Option<SplitRule> {
        match self.nodes[node] {
            Node::Split { rule, .. } => Some(rule),
            Node::Leaf { .. } => None,
        }
    }

    pub fn split_rules(&self) -> impl Iterator<Item = SplitRule> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { rule, .. } => Some(*rule),
            Node::Leaf { .. } => None,
        })
    }

    /// Split leaf node `node` on `rule`.
    pub fn grow(&self, node: usize, rule: SplitRule) -> Self {
        assert!(matches!(self.nodes[node], Node::Leaf { .. }), "grow needs a leaf");
        self.rebuild(&|id| {
            (id == node).then(|| Shape::Split(rule, Box::new(Shape::Leaf), Box::new(Shape::Leaf)))
        })
    }

    /// Collapse internal node `node` (whose children are leaves) into a leaf.
    pub fn prune(&self, node: usize) -> Self {
        assert!(self.prunable_ids().contains(&node), "prune needs a node with two leaf children");
        self.rebuild(&|id| (id == node).then_some(Shape::Leaf))
    }

    /// Replace the rule of internal node `node`.
    pub fn change(&self, node: usize, rule: SplitRule) -> Self {
        let mut t = self.clone();
        match &mut t.nodes[node] {
            Node::Split { rule: r, .. } => *r = rule,
            Node::Leaf { .. } => panic!("change needs an internal node"),
        }
        t
    }

    /// Exchange the rules of two internal nodes.
    pub fn swap(&self, a: usize, b: usize) -> Self {
        let ra = self.rule(a).expect("swap needs internal nodes");
        let rb = self.rule(b).expect("swap needs internal nodes");
        self.change(a, rb).change(b, ra)
    }
}

fn count_rules(region: &Region, cutpoints: &CutpointTable) -> usize {
    region
        .iter()
        .enumerate()
        .map(|(v, &(lo, hi))| cutpoints.count_between(v, lo, hi))
        .sum()
}

/// The `k`-th available rule (variables in order, thresholds ascending) in `region`.
pub fn nth_rule(region: &Region, cutpoints: &CutpointTable, mut k: usize) -> SplitRule {
    for (v, &(lo, hi)) in region.iter().enumerate() {
        let c = cutpoints.count_between(v, lo, hi);
        if k < c {
            return SplitRule::new(v, cutpoints.nth_between(v, lo, hi, k));
        }
        k -= c;
    }
    panic!("rule index out of range")
}

fn rule_available(region: &Region, rule: &SplitRule, cutpoints: &CutpointTable) -> bool {
    let (lo, hi) = region[rule.var];
    lo < rule.cut && rule.cut < hi && cutpoints.contains(rule.var, rule.cut)
}

/// Log probability of `tree` under the tree-generating prior.
///
/// A node at depth `d` splits with probability `a * gamma^d` and draws its rule
/// uniformly from the rules available in its region. A node with no available
/// rule cannot split, so it is a leaf with probability one. Returns `-inf` when
/// an internal node's rule is not available in its region.
pub fn log_tree_prior(tree: &DecisionTree, a: f64, gamma: f64, cutpoints: &CutpointTable) -> f64 {
    let depths = tree.depths();
    let regions = tree.regions(cutpoints.n_vars());
    let mut lp = 0.0;
    for (i, node) in tree.nodes().iter().enumerate() {
        let n_rules = count_rules(&regions[i], cutpoints);
        let p_split = a * gamma.powi(depths[i] as i32);
        match node {
            Node::Leaf { .. } => {
                if n_rules > 0 {
                    lp += (1.0 - p_split).ln();
                }
            }
            Node::Split { rule, .. } => {
                if n_rules == 0 || !rule_available(&regions[i], rule, cutpoints) {
                    return f64::NEG_INFINITY;
                }
                lp += p_split.ln() - (n_rules as f64).ln();
            }
        }
    }
    lp
}

/// Leaf parameters of one tree: an `L x J` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    n_basis: usize,
    values: Vec<f64>,
}

impl NodeParams {
    pub fn filled(n_leaves: usize, row: &[f64]) -> Self {
        Self {
            n_basis: row.len(),
            values: row.repeat(n_leaves),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_basis = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_basis), "ragged leaf parameters");
        Self {
            n_basis,
            values: rows.concat(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.values.len().checked_div(self.n_basis).unwrap_or(0)
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    #[inline]
    pub fn row(&self, leaf: usize) -> &[f64] {
        &self.values[leaf * self.n_basis..(leaf + 1) * self.n_basis]
    }

    #[inline]
    pub fn row_mut(&mut self, leaf: usize) -> &mut [f64] {
        &mut self.values[leaf * self.n_basis..(leaf + 1) * self.n_basis]
    }

    /// Multiply component `j` of every leaf by `c`.
    pub fn scale_component(&mut self, j: usize, c: f64) {
        for row in self.values.chunks_mut(self.n_basis) {
            row[j] *= c;
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_basis.max(1)).map(<[f64]>::to_vec).collect()
    }
}

impl Serialize for NodeParams {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for NodeParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n_basis = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_basis) {
            return Err(serde::de::Error::custom("ragged leaf parameters"));
        }
        Ok(Self::from_rows(rows))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SerialNode {
    Split {
        split: SplitRule,
        left: Box<SerialNode>,
        right: Box<SerialNode>,
    },
    Leaf {
        leaf: usize,
    },
}

impl DecisionTree {
    fn to_serial(&self, id: usize) -> SerialNode {
        match self.nodes[id] {
            Node::Leaf { leaf } => SerialNode::Leaf { leaf },
            Node::Split { rule, left, right } => SerialNode::Split {
                split: rule,
                left: Box::new(self.to_serial(left)),
                right: Box::new(self.to_serial(right)),
            },
        }
    }
}

fn serial_to_shape(n: &SerialNode) -> Shape {
    match n {
        SerialNode::Leaf { .. } => Shape::Leaf,
        SerialNode::Split { split, left, right } => Shape::Split(
            *split,
            Box::new(serial_to_shape(left)),
            Box::new(serial_to_shape(right)),
        ),
    }
}

impl Serialize for DecisionTree {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_serial(0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DecisionTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let serial = SerialNode::deserialize(d)?;
        Ok(Self::from_shape(&serial_to_shape(&serial)))
    }
}

/// One multivariate regression tree: structure plus leaf parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub tree: DecisionTree,
    pub mu: NodeParams,
}

impl RegressionTree {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> &[f64] {
        self.mu.row(self.tree.leaf_of(x))
    }
}

/// Sum-of-trees map `g(x) = sum_t g(x; T_t, M_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ensemble {
    pub trees: Vec<RegressionTree>,
}

impl Ensemble {
    /// `n_trees` stumps, each predicting `leaf`.
    pub fn stumps(n_trees: usize, leaf: &[f64]) -> Self {
        Self {
            trees: (0..n_trees)
                .map(|_| RegressionTree {
                    tree: DecisionTree::stump(),
                    mu: NodeParams::filled(1, leaf),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn n_basis(&self) -> usize {
        self.trees.first().map_or(0, |t| t.mu.n_basis())
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.eval(x)) {
                *o += v;
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.predict_into(x, &mut out);
        out
    }
}

/// Ensemble prediction `g(x)` as a free function.
pub fn ensemble_predict(ens: &Ensemble, x: &[f64]) -> Vec<f64> {
    ens.predict(x)
}

/// Average over trees with at least one split of the fraction of that tree's
/// rules using each variable. All-stump ensembles give the zero vector.
pub fn splitting_proportions(ens: &Ensemble, n_vars: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n_vars];
    let mut used = 0usize;
    for t in &ens.trees {
        let n_int = t.tree.n_internal();
        if n_int == 0 {
            continue;
        }
        used += 1;
        for rule in t.tree.split_rules() {
            acc[rule.var] += 1.0 / n_int as f64;
        }
    }
    if used > 0 {
        for a in &mut acc {
            *a /= used as f64;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leaf_pair(rule: SplitRule) -> DecisionTree {
        DecisionTree::from_split(rule, DecisionTree::stump(), DecisionTree::stump())
    }

    #[test]
    fn stump_maps_everything_to_leaf_zero() {
        let t = DecisionTree::stump();
        assert_eq!(t.leaf_of(&[0.3, 10.0]), 0);
        assert_eq!(t.leaf_of(&[-5.0, 0.0]), 0);
    }

    #[test]
    fn root_split_sends_small_values_left() {
        let t = leaf_pair(SplitRule::new(0, 0.5));
        assert_eq!(t.leaf_of(&[0.3]), 0);
        assert_eq!(t.leaf_of(&[0.5]), 0);
        assert_eq!(t.leaf_of(&[0.7]), 1);
    }

    #[test]
    fn two_level_tree_traces_left_right() {
        let left = leaf_pair(SplitRule::new(1, 0.2));
        let t = DecisionTree::from_split(SplitRule::new(0, 0.5), left, DecisionTree::stump());
        // leaves in preorder: left-left = 0, left-right = 1, right = 2
        assert_eq!(t.leaf_of(&[0.3, 0.7]), 1);
        assert_eq!(t.leaf_of(&[0.3, 0.1]), 0);
        assert_eq!(t.leaf_of(&[0.9, 0.1]), 2);
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.depths(), vec![0, 1, 2, 2, 1]);
    }

    #[test]
    fn ensemble_sums_leaf_rows() {
        let e = Ensemble::stumps(1, &[1.0, 2.0]);
        assert_eq!(ensemble_predict(&e, &[0.0]), vec![1.0, 2.0]);

        let mut two = Ensemble::stumps(2, &[0.0, 0.0]);
        two.trees[0].mu = NodeParams::filled(1, &[1.0, 0.0]);
        two.trees[1].mu = NodeParams::filled(1, &[0.0, 1.0]);
        assert_eq!(two.predict(&[0.0]), vec![1.0, 1.0]);

        let mut mixed = Ensemble::stumps(2, &[1.0, 1.0]);
        mixed.trees[1] = RegressionTree {
            tree: leaf_pair(SplitRule::new(0, 0.5)),
            mu: NodeParams::from_rows(vec![vec![2.0, 0.0], vec![-1.0, 5.0]]),
        };
        assert_eq!(mixed.predict(&[0.2]), vec![3.0, 1.0]);
    }

    #[test]
    fn stump_prior() {
        let cuts = CutpointTable::new(vec![vec![0.5]]);
        let lp = log_tree_prior(&DecisionTree::stump(), 0.95, 0.5, &cuts);
        assert_relative_eq!(lp, 0.05f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn depth_one_prior_matches_formula() {
        // 100 rules at the root, children keep rules available on the other variable
        let cuts = CutpointTable::new(vec![
            (1..=50).map(|i| i as f64).collect(),
            (1..=50).map(|i| i as f64).collect(),
        ]);
        let t = leaf_pair(SplitRule::new(0, 10.0));
        let expect = 0.95f64.ln() + (1.0f64 / 100.0).ln() + 2.0 * (1.0f64 - 0.475).ln();
        assert_relative_eq!(log_tree_prior(&t, 0.95, 0.5, &cuts), expect, max_relative = 1e-12);
    }

    #[test]
    fn unavailable_rule_has_zero_prior() {
        let cuts = CutpointTable::new(vec![vec![0.25, 0.5, 0.75]]);
        // right child of x <= 0.5 cannot split again at 0.25
        let t = DecisionTree::from_split(
            SplitRule::new(0, 0.5),
            DecisionTree::stump(),
            leaf_pair(SplitRule::new(0, 0.25)),
        );
        assert_eq!(log_tree_prior(&t, 0.95, 0.5, &cuts), f64::NEG_INFINITY);
    }

    #[test]
    fn small_gamma_crushes_deep_trees() {
        let cuts = CutpointTable::new(vec![(1..=9).map(|i| i as f64 / 10.0).collect()]);
        let shallow = leaf_pair(SplitRule::new(0, 0.5));
        let deep = shallow.grow(1, SplitRule::new(0, 0.2));
        let gap = |g: f64| log_tree_prior(&deep, 0.95, g, &cuts) - log_tree_prior(&shallow, 0.95, g, &cuts);
        assert!(gap(1e-3) < gap(1e-1));
        assert!(gap(1e-12) < -20.0);
    }

    #[test]
    fn grow_then_prune_restores() {
        let t = leaf_pair(SplitRule::new(0, 0.5));
        let leaves = t.leaf_node_ids();
        let grown = t.grow(leaves[1], SplitRule::new(1, 0.3));
        assert_eq!(grown.n_leaves(), 3);
        let node = grown.prunable_ids()[0];
        assert_eq!(grown.prune(node), t);
    }

    #[test]
    fn swap_exchanges_rules() {
        let t = DecisionTree::from_split(
            SplitRule::new(0, 0.5),
            leaf_pair(SplitRule::new(1, 0.2)),
            DecisionTree::stump(),
        );
        assert_eq!(t.swappable_pairs(), vec![(0, 1)]);
        let s = t.swap(0, 1);
        assert_eq!(s.rule(0), Some(SplitRule::new(1, 0.2)));
        assert_eq!(s.rule(1), Some(SplitRule::new(0, 0.5)));
    }

    #[test]
    fn splitting_proportion_examples() {
        let mut e = Ensemble::stumps(1, &[0.0]);
        e.trees[0].tree = leaf_pair(SplitRule::new(2, 0.5));
        e.trees[0].mu = NodeParams::filled(2, &[0.0]);
        assert_eq!(splitting_proportions(&e, 4), vec![0.0, 0.0, 1.0, 0.0]);

        let three = DecisionTree::from_split(
            SplitRule::new(0, 0.5),
            leaf_pair(SplitRule::new(0, 0.2)),
            leaf_pair(SplitRule::new(1, 0.3)),
        );
        let mut e = Ensemble::stumps(2, &[0.0]);
        e.trees[0].tree = three;
        e.trees[0].mu = NodeParams::filled(4, &[0.0]);
        let s = splitting_proportions(&e, 3);
        assert_relative_eq!(s[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(s[1], 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(s[2], 0.0);

        assert_eq!(splitting_proportions(&Ensemble::stumps(3, &[1.0]), 2), vec![0.0, 0.0]);
    }

    #[test]
    fn cutpoints_for_indicators_and_continuous() {
        let x = RowMatrix::from_rows(&[
            vec![0.0, 0.1],
            vec![1.0, 0.4],
            vec![1.0, 0.2],
            vec![0.0, 0.9],
        ]);
        let c = CutpointTable::from_data(&x, 100);
        assert_eq!(c.cuts(0), &[0.5]);
        assert_eq!(c.cuts(1).len(), 3);
        let many: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64]).collect();
        let c = CutpointTable::from_data(&RowMatrix::from_rows(&many), 100);
        assert_eq!(c.cuts(0).len(), 100);
        assert!(c.cuts(0).iter().all(|&v| v > 0.0 && v < 499.0));
    }

    #[test]
    fn serialization_round_trip() {
        let t = DecisionTree::from_split(
            SplitRule::new(0, 0.5),
            leaf_pair(SplitRule::new(1, 0.25)),
            DecisionTree::stump(),
        );
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"{"split":{"var":0,"cut":0.5},"left":{"split":{"var":1,"cut":0.25},"left":{"leaf":0},"right":{"leaf":1}},"right":{"leaf":2}}"#
        );
        let back: DecisionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let mu = NodeParams::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(serde_json::to_string(&mu).unwrap(), "[[1.0,2.0],[3.0,4.0]]");
    }
}
