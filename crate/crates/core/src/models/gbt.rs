//! Gradient-boosted regression trees for the logistic loss with second-order
//! leaf values and exact greedy split search.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::{sigmoid, Matrix};
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    /// Weight positives by the negative/positive ratio of the training rows.
    pub class_weighting: bool,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { n_rounds: 100, learning_rate: 0.3, max_depth: 5, lambda: 1.0, min_child_weight: 1.0, class_weighting: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { column: usize, threshold: f64, missing_goes_left: bool, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Binary tree stored as a flat node array; node 0 is the root. Rows with
/// `x[column] < threshold` go left; NaN follows `missing_goes_left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NestedNode", try_from = "NestedNode")]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

/// Serialized form: nested nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NestedNode {
    Split { column: usize, threshold: f64, missing_goes_left: bool, left: Box<NestedNode>, right: Box<NestedNode> },
    Leaf { leaf: f64 },
}

impl From<RegressionTree> for NestedNode {
    fn from(t: RegressionTree) -> Self {
        fn build(nodes: &[Node], i: usize) -> NestedNode {
            match nodes[i] {
                Node::Leaf { value } => NestedNode::Leaf { leaf: value },
                Node::Split { column, threshold, missing_goes_left, left, right } => NestedNode::Split {
                    column,
                    threshold,
                    missing_goes_left,
                    left: Box::new(build(nodes, left)),
                    right: Box::new(build(nodes, right)),
                },
            }
        }
        build(&t.nodes, 0)
    }
}

impl TryFrom<NestedNode> for RegressionTree {
    type Error = String;

    fn try_from(root: NestedNode) -> Result<Self, Self::Error> {
        fn flatten(n: NestedNode, out: &mut Vec<Node>) -> usize {
            let idx = out.len();
            match n {
                NestedNode::Leaf { leaf } => out.push(Node::Leaf { value: leaf }),
                NestedNode::Split { column, threshold, missing_goes_left, left, right } => {
                    out.push(Node::Leaf { value: 0.0 });
                    let l = flatten(*left, out);
                    let r = flatten(*right, out);
                    out[idx] = Node::Split { column, threshold, missing_goes_left, left: l, right: r };
                }
            }
            idx
        }
        let mut nodes = Vec::new();
        flatten(root, &mut nodes);
        Ok(RegressionTree { nodes })
    }
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    /// Index of the leaf that `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { column, threshold, missing_goes_left, left, right } => {
                    let x = row[column];
                    let go_left = if x.is_nan() { missing_goes_left } else { x < threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn depth(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + depth(nodes, left).max(depth(nodes, right)),
            }
        }
        depth(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    /// Log-odds of the weighted base rate.
    pub base_score: f64,
    pub lambda: f64,
    pub n_rounds: usize,
    pub min_child_weight: f64,
    pub max_depth: usize,
    pub n_features: usize,
}

impl GbtModel {
    /// Margin using only the first `rounds` trees.
    pub fn margin_row(&self, row: &[f64], rounds: usize) -> f64 {
        self.base_score + self.learning_rate * self.trees[..rounds].iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        if x.cols() != self.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.n_features, got: x.cols() });
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.margin_row(r, self.trees.len()))).collect())
    }
}

/// Gain of splitting a node with sums (G, H) into (GL, HL) and (G-GL, H-HL).
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

pub fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub column: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_hessian: f64,
    pub right_hessian: f64,
}

/// Midpoint of two consecutive distinct values, nudged up to `hi` if the
/// midpoint is not representable strictly above `lo`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

struct Frontier {
    /// Node index in the tree under construction.
    node: usize,
    g: f64,
    h: f64,
}

#[derive(Clone, Copy)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: f64,
    started: bool,
}

/// Rows of each column sorted by value (ties by row index).
fn presort(x: &Matrix) -> Vec<Vec<(u32, f64)>> {
    (0..x.cols())
        .map(|j| {
            let mut col: Vec<(u32, f64)> = (0..x.rows()).map(|i| (i as u32, x.get(i, j))).collect();
            col.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            col
        })
        .collect()
}

fn grow_tree(
    x: &Matrix,
    sorted: &[Vec<(u32, f64)>],
    grad: &[f64],
    hess: &[f64],
    config: &GbtConfig,
) -> RegressionTree {
    let n = grad.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // frontier slot of each row, or usize::MAX once it sits in a finished leaf
    let mut slot_of = vec![0usize; n];
    let mut frontier = vec![Frontier { node: 0, g: grad.iter().sum(), h: hess.iter().sum() }];

    for depth in 0..=config.max_depth {
        let mut best: Vec<Option<SplitCandidate>> = vec![None; frontier.len()];
        if depth < config.max_depth {
            let mut state = vec![ScanState { gl: 0.0, hl: 0.0, last: 0.0, started: false }; frontier.len()];
            for (column, col) in sorted.iter().enumerate() {
                for s in state.iter_mut() {
                    *s = ScanState { gl: 0.0, hl: 0.0, last: 0.0, started: false };
                }
                for &(row, value) in col {
                    let slot = slot_of[row as usize];
                    if slot == usize::MAX {
                        continue;
                    }
                    let st = &mut state[slot];
                    if st.started && value > st.last {
                        let f = &frontier[slot];
                        let (gr, hr) = (f.g - st.gl, f.h - st.hl);
                        if st.hl >= config.min_child_weight && hr >= config.min_child_weight {
                            let gain = split_gain(st.gl, st.hl, gr, hr, config.lambda);
                            if gain > 0.0 && best[slot].is_none_or(|b| gain > b.gain) {
                                best[slot] = Some(SplitCandidate {
                                    column,
                                    threshold: midpoint(st.last, value),
                                    gain,
                                    left_hessian: st.hl,
                                    right_hessian: hr,
                                });
                            }
                        }
                    }
                    st.gl += grad[row as usize];
                    st.hl += hess[row as usize];
                    st.last = value;
                    st.started = true;
                }
            }
        }

        // Expand the frontier; children sums are recomputed from routed rows.
        let mut next = Vec::new();
        let mut child_slot = vec![(usize::MAX, usize::MAX); frontier.len()];
        for (slot, f) in frontier.iter().enumerate() {
            match best[slot] {
                Some(split) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[f.node] = Node::Split {
                        column: split.column,
                        threshold: split.threshold,
                        // Unseen missing values follow the heavier child.
                        missing_goes_left: split.left_hessian >= split.right_hessian,
                        left,
                        right,
                    };
                    child_slot[slot] = (next.len(), next.len() + 1);
                    next.push(Frontier { node: left, g: 0.0, h: 0.0 });
                    next.push(Frontier { node: right, g: 0.0, h: 0.0 });
                }
                None => nodes[f.node] = Node::Leaf { value: leaf_value(f.g, f.h, config.lambda) },
            }
        }
        if next.is_empty() {
            break;
        }
        for row in 0..n {
            let slot = slot_of[row];
            if slot == usize::MAX {
                continue;
            }
            let (l, r) = child_slot[slot];
            if l == usize::MAX {
                slot_of[row] = usize::MAX;
                continue;
            }
            let Node::Split { column, threshold, .. } = nodes[frontier[slot].node] else { unreachable!() };
            let target = if x.get(row, column) < threshold { l } else { r };
            slot_of[row] = target;
            next[target].g += grad[row];
            next[target].h += hess[row];
        }
        frontier = next;
    }
    RegressionTree { nodes }
}

pub fn train_gbt(x: &DesignMatrix, config: &GbtConfig) -> Result<GbtModel, ModelError> {
    super::require_both_classes(&x.labels)?;
    if !(config.learning_rate > 0.0 && config.lambda >= 0.0 && config.min_child_weight >= 0.0) {
        return Err(ModelError::InvalidConfig("learning rate must be positive; lambda and min_child_weight non-negative".into()));
    }
    let n = x.rows();
    let w = &x.sample_weights;
    let y: Vec<f64> = x.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let wsum: f64 = w.iter().sum();
    let wpos: f64 = w.iter().zip(&y).map(|(w, y)| w * y).sum();
    let base_rate = wpos / wsum;
    let base_score = (base_rate / (1.0 - base_rate)).ln();

    let sorted = presort(&x.values);
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..config.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = w[i] * (p - y[i]);
            hess[i] = w[i] * p * (1.0 - p);
        }
        let tree = grow_tree(&x.values, &sorted, &grad, &hess, config);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += config.learning_rate * tree.predict_row(x.values.row(i));
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        trees,
        learning_rate: config.learning_rate,
        base_score,
        lambda: config.lambda,
        n_rounds: config.n_rounds,
        min_child_weight: config.min_child_weight,
        max_depth: config.max_depth,
        n_features: x.cols(),
    })
}

/// Fit one tree to fixed gradients and hessians.
pub fn fit_tree(x: &Matrix, grad: &[f64], hess: &[f64], config: &GbtConfig) -> RegressionTree {
    grow_tree(x, &presort(x), grad, hess, config)
}

/// Exhaustive search for the best root split: every column, every threshold
/// between consecutive distinct values, evaluated from scratch.
pub fn brute_force_best_split(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    min_child_weight: f64,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    for column in 0..x.cols() {
        let mut values = x.column(column);
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let threshold = midpoint(pair[0], pair[1]);
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..x.rows() {
                if x.get(i, column) < threshold {
                    gl += grad[i];
                    hl += hess[i];
                } else {
                    gr += grad[i];
                    hr += hess[i];
                }
            }
            if hl < min_child_weight || hr < min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, lambda);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate { column, threshold, gain, left_hessian: hl, right_hessian: hr });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn synthetic(n: usize, d: usize, seed: u64) -> DesignMatrix {
        let mut rng = rng_from_seed(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_vec(n, d, data);
        let labels = (0..n)
            .map(|i| {
                let r = m.row(i);
                let eta = 2.0 * r[0] * r[1] + if r[2] > 0.3 { 1.5 } else { -0.5 };
                rng.random::<f64>() < sigmoid(eta)
            })
            .collect();
        DesignMatrix::new(m, labels)
    }

    fn weighted_logloss(model: &GbtModel, x: &DesignMatrix, rounds: usize) -> f64 {
        (0..x.rows())
            .map(|i| {
                let z = model.margin_row(x.values.row(i), rounds);
                let y = if x.labels[i] { 1.0 } else { 0.0 };
                x.sample_weights[i] * (crate::matrix::softplus(z) - y * z)
            })
            .sum()
    }

    #[test]
    fn zero_rounds_predict_weighted_base_rate() {
        let x = synthetic(50, 3, 1);
        let w = crate::preprocess::compute_class_weights(&x.labels).unwrap();
        let x = x.with_weights(w);
        let m = train_gbt(&x, &GbtConfig { n_rounds: 0, ..Default::default() }).unwrap();
        // class weighting makes the weighted base rate exactly one half
        for p in m.predict_proba(&x.values).unwrap() {
            assert!((p - 0.5).abs() < 1e-12);
        }
        let x = synthetic(50, 3, 1);
        let m = train_gbt(&x, &GbtConfig { n_rounds: 0, ..Default::default() }).unwrap();
        let rate = x.labels.iter().filter(|&&y| y).count() as f64 / 50.0;
        assert!((m.predict_proba(&x.values).unwrap()[0] - rate).abs() < 1e-12);
    }

    #[test]
    fn balanced_depth_zero_round_keeps_one_half() {
        let x = DesignMatrix::new(Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]), vec![true, false, true, false]);
        let cfg = GbtConfig { n_rounds: 1, max_depth: 0, ..Default::default() };
        let m = train_gbt(&x, &cfg).unwrap();
        assert_eq!(m.trees[0].nodes, vec![Node::Leaf { value: 0.0 }]);
        assert_eq!(m.predict_proba(&x.values).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn single_leaf_prediction() {
        let m = GbtModel {
            trees: vec![RegressionTree::leaf(1.0)],
            learning_rate: 0.3,
            base_score: 0.0,
            lambda: 1.0,
            n_rounds: 1,
            min_child_weight: 1.0,
            max_depth: 5,
            n_features: 1,
        };
        let p = m.predict_proba(&Matrix::from_rows(&[[0.0]])).unwrap();
        assert!((p[0] - 0.574442516811659).abs() < 1e-12);
        let empty = GbtModel { trees: vec![], ..m.clone() };
        assert_eq!(empty.predict_proba(&Matrix::from_rows(&[[0.0]])).unwrap(), vec![0.5]);
        let mut zero = m.clone();
        zero.trees.push(RegressionTree::leaf(0.0));
        let probe = Matrix::from_rows(&[[1.0], [-4.0]]);
        assert_eq!(zero.predict_proba(&probe).unwrap(), m.predict_proba(&probe).unwrap());
        assert!(matches!(m.predict_proba(&Matrix::from_rows(&[[1.0, 2.0]])), Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn root_split_matches_brute_force() {
        let mut rng = rng_from_seed(77);
        for case in 0..20 {
            // Few distinct values so that thresholds and ties get exercised.
            let data: Vec<f64> = (0..12).map(|_| rng.random_range(0..5) as f64).collect();
            let x = Matrix::from_vec(6, 2, data);
            let grad: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hess: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.25)).collect();
            let cfg = GbtConfig { max_depth: 1, min_child_weight: 0.1, ..Default::default() };
            let tree = fit_tree(&x, &grad, &hess, &cfg);
            let oracle = brute_force_best_split(&x, &grad, &hess, cfg.lambda, cfg.min_child_weight);
            match (oracle, &tree.nodes[0]) {
                (None, Node::Leaf { .. }) => {}
                (Some(o), Node::Split { column, threshold, .. }) => {
                    assert_eq!((o.column, o.threshold), (*column, *threshold), "case {case}");
                }
                (o, n) => panic!("case {case}: oracle {o:?}, tree root {n:?}"),
            }
        }
    }

    #[test]
    fn leaves_equal_newton_step_of_routed_rows() {
        let x = synthetic(300, 4, 3);
        let w = crate::preprocess::compute_class_weights(&x.labels).unwrap();
        let x = x.with_weights(w);
        let cfg = GbtConfig { n_rounds: 15, ..Default::default() };
        let m = train_gbt(&x, &cfg).unwrap();
        for (t, tree) in m.trees.iter().enumerate() {
            assert!(tree.depth() <= 5);
            let mut sums = vec![(0.0, 0.0); tree.nodes.len()];
            for i in 0..x.rows() {
                let row = x.values.row(i);
                let p = sigmoid(m.margin_row(row, t));
                let y = if x.labels[i] { 1.0 } else { 0.0 };
                let leaf = tree.leaf_index(row);
                sums[leaf].0 += x.sample_weights[i] * (p - y);
                sums[leaf].1 += x.sample_weights[i] * p * (1.0 - p);
            }
            for (k, node) in tree.nodes.iter().enumerate() {
                if let Node::Leaf { value } = node {
                    let expected = -sums[k].0 / (sums[k].1 + cfg.lambda);
                    assert!((value - expected).abs() <= 1e-10, "tree {t} leaf {k}");
                }
            }
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let x = synthetic(400, 5, 9);
        let w = crate::preprocess::compute_class_weights(&x.labels).unwrap();
        let x = x.with_weights(w);
        let m = train_gbt(&x, &GbtConfig::default()).unwrap();
        let losses: Vec<f64> = (0..=m.trees.len()).map(|r| weighted_logloss(&m, &x, r)).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
    }

    #[test]
    fn rank_transform_preserves_training_predictions() {
        let x = synthetic(200, 3, 4);
        let mut ranked = x.clone();
        for j in 0..x.cols() {
            let col = x.values.column(j);
            for i in 0..x.rows() {
                // strictly increasing map: rank among distinct values
                let r = col.iter().filter(|&&v| v < col[i]).count() as f64;
                ranked.values.set(i, j, r * 3.0 - 7.0);
            }
        }
        let cfg = GbtConfig { n_rounds: 20, ..Default::default() };
        let a = train_gbt(&x, &cfg).unwrap();
        let b = train_gbt(&ranked, &cfg).unwrap();
        for r in 0..=20 {
            for i in 0..x.rows() {
                assert_eq!(a.margin_row(x.values.row(i), r), b.margin_row(ranked.values.row(i), r));
            }
        }
    }

    #[test]
    fn deterministic_serialization_round_trip() {
        let x = synthetic(150, 3, 5);
        let cfg = GbtConfig { n_rounds: 10, ..Default::default() };
        let a = serde_json::to_string(&train_gbt(&x, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&train_gbt(&x, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: GbtModel = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    #[test]
    fn single_class_rejected() {
        let x = DesignMatrix::new(Matrix::from_rows(&[[0.0], [1.0]]), vec![true, true]);
        assert!(matches!(train_gbt(&x, &GbtConfig::default()), Err(ModelError::SingleClass)));
    }
}
