//! Gradient-boosted regression trees with squared-error loss.
//!
//! Each tree is a depth-limited CART fit to the current residuals. Splits
//! are searched exhaustively over every feature with thresholds at midpoints
//! between consecutive distinct values; rows with `x <= threshold` go left.
//! A leaf stores the mean residual of its rows, and
//! `prediction = base_score + learning_rate * sum(tree outputs)`.
//!
//! Training rows are first put in a canonical order (lexicographic on
//! features, then target). Every sum and tie-break after that follows the
//! canonical order, so any permutation of the training rows produces the
//! same model bit for bit.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeatureVector, SimRng, FEATURE_COUNT};
use crate::sim::SweepRow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbmError {
    #[error("training error: {0}")]
    Training(String),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model document: {0}")]
    InvalidModel(String),
}

pub type Result<T, E = GbmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each tree; 1.0
    /// disables subsampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 3,
            learning_rate: 0.05,
            min_samples_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(GbmError::Training(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbmError::Training(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(GbmError::Training(format!(
                "subsample {} outside (0, 1]",
                self.subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary tree stored as a node array; node 0 is the root and children
/// always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub feature_count: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbmModel {
    /// A model with no trees; predicts `base_score` everywhere.
    pub fn constant(feature_count: usize, base_score: f64, learning_rate: f64) -> Self {
        Self {
            feature_count,
            base_score,
            learning_rate,
            trees: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(GbmError::FeatureCount {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(self.predict_row(x))
    }

    pub fn predict_features(&self, x: &FeatureVector) -> Result<f64> {
        self.predict(&x.to_array())
    }

    /// Prediction without the length check; `x` must have `feature_count`
    /// entries.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_first(x, self.trees.len())
    }

    /// Prediction using only the first `k` trees.
    pub fn predict_first(&self, x: &[f64], k: usize) -> f64 {
        let sum: f64 = self.trees[..k].iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Leaf value reached in every tree, in tree order.
    pub fn leaf_values(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Training-set MSE after 0, 1, ..., n trees.
    pub fn staged_mse(&self, x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let mut preds = vec![self.base_score; y.len()];
        let mse =
            |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
        let mut out = vec![mse(&preds)];
        for tree in &self.trees {
            for (p, row) in preds.iter_mut().zip(x) {
                *p += self.learning_rate * tree.predict(row);
            }
            out.push(mse(&preds));
        }
        out
    }
}

fn check_training_data(x: &[Vec<f64>], y: &[f64], params: &TrainParams) -> Result<usize> {
    params.validate()?;
    if x.is_empty() {
        return Err(GbmError::Training("empty training data".into()));
    }
    if x.len() != y.len() {
        return Err(GbmError::Training(format!(
            "dimension mismatch: {} feature rows vs {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(GbmError::Training("rows have no features".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(GbmError::Training(format!(
                "dimension mismatch: row {i} has {} features, expected {d}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(GbmError::Training(format!(
                "non-finite feature {j} in row {i}"
            )));
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GbmError::Training(format!("non-finite target in row {i}")));
    }
    if x.len() < 2 * params.min_samples_leaf {
        return Err(GbmError::Training(format!(
            "need at least {} rows for min_samples_leaf {}, got {}",
            2 * params.min_samples_leaf,
            params.min_samples_leaf,
            x.len()
        )));
    }
    Ok(d)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let value = rows.iter().map(|&i| self.residual[i]).sum::<f64>() / rows.len() as f64;
                self.nodes[id] = Node::Leaf { value };
            }
            Some(s) => {
                let left = self.build(s.left, depth + 1);
                let right = self.build(s.right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let sum_sq: f64 = rows.iter().map(|&i| self.residual[i].powi(2)).sum();
        let parent = total * total / n as f64;
        let min_gain = 1e-12 * sum_sq;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.x[0].len() {
            order.copy_from_slice(rows);
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_sum = 0.0;
            for i in 1..n {
                left_sum += self.residual[order[i - 1]];
                if i < self.min_leaf || n - i < self.min_leaf {
                    continue;
                }
                let lo = self.x[order[i - 1]][f];
                let hi = self.x[order[i]][f];
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / i as f64 + right_sum * right_sum / (n - i) as f64
                    - parent;
                if gain > min_gain && best.is_none_or(|(g, _, _)| gain > g) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }
        let (_, feature, threshold) = best?;
        let (left, right) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Some(Split {
            feature,
            threshold,
            left,
            right,
        })
    }
}

/// Fits a boosted ensemble to `(x, y)`.
pub fn fit(x: &[Vec<f64>], y: &[f64], params: &TrainParams) -> Result<GbmModel> {
    let d = check_training_data(x, y, params)?;

    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&x[a], &x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let n = ys.len();
    let base_score = ys.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut residual = vec![0.0; n];
    let mut rng = SimRng::seed_from_u64(params.seed);
    let sample_size =
        ((params.subsample * n as f64).round() as usize).clamp(2 * params.min_samples_leaf, n);
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = ys[i] - pred[i];
        }
        let rows: Vec<usize> = if sample_size < n {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(sample_size);
            all.sort_unstable();
            all
        } else {
            (0..n).collect()
        };
        let mut builder = TreeBuilder {
            x: &xs,
            residual: &residual,
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf,
            nodes: Vec::new(),
        };
        builder.build(rows, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict(&xs[i]);
        }
        trees.push(tree);
    }

    Ok(GbmModel {
        feature_count: d,
        base_score,
        learning_rate: params.learning_rate,
        trees,
    })
}

pub const MODEL_FORMAT: &str = "bedtwin-gbm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    feature_count: usize,
    base_score: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

/// Serializes a model as a versioned JSON document.
pub fn save(model: &GbmModel) -> Vec<u8> {
    let doc = ModelDocument {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_count: model.feature_count,
        base_score: model.base_score,
        learning_rate: model.learning_rate,
        trees: model.trees.clone(),
    };
    serde_json::to_vec_pretty(&doc).expect("model serializes")
}

pub fn load(bytes: &[u8]) -> Result<GbmModel> {
    let doc: ModelDocument = serde_json::from_slice(bytes).map_err(|e| GbmError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(GbmError::InvalidModel(format!(
            "unsupported format {} version {}",
            doc.format, doc.version
        )));
    }
    if doc.feature_count == 0 || !doc.base_score.is_finite() {
        return Err(GbmError::InvalidModel("bad header values".into()));
    }
    if !(doc.learning_rate > 0.0 && doc.learning_rate <= 1.0) {
        return Err(GbmError::InvalidModel(format!(
            "learning_rate {}",
            doc.learning_rate
        )));
    }
    for (t, tree) in doc.trees.iter().enumerate() {
        if tree.nodes.is_empty() {
            return Err(GbmError::InvalidModel(format!("tree {t} has no nodes")));
        }
        for (i, node) in tree.nodes.iter().enumerate() {
            let ok = match *node {
                Node::Leaf { value } => value.is_finite(),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    feature < doc.feature_count
                        && threshold.is_finite()
                        && left > i
                        && right > i
                        && left < tree.nodes.len()
                        && right < tree.nodes.len()
                }
            };
            if !ok {
                return Err(GbmError::InvalidModel(format!(
                    "tree {t} node {i} is malformed"
                )));
            }
        }
    }
    Ok(GbmModel {
        feature_count: doc.feature_count,
        base_score: doc.base_score,
        learning_rate: doc.learning_rate,
        trees: doc.trees,
    })
}

/// Surrogate fitted on simulator output, with its held-out error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub model: GbmModel,
    pub n_train: usize,
    pub n_holdout: usize,
    pub holdout_mae: f64,
    /// MAE on the held-out rows of predicting the training-set mean.
    pub baseline_mae: f64,
}

pub const MIN_SYNTHETIC_ROWS: usize = 50;

/// Trains on sweep rows (features → simulated mean BTT), holding out a
/// seeded 20% of rows for evaluation.
pub fn train_surrogate_on_synthetic(
    rows: &[SweepRow],
    params: &TrainParams,
) -> Result<SurrogateFit> {
    if rows.len() < MIN_SYNTHETIC_ROWS {
        return Err(GbmError::Training(format!(
            "need at least {MIN_SYNTHETIC_ROWS} sweep rows, got {}",
            rows.len()
        )));
    }
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        match r.result.mean_btt {
            Some(v) if v.is_finite() => y.push(v),
            _ => {
                return Err(GbmError::Training(format!(
                    "sweep row {i} has no finite mean BTT"
                )))
            }
        }
    }
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.features.to_array().to_vec())
        .collect();
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut SimRng::seed_from_u64(params.seed ^ 0x005E_ED0F_5A17));
    let n_holdout = (rows.len() as f64 * 0.2).round() as usize;
    let (hold, train) = idx.split_at(n_holdout);

    let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let model = fit(&xt, &yt, params)?;
    let train_mean = yt.iter().sum::<f64>() / yt.len() as f64;
    let mut holdout_mae = 0.0;
    let mut baseline_mae = 0.0;
    for &i in hold {
        holdout_mae += (model.predict_row(&x[i]) - y[i]).abs();
        baseline_mae += (train_mean - y[i]).abs();
    }
    Ok(SurrogateFit {
        model,
        n_train: train.len(),
        n_holdout: hold.len(),
        holdout_mae: holdout_mae / hold.len() as f64,
        baseline_mae: baseline_mae / hold.len() as f64,
    })
}

/// Convenience for fitting on feature vectors.
pub fn fit_features(x: &[FeatureVector], y: &[f64], params: &TrainParams) -> Result<GbmModel> {
    let rows: Vec<Vec<f64>> = x.iter().map(|f| f.to_array().to_vec()).collect();
    let model = fit(&rows, y, params)?;
    debug_assert_eq!(model.feature_count, FEATURE_COUNT);
    Ok(model)
}
