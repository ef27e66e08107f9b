//! Three-headed regressors mapping feature rows to `(pan, tilt, zoom)`.
//!
//! Two model families: ordinary least squares solved through an SVD, and a
//! bagged forest of CART regression trees grown by variance reduction. The
//! forest is bit-deterministic for a fixed seed: every tree draws its
//! bootstrap sample from its own ChaCha stream keyed by `(seed, head, tree)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::mix_seed;

pub const HEADS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("no training samples")]
    Empty,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("design matrix is rank deficient")]
    Degenerate,
    #[error("row {row} has {got} features, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("non-finite value in training data at row {0}")]
    NonFinite(usize),
    #[error("invalid forest config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RegressorKind {
    OlsLinear,
    RandomForest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    pub forest: ForestConfig,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            kind: RegressorKind::RandomForest,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "node", rename_all = "snake_case"))]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
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

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Grows a CART tree on the rows listed in `sample` (duplicates allowed).
    pub fn grow(x: &[Vec<f64>], y: &[f64], sample: Vec<usize>, max_depth: usize, min_leaf: usize) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        let mut stack = vec![(0usize, sample, 0usize)];
        while let Some((slot, mut idx, depth)) = stack.pop() {
            let n = idx.len();
            let sum: f64 = idx.iter().map(|&i| y[i]).sum();
            let mean = sum / n as f64;
            let split = if depth < max_depth && n >= 2 * min_leaf {
                best_split(x, y, &mut idx, n_features, min_leaf, sum)
            } else {
                None
            };
            let Some((feature, threshold)) = split else {
                nodes[slot] = TreeNode::Leaf { value: mean };
                continue;
            };
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][feature] <= threshold);
            let left = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            let right = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[slot] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            };
            // right pushed first so the left subtree is built first
            stack.push((right, right_idx, depth + 1));
            stack.push((left, left_idx, depth + 1));
        }
        Self { nodes }
    }
}

/// Exhaustive search for the split with the largest between-child sum of
/// squares. Ties keep the first candidate in (feature, position) order.
fn best_split(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &mut [usize],
    n_features: usize,
    min_leaf: usize,
    total: f64,
) -> Option<(usize, f64)> {
    let n = idx.len();
    let parent_score = total * total / n as f64;
    let mut best_score = parent_score;
    let mut best = None;
    for f in 0..n_features {
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for pos in 1..n {
            left_sum += y[idx[pos - 1]];
            if pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let (lo, hi) = (x[idx[pos - 1]][f], x[idx[pos]][f]);
            if !(lo < hi) {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / pos as f64 + right_sum * right_sum / (n - pos) as f64;
            if score > best_score * (1.0 + 1e-12) + 1e-300 {
                best_score = score;
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((f, threshold));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum RegressorModel {
    OlsLinear {
        n_features: usize,
        heads: Vec<LinearHead>,
    },
    RandomForest {
        n_features: usize,
        config: ForestConfig,
        heads: Vec<Forest>,
    },
}

impl RegressorModel {
    pub fn kind(&self) -> RegressorKind {
        match self {
            RegressorModel::OlsLinear { .. } => RegressorKind::OlsLinear,
            RegressorModel::RandomForest { .. } => RegressorKind::RandomForest,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            RegressorModel::OlsLinear { n_features, .. } | RegressorModel::RandomForest { n_features, .. } => {
                *n_features
            }
        }
    }

    /// Raw (unrounded) `(pan, tilt, zoom)` prediction.
    pub fn predict(&self, x: &[f64]) -> [f64; HEADS] {
        match self {
            RegressorModel::OlsLinear { heads, .. } => [0, 1, 2].map(|h| heads[h].predict(x)),
            RegressorModel::RandomForest { heads, .. } => [0, 1, 2].map(|h| heads[h].predict(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    pub n_samples: usize,
    /// Coefficient of determination per head on the training data.
    pub r2: [f64; HEADS],
}

/// Coefficient of determination. A constant target counts as perfectly
/// explained when the residuals vanish.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = y.iter().zip(pred).map(|(v, p)| (v - p) * (v - p)).sum();
    if ss_tot == 0.0 {
        return if ss_res <= 1e-24 * n { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

fn check_inputs(inputs: &[Vec<f64>], targets: &[[f64; HEADS]]) -> Result<usize, FitError> {
    if inputs.is_empty() {
        return Err(FitError::Empty);
    }
    if inputs.len() != targets.len() {
        return Err(FitError::TooFewSamples {
            need: inputs.len(),
            got: targets.len(),
        });
    }
    let p = inputs[0].len();
    for (row, (x, y)) in inputs.iter().zip(targets).enumerate() {
        if x.len() != p {
            return Err(FitError::DimensionMismatch {
                row,
                expected: p,
                got: x.len(),
            });
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(FitError::NonFinite(row));
        }
    }
    Ok(p)
}

pub fn fit(
    inputs: &[Vec<f64>],
    targets: &[[f64; HEADS]],
    cfg: &RegressorConfig,
) -> Result<(RegressorModel, FitReport), FitError> {
    let p = check_inputs(inputs, targets)?;
    let model = match cfg.kind {
        RegressorKind::OlsLinear => fit_ols(inputs, targets, p)?,
        RegressorKind::RandomForest => fit_forest(inputs, targets, p, &cfg.forest)?,
    };
    let preds: Vec<[f64; HEADS]> = inputs.iter().map(|x| model.predict(x)).collect();
    let r2 = [0, 1, 2].map(|h| {
        let y: Vec<f64> = targets.iter().map(|t| t[h]).collect();
        let yhat: Vec<f64> = preds.iter().map(|t| t[h]).collect();
        r_squared(&y, &yhat)
    });
    Ok((
        model,
        FitReport {
            n_samples: inputs.len(),
            r2,
        },
    ))
}

fn fit_ols(inputs: &[Vec<f64>], targets: &[[f64; HEADS]], p: usize) -> Result<RegressorModel, FitError> {
    let n = inputs.len();
    if n < 2 {
        return Err(FitError::TooFewSamples { need: 2, got: n });
    }
    if n < p + 1 {
        return Err(FitError::Degenerate);
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j < p { inputs[i][j] } else { 1.0 });
    let rhs = DMatrix::from_fn(n, HEADS, |i, h| targets[i][h]);
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let max_sv = sv.max();
    let min_sv = sv.min();
    if !(max_sv > 0.0) || min_sv <= max_sv * 1e-10 {
        return Err(FitError::Degenerate);
    }
    let beta = svd.solve(&rhs, 0.0).map_err(|_| FitError::Degenerate)?;
    let heads = (0..HEADS)
        .map(|h| LinearHead {
            weights: (0..p).map(|j| beta[(j, h)]).collect(),
            bias: beta[(p, h)],
        })
        .collect();
    Ok(RegressorModel::OlsLinear { n_features: p, heads })
}

fn fit_forest(
    inputs: &[Vec<f64>],
    targets: &[[f64; HEADS]],
    p: usize,
    cfg: &ForestConfig,
) -> Result<RegressorModel, FitError> {
    if cfg.n_trees == 0 {
        return Err(FitError::InvalidConfig("n_trees must be positive"));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(FitError::InvalidConfig("min_samples_leaf must be positive"));
    }
    let n = inputs.len();
    if n < 2 * cfg.min_samples_leaf {
        return Err(FitError::TooFewSamples {
            need: 2 * cfg.min_samples_leaf,
            got: n,
        });
    }
    let mut heads = Vec::with_capacity(HEADS);
    for h in 0..HEADS {
        let y: Vec<f64> = targets.iter().map(|t| t[h]).collect();
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let stream = (h as u64) << 32 | t as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, stream));
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::grow(inputs, &y, sample, cfg.max_depth, cfg.min_samples_leaf)
            })
            .collect();
        heads.push(Forest { trees });
    }
    Ok(RegressorModel::RandomForest {
        n_features: p,
        config: *cfg,
        heads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_data(n: usize) -> (Vec<Vec<f64>>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| {
                [
                    25.0 * r[0] + 1.5,
                    -3.0 * r[0] + 18.0 * r[1] - 0.5,
                    100.0 * r[2] - 7.0 * r[1] + 40.0,
                ]
            })
            .collect();
        (x, y)
    }

    #[test]
    fn ols_recovers_exact_linear_model() {
        let (x, y) = linear_data(50);
        let cfg = RegressorConfig {
            kind: RegressorKind::OlsLinear,
            ..Default::default()
        };
        let (model, report) = fit(&x, &y, &cfg).unwrap();
        for r2 in report.r2 {
            assert!(1.0 - r2 < 1e-9, "{r2}");
        }
        let RegressorModel::OlsLinear { heads, .. } = &model else {
            panic!()
        };
        assert!((heads[0].weights[0] - 25.0).abs() < 1e-9);
        assert!((heads[2].bias - 40.0).abs() < 1e-9);
    }

    #[test]
    fn ols_normal_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, mut y) = linear_data(80);
        for t in &mut y {
            t[0] += rng.random_range(-2.0..2.0);
        }
        let cfg = RegressorConfig {
            kind: RegressorKind::OlsLinear,
            ..Default::default()
        };
        let (model, _) = fit(&x, &y, &cfg).unwrap();
        // X^T (X b - y) = 0, relative to |X^T y|
        let mut grad = [0.0f64; 4];
        let mut scale = [0.0f64; 4];
        for (r, t) in x.iter().zip(&y) {
            let res = model.predict(r)[0] - t[0];
            for j in 0..4 {
                let xj = if j < 3 { r[j] } else { 1.0 };
                grad[j] += xj * res;
                scale[j] += (xj * t[0]).abs();
            }
        }
        for j in 0..4 {
            assert!(grad[j].abs() <= 1e-8 * scale[j], "{j}: {}", grad[j]);
        }
    }

    #[test]
    fn ols_rejects_degenerate_design() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<[f64; 3]> = (0..10).map(|i| [i as f64; 3]).collect();
        let cfg = RegressorConfig {
            kind: RegressorKind::OlsLinear,
            ..Default::default()
        };
        assert_eq!(fit(&x, &y, &cfg).unwrap_err(), FitError::Degenerate);
        assert_eq!(fit(&[], &[], &cfg).unwrap_err(), FitError::Empty);
        assert!(matches!(
            fit(&x[..1], &y[..1], &cfg),
            Err(FitError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn forest_predicts_constant_target() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let y = vec![[7.0, -3.0, 120.0]; 40];
        let (model, report) = fit(&x, &y, &RegressorConfig::default()).unwrap();
        assert_eq!(model.predict(&[0.3]), [7.0, -3.0, 120.0]);
        assert_eq!(report.r2, [1.0; 3]);
    }

    #[test]
    fn forest_is_deterministic_and_seed_sensitive() {
        let (x, y) = linear_data(120);
        let cfg = RegressorConfig::default();
        let (a, _) = fit(&x, &y, &cfg).unwrap();
        let (b, _) = fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.forest.seed = 1;
        let (c, _) = fit(&x, &y, &other).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_respects_depth_and_leaf_size() {
        let (x, y) = linear_data(200);
        let mut cfg = RegressorConfig::default();
        cfg.forest.max_depth = 3;
        cfg.forest.n_trees = 5;
        let (model, report) = fit(&x, &y, &cfg).unwrap();
        let RegressorModel::RandomForest { heads, .. } = &model else {
            panic!()
        };
        assert!(heads.iter().flat_map(|f| &f.trees).all(|t| t.depth() <= 3));
        assert!(report.r2.iter().all(|&r| r > 0.5));
        cfg.forest.min_samples_leaf = 150;
        assert!(matches!(fit(&x, &y, &cfg), Err(FitError::TooFewSamples { .. })));
    }

    #[test]
    fn forest_fits_smooth_nonlinear_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(0.001..0.2)])
            .collect();
        let y: Vec<[f64; 3]> = x
            .iter()
            .map(|r| [libm::atan(r[0]) * 40.0, r[0] * r[0] * 10.0, -50.0 * libm::log2(r[1])])
            .collect();
        let (_, report) = fit(&x, &y, &RegressorConfig::default()).unwrap();
        assert!(report.r2.iter().all(|&r| r > 0.95), "{:?}", report.r2);
    }

    #[test]
    fn split_search_finds_the_step() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 8 { 0.0 } else { 10.0 }).collect();
        let tree = RegressionTree::grow(&x, &y, (0..20).collect(), 1, 1);
        assert_eq!(
            tree.nodes[0],
            TreeNode::Split {
                feature: 0,
                threshold: 7.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.predict(&[3.0]), 0.0);
        assert_eq!(tree.predict(&[12.0]), 10.0);
    }
}
