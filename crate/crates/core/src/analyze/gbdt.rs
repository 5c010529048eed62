//! Gradient-boosted regression trees with exact greedy splits and Newton leaf
//! weights. Squared loss for regression, logistic loss for binary classification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalyzeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Classifier,
    Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// Only used for the train/test split; fitting itself has no randomness.
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub kind: HeadKind,
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl HeadModel {
    /// Raw additive score before the link function.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a> {
    x: &'a [f64],
    d: usize,
    g: &'a [f64],
    h: &'a [f64],
    max_depth: usize,
    min_child_weight: f64,
}

impl Grower<'_> {
    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        use rayon::prelude::*;
        let g_sum: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let h_sum: f64 = rows.iter().map(|&i| self.h[i]).sum();
        let parent = g_sum * g_sum / h_sum;
        let per_feature: Vec<Option<Split>> = (0..self.d)
            .into_par_iter()
            .map(|f| {
                let mut order = rows.to_vec();
                order.sort_by(|&a, &b| self.x[a * self.d + f].total_cmp(&self.x[b * self.d + f]).then(a.cmp(&b)));
                let (mut gl, mut hl) = (0.0, 0.0);
                let mut best: Option<Split> = None;
                for w in 0..order.len() - 1 {
                    let i = order[w];
                    gl += self.g[i];
                    hl += self.h[i];
                    let (lo, hi) = (self.x[i * self.d + f], self.x[order[w + 1] * self.d + f]);
                    if lo == hi {
                        continue;
                    }
                    let (gr, hr) = (g_sum - gl, h_sum - hl);
                    if hl < self.min_child_weight || hr < self.min_child_weight {
                        continue;
                    }
                    let gain = gl * gl / hl + gr * gr / hr - parent;
                    if best.as_ref().map_or(true, |b| gain > b.gain) {
                        best = Some(Split {
                            gain,
                            feature: f,
                            threshold: lo + (hi - lo) / 2.0,
                        });
                    }
                }
                best
            })
            .collect();
        // Strict improvement keeps the lowest feature, then the lowest threshold.
        per_feature
            .into_iter()
            .flatten()
            .fold(None, |acc: Option<Split>, s| match acc {
                Some(a) if s.gain <= a.gain => Some(a),
                _ => Some(s),
            })
            .filter(|s| s.gain > 1e-12)
    }

    fn grow(&self, rows: &[usize], depth: usize, nodes: &mut Vec<Node>) -> usize {
        let at = nodes.len();
        let g_sum: f64 = rows.iter().map(|&i| self.g[i]).sum();
        let h_sum: f64 = rows.iter().map(|&i| self.h[i]).sum();
        let leaf = Node::Leaf {
            value: if h_sum > 0.0 { -g_sum / h_sum } else { 0.0 },
        };
        nodes.push(leaf);
        if depth >= self.max_depth || rows.len() < 2 {
            return at;
        }
        let Some(split) = self.best_split(rows) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i * self.d + split.feature] < split.threshold);
        let left = self.grow(&l, depth + 1, nodes);
        let right = self.grow(&r, depth + 1, nodes);
        nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Fit a boosted head on row-major `x` (n × d). Classifier targets must be 0 or 1.
pub fn fit_head(x: &[f64], d: usize, y: &[f64], kind: HeadKind, cfg: &HeadConfig) -> Result<HeadModel, AnalyzeError> {
    let n = y.len();
    if n == 0 || d == 0 {
        return Err(AnalyzeError::EmptyInput);
    }
    if x.len() != n * d {
        return Err(AnalyzeError::DimMismatch {
            expected: n * d,
            found: x.len(),
        });
    }
    if cfg.n_estimators == 0 || !(cfg.learning_rate > 0.0) || cfg.min_child_weight < 0.0 {
        return Err(AnalyzeError::InvalidParameter(format!("{cfg:?}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalyzeError::InvalidParameter("non-finite feature or target".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match kind {
        HeadKind::Regressor => mean,
        HeadKind::Classifier => {
            if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(AnalyzeError::DegenerateLabels(format!("class label {bad} is not 0 or 1")));
            }
            if mean == 0.0 || mean == 1.0 {
                return Err(AnalyzeError::DegenerateLabels("only one class present".into()));
            }
            (mean / (1.0 - mean)).ln()
        }
    };
    let mut model = HeadModel {
        kind,
        n_features: d,
        base_score,
        learning_rate: cfg.learning_rate,
        trees: Vec::with_capacity(cfg.n_estimators),
    };
    let mut margin = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let rows: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            match kind {
                HeadKind::Regressor => {
                    g[i] = margin[i] - y[i];
                    h[i] = 1.0;
                }
                HeadKind::Classifier => {
                    let p = sigmoid(margin[i]);
                    g[i] = p - y[i];
                    h[i] = p * (1.0 - p);
                }
            }
        }
        let grower = Grower {
            x,
            d,
            g: &g,
            h: &h,
            max_depth: cfg.max_depth,
            min_child_weight: cfg.min_child_weight,
        };
        let mut nodes = Vec::new();
        grower.grow(&rows, 0, &mut nodes);
        let tree = Tree { nodes };
        for i in 0..n {
            margin[i] += cfg.learning_rate * tree.predict(&x[i * d..(i + 1) * d]);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

/// Class-1 probabilities for classifiers, values for regressors.
pub fn predict_head(model: &HeadModel, x: &[f64], d: usize) -> Result<Vec<f64>, AnalyzeError> {
    if d != model.n_features || (d > 0 && x.len() % d != 0) {
        return Err(AnalyzeError::DimMismatch {
            expected: model.n_features,
            found: d,
        });
    }
    Ok(x.chunks_exact(d)
        .map(|row| {
            let m = model.margin(row);
            match model.kind {
                HeadKind::Regressor => m,
                HeadKind::Classifier => sigmoid(m),
            }
        })
        .collect())
}

/// Seeded shuffled split with `floor(4n/5)` training rows.
pub fn train_test_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(4 * n / 5);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_free_regressor_predicts_mean() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 4.0, 9.0];
        let cfg = HeadConfig {
            n_estimators: 1,
            max_depth: 0,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit_head(&x, 1, &y, HeadKind::Regressor, &cfg).unwrap();
        assert!(predict_head(&m, &x, 1).unwrap().iter().all(|&p| p == 4.0));
    }

    #[test]
    fn empty_ensemble_returns_base_score() {
        let m = HeadModel {
            kind: HeadKind::Classifier,
            n_features: 2,
            base_score: 0.0,
            learning_rate: 0.1,
            trees: vec![],
        };
        assert_eq!(predict_head(&m, &[1.0, 2.0], 2).unwrap(), vec![0.5]);
        assert!(matches!(predict_head(&m, &[1.0, 2.0, 3.0], 3), Err(AnalyzeError::DimMismatch { .. })));
    }

    #[test]
    fn single_split_is_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 0.0, 5.0, 5.0];
        let cfg = HeadConfig {
            n_estimators: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit_head(&x, 1, &y, HeadKind::Regressor, &cfg).unwrap();
        assert_eq!(predict_head(&m, &x, 1).unwrap(), y.to_vec());
        assert!(matches!(m.trees[0].nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 1.5));
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        // Both features separate the targets identically.
        let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = [0.0, 0.0, 1.0, 1.0];
        let cfg = HeadConfig {
            n_estimators: 1,
            max_depth: 1,
            ..Default::default()
        };
        let m = fit_head(&x, 2, &y, HeadKind::Regressor, &cfg).unwrap();
        assert!(matches!(m.trees[0].nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn classifier_rejects_single_class() {
        assert!(matches!(
            fit_head(&[0.0, 1.0], 1, &[1.0, 1.0], HeadKind::Classifier, &HeadConfig::default()),
            Err(AnalyzeError::DegenerateLabels(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let (train, test) = train_test_split(10, 1);
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
