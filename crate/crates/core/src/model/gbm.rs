//! Squared-error gradient boosting with exact, leaf-wise grown trees.

use serde::{Deserialize, Serialize};

use super::{check_columns, Imputer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            num_leaves: 15,
            learning_rate: 0.1,
            n_rounds: 100,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves < 2 {
            return Err(Error::validation("num_leaves must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::validation("learning_rate must lie in (0, 1]"));
        }
        if self.n_rounds < 1 {
            return Err(Error::validation("n_rounds must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::validation("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub format: String,
    pub feature_names: Vec<String>,
    pub params: GbmParams,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Split counts per feature, summed over all trees.
    pub feature_importance: Vec<usize>,
    pub imputer: Imputer,
    /// Training MSE before boosting and after each round.
    pub train_loss: Vec<f64>,
}

const FORMAT: &str = "engage-gbm/1";

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Number of rows going left.
    n_left: usize,
}

/// A leaf under construction: its rows sorted by every feature.
struct LeafRows {
    node: usize,
    by_feature: Vec<Vec<usize>>,
    best: Option<SplitCandidate>,
}

fn best_split(x: &[Vec<f64>], r: &[f64], by_feature: &[Vec<usize>], min_leaf: usize) -> Option<SplitCandidate> {
    let rows = &by_feature[0];
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| r[i]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<SplitCandidate> = None;
    for (f, order) in by_feature.iter().enumerate() {
        let mut left = 0.0;
        for k in 0..n - min_leaf {
            left += r[order[k]];
            let n_left = k + 1;
            if n_left < min_leaf {
                continue;
            }
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a >= b {
                continue;
            }
            let right = total - left;
            let n_right = n - n_left;
            let gain = left * left / n_left as f64 + right * right / n_right as f64 - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    threshold: a + 0.5 * (b - a),
                    n_left,
                });
            }
        }
    }
    best
}

fn leaf_mean(rows: &[usize], r: &[f64]) -> f64 {
    rows.iter().map(|&i| r[i]).sum::<f64>() / rows.len() as f64
}

fn grow_tree(x: &[Vec<f64>], r: &[f64], presorted: &[Vec<usize>], params: &GbmParams) -> Tree {
    let mut nodes = vec![Node::Leaf {
        value: leaf_mean(&presorted[0], r),
    }];
    let root_rows = presorted.to_vec();
    let best = best_split(x, r, &root_rows, params.min_samples_leaf);
    let mut open = vec![LeafRows {
        node: 0,
        by_feature: root_rows,
        best,
    }];
    let mut n_leaves = 1;
    let mut goes_left = vec![false; x.len()];

    while n_leaves < params.num_leaves {
        // Leaf with the largest gain; the earliest leaf wins ties.
        let mut pick: Option<usize> = None;
        for (k, leaf) in open.iter().enumerate() {
            if let Some(c) = &leaf.best {
                if pick.is_none_or(|p| c.gain > open[p].best.as_ref().map_or(0.0, |b| b.gain)) {
                    pick = Some(k);
                }
            }
        }
        let Some(k) = pick else { break };
        let leaf = open.remove(k);
        let Some(split) = leaf.best else { break };

        let order = &leaf.by_feature[split.feature];
        for (pos, &i) in order.iter().enumerate() {
            goes_left[i] = pos < split.n_left;
        }
        let mut left_rows = Vec::with_capacity(leaf.by_feature.len());
        let mut right_rows = Vec::with_capacity(leaf.by_feature.len());
        for rows in &leaf.by_feature {
            let (l, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| goes_left[i]);
            left_rows.push(l);
            right_rows.push(rr);
        }
        let left = nodes.len();
        nodes.push(Node::Leaf {
            value: leaf_mean(&left_rows[0], r),
        });
        nodes.push(Node::Leaf {
            value: leaf_mean(&right_rows[0], r),
        });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        n_leaves += 1;
        for (node, rows) in [(left, left_rows), (left + 1, right_rows)] {
            let best = best_split(x, r, &rows, params.min_samples_leaf);
            open.push(LeafRows {
                node,
                by_feature: rows,
                best,
            });
        }
    }
    Tree { nodes }
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Fits a boosted ensemble. Missing cells are filled with the training
/// medians, which the model keeps for prediction.
pub fn fit_gbm(feature_names: &[String], x: &[Vec<Option<f64>>], y: &[f64], params: &GbmParams) -> Result<GbmModel> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::validation(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if x.len() < 2 * params.min_samples_leaf {
        return Err(Error::InsufficientData(format!(
            "{} training rows, at least {} needed",
            x.len(),
            2 * params.min_samples_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("targets must be finite"));
    }
    let n_features = feature_names.len();
    let imputer = Imputer::fit(x, n_features)?;
    let dense = imputer.transform(x)?;

    let presorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..dense.len()).collect();
            idx.sort_by(|&a, &b| dense[a][f].total_cmp(&dense[b][f]));
            idx
        })
        .collect();

    let base_score = y.iter().sum::<f64>() / y.len() as f64;
    let mut pred = vec![base_score; y.len()];
    let mut train_loss = vec![mse(y, &pred)];
    let mut trees = Vec::new();
    let mut importance = vec![0usize; n_features];
    if n_features > 0 {
        for _ in 0..params.n_rounds {
            let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = grow_tree(&dense, &r, &presorted, params);
            if tree.n_splits() == 0 {
                break;
            }
            for node in &tree.nodes {
                if let Node::Split { feature, .. } = node {
                    importance[*feature] += 1;
                }
            }
            for (p, row) in pred.iter_mut().zip(&dense) {
                *p += params.learning_rate * tree.predict_row(row);
            }
            train_loss.push(mse(y, &pred));
            trees.push(tree);
        }
    }
    Ok(GbmModel {
        format: FORMAT.to_string(),
        feature_names: feature_names.to_vec(),
        params: *params,
        base_score,
        learning_rate: params.learning_rate,
        trees,
        feature_importance: importance,
        imputer,
        train_loss,
    })
}

impl GbmModel {
    pub fn predict_dense(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// The ensemble after its first `rounds` trees. Boosting is sequential,
    /// so this equals a fit with `n_rounds = rounds`.
    pub fn truncated(&self, rounds: usize) -> GbmModel {
        let mut m = self.clone();
        m.trees.truncate(rounds);
        m.train_loss.truncate(m.trees.len() + 1);
        m.params.n_rounds = rounds;
        m.feature_importance = vec![0; self.feature_names.len()];
        for tree in &m.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, .. } = node {
                    m.feature_importance[*feature] += 1;
                }
            }
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Parses and structurally validates a serialized model.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbmModel = serde_json::from_str(text).map_err(|e| Error::parse("model", e.line(), e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::validation(format!("unsupported model format {:?}", self.format)));
        }
        let f = self.feature_names.len();
        if self.imputer.medians.len() != f || self.feature_importance.len() != f {
            return Err(Error::validation("model column metadata is inconsistent"));
        }
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(Error::validation("model scalars must be finite"));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::validation(format!("tree {t} is empty")));
            }
            for (k, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        // Children after their parent rules out cycles.
                        let ok = *feature < f
                            && threshold.is_finite()
                            && *left > k
                            && *right > k
                            && *left < tree.nodes.len()
                            && *right < tree.nodes.len();
                        if !ok {
                            return Err(Error::validation(format!("tree {t} node {k} is malformed")));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(Error::validation(format!("tree {t} node {k} has a non-finite value")));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(())
    }
}

pub fn predict_gbm(model: &GbmModel, feature_names: &[String], x: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    check_columns(&model.feature_names, feature_names)?;
    let dense = model.imputer.transform(x)?;
    Ok(dense.iter().map(|row| model.predict_dense(row)).collect())
}

/// Features by descending split count; equal counts keep column order.
pub fn feature_importance(model: &GbmModel) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.feature_importance.iter().copied())
        .collect();
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    ranked
}

/// Indices of the `k` most used features, skipping unused ones.
pub fn top_k_features(model: &GbmModel, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..model.feature_names.len())
        .filter(|&i| model.feature_importance[i] > 0)
        .collect();
    idx.sort_by(|&a, &b| model.feature_importance[b].cmp(&model.feature_importance[a]));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn opt(x: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
        x.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect()
    }

    #[test]
    fn constant_target_needs_no_trees() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y = vec![2.5; 20];
        let m = fit_gbm(&names(2), &opt(&x), &y, &GbmParams::default()).unwrap();
        assert!(m.trees.is_empty());
        assert!(predict_gbm(&m, &names(2), &opt(&x)).unwrap().iter().all(|p| *p == 2.5));
        assert!(feature_importance(&m).iter().all(|(_, c)| *c == 0));
    }

    #[test]
    fn binary_feature_residual_shrinks_geometrically() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 10.0 * r[0]).collect();
        let params = GbmParams {
            learning_rate: 0.1,
            n_rounds: 100,
            ..GbmParams::default()
        };
        let m = fit_gbm(&names(1), &opt(&x), &y, &params).unwrap();
        let p = predict_gbm(&m, &names(1), &opt(&x)).unwrap();
        let worst = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 10.0 * 0.9f64.powi(100) + 1e-12, "{worst}");
        assert!(worst < 1e-3);
    }

    #[test]
    fn one_round_matches_leaf_means() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| if i < 6 { 1.0 } else { 4.0 }).collect();
        let params = GbmParams {
            num_leaves: 2,
            n_rounds: 1,
            learning_rate: 0.5,
            ..GbmParams::default()
        };
        let m = fit_gbm(&names(1), &opt(&x), &y, &params).unwrap();
        let p = predict_gbm(&m, &names(1), &opt(&x)).unwrap();
        // base 2.5; leaf residual means -1.5 and 1.5.
        assert_eq!(p[0], 2.5 - 0.75);
        assert_eq!(p[11], 2.5 + 0.75);
        assert_eq!(m.trees.len(), 1);
        assert!(matches!(m.trees[0].nodes[0], Node::Split { threshold, .. } if threshold == 5.5));
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..10).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| (6.0 * r[3]).sin() + 2.0 * r[3]).collect();
        let m = fit_gbm(&names(10), &opt(&x), &y, &GbmParams::default()).unwrap();
        let ranked = feature_importance(&m);
        assert_eq!(ranked[0].0, "f3");
        assert!(ranked[1].1 < ranked[0].1);
        assert_eq!(
            m.feature_importance.iter().sum::<usize>(),
            m.trees.iter().map(|t| t.n_splits()).sum::<usize>()
        );
    }

    #[test]
    fn missing_values_and_column_checks() {
        let x: Vec<Vec<Option<f64>>> = (0..20)
            .map(|i| vec![if i % 4 == 0 { None } else { Some(i as f64) }])
            .collect();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = fit_gbm(&names(1), &x, &y, &GbmParams::default()).unwrap();
        assert!(predict_gbm(&m, &names(1), &[vec![None]]).unwrap()[0].is_finite());
        assert!(predict_gbm(&m, &names(2), &[vec![None, None]]).is_err());
        assert!(fit_gbm(&names(1), &x[..9], &y[..9], &GbmParams::default()).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 0.1 + r[1]).collect();
        let m = fit_gbm(&names(2), &opt(&x), &y, &GbmParams::default()).unwrap();
        let back = GbmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let broken = m.to_json().replacen("\"left\": 1", "\"left\": 0", 1);
        assert!(GbmModel::from_json(&broken).is_err());
        assert!(GbmModel::from_json("{").is_err());
    }

    #[test]
    fn truncation_equals_shorter_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1] + r[2]).collect();
        let long = fit_gbm(
            &names(4),
            &opt(&x),
            &y,
            &GbmParams {
                n_rounds: 40,
                ..GbmParams::default()
            },
        )
        .unwrap();
        let short = fit_gbm(
            &names(4),
            &opt(&x),
            &y,
            &GbmParams {
                n_rounds: 15,
                ..GbmParams::default()
            },
        )
        .unwrap();
        assert_eq!(long.truncated(15), short);
    }

    #[test]
    fn top_k_skips_unused_features() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64, 1.0, (i % 5) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 4.0 * r[0] + r[2]).collect();
        let m = fit_gbm(&names(3), &opt(&x), &y, &GbmParams::default()).unwrap();
        assert_eq!(m.feature_importance[1], 0);
        let top = top_k_features(&m, 10);
        assert_eq!(top.len(), 2);
        assert!(!top.contains(&1));
        assert_eq!(top_k_features(&m, 1).len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn training_loss_never_increases(seed in 0u64..1000, n in 12usize..60, leaves in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0).collect();
            let params = GbmParams { num_leaves: leaves, n_rounds: 30, ..GbmParams::default() };
            let m = fit_gbm(&names(3), &opt(&x), &y, &params).unwrap();
            for w in m.train_loss.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            // Row permutation permutes predictions.
            let p = predict_gbm(&m, &names(3), &opt(&x)).unwrap();
            let rev: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
            let q = predict_gbm(&m, &names(3), &opt(&rev)).unwrap();
            prop_assert!(p.iter().rev().zip(&q).all(|(a, b)| a == b));
        }
    }
}
