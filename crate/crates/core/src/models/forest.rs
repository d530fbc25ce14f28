//! Random forest over the autoencoder's bottleneck features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream, StreamTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
}

impl ForestConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        ForestConfig { n_trees: 100, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        positive: u32,
        total: u32,
    },
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Fraction of positive training samples in the leaf this row lands in.
    pub fn leaf_fraction(&self, row: &[f32]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { positive, total } => {
                    return f64::from(*positive) / f64::from(*total);
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Mean leaf positive-fraction across all trees.
    pub fn score(&self, row: &[f32]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf_fraction(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, row: &[f32]) -> bool {
        self.score(row) >= 0.5
    }

    pub fn score_rows(&self, rows: &Tensor<f32>) -> Vec<f64> {
        (0..rows.rows()).map(|i| self.score(rows.row(i))).collect()
    }
}

/// Grows Gini-impurity trees on bootstrap resamples, considering a
/// sqrt-sized random feature subset at every split. Nodes split until pure,
/// so single-sample leaves are allowed.
pub fn train_random_forest(
    features: &Tensor<f32>,
    labels: &[bool],
    config: &ForestConfig,
) -> Result<RandomForest> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput("no training rows for forest".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} feature rows",
            labels.len(),
            n
        )));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidConfig(
            "forest needs at least one tree".into(),
        ));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass);
    }
    let n_features = features.cols();
    let per_split = ((n_features as f64).sqrt().floor() as usize).max(1);

    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = stream(config.seed, t as u64, StreamTag::Forest);
        let sample: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
        trees.push(grow_tree(features, labels, sample, per_split, &mut rng));
    }
    Ok(RandomForest {
        n_features,
        config: config.clone(),
        trees,
    })
}

struct PendingNode {
    /// Index of the placeholder in `nodes` to overwrite.
    slot: usize,
    rows: Vec<u32>,
}

fn grow_tree(
    features: &Tensor<f32>,
    labels: &[bool],
    rows: Vec<u32>,
    per_split: usize,
    rng: &mut impl Rng,
) -> DecisionTree {
    let mut nodes = vec![TreeNode::Leaf {
        positive: 0,
        total: 1,
    }];
    let mut work = vec![PendingNode { slot: 0, rows }];

    while let Some(PendingNode { slot, rows }) = work.pop() {
        let total = rows.len() as u32;
        let positive = rows.iter().filter(|&&i| labels[i as usize]).count() as u32;
        let pure = positive == 0 || positive == total;
        let split = if pure || total < 2 {
            None
        } else {
            best_split(features, labels, &rows, per_split, rng)
        };
        match split {
            None => {
                nodes[slot] = TreeNode::Leaf { positive, total };
            }
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .iter()
                    .partition(|&&i| features.row(i as usize)[feature] <= threshold);
                let left = nodes.len();
                let right = left + 1;
                nodes.push(TreeNode::Leaf {
                    positive: 0,
                    total: 1,
                });
                nodes.push(TreeNode::Leaf {
                    positive: 0,
                    total: 1,
                });
                nodes[slot] = TreeNode::Split {
                    feature: feature as u32,
                    threshold,
                    left: left as u32,
                    right: right as u32,
                };
                work.push(PendingNode {
                    slot: left,
                    rows: left_rows,
                });
                work.push(PendingNode {
                    slot: right,
                    rows: right_rows,
                });
            }
        }
    }
    DecisionTree { nodes }
}

/// Lowest weighted child Gini impurity over a random feature subset.
/// Returns `None` when every candidate feature is constant on these rows.
fn best_split(
    features: &Tensor<f32>,
    labels: &[bool],
    rows: &[u32],
    per_split: usize,
    rng: &mut impl Rng,
) -> Option<(usize, f32)> {
    let n_features = features.cols();
    let candidates = rand::seq::index::sample(rng, n_features, per_split.min(n_features));
    let m = rows.len() as f64;
    let mut best: Option<(f64, usize, f32)> = None;

    let mut column: Vec<(f32, bool)> = Vec::with_capacity(rows.len());
    for feature in candidates {
        column.clear();
        column.extend(
            rows.iter()
                .map(|&i| (features.row(i as usize)[feature], labels[i as usize])),
        );
        column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let total_pos = column.iter().filter(|(_, l)| *l).count() as f64;
        let mut left_pos = 0.0f64;
        for i in 1..column.len() {
            if column[i - 1].1 {
                left_pos += 1.0;
            }
            if column[i].0 == column[i - 1].0 {
                continue;
            }
            let nl = i as f64;
            let nr = m - nl;
            let gini = nl * gini_of(left_pos, nl) + nr * gini_of(total_pos - left_pos, nr);
            if best.map_or(true, |(g, _, _)| gini < g) {
                let threshold = midpoint(column[i - 1].0, column[i].0);
                best = Some((gini, feature, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

fn gini_of(pos: f64, total: f64) -> f64 {
    let p = pos / total;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

/// Split point between two adjacent distinct values. Falls back to the lower
/// value if the midpoint rounds onto the upper one, so `<=` keeps the pair
/// separable.
fn midpoint(lo: f32, hi: f32) -> f32 {
    let mid = lo + (hi - lo) * 0.5;
    if mid >= hi {
        lo
    } else {
        mid
    }
}
