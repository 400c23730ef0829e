use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::rng::Rng;

/// `1 - Σ p_c²` over the label multiset. Empty input has impurity 0.
pub fn gini_impurity<L: Ord>(labels: &[L]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    1.0 - counts.values().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn gini_binary(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        p: f64,
        n: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or `min_leaf` stops it.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features sampled per node; `None` evaluates all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_leaf: 1, max_features: None }
    }
}

/// Binary CART tree; leaves store the class-1 proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    d: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let p = if idx.is_empty() { 0.5 } else { pos as f64 / idx.len() as f64 };
        self.nodes.push(Node::Leaf { p, n: idx.len() });
        self.nodes.len() - 1
    }

    fn candidates(&self, rng: &mut Rng) -> Vec<usize> {
        let mut feats: Vec<usize> = (0..self.d).collect();
        match self.params.max_features {
            Some(k) if k < self.d => {
                for i in 0..k {
                    let j = i + rng.below(self.d - i);
                    feats.swap(i, j);
                }
                feats.truncate(k.max(1));
                feats.sort_unstable();
                feats
            }
            _ => feats,
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut Rng) -> Option<BestSplit> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let parent = gini_binary(total_pos, n);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in self.candidates(rng) {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for pos in 1..n {
                left_pos += usize::from(self.y[order[pos - 1]] == 1);
                let (lo, hi) = (self.x[order[pos - 1]][f], self.x[order[pos]][f]);
                if lo == hi || pos < min_leaf || n - pos < min_leaf {
                    continue;
                }
                let right = n - pos;
                let weighted = (pos as f64 * gini_binary(left_pos, pos)
                    + right as f64 * gini_binary(total_pos - left_pos, right))
                    / n as f64;
                let gain = parent - weighted;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let stop = self.params.max_depth.is_some_and(|m| depth >= m)
            || pos == 0
            || pos == idx.len()
            || idx.len() < 2 * self.params.min_leaf.max(1);
        if stop {
            return self.leaf(&idx);
        }
        let Some(split) = self.best_split(&idx, rng) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0, n: 0 });
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, left: l, right: r };
        at
    }
}

impl DecisionTree {
    /// Fits on the rows listed in `samples` (repeats allowed).
    pub fn fit(x: &[Vec<f64>], y: &[u8], samples: &[usize], params: &TreeParams, rng: &mut Rng) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut b = Builder { x, y, params, nodes: Vec::new(), d };
        b.grow(samples.to_vec(), 0, rng);
        DecisionTree { nodes: b.nodes, n_features: d }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }
}

impl Classifier for DecisionTree {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { p, .. } => return p,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity(&[1, 1, 1]), 0.0);
        assert!((gini_impurity(&[0, 1, 0, 1]) - 0.5).abs() < 1e-15);
        let mut l = vec!['a'; 8];
        l.extend(['b'; 2]);
        assert!((gini_impurity(&l) - 0.32).abs() < 1e-12);
    }

    #[test]
    fn separates_threshold() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..10).map(|i| u8::from(i >= 6)).collect();
        let idx: Vec<usize> = (0..10).collect();
        let t = DecisionTree::fit(&x, &y, &idx, &TreeParams::default(), &mut Rng::new(0));
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes[0], Node::Split { feature: 0, threshold: 5.5, left: 1, right: 2 });
    }

    #[test]
    fn ties_prefer_lower_feature() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y = vec![0, 0, 0, 1, 1, 1];
        let idx: Vec<usize> = (0..6).collect();
        let t = DecisionTree::fit(&x, &y, &idx, &TreeParams::default(), &mut Rng::new(0));
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_zero_is_majority() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![1, 1, 0];
        let params = TreeParams { max_depth: Some(0), ..Default::default() };
        let t = DecisionTree::fit(&x, &y, &[0, 1, 2], &params, &mut Rng::new(0));
        assert_eq!(t.predict(&[5.0]), 1);
        assert!((t.predict_proba(&[5.0]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
