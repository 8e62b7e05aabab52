use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means `floor(sqrt(L))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            mtry: None,
            bootstrap: true,
        }
    }
}

/// Split records live in one array; children are referenced by index so
/// deep trees do not nest in the serialised form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [usize],
    m: usize,
    mtry: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Majority class; ties go to the lowest index.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.m];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best Gini split on one feature: `(weighted child impurity, threshold)`.
    fn best_on_feature(&self, idx: &[usize], f: usize, parent: &[usize], scratch: &mut Vec<(f64, usize)>) -> Option<(f64, f64)> {
        scratch.clear();
        scratch.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[scratch.len() - 1].0 {
            return None;
        }
        let n = scratch.len();
        let mut left = vec![0usize; self.m];
        let mut right = parent.to_vec();
        let mut best: Option<(f64, f64)> = None;
        for s in 1..n {
            let c = scratch[s - 1].1;
            left[c] += 1;
            right[c] -= 1;
            let (lo, hi) = (scratch[s - 1].0, scratch[s].0);
            if lo == hi {
                continue;
            }
            let score = s as f64 * gini(&left, s) + (n - s) as f64 * gini(&right, n - s);
            if best.is_none_or(|(b, _)| score < b) {
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                best = Some((score, thr));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut StreamRng, features: &mut [usize]) -> usize {
        let me = self.nodes.len();
        let counts = self.counts(idx);
        self.nodes.push(Node::Leaf { class: majority(&counts) });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return me;
        }
        // visit features in random order until `mtry` non-constant ones have been tried
        features.shuffle(rng);
        let mut scratch = Vec::with_capacity(idx.len());
        let mut tried = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in features.iter() {
            if tried >= self.mtry {
                break;
            }
            if let Some((score, thr)) = self.best_on_feature(idx, f, &counts, &mut scratch) {
                tried += 1;
                if best.is_none_or(|(b, _, _)| score < b) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return me;
        };
        let mut split = 0;
        for i in 0..idx.len() {
            if self.x[idx[i]][feature] <= threshold {
                idx.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng, features);
        let right = self.grow(r, depth + 1, rng, features);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    m: usize,
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit(x: &[&[f64]], y: &[usize], m: usize, params: &ForestParams, seed: u64) -> Self {
        let n = x.len();
        let d = x[0].len();
        let mtry = params.mtry.unwrap_or(((d as f64).sqrt() as usize).max(1)).clamp(1, d);
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(seed, "rf/tree", t as u64);
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut features: Vec<usize> = (0..d).collect();
                let mut b = Builder {
                    x,
                    y,
                    m,
                    mtry,
                    max_depth: params.max_depth,
                    nodes: Vec::new(),
                };
                b.grow(&mut idx, 0, &mut rng, &mut features);
                Tree { nodes: b.nodes }
            })
            .collect();
        RandomForest { m, trees }
    }

    /// Fraction of trees voting for each class.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.m];
        for t in &self.trees {
            votes[t.predict(x)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}
