//! Multi-output CART regression tree with variance-reduction splits.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;

/// Node index sentinel marking a leaf.
const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; values >= the feature count mean all.
    pub max_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Offset of this leaf's output vector in `Tree::values` (leaves only).
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_outputs: usize,
    pub nodes: Vec<Node>,
    pub values: Vec<f64>,
    /// Total impurity decrease contributed by each feature.
    pub importance: Vec<f64>,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of rows going left after sorting by `feature`.
    n_left: usize,
    gain: f64,
}

struct Builder<'a, R: ?Sized> {
    data: &'a TrainingSet,
    params: TreeParams,
    rng: &'a mut R,
    tree: Tree,
    keys: Vec<(f64, u32)>,
}

impl Tree {
    /// Grow a tree on the given rows (duplicates allowed, as in a bootstrap).
    pub fn fit<R: Rng + ?Sized>(data: &TrainingSet, rows: &[u32], params: TreeParams, rng: &mut R) -> Tree {
        let mut b = Builder {
            data,
            params,
            rng,
            tree: Tree {
                n_outputs: data.n_outputs,
                nodes: Vec::new(),
                values: Vec::new(),
                importance: vec![0.0; data.n_features],
            },
            keys: Vec::with_capacity(rows.len()),
        };
        let mut rows = rows.to_vec();
        b.grow(&mut rows, 0);
        b.tree
    }

    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let leaf = self.leaf(x);
        let off = self.nodes[leaf].value as usize;
        for (o, v) in out.iter_mut().zip(&self.values[off..off + self.n_outputs]) {
            *o += v;
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_outputs];
        self.predict_into(x, &mut out);
        out
    }

    fn leaf(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return i;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn grow(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let id = self.tree.nodes.len() as u32;
        self.tree.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0,
        });
        let split = if depth < self.params.max_depth && rows.len() >= 2 * self.params.min_leaf.max(1) {
            self.best_split(rows)
        } else {
            None
        };
        match split {
            None => {
                let off = self.tree.values.len() as u32;
                let mean = self.mean(rows);
                self.tree.values.extend(mean);
                self.tree.nodes[id as usize].value = off;
            }
            Some(s) => {
                self.tree.importance[s.feature] += s.gain;
                let f = s.feature;
                let data = self.data;
                rows.sort_by(|&a, &b| data.x(a as usize)[f].total_cmp(&data.x(b as usize)[f]));
                let (l, r) = rows.split_at_mut(s.n_left);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                let node = &mut self.tree.nodes[id as usize];
                node.feature = f as u32;
                node.threshold = s.threshold;
                node.left = left;
                node.right = right;
            }
        }
        id
    }

    fn mean(&self, rows: &[u32]) -> Vec<f64> {
        let mut m = vec![0.0; self.data.n_outputs];
        for &r in rows {
            for (a, v) in m.iter_mut().zip(self.data.y(r as usize)) {
                *a += v;
            }
        }
        let n = rows.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    fn best_split(&mut self, rows: &[u32]) -> Option<Split> {
        let d = self.data;
        let k = d.n_outputs;
        let n = rows.len();
        let min_leaf = self.params.min_leaf.max(1);

        let mut total = vec![0.0; k];
        let mut total_sq = 0.0;
        for &r in rows {
            for (t, &v) in total.iter_mut().zip(d.y(r as usize)) {
                *t += v;
                total_sq += v * v;
            }
        }
        let sse_parent = total_sq - total.iter().map(|s| s * s).sum::<f64>() / n as f64;
        if sse_parent <= 1e-12 * (1.0 + total_sq) {
            return None;
        }

        let n_feat = d.n_features;
        let mut candidates: Vec<usize> = if self.params.max_features >= n_feat {
            (0..n_feat).collect()
        } else {
            sample(self.rng, n_feat, self.params.max_features).into_vec()
        };
        candidates.sort_unstable();

        let mut best: Option<Split> = None;
        let mut left = vec![0.0; k];
        for &f in &candidates {
            self.keys.clear();
            self.keys.extend(rows.iter().map(|&r| (d.x(r as usize)[f], r)));
            self.keys.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.keys[0].0 == self.keys[n - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|v| *v = 0.0);
            // sum of squares cancels in the gain, only the sums matter
            for i in 0..n - 1 {
                let (xv, r) = self.keys[i];
                for (l, &v) in left.iter_mut().zip(d.y(r as usize)) {
                    *l += v;
                }
                let n_left = i + 1;
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let next = self.keys[i + 1].0;
                if next == xv {
                    continue;
                }
                let nl = n_left as f64;
                let nr = (n - n_left) as f64;
                let mut score = 0.0;
                for j in 0..k {
                    let r = total[j] - left[j];
                    score += left[j] * left[j] / nl + r * r / nr;
                }
                let gain = score - total.iter().map(|s| s * s).sum::<f64>() / n as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        feature: f,
                        threshold: xv + (next - xv) / 2.0,
                        n_left,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }
}
