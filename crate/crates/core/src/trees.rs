//! Extremely randomized regression trees.
//!
//! Each tree is grown top-down on the full training set. At a node, up to
//! `k_features` non-constant features are drawn without replacement, one
//! threshold is drawn uniformly between the feature's node-local minimum and
//! maximum, and the candidate with the largest variance reduction is kept.
//! Leaves store the mean target of their rows; the forest averages leaves.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::exec::Parallelism;
use crate::math;
use crate::rng::{tag, RngStream, StreamRng};

/// Row-major matrix of training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, cols: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Input("matrix needs at least one column"));
        }
        if !data.len().is_multiple_of(cols) {
            return Err(Error::Input("matrix data is not a whole number of rows"));
        }
        Ok(Self { data, cols })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::Input("matrix needs at least one row"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("matrix row", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, cols)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.cols)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Number of candidate features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FeatureSubset {
    #[default]
    All,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TreeParams {
    pub n_trees: usize,
    /// A node with fewer than `max(2, ceil(fraction * n))` rows becomes a leaf.
    pub min_split_fraction: f64,
    pub k_features: FeatureSubset,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            min_split_fraction: 0.01,
            k_features: FeatureSubset::All,
            seed: 0,
        }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Input("n_trees must be >= 1"));
        }
        if !(self.min_split_fraction > 0.0 && self.min_split_fraction <= 1.0) {
            return Err(Error::Input("min_split_fraction must lie in (0, 1]"));
        }
        if self.k_features == FeatureSubset::Count(0) {
            return Err(Error::Input("k_features must be >= 1"));
        }
        Ok(())
    }

    pub fn min_split_rows(&self, n: usize) -> usize {
        (math::ceil(self.min_split_fraction * n as f64) as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// A single leaf predicting `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            nodes: alloc::vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Candidates considered at one split, for auditing the selection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAudit {
    /// `(feature, threshold, variance reduction)` in draw order.
    pub candidates: Vec<(usize, f64, f64)>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub feature_dim: usize,
    pub train_size: usize,
}

fn validate_inputs(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<()> {
    params.validate()?;
    if y.is_empty() {
        return Err(Error::Input("cannot fit a forest on an empty dataset"));
    }
    check_dim("targets", x.rows(), y.len())?;
    if !math::all_finite(&x.data) || !math::all_finite(y) {
        return Err(Error::Numerical("forest training data"));
    }
    Ok(())
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    min_rows: usize,
    k_features: FeatureSubset,
    rng: StreamRng,
    nodes: Vec<Node>,
    audit: Option<&'a mut Vec<SplitAudit>>,
    // scratch buffers
    ranges: Vec<(f64, f64)>,
    movable: Vec<usize>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> u32 {
        let values: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        self.push(Node::Leaf {
            value: math::bounded_mean(&values),
        })
    }

    fn push(&mut self, node: Node) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    fn build(&mut self, rows: &mut [usize]) -> u32 {
        let first = self.y[rows[0]];
        if rows.len() < self.min_rows || rows.iter().all(|&i| self.y[i] == first) {
            return self.leaf(rows);
        }
        let d = self.x.cols();
        self.ranges.clear();
        self.ranges.extend((0..d).map(|j| {
            rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.x.get(i, j);
                (lo.min(v), hi.max(v))
            })
        }));
        self.movable.clear();
        self.movable.extend((0..d).filter(|&j| self.ranges[j].0 < self.ranges[j].1));
        if self.movable.is_empty() {
            return self.leaf(rows);
        }
        let k = match self.k_features {
            FeatureSubset::All => self.movable.len(),
            FeatureSubset::Count(k) => k.min(self.movable.len()),
        };
        // partial Fisher-Yates: the first k entries become the candidates
        for c in 0..k {
            let pick = c + self.rng.index(self.movable.len() - c);
            self.movable.swap(c, pick);
        }

        let (total, total_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &i| {
            let v = self.y[i];
            (s + v, q + v * v)
        });
        let n = rows.len() as f64;
        let parent_sse = total_sq - total * total / n;

        let mut best: Option<(usize, usize, f64, f64)> = None;
        let mut audit = Vec::new();
        for c in 0..k {
            let feature = self.movable[c];
            let (lo, hi) = self.ranges[feature];
            let threshold = self.rng.uniform(lo, hi);
            let (mut ls, mut lq, mut ln) = (0.0, 0.0, 0usize);
            for &i in rows.iter() {
                if self.x.get(i, feature) <= threshold {
                    let v = self.y[i];
                    ls += v;
                    lq += v * v;
                    ln += 1;
                }
            }
            let (rs, rq, rn) = (total - ls, total_sq - lq, rows.len() - ln);
            let left_sse = lq - ls * ls / ln as f64;
            let right_sse = rq - rs * rs / rn as f64;
            let score = (parent_sse - left_sse - right_sse) / n;
            if self.audit.is_some() {
                audit.push((feature, threshold, score));
            }
            if best.is_none_or(|(_, _, _, s)| score > s) {
                best = Some((c, feature, threshold, score));
            }
        }
        let (chosen, feature, threshold, _) = best.expect("at least one candidate");
        if let Some(log) = self.audit.as_deref_mut() {
            log.push(SplitAudit {
                candidates: audit,
                chosen,
            });
        }

        // partition rows in place: left block first
        let mut split = 0;
        for i in 0..rows.len() {
            if self.x.get(rows[i], feature) <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let idx = self.push(Node::Split {
            feature: feature as u32,
            threshold,
            left: 0,
            right: 0,
        });
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.build(left_rows);
        let right = self.build(right_rows);
        self.nodes[idx as usize] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
        };
        idx
    }
}

fn grow(
    x: &Matrix,
    y: &[f64],
    params: &TreeParams,
    tree_index: usize,
    audit: Option<&mut Vec<SplitAudit>>,
) -> Tree {
    let stream = RngStream::new(params.seed).child(tag::TREE, tree_index as u64);
    let mut builder = Builder {
        x,
        y,
        min_rows: params.min_split_rows(y.len()),
        k_features: params.k_features,
        rng: stream.rng(),
        nodes: Vec::new(),
        audit,
        ranges: Vec::new(),
        movable: Vec::new(),
    };
    let mut rows: Vec<usize> = (0..y.len()).collect();
    builder.build(&mut rows);
    Tree {
        nodes: builder.nodes,
    }
}

/// Grows tree number `tree_index` of a forest; trees are independent so a
/// caller may grow them in any order or in parallel.
pub fn fit_tree(x: &Matrix, y: &[f64], params: &TreeParams, tree_index: usize) -> Result<Tree> {
    validate_inputs(x, y, params)?;
    Ok(grow(x, y, params, tree_index, None))
}

impl Forest {
    pub fn fit(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<Self> {
        validate_inputs(x, y, params)?;
        let trees = (0..params.n_trees)
            .map(|t| grow(x, y, params, t, None))
            .collect();
        Ok(Self::from_trees(trees, x.cols(), y.len()))
    }

    /// [`Forest::fit`] with the trees grown through `exec`; identical output.
    pub fn fit_with<P: Parallelism>(x: &Matrix, y: &[f64], params: &TreeParams, exec: &P) -> Result<Self> {
        validate_inputs(x, y, params)?;
        let trees = exec.map_indexed(params.n_trees, |t| grow(x, y, params, t, None));
        Ok(Self::from_trees(trees, x.cols(), y.len()))
    }

    /// Like [`Forest::fit`], also returning every split's candidate list.
    pub fn fit_audited(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<(Self, Vec<SplitAudit>)> {
        validate_inputs(x, y, params)?;
        let mut audit = Vec::new();
        let trees = (0..params.n_trees)
            .map(|t| grow(x, y, params, t, Some(&mut audit)))
            .collect();
        Ok((Self::from_trees(trees, x.cols(), y.len()), audit))
    }

    pub fn from_trees(trees: Vec<Tree>, feature_dim: usize, train_size: usize) -> Self {
        Self {
            trees,
            feature_dim,
            train_size,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("forest input", self.feature_dim, x.len())?;
        Ok(self.predict_unchecked(x))
    }

    /// Averages leaf values; the result is clamped to the leaves' range so it
    /// never leaves the span of the training targets.
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for tree in &self.trees {
            let v = tree.leaf_value(x);
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            lo
        } else {
            (sum / self.trees.len() as f64).clamp(lo, hi)
        }
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        check_dim("forest input", self.feature_dim, x.cols())?;
        Ok(x.iter_rows().map(|r| self.predict_unchecked(r)).collect())
    }
}
