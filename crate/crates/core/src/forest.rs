//! Gini decision trees, bagged random forests and exhaustive grid search
//! under stratified k-fold cross-validation.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values. Among equally good splits the lowest feature index wins, then the
//! lowest threshold. Zero-gain splits are allowed, so XOR-like structure can
//! still be carved out below an uninformative root.
//!
//! Every tree draws from its own RNG stream derived from (seed, tree index),
//! and every grid cell from a seed derived from (seed, cell index), so
//! results do not depend on evaluation order.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, FormatError};
use crate::dataset::{WindowedDataset, HIGH, LOW};
use crate::seed;

pub const FOREST_MAGIC: &[u8; 4] = b"GLRF";
pub const FOREST_VERSION: u32 = 1;

const LEAF: u32 = u32::MAX;
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("label multiset is empty")]
    EmptySet,
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("fold {fold} lacks class {class}; need at least {folds} rows of each class")]
    FoldTooSmall { fold: usize, class: u8, folds: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<std::io::Error> for ForestError {
    fn from(e: std::io::Error) -> Self {
        Self::Format(FormatError::Io(e))
    }
}

/// 1 - p0² - p1².
pub fn gini(labels: &[u8]) -> Result<f64, ForestError> {
    if labels.is_empty() {
        return Err(ForestError::EmptySet);
    }
    let ones = labels.iter().filter(|&&l| l == HIGH).count();
    Ok(gini_counts(labels.len() - ones, ones))
}

fn gini_counts(n0: usize, n1: usize) -> f64 {
    let n = (n0 + n1) as f64;
    let (p0, p1) = (n0 as f64 / n, n1 as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    pub fn count(self, width: usize) -> usize {
        let k = match self {
            Self::Sqrt => (width as f64).sqrt().floor() as usize,
            Self::Log2 => (width as f64).log2().floor() as usize,
            Self::All => width,
        };
        k.clamp(1, width.max(1))
    }

    fn tag(self) -> u8 {
        match self {
            Self::Sqrt => 0,
            Self::Log2 => 1,
            Self::All => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self, FormatError> {
        match t {
            0 => Ok(Self::Sqrt),
            1 => Ok(Self::Log2),
            2 => Ok(Self::All),
            _ => Err(FormatError::Corrupt(format!("unknown max_features tag {t}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sqrt => "sqrt",
            Self::Log2 => "log2",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::InvalidConfig(m));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1".into());
        }
        if self.min_samples_split < 2 {
            return bad(format!("min_samples_split must be >= 2, got {}", self.min_samples_split));
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        codec::write_u32(w, self.n_trees as u32)?;
        codec::write_u64(w, self.max_depth.map_or(u64::MAX, |d| d as u64))?;
        codec::write_u32(w, self.min_samples_split as u32)?;
        codec::write_u32(w, self.min_samples_leaf as u32)?;
        codec::write_u8(w, self.max_features.tag())?;
        codec::write_u8(w, self.bootstrap as u8)?;
        codec::write_u64(w, self.seed)
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self, FormatError> {
        let n_trees = codec::read_u32(r)? as usize;
        let depth = codec::read_u64(r)?;
        let cfg = Self {
            n_trees,
            max_depth: (depth != u64::MAX).then_some(depth as usize),
            min_samples_split: codec::read_u32(r)? as usize,
            min_samples_leaf: codec::read_u32(r)? as usize,
            max_features: MaxFeatures::from_tag(codec::read_u8(r)?)?,
            bootstrap: match codec::read_u8(r)? {
                0 => false,
                1 => true,
                b => return Err(FormatError::Corrupt(format!("bad bootstrap flag {b}"))),
            },
            seed: codec::read_u64(r)?,
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// Split feature; `u32::MAX` marks a leaf.
    pub feature: u32,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Fraction of high-CL training rows that reached this node.
    pub p_high: f64,
    /// Training rows (with bootstrap multiplicity) that reached this node.
    pub samples: u32,
    pub depth: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }

    /// Class-probability pair (low, high).
    pub fn class_probs(&self) -> (f64, f64) {
        (1.0 - self.p_high, self.p_high)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, row: &[f64]) -> &Node {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            let next = if row[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            };
            node = &self.nodes[next as usize];
        }
        node
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.leaf_for(row).p_high
    }

    /// Majority class of the reached leaf; an even split goes to low.
    pub fn predict(&self, row: &[f64]) -> u8 {
        if self.predict_proba(row) > 0.5 {
            HIGH
        } else {
            LOW
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth as usize).max().unwrap_or(0)
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best Gini split of `sample` over `features` (ascending), honoring the
/// minimum leaf size.
pub fn best_split(
    inputs: &[f64],
    width: usize,
    labels: &[u8],
    sample: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let n = sample.len();
    let n1 = sample.iter().filter(|&&i| labels[i] == HIGH).count();
    let parent = gini_counts(n - n1, n1);
    let mut best: Option<Split> = None;
    let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &f in features {
        column.clear();
        column.extend(sample.iter().map(|&i| (inputs[i * width + f], labels[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut l0, mut l1) = (0usize, 0usize);
        for i in 0..n - 1 {
            if column[i].1 == HIGH {
                l1 += 1;
            } else {
                l0 += 1;
            }
            let (lo, hi) = (column[i].0, column[i + 1].0);
            let nl = i + 1;
            let nr = n - nl;
            if lo == hi || nl < min_samples_leaf || nr < min_samples_leaf {
                continue;
            }
            let (r0, r1) = (n - n1 - l0, n1 - l1);
            let weighted = (nl as f64 * gini_counts(l0, l1) + nr as f64 * gini_counts(r0, r1)) / n as f64;
            let gain = parent - weighted;
            if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    inputs: &'a [f64],
    width: usize,
    labels: &'a [u8],
    cfg: &'a ForestConfig,
    n_features: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, sample: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let n = sample.len();
        let n1 = sample.iter().filter(|&&i| self.labels[i] == HIGH).count();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature: LEAF,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            p_high: n1 as f64 / n as f64,
            samples: n as u32,
            depth: depth as u32,
        });
        let pure = n1 == 0 || n1 == n;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < self.cfg.min_samples_split || n < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let features: Vec<usize> = if self.n_features >= self.width {
            (0..self.width).collect()
        } else {
            let mut f = index::sample(rng, self.width, self.n_features).into_vec();
            f.sort_unstable();
            f
        };
        let Some(split) = best_split(self.inputs, self.width, self.labels, &sample, &features, self.cfg.min_samples_leaf)
        else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .into_iter()
            .partition(|&i| self.inputs[i * self.width + split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        let node = &mut self.nodes[id as usize];
        node.feature = split.feature as u32;
        node.threshold = split.threshold;
        node.left = l;
        node.right = r;
        id
    }
}

/// Fits one tree on the rows listed in `sample` (duplicates allowed).
pub fn fit_tree_on(
    inputs: &[f64],
    width: usize,
    labels: &[u8],
    sample: Vec<usize>,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut b = TreeBuilder {
        inputs,
        width,
        labels,
        cfg,
        n_features: cfg.max_features.count(width),
        nodes: Vec::new(),
    };
    b.grow(sample, 0, rng);
    Tree { nodes: b.nodes }
}

/// Fits one tree on every row of a row-major matrix.
pub fn fit_tree(inputs: &[f64], width: usize, labels: &[u8], cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> Result<Tree, ForestError> {
    if labels.is_empty() {
        return Err(ForestError::EmptySet);
    }
    if inputs.len() != labels.len() * width {
        return Err(ForestError::DimensionMismatch {
            expected: labels.len() * width,
            got: inputs.len(),
        });
    }
    cfg.validate()?;
    Ok(fit_tree_on(inputs, width, labels, (0..labels.len()).collect(), cfg, rng))
}

/// One row of the grid-search score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub config: ForestConfig,
    pub fold_scores: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub width: usize,
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub cv_scores: Vec<GridScore>,
}

impl ForestModel {
    /// Fraction of trees voting high.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.predict(row) == HIGH).count();
        votes as f64 / self.trees.len() as f64
    }

    /// Majority vote; ties go to low.
    pub fn predict(&self, row: &[f64]) -> u8 {
        let votes = self.trees.iter().filter(|t| t.predict(row) == HIGH).count();
        if 2 * votes > self.trees.len() {
            HIGH
        } else {
            LOW
        }
    }

    pub fn accuracy(&self, data: &WindowedDataset) -> f64 {
        let correct = data.rows().zip(data.labels()).filter(|(r, &l)| self.predict(r) == l).count();
        correct as f64 / data.len() as f64
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ForestError> {
        codec::write_header(w, FOREST_MAGIC, FOREST_VERSION)?;
        codec::write_u64(w, self.width as u64)?;
        self.config.write_to(w)?;
        codec::write_u32(w, self.trees.len() as u32)?;
        for t in &self.trees {
            codec::write_u32(w, t.nodes.len() as u32)?;
            for n in &t.nodes {
                codec::write_u32(w, n.feature)?;
                codec::write_f64(w, n.threshold)?;
                codec::write_u32(w, n.left)?;
                codec::write_u32(w, n.right)?;
                codec::write_f64(w, n.p_high)?;
                codec::write_u32(w, n.samples)?;
                codec::write_u32(w, n.depth)?;
            }
        }
        codec::write_u32(w, self.cv_scores.len() as u32)?;
        for s in &self.cv_scores {
            s.config.write_to(w)?;
            codec::write_u32(w, s.fold_scores.len() as u32)?;
            codec::write_f64s(w, &s.fold_scores)?;
            codec::write_f64(w, s.mean_accuracy)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ForestError> {
        let version = codec::read_header(r, FOREST_MAGIC)?;
        if version != FOREST_VERSION {
            return Err(FormatError::UnsupportedVersion { what: "forest model", version }.into());
        }
        let width = codec::read_u64(r)? as usize;
        let config = ForestConfig::read_from(r)?;
        let n_trees = codec::read_u32(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let n = codec::read_u32(r)? as usize;
            let mut nodes = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                nodes.push(Node {
                    feature: codec::read_u32(r)?,
                    threshold: codec::read_f64(r)?,
                    left: codec::read_u32(r)?,
                    right: codec::read_u32(r)?,
                    p_high: codec::read_f64(r)?,
                    samples: codec::read_u32(r)?,
                    depth: codec::read_u32(r)?,
                });
            }
            validate_tree(&nodes, width)?;
            trees.push(Tree { nodes });
        }
        let n_scores = codec::read_u32(r)? as usize;
        let mut cv_scores = Vec::with_capacity(n_scores.min(1 << 16));
        for _ in 0..n_scores {
            let config = ForestConfig::read_from(r)?;
            let k = codec::read_u32(r)? as usize;
            let fold_scores = codec::read_f64s(r, k)?;
            let mean_accuracy = codec::read_f64(r)?;
            cv_scores.push(GridScore {
                config,
                fold_scores,
                mean_accuracy,
            });
        }
        codec::expect_eof(r)?;
        if trees.is_empty() {
            return Err(FormatError::Corrupt("forest has no trees".into()).into());
        }
        Ok(Self {
            width,
            trees,
            config,
            cv_scores,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Grid-search score table as CSV, one row per configuration.
    pub fn write_scores_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let folds = self.cv_scores.first().map_or(0, |s| s.fold_scores.len());
        write!(w, "n_trees,max_depth,min_samples_split,min_samples_leaf,max_features,bootstrap,mean_accuracy")?;
        for k in 0..folds {
            write!(w, ",fold_{}", k + 1)?;
        }
        writeln!(w)?;
        for s in &self.cv_scores {
            let c = &s.config;
            write!(
                w,
                "{},{},{},{},{},{},{}",
                c.n_trees,
                c.max_depth.map_or("none".to_string(), |d| d.to_string()),
                c.min_samples_split,
                c.min_samples_leaf,
                c.max_features.as_str(),
                c.bootstrap,
                s.mean_accuracy
            )?;
            for f in &s.fold_scores {
                write!(w, ",{f}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn validate_tree(nodes: &[Node], width: usize) -> Result<(), FormatError> {
    if nodes.is_empty() {
        return Err(FormatError::Corrupt("tree has no nodes".into()));
    }
    for n in nodes {
        if !(0.0..=1.0).contains(&n.p_high) {
            return Err(FormatError::Corrupt("leaf probability outside [0, 1]".into()));
        }
        if !n.is_leaf() {
            let ok = (n.feature as usize) < width
                && (n.left as usize) < nodes.len()
                && (n.right as usize) < nodes.len();
            if !ok {
                return Err(FormatError::Corrupt("internal node references missing child".into()));
            }
        }
    }
    Ok(())
}

/// Fits `cfg.n_trees` trees, each on its own bootstrap sample when enabled.
pub fn fit_forest(train: &WindowedDataset, cfg: &ForestConfig) -> Result<ForestModel, ForestError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ForestError::EmptySet);
    }
    if !train.has_both_classes() {
        return Err(ForestError::SingleClassData);
    }
    let n = train.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = seed::stream_rng(cfg.seed, t as u64 + 1);
            let sample: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on(train.inputs(), train.width(), train.labels(), sample, cfg, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        width: train.width(),
        trees,
        config: cfg.clone(),
        cv_scores: Vec::new(),
    })
}

/// Candidate values per tuned hyperparameter. Fields missing from a
/// serialized grid take their default lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: Vec<bool>,
}

impl Default for ForestGrid {
    /// 486 combinations.
    fn default() -> Self {
        Self {
            n_trees: vec![100, 200, 400],
            max_depth: vec![None, Some(10), Some(20)],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
            max_features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2, MaxFeatures::All],
            bootstrap: vec![true, false],
        }
    }
}

impl ForestGrid {
    pub fn len(&self) -> usize {
        self.n_trees.len()
            * self.max_depth.len()
            * self.min_samples_split.len()
            * self.min_samples_leaf.len()
            * self.max_features.len()
            * self.bootstrap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All combinations; the last field varies fastest.
    pub fn combinations(&self) -> Vec<ForestConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &min_samples_split in &self.min_samples_split {
                    for &min_samples_leaf in &self.min_samples_leaf {
                        for &max_features in &self.max_features {
                            for &bootstrap in &self.bootstrap {
                                out.push(ForestConfig {
                                    n_trees,
                                    max_depth,
                                    min_samples_split,
                                    min_samples_leaf,
                                    max_features,
                                    bootstrap,
                                    seed: 0,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>, ForestError> {
    use rand::seq::SliceRandom;
    let mut rng = seed::stream_rng(seed, 0);
    let mut fold_of = vec![0usize; labels.len()];
    for class in [LOW, HIGH] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < folds {
            return Err(ForestError::FoldTooSmall {
                fold: idx.len(),
                class,
                folds,
            });
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    Ok(fold_of)
}

/// Scores every grid combination by mean k-fold accuracy and refits the
/// winner (first best in enumeration order) on all of `train`.
pub fn grid_search(train: &WindowedDataset, grid: &ForestGrid, folds: usize, seed: u64) -> Result<ForestModel, ForestError> {
    if grid.is_empty() {
        return Err(ForestError::InvalidConfig("grid has no combinations".into()));
    }
    if folds < 2 {
        return Err(ForestError::InvalidConfig(format!("folds must be >= 2, got {folds}")));
    }
    if !train.has_both_classes() {
        return Err(ForestError::SingleClassData);
    }
    let fold_of = stratified_folds(train.labels(), folds, seed)?;
    let splits: Vec<(WindowedDataset, WindowedDataset)> = (0..folds)
        .map(|k| {
            let fit: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] != k).collect();
            let held: Vec<usize> = (0..train.len()).filter(|&i| fold_of[i] == k).collect();
            (train.select(&fit), train.select(&held))
        })
        .collect();

    let mut scores = Vec::with_capacity(grid.len());
    for (g, mut cfg) in grid.combinations().into_iter().enumerate() {
        cfg.seed = seed::derive(seed, g as u64);
        cfg.validate()?;
        let fold_scores = splits
            .iter()
            .map(|(fit, held)| fit_forest(fit, &cfg).map(|m| m.accuracy(held)))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_accuracy = fold_scores.iter().sum::<f64>() / folds as f64;
        tracing::debug!(cell = g, mean_accuracy, "grid cell scored");
        scores.push(GridScore {
            config: cfg,
            fold_scores,
            mean_accuracy,
        });
    }
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if s.mean_accuracy > scores[best].mean_accuracy { i } else { best });
    let mut model = fit_forest(train, &scores[best].config)?;
    model.cv_scores = scores;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InputMode;

    fn ds(rows: &[(&[f64], u8)]) -> WindowedDataset {
        let width = rows[0].0.len();
        WindowedDataset::from_parts(
            width,
            InputMode::Flatten,
            rows.iter().flat_map(|r| r.0.to_vec()).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().enumerate().map(|(i, _)| format!("g{i}")).collect(),
        )
        .unwrap()
    }

    fn all_features() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn gini_fixtures() {
        assert_eq!(gini(&[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(gini(&[1, 1, 1]).unwrap(), 0.0);
        assert!((gini(&[0, 0, 0, 1]).unwrap() - 0.375).abs() < 1e-15);
        assert!(matches!(gini(&[]), Err(ForestError::EmptySet)));
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::Sqrt.count(4000), 63);
        assert_eq!(MaxFeatures::Log2.count(4000), 11);
        assert_eq!(MaxFeatures::All.count(7), 7);
        assert_eq!(MaxFeatures::Log2.count(1), 1);
    }

    #[test]
    fn pure_input_is_single_leaf() {
        let mut rng = seed::stream_rng(0, 0);
        let t = fit_tree(&[1.0, 2.0, 3.0], 1, &[1, 1, 1], &all_features(), &mut rng).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root().class_probs(), (0.0, 1.0));
    }

    #[test]
    fn separable_1d_gives_stump() {
        let x = [-3.0, -2.0, -0.5, 0.0, 1.0, 2.5];
        let y = [0, 0, 0, 1, 1, 1];
        let mut rng = seed::stream_rng(0, 0);
        let t = fit_tree(&x, 1, &y, &all_features(), &mut rng).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.root().threshold, -0.25);
        for (v, l) in x.iter().zip(y) {
            assert_eq!(t.predict(&[*v]), l);
        }
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let rows: Vec<(Vec<f64>, u8)> = (0..30)
            .map(|i| (vec![(i * 7 % 11) as f64, (i * 5 % 13) as f64], ((i * 7 % 11) > 5) as u8))
            .collect();
        let refs: Vec<(&[f64], u8)> = rows.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        let d = ds(&refs);
        let cfg = all_features();
        let forest = fit_forest(&d, &cfg).unwrap();
        let mut rng = seed::stream_rng(0, 0);
        let tree = fit_tree(d.inputs(), d.width(), d.labels(), &cfg, &mut rng).unwrap();
        assert_eq!(forest.trees[0], tree);
        for r in d.rows() {
            assert_eq!(forest.predict(r), tree.predict(r));
        }
    }

    #[test]
    fn forest_is_deterministic_and_separates() {
        let rows: Vec<(Vec<f64>, u8)> = (0..40).map(|i| (vec![i as f64, (i % 3) as f64], (i >= 20) as u8)).collect();
        let refs: Vec<(&[f64], u8)> = rows.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        let d = ds(&refs);
        let cfg = ForestConfig {
            n_trees: 15,
            seed: 5,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let a = fit_forest(&d, &cfg).unwrap();
        let b = fit_forest(&d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accuracy(&d), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        let d = ds(&[(&[0.0], 1), (&[1.0], 1)]);
        assert!(matches!(fit_forest(&d, &ForestConfig::default()), Err(ForestError::SingleClassData)));
    }

    #[test]
    fn nodes_respect_limits() {
        let rows: Vec<(Vec<f64>, u8)> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.618).fract();
                let y = (i as f64 * 0.414).fract();
                (vec![x, y], ((x - 0.5) * (y - 0.5) > 0.0) as u8)
            })
            .collect();
        let refs: Vec<(&[f64], u8)> = rows.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        let d = ds(&refs);
        for (depth, split, leaf) in [(Some(3), 2, 1), (None, 10, 4), (Some(6), 5, 2)] {
            let cfg = ForestConfig {
                n_trees: 5,
                max_depth: depth,
                min_samples_split: split,
                min_samples_leaf: leaf,
                seed: 1,
                ..ForestConfig::default()
            };
            let m = fit_forest(&d, &cfg).unwrap();
            for t in &m.trees {
                for n in &t.nodes {
                    if let Some(max) = depth {
                        assert!(n.depth as usize <= max);
                    }
                    assert!(n.samples as usize >= leaf);
                    if !n.is_leaf() {
                        assert!(n.samples as usize >= split);
                        let (l, r) = (&t.nodes[n.left as usize], &t.nodes[n.right as usize]);
                        assert_eq!(l.samples + r.samples, n.samples);
                    }
                    let (p0, p1) = n.class_probs();
                    assert!((p0 + p1 - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn grid_enumeration_and_single_cell() {
        assert_eq!(ForestGrid::default().len(), 486);
        assert_eq!(ForestGrid::default().combinations().len(), 486);
        let d = ds(&[(&[0.0], 0), (&[1.0], 0), (&[2.0], 0), (&[3.0], 1), (&[4.0], 1), (&[5.0], 1)]);
        let grid = ForestGrid {
            n_trees: vec![3],
            max_depth: vec![Some(2)],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1],
            max_features: vec![MaxFeatures::All],
            bootstrap: vec![false],
        };
        let m = grid_search(&d, &grid, 3, 9).unwrap();
        assert_eq!(m.cv_scores.len(), 1);
        assert_eq!(m.config.n_trees, 3);
        assert_eq!(m.config.max_depth, Some(2));
        assert_eq!(m.cv_scores[0].fold_scores.len(), 3);
    }

    fn xor_set() -> WindowedDataset {
        let rows: Vec<(Vec<f64>, u8)> = (0..48)
            .map(|i| {
                let (a, b) = (i % 2, (i / 2) % 2);
                let jitter = (i / 4) as f64 * 0.01;
                (vec![a as f64 + jitter, b as f64 - jitter], (a ^ b) as u8)
            })
            .collect();
        let refs: Vec<(&[f64], u8)> = rows.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        ds(&refs)
    }

    #[test]
    fn xor_prefers_deep_trees() {
        let d = xor_set();
        let grid = ForestGrid {
            n_trees: vec![5],
            max_depth: vec![Some(1), None],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1],
            max_features: vec![MaxFeatures::All],
            bootstrap: vec![false],
        };
        let m = grid_search(&d, &grid, 3, 2).unwrap();
        assert_eq!(m.config.max_depth, None);
        assert!((m.cv_scores[0].mean_accuracy - 0.5).abs() <= 0.15, "{}", m.cv_scores[0].mean_accuracy);
        assert!(m.cv_scores[1].mean_accuracy >= 0.9);
    }

    #[test]
    fn grid_scores_reproducible() {
        let d = xor_set();
        let grid = ForestGrid {
            n_trees: vec![3, 4],
            max_depth: vec![Some(2), None],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1, 2],
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![true],
        };
        let a = grid_search(&d, &grid, 3, 11).unwrap();
        let b = grid_search(&d, &grid, 3, 11).unwrap();
        assert_eq!(a.cv_scores.len(), grid.len());
        assert_eq!(a, b);
    }

    #[test]
    fn forest_at_least_as_accurate_as_tree() {
        let d = xor_set();
        let tree_cfg = all_features();
        let tree = fit_forest(&d, &tree_cfg).unwrap();
        let forest = fit_forest(&d, &ForestConfig { n_trees: 9, ..tree_cfg }).unwrap();
        assert!(forest.accuracy(&d) >= tree.accuracy(&d));
    }

    #[test]
    fn fold_too_small_is_reported() {
        let d = ds(&[(&[0.0], 0), (&[1.0], 0), (&[2.0], 1), (&[3.0], 1), (&[4.0], 1)]);
        assert!(matches!(
            grid_search(&d, &ForestGrid::default(), 3, 0),
            Err(ForestError::FoldTooSmall { class: 0, .. })
        ));
    }

    #[test]
    fn model_round_trip() {
        let d = ds(&[(&[0.0, 1.0], 0), (&[1.0, 0.0], 0), (&[2.0, 2.0], 1), (&[3.0, 1.0], 1), (&[4.0, 0.5], 1), (&[0.5, 0.2], 0)]);
        let grid = ForestGrid {
            n_trees: vec![2, 3],
            max_depth: vec![None],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1],
            max_features: vec![MaxFeatures::Sqrt],
            bootstrap: vec![true],
        };
        let m = grid_search(&d, &grid, 2, 4).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GLRF");
        let back = ForestModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut csv = Vec::new();
        m.write_scores_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("n_trees,max_depth,"));
    }
}
