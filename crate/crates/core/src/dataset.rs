//! Labelled sliding-window instances built from fixation features.
//!
//! Fixation duration and mean pupil are spread back onto the sample axis
//! (each sample carries the values of the fixation it belongs to, or the most
//! recent one), then cut into fixed-length strided windows. Every window
//! inherits its session's binary label and participant id.
//!
//! Overlapping windows from one participant are strongly correlated, so a
//! window-level random split lets the classifier see near-copies of test
//! windows during training. Use [`SplitMode::SubjectWise`] when an estimate of
//! generalization to unseen participants is wanted.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, FormatError};
use crate::ivt::FixationEvent;

pub const DATASET_MAGIC: &[u8; 4] = b"GLDS";
pub const DATASET_VERSION: u32 = 1;

pub const LOW: u8 = 0;
pub const HIGH: u8 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("TLX score {0} is outside 1..=7")]
    OutOfRange(i64),
    #[error("session has {len} samples, shorter than the window length {window_len}")]
    SessionTooShort { len: usize, window_len: usize },
    #[error("invalid window config: {0}")]
    InvalidConfig(String),
    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("cannot combine datasets: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        Self::Format(FormatError::Io(e))
    }
}

/// NASA-TLX mental demand 1–4 is low, 5–7 is high.
pub fn binarize_tlx(score: i64) -> Result<u8, DatasetError> {
    match score {
        1..=4 => Ok(LOW),
        5..=7 => Ok(HIGH),
        other => Err(DatasetError::OutOfRange(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Both channel windows concatenated: 2 × window_len values.
    Flatten,
    /// Mean, std, min, max of each channel: 8 values.
    Summary,
}

impl InputMode {
    fn tag(self) -> u8 {
        match self {
            Self::Flatten => 0,
            Self::Summary => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            0 => Ok(Self::Flatten),
            1 => Ok(Self::Summary),
            t => Err(FormatError::Corrupt(format!("unknown input mode tag {t}"))),
        }
    }

    pub fn width(self, window_len: usize) -> usize {
        match self {
            Self::Flatten => 2 * window_len,
            Self::Summary => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_len: usize,
    pub stride: usize,
    pub input_mode: InputMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 2000,
            stride: 500,
            input_mode: InputMode::Flatten,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.window_len == 0 {
            return Err(DatasetError::InvalidConfig("window_len must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.window_len {
            return Err(DatasetError::InvalidConfig(format!(
                "stride must be in 1..={}, got {}",
                self.window_len, self.stride
            )));
        }
        Ok(())
    }

    /// floor((n - window_len) / stride) + 1, or 0 when n < window_len.
    pub fn window_count(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.stride + 1
        }
    }

    pub fn width(&self) -> usize {
        self.input_mode.width(self.window_len)
    }
}

/// Row-major window matrix with per-row label and participant.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    width: usize,
    mode: InputMode,
    inputs: Vec<f64>,
    labels: Vec<u8>,
    groups: Vec<String>,
}

impl WindowedDataset {
    pub fn empty(width: usize, mode: InputMode) -> Self {
        Self {
            width,
            mode,
            inputs: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// Builds a dataset from raw parts, checking shapes, labels and
    /// finiteness.
    pub fn from_parts(
        width: usize,
        mode: InputMode,
        inputs: Vec<f64>,
        labels: Vec<u8>,
        groups: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if width == 0 {
            return Err(DatasetError::InvalidConfig("width must be positive".into()));
        }
        let rows = labels.len();
        if inputs.len() != rows * width || groups.len() != rows {
            return Err(DatasetError::InvalidConfig(format!(
                "shape mismatch: {} inputs, {} labels, {} groups for width {width}",
                inputs.len(),
                rows,
                groups.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(DatasetError::InvalidConfig("labels must be 0 or 1".into()));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(DatasetError::InvalidConfig("inputs must be finite".into()));
        }
        Ok(Self {
            width,
            mode,
            inputs,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.width)
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&LOW) && self.labels.contains(&HIGH)
    }

    pub fn append(&mut self, other: WindowedDataset) -> Result<(), DatasetError> {
        if other.width != self.width || other.mode != self.mode {
            return Err(DatasetError::Incompatible(format!(
                "width/mode {}/{:?} vs {}/{:?}",
                self.width, self.mode, other.width, other.mode
            )));
        }
        self.inputs.extend(other.inputs);
        self.labels.extend(other.labels);
        self.groups.extend(other.groups);
        Ok(())
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.width, self.mode);
        for &i in indices {
            out.inputs.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
            out.groups.push(self.groups[i].clone());
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), DatasetError> {
        codec::write_header(w, DATASET_MAGIC, DATASET_VERSION)?;
        codec::write_u64(w, self.len() as u64)?;
        codec::write_u64(w, self.width as u64)?;
        codec::write_u8(w, self.mode.tag())?;
        codec::write_f64s(w, &self.inputs)?;
        w.write_all(&self.labels)?;
        let mut table: Vec<&str> = Vec::new();
        let mut index: BTreeMap<&str, u32> = BTreeMap::new();
        let row_idx: Vec<u32> = self
            .groups
            .iter()
            .map(|g| {
                *index.entry(g.as_str()).or_insert_with(|| {
                    table.push(g.as_str());
                    (table.len() - 1) as u32
                })
            })
            .collect();
        codec::write_u32(w, table.len() as u32)?;
        for name in &table {
            codec::write_str(w, name)?;
        }
        for i in row_idx {
            codec::write_u32(w, i)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, DatasetError> {
        let version = codec::read_header(r, DATASET_MAGIC)?;
        if version != DATASET_VERSION {
            return Err(FormatError::UnsupportedVersion { what: "dataset", version }.into());
        }
        let rows = codec::read_u64(r)? as usize;
        let width = codec::read_u64(r)? as usize;
        let mode = InputMode::from_tag(codec::read_u8(r)?)?;
        let cells = rows
            .checked_mul(width)
            .ok_or_else(|| FormatError::Corrupt("row count overflow".into()))?;
        let inputs = codec::read_f64s(r, cells)?;
        let mut labels = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            labels.push(codec::read_u8(r)?);
        }
        let n_names = codec::read_u32(r)? as usize;
        let table = (0..n_names).map(|_| codec::read_str(r)).collect::<Result<Vec<_>, _>>()?;
        let mut groups = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let i = codec::read_u32(r)? as usize;
            let name = table
                .get(i)
                .ok_or_else(|| FormatError::Corrupt(format!("group index {i} out of range")))?;
            groups.push(name.clone());
        }
        codec::expect_eof(r)?;
        Self::from_parts(width, mode, inputs, labels, groups)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), DatasetError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, DatasetError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    /// `label,group,x0,...` with one row per window.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        write!(w, "label,group")?;
        for j in 0..self.width {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows().enumerate() {
            write!(w, "{},{}", self.labels[i], self.groups[i])?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Per-sample (duration, pupil) channels. Samples inside fixation k carry
/// k's normalized duration and mean pupil; samples after it carry the same
/// values until the next fixation; samples before the first fixation are 0.
/// Durations are divided by the session's longest fixation.
pub fn sample_aligned_channels(n_samples: usize, events: &[FixationEvent]) -> (Vec<f64>, Vec<f64>) {
    let mut dur = vec![0.0; n_samples];
    let mut pupil = vec![0.0; n_samples];
    let max_dur = events.iter().map(|e| e.duration_ms).fold(0.0, f64::max);
    if max_dur <= 0.0 {
        return (dur, pupil);
    }
    for (k, e) in events.iter().enumerate() {
        let from = e.sample_range.0.min(n_samples);
        let to = events.get(k + 1).map_or(n_samples, |next| next.sample_range.0.min(n_samples));
        let d = e.duration_ms / max_dur;
        dur[from..to].fill(d);
        pupil[from..to].fill(e.mean_pupil);
    }
    (dur, pupil)
}

fn summary(values: &[f64], out: &mut Vec<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend([mean, var.sqrt(), min, max]);
}

/// Windows at offsets 0, stride, 2·stride, ... while they fit.
pub fn make_windows(
    duration: &[f64],
    pupil: &[f64],
    label: u8,
    group: &str,
    cfg: &WindowConfig,
) -> Result<WindowedDataset, DatasetError> {
    cfg.validate()?;
    if duration.len() != pupil.len() {
        return Err(DatasetError::InvalidConfig("channel lengths differ".into()));
    }
    let n = duration.len();
    if n < cfg.window_len {
        return Err(DatasetError::SessionTooShort {
            len: n,
            window_len: cfg.window_len,
        });
    }
    let count = cfg.window_count(n);
    let width = cfg.width();
    let mut inputs = Vec::with_capacity(count * width);
    for k in 0..count {
        let span = k * cfg.stride..k * cfg.stride + cfg.window_len;
        window_row(&duration[span.clone()], &pupil[span], cfg.input_mode, &mut inputs);
    }
    WindowedDataset::from_parts(width, cfg.input_mode, inputs, vec![label; count], vec![group.to_string(); count])
}

/// Appends one instance row built from aligned channel windows.
pub fn window_row(duration: &[f64], pupil: &[f64], mode: InputMode, out: &mut Vec<f64>) {
    match mode {
        InputMode::Flatten => {
            out.extend_from_slice(duration);
            out.extend_from_slice(pupil);
        }
        InputMode::Summary => {
            summary(duration, out);
            summary(pupil, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Stratified random split of individual windows.
    WindowRandom,
    /// Whole participants go to one side.
    SubjectWise,
}

/// Deterministic train/test split. Both sides keep the original row order.
pub fn split(
    dataset: &WindowedDataset,
    mode: SplitMode,
    test_fraction: f64,
    seed: u64,
) -> Result<(WindowedDataset, WindowedDataset), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; dataset.len()];
    match mode {
        SplitMode::WindowRandom => {
            for class in [LOW, HIGH] {
                let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let n_test = (idx.len() as f64 * test_fraction).round() as usize;
                for &i in &idx[..n_test] {
                    is_test[i] = true;
                }
            }
        }
        SplitMode::SubjectWise => {
            // participant -> (label, window count), in first-appearance order
            let mut order: Vec<&str> = Vec::new();
            let mut info: BTreeMap<&str, (u8, usize)> = BTreeMap::new();
            for (g, &l) in dataset.groups.iter().zip(&dataset.labels) {
                let e = info.entry(g.as_str()).or_insert_with(|| {
                    order.push(g.as_str());
                    (l, 0)
                });
                if e.0 != l {
                    return Err(DatasetError::DegenerateSplit(format!("participant {g} has mixed labels")));
                }
                e.1 += 1;
            }
            let mut test_groups: Vec<&str> = Vec::new();
            for class in [LOW, HIGH] {
                let mut members: Vec<&str> = order.iter().copied().filter(|g| info[g].0 == class).collect();
                if members.len() < 2 {
                    return Err(DatasetError::DegenerateSplit(format!(
                        "class {class} has {} participant(s); need at least 2 to appear on both sides",
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                let total: usize = members.iter().map(|g| info[g].1).sum();
                let target = total as f64 * test_fraction;
                let mut taken = info[members[0]].1;
                test_groups.push(members[0]);
                for g in &members[1..members.len() - 1] {
                    let with = taken + info[g].1;
                    if (with as f64 - target).abs() < (taken as f64 - target).abs() {
                        taken = with;
                        test_groups.push(g);
                    }
                }
            }
            for (i, g) in dataset.groups.iter().enumerate() {
                is_test[i] = test_groups.contains(&g.as_str());
            }
        }
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..dataset.len()).filter(|&i| is_test[i]).collect();
    Ok((dataset.select(&train), dataset.select(&test)))
}
