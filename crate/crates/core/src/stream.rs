//! Per-connection streaming inference.
//!
//! Online processing differs from batch processing in three places:
//!
//! * pupil denoising is a causal exponential smoother with
//!   `alpha = 1 - exp(-2π·fc/fs)` instead of the FFT low-pass;
//! * min-max normalization uses a running range that only expands (seeded
//!   from the training range when one is supplied, otherwise floored at
//!   0.5 mm until the data spans more);
//! * fixation durations are scaled by the longest fixation seen so far, and
//!   fixations still open when a window is emitted contribute provisionally.
//!
//! Emission happens after sample `count` when `count >= W` and
//! `(count - W) % S == 0`, which yields exactly the batch window count.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, FormatError};
use crate::dataset::{window_row, WindowConfig, HIGH, LOW};
use crate::forest::{ForestModel, FOREST_MAGIC};
use crate::ivt::{label_velocity, pair_velocity, Candidate, FixationEvent, FixationGrouper, IvtConfig, PointLabel};
use crate::mlp::{MlpModel, RunLengthPredictor, MODEL_MAGIC};
use crate::preprocess::{check_cutoff, ChannelRange, PreprocessError, PupilRange};
use crate::session::{GazeSample, UNIT_TOLERANCE};

/// Minimum normalization span (mm) when no training range is supplied.
pub const RANGE_FLOOR_MM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("out-of-order sample: timestamp {got} us does not follow {previous} us")]
    OutOfOrderSample { previous: i64, got: i64 },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("model expects {expected} inputs, stream windows have {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] PreprocessError),
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("model: {0}")]
    Model(String),
}

/// A classifier loaded from either container format.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Mlp(RunLengthPredictor),
    Forest(ForestModel),
}

impl LoadedModel {
    /// Picks the decoder from the file's magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StreamError> {
        let bytes = std::fs::read(path).map_err(FormatError::Io)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StreamError> {
        let mut r = bytes;
        match codec::peek_magic(bytes) {
            Some(m) if &m == MODEL_MAGIC => MlpModel::read_from(&mut r)
                .map(|m| Self::Mlp(RunLengthPredictor::new(m)))
                .map_err(|e| StreamError::Model(e.to_string())),
            Some(m) if &m == FOREST_MAGIC => ForestModel::read_from(&mut r)
                .map(Self::Forest)
                .map_err(|e| StreamError::Model(e.to_string())),
            Some(found) => Err(FormatError::BadMagic {
                expected: *MODEL_MAGIC,
                found,
            }
            .into()),
            None => Err(FormatError::Corrupt("file is shorter than a container header".into()).into()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Mlp(_) => "mlp",
            Self::Forest(_) => "forest",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Mlp(m) => m.model().input_dim(),
            Self::Forest(f) => f.width,
        }
    }

    /// (probability of high CL, label). The MLP labels high at p >= 0.5;
    /// the forest uses its majority vote, ties going to low.
    pub fn classify(&self, row: &[f64]) -> Result<(f64, u8), StreamError> {
        match self {
            Self::Mlp(m) => {
                let p = m.forward(row).map_err(|e| StreamError::Model(e.to_string()))?;
                Ok((p, if p >= 0.5 { HIGH } else { LOW }))
            }
            Self::Forest(f) => Ok((f.predict_proba(row), f.predict(row))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub window: WindowConfig,
    pub ivt: IvtConfig,
    pub sampling_hz: f64,
    pub cutoff_hz: f64,
    /// Training normalization range; `None` starts from the first samples.
    pub range: Option<PupilRange>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            ivt: IvtConfig::default(),
            sampling_hz: 200.0,
            cutoff_hz: 4.0,
            range: None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        self.window
            .validate()
            .map_err(|e| StreamError::InvalidConfig(e.to_string()))?;
        check_cutoff(self.sampling_hz, self.cutoff_hz)?;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        1.0 - (-2.0 * std::f64::consts::PI * self.cutoff_hz / self.sampling_hz).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_end_us: i64,
    pub probability: f64,
    pub label: u8,
    pub latency_us: u64,
}

/// Causal smoother plus monotone running range for one pupil channel.
#[derive(Debug, Clone)]
struct PupilTrack {
    smoothed: Option<f64>,
    seen: Option<ChannelRange>,
    seeded: bool,
}

impl PupilTrack {
    fn new(seed: Option<ChannelRange>) -> Self {
        Self {
            smoothed: None,
            seen: seed,
            seeded: seed.is_some(),
        }
    }

    fn update(&mut self, value: Option<f64>, alpha: f64) -> Option<f64> {
        if let Some(x) = value {
            let y = match self.smoothed {
                Some(prev) => prev + alpha * (x - prev),
                None => x,
            };
            self.smoothed = Some(y);
            self.seen = Some(match self.seen {
                Some(r) => r.merge(ChannelRange { min: y, max: y }),
                None => ChannelRange { min: y, max: y },
            });
        }
        self.smoothed
    }

    fn scale(&self, y: f64) -> f64 {
        let Some(r) = self.seen else { return 0.0 };
        if self.seeded {
            return r.scale(y);
        }
        let span = (r.max - r.min).max(RANGE_FLOOR_MM);
        (y - r.min) / span
    }
}

#[derive(Debug, Clone, Copy)]
struct Buffered {
    index: usize,
    timestamp_us: i64,
}

/// One connection's streaming state. Memory is O(window_len).
#[derive(Debug, Clone)]
pub struct StreamState {
    cfg: StreamConfig,
    alpha: f64,
    left: PupilTrack,
    right: PupilTrack,
    buffer: VecDeque<Buffered>,
    count: usize,
    /// Previous sample with its normalized pupils, awaiting its label.
    prev: Option<(GazeSample, f64, f64)>,
    prev_dir: Option<[f64; 3]>,
    prev_label: Option<PointLabel>,
    open: Option<Candidate>,
    grouper: FixationGrouper,
    events: VecDeque<FixationEvent>,
    max_duration_ms: f64,
    row: Vec<f64>,
}

impl StreamState {
    pub fn new(cfg: StreamConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        Ok(Self {
            alpha: cfg.alpha(),
            left: PupilTrack::new(cfg.range.map(|r| r.left)),
            right: PupilTrack::new(cfg.range.map(|r| r.right)),
            buffer: VecDeque::with_capacity(cfg.window.window_len),
            count: 0,
            prev: None,
            prev_dir: None,
            prev_label: None,
            open: None,
            grouper: FixationGrouper::new(cfg.ivt.clone()),
            events: VecDeque::new(),
            max_duration_ms: 0.0,
            row: Vec::with_capacity(cfg.window.width()),
            cfg,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn samples_seen(&self) -> usize {
        self.count
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Released fixations still referenced by the buffer.
    pub fn retained_events(&self) -> usize {
        self.events.len()
    }

    /// Samples until the next emission.
    pub fn samples_to_next_emit(&self) -> usize {
        let (w, s) = (self.cfg.window.window_len, self.cfg.window.stride);
        if self.count < w {
            w - self.count
        } else {
            s - (self.count - w) % s
        }
    }

    fn check(&self, s: &GazeSample) -> Result<(), StreamError> {
        if let Some((p, ..)) = &self.prev {
            if s.timestamp_us <= p.timestamp_us {
                return Err(StreamError::OutOfOrderSample {
                    previous: p.timestamp_us,
                    got: s.timestamp_us,
                });
            }
        }
        for (valid, dir, pupil, eye) in [
            (s.left_valid, s.left_dir, s.left_pupil_mm, "left"),
            (s.right_valid, s.right_dir, s.right_pupil_mm, "right"),
        ] {
            if !valid {
                continue;
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(StreamError::InvalidSample(format!("{eye} direction is not a unit vector")));
            }
            if !pupil.is_finite() {
                return Err(StreamError::InvalidSample(format!("{eye} pupil is not finite")));
            }
        }
        Ok(())
    }

    fn record(&mut self, e: FixationEvent) {
        self.max_duration_ms = self.max_duration_ms.max(e.duration_ms);
        self.events.push_back(e);
    }

    fn on_label(&mut self, label: PointLabel) {
        let Some((s, l, r)) = self.prev else { return };
        let index = self.count - 2;
        if label == PointLabel::Fixation {
            match self.open.as_mut() {
                Some(c) => c.extend(index, &s, l, r),
                None => self.open = Some(Candidate::new(index, &s, l, r)),
            }
        } else if let Some(c) = self.open.take() {
            if let Some(e) = self.grouper.push(c) {
                self.record(e);
            }
        }
    }

    /// Drops events no sample in the buffer can still refer to.
    fn prune(&mut self) {
        let Some(first) = self.buffer.front().map(|b| b.index) else { return };
        while self.events.len() >= 2 && self.events[1].sample_range.0 <= first {
            self.events.pop_front();
        }
    }

    /// Feeds one sample; returns a prediction when a window completes. On
    /// error the state is unchanged.
    pub fn push_sample(&mut self, sample: &GazeSample, model: &LoadedModel) -> Result<Option<Prediction>, StreamError> {
        let started = Instant::now();
        self.check(sample)?;
        if model.input_dim() != self.cfg.window.width() {
            return Err(StreamError::DimensionMismatch {
                expected: model.input_dim(),
                got: self.cfg.window.width(),
            });
        }

        let ly = self.left.update(sample.left_valid.then_some(sample.left_pupil_mm), self.alpha);
        let ry = self.right.update(sample.right_valid.then_some(sample.right_pupil_mm), self.alpha);
        // Fall back to the other eye until a channel has produced a value.
        let l = self.left.scale(ly.or(ry).unwrap_or(0.0));
        let r = self.right.scale(ry.or(ly).unwrap_or(0.0));

        self.count += 1;
        let dir = sample.cyclopean_dir();
        if let Some((p, ..)) = &self.prev {
            let v = pair_velocity(p, self.prev_dir, sample, dir);
            let label = label_velocity(v, &self.cfg.ivt);
            self.on_label(label);
            self.prev_label = Some(label);
        }
        self.prev = Some((*sample, l, r));
        self.prev_dir = dir;

        if self.buffer.len() == self.cfg.window.window_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back(Buffered {
            index: self.count - 1,
            timestamp_us: sample.timestamp_us,
        });
        self.prune();

        let w = self.cfg.window.window_len;
        if self.count < w || (self.count - w) % self.cfg.window.stride != 0 {
            return Ok(None);
        }
        self.build_row();
        let (probability, label) = model.classify(&self.row)?;
        Ok(Some(Prediction {
            window_end_us: sample.timestamp_us,
            probability,
            label,
            latency_us: started.elapsed().as_micros() as u64,
        }))
    }

    /// Released events plus provisional ones for fixations still pending.
    fn window_events(&self) -> (Vec<FixationEvent>, f64) {
        let mut events: Vec<FixationEvent> = self.events.iter().cloned().collect();
        let min = self.cfg.ivt.min_fixation_ms;
        let mut provisional: Vec<FixationEvent> = Vec::new();
        if let Some(p) = self.grouper.pending() {
            provisional.push(p.to_event());
        }
        if let Some(mut open) = self.open.clone() {
            // The newest sample's label is not known yet; like batch mode at
            // the end of a session it inherits its predecessor's.
            if self.prev_label == Some(PointLabel::Fixation) {
                if let Some((s, l, r)) = &self.prev {
                    open.extend(self.count - 1, s, *l, *r);
                }
            }
            provisional.push(open.to_event());
        }
        let mut max = self.max_duration_ms;
        for e in provisional {
            if e.duration_ms >= min && e.start_us < e.end_us {
                max = max.max(e.duration_ms);
                events.push(e);
            }
        }
        (events, max)
    }

    fn build_row(&mut self) {
        let first = self.buffer.front().map_or(0, |b| b.index);
        let w = self.buffer.len();
        let (events, max_dur) = self.window_events();
        let mut dur = vec![0.0; w];
        let mut pupil = vec![0.0; w];
        if max_dur > 0.0 {
            for (k, e) in events.iter().enumerate() {
                let from = e.sample_range.0.max(first);
                let to = events.get(k + 1).map_or(first + w, |n| n.sample_range.0.max(first));
                if to <= from {
                    continue;
                }
                dur[from - first..to - first].fill(e.duration_ms / max_dur);
                pupil[from - first..to - first].fill(e.mean_pupil);
            }
        }
        self.row.clear();
        window_row(&dur, &pupil, self.cfg.window.input_mode, &mut self.row);
    }

    /// Timestamp of the oldest buffered sample.
    pub fn window_start_us(&self) -> Option<i64> {
        self.buffer.front().map(|b| b.timestamp_us)
    }
}

/// Inbound NDJSON sample record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub t: i64,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub lp: f64,
    pub rp: f64,
    pub lv: u8,
    pub rv: u8,
}

impl SampleRecord {
    pub fn to_sample(&self) -> Result<GazeSample, StreamError> {
        let flag = |v: u8, name: &str| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(StreamError::InvalidSample(format!("{name} must be 0 or 1, got {v}"))),
        };
        Ok(GazeSample {
            timestamp_us: self.t,
            left_dir: [self.lx, self.ly, self.lz],
            right_dir: [self.rx, self.ry, self.rz],
            left_pupil_mm: self.lp,
            right_pupil_mm: self.rp,
            left_valid: flag(self.lv, "lv")?,
            right_valid: flag(self.rv, "rv")?,
        })
    }
}

impl From<&GazeSample> for SampleRecord {
    fn from(s: &GazeSample) -> Self {
        Self {
            t: s.timestamp_us,
            lx: s.left_dir[0],
            ly: s.left_dir[1],
            lz: s.left_dir[2],
            rx: s.right_dir[0],
            ry: s.right_dir[1],
            rz: s.right_dir[2],
            lp: s.left_pupil_mm,
            rp: s.right_pupil_mm,
            lv: s.left_valid as u8,
            rv: s.right_valid as u8,
        }
    }
}

/// Outbound NDJSON prediction record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub t_end: i64,
    pub p_high: f64,
    pub label: u8,
    pub latency_us: u64,
}

impl From<Prediction> for PredictionRecord {
    fn from(p: Prediction) -> Self {
        Self {
            t_end: p.window_end_us,
            p_high: p.probability,
            label: p.label,
            latency_us: p.latency_us,
        }
    }
}

/// Outbound record for a line that could not be processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub error: String,
    /// 1-based input line number.
    pub line: u64,
}

/// Either kind of outbound line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutboundRecord {
    Prediction(PredictionRecord),
    Error(ErrorRecord),
}

/// Body of an HTTP batch prediction request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub samples: Vec<SampleRecord>,
}

/// Predictions for a batch replayed through a fresh stream state. Errors
/// carry the 1-based position of the offending sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub predictions: Vec<PredictionRecord>,
    pub errors: Vec<ErrorRecord>,
}

/// Description of the model a service is running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: String,
    pub input_dim: usize,
    pub stream: StreamConfig,
}

/// Replays `samples` through a fresh state.
pub fn predict_batch(cfg: &StreamConfig, model: &LoadedModel, samples: &[SampleRecord]) -> Result<PredictResponse, StreamError> {
    let mut state = StreamState::new(cfg.clone())?;
    let mut out = PredictResponse {
        predictions: Vec::new(),
        errors: Vec::new(),
    };
    for (i, rec) in samples.iter().enumerate() {
        match rec.to_sample().and_then(|s| state.push_sample(&s, model)) {
            Ok(Some(p)) => out.predictions.push(p.into()),
            Ok(None) => {}
            Err(e) => out.errors.push(ErrorRecord {
                error: e.to_string(),
                line: i as u64 + 1,
            }),
        }
    }
    Ok(out)
}

/// Processes one inbound line. Blank lines yield nothing.
pub fn handle_line(state: &mut StreamState, model: &LoadedModel, line: &str, line_no: u64) -> Option<OutboundRecord> {
    let line = line.trim();
    if line.is_empty() {
        return None;
    }
    let result = serde_json::from_str::<SampleRecord>(line)
        .map_err(|e| StreamError::InvalidSample(e.to_string()))
        .and_then(|r| r.to_sample())
        .and_then(|s| state.push_sample(&s, model));
    match result {
        Ok(Some(p)) => Some(OutboundRecord::Prediction(p.into())),
        Ok(None) => None,
        Err(e) => Some(OutboundRecord::Error(ErrorRecord {
            error: e.to_string(),
            line: line_no,
        })),
    }
}
