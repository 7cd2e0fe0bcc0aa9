//! Velocity-threshold (I-VT) fixation identification.
//!
//! Velocities are computed on the cyclopean gaze direction. Each sample takes
//! the label of the velocity to its successor; the final sample inherits its
//! predecessor's label. Fixation-labelled runs become candidates, nearby
//! candidates with close centroids are merged, and short candidates are
//! dropped. [`FixationGrouper`] does the merge/filter step incrementally so
//! the streaming path shares it with batch grouping.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::PupilChannels;
use crate::session::{add, angle_deg, normalize, GazeSample, GazeSession};

/// Centroids closer than this (degrees) may be merged across a short gap.
pub const MERGE_ANGLE_DEG: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum IvtError {
    #[error("velocity needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvtConfig {
    pub velocity_threshold_deg_s: f64,
    pub min_fixation_ms: f64,
    /// Set to 0 to disable gap merging.
    pub max_gap_ms: f64,
}

impl Default for IvtConfig {
    fn default() -> Self {
        Self {
            velocity_threshold_deg_s: 30.0,
            min_fixation_ms: 60.0,
            max_gap_ms: 75.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointLabel {
    Fixation,
    Saccade,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationEvent {
    pub start_us: i64,
    pub end_us: i64,
    pub duration_ms: f64,
    pub centroid_dir: [f64; 3],
    /// Mean of the normalized left and right pupil over valid in-fixation
    /// samples.
    pub mean_pupil: f64,
    /// First and last sample index, both inclusive.
    pub sample_range: (usize, usize),
}

/// Angular velocity of the cyclopean direction, deg/s, one entry per
/// consecutive pair. Pairs touching a sample with no valid eye are NaN.
pub fn angular_velocity(samples: &[GazeSample]) -> Result<Vec<f64>, IvtError> {
    if samples.len() < 2 {
        return Err(IvtError::TooFewSamples(samples.len()));
    }
    let dirs: Vec<Option<[f64; 3]>> = samples.iter().map(GazeSample::cyclopean_dir).collect();
    Ok(samples
        .windows(2)
        .zip(dirs.windows(2))
        .map(|(s, d)| pair_velocity(&s[0], d[0], &s[1], d[1]))
        .collect())
}

pub(crate) fn pair_velocity(a: &GazeSample, da: Option<[f64; 3]>, b: &GazeSample, db: Option<[f64; 3]>) -> f64 {
    match (da, db) {
        (Some(da), Some(db)) => {
            let dt_s = (b.timestamp_us - a.timestamp_us) as f64 / 1e6;
            angle_deg(da, db) / dt_s
        }
        _ => f64::NAN,
    }
}

pub fn label_velocity(v: f64, cfg: &IvtConfig) -> PointLabel {
    if !v.is_finite() {
        PointLabel::Invalid
    } else if v < cfg.velocity_threshold_deg_s {
        PointLabel::Fixation
    } else {
        PointLabel::Saccade
    }
}

/// One label per sample (`velocities.len() + 1` entries).
pub fn classify_points(velocities: &[f64], cfg: &IvtConfig) -> Vec<PointLabel> {
    let mut labels: Vec<PointLabel> = velocities.iter().map(|&v| label_velocity(v, cfg)).collect();
    if let Some(&last) = labels.last() {
        labels.push(last);
    }
    labels
}

/// Accumulated statistics of a fixation candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub first: usize,
    pub last: usize,
    pub start_us: i64,
    pub end_us: i64,
    dir_sum: [f64; 3],
    pupil_sum: f64,
    pupil_count: usize,
}

impl Candidate {
    pub fn new(index: usize, sample: &GazeSample, left_pupil: f64, right_pupil: f64) -> Self {
        let mut c = Self {
            first: index,
            last: index,
            start_us: sample.timestamp_us,
            end_us: sample.timestamp_us,
            dir_sum: [0.0; 3],
            pupil_sum: 0.0,
            pupil_count: 0,
        };
        c.accumulate(sample, left_pupil, right_pupil);
        c
    }

    /// Extends the candidate by the next fixation sample.
    pub fn extend(&mut self, index: usize, sample: &GazeSample, left_pupil: f64, right_pupil: f64) {
        self.last = index;
        self.end_us = sample.timestamp_us;
        self.accumulate(sample, left_pupil, right_pupil);
    }

    fn accumulate(&mut self, sample: &GazeSample, left_pupil: f64, right_pupil: f64) {
        if let Some(d) = sample.cyclopean_dir() {
            self.dir_sum = add(self.dir_sum, d);
        }
        if sample.left_valid {
            self.pupil_sum += left_pupil;
            self.pupil_count += 1;
        }
        if sample.right_valid {
            self.pupil_sum += right_pupil;
            self.pupil_count += 1;
        }
    }

    pub fn duration_ms(&self) -> f64 {
        (self.end_us - self.start_us) as f64 / 1000.0
    }

    pub fn centroid(&self) -> [f64; 3] {
        normalize(self.dir_sum).unwrap_or([0.0, 0.0, 1.0])
    }

    pub fn mean_pupil(&self) -> f64 {
        if self.pupil_count == 0 {
            0.0
        } else {
            self.pupil_sum / self.pupil_count as f64
        }
    }

    fn absorb(&mut self, next: Candidate) {
        self.last = next.last;
        self.end_us = next.end_us;
        self.dir_sum = add(self.dir_sum, next.dir_sum);
        self.pupil_sum += next.pupil_sum;
        self.pupil_count += next.pupil_count;
    }

    pub fn to_event(&self) -> FixationEvent {
        FixationEvent {
            start_us: self.start_us,
            end_us: self.end_us,
            duration_ms: self.duration_ms(),
            centroid_dir: self.centroid(),
            mean_pupil: self.mean_pupil(),
            sample_range: (self.first, self.last),
        }
    }
}

/// Merges adjacent candidates and drops short ones. Events are released one
/// candidate late, once it is known the next candidate will not merge.
#[derive(Debug, Clone)]
pub struct FixationGrouper {
    cfg: IvtConfig,
    pending: Option<Candidate>,
}

impl FixationGrouper {
    pub fn new(cfg: IvtConfig) -> Self {
        Self { cfg, pending: None }
    }

    pub fn pending(&self) -> Option<&Candidate> {
        self.pending.as_ref()
    }

    fn mergeable(&self, prev: &Candidate, next: &Candidate) -> bool {
        let gap_ms = (next.start_us - prev.end_us) as f64 / 1000.0;
        gap_ms < self.cfg.max_gap_ms && angle_deg(prev.centroid(), next.centroid()) < MERGE_ANGLE_DEG
    }

    fn release(&self, c: Candidate) -> Option<FixationEvent> {
        (c.duration_ms() >= self.cfg.min_fixation_ms && c.start_us < c.end_us).then(|| c.to_event())
    }

    pub fn push(&mut self, next: Candidate) -> Option<FixationEvent> {
        match self.pending.take() {
            Some(mut prev) if self.mergeable(&prev, &next) => {
                prev.absorb(next);
                self.pending = Some(prev);
                None
            }
            Some(prev) => {
                self.pending = Some(next);
                self.release(prev)
            }
            None => {
                self.pending = Some(next);
                None
            }
        }
    }

    pub fn finish(&mut self) -> Option<FixationEvent> {
        self.pending.take().and_then(|c| self.release(c))
    }
}

/// Turns per-sample labels into fixation events. `pupil` holds the
/// preprocessed channels used for each event's mean pupil.
pub fn group_fixations(
    session: &GazeSession,
    labels: &[PointLabel],
    pupil: &PupilChannels,
    cfg: &IvtConfig,
) -> Result<Vec<FixationEvent>, IvtError> {
    let samples = session.samples();
    let n = samples.len();
    for (what, got) in [("labels", labels.len()), ("left pupil", pupil.left.len()), ("right pupil", pupil.right.len())] {
        if got != n {
            return Err(IvtError::LengthMismatch { what, got, expected: n });
        }
    }

    let mut grouper = FixationGrouper::new(cfg.clone());
    let mut events = Vec::new();
    let mut open: Option<Candidate> = None;
    for (i, (s, &label)) in samples.iter().zip(labels).enumerate() {
        if label == PointLabel::Fixation {
            match open.as_mut() {
                Some(c) => c.extend(i, s, pupil.left[i], pupil.right[i]),
                None => open = Some(Candidate::new(i, s, pupil.left[i], pupil.right[i])),
            }
        } else if let Some(c) = open.take() {
            events.extend(grouper.push(c));
        }
    }
    if let Some(c) = open.take() {
        events.extend(grouper.push(c));
    }
    events.extend(grouper.finish());
    Ok(events)
}

/// Velocity, point labels and grouping in one call.
pub fn detect_fixations(
    session: &GazeSession,
    pupil: &PupilChannels,
    cfg: &IvtConfig,
) -> Result<Vec<FixationEvent>, IvtError> {
    let v = angular_velocity(session.samples())?;
    let labels = classify_points(&v, cfg);
    group_fixations(session, &labels, pupil, cfg)
}

/// (duration_ms, mean_pupil) per event, in order.
pub fn fixation_features(events: &[FixationEvent]) -> Vec<(f64, f64)> {
    events.iter().map(|e| (e.duration_ms, e.mean_pupil)).collect()
}

pub const FIXATION_CSV_HEADER: &str = "start_us,end_us,duration_ms,mean_pupil,centroid_x,centroid_y,centroid_z";

pub fn write_fixations_csv<W: Write>(mut w: W, events: &[FixationEvent]) -> Result<(), IvtError> {
    let io = |e: std::io::Error| IvtError::Io(e.to_string());
    writeln!(w, "{FIXATION_CSV_HEADER}").map_err(io)?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.start_us, e.end_us, e.duration_ms, e.mean_pupil, e.centroid_dir[0], e.centroid_dir[1], e.centroid_dir[2]
        )
        .map_err(io)?;
    }
    Ok(())
}
