//! Gaze session model: samples, per-session metadata, file ingestion and
//! pre-task trimming.
//!
//! Sessions are immutable after construction. Invalid-eye samples are kept so
//! that timestamps stay contiguous; consumers use [`validity_mask`] to skip
//! them.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default eye-tracker sampling rate in Hz.
pub const DEFAULT_SAMPLING_HZ: f64 = 200.0;

/// Tolerance on the norm of a valid gaze direction.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Column order of the gaze CSV.
pub const CSV_COLUMNS: [&str; 11] = [
    "timestamp_us",
    "left_dir_x",
    "left_dir_y",
    "left_dir_z",
    "right_dir_x",
    "right_dir_y",
    "right_dir_z",
    "left_pupil_mm",
    "right_pupil_mm",
    "left_valid",
    "right_valid",
];

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse column `{column}` from {value:?}")]
    Parse {
        row: usize,
        column: &'static str,
        value: String,
    },
    #[error("row {row}: timestamp is not strictly greater than the previous one")]
    NonMonotonicTimestamp { row: usize },
    #[error("row {row}: {eye} gaze direction is not a unit vector")]
    NonUnitDirection { row: usize, eye: &'static str },
    #[error("row {row}: {eye} pupil is not finite although the eye is flagged valid")]
    InvalidPupil { row: usize, eye: &'static str },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("session has no samples")]
    EmptySession,
    #[error("no samples remain at or after the tutorial start marker ({0} us)")]
    EmptyAfterTrim(i64),
}

/// One binocular gaze + pupil measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub timestamp_us: i64,
    pub left_dir: [f64; 3],
    pub right_dir: [f64; 3],
    pub left_pupil_mm: f64,
    pub right_pupil_mm: f64,
    pub left_valid: bool,
    pub right_valid: bool,
}

impl GazeSample {
    /// Sample with identical direction and pupil for both eyes.
    pub fn binocular(timestamp_us: i64, dir: [f64; 3], pupil_mm: f64) -> Self {
        Self {
            timestamp_us,
            left_dir: dir,
            right_dir: dir,
            left_pupil_mm: pupil_mm,
            right_pupil_mm: pupil_mm,
            left_valid: true,
            right_valid: true,
        }
    }

    pub fn both_valid(&self) -> bool {
        self.left_valid && self.right_valid
    }

    pub fn any_valid(&self) -> bool {
        self.left_valid || self.right_valid
    }

    /// Normalized mean of the valid eyes' directions, falling back to the
    /// single valid eye. `None` when neither eye is valid.
    pub fn cyclopean_dir(&self) -> Option<[f64; 3]> {
        let sum = match (self.left_valid, self.right_valid) {
            (true, true) => add(self.left_dir, self.right_dir),
            (true, false) => self.left_dir,
            (false, true) => self.right_dir,
            (false, false) => return None,
        };
        normalize(sum)
    }

    fn check(&self, row: usize) -> Result<(), SessionError> {
        for (valid, dir, pupil, eye) in [
            (self.left_valid, self.left_dir, self.left_pupil_mm, "left"),
            (self.right_valid, self.right_dir, self.right_pupil_mm, "right"),
        ] {
            if !valid {
                continue;
            }
            if (norm(dir) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(SessionError::NonUnitDirection { row, eye });
            }
            if !pupil.is_finite() {
                return Err(SessionError::InvalidPupil { row, eye });
            }
        }
        Ok(())
    }
}

/// Per-participant metadata read from the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub participant_id: String,
    pub tlx_mental: u8,
    pub tutorial_start_us: i64,
    pub sampling_hz: f64,
}

impl SessionMeta {
    pub fn new(participant_id: impl Into<String>, tlx_mental: u8) -> Result<Self, SessionError> {
        let meta = Self {
            participant_id: participant_id.into(),
            tlx_mental,
            tutorial_start_us: 0,
            sampling_hz: DEFAULT_SAMPLING_HZ,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(1..=7).contains(&self.tlx_mental) {
            return Err(SessionError::BadManifest(format!(
                "tlx_mental must be in 1..=7, got {}",
                self.tlx_mental
            )));
        }
        if !(self.sampling_hz.is_finite() && self.sampling_hz > 0.0) {
            return Err(SessionError::BadManifest(format!(
                "sampling_hz must be positive, got {}",
                self.sampling_hz
            )));
        }
        if self.participant_id.is_empty() || self.participant_id.contains(['\n', '\r']) {
            return Err(SessionError::BadManifest("participant_id must be a non-empty single line".into()));
        }
        Ok(())
    }

    /// Parses the flat `key=value` manifest format. Blank lines and lines
    /// starting with `#` are ignored; `tutorial_start_us` defaults to 0 and
    /// `sampling_hz` to 200.
    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let mut kv = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SessionError::BadManifest(format!("line {}: expected key=value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| {
            kv.get(key)
                .ok_or_else(|| SessionError::BadManifest(format!("missing key `{key}`")))
        };
        let bad = |key: &str, v: &str| SessionError::BadManifest(format!("cannot parse `{key}` from {v:?}"));

        let participant_id = get("participant_id")?.clone();
        let tlx_raw = get("tlx_mental")?;
        let tlx: i64 = tlx_raw.parse().map_err(|_| bad("tlx_mental", tlx_raw))?;
        if !(1..=7).contains(&tlx) {
            return Err(SessionError::BadManifest(format!("tlx_mental must be in 1..=7, got {tlx}")));
        }
        let tutorial_start_us = match kv.get("tutorial_start_us") {
            Some(v) => v.parse().map_err(|_| bad("tutorial_start_us", v))?,
            None => 0,
        };
        let sampling_hz = match kv.get("sampling_hz") {
            Some(v) => v.parse().map_err(|_| bad("sampling_hz", v))?,
            None => DEFAULT_SAMPLING_HZ,
        };
        let meta = Self {
            participant_id,
            tlx_mental: tlx as u8,
            tutorial_start_us,
            sampling_hz,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_manifest_string(&self) -> String {
        format!(
            "participant_id={}\ntlx_mental={}\ntutorial_start_us={}\nsampling_hz={}\n",
            self.participant_id, self.tlx_mental, self.tutorial_start_us, self.sampling_hz
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        fs::write(path, self.to_manifest_string())?;
        Ok(())
    }
}

/// A recorded session: metadata plus time-ordered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSession {
    meta: SessionMeta,
    samples: Vec<GazeSample>,
}

impl GazeSession {
    /// Builds a session, checking ordering, direction norms and pupil values.
    pub fn new(meta: SessionMeta, samples: Vec<GazeSample>) -> Result<Self, SessionError> {
        meta.validate()?;
        if samples.is_empty() {
            return Err(SessionError::EmptySession);
        }
        for (i, s) in samples.iter().enumerate() {
            s.check(i + 1)?;
            if i > 0 && s.timestamp_us <= samples[i - 1].timestamp_us {
                return Err(SessionError::NonMonotonicTimestamp { row: i + 1 });
            }
        }
        Ok(Self { meta, samples })
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.samples.iter().map(|s| s.timestamp_us)
    }

    pub fn into_parts(self) -> (SessionMeta, Vec<GazeSample>) {
        (self.meta, self.samples)
    }

    /// Reads a session CSV with its manifest.
    pub fn load(csv_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let meta = SessionMeta::load(manifest_path)?;
        let samples = read_samples_csv(fs::File::open(csv_path)?)?;
        Self::new(meta, samples)
    }

    /// Writes the session CSV and manifest. Floats use shortest round-trip
    /// formatting so reloading is bit-exact.
    pub fn save(&self, csv_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<(), SessionError> {
        write_samples_csv(fs::File::create(csv_path)?, &self.samples)?;
        self.meta.save(manifest_path)
    }
}

/// Session directory layout: `<id>.csv` next to `<id>.manifest`.
pub const MANIFEST_EXT: &str = "manifest";

/// Writes each session as `<participant_id>.csv` + `.manifest` under `dir`.
pub fn save_session_dir(dir: impl AsRef<Path>, sessions: &[GazeSession]) -> Result<Vec<std::path::PathBuf>, SessionError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for s in sessions {
        let id = &s.meta().participant_id;
        let csv = dir.join(format!("{id}.csv"));
        let manifest = dir.join(format!("{id}.{MANIFEST_EXT}"));
        s.save(&csv, &manifest)?;
        written.extend([csv, manifest]);
    }
    Ok(written)
}

/// Loads every `*.csv` in `dir` that has a sibling manifest, in file-name
/// order.
pub fn load_session_dir(dir: impl AsRef<Path>) -> Result<Vec<GazeSession>, SessionError> {
    let mut csvs: Vec<std::path::PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension(MANIFEST_EXT).is_file())
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(SessionError::BadManifest(format!(
            "no <id>.csv + <id>.{MANIFEST_EXT} pairs in {}",
            dir.as_ref().display()
        )));
    }
    csvs.iter()
        .map(|c| GazeSession::load(c, c.with_extension(MANIFEST_EXT)))
        .collect()
}

/// Parses gaze CSV rows. Columns are located by header name, so extra
/// columns and reordering are tolerated.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<GazeSample>, SessionError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 11];
    for (slot, name) in idx.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SessionError::MissingColumn(name.to_string()))?;
    }

    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    while rdr.read_record(&mut record)? {
        row += 1;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let float = |k: usize| -> Result<f64, SessionError> {
            field(k).parse().map_err(|_| SessionError::Parse {
                row,
                column: CSV_COLUMNS[k],
                value: field(k).to_string(),
            })
        };
        let flag = |k: usize| -> Result<bool, SessionError> {
            match field(k) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(SessionError::Parse {
                    row,
                    column: CSV_COLUMNS[k],
                    value: other.to_string(),
                }),
            }
        };
        let timestamp_us: i64 = field(0).parse().map_err(|_| SessionError::Parse {
            row,
            column: CSV_COLUMNS[0],
            value: field(0).to_string(),
        })?;
        if let Some(prev) = samples.last().map(|s: &GazeSample| s.timestamp_us) {
            if timestamp_us <= prev {
                return Err(SessionError::NonMonotonicTimestamp { row });
            }
        }
        samples.push(GazeSample {
            timestamp_us,
            left_dir: [float(1)?, float(2)?, float(3)?],
            right_dir: [float(4)?, float(5)?, float(6)?],
            left_pupil_mm: float(7)?,
            right_pupil_mm: float(8)?,
            left_valid: flag(9)?,
            right_valid: flag(10)?,
        });
    }
    Ok(samples)
}

pub fn write_samples_csv<W: Write>(writer: W, samples: &[GazeSample]) -> Result<(), SessionError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_COLUMNS)?;
    for s in samples {
        let b = |v: bool| if v { "1" } else { "0" };
        wtr.write_record([
            s.timestamp_us.to_string(),
            s.left_dir[0].to_string(),
            s.left_dir[1].to_string(),
            s.left_dir[2].to_string(),
            s.right_dir[0].to_string(),
            s.right_dir[1].to_string(),
            s.right_dir[2].to_string(),
            s.left_pupil_mm.to_string(),
            s.right_pupil_mm.to_string(),
            b(s.left_valid).to_string(),
            b(s.right_valid).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Drops samples strictly before the tutorial-start marker and re-bases the
/// remaining timestamps to start at 0. The marker is reset to 0 so trimming
/// is idempotent.
pub fn trim_pre_task(session: GazeSession) -> Result<GazeSession, SessionError> {
    let (mut meta, samples) = session.into_parts();
    let marker = meta.tutorial_start_us;
    let mut kept: Vec<GazeSample> = samples.into_iter().filter(|s| s.timestamp_us >= marker).collect();
    let Some(origin) = kept.first().map(|s| s.timestamp_us) else {
        return Err(SessionError::EmptyAfterTrim(marker));
    };
    for s in &mut kept {
        s.timestamp_us -= origin;
    }
    meta.tutorial_start_us = 0;
    Ok(GazeSession { meta, samples: kept })
}

/// Per-sample flag: both eyes valid.
pub fn validity_mask(samples: &[GazeSample]) -> Vec<bool> {
    samples.iter().map(GazeSample::both_valid).collect()
}

pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Angle between two unit vectors in degrees.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    // atan2 stays accurate for the tiny angles between consecutive samples,
    // where acos of a dot product near 1 loses most of its digits.
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    norm(cross).atan2(dot(a, b)).to_degrees()
}
