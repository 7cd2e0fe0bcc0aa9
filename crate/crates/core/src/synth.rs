//! Synthetic gaze sessions with a controllable cognitive-load effect.
//!
//! A session alternates fixations and saccades. Fixation lengths are
//! log-normal around a per-class mean, gaze jitters by a few hundredths of a
//! degree inside a fixation and sweeps 5 to 15 degrees during a saccade. The
//! pupil trace is base + class shift + white noise + a slow sinusoidal drift.
//!
//! Randomness is split into independent streams (episodes, noise, drift
//! phase) so that two sessions sharing a seed differ only in the effect
//! being controlled.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::HIGH;
use crate::ivt::{Candidate, FixationEvent};
use crate::seed;
use crate::session::{GazeSample, GazeSession, SessionError, SessionMeta};

const FIXATION_SIGMA: f64 = 0.3;
const MIN_FIXATION_MS: f64 = 100.0;
const JITTER_DEG: f64 = 0.02;
const SACCADE_MIN_DEG: f64 = 5.0;
const SACCADE_MAX_DEG: f64 = 15.0;
const FIELD_DEG: f64 = 20.0;
const DRIFT_HZ: f64 = 0.2;
const DRIFT_MM: f64 = 0.1;

const EPISODE_STREAM: u64 = 0;
const DRIFT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const TLX_STREAM: u64 = 3;

pub const LOW_FIXATION_MS: f64 = 250.0;
pub const HIGH_FIXATION_MS: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sampling_hz: f64,
    pub cl_label: u8,
    pub pupil_base_mm: f64,
    /// Added to the pupil when `cl_label` is high.
    pub pupil_cl_shift_mm: f64,
    pub fixation_dur_mean_ms: f64,
    pub saccade_dur_ms: f64,
    pub noise_sd_mm: f64,
    /// Phase of the slow pupil drift, radians.
    pub drift_phase_rad: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults for one class: 250 ms fixations for low, 400 ms for high.
    pub fn for_label(cl_label: u8, seed: u64) -> Self {
        Self {
            duration_s: 120.0,
            sampling_hz: 200.0,
            cl_label,
            pupil_base_mm: 3.0,
            pupil_cl_shift_mm: 0.5,
            fixation_dur_mean_ms: if cl_label == HIGH { HIGH_FIXATION_MS } else { LOW_FIXATION_MS },
            saccade_dur_ms: 40.0,
            noise_sd_mm: 0.05,
            drift_phase_rad: drift_phase(seed),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let positive = [
            ("duration_s", self.duration_s),
            ("sampling_hz", self.sampling_hz),
            ("fixation_dur_mean_ms", self.fixation_dur_mean_ms),
            ("saccade_dur_ms", self.saccade_dur_ms),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SessionError::BadManifest(format!("{name} must be positive, got {v}")));
            }
        }
        if self.duration_s < 1.0 {
            return Err(SessionError::BadManifest(format!("duration_s must be >= 1, got {}", self.duration_s)));
        }
        if !(self.noise_sd_mm.is_finite() && self.noise_sd_mm >= 0.0) {
            return Err(SessionError::BadManifest("noise_sd_mm must be >= 0".into()));
        }
        Ok(())
    }
}

fn drift_phase(seed: u64) -> f64 {
    seed::stream_rng(seed, DRIFT_STREAM).random_range(0.0..std::f64::consts::TAU)
}

fn direction(yaw_deg: f64, pitch_deg: f64) -> [f64; 3] {
    let (y, p) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    [y.sin() * p.cos(), p.sin(), y.cos() * p.cos()]
}

/// Saccade target `amp` degrees from `from`, bounced back inside the field.
fn saccade_target(from: (f64, f64), amp: f64, theta: f64) -> (f64, f64) {
    let mut dx = amp * theta.cos();
    let mut dy = amp * theta.sin();
    if (from.0 + dx).abs() > FIELD_DEG {
        dx = -dx;
    }
    if (from.1 + dy).abs() > FIELD_DEG {
        dy = -dy;
    }
    (from.0 + dx, from.1 + dy)
}

/// Episode plan: per sample gaze angles and, for fixations, the inclusive
/// sample ranges.
fn plan_gaze(cfg: &SynthConfig, n: usize) -> (Vec<(f64, f64)>, Vec<(usize, usize)>) {
    let mut rng = seed::stream_rng(cfg.seed, EPISODE_STREAM);
    let sigma = FIXATION_SIGMA;
    let mu = cfg.fixation_dur_mean_ms.ln() - sigma * sigma / 2.0;
    let fix_dist = LogNormal::new(mu, sigma).expect("finite log-normal parameters");
    let per_ms = cfg.sampling_hz / 1000.0;
    let sacc_len = ((cfg.saccade_dur_ms * per_ms).round() as usize).max(1);

    let mut gaze = Vec::with_capacity(n);
    let mut fixations = Vec::new();
    let mut centre = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    while gaze.len() < n {
        let ms = fix_dist.sample(&mut rng).clamp(MIN_FIXATION_MS, 4.0 * cfg.fixation_dur_mean_ms);
        // A fixation spanning ms milliseconds covers ms * per_ms intervals.
        let mut len = (ms * per_ms).round() as usize + 1;
        let remaining = n - gaze.len();
        if remaining < len + sacc_len + (MIN_FIXATION_MS * per_ms) as usize + 1 {
            len = remaining;
        }
        let first = gaze.len();
        for _ in 0..len {
            let jy = rng.random_range(-JITTER_DEG..=JITTER_DEG);
            let jp = rng.random_range(-JITTER_DEG..=JITTER_DEG);
            gaze.push((centre.0 + jy, centre.1 + jp));
        }
        fixations.push((first, gaze.len() - 1));
        if gaze.len() >= n {
            break;
        }
        let amp = rng.random_range(SACCADE_MIN_DEG..=SACCADE_MAX_DEG);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let target = saccade_target(centre, amp, theta);
        for k in 1..=sacc_len {
            let f = k as f64 / (sacc_len + 1) as f64;
            gaze.push((centre.0 + f * (target.0 - centre.0), centre.1 + f * (target.1 - centre.1)));
        }
        centre = target;
    }
    (gaze, fixations)
}

/// Generates one session and the fixations it was built from.
pub fn generate_session(cfg: &SynthConfig, participant_id: &str, tlx_mental: u8) -> Result<(GazeSession, Vec<FixationEvent>), SessionError> {
    cfg.validate()?;
    let n = (cfg.duration_s * cfg.sampling_hz).round() as usize;
    let (gaze, fixations) = plan_gaze(cfg, n);

    let phase = cfg.drift_phase_rad;
    let mut noise_rng = seed::stream_rng(cfg.seed, NOISE_STREAM);
    let noise = Normal::new(0.0, cfg.noise_sd_mm).expect("non-negative noise sd");
    let shift = if cfg.cl_label == HIGH { cfg.pupil_cl_shift_mm } else { 0.0 };

    let samples: Vec<GazeSample> = gaze
        .iter()
        .enumerate()
        .map(|(i, &(yaw, pitch))| {
            let t = i as f64 / cfg.sampling_hz;
            let pupil = cfg.pupil_base_mm + shift + DRIFT_MM * (std::f64::consts::TAU * DRIFT_HZ * t + phase).sin();
            let (nl, nr) = (noise.sample(&mut noise_rng), noise.sample(&mut noise_rng));
            let dir = direction(yaw, pitch);
            GazeSample {
                timestamp_us: (i as f64 * 1e6 / cfg.sampling_hz).round() as i64,
                left_dir: dir,
                right_dir: dir,
                left_pupil_mm: pupil + nl,
                right_pupil_mm: pupil + nr,
                left_valid: true,
                right_valid: true,
            }
        })
        .collect();

    let truth = fixations
        .iter()
        .map(|&(a, b)| {
            let mut c = Candidate::new(a, &samples[a], samples[a].left_pupil_mm, samples[a].right_pupil_mm);
            for (i, s) in samples.iter().enumerate().take(b + 1).skip(a + 1) {
                c.extend(i, s, s.left_pupil_mm, s.right_pupil_mm);
            }
            c.to_event()
        })
        .collect();

    let mut meta = SessionMeta::new(participant_id, tlx_mental)?;
    meta.sampling_hz = cfg.sampling_hz;
    Ok((GazeSession::new(meta, samples)?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_low: usize,
    pub n_high: usize,
    /// Multiplier on the pupil shift and on the high-class fixation lengthening.
    pub effect: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_low: 10,
            n_high: 10,
            effect: 1.0,
            duration_s: 120.0,
            seed: 0,
        }
    }
}

/// Config used for participant `k`; depends only on the cohort settings and `k`.
///
/// The drift phase is shared by the whole cohort. A per-participant phase
/// combined with a window stride commensurate with the drift period would
/// give each participant a fixed phase signature that identifies them across
/// overlapping windows.
pub fn participant_config(cohort: &CohortConfig, k: usize) -> SynthConfig {
    let label = (k >= cohort.n_low) as u8;
    let mut cfg = SynthConfig::for_label(label, seed::derive(cohort.seed, k as u64));
    cfg.drift_phase_rad = drift_phase(cohort.seed);
    cfg.duration_s = cohort.duration_s;
    cfg.pupil_cl_shift_mm *= cohort.effect;
    if label == HIGH {
        cfg.fixation_dur_mean_ms = LOW_FIXATION_MS + cohort.effect * (HIGH_FIXATION_MS - LOW_FIXATION_MS);
    }
    cfg
}

pub fn participant_id(k: usize) -> String {
    format!("P{:02}", k + 1)
}

/// Low participants first, then high. TLX mental scores are uniform over
/// 1..=4 for low and 5..=7 for high.
pub fn generate_cohort(cohort: &CohortConfig) -> Result<Vec<GazeSession>, SessionError> {
    if cohort.n_low + cohort.n_high < 2 {
        return Err(SessionError::BadManifest("cohort needs at least 2 participants".into()));
    }
    if !cohort.effect.is_finite() || cohort.effect < 0.0 {
        return Err(SessionError::BadManifest(format!("effect must be >= 0, got {}", cohort.effect)));
    }
    (0..cohort.n_low + cohort.n_high)
        .map(|k| {
            let cfg = participant_config(cohort, k);
            let mut rng = seed::stream_rng(cfg.seed, TLX_STREAM);
            let tlx = if cfg.cl_label == HIGH { rng.random_range(5..=7) } else { rng.random_range(1..=4) };
            generate_session(&cfg, &participant_id(k), tlx).map(|(s, _)| s)
        })
        .collect()
}
