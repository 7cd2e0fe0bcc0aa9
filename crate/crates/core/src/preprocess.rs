//! Pupil-channel conditioning: blink-gap filling, FFT low-pass denoising and
//! 0–1 min-max normalization.
//!
//! Gaze directions are not touched here; the velocity filter consumes them
//! raw.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::GazeSession;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("signal needs at least 2 samples, got {0}")]
    SignalTooShort(usize),
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("input contains NaN at index {0}")]
    NaNInput(usize),
    #[error("{0} pupil channel has no valid samples")]
    NoValidPupil(&'static str),
}

/// Whether the min-max range is taken per session or pooled over all
/// sessions being processed together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    PerSession,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub cutoff_hz: f64,
    pub normalize_scope: NormalizeScope,
    /// Invalid runs up to this long are linearly interpolated; longer ones
    /// split the channel into independently denoised segments.
    pub max_interp_gap_ms: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 4.0,
            normalize_scope: NormalizeScope::Global,
            max_interp_gap_ms: 500.0,
        }
    }
}

/// Unnormalized forward DFT of a real signal. Any length is accepted.
pub fn dft_forward(signal: &[f64]) -> Result<Vec<Complex64>, PreprocessError> {
    if signal.is_empty() {
        return Err(PreprocessError::EmptySignal);
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT including the 1/N factor.
pub fn dft_inverse(spectrum: &[Complex64]) -> Result<Vec<Complex64>, PreprocessError> {
    if spectrum.is_empty() {
        return Err(PreprocessError::EmptySignal);
    }
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    for c in &mut buf {
        *c *= scale;
    }
    Ok(buf)
}

/// Ideal low-pass: zeroes every bin whose absolute frequency exceeds
/// `cutoff_hz`, treating bins k and N-k together so the result stays real.
pub fn lowpass_denoise(signal: &[f64], sampling_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>, PreprocessError> {
    check_cutoff(sampling_hz, cutoff_hz)?;
    if signal.len() < 2 {
        return Err(PreprocessError::SignalTooShort(signal.len()));
    }
    if let Some(i) = signal.iter().position(|x| x.is_nan()) {
        return Err(PreprocessError::NaNInput(i));
    }
    let n = signal.len();
    let mut spectrum = dft_forward(signal)?;
    let bin_hz = sampling_hz / n as f64;
    for (k, c) in spectrum.iter_mut().enumerate() {
        let freq = k.min(n - k) as f64 * bin_hz;
        if freq > cutoff_hz {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    Ok(dft_inverse(&spectrum)?.into_iter().map(|c| c.re).collect())
}

pub(crate) fn check_cutoff(sampling_hz: f64, cutoff_hz: f64) -> Result<(), PreprocessError> {
    let nyquist_hz = sampling_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
        return Err(PreprocessError::CutoffAboveNyquist { cutoff_hz, nyquist_hz });
    }
    Ok(())
}

/// Min and max of a channel; maps values onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| {
            Some(match acc {
                None => Self { min: v, max: v },
                Some(r) => Self {
                    min: r.min.min(v),
                    max: r.max.max(v),
                },
            })
        })
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// (x - min) / (max - min); zero when the range is empty.
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }
}

/// Ranges used to normalize the left and right pupil channels. Written next
/// to trained models so the streaming service scales inputs the same way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilRange {
    pub left: ChannelRange,
    pub right: ChannelRange,
}

impl PupilRange {
    pub fn merge(self, other: Self) -> Self {
        Self {
            left: self.left.merge(other.left),
            right: self.right.merge(other.right),
        }
    }
}

/// (x - min) / (max - min), all zeros when max == min.
pub fn minmax_normalize(signal: &[f64]) -> Result<Vec<f64>, PreprocessError> {
    if let Some(i) = signal.iter().position(|x| x.is_nan()) {
        return Err(PreprocessError::NaNInput(i));
    }
    let Some(range) = ChannelRange::of(signal.iter().copied()) else {
        return Ok(Vec::new());
    };
    Ok(signal.iter().map(|&x| range.scale(x)).collect())
}

/// A pupil channel after gap filling and denoising. Samples inside long
/// invalid gaps are not usable and hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedChannel {
    pub values: Vec<f64>,
    pub usable: Vec<bool>,
}

impl DenoisedChannel {
    pub fn range(&self) -> Option<ChannelRange> {
        ChannelRange::of(self.values.iter().zip(&self.usable).filter(|(_, &u)| u).map(|(&v, _)| v))
    }

    pub fn normalize(&self, range: &ChannelRange) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.usable)
            .map(|(&v, &u)| if u { range.scale(v).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedPupil {
    pub left: DenoisedChannel,
    pub right: DenoisedChannel,
}

impl DenoisedPupil {
    pub fn range(&self) -> Result<PupilRange, PreprocessError> {
        Ok(PupilRange {
            left: self.left.range().ok_or(PreprocessError::NoValidPupil("left"))?,
            right: self.right.range().ok_or(PreprocessError::NoValidPupil("right"))?,
        })
    }

    pub fn normalize(&self, range: &PupilRange) -> PupilChannels {
        PupilChannels {
            left: self.left.normalize(&range.left),
            right: self.right.normalize(&range.right),
        }
    }
}

/// Normalized pupil channels aligned with the session samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PupilChannels {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl PupilChannels {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// Fills invalid runs. Runs whose surrounding valid samples are at most
/// `max_gap_us` apart are linearly interpolated; leading and trailing runs
/// within `max_gap_us` of a valid sample hold that sample's value. Anything
/// else is marked unusable.
pub fn fill_gaps(values: &[f64], valid: &[bool], timestamps: &[i64], max_gap_us: i64) -> (Vec<f64>, Vec<bool>) {
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut usable = vec![false; n];
    let mut prev_valid: Option<usize> = None;
    let mut i = 0;
    while i < n {
        if valid[i] {
            out[i] = values[i];
            usable[i] = true;
            prev_valid = Some(i);
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !valid[i] {
            i += 1;
        }
        let next_valid = (i < n).then_some(i);
        match (prev_valid, next_valid) {
            (Some(a), Some(b)) if timestamps[b] - timestamps[a] <= max_gap_us => {
                let (ta, tb) = (timestamps[a] as f64, timestamps[b] as f64);
                for j in start..i {
                    let w = (timestamps[j] as f64 - ta) / (tb - ta);
                    out[j] = values[a] + w * (values[b] - values[a]);
                    usable[j] = true;
                }
            }
            (None, Some(b)) if timestamps[b] - timestamps[start] <= max_gap_us => {
                for j in start..i {
                    out[j] = values[b];
                    usable[j] = true;
                }
            }
            (Some(a), None) if timestamps[i - 1] - timestamps[a] <= max_gap_us => {
                for j in start..i {
                    out[j] = values[a];
                    usable[j] = true;
                }
            }
            _ => {}
        }
    }
    (out, usable)
}

fn denoise_channel(
    values: &[f64],
    valid: &[bool],
    timestamps: &[i64],
    sampling_hz: f64,
    cfg: &PreprocessConfig,
) -> Result<DenoisedChannel, PreprocessError> {
    let max_gap_us = (cfg.max_interp_gap_ms * 1000.0).round() as i64;
    let (mut filled, usable) = fill_gaps(values, valid, timestamps, max_gap_us);
    let mut i = 0;
    while i < filled.len() {
        if !usable[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < filled.len() && usable[i] {
            i += 1;
        }
        if i - start >= 2 {
            let smoothed = lowpass_denoise(&filled[start..i], sampling_hz, cfg.cutoff_hz)?;
            filled[start..i].copy_from_slice(&smoothed);
        }
    }
    Ok(DenoisedChannel { values: filled, usable })
}

/// Gap-fills and low-pass filters both pupil channels of a session.
pub fn denoise_pupil(session: &GazeSession, cfg: &PreprocessConfig) -> Result<DenoisedPupil, PreprocessError> {
    let fs = session.meta().sampling_hz;
    check_cutoff(fs, cfg.cutoff_hz)?;
    let s = session.samples();
    let ts: Vec<i64> = s.iter().map(|x| x.timestamp_us).collect();
    let lv: Vec<f64> = s.iter().map(|x| x.left_pupil_mm).collect();
    let rv: Vec<f64> = s.iter().map(|x| x.right_pupil_mm).collect();
    let lm: Vec<bool> = s.iter().map(|x| x.left_valid && x.left_pupil_mm.is_finite()).collect();
    let rm: Vec<bool> = s.iter().map(|x| x.right_valid && x.right_pupil_mm.is_finite()).collect();
    let out = DenoisedPupil {
        left: denoise_channel(&lv, &lm, &ts, fs, cfg)?,
        right: denoise_channel(&rv, &rm, &ts, fs, cfg)?,
    };
    // Surfaces empty channels early.
    out.range()?;
    Ok(out)
}

/// Denoise then normalize a single session against its own range.
pub fn preprocess_pupil(session: &GazeSession, cfg: &PreprocessConfig) -> Result<PupilChannels, PreprocessError> {
    let denoised = denoise_pupil(session, cfg)?;
    Ok(denoised.normalize(&denoised.range()?))
}

/// Preprocesses several sessions, honoring `cfg.normalize_scope`. Returns the
/// pooled range alongside the channels (for per-session scope this is the
/// union of the individual ranges and is informational only).
pub fn preprocess_sessions(
    sessions: &[GazeSession],
    cfg: &PreprocessConfig,
) -> Result<(Vec<PupilChannels>, PupilRange), PreprocessError> {
    let denoised = sessions
        .iter()
        .map(|s| denoise_pupil(s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let ranges = denoised.iter().map(|d| d.range()).collect::<Result<Vec<_>, _>>()?;
    let pooled = ranges
        .iter()
        .copied()
        .reduce(PupilRange::merge)
        .ok_or(PreprocessError::EmptySignal)?;
    let channels = denoised
        .iter()
        .zip(&ranges)
        .map(|(d, r)| match cfg.normalize_scope {
            NormalizeScope::PerSession => d.normalize(r),
            NormalizeScope::Global => d.normalize(&pooled),
        })
        .collect();
    Ok((channels, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{GazeSample, SessionMeta};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    acc + Complex64::new(v * ang.cos(), v * ang.sin())
                })
            })
            .collect()
    }

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn session_from_pupil(pupil: &[f64], valid: &[bool]) -> GazeSession {
        let samples = pupil
            .iter()
            .zip(valid)
            .enumerate()
            .map(|(i, (&p, &v))| {
                let mut s = GazeSample::binocular(i as i64 * 5000, [0.0, 0.0, 1.0], p);
                s.left_valid = v;
                s.right_valid = v;
                s
            })
            .collect();
        GazeSession::new(SessionMeta::new("p", 2).unwrap(), samples).unwrap()
    }

    #[test]
    fn dft_fixtures() {
        let dc = dft_forward(&[1.0; 4]).unwrap();
        let expect = [4.0, 0.0, 0.0, 0.0];
        for (c, e) in dc.iter().zip(expect) {
            assert!((c.re - e).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
        let imp = dft_forward(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for c in imp {
            assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
        assert_eq!(dft_forward(&[]), Err(PreprocessError::EmptySignal));
    }

    #[test]
    fn dft_matches_direct_summation_len_64() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let fast = dft_forward(&x).unwrap();
        let slow = naive_dft(&x);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn lowpass_keeps_constant() {
        let out = lowpass_denoise(&[2.5; 37], 200.0, 4.0).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-9));
    }

    #[test]
    fn lowpass_passes_2hz_and_kills_50hz() {
        let slow = sine(2.0, 200.0, 400);
        let out = lowpass_denoise(&slow, 200.0, 4.0).unwrap();
        let err = out.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");

        let fast = sine(50.0, 200.0, 400);
        let out = lowpass_denoise(&fast, 200.0, 4.0).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-6));
        assert_eq!(out.len(), 400);
    }

    #[test]
    fn lowpass_odd_length_keeps_length() {
        let x = sine(1.0, 200.0, 401);
        assert_eq!(lowpass_denoise(&x, 200.0, 4.0).unwrap().len(), 401);
    }

    #[test]
    fn lowpass_rejects_bad_cutoff() {
        assert!(matches!(
            lowpass_denoise(&[1.0, 2.0], 200.0, 100.0),
            Err(PreprocessError::CutoffAboveNyquist { .. })
        ));
        assert!(matches!(
            lowpass_denoise(&[1.0, 2.0], 200.0, 0.0),
            Err(PreprocessError::CutoffAboveNyquist { .. })
        ));
        assert_eq!(lowpass_denoise(&[1.0], 200.0, 4.0), Err(PreprocessError::SignalTooShort(1)));
    }

    #[test]
    fn minmax_fixtures() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(minmax_normalize(&[1.0, f64::NAN]), Err(PreprocessError::NaNInput(1)));
    }

    #[test]
    fn constant_session_normalizes_to_zero() {
        let s = session_from_pupil(&[3.0; 50], &[true; 50]);
        let ch = preprocess_pupil(&s, &PreprocessConfig::default()).unwrap();
        assert!(ch.left.iter().chain(&ch.right).all(|&v| v.abs() < 1e-12));
        assert_eq!(ch.len(), 50);
    }

    #[test]
    fn short_gap_is_interpolated() {
        let ts = [0, 5000, 10000];
        let (out, usable) = fill_gaps(&[1.0, f64::NAN, 3.0], &[true, false, true], &ts, 500_000);
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
        assert_eq!(usable, vec![true; 3]);
    }

    #[test]
    fn long_gap_splits_segments() {
        let n = 300;
        let valid: Vec<bool> = (0..n).map(|i| !(100..=210).contains(&i)).collect();
        let ts: Vec<i64> = (0..n as i64).map(|i| i * 5000).collect();
        let vals = vec![1.0; n];
        let (_, usable) = fill_gaps(&vals, &valid, &ts, 500_000);
        assert_eq!(usable, valid);
        // leading/trailing gaps hold the nearest valid value
        let (out, usable) = fill_gaps(&[0.0, 2.0, 0.0], &[false, true, false], &ts[..3], 500_000);
        assert_eq!(out, vec![2.0; 3]);
        assert!(usable.iter().all(|&u| u));
    }

    #[test]
    fn session_with_only_invalid_samples_errors() {
        let s = session_from_pupil(&[3.0; 4], &[false; 4]);
        assert_eq!(
            preprocess_pupil(&s, &PreprocessConfig::default()),
            Err(PreprocessError::NoValidPupil("left"))
        );
    }

    #[test]
    fn denoise_recovers_slow_component() {
        let n = 2000;
        let clean: Vec<f64> = sine(2.0, 200.0, n).iter().map(|v| 3.0 + 0.2 * v).collect();
        let noisy: Vec<f64> = clean
            .iter()
            .zip(sine(50.0, 200.0, n))
            .map(|(c, z)| c + 0.1 * z)
            .collect();
        let s = session_from_pupil(&noisy, &vec![true; n]);
        let ch = preprocess_pupil(&s, &PreprocessConfig::default()).unwrap();
        let r = correlation(&ch.left, &clean);
        assert!(r > 0.99, "{r}");
    }

    #[test]
    fn global_scope_shares_range() {
        let a = session_from_pupil(&[3.0; 20], &[true; 20]);
        let b = session_from_pupil(&[4.0; 20], &[true; 20]);
        let mut cfg = PreprocessConfig::default();
        let (ch, range) = preprocess_sessions(&[a.clone(), b.clone()], &cfg).unwrap();
        assert!((range.left.min - 3.0).abs() < 1e-9 && (range.left.max - 4.0).abs() < 1e-9);
        assert!(ch[0].left.iter().all(|v| v.abs() < 1e-9));
        assert!(ch[1].left.iter().all(|v| (v - 1.0).abs() < 1e-9));
        cfg.normalize_scope = NormalizeScope::PerSession;
        let (ch, _) = preprocess_sessions(&[a, b], &cfg).unwrap();
        assert!(ch[1].left.iter().all(|v| v.abs() < 1e-9));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    proptest! {
        #[test]
        fn inverse_round_trip(x in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let back = dft_inverse(&dft_forward(&x).unwrap()).unwrap();
            for (b, v) in back.iter().zip(&x) {
                prop_assert!((b.re - v).abs() < 1e-9 && b.im.abs() < 1e-9);
            }
        }

        #[test]
        fn lowpass_idempotent_and_linear(
            x in prop::collection::vec(-10.0f64..10.0, 2..300),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, _)| ((i as u64 * 7919 + seed) % 23) as f64 - 11.0).collect();
            let f = |s: &[f64]| lowpass_denoise(s, 200.0, 4.0).unwrap();
            let once = f(&x);
            let twice = f(&once);
            for (p, q) in once.iter().zip(&twice) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fy = f(&y);
            for ((m, p), q) in f(&mix).iter().zip(&once).zip(&fy) {
                prop_assert!((m - (a * p + b * q)).abs() < 1e-9);
            }
        }

        #[test]
        fn minmax_in_unit_interval(x in prop::collection::vec(-1e6f64..1e6, 1..100)) {
            let out = minmax_normalize(&x).unwrap();
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                prop_assert_eq!(out.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(out.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }
    }
}
