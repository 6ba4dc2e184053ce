//! Frame-level spectral statistics and their aggregation into feature vectors.
//!
//! Each frame's band-limited magnitude spectrum is normalised to unit sum and
//! treated as a distribution over frequency, giving `f_mean`, `f_std` and
//! `f_mode`. `delta_f_mode` is the change of mode to the following frame of
//! the recording, `mode(next) - mode(current)`.
//!
//! Frames are aggregated either into sparse binned histograms of unit mass or
//! into a six-value percentile summary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{Spectrogram, BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::stats::percentiles;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("no frames to aggregate")]
    EmptyInput,
    #[error("no frame-to-frame mode differences available")]
    NoDeltas,
    #[error("{0} is not a histogram feature kind")]
    NotHistogram(FeatureKind),
    #[error("unknown feature kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub f_mean: f64,
    pub f_std: f64,
    pub f_mode: f64,
    /// Absent for the final frame of a recording.
    pub delta_f_mode: Option<f64>,
}

impl FrameFeatures {
    /// Statistics of one magnitude spectrum. An all-zero spectrum is treated
    /// as uniform over the retained bins.
    pub fn from_magnitudes(mags: &[f64], freqs: &[f64]) -> Self {
        debug_assert_eq!(mags.len(), freqs.len());
        let total: f64 = mags.iter().sum();
        let uniform = 1.0 / mags.len() as f64;
        let weight = |m: f64| if total > 0.0 { m / total } else { uniform };

        let f_mean: f64 = mags.iter().zip(freqs).map(|(&m, &f)| weight(m) * f).sum();
        let var: f64 = mags
            .iter()
            .zip(freqs)
            .map(|(&m, &f)| weight(m) * (f - f_mean) * (f - f_mean))
            .sum();

        // First maximum wins, i.e. the lowest frequency on ties.
        let mut mode_idx = 0;
        for (i, &m) in mags.iter().enumerate() {
            if m > mags[mode_idx] {
                mode_idx = i;
            }
        }
        Self {
            f_mean,
            f_std: var.max(0.0).sqrt(),
            f_mode: freqs[mode_idx],
            delta_f_mode: None,
        }
    }
}

/// Fill `delta_f_mode` from each frame's successor in recording order.
pub fn link_mode_deltas(feats: &mut [FrameFeatures]) {
    let n = feats.len();
    for i in 0..n {
        feats[i].delta_f_mode = if i + 1 < n {
            Some(feats[i + 1].f_mode - feats[i].f_mode)
        } else {
            None
        };
    }
}

pub fn frame_features(spec: &Spectrogram) -> Vec<FrameFeatures> {
    let mut feats: Vec<FrameFeatures> = spec
        .frames
        .iter()
        .map(|m| FrameFeatures::from_magnitudes(m, &spec.freqs))
        .collect();
    link_mode_deltas(&mut feats);
    feats
}

/// Uniform binning of one feature dimension. Values outside `[lo, hi]` are
/// clamped into the edge bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub const fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, bins }
    }

    pub fn bin(&self, x: f64) -> usize {
        let pos = (x - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos.floor() as usize).min(self.bins - 1)
        }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn lower_edge(&self, bin: usize) -> f64 {
        self.lo + bin as f64 * self.width()
    }
}

pub const FREQ_AXIS_100: Axis = Axis::new(BAND_LOW_HZ, BAND_HIGH_HZ, 100);
pub const FREQ_AXIS_50: Axis = Axis::new(BAND_LOW_HZ, BAND_HIGH_HZ, 50);
pub const DELTA_AXIS_50: Axis = Axis::new(-2000.0, 2000.0, 50);

/// Feature representations; the string names are the CLI spellings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    /// 100x50 histogram of (f_mean, f_std).
    #[serde(rename = "meanstd2d")]
    MeanStd2d,
    /// 100-bin histogram of f_mode.
    #[serde(rename = "mode1d")]
    Mode1d,
    /// 100x50 histogram of (f_mode, delta_f_mode).
    #[serde(rename = "modedelta2d")]
    ModeDelta2d,
    /// Percentiles 5/50/95 of f_mode and 50/75/95 of delta_f_mode.
    #[serde(rename = "summary6")]
    Summary6,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::MeanStd2d,
        FeatureKind::Mode1d,
        FeatureKind::ModeDelta2d,
        FeatureKind::Summary6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::MeanStd2d => "meanstd2d",
            FeatureKind::Mode1d => "mode1d",
            FeatureKind::ModeDelta2d => "modedelta2d",
            FeatureKind::Summary6 => "summary6",
        }
    }

    pub fn is_histogram(self) -> bool {
        self != FeatureKind::Summary6
    }

    /// Vector dimensionality.
    pub fn dim(self) -> usize {
        match self.axes() {
            Some((a, Some(b))) => a.bins * b.bins,
            Some((a, None)) => a.bins,
            None => SUMMARY_DIM,
        }
    }

    /// Histogram axes; `None` for the summary kind.
    pub fn axes(self) -> Option<(Axis, Option<Axis>)> {
        match self {
            FeatureKind::MeanStd2d => Some((FREQ_AXIS_100, Some(FREQ_AXIS_50))),
            FeatureKind::Mode1d => Some((FREQ_AXIS_100, None)),
            FeatureKind::ModeDelta2d => Some((FREQ_AXIS_100, Some(DELTA_AXIS_50))),
            FeatureKind::Summary6 => None,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureKind::MeanStd2d => 0,
            FeatureKind::Mode1d => 1,
            FeatureKind::ModeDelta2d => 2,
            FeatureKind::Summary6 => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Flat bin index of one frame, or `None` when the frame lacks a value the
    /// kind needs (a missing mode delta).
    fn bin_of(self, f: &FrameFeatures) -> Option<u32> {
        let idx = match self {
            FeatureKind::MeanStd2d => FREQ_AXIS_100.bin(f.f_mean) * 50 + FREQ_AXIS_50.bin(f.f_std),
            FeatureKind::Mode1d => FREQ_AXIS_100.bin(f.f_mode),
            FeatureKind::ModeDelta2d => {
                FREQ_AXIS_100.bin(f.f_mode) * 50 + DELTA_AXIS_50.bin(f.delta_f_mode?)
            }
            FeatureKind::Summary6 => return None,
        };
        Some(idx as u32)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownKind(s.to_string()))
    }
}

pub const SUMMARY_DIM: usize = 6;
const MODE_PERCENTILES: [f64; 3] = [0.05, 0.50, 0.95];
const DELTA_PERCENTILES: [f64; 3] = [0.50, 0.75, 0.95];

/// Sparse histogram: strictly increasing bin indices with positive masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseHistogram {
    pub kind: FeatureKind,
    pub indices: Vec<u32>,
    pub masses: Vec<f64>,
}

impl SparseHistogram {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.kind.dim()];
        for (&i, &m) in self.indices.iter().zip(&self.masses) {
            dense[i as usize] = m;
        }
        dense
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.masses.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureVector {
    Histogram(SparseHistogram),
    /// `[p5(f_mode), p50(f_mode), p95(f_mode), p50(d), p75(d), p95(d)]` in Hz.
    Summary([f64; SUMMARY_DIM]),
}

impl FeatureVector {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureVector::Histogram(h) => h.kind,
            FeatureVector::Summary(_) => FeatureKind::Summary6,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            FeatureVector::Histogram(h) => h.to_dense(),
            FeatureVector::Summary(s) => s.to_vec(),
        }
    }

    pub fn as_histogram(&self) -> Option<&SparseHistogram> {
        match self {
            FeatureVector::Histogram(h) => Some(h),
            FeatureVector::Summary(_) => None,
        }
    }
}

/// Bin frames into a unit-mass sparse histogram. For `ModeDelta2d`, frames
/// without a mode delta are skipped.
pub fn aggregate_histogram(
    feats: &[FrameFeatures],
    kind: FeatureKind,
) -> Result<FeatureVector, FeatureError> {
    if !kind.is_histogram() {
        return Err(FeatureError::NotHistogram(kind));
    }
    let mut bins: Vec<u32> = feats.iter().filter_map(|f| kind.bin_of(f)).collect();
    if bins.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    bins.sort_unstable();
    let total = bins.len() as f64;
    let mut indices = Vec::new();
    let mut masses = Vec::new();
    for run in bins.chunk_by(|a, b| a == b) {
        indices.push(run[0]);
        masses.push(run.len() as f64 / total);
    }
    Ok(FeatureVector::Histogram(SparseHistogram {
        kind,
        indices,
        masses,
    }))
}

pub fn aggregate_summary(feats: &[FrameFeatures]) -> Result<FeatureVector, FeatureError> {
    if feats.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let deltas: Vec<f64> = feats.iter().filter_map(|f| f.delta_f_mode).collect();
    if deltas.is_empty() {
        return Err(FeatureError::NoDeltas);
    }
    let modes: Vec<f64> = feats.iter().map(|f| f.f_mode).collect();
    let m = percentiles(&modes, &MODE_PERCENTILES);
    let d = percentiles(&deltas, &DELTA_PERCENTILES);
    Ok(FeatureVector::Summary([m[0], m[1], m[2], d[0], d[1], d[2]]))
}

/// Aggregate with whichever method `kind` calls for.
pub fn aggregate(feats: &[FrameFeatures], kind: FeatureKind) -> Result<FeatureVector, FeatureError> {
    match kind {
        FeatureKind::Summary6 => aggregate_summary(feats),
        _ => aggregate_histogram(feats, kind),
    }
}
