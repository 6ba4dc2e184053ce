//! Relative power-threshold selection of training frames.
//!
//! The mean power of the loudest 1% of a recording's frames estimates its peak
//! level; every frame reaching a quarter of that level is kept.

use crate::dsp::Spectrogram;

/// Fraction of frames used to estimate the peak level.
pub const TOP_FRACTION: f64 = 0.01;
/// Selected frames must reach this fraction of the peak estimate.
pub const RELATIVE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    pub selected: Vec<bool>,
    pub threshold: f64,
    pub peak_estimate: f64,
}

impl SelectionMask {
    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn selected_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }
}

/// Number of frames averaged for the peak estimate: `ceil(0.01 n)`, at least 1.
pub fn top_count(n_frames: usize) -> usize {
    ((n_frames as f64 * TOP_FRACTION).ceil() as usize).max(1)
}

/// Select frames from per-frame powers. An empty input yields an empty mask.
pub fn select_by_power(frame_power: &[f64]) -> SelectionMask {
    if frame_power.is_empty() {
        return SelectionMask {
            selected: Vec::new(),
            threshold: 0.0,
            peak_estimate: 0.0,
        };
    }
    let mut order: Vec<usize> = (0..frame_power.len()).collect();
    // Descending power, earlier frame first on ties.
    order.sort_by(|&a, &b| frame_power[b].total_cmp(&frame_power[a]).then(a.cmp(&b)));
    let top = top_count(frame_power.len());
    let peak_estimate = order[..top].iter().map(|&i| frame_power[i]).sum::<f64>() / top as f64;
    let threshold = RELATIVE_THRESHOLD * peak_estimate;
    SelectionMask {
        selected: frame_power.iter().map(|&p| p >= threshold).collect(),
        threshold,
        peak_estimate,
    }
}

pub fn select_frames(spec: &Spectrogram) -> SelectionMask {
    select_by_power(&spec.frame_power)
}
