//! End-to-end feature extraction for training recordings and queries.
//!
//! Spectra are reduced to frame statistics as they are produced, so long
//! recordings never hold a full spectrogram in memory.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use crate::dsp::{AudioClip, DspError, FrameAnalyzer};
use crate::features::{aggregate, link_mode_deltas, FeatureKind, FeatureVector, FrameFeatures};
use crate::frame_select::{select_by_power, SelectionMask};
use crate::Error;

/// Frame statistics of every full frame plus per-frame power.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    pub features: Vec<FrameFeatures>,
    pub power: Vec<f64>,
}

/// Caches one analyzer per sample rate.
#[derive(Debug, Default)]
pub struct Extractor {
    analyzers: BTreeMap<u32, FrameAnalyzer>,
}

impl Extractor {
    pub fn new() -> Self {
        Self::default()
    }

    fn analyzer(&mut self, sample_rate: u32) -> Result<&FrameAnalyzer, DspError> {
        Ok(match self.analyzers.entry(sample_rate) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(FrameAnalyzer::new(sample_rate)?),
        })
    }

    /// Frame statistics for the whole clip, with mode deltas linked in
    /// recording order.
    pub fn frame_track(&mut self, clip: &AudioClip) -> Result<FrameTrack, DspError> {
        let analyzer = self.analyzer(clip.sample_rate)?;
        if clip.samples.len() < analyzer.frame_len() {
            return Err(DspError::ClipTooShort {
                samples: clip.samples.len(),
                frame_len: analyzer.frame_len(),
            });
        }
        let n = analyzer.n_frames(clip.samples.len());
        let mut features = Vec::with_capacity(n);
        let mut power = Vec::with_capacity(n);
        let freqs = analyzer.freqs();
        analyzer.for_each_frame(&clip.samples, |_, p, mags| {
            features.push(FrameFeatures::from_magnitudes(mags, freqs));
            power.push(p);
        });
        link_mode_deltas(&mut features);
        Ok(FrameTrack { features, power })
    }

    /// Power-threshold-selected frames of a training recording. Mode deltas
    /// refer to each frame's successor in the original recording, selected or
    /// not.
    pub fn training_frames(
        &mut self,
        clip: &AudioClip,
    ) -> Result<(Vec<FrameFeatures>, SelectionMask), DspError> {
        let track = self.frame_track(clip)?;
        let mask = select_by_power(&track.power);
        let selected = track
            .features
            .into_iter()
            .zip(&mask.selected)
            .filter_map(|(f, &keep)| keep.then_some(f))
            .collect();
        Ok((selected, mask))
    }

    /// Feature vector of a query recording over its whole length, without
    /// frame selection.
    pub fn query_vector(&mut self, clip: &AudioClip, kind: FeatureKind) -> Result<FeatureVector, Error> {
        let track = self.frame_track(clip)?;
        Ok(aggregate(&track.features, kind)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::compute_spectrogram;
    use crate::features::frame_features;
    use crate::frame_select::select_frames;
    use crate::synth;

    #[test]
    fn streaming_matches_spectrogram_path() {
        let clip = synth::species_clip(11, 48000, 1.5, 5000.0, 20.0);
        let spec = compute_spectrogram(&clip).unwrap();
        let expected = frame_features(&spec);
        let track = Extractor::new().frame_track(&clip).unwrap();
        assert_eq!(track.features, expected);
        assert_eq!(track.power, spec.frame_power);

        let mask = select_frames(&spec);
        let (selected, mask2) = Extractor::new().training_frames(&clip).unwrap();
        assert_eq!(mask, mask2);
        let manual: Vec<FrameFeatures> = expected
            .iter()
            .zip(&mask.selected)
            .filter_map(|(f, &s)| s.then_some(*f))
            .collect();
        assert_eq!(selected, manual);
        assert!(selected.len() < expected.len());
    }

    #[test]
    fn query_uses_every_frame() {
        let clip = synth::species_clip(3, 44100, 1.0, 2000.0, 20.0);
        let mut ex = Extractor::new();
        let v = ex.query_vector(&clip, FeatureKind::Mode1d).unwrap();
        assert_eq!(v.kind(), FeatureKind::Mode1d);
        let h = v.as_histogram().unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_query_errors() {
        let clip = AudioClip::new(vec![0.0; 100], 48000, "x");
        assert!(matches!(
            Extractor::new().query_vector(&clip, FeatureKind::Mode1d),
            Err(Error::Dsp(DspError::ClipTooShort { .. }))
        ));
    }
}
