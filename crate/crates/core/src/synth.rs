//! Seeded synthetic recordings: bursts of tones around a centre frequency
//! separated by gaps, in white Gaussian noise at a given SNR.
//!
//! Used for fixtures, the demo page and the `synth` CLI verb.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::AudioClip;

/// Peak amplitude of the synthetic tones.
pub const TONE_AMPLITUDE: f64 = 0.5;
/// Frequency jitter of each burst around the centre.
pub const BURST_SPREAD_HZ: f64 = 150.0;

/// A recording of `seconds` length with tone bursts of 80-250 ms around
/// `center_hz`, separated by 40-200 ms gaps, plus white noise whose variance
/// is `snr_db` below the tone power (A^2/2).
pub fn species_clip(seed: u64, sample_rate: u32, seconds: f64, center_hz: f64, snr_db: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(sample_rate);
    let n = (seconds * fs).round() as usize;
    let mut samples = vec![0.0; n];

    let mut pos = (rng.random_range(0.01..0.06) * fs) as usize;
    while pos < n {
        let len = (rng.random_range(0.08..0.25) * fs) as usize;
        let freq = center_hz + rng.random_range(-BURST_SPREAD_HZ..=BURST_SPREAD_HZ);
        let sweep = rng.random_range(-100.0..=100.0);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let end = (pos + len).min(n);
        let mut phase = phase0;
        for (i, s) in samples[pos..end].iter_mut().enumerate() {
            let f = freq + sweep * i as f64 / len as f64;
            phase += 2.0 * PI * f / fs;
            // Short raised-cosine ramps avoid clicks at burst edges.
            let ramp = 0.005 * fs;
            let edge = (i as f64).min((end - pos - 1 - i) as f64);
            let gain = if edge < ramp { 0.5 - 0.5 * (PI * edge / ramp).cos() } else { 1.0 };
            *s += TONE_AMPLITUDE * gain * phase.sin();
        }
        pos = end + (rng.random_range(0.04..0.20) * fs) as usize;
    }

    let signal_power = TONE_AMPLITUDE * TONE_AMPLITUDE / 2.0;
    add_noise(&mut samples, &mut rng, signal_power, snr_db);
    AudioClip::new(samples, sample_rate, format!("synth-{center_hz:.0}-{seed}"))
}

/// Pure white Gaussian noise at the level the tone clips use for `snr_db`.
pub fn noise_clip(seed: u64, sample_rate: u32, seconds: f64, snr_db: f64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * f64::from(sample_rate)).round() as usize;
    let mut samples = vec![0.0; n];
    add_noise(&mut samples, &mut rng, TONE_AMPLITUDE * TONE_AMPLITUDE / 2.0, snr_db);
    AudioClip::new(samples, sample_rate, format!("noise-{seed}"))
}

/// A continuous unit-amplitude sine.
pub fn sine(freq_hz: f64, sample_rate: u32, seconds: f64, amplitude: f64) -> AudioClip {
    let fs = f64::from(sample_rate);
    let n = (seconds * fs).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / fs).sin())
        .collect();
    AudioClip::new(samples, sample_rate, format!("sine-{freq_hz:.0}"))
}

fn add_noise(samples: &mut [f64], rng: &mut ChaCha8Rng, signal_power: f64, snr_db: f64) {
    let std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, std).expect("finite noise level");
    for s in samples.iter_mut() {
        *s += normal.sample(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = species_clip(5, 48000, 0.5, 5000.0, 20.0);
        let b = species_clip(5, 48000, 0.5, 5000.0, 20.0);
        assert_eq!(a, b);
        assert_ne!(a.samples, species_clip(6, 48000, 0.5, 5000.0, 20.0).samples);
    }

    #[test]
    fn noise_level_matches_snr() {
        let clip = noise_clip(1, 48000, 2.0, 20.0);
        let var = clip.samples.iter().map(|x| x * x).sum::<f64>() / clip.samples.len() as f64;
        let expected = 0.125 / 100.0;
        assert!((var / expected - 1.0).abs() < 0.02, "{var}");
    }
}
