//! Audio decoding and band-limited magnitude spectrograms.
//!
//! Frames are 20 ms long with 50% overlap and a rectangular window. Each frame
//! is zero-padded to an FFT size that keeps the bin spacing at or below
//! 48000/1024 Hz, and only bins whose centre frequency lies in
//! `[BAND_LOW_HZ, BAND_HIGH_HZ]` are retained.

use std::io::Cursor;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Lower edge of the retained band (inclusive).
pub const BAND_LOW_HZ: f64 = 1000.0;
/// Upper edge of the retained band (inclusive).
pub const BAND_HIGH_HZ: f64 = 10000.0;
/// Frame length in seconds.
pub const FRAME_SECONDS: f64 = 0.020;
/// FFT size used at the reference sample rate.
pub const REFERENCE_FFT_SIZE: usize = 1024;
/// Reference sample rate for the FFT-size rule.
pub const REFERENCE_RATE_HZ: f64 = 48000.0;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("clip has {samples} samples, fewer than one {frame_len}-sample frame")]
    ClipTooShort { samples: usize, frame_len: usize },
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("sample rate {0} Hz leaves no spectrum bins in the analysis band")]
    NoBandCoverage(u32),
}

/// Decoded mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Band-limited magnitude spectrogram with per-frame time-domain power.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// One magnitude vector per frame, aligned with `freqs`.
    pub frames: Vec<Vec<f64>>,
    /// Centre frequency of each retained bin in Hz.
    pub freqs: Vec<f64>,
    /// Sum of squared samples of each frame.
    pub frame_power: Vec<f64>,
    pub frame_hop_s: f64,
    pub nfft: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn bin_spacing_hz(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            f64::NAN
        }
    }
}

/// Decode a RIFF/WAVE file (PCM 8/16/24/32-bit integer or 32-bit float, 1 or 2
/// channels). Stereo is averaged to mono; integer samples are scaled by
/// `2^(bits-1)` so full-scale positive 16-bit reads as 32767/32768.
pub fn decode_wav(bytes: &[u8], source_id: &str) -> Result<AudioClip, DspError> {
    if let Some(tag) = wav_format_tag(bytes) {
        if !matches!(tag, WAVE_FORMAT_PCM | WAVE_FORMAT_IEEE_FLOAT | WAVE_FORMAT_EXTENSIBLE) {
            return Err(DspError::UnsupportedFormat(format!("format tag 0x{tag:04x}")));
        }
    }
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound_error)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(DspError::UnsupportedFormat(format!(
            "{} channels",
            spec.channels
        )));
    }
    if spec.sample_rate == 0 {
        return Err(DspError::MalformedHeader("zero sample rate".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(map_hound_error)?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound_error)?
        }
        (fmt, bits) => {
            return Err(DspError::UnsupportedFormat(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    let channels = usize::from(spec.channels);
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(AudioClip::new(samples, spec.sample_rate, source_id))
}

/// Encode a clip as mono 16-bit PCM. Samples outside [-1, 1) are clipped.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * clip.samples.len()));
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory writer");
        for &s in &clip.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    buf.into_inner()
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xfffe;

/// Format tag of the `fmt ` chunk, if the bytes look like RIFF/WAVE.
fn wav_format_tag(bytes: &[u8]) -> Option<u16> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        if id == b"fmt " {
            let body = bytes.get(pos + 8..pos + 10)?;
            return Some(u16::from_le_bytes([body[0], body[1]]));
        }
        pos = pos.checked_add(8 + len + (len & 1))?;
    }
    None
}

fn map_hound_error(e: hound::Error) -> DspError {
    match e {
        hound::Error::Unsupported => DspError::UnsupportedFormat("compressed or unknown codec".into()),
        hound::Error::FormatError(msg) => DspError::MalformedHeader(msg.to_string()),
        hound::Error::IoError(io) => DspError::MalformedHeader(io.to_string()),
        other => DspError::MalformedHeader(other.to_string()),
    }
}

/// Smallest power of two `>= 1024 * sample_rate / 48000`.
pub fn fft_size_for(sample_rate: u32) -> usize {
    // Integer form of the ratio avoids rounding at exact powers of two.
    let numer = REFERENCE_FFT_SIZE as u64 * u64::from(sample_rate);
    let denom = REFERENCE_RATE_HZ as u64;
    let needed = numer.div_ceil(denom).max(1);
    needed.next_power_of_two() as usize
}

/// Frame length in samples: `round(0.020 * sample_rate)`, at least 2.
pub fn frame_len_for(sample_rate: u32) -> usize {
    ((FRAME_SECONDS * f64::from(sample_rate)).round() as usize).max(2)
}

/// Number of full frames in a signal of `len` samples.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        (len - frame_len) / hop + 1
    }
}

/// Reusable short-time analysis for one sample rate.
///
/// Holds the FFT plan so that many clips at the same rate share it.
pub struct FrameAnalyzer {
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    nfft: usize,
    first_bin: usize,
    freqs: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FrameAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameAnalyzer")
            .field("sample_rate", &self.sample_rate)
            .field("frame_len", &self.frame_len)
            .field("hop", &self.hop)
            .field("nfft", &self.nfft)
            .field("bins", &self.freqs.len())
            .finish()
    }
}

impl FrameAnalyzer {
    pub fn new(sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidSampleRate(sample_rate));
        }
        let frame_len = frame_len_for(sample_rate);
        let hop = frame_len / 2;
        let nfft = fft_size_for(sample_rate).max(frame_len.next_power_of_two());
        let spacing = f64::from(sample_rate) / nfft as f64;
        let (first_bin, freqs) = retained_bins(sample_rate, nfft);
        if freqs.is_empty() {
            return Err(DspError::NoBandCoverage(sample_rate));
        }
        debug_assert!((freqs[0] - first_bin as f64 * spacing).abs() < 1e-9);
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            sample_rate,
            frame_len,
            hop,
            nfft,
            first_bin,
            freqs,
            fft,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        frame_count(n_samples, self.frame_len, self.hop)
    }

    /// Visit every full frame of `samples` in order, passing the frame index,
    /// its time-domain power and its band-limited magnitude spectrum.
    pub fn for_each_frame<F>(&self, samples: &[f64], mut visit: F)
    where
        F: FnMut(usize, f64, &[f64]),
    {
        let n = self.n_frames(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mags = vec![0.0; self.freqs.len()];
        for i in 0..n {
            let start = i * self.hop;
            let frame = &samples[start..start + self.frame_len];
            let power: f64 = frame.iter().map(|x| x * x).sum();
            for (slot, &x) in buf.iter_mut().zip(frame) {
                *slot = Complex::new(x, 0.0);
            }
            for slot in &mut buf[self.frame_len..] {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mags.iter_mut().zip(&buf[self.first_bin..]) {
                *m = c.norm();
            }
            visit(i, power, &mags);
        }
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram, DspError> {
        if clip.sample_rate != self.sample_rate {
            return Err(DspError::InvalidSampleRate(clip.sample_rate));
        }
        if clip.samples.len() < self.frame_len {
            return Err(DspError::ClipTooShort {
                samples: clip.samples.len(),
                frame_len: self.frame_len,
            });
        }
        let n = self.n_frames(clip.samples.len());
        let mut frames = Vec::with_capacity(n);
        let mut frame_power = Vec::with_capacity(n);
        self.for_each_frame(&clip.samples, |_, power, mags| {
            frames.push(mags.to_vec());
            frame_power.push(power);
        });
        Ok(Spectrogram {
            frames,
            freqs: self.freqs.clone(),
            frame_power,
            frame_hop_s: self.hop as f64 / f64::from(self.sample_rate),
            nfft: self.nfft,
        })
    }
}

/// First retained bin index and the centre frequencies of all retained bins.
fn retained_bins(sample_rate: u32, nfft: usize) -> (usize, Vec<f64>) {
    let spacing = f64::from(sample_rate) / nfft as f64;
    let nyquist_bin = nfft / 2;
    let first = (BAND_LOW_HZ / spacing).ceil() as usize;
    let freqs: Vec<f64> = (first..=nyquist_bin)
        .map(|k| (k, k as f64 * spacing))
        .take_while(|&(_, f)| f <= BAND_HIGH_HZ)
        .map(|(_, f)| f)
        .collect();
    (first, freqs)
}

/// Compute the band-limited magnitude spectrogram of a clip.
pub fn compute_spectrogram(clip: &AudioClip) -> Result<Spectrogram, DspError> {
    FrameAnalyzer::new(clip.sample_rate)?.spectrogram(clip)
}
