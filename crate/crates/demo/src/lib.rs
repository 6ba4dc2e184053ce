//! Browser bindings over the core pipeline, driven by synthetic calls so the
//! page needs no audio files. Results cross the boundary as JSON strings.

use std::collections::BTreeMap;

use chorus_core::dsp::AudioClip;
use chorus_core::features::FeatureKind;
use chorus_core::frame_select::select_by_power;
use chorus_core::knn::{classify, rejection_decision, tie_bias_grid, ClassifierConfig, Decision, Metric};
use chorus_core::pipeline::Extractor;
use chorus_core::synth;
use chorus_core::trainstore::{assemble_instances, balance_subsample, blocks_to_vectors, RecordingFrames, TrainingStore};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const RATE: u32 = 22050;
const TRAIN_CLIPS: usize = 4;
const TRAIN_SECONDS: f64 = 3.0;
const INSTANCE_FRAMES: usize = 50;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

#[derive(Serialize)]
struct FrameView {
    power: Vec<f64>,
    selected: Vec<bool>,
    threshold: f64,
    f_mode: Vec<f64>,
    n_selected: usize,
    frame_seconds: f64,
}

/// Frame power, the selection threshold and the dominant-frequency track of
/// one synthetic call (`center_hz <= 0` gives pure noise).
pub fn frame_view(center_hz: f64, snr_db: f64, seconds: f64, seed: u64) -> Result<String, String> {
    let clip = make_clip(center_hz, snr_db, seconds, seed);
    let track = Extractor::new().frame_track(&clip).map_err(|e| e.to_string())?;
    let mask = select_by_power(&track.power);
    Ok(to_json(&FrameView {
        n_selected: mask.n_selected(),
        threshold: mask.threshold,
        f_mode: track.features.iter().map(|f| f.f_mode).collect(),
        selected: mask.selected,
        power: track.power,
        frame_seconds: 0.01,
    }))
}

#[wasm_bindgen(js_name = frameView)]
pub fn frame_view_js(center_hz: f64, snr_db: f64, seconds: f64, seed: u32) -> Result<String, JsError> {
    frame_view(center_hz, snr_db, seconds, u64::from(seed)).map_err(err)
}

/// Bias added at each nearest-class position.
#[wasm_bindgen(js_name = tieBias)]
pub fn tie_bias(n_classes: usize, k: usize, m: f64) -> Vec<f64> {
    tie_bias_grid(n_classes, k, m)
}

fn make_clip(center_hz: f64, snr_db: f64, seconds: f64, seed: u64) -> AudioClip {
    if center_hz > 0.0 {
        synth::species_clip(seed, RATE, seconds, center_hz, snr_db)
    } else {
        synth::noise_clip(seed, RATE, seconds, snr_db)
    }
}

#[derive(Serialize)]
struct Ranked {
    label: String,
    prob: f64,
    score: f64,
}

#[derive(Serialize)]
struct Classified {
    ranking: Vec<Ranked>,
    entropy: f64,
    normalized_entropy: f64,
    decision: Decision,
}

/// A small in-memory store of synthetic species.
#[wasm_bindgen]
pub struct Demo {
    store: TrainingStore,
    extractor: Extractor,
}

#[wasm_bindgen]
impl Demo {
    /// `n_species` tones spread evenly over 2–8 kHz.
    #[wasm_bindgen(constructor)]
    pub fn new(n_species: usize, kind: &str, seed: u32) -> Result<Demo, JsError> {
        Self::build(n_species, kind, u64::from(seed)).map_err(err)
    }

    pub fn labels(&self) -> Vec<String> {
        self.store.labels().to_vec()
    }

    #[wasm_bindgen(js_name = instancesPerClass)]
    pub fn instances_per_class(&self) -> usize {
        self.store.instances_per_class()
    }

    /// Classify a fresh synthetic call and apply the entropy threshold.
    #[wasm_bindgen(js_name = classify)]
    pub fn classify_js(
        &mut self,
        center_hz: f64,
        snr_db: f64,
        seed: u32,
        k: usize,
        metric: &str,
        entropy_max: f64,
    ) -> Result<String, JsError> {
        self.classify_call(center_hz, snr_db, u64::from(seed), k, metric, entropy_max)
            .map_err(err)
    }
}

impl Demo {
    pub fn build(n_species: usize, kind: &str, seed: u64) -> Result<Demo, String> {
        if n_species < 2 {
            return Err("need at least two species".into());
        }
        let kind: FeatureKind = kind.parse().map_err(|e: chorus_core::features::FeatureError| e.to_string())?;
        let mut extractor = Extractor::new();
        let mut blocks = BTreeMap::new();
        for j in 0..n_species {
            let center = 2000.0 + 6000.0 * j as f64 / (n_species - 1) as f64;
            let mut recs = Vec::new();
            for i in 0..TRAIN_CLIPS {
                let clip = synth::species_clip(seed * 1000 + (j * 100 + i) as u64, RATE, TRAIN_SECONDS, center, 20.0);
                let (frames, _) = extractor.training_frames(&clip).map_err(|e| e.to_string())?;
                recs.push(RecordingFrames {
                    recording_id: format!("{i:03}"),
                    frames,
                });
            }
            let b = assemble_instances(&recs, INSTANCE_FRAMES).map_err(|e| e.to_string())?;
            let v = blocks_to_vectors(&b, kind).map_err(|e| e.to_string())?;
            blocks.insert(format!("Tonus hz{center:.0}"), v);
        }
        let store = balance_subsample(blocks, None, seed, kind, INSTANCE_FRAMES).map_err(|e| e.to_string())?;
        Ok(Demo { store, extractor })
    }

    pub fn store(&self) -> &TrainingStore {
        &self.store
    }

    pub fn classify_call(
        &mut self,
        center_hz: f64,
        snr_db: f64,
        seed: u64,
        k: usize,
        metric: &str,
        entropy_max: f64,
    ) -> Result<String, String> {
        let metric: Metric = metric.parse().map_err(|e: chorus_core::knn::KnnError| e.to_string())?;
        let clip = make_clip(center_hz, snr_db, 2.0, seed);
        let q = self
            .extractor
            .query_vector(&clip, self.store.kind())
            .map_err(|e| e.to_string())?;
        let post = classify(&q, &self.store, &ClassifierConfig::new(k, metric)).map_err(|e| e.to_string())?;
        let ranking = post
            .ranking
            .iter()
            .map(|&c| {
                let i = post.classes.binary_search(&c).expect("ranked class is a candidate");
                Ranked {
                    label: self.store.label(c).unwrap_or("?").to_string(),
                    prob: post.probs[i],
                    score: post.biased_scores[i],
                }
            })
            .collect();
        Ok(to_json(&Classified {
            ranking,
            entropy: post.entropy,
            normalized_entropy: post.normalized_entropy,
            decision: rejection_decision(&post, entropy_max),
        }))
    }
}
