//! Command implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chorus_core::dsp::{decode_wav, encode_wav_pcm16, AudioClip};
use chorus_core::eval::{evaluate, EvalReport, LabeledResult};
use chorus_core::features::FeatureKind;
use chorus_core::knn::{classify as knn_classify, rejection_decision, ClassifierConfig, Decision, KnnError, Posterior};
use chorus_core::pipeline::Extractor;
use chorus_core::synth;
use chorus_core::trainstore::{
    assemble_instances, balance_subsample, blocks_to_vectors, ClassId, RecordingFrames, TrainingStore,
};
use chorus_ingest::archive::ArchiveClient;
use chorus_ingest::{fetch_audio, min_frames_filter, Fetcher, Manifest, QueryTerms, RecordingMeta, Role};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::{PipelineArgs, PipelineConfig};
use crate::report;
use crate::{parent_dir, CliError};

fn log_config(verb: &str, cfg: &PipelineConfig) {
    eprintln!("# chorus {verb}: resolved configuration");
    eprint!("{}", cfg.to_toml());
    eprintln!("# end configuration");
}

/// Non-empty, non-comment lines of a list file.
pub fn read_list(path: &Path, what: &str) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {what} file {}: {e}", path.display())))?;
    let items: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what} file {} lists nothing", path.display())));
    }
    Ok(items)
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("manifest {} does not exist", path.display())));
    }
    Ok(Manifest::load(path)?)
}

fn load_store_file(path: &Path) -> Result<TrainingStore, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read store {}: {e}", path.display())))?;
    TrainingStore::from_bytes(&bytes).map_err(|e| CliError::runtime(path.display(), e))
}

fn read_clip(path: &Path) -> Result<AudioClip, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(path.display(), e))?;
    decode_wav(&bytes, &path.to_string_lossy()).map_err(|e| CliError::runtime(path.display(), e))
}

/// The WAV file of a manifest entry, relative paths taken from the
/// manifest's directory.
fn wav_of(entry: &RecordingMeta, base: &Path) -> Result<PathBuf, CliError> {
    let p = entry
        .wav_path
        .as_deref()
        .or(entry.local_path.as_deref().filter(|p| p.to_ascii_lowercase().ends_with(".wav")))
        .ok_or_else(|| {
            CliError::Runtime(format!(
                "recording {} ({}) has no WAV path; convert the download first",
                entry.recording_id, entry.species
            ))
        })?;
    let p = PathBuf::from(p);
    Ok(if p.is_absolute() { p } else { base.join(p) })
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Background {
    /// No other species may be listed.
    None,
    /// Background species are allowed.
    Any,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Binomial species names, one per line.
    #[arg(long, value_name = "FILE")]
    pub species_file: PathBuf,
    #[arg(long, default_value = "A")]
    pub quality: String,
    #[arg(long, value_enum, default_value = "none")]
    pub background: Background,
    #[arg(long, default_value = "TRAIN")]
    pub role: Role,
    /// Manifest to write.
    #[arg(long, default_value = "manifest.jsonl")]
    pub out: PathBuf,
    /// Also download audio into this directory.
    #[arg(long, value_name = "DIR")]
    pub dest_dir: Option<PathBuf>,
    /// Print the planned queries without touching the network.
    #[arg(long)]
    pub dry_run: bool,
    /// Timestamp recorded in the manifest (default: now).
    #[arg(long)]
    pub created_at: Option<String>,
    /// TOML configuration file; its `[archive]` table configures the client.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

pub fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    let species = read_list(&args.species_file, "species")?;
    for s in &species {
        chorus_ingest::archive::split_binomial(s).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_toml_file(p)?,
        None => PipelineConfig::default(),
    };
    cfg.archive = cfg.archive.with_env();
    log_config("ingest", &cfg);
    let client = ArchiveClient::new(cfg.archive.clone());
    if args.dry_run {
        for q in client.plan(&species, &args.quality)? {
            println!("GET {}?query={}&page=1  # {}", q.url, q.query, q.species);
        }
        println!(
            "# filters: quality={} background={:?}; {} species; no requests sent",
            args.quality,
            args.background,
            species.len()
        );
        return Ok(());
    }
    let created_at = args.created_at.clone().unwrap_or_else(now_rfc3339);
    let outcome = client.query_archive(
        &species,
        &args.quality,
        args.background == Background::None,
        args.role,
        &created_at,
    )?;
    for s in &outcome.empty_species {
        eprintln!("warning: empty result for {s}: no recordings pass the filters");
    }
    let mut manifest = outcome.manifest;
    if let Some(dir) = &args.dest_dir {
        let fetcher = Fetcher::new(cfg.archive.min_interval, cfg.archive.timeout);
        let r = fetch_audio(&mut manifest, dir, &fetcher)?;
        eprintln!(
            "audio: {} downloaded, {} already present, {} failed",
            r.downloaded, r.skipped, r.failed
        );
        for e in manifest.entries().iter().filter(|e| e.error.is_some()) {
            eprintln!("warning: {}: {}", e.recording_id, e.error.as_deref().unwrap_or_default());
        }
    }
    manifest.save(&args.out)?;
    println!(
        "{} recordings for {} species written to {} ({} requests, {} dropped by the quality/background filter)",
        manifest.len(),
        manifest.species().len(),
        args.out.display(),
        outcome.requests,
        outcome.filtered_out
    );
    Ok(())
}

// ----------------------------------------------------------- build-store

#[derive(Debug, Args)]
pub struct BuildStoreArgs {
    /// TRAIN manifest with WAV paths.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Store file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpeciesFrames {
    pub species: String,
    pub recordings: usize,
    pub selected_frames: usize,
    pub total_frames: usize,
}

pub fn build_store(args: &BuildStoreArgs) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::resolve(&args.pipeline)?;
    let kind = *cfg.kind.get_or_insert(FeatureKind::Mode1d);
    cfg.validate()?;
    log_config("build-store", &cfg);
    let manifest = load_manifest(&args.manifest)?;
    let base = parent_dir(&args.manifest);

    let mut extractor = Extractor::new();
    let mut per_species: BTreeMap<String, (Vec<RecordingFrames>, usize)> = BTreeMap::new();
    for entry in manifest.entries() {
        if let Some(err) = &entry.error {
            eprintln!("warning: skipping {} ({}): {err}", entry.recording_id, entry.species);
            continue;
        }
        let path = wav_of(entry, &base)?;
        let clip = read_clip(&path)?;
        let (frames, mask) = extractor
            .training_frames(&clip)
            .map_err(|e| CliError::runtime(format!("{} ({})", path.display(), entry.species), e))?;
        let slot = per_species.entry(entry.species.clone()).or_default();
        slot.1 += mask.selected.len();
        slot.0.push(RecordingFrames {
            recording_id: entry.recording_id.clone(),
            frames,
        });
    }

    let table: Vec<SpeciesFrames> = per_species
        .iter()
        .map(|(s, (recs, total))| SpeciesFrames {
            species: s.clone(),
            recordings: recs.len(),
            selected_frames: recs.iter().map(|r| r.frames.len()).sum(),
            total_frames: *total,
        })
        .collect();
    println!("{}", report::frames_table(&table, cfg.instance_frames));

    let counts: BTreeMap<String, usize> = table.iter().map(|r| (r.species.clone(), r.selected_frames)).collect();
    let keep = min_frames_filter(&counts, cfg.min_frames.max(cfg.instance_frames));
    for row in table.iter().filter(|r| !keep.contains(&r.species)) {
        eprintln!(
            "warning: excluding {}: {} selected frames, need {}",
            row.species,
            row.selected_frames,
            cfg.min_frames.max(cfg.instance_frames)
        );
    }
    if keep.is_empty() {
        return Err(CliError::Runtime("no species has enough selected frames".into()));
    }

    let mut blocks = BTreeMap::new();
    for species in keep {
        let (recs, _) = &per_species[&species];
        let b = assemble_instances(recs, cfg.instance_frames).map_err(|e| CliError::runtime(&species, e))?;
        let v = blocks_to_vectors(&b, kind).map_err(|e| CliError::runtime(&species, e))?;
        blocks.insert(species, v);
    }
    let store = balance_subsample(blocks, cfg.balance_target, cfg.seed, kind, cfg.instance_frames)?;
    let bytes = store.to_bytes();
    fs::write(&args.out, &bytes).map_err(|e| CliError::runtime(args.out.display(), e))?;
    println!(
        "balance target: {} instances per class, {} classes, {} instances, {} bytes written to {}",
        store.instances_per_class(),
        store.n_classes(),
        store.total_instances(),
        bytes.len(),
        args.out.display()
    );
    Ok(())
}

// -------------------------------------------------------------- classify

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Training store.
    #[arg(long)]
    pub store: PathBuf,
    /// WAV recordings to identify.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Ranked labels printed per file.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Store, feature kind and classifier settings shared by query commands.
pub struct QuerySetup {
    pub cfg: PipelineConfig,
    pub store: TrainingStore,
    pub kind: FeatureKind,
    pub classifier: ClassifierConfig,
}

impl QuerySetup {
    pub fn new(pipeline: &PipelineArgs, store_path: &Path, verb: &str) -> Result<Self, CliError> {
        let mut cfg = PipelineConfig::resolve(pipeline)?;
        let store = load_store_file(store_path)?;
        let kind = match cfg.kind {
            Some(k) if k != store.kind() => {
                return Err(CliError::runtime(store_path.display(), KnnError::SpecMismatch(k, store.kind())))
            }
            _ => store.kind(),
        };
        cfg.kind = Some(kind);
        cfg.validate()?;
        let mut classifier = ClassifierConfig {
            k: cfg.k,
            metric: cfg.metric,
            tie_bias_m: cfg.tie_bias_m,
            candidate_classes: None,
        };
        if let Some(file) = &cfg.classes_file {
            let mut ids = Vec::new();
            for label in read_list(file, "classes")? {
                let id = store
                    .class_id(&label)
                    .ok_or_else(|| CliError::Usage(format!("class {label:?} in {} is not in the store", file.display())))?;
                ids.push(id);
            }
            classifier.candidate_classes = Some(ids);
        }
        let available = match &classifier.candidate_classes {
            Some(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids.dedup();
                ids.len() * store.instances_per_class()
            }
            None => store.total_instances(),
        };
        if cfg.k > available {
            return Err(CliError::Usage(format!("k = {} exceeds the {available} candidate instances", cfg.k)));
        }
        log_config(verb, &cfg);
        Ok(Self {
            cfg,
            store,
            kind,
            classifier,
        })
    }

    pub fn classify_clip(&self, extractor: &mut Extractor, clip: &AudioClip) -> Result<Posterior, CliError> {
        let q = extractor
            .query_vector(clip, self.kind)
            .map_err(|e| CliError::runtime(&clip.source_id, e))?;
        knn_classify(&q, &self.store, &self.classifier).map_err(|e| CliError::runtime(&clip.source_id, e))
    }

    pub fn label(&self, c: ClassId) -> &str {
        self.store.label(c).unwrap_or("?")
    }

    pub fn n_candidates(&self) -> usize {
        self.classifier.candidate_classes.as_ref().map_or(self.store.n_classes(), |c| {
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            c.len()
        })
    }
}

#[derive(Debug, Serialize)]
pub struct RankedLabel {
    pub rank: usize,
    pub label: String,
    pub prob: f64,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct ClassifyOutput {
    pub file: String,
    pub decision: Decision,
    pub entropy: f64,
    pub normalized_entropy: f64,
    pub ranking: Vec<RankedLabel>,
}

pub fn classify(args: &ClassifyArgs) -> Result<(), CliError> {
    let setup = QuerySetup::new(&args.pipeline, &args.store, "classify")?;
    let mut extractor = Extractor::new();
    let mut outputs = Vec::with_capacity(args.files.len());
    for path in &args.files {
        let clip = read_clip(path)?;
        let post = setup.classify_clip(&mut extractor, &clip)?;
        let decision = setup
            .cfg
            .entropy_max
            .map_or(Decision::Accept, |t| rejection_decision(&post, t));
        let ranking = post
            .ranking
            .iter()
            .take(args.top.max(1))
            .enumerate()
            .map(|(i, &c)| {
                let j = post.classes.binary_search(&c).expect("ranked class is a candidate");
                RankedLabel {
                    rank: i + 1,
                    label: setup.label(c).to_string(),
                    prob: post.probs[j],
                    score: post.biased_scores[j],
                }
            })
            .collect();
        outputs.push(ClassifyOutput {
            file: path.display().to_string(),
            decision,
            entropy: post.entropy,
            normalized_entropy: post.normalized_entropy,
            ranking,
        });
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&outputs)?);
    } else {
        for o in &outputs {
            print!("{}", report::classify_text(o, setup.cfg.entropy_max));
        }
    }
    Ok(())
}

// ---------------------------------------------------------- eval / sweep

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Training store.
    #[arg(long)]
    pub store: PathBuf,
    /// TEST manifest; each entry's species is its true label.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for CSV and JSON reports.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

/// Classify every usable TEST entry.
pub fn run_test_set(args: &EvalArgs, verb: &str) -> Result<(QuerySetup, Vec<LabeledResult>), CliError> {
    let setup = QuerySetup::new(&args.pipeline, &args.store, verb)?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.role != Role::Test {
        eprintln!("warning: {} is a {} manifest", args.manifest.display(), manifest.role);
    }
    let base = parent_dir(&args.manifest);
    let mut extractor = Extractor::new();
    let mut results = Vec::new();
    for entry in manifest.entries() {
        if let Some(err) = &entry.error {
            eprintln!("warning: skipping {}: {err}", entry.recording_id);
            continue;
        }
        let Some(true_class) = setup.store.class_id(&entry.species) else {
            eprintln!("warning: skipping {}: species {} is not in the store", entry.recording_id, entry.species);
            continue;
        };
        let clip = read_clip(&wav_of(entry, &base)?)?;
        let posterior = setup.classify_clip(&mut extractor, &clip)?;
        results.push(LabeledResult { true_class, posterior });
    }
    if results.is_empty() {
        return Err(CliError::Runtime("no test recording could be evaluated".into()));
    }
    Ok((setup, results))
}

fn report_for(setup: &QuerySetup, results: &[LabeledResult]) -> EvalReport {
    let classes: Vec<ClassId> = match &setup.classifier.candidate_classes {
        Some(c) => {
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
        None => setup.store.class_ids().collect(),
    };
    let r = evaluate(results, &classes, setup.n_candidates(), &setup.cfg.n_list);
    for c in r.degenerate_classes() {
        let pc = r.per_class.iter().find(|p| p.class == c).expect("listed class");
        eprintln!(
            "warning: degenerate class {}: {} positive test recordings, AUC undefined",
            setup.label(c),
            pc.n_test
        );
    }
    r
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (setup, results) = run_test_set(args, "eval")?;
    let r = report_for(&setup, &results);
    fs::create_dir_all(&args.out_dir)?;
    let labels = |c: ClassId| setup.label(c).to_string();
    report::write_eval_csv(&args.out_dir.join("eval.csv"), &r, labels)?;
    report::write_json(&args.out_dir.join("eval.json"), &report::eval_json(&setup.cfg, &setup.store, &r))?;
    report::write_topn_csv(&args.out_dir.join("topn.csv"), &r)?;
    print!("{}", report::eval_text(&r, labels));
    Ok(())
}

pub fn sweep(args: &EvalArgs) -> Result<(), CliError> {
    let (setup, results) = run_test_set(args, "sweep")?;
    let r = report_for(&setup, &results);
    fs::create_dir_all(&args.out_dir)?;
    report::write_sweep_csv(&args.out_dir.join("sweep.csv"), &r)?;
    report::write_topn_csv(&args.out_dir.join("topn.csv"), &r)?;
    print!("{}", report::sweep_text(&r));
    Ok(())
}

// ----------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives audio/, train.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of synthetic species, centred between 2 and 8 kHz.
    #[arg(long, default_value_t = 3)]
    pub species: usize,
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    /// Extra pure-noise TEST recordings, labelled round-robin.
    #[arg(long, default_value_t = 0)]
    pub noise_test: usize,
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 48000)]
    pub rate: u32,
    #[arg(long, default_value_t = 20.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub created_at: Option<String>,
}

/// Centre frequency of synthetic species `j` of `n`.
pub fn synth_center_hz(j: usize, n: usize) -> f64 {
    if n <= 1 {
        5000.0
    } else {
        2000.0 + 6000.0 * j as f64 / (n - 1) as f64
    }
}

pub fn synth_label(center_hz: f64) -> String {
    format!("Tonus hz{center_hz:.0}")
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.species == 0 || args.train == 0 {
        return Err(CliError::Usage("--species and --train must be positive".into()));
    }
    if !(args.seconds > 0.0 && args.seconds.is_finite()) || args.rate == 0 {
        return Err(CliError::Usage("--seconds and --rate must be positive".into()));
    }
    let audio = args.out_dir.join("audio");
    fs::create_dir_all(&audio)?;
    let created_at = args.created_at.clone().unwrap_or_else(now_rfc3339);
    let clip_seed = |role: u64, j: usize, i: usize| {
        args.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(role << 40)
            .wrapping_add((j as u64) << 20)
            .wrapping_add(i as u64)
    };
    let write = |id: String, species: &str, clip: &AudioClip| -> Result<RecordingMeta, CliError> {
        let rel = format!("audio/{id}.wav");
        fs::write(args.out_dir.join(&rel), encode_wav_pcm16(clip))?;
        Ok(RecordingMeta {
            recording_id: id,
            species: species.to_string(),
            duration_s: Some(clip.duration_s()),
            wav_path: Some(rel),
            ..Default::default()
        })
    };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let labels: Vec<String> = (0..args.species).map(|j| synth_label(synth_center_hz(j, args.species))).collect();
    for (j, label) in labels.iter().enumerate() {
        let fc = synth_center_hz(j, args.species);
        for i in 0..args.train {
            let clip = synth::species_clip(clip_seed(1, j, i), args.rate, args.seconds, fc, args.snr_db);
            train.push(write(format!("s{j:02}-train-{i:03}"), label, &clip)?);
        }
        for i in 0..args.test {
            let clip = synth::species_clip(clip_seed(2, j, i), args.rate, args.seconds, fc, args.snr_db);
            test.push(write(format!("s{j:02}-test-{i:03}"), label, &clip)?);
        }
    }
    for i in 0..args.noise_test {
        let clip = synth::noise_clip(clip_seed(3, 0, i), args.rate, args.seconds, args.snr_db);
        test.push(write(format!("zz-noise-{i:03}"), &labels[i % labels.len()], &clip)?);
    }
    let terms = QueryTerms {
        species: labels.clone(),
        ..Default::default()
    };
    Manifest::new(Role::Train, &created_at, terms.clone(), train)?.save(&args.out_dir.join("train.jsonl"))?;
    Manifest::new(Role::Test, &created_at, terms, test)?.save(&args.out_dir.join("test.jsonl"))?;
    println!(
        "{} species, {} train and {} test recordings written to {}",
        args.species,
        args.species * args.train,
        args.species * args.test + args.noise_test,
        args.out_dir.display()
    );
    Ok(())
}
