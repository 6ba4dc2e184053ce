//! Command-line contract: verbs, exit codes, output files.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use chorus_core::dsp::{decode_wav, encode_wav_pcm16, AudioClip};
use chorus_core::synth;

fn chorus() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chorus"))
}

fn ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd.get_args().collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three synthetic species with a store built from them, shared by all tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }
}

fn fixture() -> &'static Fixture {
    static FX: OnceLock<Fixture> = OnceLock::new();
    FX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(chorus().args(["synth", "--out-dir"]).arg(&root).args([
            "--species", "3", "--train", "6", "--test", "3", "--seconds", "2", "--seed", "5",
            "--created-at", "2024-01-01T00:00:00Z",
        ]));
        ok(chorus()
            .args(["build-store", "--manifest"])
            .arg(root.join("train.jsonl"))
            .arg("--out")
            .arg(root.join("store.chor")));
        Fixture { _dir: dir, root }
    })
}

#[test]
fn missing_species_file_is_usage_error() {
    let out = chorus()
        .args(["ingest", "--species-file", "/nonexistent/species.txt", "--dry-run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("species"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = chorus().args(["classify", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dry_run_plans_without_network() {
    let dir = tempfile::tempdir().unwrap();
    let species = dir.path().join("s.txt");
    std::fs::write(&species, "# comment\nTurdus merula\n\nParus major\n").unwrap();
    let out = ok(chorus()
        .args(["ingest", "--dry-run", "--quality", "A", "--background", "none", "--species-file"])
        .arg(&species)
        // An unroutable base URL proves nothing is contacted.
        .env("CHORUS_ARCHIVE_URL", "http://127.0.0.1:9/api"));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("GET ")).count(), 2);
    assert!(text.contains("gen:Turdus sp:merula q:A"));
    assert!(text.contains("no requests sent"));
}

#[test]
fn non_binomial_species_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let species = dir.path().join("s.txt");
    std::fs::write(&species, "Turdus\n").unwrap();
    let out = chorus().args(["ingest", "--dry-run", "--species-file"]).arg(&species).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_writes_filtered_manifest_from_stub_archive() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
                    break;
                }
            }
            let body = r#"{"numPages":1,"recordings":[
                {"id":"11","q":"A","also":[],"length":"0:20","file":"http://x/11.mp3"},
                {"id":"12","q":"C","also":[],"length":"0:20","file":"http://x/12.mp3"},
                {"id":"13","q":"A","also":["Parus major"],"length":"0:20","file":"http://x/13.mp3"}]}"#;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let species = dir.path().join("s.txt");
    std::fs::write(&species, "Turdus merula\n").unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[archive]\nmin_interval = 0\n").unwrap();
    let out_path = dir.path().join("m.jsonl");
    let out = ok(chorus()
        .args(["ingest", "--created-at", "2024-02-02T00:00:00Z", "--species-file"])
        .arg(&species)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .env("CHORUS_ARCHIVE_URL", format!("{base}/api/3")));
    assert!(stdout(&out).contains("1 recordings"));
    let m = chorus_ingest::Manifest::load(&out_path).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.entries()[0].recording_id, "11");
    assert_eq!(m.created_at, "2024-02-02T00:00:00Z");
}

#[test]
fn build_store_reports_frames_and_is_deterministic() {
    let fx = fixture();
    let again = fx.path("store-again.chor");
    let out = ok(chorus()
        .args(["build-store", "--manifest"])
        .arg(fx.path("train.jsonl"))
        .arg("--out")
        .arg(&again));
    let text = stdout(&out);
    assert!(text.contains("selected_frames"));
    for s in ["Tonus hz2000", "Tonus hz5000", "Tonus hz8000"] {
        assert!(text.contains(s), "{text}");
    }
    assert!(text.contains("balance target"));
    assert!(stderr(&out).contains("resolved configuration"));
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(fx.path("store.chor")).unwrap());

    let store = chorus_core::trainstore::TrainingStore::from_bytes(&std::fs::read(&again).unwrap()).unwrap();
    assert_eq!(store.n_classes(), 3);
    let counts: Vec<usize> = store.class_ids().map(|c| store.instances(c).len()).collect();
    assert!(counts.iter().all(|&n| n == counts[0] && n > 0));
}

#[test]
fn logged_config_reproduces_store() {
    let fx = fixture();
    let a = fx.path("store-a.chor");
    let out = ok(chorus()
        .args(["build-store", "--kind", "meanstd2d", "--seed", "3", "--instance-frames", "50", "--manifest"])
        .arg(fx.path("train.jsonl"))
        .arg("--out")
        .arg(&a));
    let log = stderr(&out);
    let toml_text: String = log
        .lines()
        .skip_while(|l| !l.contains("resolved configuration"))
        .skip(1)
        .take_while(|l| !l.starts_with("# end configuration"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = fx.path("logged.toml");
    std::fs::write(&cfg, toml_text).unwrap();
    let b = fx.path("store-b.chor");
    ok(chorus()
        .args(["build-store", "--manifest"])
        .arg(fx.path("train.jsonl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&b));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn species_with_too_few_frames_is_excluded() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let short = synth::species_clip(1, 48000, 0.4, 3000.0, 20.0);
    let wav = dir.path().join("short.wav");
    std::fs::write(&wav, encode_wav_pcm16(&short)).unwrap();
    let mut text = std::fs::read_to_string(fx.path("train.jsonl")).unwrap();
    text = text.replace("\"wav_path\":\"audio/", &format!("\"wav_path\":\"{}/audio/", fx.root.display()));
    text.push_str(&format!(
        "{{\"recording_id\":\"zz-short\",\"species\":\"Rara avis\",\"wav_path\":\"{}\"}}\n",
        wav.display()
    ));
    let manifest = dir.path().join("train.jsonl");
    std::fs::write(&manifest, text).unwrap();
    let out = ok(chorus()
        .args(["build-store", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("s.chor")));
    assert!(stderr(&out).contains("excluding Rara avis"), "{}", stderr(&out));
    assert!(stdout(&out).contains("3 classes"));
}

/// All training audio of one species, back to back.
fn concatenated(fx: &Fixture, species_prefix: &str) -> PathBuf {
    let mut samples = Vec::new();
    for i in 0..6 {
        let p = fx.path(&format!("audio/{species_prefix}-train-{i:03}.wav"));
        samples.extend(decode_wav(&std::fs::read(p).unwrap(), "t").unwrap().samples);
    }
    let out = fx.path(&format!("{species_prefix}-all.wav"));
    std::fs::write(&out, encode_wav_pcm16(&AudioClip::new(samples, 48000, "all"))).unwrap();
    out
}

#[test]
fn classify_ranks_source_class_first() {
    let fx = fixture();
    let q = concatenated(fx, "s01");
    let out = ok(chorus().args(["classify", "--json", "--store"]).arg(fx.path("store.chor")).arg(&q));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v[0]["ranking"][0]["label"], "Tonus hz5000");
    assert_eq!(v[0]["decision"], "ACCEPT");
    assert_eq!(v[0]["ranking"].as_array().unwrap().len(), 3);
}

#[test]
fn high_entropy_result_is_rejected_with_exit_zero() {
    let fx = fixture();
    let store = chorus_core::trainstore::TrainingStore::from_bytes(&std::fs::read(fx.path("store.chor")).unwrap()).unwrap();
    // With k equal to the whole store every class gets the same vote share.
    let k = store.total_instances().to_string();
    let out = ok(chorus()
        .args(["classify", "--entropy-max", "0.4", "--k", &k, "--store"])
        .arg(fx.path("store.chor"))
        .arg(fx.path("audio/s00-test-000.wav")));
    assert!(stdout(&out).contains("REJECTED"), "{}", stdout(&out));
}

#[test]
fn classes_file_restricts_output() {
    let fx = fixture();
    let classes = fx.path("subset.txt");
    std::fs::write(&classes, "Tonus hz2000\nTonus hz8000\n").unwrap();
    let out = ok(chorus()
        .args(["classify", "--json", "--classes"])
        .arg(&classes)
        .arg("--store")
        .arg(fx.path("store.chor"))
        .arg(fx.path("audio/s01-test-000.wav")));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let labels: Vec<&str> = v[0]["ranking"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels.len(), 2);
    assert!(labels.iter().all(|l| *l == "Tonus hz2000" || *l == "Tonus hz8000"));

    std::fs::write(&classes, "Tonus hz1234\n").unwrap();
    let bad = chorus()
        .args(["classify", "--classes"])
        .arg(&classes)
        .arg("--store")
        .arg(fx.path("store.chor"))
        .arg(fx.path("audio/s01-test-000.wav"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn feature_kind_mismatch_is_runtime_error() {
    let fx = fixture();
    let out = chorus()
        .args(["classify", "--kind", "summary6", "--store"])
        .arg(fx.path("store.chor"))
        .arg(fx.path("audio/s01-test-000.wav"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mismatch") || stderr(&out).contains("kind"), "{}", stderr(&out));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![header];
    rows.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn eval_writes_reports() {
    let fx = fixture();
    let dir = fx.path("eval-out");
    let out = ok(chorus()
        .args(["eval", "--n-list", "1,5,10", "--store"])
        .arg(fx.path("store.chor"))
        .arg("--manifest")
        .arg(fx.path("test.jsonl"))
        .arg("--out-dir")
        .arg(&dir));
    assert!(stdout(&out).contains("weighted mean"));
    let rows = csv_rows(&dir.join("eval.csv"));
    assert_eq!(rows[0], ["species", "n_test", "auc_roc", "auc_pr"]);
    assert_eq!(rows.len(), 4);
    let topn = csv_rows(&dir.join("topn.csv"));
    assert_eq!(topn.len(), 4, "three accuracy@N rows plus header");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(json["auc_roc_summary"]["weighted_mean"], 1.0);
    assert_eq!(json["per_class"][0]["species"], "Tonus hz2000");
}

#[test]
fn sweep_grid_has_expected_rows() {
    let fx = fixture();
    let dir = fx.path("sweep-out");
    ok(chorus()
        .args(["sweep", "--store"])
        .arg(fx.path("store.chor"))
        .arg("--manifest")
        .arg(fx.path("test.jsonl"))
        .arg("--out-dir")
        .arg(&dir));
    let rows = csv_rows(&dir.join("sweep.csv"));
    assert_eq!(
        rows[0],
        ["raw_threshold", "normalized_threshold", "accepted_fraction", "mrr_at_10", "accuracy_at_1"]
    );
    let expected = ((3f64).ln() / 0.1).floor() as usize + 2;
    assert_eq!(rows.len() - 1, expected);
    let last: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!(last >= (3f64).ln());
}

#[test]
fn missing_store_is_usage_error() {
    let out = chorus()
        .args(["classify", "--store", "/nonexistent/s.chor", "/nonexistent/a.wav"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_store_is_runtime_error() {
    let fx = fixture();
    let mut bytes = std::fs::read(fx.path("store.chor")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = fx.path("corrupt.chor");
    std::fs::write(&bad, bytes).unwrap();
    let out = chorus()
        .args(["classify", "--store"])
        .arg(&bad)
        .arg(fx.path("audio/s01-test-000.wav"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
