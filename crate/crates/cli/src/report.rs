//! CSV, JSON and plain-text renderings of results.

use std::fmt::Write as _;
use std::path::Path;

use chorus_core::eval::EvalReport;
use chorus_core::knn::Decision;
use chorus_core::trainstore::{ClassId, TrainingStore};
use serde::Serialize;

use crate::commands::{ClassifyOutput, SpeciesFrames};
use crate::config::PipelineConfig;
use crate::CliError;

pub const EVAL_COLUMNS: [&str; 4] = ["species", "n_test", "auc_roc", "auc_pr"];
pub const SWEEP_COLUMNS: [&str; 5] = [
    "raw_threshold",
    "normalized_threshold",
    "accepted_fraction",
    "mrr_at_10",
    "accuracy_at_1",
];
pub const TOPN_COLUMNS: [&str; 3] = ["n", "accuracy", "mrr"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_eval_csv(path: &Path, r: &EvalReport, label: impl Fn(ClassId) -> String) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_COLUMNS)?;
    for c in &r.per_class {
        w.write_record([label(c.class), c.n_test.to_string(), opt(c.auc_roc), opt(c.auc_pr)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, r: &EvalReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for p in &r.rejection_curve {
        w.write_record([
            p.raw_threshold.to_string(),
            p.normalized_threshold.to_string(),
            p.accepted_fraction.to_string(),
            opt(p.mrr_at_10),
            opt(p.accuracy_at_1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_topn_csv(path: &Path, r: &EvalReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TOPN_COLUMNS)?;
    for (n, acc) in &r.accuracy_at {
        w.write_record([n.to_string(), acc.to_string(), r.mrr_at[n].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct ClassRow<'a> {
    species: &'a str,
    n_test: usize,
    auc_roc: Option<f64>,
    auc_pr: Option<f64>,
}

/// The report with class labels spelled out, plus the configuration.
pub fn eval_json(cfg: &PipelineConfig, store: &TrainingStore, r: &EvalReport) -> serde_json::Value {
    let per_class: Vec<ClassRow> = r
        .per_class
        .iter()
        .map(|c| ClassRow {
            species: store.label(c.class).unwrap_or("?"),
            n_test: c.n_test,
            auc_roc: c.auc_roc,
            auc_pr: c.auc_pr,
        })
        .collect();
    serde_json::json!({
        "config": cfg,
        "n_results": r.n_results,
        "n_candidates": r.n_candidates,
        "per_class": per_class,
        "auc_roc_summary": r.auc_roc_summary,
        "auc_pr_summary": r.auc_pr_summary,
        "accuracy": r.accuracy,
        "accuracy_at": r.accuracy_at,
        "mrr_at": r.mrr_at,
        "rejection_curve": r.rejection_curve,
    })
}

pub fn frames_table(rows: &[SpeciesFrames], instance_frames: usize) -> String {
    let width = rows.iter().map(|r| r.species.len()).max().unwrap_or(7).max(7);
    let mut s = format!(
        "{:<width$}  {:>10}  {:>12}  {:>15}  {:>9}\n",
        "species", "recordings", "total_frames", "selected_frames", "instances"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>10}  {:>12}  {:>15}  {:>9}",
            r.species,
            r.recordings,
            r.total_frames,
            r.selected_frames,
            r.selected_frames / instance_frames
        );
    }
    s.pop();
    s
}

pub fn classify_text(o: &ClassifyOutput, entropy_max: Option<f64>) -> String {
    let mut s = format!("{}\n", o.file);
    if o.decision == Decision::Reject {
        let _ = writeln!(
            s,
            "  REJECTED  normalized entropy {:.3} > {:.3}",
            o.normalized_entropy,
            entropy_max.unwrap_or(f64::NAN)
        );
        return s;
    }
    for r in &o.ranking {
        let _ = writeln!(s, "  {:>2}. {:<32} {:.3}", r.rank, r.label, r.prob);
    }
    let _ = writeln!(
        s,
        "  entropy {:.3} nats, normalized {:.3}",
        o.entropy, o.normalized_entropy
    );
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

pub fn eval_text(r: &EvalReport, label: impl Fn(ClassId) -> String) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} test recordings, {} candidate classes", r.n_results, r.n_candidates);
    for c in &r.per_class {
        let _ = writeln!(
            s,
            "  {:<32} n_test {:>4}  auc_roc {}  auc_pr {}",
            label(c.class),
            c.n_test,
            fmt_opt(c.auc_roc),
            fmt_opt(c.auc_pr)
        );
    }
    for (name, summary) in [("AUC-ROC", r.auc_roc_summary), ("AUC-PR", r.auc_pr_summary)] {
        if let Some(m) = summary {
            let _ = writeln!(
                s,
                "{name}: weighted mean {:.4}, median {:.4}, IQR {:.4}, range {:.4}..{:.4}",
                m.weighted_mean, m.median, m.iqr, m.min, m.max
            );
        }
    }
    let _ = writeln!(s, "accuracy {:.4}", r.accuracy);
    s.push_str(&topn_text(r));
    s
}

fn topn_text(r: &EvalReport) -> String {
    let mut s = String::from("   N  accuracy@N     MRR@N\n");
    for (n, acc) in &r.accuracy_at {
        let _ = writeln!(s, "{n:>4}  {acc:>10.4}  {:>8.4}", r.mrr_at[n]);
    }
    s
}

pub fn sweep_text(r: &EvalReport) -> String {
    let mut s = String::from("raw_thr  norm_thr  accepted  MRR@10  acc@1\n");
    for p in &r.rejection_curve {
        let _ = writeln!(
            s,
            "{:>7.2}  {:>8.3}  {:>8.3}  {:>6}  {:>5}",
            p.raw_threshold,
            p.normalized_threshold,
            p.accepted_fraction,
            p.mrr_at_10.map_or("-".into(), |v| format!("{v:.3}")),
            p.accuracy_at_1.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    s.push_str(&topn_text(r));
    s
}
