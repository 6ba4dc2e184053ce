//! Pipeline configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use chorus_core::features::FeatureKind;
use chorus_core::knn::{Metric, DEFAULT_TIE_BIAS_M};
use chorus_core::trainstore::DEFAULT_INSTANCE_FRAMES;
use chorus_ingest::ArchiveConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Feature representation. Unset means mode1d when building a store and
    /// the store's own kind when querying one.
    pub kind: Option<FeatureKind>,
    pub k: usize,
    pub metric: Metric,
    pub tie_bias_m: f64,
    pub instance_frames: usize,
    /// Instances per class; unset means the smallest class.
    pub balance_target: Option<usize>,
    /// Species with fewer selected training frames are excluded.
    pub min_frames: usize,
    pub seed: u64,
    /// One label per line restricting the candidate classes.
    pub classes_file: Option<PathBuf>,
    /// Maximum accepted normalised entropy.
    pub entropy_max: Option<f64>,
    pub n_list: Vec<usize>,
    pub archive: ArchiveConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kind: None,
            k: 5,
            metric: Metric::L1,
            tie_bias_m: DEFAULT_TIE_BIAS_M,
            instance_frames: DEFAULT_INSTANCE_FRAMES,
            balance_target: None,
            min_frames: 0,
            seed: 0,
            classes_file: None,
            entropy_max: None,
            n_list: vec![1, 5, 10],
            archive: ArchiveConfig::default(),
        }
    }
}

/// Flags shared by the pipeline commands. Each one overrides the file.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// meanstd2d, mode1d, modedelta2d or summary6.
    #[arg(long)]
    pub kind: Option<FeatureKind>,
    /// Voting neighbours.
    #[arg(long)]
    pub k: Option<usize>,
    /// l1, kl or hellinger.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Tie-bias divisor M (> 1).
    #[arg(long)]
    pub tie_bias_m: Option<f64>,
    #[arg(long)]
    pub instance_frames: Option<usize>,
    #[arg(long)]
    pub balance_target: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidate-class file, one label per line.
    #[arg(long = "classes", value_name = "FILE")]
    pub classes_file: Option<PathBuf>,
    /// Reject when normalised entropy exceeds this value.
    #[arg(long)]
    pub entropy_max: Option<f64>,
    /// Comma-separated N values for accuracy@N and MRR@N.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &PipelineArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => Self::from_toml_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = args.kind {
            cfg.kind = Some(v);
        }
        if let Some(v) = args.k {
            cfg.k = v;
        }
        if let Some(v) = args.metric {
            cfg.metric = v;
        }
        if let Some(v) = args.tie_bias_m {
            cfg.tie_bias_m = v;
        }
        if let Some(v) = args.instance_frames {
            cfg.instance_frames = v;
        }
        if let Some(v) = args.balance_target {
            cfg.balance_target = Some(v);
        }
        if let Some(v) = args.min_frames {
            cfg.min_frames = v;
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = &args.classes_file {
            cfg.classes_file = Some(v.clone());
        }
        if let Some(v) = args.entropy_max {
            cfg.entropy_max = Some(v);
        }
        if let Some(v) = &args.n_list {
            cfg.n_list = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.tie_bias_m > 1.0 && self.tie_bias_m.is_finite()) {
            return bad(format!("tie_bias_m must be finite and > 1, got {}", self.tie_bias_m));
        }
        if self.instance_frames == 0 {
            return bad("instance_frames must be at least 1".into());
        }
        if self.balance_target == Some(0) {
            return bad("balance_target must be at least 1".into());
        }
        if let Some(t) = self.entropy_max {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("entropy_max is a normalised entropy in [0, 1], got {t}"));
            }
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list needs at least one value, all >= 1".into());
        }
        if self.kind == Some(FeatureKind::Summary6) && self.metric != Metric::L1 {
            return bad(format!("summary6 features support only the l1 metric, not {}", self.metric));
        }
        Ok(())
    }

    /// The configuration as TOML, for logs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unserialisable configuration: {e}\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "k = 7\nmetric = \"hellinger\"\nkind = \"meanstd2d\"\nn_list = [1, 2]\n").unwrap();
        let args = PipelineArgs {
            config: Some(path),
            k: Some(3),
            ..Default::default()
        };
        let cfg = PipelineConfig::resolve(&args).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.metric, Metric::Hellinger);
        assert_eq!(cfg.kind, Some(FeatureKind::MeanStd2d));
        assert_eq!(cfg.n_list, [1, 2]);
    }

    #[test]
    fn logged_config_reloads_identically() {
        let cfg = PipelineConfig {
            kind: Some(FeatureKind::ModeDelta2d),
            balance_target: Some(9),
            entropy_max: Some(0.4),
            ..Default::default()
        };
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for args in [
            PipelineArgs { k: Some(0), ..Default::default() },
            PipelineArgs { tie_bias_m: Some(1.0), ..Default::default() },
            PipelineArgs { entropy_max: Some(1.5), ..Default::default() },
            PipelineArgs { n_list: Some(vec![]), ..Default::default() },
            PipelineArgs { kind: Some(FeatureKind::Summary6), metric: Some(Metric::Kl), ..Default::default() },
        ] {
            assert!(matches!(PipelineConfig::resolve(&args), Err(CliError::Usage(_))), "{args:?}");
        }
        let missing = PipelineArgs { config: Some("/nonexistent/c.toml".into()), ..Default::default() };
        assert!(matches!(PipelineConfig::resolve(&missing), Err(CliError::Usage(_))));
    }
}
