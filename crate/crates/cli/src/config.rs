//! Declarative experiment description, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use regent_core::agents::InterpConfig;
use regent_core::envs::{EnvFamily, EnvOverrides};
use regent_model::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory, relative to the working directory.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Retrieved neighbors per context.
    #[serde(default = "default_n")]
    pub n: usize,
    pub pretrain: Vec<PretrainSet>,
    #[serde(default)]
    pub heldout: Vec<HeldoutTier>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub interp: InterpConfig,
    pub bound: Option<BoundSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_n() -> usize {
    9
}

/// Levels of one family used for pretraining; each level is its own
/// training environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSet {
    pub family: EnvFamily,
    pub levels: Vec<u64>,
    pub demos_per_level: usize,
    /// Demos per level designated for retrieval; all when absent.
    pub retrieval_demos: Option<usize>,
    #[serde(default)]
    pub overrides: EnvOverrides,
}

/// Evaluation environments never seen in pretraining: new levels, or a
/// family variant given through `overrides`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldoutTier {
    pub name: String,
    pub family: EnvFamily,
    pub levels: Vec<u64>,
    #[serde(default)]
    pub sticky_p: f64,
    #[serde(default)]
    pub overrides: EnvOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Demonstration counts of the sweep; the held-out demos are nested
    /// prefixes of one recording of the largest count.
    pub demo_counts: Vec<usize>,
    pub episodes: usize,
    pub policies: Vec<PolicyKind>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            demo_counts: vec![1, 2, 5, 10, 20],
            episodes: 50,
            policies: vec![PolicyKind::Rnp, PolicyKind::Regent, PolicyKind::RegentFinetuned],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rnp,
    Regent,
    RegentFinetuned,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rnp => "rnp",
            PolicyKind::Regent => "regent",
            PolicyKind::RegentFinetuned => "regent_finetuned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { n_layers: 2, n_heads: 2, hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub family: EnvFamily,
    pub level_seed: u64,
    pub demo_counts: Vec<usize>,
    pub episodes: usize,
    #[serde(default)]
    pub overrides: EnvOverrides,
    /// Extra sticky-action probability to report (never asserted).
    pub sticky_p: Option<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(invalid("n must be positive"));
        }
        if self.pretrain.is_empty() {
            return Err(invalid("at least one [[pretrain]] set is required"));
        }
        let mut train_levels: Vec<(EnvFamily, u64)> = Vec::new();
        for set in &self.pretrain {
            if set.levels.is_empty() || set.demos_per_level < 2 {
                return Err(invalid("pretrain sets need levels and at least 2 demos per level"));
            }
            if let Some(r) = set.retrieval_demos {
                if r == 0 || r > set.demos_per_level {
                    return Err(invalid(format!("retrieval_demos {r} outside 1..={}", set.demos_per_level)));
                }
            }
            for &l in &set.levels {
                if train_levels.contains(&(set.family, l)) {
                    return Err(invalid(format!(
                        "{} level {l} listed twice for pretraining",
                        set.family.name()
                    )));
                }
                train_levels.push((set.family, l));
            }
        }
        let mut names = BTreeSet::new();
        for tier in &self.heldout {
            if !names.insert(tier.name.as_str()) {
                return Err(invalid(format!("duplicate held-out tier `{}`", tier.name)));
            }
            if tier.levels.is_empty() {
                return Err(invalid(format!("held-out tier `{}` has no levels", tier.name)));
            }
            if !(0.0..1.0).contains(&tier.sticky_p) {
                return Err(invalid(format!("tier `{}`: sticky_p outside [0, 1)", tier.name)));
            }
            for &l in &tier.levels {
                if train_levels.contains(&(tier.family, l)) {
                    return Err(invalid(format!(
                        "held-out tier `{}` reuses pretraining {} level {l}",
                        tier.name,
                        tier.family.name()
                    )));
                }
            }
        }
        let counts = &self.eval.demo_counts;
        if counts.is_empty() || counts.contains(&0) {
            return Err(invalid("eval.demo_counts must be non-empty and positive (retrieval needs demos)"));
        }
        if counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("eval.demo_counts must be strictly increasing"));
        }
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes must be positive"));
        }
        if self.eval.policies.is_empty() {
            return Err(invalid("eval.policies must name at least one policy"));
        }
        let m = self.model;
        if m.n_layers == 0 || m.n_heads == 0 || m.hidden == 0 || !m.hidden.is_multiple_of(m.n_heads) {
            return Err(invalid("model needs positive sizes with hidden divisible by n_heads"));
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.interp.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(b) = &self.bound {
            if b.demo_counts.is_empty()
                || b.demo_counts.contains(&0)
                || b.demo_counts.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(invalid("bound.demo_counts must be positive and strictly increasing"));
            }
            if b.episodes < 2 {
                return Err(invalid("bound.episodes must be at least 2"));
            }
            if b.sticky_p.is_some_and(|p| !(0.0..1.0).contains(&p)) {
                return Err(invalid("bound.sticky_p outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output directory blanked, so
    /// identical experiments hash equally wherever they are written.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[pretrain]]
        family = "gridworld"
        levels = [0, 1]
        demos_per_level = 3
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.n, 9);
        assert_eq!(c.model.hidden, 64);
        assert_eq!(c.eval.demo_counts, vec![1, 2, 5, 10, 20]);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nepochs = 3\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Validation(_))));
        let text = MINIMAL.replace("demos_per_level", "demos_per_levle");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn overlapping_levels_are_rejected() {
        let text =
            format!("{MINIMAL}\n[[heldout]]\nname = \"levels\"\nfamily = \"gridworld\"\nlevels = [1, 9]\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("reuses pretraining"));
        // another family may use the same seeds
        let text = format!("{MINIMAL}\n[[heldout]]\nname = \"pm\"\nfamily = \"pointmass\"\nlevels = [1]\n");
        ExperimentConfig::from_toml(&text).unwrap();
    }

    #[test]
    fn zero_demo_sweep_is_rejected() {
        let text = format!("{MINIMAL}\n[eval]\ndemo_counts = [0, 2]\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
