//! Experiment configuration.
//!
//! Every knob has a fixed default, so an empty JSON object is a complete,
//! reproducible experiment: 4 clients (1 malicious), 80 rounds with poisoning
//! from round 20, learning rate 0.01, batch size 5000, 5% poison rate,
//! trigger magnitude 1.0, and the prototype-consistency filter at alpha 0.5.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, AttackSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "defaults::class_count")]
        class_count: usize,
        #[serde(default = "defaults::train_per_class")]
        train_per_class: usize,
        #[serde(default = "defaults::test_per_class")]
        test_per_class: usize,
        #[serde(default = "defaults::feature_dim")]
        feature_dim: usize,
        #[serde(default = "defaults::cluster_spread")]
        cluster_spread: f64,
    },
    Cifar10 {
        /// Directory holding the binary batches; falls back to
        /// `$PROTOGUARD_DATA_DIR/cifar-10-batches-bin`.
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Bank {
        /// Semicolon-delimited CSV; falls back to
        /// `$PROTOGUARD_DATA_DIR/bank-full.csv`.
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            class_count: defaults::class_count(),
            train_per_class: defaults::train_per_class(),
            test_per_class: defaults::test_per_class(),
            feature_dim: defaults::feature_dim(),
            cluster_spread: defaults::cluster_spread(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub poison_rate: f64,
    pub trigger_magnitude: f64,
    pub target_class: usize,
    pub seed: u64,
    pub clean_label: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::EmbeddingAdditive,
            poison_rate: 0.05,
            trigger_magnitude: 1.0,
            target_class: 0,
            seed: 101,
            clean_label: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseConfig {
    None,
    Protoguard {
        #[serde(default = "defaults::alpha")]
        alpha: f64,
    },
    Dp {
        #[serde(default = "defaults::dp_sigma")]
        sigma: f64,
        #[serde(default = "defaults::dp_seed")]
        seed: u64,
    },
    Prune {
        #[serde(default = "defaults::prune_fraction")]
        fraction: f64,
    },
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig::Protoguard {
            alpha: defaults::alpha(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths of each client bottom model (4 layers total with the
    /// embedding layer).
    pub bottom_hidden: Vec<usize>,
    /// Hidden widths of the server top model (3 layers total with the
    /// classification head).
    pub top_hidden: Vec<usize>,
    /// Per-client embedding width.
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bottom_hidden: vec![128, 128, 128],
            top_hidden: vec![128, 128],
            embedding_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub client_count: usize,
    /// Which client runs the attack; `null` disables the attacker entirely.
    pub malicious_client: Option<usize>,
    pub rounds: usize,
    pub poison_start_round: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub model: ModelConfig,
    /// Explicit per-client column ranges; `null` means an equal contiguous
    /// split.
    pub partition_override: Option<Vec<(usize, usize)>>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub dump_consistency: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            client_count: 4,
            malicious_client: Some(0),
            rounds: 80,
            poison_start_round: 20,
            learning_rate: 0.01,
            batch_size: 5000,
            attack: AttackConfig::default(),
            defense: DefenseConfig::default(),
            model: ModelConfig::default(),
            partition_override: None,
            seed: 42,
            output_path: None,
            dump_consistency: false,
        }
    }
}

mod defaults {
    pub fn class_count() -> usize {
        10
    }
    pub fn train_per_class() -> usize {
        1000
    }
    pub fn test_per_class() -> usize {
        200
    }
    pub fn feature_dim() -> usize {
        32
    }
    pub fn cluster_spread() -> f64 {
        1.0
    }
    pub fn alpha() -> f64 {
        0.5
    }
    pub fn dp_sigma() -> f64 {
        0.1
    }
    pub fn dp_seed() -> u64 {
        202
    }
    pub fn prune_fraction() -> f64 {
        0.3
    }
}

impl ExperimentConfig {
    /// The runtime attack spec (the protocol-level start round lives on the
    /// experiment config, not the attack block).
    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.attack.kind,
            poison_rate: self.attack.poison_rate,
            trigger_magnitude: self.attack.trigger_magnitude,
            target_class: self.attack.target_class,
            start_round: self.poison_start_round,
            seed: self.attack.seed,
            clean_label: self.attack.clean_label,
        }
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Synthetic { class_count, .. } => Some(*class_count),
            DatasetConfig::Cifar10 { .. } => Some(10),
            DatasetConfig::Bank { .. } => Some(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.client_count < 2 {
            return Err(Error::config("client_count must be at least 2"));
        }
        if let Some(m) = self.malicious_client {
            if m >= self.client_count {
                return Err(Error::config(format!(
                    "malicious_client {} out of range for {} clients",
                    m, self.client_count
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if self.model.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be positive"));
        }
        if let Some(class_count) = self.class_count() {
            self.attack_spec().validate(class_count)?;
        }
        match &self.defense {
            DefenseConfig::Protoguard { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::config(format!(
                        "alpha must lie in (0, 1), got {}",
                        alpha
                    )));
                }
            }
            DefenseConfig::Dp { sigma, .. } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(Error::config("sigma must be finite and >= 0"));
                }
            }
            DefenseConfig::Prune { fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(Error::config(format!(
                        "prune fraction must lie in [0, 1], got {}",
                        fraction
                    )));
                }
            }
            DefenseConfig::None => {}
        }
        if let DatasetConfig::Synthetic {
            class_count,
            train_per_class,
            test_per_class,
            feature_dim,
            cluster_spread,
        } = &self.dataset
        {
            if *class_count < 2 || *train_per_class == 0 || *test_per_class == 0 {
                return Err(Error::config(
                    "synthetic dataset needs >= 2 classes and positive sample counts",
                ));
            }
            if *feature_dim < self.client_count {
                return Err(Error::config(format!(
                    "feature_dim {} cannot be split across {} clients",
                    feature_dim, self.client_count
                )));
            }
            if !cluster_spread.is_finite() || *cluster_spread < 0.0 {
                return Err(Error::config("cluster_spread must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_protocol_settings() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.client_count, 4);
        assert_eq!(cfg.malicious_client, Some(0));
        assert_eq!(cfg.rounds, 80);
        assert_eq!(cfg.poison_start_round, 20);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.batch_size, 5000);
        assert_eq!(cfg.attack.poison_rate, 0.05);
        assert_eq!(cfg.attack.trigger_magnitude, 1.0);
        assert_eq!(cfg.defense, DefenseConfig::Protoguard { alpha: 0.5 });
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_json_object_is_a_full_config() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_attack_kind_names_the_tag() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"attack": {"kind": "teleport"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("teleport"), "{}", err);
    }

    #[test]
    fn unknown_defense_kind_names_the_tag() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"defense": {"kind": "wormhole"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("wormhole"), "{}", err);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_rejects_bad_alpha_and_rates() {
        let cfg = ExperimentConfig {
            defense: DefenseConfig::Protoguard { alpha: 1.0 },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.attack.poison_rate = 1.5;
        assert!(cfg.validate().is_err());

        let cfg = ExperimentConfig {
            malicious_client: Some(9),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
