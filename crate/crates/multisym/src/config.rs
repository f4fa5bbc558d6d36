//! Experiment configuration: one JSON document drives every pipeline stage.
//!
//! All seeds are derived deterministically from a single master seed, so a
//! whole experiment is reproducible from `(config, seed)` alone.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{AugmentConfig, DatasetSpec};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::model::{ArchSpec, ClassifierMode, Hypothesis, TrainConfig};

/// One pretraining member of the pool.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolMemberSpec {
    pub hypothesis: Hypothesis,
    pub group: GroupId,
    pub seed: u64,
}

impl PoolMemberSpec {
    /// Stable identifier used for checkpoints and registry entries.
    pub fn model_id(&self) -> String {
        let hyp = match self.hypothesis {
            Hypothesis::Equivariant => "eq",
            Hypothesis::Invariant => "inv",
        };
        format!("{hyp}-{}-s{}", self.group.name(), self.seed)
    }
}

/// Everything a full experiment needs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    /// Master seed; all stage seeds derive from it.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
    pub augment: AugmentConfig,
    pub arch: ArchSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub probe: TrainConfig,
    pub classifier_mode: ClassifierMode,
    pub pool: Vec<PoolMemberSpec>,
    /// Ensemble sizes reported in the tables.
    pub ensemble_sizes: Vec<usize>,
    /// Number of selection seeds for the random strategy (mean ± std).
    pub random_repeats: usize,
    /// Member count of the diversity comparison sets.
    pub diversity_members: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_seed(1)
    }
}

impl ExperimentConfig {
    /// The default desk-scale experiment derived from one master seed:
    /// a 10-class 16x16 dataset with half symmetric classes, and a pool of
    /// five equivariant plus five invariant quarter-turn members.
    pub fn for_seed(seed: u64) -> Self {
        let base = seed.wrapping_mul(10_007);
        let mut pool = Vec::new();
        for i in 0..5u64 {
            pool.push(PoolMemberSpec {
                hypothesis: Hypothesis::Equivariant,
                group: GroupId::Rot4,
                seed: base.wrapping_add(100 + i),
            });
        }
        for i in 0..5u64 {
            pool.push(PoolMemberSpec {
                hypothesis: Hypothesis::Invariant,
                group: GroupId::Rot4,
                seed: base.wrapping_add(200 + i),
            });
        }
        Self {
            seed,
            dataset: DatasetSpec {
                seed: base.wrapping_add(1),
                ..DatasetSpec::default()
            },
            split_fractions: (5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0),
            split_seed: base.wrapping_add(2),
            augment: AugmentConfig::default(),
            arch: ArchSpec::default_for(256),
            pretrain: TrainConfig {
                epochs: 50,
                batch_size: 128,
                lr: 0.1,
                temperature: 0.5,
                lambda: 0.4,
                momentum: 0.9,
                seed: 0, // per-member seeds come from the pool
            },
            finetune: TrainConfig {
                epochs: 15,
                batch_size: 128,
                lr: 0.01,
                temperature: 0.5,
                lambda: 0.0,
                momentum: 0.9,
                seed: 0,
            },
            probe: TrainConfig {
                epochs: 30,
                batch_size: 256,
                lr: 0.5,
                temperature: 0.5,
                lambda: 0.0,
                momentum: 0.9,
                seed: base.wrapping_add(3),
            },
            classifier_mode: ClassifierMode::FineTune,
            pool,
            ensemble_sizes: vec![1, 2, 3, 4, 5],
            random_repeats: 3,
            diversity_members: 4,
        }
    }

    /// Adds a 2 equivariant + 2 invariant subpool for each extra group,
    /// mirroring the multi-group ablation.
    pub fn with_extra_groups(mut self) -> Self {
        let base = self.seed.wrapping_mul(10_007);
        for (offset, group) in [(300u64, GroupId::HalfSwap), (400u64, GroupId::ColorInvert)] {
            for i in 0..2u64 {
                self.pool.push(PoolMemberSpec {
                    hypothesis: Hypothesis::Equivariant,
                    group,
                    seed: base.wrapping_add(offset + i),
                });
            }
            for i in 0..2u64 {
                self.pool.push(PoolMemberSpec {
                    hypothesis: Hypothesis::Invariant,
                    group,
                    seed: base.wrapping_add(offset + 50 + i),
                });
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.probe.validate()?;
        if self.pool.is_empty() {
            return Err(Error::InvalidArgument("pool must not be empty".into()));
        }
        let mut seeds: Vec<u64> = self.pool.iter().map(|m| m.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.pool.len() {
            return Err(Error::InvalidArgument(
                "pool member seeds must be distinct".into(),
            ));
        }
        let mut ids: Vec<String> = self.pool.iter().map(|m| m.model_id()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.pool.len() {
            return Err(Error::InvalidArgument(
                "pool member ids must be distinct".into(),
            ));
        }
        if self.ensemble_sizes.is_empty() || self.ensemble_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(
                "ensemble sizes must be positive".into(),
            ));
        }
        if self.random_repeats == 0 {
            return Err(Error::InvalidArgument(
                "random repeats must be positive".into(),
            ));
        }
        let expected_input = self.dataset.channels * self.dataset.side * self.dataset.side;
        if self.arch.input_dim != expected_input {
            return Err(Error::DimensionMismatch(format!(
                "architecture input {} does not match dataset {}x{}x{} = {}",
                self.arch.input_dim,
                self.dataset.channels,
                self.dataset.side,
                self.dataset.side,
                expected_input
            )));
        }
        Ok(())
    }

    /// Reads and validates a JSON config.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: Self = serde_json::from_str(&raw).map_err(|e| Error::Format {
            path: path.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("config serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// SHA-256 of the canonical JSON encoding; recorded in provenance
    /// sidecars so every emitted number can be traced to its configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let bytes = hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Members of one hypothesis (and optionally one group).
    pub fn members_of(
        &self,
        hypothesis: Option<Hypothesis>,
        group: Option<GroupId>,
    ) -> Vec<&PoolMemberSpec> {
        self.pool
            .iter()
            .filter(|m| hypothesis.map_or(true, |h| m.hypothesis == h))
            .filter(|m| group.map_or(true, |g| m.group == g))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_balanced() {
        let cfg = ExperimentConfig::for_seed(1);
        cfg.validate().unwrap();
        assert_eq!(cfg.pool.len(), 10);
        assert_eq!(cfg.members_of(Some(Hypothesis::Equivariant), None).len(), 5);
        assert_eq!(cfg.members_of(None, Some(GroupId::Rot4)).len(), 10);
        let frac_sum = cfg.split_fractions.0 + cfg.split_fractions.1 + cfg.split_fractions.2;
        assert!((frac_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extra_groups_extend_the_pool() {
        let cfg = ExperimentConfig::for_seed(1).with_extra_groups();
        cfg.validate().unwrap();
        assert_eq!(cfg.pool.len(), 18);
        assert_eq!(cfg.members_of(None, Some(GroupId::HalfSwap)).len(), 4);
        assert_eq!(cfg.members_of(None, Some(GroupId::ColorInvert)).len(), 4);
    }

    #[test]
    fn json_round_trip_and_stable_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = ExperimentConfig::for_seed(7);
        cfg.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(loaded, cfg);
        assert_eq!(loaded.digest(), cfg.digest());
        assert_ne!(cfg.digest(), ExperimentConfig::for_seed(8).digest());
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        let mut cfg = ExperimentConfig::for_seed(1);
        let seed = cfg.pool[0].seed;
        cfg.pool[1].seed = seed;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_ids_are_stable() {
        let member = PoolMemberSpec {
            hypothesis: Hypothesis::Equivariant,
            group: GroupId::Rot4,
            seed: 42,
        };
        assert_eq!(member.model_id(), "eq-rot4-s42");
    }
}
