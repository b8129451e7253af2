use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::split::TRAIN_RATIO;
use crate::data::{GroupThresholds, SubsetMode, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mixops::{Mix2Policy, MixParams};
use crate::nn::{AdamWConfig, AugmentConfig, InputView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Feature cache to train on; the synthetic generator is used when absent.
    pub cache: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub split_seed: u64,
    pub train_ratio: f64,
    pub subset: SubsetMode,
    /// Minimum training count for the frequent group.
    pub frequent_threshold: usize,
    /// Minimum training count for the common group.
    pub common_threshold: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cache: None,
            synthetic: SyntheticSpec::default(),
            split_seed: 0,
            train_ratio: TRAIN_RATIO,
            subset: SubsetMode::Full,
            frequent_threshold: 160,
            common_threshold: 50,
        }
    }
}

impl DataConfig {
    pub fn thresholds(&self) -> Result<GroupThresholds> {
        GroupThresholds::new(self.frequent_threshold, self.common_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub view: InputView,
    /// Encoder boundary mixed by Manifold Mixup and MultiMix; defaults to the last.
    pub tap: Option<usize>,
    /// Manifold Mixup picks a random encoder boundary per iteration.
    pub random_layer: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            view: InputView::Flatten,
            tap: None,
            random_layer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Evaluate on the test split every k epochs; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            seeds: vec![0, 1, 2],
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    /// `none`, a strategy name, `a+b`, `mix2`, or `name=weight,...`.
    pub policy: String,
    pub mixup_alpha: f64,
    pub manifold_alpha: f64,
    pub multimix_alpha: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        let p = MixParams::default();
        Self {
            policy: "mix2".into(),
            mixup_alpha: p.mixup_alpha,
            manifold_alpha: p.manifold_alpha,
            multimix_alpha: p.multimix_alpha,
        }
    }
}

impl MixConfig {
    pub fn params(&self) -> MixParams {
        MixParams {
            mixup_alpha: self.mixup_alpha,
            manifold_alpha: self.manifold_alpha,
            multimix_alpha: self.multimix_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

/// Everything a run needs, one TOML section per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub training: TrainingConfig,
    pub augment: AugmentConfig,
    pub mix: MixConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Param(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn policy(&self) -> Result<Mix2Policy> {
        self.mix.policy.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.policy()?;
        self.optimizer.validate()?;
        self.data.thresholds()?;
        if self.training.seeds.is_empty() {
            return Err(Error::Param("training.seeds must not be empty".into()));
        }
        if self.training.batch_size == 0 || self.eval.batch_size == 0 {
            return Err(Error::Param("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Param(format!("threshold {} outside [0, 1]", self.eval.threshold)));
        }
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(Error::Param(format!("train_ratio {} must be in (0, 1)", self.data.train_ratio)));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Param("hidden widths must be positive".into()));
        }
        if let Some(tap) = self.model.tap {
            if tap > self.model.hidden.len() {
                return Err(Error::Param(format!(
                    "tap {tap} beyond {} encoder layers",
                    self.model.hidden.len()
                )));
            }
        }
        if let InputView::PoolTime(0) = self.model.view {
            return Err(Error::Param("pool_time needs at least one bin".into()));
        }
        for (name, a) in [
            ("mixup_alpha", self.mix.mixup_alpha),
            ("manifold_alpha", self.mix.manifold_alpha),
            ("multimix_alpha", self.mix.multimix_alpha),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Param(format!("{name} must be positive, got {a}")));
            }
        }
        Ok(())
    }
}
