//! Optimisation loop, checkpoints, prediction and the ablation harness.

mod ablation;
mod checkpoint;
mod optim;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ablation::{ablation_suite, AblationReport, AblationRow, ABLATION_ROWS};
pub use checkpoint::Checkpoint;
pub use optim::{clip_grad_norm, Optimizer};
pub use predict::{predict_directory, predict_sample, predict_samples, prepare_samples};
pub use train::{evaluate_model, train, LogRow, TrainOutcome, Trainer};

use crate::config::Config;
use crate::error::{Result, TvnetError};
use crate::model::{check_input_size, BackboneSpec, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = TvnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(TvnetError::Config(format!(
                "optimizer must be sgd or adam, got {s:?}"
            ))),
        }
    }
}

/// Learning rate used for Adam when none is given.
pub const ADAM_DEFAULT_LR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub input_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Multiply the rate by `lr_decay_rate` every this many epochs; 0 keeps it constant.
    pub lr_decay_epochs: usize,
    pub lr_decay_rate: f64,
    pub seed: u64,
    pub use_hrf: bool,
    pub use_fba: bool,
    pub cascades: usize,
    pub backbone: BackboneSpec,
    pub channels: usize,
    /// Stop after this many iterations; 0 means no limit.
    pub max_iters: usize,
    /// Single-threaded kernels.
    pub deterministic: bool,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Evaluate on held-out samples every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_size: 352,
            batch_size: 20,
            epochs: 50,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            optimizer: OptimizerKind::Sgd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            clip_norm: 0.5,
            lr_decay_epochs: 0,
            lr_decay_rate: 0.1,
            seed: 0,
            use_hrf: true,
            use_fba: true,
            cascades: 2,
            backbone: BackboneSpec::res2net50(),
            channels: 64,
            max_iters: 0,
            deterministic: true,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 23] = [
        "input_size",
        "batch_size",
        "epochs",
        "lr",
        "momentum",
        "weight_decay",
        "optimizer",
        "adam_beta1",
        "adam_beta2",
        "clip_norm",
        "lr_decay_epochs",
        "lr_decay_rate",
        "seed",
        "use_hrf",
        "use_fba",
        "cascades",
        "backbone",
        "channels",
        "max_iters",
        "deterministic",
        "hflip_prob",
        "vflip_prob",
        "eval_every",
    ];

    /// Small, fast setting for tests and desk-scale runs.
    pub fn toy() -> Self {
        TrainConfig {
            input_size: 64,
            batch_size: 4,
            epochs: 10,
            backbone: BackboneSpec::toy(8),
            channels: 16,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            channels: self.channels,
            cascades: self.cascades,
            use_hrf: self.use_hrf,
            use_fba: self.use_fba,
            ..ModelConfig::default()
        }
    }

    /// Applies the training keys of `cfg` on top of `self`. Keys not
    /// belonging to training are ignored. Choosing Adam without a rate
    /// selects [`ADAM_DEFAULT_LR`].
    pub fn apply(&self, cfg: &Config) -> Result<Self> {
        let mut c = self.clone();
        c.input_size = cfg.get_or("input_size", c.input_size)?;
        c.batch_size = cfg.get_or("batch_size", c.batch_size)?;
        c.epochs = cfg.get_or("epochs", c.epochs)?;
        c.momentum = cfg.get_or("momentum", c.momentum)?;
        c.weight_decay = cfg.get_or("weight_decay", c.weight_decay)?;
        c.optimizer = cfg.get_or("optimizer", c.optimizer)?;
        c.lr = match cfg.get("lr")? {
            Some(lr) => lr,
            None if c.optimizer == OptimizerKind::Adam && self.optimizer != OptimizerKind::Adam => {
                ADAM_DEFAULT_LR
            }
            None => c.lr,
        };
        c.adam_beta1 = cfg.get_or("adam_beta1", c.adam_beta1)?;
        c.adam_beta2 = cfg.get_or("adam_beta2", c.adam_beta2)?;
        c.clip_norm = cfg.get_or("clip_norm", c.clip_norm)?;
        c.lr_decay_epochs = cfg.get_or("lr_decay_epochs", c.lr_decay_epochs)?;
        c.lr_decay_rate = cfg.get_or("lr_decay_rate", c.lr_decay_rate)?;
        c.seed = cfg.get_or("seed", c.seed)?;
        c.use_hrf = cfg.get_or("use_hrf", c.use_hrf)?;
        c.use_fba = cfg.get_or("use_fba", c.use_fba)?;
        c.cascades = cfg.get_or("cascades", c.cascades)?;
        c.backbone = cfg.get_or("backbone", c.backbone)?;
        c.channels = cfg.get_or("channels", c.channels)?;
        c.max_iters = cfg.get_or("max_iters", c.max_iters)?;
        c.deterministic = cfg.get_or("deterministic", c.deterministic)?;
        c.hflip_prob = cfg.get_or("hflip_prob", c.hflip_prob)?;
        c.vflip_prob = cfg.get_or("vflip_prob", c.vflip_prob)?;
        c.eval_every = cfg.get_or("eval_every", c.eval_every)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Self::default().apply(cfg)
    }

    /// Every key, so the result fully determines the run.
    pub fn to_config(&self) -> Config {
        let mut cfg = Config::new();
        let entries: [(&str, String); 23] = [
            ("input_size", self.input_size.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("lr_decay_epochs", self.lr_decay_epochs.to_string()),
            ("lr_decay_rate", self.lr_decay_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("use_hrf", self.use_hrf.to_string()),
            ("use_fba", self.use_fba.to_string()),
            ("cascades", self.cascades.to_string()),
            ("backbone", self.backbone.to_string()),
            ("channels", self.channels.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("hflip_prob", self.hflip_prob.to_string()),
            ("vflip_prob", self.vflip_prob.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ];
        for (k, v) in entries {
            cfg.set(k, v).expect("static keys are valid");
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TvnetError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return bad("momentum and Adam betas must lie in [0, 1)".into());
        }
        let non_negative = |v: f64| (0.0..).contains(&v);
        if !non_negative(self.weight_decay)
            || !non_negative(self.clip_norm)
            || self.lr_decay_rate.is_nan()
            || self.lr_decay_rate <= 0.0
        {
            return bad(
                "weight_decay and clip_norm must be non-negative, lr_decay_rate positive".into(),
            );
        }
        for p in [self.hflip_prob, self.vflip_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("flip probabilities must lie in [0, 1], got {p}"));
            }
        }
        check_input_size(self.input_size, self.input_size)
            .map_err(|e| TvnetError::Config(e.to_string()))?;
        self.model_config().validate().map_err(|e| match e {
            TvnetError::Config(m) => TvnetError::Config(m),
            other => TvnetError::Config(other.to_string()),
        })
    }

    /// Rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_decay_epochs) {
            Some(steps) => self.lr * self.lr_decay_rate.powi(steps as i32),
            None => self.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.input_size, c.batch_size, c.epochs), (352, 20, 50));
        assert_eq!((c.lr, c.momentum, c.weight_decay), (0.05, 0.9, 5e-4));
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
    }

    #[test]
    fn config_round_trip() {
        let c = TrainConfig {
            lr: 0.1234567890123,
            use_fba: false,
            ..TrainConfig::toy()
        };
        assert_eq!(TrainConfig::from_config(&c.to_config()).unwrap(), c);
    }

    #[test]
    fn adam_picks_its_own_default_rate() {
        let cfg = Config::parse("optimizer = adam").unwrap();
        assert_eq!(TrainConfig::from_config(&cfg).unwrap().lr, ADAM_DEFAULT_LR);
        let cfg = Config::parse("optimizer = adam\nlr = 0.01").unwrap();
        assert_eq!(TrainConfig::from_config(&cfg).unwrap().lr, 0.01);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "batch_size = 0",
            "lr = -1",
            "input_size = 100",
            "cascades = 5",
        ] {
            let cfg = Config::parse(text).unwrap();
            assert!(TrainConfig::from_config(&cfg).is_err(), "{text}");
        }
    }
}
