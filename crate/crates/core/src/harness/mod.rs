//! Experiment orchestration: configuration, the training loop, evaluation,
//! ablation and domain-order studies, and report/plot output.

mod data;
mod eval;
mod log;
mod plot;
mod studies;
mod train;

pub use data::{load_benchmark, save_benchmark, MANIFEST_FILE};
pub use eval::{evaluate, evaluate_checkpoint, predict};
pub use log::{EvalPoint, Event, RunLog};
pub use plot::{emit_plots, render_chart, Series};
pub use studies::{ablate, ablation_rows, order_study, AblationReport, AblationRow, OrderReport, OrderRow};
pub use train::{train, TrainOutcome};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::af_ema::{NormScope, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::mixing::MixConfig;
use crate::scenegen::GeneratorConfig;
use crate::segnet::SegNetConfig;
use crate::tensor::OptimState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
            max_iter: 20_000,
        }
    }
}

impl OptimConfig {
    pub fn state(&self) -> Result<OptimState> {
        OptimState::new(self.base_lr, self.momentum, self.weight_decay, self.power, self.max_iter)
    }
}

/// Independent switches for the method's components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    /// Cycle through targets one epoch at a time instead of pooling them.
    pub ods: bool,
    /// Fisher-weighted teacher updates after each epoch.
    pub af_ema: bool,
    /// Context-guided placement of pasted classes instead of plain ClassMix.
    pub cgmix: bool,
    /// Extra cross-entropy on raw target images against pseudo-labels.
    pub l_unsup: bool,
    /// Weight pseudo-labelled bridge pixels by teacher confidence.
    pub conf_weighting: bool,
}

impl Toggles {
    /// No method components: pooled targets, plain EMA, ClassMix.
    pub const BASELINE: Toggles = Toggles {
        ods: false,
        af_ema: false,
        cgmix: false,
        l_unsup: false,
        conf_weighting: false,
    };

    /// All three method components.
    pub const FULL: Toggles = Toggles {
        ods: true,
        af_ema: true,
        cgmix: true,
        l_unsup: false,
        conf_weighting: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub model: SegNetConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mix: MixConfig,
    pub toggles: Toggles,
    /// Offsets the model initialisation seed and drives all sampling.
    pub seed: u64,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    /// Also evaluate whenever a target epoch completes.
    pub eval_on_epoch_end: bool,
    /// Target visiting order; defaults to the generator's target order.
    pub domain_order: Option<Vec<String>>,
    /// Plain EMA coefficient, used until a Fisher estimate exists.
    pub ema_alpha: f64,
    /// Samples used per Fisher estimate; `None` uses the whole split.
    pub fisher_cap: Option<usize>,
    pub fisher_norm_scope: NormScope,
    pub confidence_threshold: f64,
    /// Source-only supervised iterations before adaptation starts; the
    /// teacher is initialised from the warmed-up student.
    pub warmup_iters: usize,
    pub warmup_lr: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            model: SegNetConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 4,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            mix: MixConfig::default(),
            toggles: Toggles::FULL,
            seed: 0,
            eval_every: 1000,
            eval_on_epoch_end: false,
            domain_order: None,
            ema_alpha: 0.999,
            fisher_cap: Some(DEFAULT_SAMPLE_CAP),
            fisher_norm_scope: NormScope::Tensor,
            confidence_threshold: crate::mean_teacher::CONFIDENCE_THRESHOLD,
            warmup_iters: 0,
            warmup_lr: 0.02,
        }
    }
}

impl ExperimentConfig {
    /// Settings sized for well under a minute per run on one CPU core: a
    /// slimmer network, batch 2, a source-only warm-up standing in for a
    /// pretrained backbone, a short adaptation schedule and a faster plain EMA.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: SegNetConfig::with_classes(&[8, 16], 7),
            optim: OptimConfig {
                base_lr: 0.005,
                max_iter: 800,
                ..OptimConfig::default()
            },
            batch_size: 2,
            warmup_iters: 400,
            warmup_lr: 0.02,
            eval_every: 0,
            eval_on_epoch_end: true,
            ema_alpha: 0.99,
            fisher_cap: Some(32),
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.mix.validate()?;
        self.optim.state()?;
        if self.model.num_classes != self.generator.num_classes {
            return Err(Error::config(format!(
                "model predicts {} classes, data has {}",
                self.model.num_classes, self.generator.num_classes
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda1) || !(0.0..=1.0).contains(&self.lambda2) || self.lambda1 > self.lambda2 {
            return Err(Error::config(format!(
                "need 0 <= lambda1 <= lambda2 <= 1, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::config(format!("ema_alpha {} outside [0, 1]", self.ema_alpha)));
        }
        if self.warmup_iters > 0 && !(self.warmup_lr > 0.0 && self.warmup_lr.is_finite()) {
            return Err(Error::config(format!("warmup_lr must be positive, got {}", self.warmup_lr)));
        }
        if self.fisher_cap == Some(0) {
            return Err(Error::config("fisher_cap must be positive"));
        }
        if let Some(order) = &self.domain_order {
            let mut given = order.clone();
            let mut known: Vec<String> = self.generator.targets.iter().map(|t| t.name.clone()).collect();
            given.sort();
            known.sort();
            if given != known {
                return Err(Error::config(format!(
                    "domain_order {order:?} is not a permutation of the targets {known:?}"
                )));
            }
        }
        Ok(())
    }

    /// Target ids in visiting order.
    pub fn target_order(&self) -> Vec<String> {
        self.domain_order
            .clone()
            .unwrap_or_else(|| self.generator.targets.iter().map(|t| t.name.clone()).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
