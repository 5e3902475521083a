//! End-to-end helpers shared by the CLI commands and experiment harnesses.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adapt::{run_adaptation, AdaptConfig, AdaptOutcome};
use crate::correction::{corrected_prediction, CorrectionParams};
use crate::data::{gen_synthetic, split, Dataset, Label, SynthConfig, DEFAULT_HASH_DIM};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::model::{forward, pretrain, ModelParams, Pretrained, TrainConfig};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hash_dim: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    /// Initialization seed.
    pub seed: u64,
    /// Pretrained checkpoint used by `adapt`; when absent `adapt` pretrains
    /// first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hash_dim: DEFAULT_HASH_DIM,
            d_embed: 16,
            d_hidden: 16,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim < 2 || !self.hash_dim.is_power_of_two() {
            return Err(Error::config(format!(
                "hash_dim must be a power of two >= 2, got {}",
                self.hash_dim
            )));
        }
        if self.d_embed == 0 || self.d_hidden == 0 {
            return Err(Error::config("d_embed and d_hidden must be positive"));
        }
        Ok(())
    }

    pub fn init(&self) -> ModelParams {
        ModelParams::init(self.hash_dim, self.d_embed, self.d_hidden, self.seed)
    }
}

/// Source splits for pretraining plus the three target roles.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub source_train: Dataset,
    pub source_val: Dataset,
    pub source_test: Dataset,
    /// Unlabeled target pool used for adaptation.
    pub target: Dataset,
    /// Small labeled target split for correction fitting and model selection.
    pub calib: Dataset,
    /// Labeled held-out target split, when available.
    pub target_test: Option<Dataset>,
}

/// Generates synthetic data and splits both domains 7:1:2. The target
/// train/val/test parts become the unlabeled pool, the calibration set and
/// the held-out test set.
pub fn synthetic_scenario(cfg: &SynthConfig, split_seed: u64) -> Result<Scenario> {
    let synth = gen_synthetic(cfg)?;
    for w in &synth.warnings {
        log::warn!("synthetic config: {w}");
    }
    let (source_train, source_val, source_test) = split(&synth.source, SPLIT_RATIOS, split_seed)?;
    let (t_train, t_val, t_test) = split(&synth.target, SPLIT_RATIOS, split_seed)?;
    Ok(Scenario {
        source_train,
        source_val,
        source_test,
        target: t_train.without_labels(),
        calib: t_val,
        target_test: Some(t_test),
    })
}

pub fn pretrain_on(scenario: &Scenario, model: &ModelConfig, train: &TrainConfig) -> Result<Pretrained> {
    model.validate()?;
    pretrain(&model.init(), &scenario.source_train, &scenario.source_val, train)
}

pub fn predict_all(params: &ModelParams, ds: &Dataset, correction: Option<&CorrectionParams>) -> Vec<Label> {
    ds.featurize(params.hash_dim())
        .iter()
        .map(|x| {
            let logits = forward(params, x).logits;
            match correction {
                Some(cp) => corrected_prediction(cp, logits).0,
                None => corrected_prediction(&CorrectionParams::identity(), logits).0,
            }
        })
        .collect()
}

/// Metrics of `params` (optionally with a logit correction) on a labeled set.
pub fn evaluate(params: &ModelParams, ds: &Dataset, correction: Option<&CorrectionParams>) -> Result<MetricsReport> {
    let truth = ds.require_labels()?;
    MetricsReport::compute(&predict_all(params, ds, correction), &truth)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    /// Pretrained model, no adaptation.
    pub naive: MetricsReport,
    /// Adaptation with pseudo labels from the uncorrected model.
    pub without_correction: MetricsReport,
    pub full: MetricsReport,
}

/// Pretrains once, then adapts with and without label correction and scores
/// all three models on the held-out target split.
pub fn run_ablation(
    synth: &SynthConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    adapt: &AdaptConfig,
) -> Result<AblationResult> {
    let sc = synthetic_scenario(synth, synth.seed)?;
    let test = sc.target_test.as_ref().expect("synthetic scenario has a test split");
    let pre = pretrain_on(&sc, model, train)?;
    let adapted = |label_correction: bool| -> Result<AdaptOutcome> {
        let cfg = AdaptConfig {
            label_correction,
            ..adapt.clone()
        };
        run_adaptation(&pre.params, &sc.source_train, &sc.target, &sc.calib, &cfg)
    };
    Ok(AblationResult {
        naive: evaluate(&pre.params, test, None)?,
        without_correction: evaluate(&adapted(false)?.params, test, None)?,
        full: evaluate(&adapted(true)?.params, test, None)?,
    })
}
