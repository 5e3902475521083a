use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward, forward, nll_grad_logits, nll_loss, softmax, ModelParams, Optimizer, OptimizerKind};
use crate::data::{Dataset, Label, SparseVec};
use crate::error::{Error, Result};
use crate::eval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 24,
            max_epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_ba: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: ModelParams,
    /// Epoch of the returned snapshot; 0 means the initial parameters.
    pub best_epoch: usize,
    pub best_val_ba: f64,
    pub history: Vec<EpochRecord>,
}

/// Argmax prediction, ties going to class 0.
pub fn predict(params: &ModelParams, x: &SparseVec) -> Label {
    let l = forward(params, x).logits;
    if l[1] > l[0] {
        Label::NonMisleading
    } else {
        Label::Misinformation
    }
}

pub(crate) fn ba_on(params: &ModelParams, xs: &[SparseVec], truth: &[Label]) -> f64 {
    let preds: Vec<Label> = xs.iter().map(|x| predict(params, x)).collect();
    eval::balanced_accuracy(&eval::confusion(&preds, truth).expect("non-empty, equal lengths"))
}

/// Mini-batch NLL training on labeled source data, keeping the snapshot with
/// the best validation balanced accuracy (the initial parameters count as
/// epoch 0).
pub fn pretrain(init: &ModelParams, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("pretraining needs a non-empty training set"));
    }
    if val.is_empty() {
        return Err(Error::config("pretraining needs a non-empty validation set"));
    }
    let train_y = train.require_labels()?;
    let val_y = val.require_labels()?;
    let dim = init.hash_dim();
    let train_x = train.featurize(dim);
    let val_x = val.featurize(dim);

    let mut params = init.clone();
    let mut best = params.clone();
    let mut best_val_ba = ba_on(&params, &val_x, &val_y);
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.max_epochs);

    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total_nll = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let records: Vec<_> = chunk.iter().map(|&i| forward(&params, &train_x[i])).collect();
            let inv = 1.0 / chunk.len() as f64;
            let grad_logits: Vec<[f64; 2]> = records
                .iter()
                .zip(chunk)
                .map(|(r, &i)| {
                    let p = softmax(r.logits);
                    total_nll += nll_loss(p, train_y[i]);
                    let g = nll_grad_logits(p, train_y[i]);
                    [g[0] * inv, g[1] * inv]
                })
                .collect();
            let grads = backward(&params, &records, &grad_logits, None);
            opt.step(&mut params, &grads);
        }
        let val_ba = ba_on(&params, &val_x, &val_y);
        log::debug!("pretrain epoch {epoch}: val BA {val_ba:.4}");
        history.push(EpochRecord {
            epoch,
            train_nll: total_nll / train_x.len() as f64,
            val_ba,
        });
        if val_ba > best_val_ba {
            best_val_ba = val_ba;
            best = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(Pretrained {
        params: best,
        best_epoch,
        best_val_ba,
        history,
    })
}
