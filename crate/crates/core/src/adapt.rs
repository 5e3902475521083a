//! Contrastive adaptation stage.
//!
//! Each epoch optionally refits the label correction on the calibration split
//! and regenerates the filtered pseudo-labeled target pool. Each iteration
//! then draws a target batch from that pool, draws a source batch with the
//! same class histogram, and takes one optimizer step on
//!
//! ```text
//! L = (NLL_source + NLL_target) / 2 + lambda * L_contrastive
//! ```
//!
//! where the NLL terms use true source labels and target pseudo labels, and
//! the contrastive term is computed on the hidden representations.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{
    fit_correction_logits, logits_for, pseudo_label_logits, validate_tau, CorrectionParams, FitConfig, PseudoLabel,
    PseudoLabeledSet,
};
use crate::data::{Dataset, Label, SparseVec};
use crate::error::{Error, Result};
use crate::mmd::{contrastive_grad, contrastive_loss, EmbeddingBatch, KernelConfig};
use crate::model::{
    ba_on, backward, forward, nll_grad_logits, nll_loss, softmax, ModelParams, Optimizer, OptimizerKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Iterations per epoch; `None` means one pass over the pseudo-labeled
    /// pool, `ceil(|pool| / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub kernel: KernelConfig,
    pub refresh_pseudo_labels: bool,
    /// Disable to pseudo label with the raw model (ablation).
    pub label_correction: bool,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub correction: FitConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iterations_per_epoch: None,
            batch_size: 24,
            tau: 0.7,
            lambda: 0.01,
            epochs: 5,
            seed: 0,
            kernel: KernelConfig::default(),
            refresh_pseudo_labels: true,
            label_correction: true,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            correction: FitConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be a non-negative finite number, got {}",
                self.lambda
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::config("adaptation batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("adaptation epochs must be positive"));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::config("iterations_per_epoch must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("adaptation learning_rate must be positive"));
        }
        self.kernel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub nll_loss: f64,
    pub contrastive_loss: f64,
    pub combined_loss: f64,
    pub gamma: f64,
    pub skipped_terms: usize,
    pub sampled_with_replacement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub iterations: usize,
    pub calib_ba: f64,
    pub pseudo_labeled: usize,
    pub pseudo_class_one_fraction: f64,
    pub correction: CorrectionParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Snapshot with the best calibration balanced accuracy.
    pub params: ModelParams,
    /// 0 when no epoch beat the starting model.
    pub best_epoch: usize,
    pub best_calib_ba: f64,
    pub initial_calib_ba: f64,
    pub trace: AdaptTrace,
    /// Correction and pseudo-label pool from the last stage-one pass.
    pub correction: CorrectionParams,
    pub pseudo_labels: PseudoLabeledSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceBatch {
    /// Source indices; slot `i` has the same class as target slot `i`.
    pub indices: Vec<usize>,
    /// Some class needed more examples than the source holds.
    pub with_replacement: bool,
}

/// Per-class index pools over the labeled source set.
#[derive(Debug, Clone)]
pub struct ClassAwareSampler {
    pools: [Vec<usize>; 2],
}

impl ClassAwareSampler {
    pub fn new(source_labels: &[Label]) -> Self {
        let mut pools = [Vec::new(), Vec::new()];
        for (i, l) in source_labels.iter().enumerate() {
            pools[l.index()].push(i);
        }
        ClassAwareSampler { pools }
    }

    /// Draws a source batch matching the class histogram of `target_labels`.
    /// Within a class, draws are without replacement when the pool is large
    /// enough and with replacement otherwise.
    pub fn sample(&self, target_labels: &[Label], rng: &mut impl Rng) -> Result<SourceBatch> {
        let mut need = [0usize; 2];
        for l in target_labels {
            need[l.index()] += 1;
        }
        let mut drawn: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut with_replacement = false;
        for c in 0..2 {
            let pool = &self.pools[c];
            if need[c] == 0 {
                continue;
            }
            if pool.is_empty() {
                return Err(Error::Adaptation(format!("source data has no examples of class {c}")));
            }
            drawn[c] = if need[c] <= pool.len() {
                index::sample(rng, pool.len(), need[c])
                    .into_iter()
                    .map(|k| pool[k])
                    .collect()
            } else {
                with_replacement = true;
                (0..need[c]).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            };
        }
        let mut cursor = [0usize; 2];
        let indices = target_labels
            .iter()
            .map(|l| {
                let c = l.index();
                cursor[c] += 1;
                drawn[c][cursor[c] - 1]
            })
            .collect();
        Ok(SourceBatch {
            indices,
            with_replacement,
        })
    }
}

pub fn class_aware_sample(source_labels: &[Label], target_labels: &[Label], rng: &mut impl Rng) -> Result<SourceBatch> {
    ClassAwareSampler::new(source_labels).sample(target_labels, rng)
}

fn histogram(labels: impl IntoIterator<Item = Label>) -> [usize; 2] {
    let mut h = [0; 2];
    for l in labels {
        h[l.index()] += 1;
    }
    h
}

/// Endless shuffled passes over the pseudo-labeled pool.
struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
}

impl PoolCursor {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        PoolCursor { order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

struct Prepared {
    source_x: Vec<SparseVec>,
    source_y: Vec<Label>,
    target_x: Vec<SparseVec>,
    calib_x: Vec<SparseVec>,
    calib_y: Vec<Label>,
}

fn prepare(model: &ModelParams, source: &Dataset, target: &Dataset, calib: &Dataset) -> Result<Prepared> {
    if source.is_empty() || target.is_empty() || calib.is_empty() {
        return Err(Error::config(
            "adaptation needs non-empty source, target and calibration sets",
        ));
    }
    let dim = model.hash_dim();
    Ok(Prepared {
        source_y: source.require_labels()?,
        calib_y: calib.require_labels()?,
        source_x: source.featurize(dim),
        target_x: target.featurize(dim),
        calib_x: calib.featurize(dim),
    })
}

/// Runs both adaptation stages. Target labels, if present, are ignored.
pub fn run_adaptation(
    model: &ModelParams,
    source: &Dataset,
    target: &Dataset,
    calib: &Dataset,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    run(model, source, target, calib, cfg, true)
}

fn run(
    model: &ModelParams,
    source: &Dataset,
    target: &Dataset,
    calib: &Dataset,
    cfg: &AdaptConfig,
    contrastive: bool,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let data = prepare(model, source, target, calib)?;
    let sampler = ClassAwareSampler::new(&data.source_y);
    let mut rng = crate::rng_from_seed(cfg.seed);
    let mut params = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);

    let initial_calib_ba = ba_on(&params, &data.calib_x, &data.calib_y);
    let mut best = (params.clone(), 0usize, initial_calib_ba);
    let mut trace = AdaptTrace::default();
    let mut stage_one: Option<(CorrectionParams, PseudoLabeledSet)> = None;
    let mut iteration = 0;

    for epoch in 1..=cfg.epochs {
        if stage_one.is_none() || cfg.refresh_pseudo_labels {
            let cp = if cfg.label_correction {
                fit_correction_logits(&logits_for(&params, &data.calib_x), &data.calib_y, &cfg.correction)?
            } else {
                CorrectionParams::identity()
            };
            let pseudo = pseudo_label_logits(&cp, &logits_for(&params, &data.target_x), cfg.tau)?;
            log::info!(
                "epoch {epoch}: {} / {} target examples pseudo labeled, class-1 fraction {:.3}",
                pseudo.len(),
                pseudo.considered,
                pseudo.class_one_fraction()
            );
            stage_one = Some((cp, pseudo));
        }
        let (cp, pseudo) = stage_one.as_ref().expect("stage one ran");
        let pool: &[PseudoLabel] = &pseudo.entries;
        let bsz = cfg.batch_size.min(pool.len());
        let n_iter = cfg.iterations_per_epoch.unwrap_or(pool.len().div_ceil(cfg.batch_size));
        let mut cursor = PoolCursor::new(pool.len(), &mut rng);

        for _ in 0..n_iter {
            iteration += 1;
            let t_entries: Vec<&PseudoLabel> = cursor.next_batch(bsz, &mut rng).into_iter().map(|k| &pool[k]).collect();
            let t_labels: Vec<Label> = t_entries.iter().map(|e| e.label).collect();
            let s_batch = sampler.sample(&t_labels, &mut rng)?;
            let s_labels: Vec<Label> = s_batch.indices.iter().map(|&i| data.source_y[i]).collect();
            if histogram(s_labels.iter().copied()) != histogram(t_labels.iter().copied()) {
                return Err(Error::Adaptation(format!(
                    "class histogram mismatch at iteration {iteration}"
                )));
            }

            let records: Vec<_> = s_batch
                .indices
                .iter()
                .map(|&i| forward(&params, &data.source_x[i]))
                .chain(t_entries.iter().map(|e| forward(&params, &data.target_x[e.index])))
                .collect();
            let labels: Vec<Label> = s_labels.iter().chain(&t_labels).copied().collect();

            // Each domain's mean NLL gets weight 1/2.
            let w = 0.5 / bsz as f64;
            let mut nll_sum = 0.0;
            let grad_logits: Vec<[f64; 2]> = records
                .iter()
                .zip(&labels)
                .map(|(r, &y)| {
                    let p = softmax(r.logits);
                    nll_sum += nll_loss(p, y);
                    let g = nll_grad_logits(p, y);
                    [g[0] * w, g[1] * w]
                })
                .collect();
            let nll = nll_sum * w;

            let (contrastive_value, gamma, skipped, grad_phi) = if contrastive {
                let s_emb =
                    EmbeddingBatch::new(records[..bsz].iter().map(|r| r.phi.clone()).collect(), s_labels.clone())?;
                let t_emb =
                    EmbeddingBatch::new(records[bsz..].iter().map(|r| r.phi.clone()).collect(), t_labels.clone())?;
                let gamma = cfg.kernel.resolve(&s_emb.vectors, &t_emb.vectors);
                if cfg.lambda > 0.0 {
                    let g = contrastive_grad(&s_emb, &t_emb, gamma)?;
                    let scaled: Vec<Vec<f64>> = g
                        .source
                        .iter()
                        .chain(&g.target)
                        .map(|v| v.iter().map(|x| cfg.lambda * x).collect())
                        .collect();
                    (g.loss.value, gamma, g.loss.skipped_terms, Some(scaled))
                } else {
                    let l = contrastive_loss(&s_emb, &t_emb, gamma)?;
                    (l.value, gamma, l.skipped_terms, None)
                }
            } else {
                (0.0, 0.0, 0, None)
            };

            let grads = backward(&params, &records, &grad_logits, grad_phi.as_deref());
            opt.step(&mut params, &grads);

            trace.iterations.push(IterationRecord {
                iteration,
                epoch,
                nll_loss: nll,
                contrastive_loss: contrastive_value,
                combined_loss: nll + cfg.lambda * contrastive_value,
                gamma,
                skipped_terms: skipped,
                sampled_with_replacement: s_batch.with_replacement,
            });
        }

        let calib_ba = ba_on(&params, &data.calib_x, &data.calib_y);
        log::info!("epoch {epoch}: calibration BA {calib_ba:.4}");
        trace.epochs.push(EpochSummary {
            epoch,
            iterations: n_iter,
            calib_ba,
            pseudo_labeled: pseudo.len(),
            pseudo_class_one_fraction: pseudo.class_one_fraction(),
            correction: cp.clone(),
        });
        if calib_ba > best.2 {
            best = (params.clone(), epoch, calib_ba);
        }
    }

    let (correction, pseudo_labels) = stage_one.expect("at least one epoch");
    Ok(AdaptOutcome {
        params: best.0,
        best_epoch: best.1,
        best_calib_ba: best.2,
        initial_calib_ba,
        trace,
        correction,
        pseudo_labels,
    })
}
