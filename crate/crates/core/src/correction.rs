//! Label-shift correction by vector rescaling of logits, and confidence
//! filtered pseudo labeling of target data.
//!
//! Corrected probabilities are `softmax(w * logits + b)` (element-wise). The
//! four parameters are fitted by full-batch gradient descent on the NLL of a
//! labeled target calibration set, starting from the identity `w = (1, 1)`,
//! `b = (0, 0)`. If the fitted bias grows past `bias_max`, or the fit ends
//! worse than the identity, the bias is dropped and `w` is refitted alone.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, SparseVec};
use crate::error::{Error, Result};
use crate::model::{forward, softmax, ModelParams, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitNote {
    /// Calibration labels contain a single class.
    SingleClassCalibration,
    /// Bias exceeded `bias_max` or the joint fit regressed; refitted without it.
    BiasDiscarded,
    /// Even the weight-only fit did not beat the identity; identity returned.
    IdentityFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    pub w: [f64; 2],
    pub b: [f64; 2],
    pub bias_discarded: bool,
    /// Mean calibration NLL after each accepted step, starting with the
    /// initial value.
    #[serde(skip)]
    pub fit_nll_history: Vec<f64>,
    #[serde(skip)]
    pub notes: Vec<FitNote>,
}

impl CorrectionParams {
    pub fn identity() -> Self {
        CorrectionParams {
            w: [1.0, 1.0],
            b: [0.0, 0.0],
            bias_discarded: false,
            fit_nll_history: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.w == [1.0, 1.0] && self.b == [0.0, 0.0]
    }
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn apply_correction(cp: &CorrectionParams, logits: [f64; 2]) -> [f64; 2] {
    assert!(
        cp.w.iter().chain(&cp.b).all(|v| v.is_finite()),
        "correction parameters must be finite"
    );
    let b = if cp.bias_discarded { [0.0, 0.0] } else { cp.b };
    softmax([cp.w[0] * logits[0] + b[0], cp.w[1] * logits[1] + b[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once one step improves the NLL by less than this.
    pub tolerance: f64,
    /// Largest admissible `|b_j|` before the bias is discarded.
    pub bias_max: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            tolerance: 1e-8,
            bias_max: 10.0,
        }
    }
}

/// Mean NLL of corrected probabilities; `theta = [w0, w1, b0, b1]`.
fn nll_and_grad(theta: &[f64; 4], logits: &[[f64; 2]], labels: &[Label]) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut g = [0.0; 4];
    for (z, y) in logits.iter().zip(labels) {
        let p = softmax([theta[0] * z[0] + theta[2], theta[1] * z[1] + theta[3]]);
        let py = p[y.index()];
        loss -= py.max(PROB_FLOOR).ln();
        if py >= PROB_FLOOR {
            for k in 0..2 {
                let d = p[k] - if k == y.index() { 1.0 } else { 0.0 };
                g[k] += d * z[k];
                g[k + 2] += d;
            }
        }
    }
    let n = logits.len() as f64;
    (loss / n, g.map(|v| v / n))
}

/// Mean calibration NLL of `cp` on precomputed logits.
pub fn correction_nll(cp: &CorrectionParams, logits: &[[f64; 2]], labels: &[Label]) -> f64 {
    let b = if cp.bias_discarded { [0.0; 2] } else { cp.b };
    nll_and_grad(&[cp.w[0], cp.w[1], b[0], b[1]], logits, labels).0
}

/// Gradient descent with Armijo backtracking. Returns the final parameters and
/// the NLL trace (initial value first).
fn descend(logits: &[[f64; 2]], labels: &[Label], fit_bias: bool, cfg: &FitConfig) -> ([f64; 4], Vec<f64>) {
    let mut theta = [1.0, 1.0, 0.0, 0.0];
    let (mut f, mut g) = nll_and_grad(&theta, logits, labels);
    let mut history = vec![f];
    let mut step = 1.0;
    for _ in 0..cfg.max_iters {
        if !fit_bias {
            g[2] = 0.0;
            g[3] = 0.0;
        }
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.is_nan() || gnorm2 <= 1e-30 {
            break;
        }
        let mut accepted = None;
        while step > 1e-14 {
            let cand: [f64; 4] = std::array::from_fn(|k| theta[k] - step * g[k]);
            let (fc, gc) = nll_and_grad(&cand, logits, labels);
            if fc.is_finite() && fc <= f - 1e-4 * step * gnorm2 {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let improvement = f - fc;
        theta = cand;
        f = fc;
        g = gc;
        history.push(f);
        step *= 2.0;
        if improvement < cfg.tolerance {
            break;
        }
    }
    (theta, history)
}

/// Fits the correction on precomputed calibration logits.
pub fn fit_correction_logits(logits: &[[f64; 2]], labels: &[Label], cfg: &FitConfig) -> Result<CorrectionParams> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::config(
            "correction fit needs a non-empty labeled calibration set",
        ));
    }
    let mut notes = Vec::new();
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        log::warn!("calibration set contains only class {}", first.index());
        notes.push(FitNote::SingleClassCalibration);
    }

    let (theta, history) = descend(logits, labels, true, cfg);
    let initial = history[0];
    let last = *history.last().unwrap();
    let bias_ok = theta[2].abs() <= cfg.bias_max && theta[3].abs() <= cfg.bias_max;
    if bias_ok && last <= initial && theta.iter().all(|v| v.is_finite()) {
        return Ok(CorrectionParams {
            w: [theta[0], theta[1]],
            b: [theta[2], theta[3]],
            bias_discarded: false,
            fit_nll_history: history,
            notes,
        });
    }

    log::info!("discarding correction bias (b = [{:.3}, {:.3}])", theta[2], theta[3]);
    notes.push(FitNote::BiasDiscarded);
    let (theta, history) = descend(logits, labels, false, cfg);
    let last = *history.last().unwrap();
    if last.is_nan() || last > history[0] || !theta.iter().all(|v| v.is_finite()) {
        notes.push(FitNote::IdentityFallback);
        let mut cp = CorrectionParams::identity();
        cp.bias_discarded = true;
        cp.fit_nll_history = vec![history[0]];
        cp.notes = notes;
        return Ok(cp);
    }
    Ok(CorrectionParams {
        w: [theta[0], theta[1]],
        b: [0.0, 0.0],
        bias_discarded: true,
        fit_nll_history: history,
        notes,
    })
}

pub fn logits_for(model: &ModelParams, xs: &[SparseVec]) -> Vec<[f64; 2]> {
    xs.iter().map(|x| forward(model, x).logits).collect()
}

/// Fits the correction for a frozen model on a labeled target calibration set.
pub fn fit_correction(model: &ModelParams, calib: &Dataset, cfg: &FitConfig) -> Result<CorrectionParams> {
    let labels = calib.require_labels()?;
    let logits = logits_for(model, &calib.featurize(model.hash_dim()));
    fit_correction_logits(&logits, &labels, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    /// Position in the target dataset.
    pub index: usize,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    pub entries: Vec<PseudoLabel>,
    pub threshold: f64,
    /// Number of target examples considered before filtering.
    pub considered: usize,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of retained entries labeled class 1.
    pub fn class_one_fraction(&self) -> f64 {
        let ones = self.entries.iter().filter(|e| e.label == Label::NonMisleading).count();
        ones as f64 / self.entries.len().max(1) as f64
    }
}

/// Corrected argmax label and its probability. A 0.5/0.5 tie goes to class 0.
pub fn corrected_prediction(cp: &CorrectionParams, logits: [f64; 2]) -> (Label, f64) {
    let p = apply_correction(cp, logits);
    if p[1] > p[0] {
        (Label::NonMisleading, p[1])
    } else {
        (Label::Misinformation, p[0])
    }
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.5 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("tau must lie in (0.5, 1), got {tau}")))
    }
}

/// Pseudo labels from precomputed target logits; keeps entries whose
/// corrected confidence is at least `tau`.
pub fn pseudo_label_logits(cp: &CorrectionParams, logits: &[[f64; 2]], tau: f64) -> Result<PseudoLabeledSet> {
    validate_tau(tau)?;
    let entries: Vec<PseudoLabel> = logits
        .iter()
        .enumerate()
        .filter_map(|(index, &z)| {
            let (label, confidence) = corrected_prediction(cp, z);
            (confidence >= tau).then_some(PseudoLabel {
                index,
                label,
                confidence,
            })
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyPseudoLabels { tau });
    }
    Ok(PseudoLabeledSet {
        entries,
        threshold: tau,
        considered: logits.len(),
    })
}

pub fn pseudo_label(
    model: &ModelParams,
    cp: &CorrectionParams,
    target: &Dataset,
    tau: f64,
) -> Result<PseudoLabeledSet> {
    if target.is_empty() {
        return Err(Error::config("pseudo labeling needs a non-empty target set"));
    }
    pseudo_label_logits(cp, &logits_for(model, &target.featurize(model.hash_dim())), tau)
}
