//! Classifier `f` and feature map `phi`: a hashed-feature embedding followed
//! by one tanh hidden layer and a two-way linear head.
//!
//! ```text
//! e      = embed^T x                (d_embed)
//! pre    = hidden_w^T e + hidden_b  (d_hidden)
//! phi    = tanh(pre)
//! logits = out_w^T phi + out_b      (2)
//! ```
//!
//! Gradients are computed by hand; `backward` takes upstream gradients for
//! both the logits and `phi` so one pass serves the NLL and the contrastive
//! loss together.

pub mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerKind};
pub(crate) use train::ba_on;
pub use train::{predict, pretrain, EpochRecord, Pretrained, TrainConfig};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Uniform;

use crate::data::{Label, SparseVec};

/// Probability floor applied inside the NLL.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: Matrix,
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: [f64; 2],
}

impl ModelParams {
    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` where `fan_in`
    /// is the input width of each layer (`hash_dim` for the embedding);
    /// biases zero.
    pub fn init(hash_dim: usize, d_embed: usize, d_hidden: usize, seed: u64) -> Self {
        assert!(
            hash_dim > 0 && d_embed > 0 && d_hidden > 0,
            "model dims must be positive"
        );
        let mut rng = crate::rng_from_seed(seed);
        let mut fill = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Matrix {
                rows,
                cols,
                data: (0..rows * cols).map(|_| rng.sample(dist)).collect(),
            }
        };
        let embed = fill(hash_dim, d_embed);
        let hidden_w = fill(d_embed, d_hidden);
        let out_w = fill(d_hidden, 2);
        ModelParams {
            embed,
            hidden_w,
            hidden_b: vec![0.0; d_hidden],
            out_w,
            out_b: [0.0; 2],
        }
    }

    pub fn hash_dim(&self) -> usize {
        self.embed.rows
    }

    pub fn d_embed(&self) -> usize {
        self.embed.cols
    }

    pub fn d_hidden(&self) -> usize {
        self.hidden_b.len()
    }

    pub fn all_finite(&self) -> bool {
        self.embed
            .data
            .iter()
            .chain(&self.hidden_w.data)
            .chain(&self.hidden_b)
            .chain(&self.out_w.data)
            .chain(&self.out_b)
            .all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &SparseVec) -> ForwardRecord {
        forward(self, x)
    }
}

/// Everything `backward` needs for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub input: SparseVec,
    pub embedded: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub phi: Vec<f64>,
    pub logits: [f64; 2],
}

pub fn forward(params: &ModelParams, x: &SparseVec) -> ForwardRecord {
    assert_eq!(x.dim, params.hash_dim(), "input dim does not match hash_dim");
    let d_embed = params.d_embed();
    let d_hidden = params.d_hidden();

    let mut embedded = vec![0.0; d_embed];
    for (i, v) in x.iter() {
        for (e, w) in embedded.iter_mut().zip(params.embed.row(i)) {
            *e += v * w;
        }
    }

    let mut pre = params.hidden_b.clone();
    for (k, &e) in embedded.iter().enumerate() {
        for (p, w) in pre.iter_mut().zip(params.hidden_w.row(k)) {
            *p += e * w;
        }
    }
    debug_assert_eq!(pre.len(), d_hidden);
    let phi: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();

    let mut logits = params.out_b;
    for (j, &h) in phi.iter().enumerate() {
        let row = params.out_w.row(j);
        logits[0] += h * row[0];
        logits[1] += h * row[1];
    }

    ForwardRecord {
        input: x.clone(),
        embedded,
        pre_activation: pre,
        phi,
        logits,
    }
}

/// Numerically stable two-way softmax.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    assert!(
        logits.iter().all(|l| l.is_finite()),
        "softmax needs finite logits, got {logits:?}"
    );
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// `-ln(max(p[label], PROB_FLOOR))`.
pub fn nll_loss(probs: [f64; 2], label: Label) -> f64 {
    -probs[label.index()].max(PROB_FLOOR).ln()
}

/// Gradient of `nll_loss(softmax(z), label)` with respect to `z`. Zero once
/// the floor is active.
pub fn nll_grad_logits(probs: [f64; 2], label: Label) -> [f64; 2] {
    if probs[label.index()] < PROB_FLOOR {
        return [0.0; 2];
    }
    let mut g = probs;
    g[label.index()] -= 1.0;
    g
}

/// Gradients for every parameter block. Embedding gradients are kept per
/// touched row, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub embed_rows: BTreeMap<usize, Vec<f64>>,
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: [f64; 2],
}

impl ParamGradients {
    pub fn zeros(params: &ModelParams) -> Self {
        ParamGradients {
            embed_rows: BTreeMap::new(),
            hidden_w: Matrix::zeros(params.d_embed(), params.d_hidden()),
            hidden_b: vec![0.0; params.d_hidden()],
            out_w: Matrix::zeros(params.d_hidden(), 2),
            out_b: [0.0; 2],
        }
    }

    /// Largest absolute entry across all blocks.
    pub fn max_abs(&self) -> f64 {
        self.embed_rows
            .values()
            .flatten()
            .chain(&self.hidden_w.data)
            .chain(&self.hidden_b)
            .chain(&self.out_w.data)
            .chain(&self.out_b)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Dense embedding gradient entry, zero for untouched rows.
    pub fn embed_at(&self, row: usize, col: usize) -> f64 {
        self.embed_rows.get(&row).map_or(0.0, |r| r[col])
    }

    pub fn add_assign(&mut self, other: &ParamGradients) {
        for (row, g) in &other.embed_rows {
            let dst = self.embed_rows.entry(*row).or_insert_with(|| vec![0.0; g.len()]);
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
        for (d, s) in self.hidden_w.data.iter_mut().zip(&other.hidden_w.data) {
            *d += s;
        }
        for (d, s) in self.hidden_b.iter_mut().zip(&other.hidden_b) {
            *d += s;
        }
        for (d, s) in self.out_w.data.iter_mut().zip(&other.out_w.data) {
            *d += s;
        }
        self.out_b[0] += other.out_b[0];
        self.out_b[1] += other.out_b[1];
    }
}

/// Backpropagates upstream gradients through a batch of forward records.
///
/// `grad_logits[n]` is dL/d logits for record `n`; `grad_phi`, when given,
/// adds dL/d phi from losses defined on the hidden representation.
/// Contributions are accumulated in record order.
#[allow(clippy::needless_range_loop)]
pub fn backward(
    params: &ModelParams,
    records: &[ForwardRecord],
    grad_logits: &[[f64; 2]],
    grad_phi: Option<&[Vec<f64>]>,
) -> ParamGradients {
    assert_eq!(records.len(), grad_logits.len(), "one logit gradient per record");
    if let Some(gp) = grad_phi {
        assert_eq!(records.len(), gp.len(), "one phi gradient per record");
    }
    let d_embed = params.d_embed();
    let d_hidden = params.d_hidden();
    let mut grads = ParamGradients::zeros(params);

    let mut g_phi = vec![0.0; d_hidden];
    let mut g_pre = vec![0.0; d_hidden];
    let mut g_emb = vec![0.0; d_embed];
    for (n, rec) in records.iter().enumerate() {
        let gl = grad_logits[n];
        grads.out_b[0] += gl[0];
        grads.out_b[1] += gl[1];
        for j in 0..d_hidden {
            let row = grads.out_w.row_mut(j);
            row[0] += rec.phi[j] * gl[0];
            row[1] += rec.phi[j] * gl[1];
            let w = params.out_w.row(j);
            g_phi[j] = w[0] * gl[0] + w[1] * gl[1];
        }
        if let Some(gp) = grad_phi {
            assert_eq!(gp[n].len(), d_hidden, "phi gradient has wrong width");
            for (g, u) in g_phi.iter_mut().zip(&gp[n]) {
                *g += u;
            }
        }
        for j in 0..d_hidden {
            g_pre[j] = g_phi[j] * (1.0 - rec.phi[j] * rec.phi[j]);
            grads.hidden_b[j] += g_pre[j];
        }
        for k in 0..d_embed {
            let e = rec.embedded[k];
            let wrow = params.hidden_w.row(k);
            let grow = grads.hidden_w.row_mut(k);
            let mut acc = 0.0;
            for j in 0..d_hidden {
                grow[j] += e * g_pre[j];
                acc += wrow[j] * g_pre[j];
            }
            g_emb[k] = acc;
        }
        for (i, v) in rec.input.iter() {
            let row = grads.embed_rows.entry(i).or_insert_with(|| vec![0.0; d_embed]);
            for (r, g) in row.iter_mut().zip(&g_emb) {
                *r += v * g;
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SparseVec;
    use rand::Rng;

    #[test]
    fn init_is_deterministic() {
        assert_eq!(ModelParams::init(64, 4, 8, 3), ModelParams::init(64, 4, 8, 3));
        assert_ne!(ModelParams::init(64, 4, 8, 3), ModelParams::init(64, 4, 8, 4));
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let p = ModelParams::init(64, 4, 8, 1);
        assert_eq!(p.hidden_b, vec![0.0; 8]);
        assert_eq!(p.out_b, [0.0; 2]);
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.out_w.data.iter().all(|w| w.abs() <= bound));
        assert!(p.embed.data.iter().all(|w| w.abs() <= 1.0 / 8.0));
        assert!(p.hidden_w.data.iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn zero_input_forward() {
        let mut p = ModelParams::init(16, 3, 4, 0);
        p.hidden_b = vec![0.1, -0.2, 0.3, 0.0];
        p.out_b = [0.5, -0.5];
        let r = forward(&p, &SparseVec::empty(16));
        let phi: Vec<f64> = p.hidden_b.iter().map(|b| b.tanh()).collect();
        assert_eq!(r.phi, phi);
        let mut logits = p.out_b;
        for j in 0..4 {
            logits[0] += phi[j] * p.out_w.get(j, 0);
            logits[1] += phi[j] * p.out_w.get(j, 1);
        }
        assert_eq!(r.logits, logits);
    }

    #[test]
    fn doubling_input_doubles_pre_activation() {
        let p = ModelParams::init(32, 5, 6, 2);
        let x = SparseVec::from_pairs(32, [(1, 0.3), (7, -1.25), (30, 2.0)]);
        let a = forward(&p, &x);
        let b = forward(&p, &x.scaled(2.0));
        for (u, v) in a.pre_activation.iter().zip(&b.pre_activation) {
            assert_eq!(2.0 * u, *v);
        }
        assert_eq!(forward(&p, &x), a);
    }

    #[test]
    #[should_panic]
    fn forward_rejects_dim_mismatch() {
        let p = ModelParams::init(32, 2, 2, 0);
        forward(&p, &SparseVec::empty(16));
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax([0.0, 0.0]), [0.5, 0.5]);
        assert!(softmax([1000.0, 0.0])[0] > 1.0 - 1e-12);
        let p = softmax([3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn softmax_rejects_nan() {
        softmax([f64::NAN, 0.0]);
    }

    #[test]
    fn nll_values() {
        assert!((nll_loss([0.5, 0.5], Label::NonMisleading) - 2f64.ln()).abs() < 1e-15);
        assert!(nll_loss([1.0 - 1e-12, 1e-12], Label::Misinformation) < 1e-11);
        assert!((nll_loss([0.25, 0.75], Label::Misinformation) - 4f64.ln()).abs() < 1e-15);
        assert!((nll_loss([1.0, 0.0], Label::NonMisleading) - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    fn random_batch(p: &ModelParams, n: usize, rng: &mut impl Rng) -> Vec<ForwardRecord> {
        (0..n)
            .map(|_| {
                let pairs: Vec<(usize, f64)> = (0..4)
                    .map(|_| (rng.random_range(0..p.hash_dim()), rng.random_range(-1.0..1.0)))
                    .collect();
                forward(p, &SparseVec::from_pairs(p.hash_dim(), pairs))
            })
            .collect()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = ModelParams::init(16, 3, 4, 0);
        let mut rng = crate::rng_from_seed(0);
        let recs = random_batch(&p, 3, &mut rng);
        let g = backward(&p, &recs, &[[0.0; 2]; 3], Some(&vec![vec![0.0; 4]; 3]));
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn batch_gradient_is_sum_of_per_example() {
        let p = ModelParams::init(16, 3, 4, 5);
        let mut rng = crate::rng_from_seed(1);
        let recs = random_batch(&p, 4, &mut rng);
        let gl: Vec<[f64; 2]> = (0..4).map(|_| [rng.random(), rng.random()]).collect();
        let gp: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
        let total = backward(&p, &recs, &gl, Some(&gp));
        let mut summed = ParamGradients::zeros(&p);
        for n in 0..4 {
            summed.add_assign(&backward(&p, &recs[n..n + 1], &gl[n..n + 1], Some(&gp[n..n + 1])));
        }
        let mut diff = total.clone();
        // total - summed
        let mut neg = summed.clone();
        neg.embed_rows.values_mut().flatten().for_each(|v| *v = -*v);
        neg.hidden_w.data.iter_mut().for_each(|v| *v = -*v);
        neg.hidden_b.iter_mut().for_each(|v| *v = -*v);
        neg.out_w.data.iter_mut().for_each(|v| *v = -*v);
        neg.out_b.iter_mut().for_each(|v| *v = -*v);
        diff.add_assign(&neg);
        assert!(diff.max_abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let p = softmax([a, b]);
            proptest::prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
            proptest::prop_assert!(p[0] >= 0.0 && p[1] >= 0.0);
        }
    }
}
