//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use canmd::data::{Label, SparseVec};
use canmd::mmd::EmbeddingBatch;
use canmd::model::{backward, forward, softmax, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for i in 0..x.len() {
        d2 += (x[i] - y[i]) * (x[i] - y[i]);
    }
    (-d2 / gamma).exp()
}

pub fn naive_mmd_sq(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut aa = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            aa += kernel(&a[i], &a[j], gamma);
        }
    }
    let mut bb = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            bb += kernel(&b[i], &b[j], gamma);
        }
    }
    let mut ab = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            ab += kernel(&a[i], &b[j], gamma);
        }
    }
    aa / (a.len() * a.len()) as f64 + bb / (b.len() * b.len()) as f64 - 2.0 * ab / (a.len() * b.len()) as f64
}

/// Indicator-weighted double sums: source pairs labeled (c1, c1), target
/// pairs (c2, c2), cross pairs (c1, c2). `None` when every term is empty.
pub fn naive_class_mmd(s: &EmbeddingBatch, t: &EmbeddingBatch, c1: Label, c2: Label, gamma: f64) -> Option<f64> {
    let ind = |y1: Label, y2: Label, a: Label, b: Label| if y1 == a && y2 == b { 1.0 } else { 0.0 };
    let mut terms = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            let w = ind(s.labels[i], s.labels[j], c1, c1);
            num += w * kernel(&s.vectors[i], &s.vectors[j], gamma);
            den += w;
        }
    }
    terms.push((num, den, 1.0));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t.len() {
        for j in 0..t.len() {
            let w = ind(t.labels[i], t.labels[j], c2, c2);
            num += w * kernel(&t.vectors[i], &t.vectors[j], gamma);
            den += w;
        }
    }
    terms.push((num, den, 1.0));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..t.len() {
            let w = ind(s.labels[i], t.labels[j], c1, c2);
            num += w * kernel(&s.vectors[i], &t.vectors[j], gamma);
            den += w;
        }
    }
    terms.push((num, den, -2.0));
    let live: Vec<_> = terms.into_iter().filter(|t| t.1 > 0.0).collect();
    if live.is_empty() {
        return None;
    }
    Some(live.iter().map(|(n, d, w)| w * n / d).sum())
}

pub fn naive_contrastive(s: &EmbeddingBatch, t: &EmbeddingBatch, gamma: f64) -> f64 {
    use Label::{Misinformation as C0, NonMisleading as C1};
    let d = |a, b| naive_class_mmd(s, t, a, b, gamma).unwrap_or(0.0);
    d(C0, C0) + d(C1, C1) - 0.5 * (d(C0, C1) + d(C1, C0))
}

pub fn random_label(rng: &mut impl Rng) -> Label {
    if rng.random_bool(0.5) {
        Label::NonMisleading
    } else {
        Label::Misinformation
    }
}

pub fn random_batch(n: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingBatch {
    let vectors = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let labels = (0..n).map(|_| random_label(rng)).collect();
    EmbeddingBatch::new(vectors, labels).unwrap()
}

/// Random batch containing both classes.
pub fn random_batch_both(n: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingBatch {
    let mut b = random_batch(n.max(2), dim, rng);
    b.labels[0] = Label::Misinformation;
    b.labels[1] = Label::NonMisleading;
    b
}

pub fn random_sparse(dim: usize, nnz: usize, rng: &mut impl Rng) -> SparseVec {
    let mut idx: Vec<usize> = (0..nnz).map(|_| rng.random_range(0..dim)).collect();
    idx.sort_unstable();
    idx.dedup();
    SparseVec::from_pairs(dim, idx.into_iter().map(|i| (i, rng.random_range(-1.0..1.0))))
}

/// Differentiable test objective over a batch: weighted NLL on the logits
/// plus a fixed linear functional of phi.
pub struct BatchObjective {
    pub inputs: Vec<SparseVec>,
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
    pub phi_dirs: Vec<Vec<f64>>,
}

impl BatchObjective {
    pub fn random(params: &ModelParams, n: usize, rng: &mut impl Rng) -> Self {
        let dim = params.hash_dim();
        BatchObjective {
            inputs: (0..n).map(|_| random_sparse(dim, 5, rng)).collect(),
            labels: (0..n).map(|_| random_label(rng)).collect(),
            weights: (0..n).map(|_| rng.random_range(0.2..1.0)).collect(),
            phi_dirs: (0..n)
                .map(|_| (0..params.d_hidden()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        }
    }

    pub fn value(&self, params: &ModelParams) -> f64 {
        let mut total = 0.0;
        for n in 0..self.inputs.len() {
            let r = forward(params, &self.inputs[n]);
            let p = softmax(r.logits);
            total -= self.weights[n] * p[self.labels[n].index()].ln();
            total += r.phi.iter().zip(&self.phi_dirs[n]).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    pub fn analytic(&self, params: &ModelParams) -> canmd::model::ParamGradients {
        let records: Vec<_> = self.inputs.iter().map(|x| forward(params, x)).collect();
        let gl: Vec<[f64; 2]> = records
            .iter()
            .enumerate()
            .map(|(n, r)| {
                let mut g = softmax(r.logits);
                g[self.labels[n].index()] -= 1.0;
                [g[0] * self.weights[n], g[1] * self.weights[n]]
            })
            .collect();
        backward(params, &records, &gl, Some(&self.phi_dirs))
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error of `backward` against central differences over
/// every dense parameter and every embedding entry of the touched rows plus
/// one untouched row.
pub fn backward_fd_worst(params: &ModelParams, obj: &BatchObjective) -> f64 {
    let g = obj.analytic(params);
    let mut worst = 0.0f64;
    let mut p = params.clone();
    let mut check = |p: &mut ModelParams, get: &dyn Fn(&mut ModelParams) -> &mut f64, analytic: f64| {
        let orig = *get(p);
        *get(p) = orig + FD_STEP;
        let up = obj.value(p);
        *get(p) = orig - FD_STEP;
        let down = obj.value(p);
        *get(p) = orig;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
    };
    for k in 0..p.hidden_w.data.len() {
        check(&mut p, &|p| &mut p.hidden_w.data[k], g.hidden_w.data[k]);
    }
    for k in 0..p.hidden_b.len() {
        check(&mut p, &|p| &mut p.hidden_b[k], g.hidden_b[k]);
    }
    for k in 0..p.out_w.data.len() {
        check(&mut p, &|p| &mut p.out_w.data[k], g.out_w.data[k]);
    }
    for k in 0..2 {
        check(&mut p, &|p| &mut p.out_b[k], g.out_b[k]);
    }
    let mut rows: Vec<usize> = obj.inputs.iter().flat_map(|x| x.iter().map(|(i, _)| i)).collect();
    rows.sort_unstable();
    rows.dedup();
    if let Some(free) = (0..params.hash_dim()).find(|r| !rows.contains(r)) {
        rows.push(free);
    }
    let cols = params.d_embed();
    for &r in &rows {
        for c in 0..cols {
            check(&mut p, &|p| &mut p.embed.data[r * cols + c], g.embed_at(r, c));
        }
    }
    worst
}
