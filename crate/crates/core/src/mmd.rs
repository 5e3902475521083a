//! Gaussian-kernel discrepancy estimators on hidden representations.
//!
//! All estimators are biased V-statistics: the double sums include self
//! pairs. Sums run in ascending index order so results are reproducible.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Median squared distance below which the heuristic falls back to 1.
const MEDIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    Fixed,
    #[default]
    MedianHeuristic,
}

/// `k(x, y) = exp(-||x - y||^2 / gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Used only in `fixed` mode.
    pub gamma: f64,
    pub bandwidth_mode: BandwidthMode,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gamma: 1.0,
            bandwidth_mode: BandwidthMode::MedianHeuristic,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_mode == BandwidthMode::Fixed && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("fixed kernel gamma must be positive"));
        }
        Ok(())
    }

    /// Bandwidth for one source/target batch pair.
    pub fn resolve(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        match self.bandwidth_mode {
            BandwidthMode::Fixed => self.gamma,
            BandwidthMode::MedianHeuristic => median_bandwidth(a, b),
        }
    }
}

/// Hidden vectors with their (true or pseudo) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if vectors.is_empty() || vectors.len() != labels.len() {
            return Err(Error::config(
                "embedding batch needs equal, non-zero numbers of vectors and labels",
            ));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::config(
                "embedding vectors must share one dimension and be finite",
            ));
        }
        Ok(EmbeddingBatch { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut idx = [Vec::new(), Vec::new()];
        for (i, l) in self.labels.iter().enumerate() {
            idx[l.index()].push(i);
        }
        idx
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    assert_eq!(x.len(), y.len(), "kernel arguments differ in dimension");
    assert!(gamma > 0.0, "gamma must be positive");
    (-sq_dist(x, y) / gamma).exp()
}

/// Median of all pairwise squared distances over the union of both sets,
/// self pairs excluded. Falls back to 1 when there are no pairs or the
/// median is (numerically) zero.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let all: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d = Vec::with_capacity(all.len() * all.len().saturating_sub(1) / 2);
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            d.push(sq_dist(all[i], all[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median < MEDIAN_FLOOR {
        1.0
    } else {
        median
    }
}

fn block_mean(xs: &[Vec<f64>], xi: &[usize], ys: &[Vec<f64>], yj: &[usize], gamma: f64) -> f64 {
    let mut sum = 0.0;
    for &i in xi {
        for &j in yj {
            sum += gaussian_kernel(&xs[i], &ys[j], gamma);
        }
    }
    sum / (xi.len() * yj.len()) as f64
}

/// Squared MMD between two samples.
pub fn mmd_sq(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "mmd_sq needs non-empty samples");
    let ia: Vec<usize> = (0..a.len()).collect();
    let ib: Vec<usize> = (0..b.len()).collect();
    block_mean(a, &ia, a, &ia, gamma) + block_mean(b, &ib, b, &ib, gamma) - 2.0 * block_mean(a, &ia, b, &ib, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMmd {
    pub value: f64,
    /// Terms (of the three) dropped because their class-pair set was empty.
    pub skipped_terms: usize,
}

#[derive(Clone, Copy)]
enum Side {
    Source,
    Target,
}

/// One kernel-mean block of a class-aware discrepancy.
struct Block<'a> {
    left: Side,
    left_idx: &'a [usize],
    right: Side,
    right_idx: &'a [usize],
    weight: f64,
}

fn class_blocks<'a>(s_idx: &'a [Vec<usize>; 2], t_idx: &'a [Vec<usize>; 2], c1: Label, c2: Label) -> [Block<'a>; 3] {
    let (a, b) = (c1.index(), c2.index());
    [
        Block {
            left: Side::Source,
            left_idx: &s_idx[a],
            right: Side::Source,
            right_idx: &s_idx[a],
            weight: 1.0,
        },
        Block {
            left: Side::Target,
            left_idx: &t_idx[b],
            right: Side::Target,
            right_idx: &t_idx[b],
            weight: 1.0,
        },
        Block {
            left: Side::Source,
            left_idx: &s_idx[a],
            right: Side::Target,
            right_idx: &t_idx[b],
            weight: -2.0,
        },
    ]
}

impl Block<'_> {
    fn is_empty(&self) -> bool {
        self.left_idx.is_empty() || self.right_idx.is_empty()
    }
}

fn pick<'a>(side: Side, s: &'a EmbeddingBatch, t: &'a EmbeddingBatch) -> &'a [Vec<f64>] {
    match side {
        Side::Source => &s.vectors,
        Side::Target => &t.vectors,
    }
}

fn class_mmd_indexed(
    s: &EmbeddingBatch,
    t: &EmbeddingBatch,
    s_idx: &[Vec<usize>; 2],
    t_idx: &[Vec<usize>; 2],
    c1: Label,
    c2: Label,
    gamma: f64,
) -> Result<ClassMmd> {
    let mut value = 0.0;
    let mut skipped = 0;
    for blk in class_blocks(s_idx, t_idx, c1, c2) {
        if blk.is_empty() {
            skipped += 1;
            continue;
        }
        value += blk.weight
            * block_mean(
                pick(blk.left, s, t),
                blk.left_idx,
                pick(blk.right, s, t),
                blk.right_idx,
                gamma,
            );
    }
    if skipped == 3 {
        return Err(Error::UndefinedDiscrepancy);
    }
    Ok(ClassMmd {
        value,
        skipped_terms: skipped,
    })
}

/// Class-aware squared MMD between the class-`c1` part of source batch `s`
/// and the class-`c2` part of target batch `t`: the source-source kernel mean
/// runs over `(c1, c1)` pairs, target-target over `(c2, c2)` and
/// source-target over `(c1, c2)`. A term with no such pair is
/// dropped and counted in `skipped_terms`; if all three are dropped the
/// result is [`Error::UndefinedDiscrepancy`].
pub fn class_mmd(s: &EmbeddingBatch, t: &EmbeddingBatch, c1: Label, c2: Label, gamma: f64) -> Result<ClassMmd> {
    class_mmd_indexed(s, t, &s.class_indices(), &t.class_indices(), c1, c2, gamma)
}

/// Class pairs of the contrastive loss with their weights:
/// `D00 + D11 - (D01 + D10) / 2`.
pub const CONTRASTIVE_TERMS: [(Label, Label, f64); 4] = [
    (Label::Misinformation, Label::Misinformation, 1.0),
    (Label::NonMisleading, Label::NonMisleading, 1.0),
    (Label::Misinformation, Label::NonMisleading, -0.5),
    (Label::NonMisleading, Label::Misinformation, -0.5),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub value: f64,
    /// `D00, D11, D01, D10`; `None` where the discrepancy was undefined.
    pub components: [Option<f64>; 4],
    /// Individual kernel-mean terms dropped across all four discrepancies.
    pub skipped_terms: usize,
}

/// Intra-class discrepancy minus half the inter-class discrepancy.
pub fn contrastive_loss(s: &EmbeddingBatch, t: &EmbeddingBatch, gamma: f64) -> Result<ContrastiveLoss> {
    let s_idx = s.class_indices();
    let t_idx = t.class_indices();
    let mut value = 0.0;
    let mut components = [None; 4];
    let mut skipped = 0;
    for (k, &(c1, c2, w)) in CONTRASTIVE_TERMS.iter().enumerate() {
        match class_mmd_indexed(s, t, &s_idx, &t_idx, c1, c2, gamma) {
            Ok(d) => {
                value += w * d.value;
                skipped += d.skipped_terms;
                components[k] = Some(d.value);
            }
            Err(Error::UndefinedDiscrepancy) => skipped += 3,
            Err(e) => return Err(e),
        }
    }
    if components.iter().all(Option::is_none) {
        return Err(Error::UndefinedDiscrepancy);
    }
    Ok(ContrastiveLoss {
        value,
        components,
        skipped_terms: skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: ContrastiveLoss,
    /// d loss / d s.vectors[i]
    pub source: Vec<Vec<f64>>,
    /// d loss / d t.vectors[j]
    pub target: Vec<Vec<f64>>,
}

/// Loss and its exact gradient with respect to every embedding, using
/// `dk(x, y)/dx = -(2 / gamma) (x - y) k(x, y)`. `gamma` is treated as a
/// constant.
pub fn contrastive_grad(s: &EmbeddingBatch, t: &EmbeddingBatch, gamma: f64) -> Result<ContrastiveGrad> {
    let loss = contrastive_loss(s, t, gamma)?;
    let s_idx = s.class_indices();
    let t_idx = t.class_indices();
    let d = s.vectors[0].len();
    let mut gs = vec![vec![0.0; d]; s.len()];
    let mut gt = vec![vec![0.0; d]; t.len()];
    let mut diff = vec![0.0; d];

    for (k, &(c1, c2, w)) in CONTRASTIVE_TERMS.iter().enumerate() {
        if loss.components[k].is_none() {
            continue;
        }
        for blk in class_blocks(&s_idx, &t_idx, c1, c2) {
            if blk.is_empty() {
                continue;
            }
            let coef = w * blk.weight / (blk.left_idx.len() * blk.right_idx.len()) as f64;
            let xs = pick(blk.left, s, t);
            let ys = pick(blk.right, s, t);
            for &i in blk.left_idx {
                for &j in blk.right_idx {
                    let kv = gaussian_kernel(&xs[i], &ys[j], gamma);
                    let scale = coef * (2.0 / gamma) * kv;
                    for (dd, (a, b)) in diff.iter_mut().zip(xs[i].iter().zip(&ys[j])) {
                        *dd = scale * (a - b);
                    }
                    let gl = match blk.left {
                        Side::Source => &mut gs[i],
                        Side::Target => &mut gt[i],
                    };
                    for (g, dd) in gl.iter_mut().zip(&diff) {
                        *g -= dd;
                    }
                    let gr = match blk.right {
                        Side::Source => &mut gs[j],
                        Side::Target => &mut gt[j],
                    };
                    for (g, dd) in gr.iter_mut().zip(&diff) {
                        *g += dd;
                    }
                }
            }
        }
    }
    Ok(ContrastiveGrad {
        loss,
        source: gs,
        target: gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use Label::{Misinformation as C0, NonMisleading as C1};

    fn random_vecs(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn random_batch(n: usize, d: usize, rng: &mut impl Rng) -> EmbeddingBatch {
        let labels = (0..n)
            .map(|i| Label::from_index((i + rng.random_range(0..2)) % 2).unwrap())
            .collect();
        EmbeddingBatch::new(random_vecs(n, d, rng), labels).unwrap()
    }

    #[test]
    fn kernel_basics() {
        let x = [1.0, 2.0];
        assert_eq!(gaussian_kernel(&x, &x, 0.7), 1.0);
        let y = [1.0, 4.0]; // squared distance 4
        assert!((gaussian_kernel(&x, &y, 4.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(&x, &y, 4.0) - 0.367879).abs() < 1e-6);
        assert_eq!(gaussian_kernel(&x, &y, 2.5), gaussian_kernel(&y, &x, 2.5));
    }

    #[test]
    fn median_fallback_and_single_pair() {
        let same = vec![vec![0.5, 0.5]; 4];
        assert_eq!(median_bandwidth(&same, &same), 1.0);
        assert_eq!(median_bandwidth(&[vec![0.0, 0.0]], &[vec![2.0, 0.0]]), 4.0);
        assert_eq!(median_bandwidth(&[vec![1.0]], &[]), 1.0);
    }

    #[test]
    fn median_matches_sorted_enumeration() {
        let mut rng = crate::rng_from_seed(11);
        let a = random_vecs(2, 3, &mut rng);
        let b = random_vecs(4, 3, &mut rng);
        let all: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let mut d = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                if i < j {
                    d.push(all[i].iter().zip(&all[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>());
                }
            }
        }
        assert_eq!(d.len(), 15);
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(median_bandwidth(&a, &b), d[7]);
    }

    #[test]
    fn mmd_identical_and_singletons() {
        let mut rng = crate::rng_from_seed(3);
        let a = random_vecs(5, 3, &mut rng);
        assert!(mmd_sq(&a, &a, 1.3).abs() <= 1e-12);
        let x = vec![0.1, 0.2];
        let y = vec![-0.3, 0.9];
        let expect = 2.0 - 2.0 * gaussian_kernel(&x, &y, 0.8);
        assert!((mmd_sq(&[x], &[y], 0.8) - expect).abs() < 1e-15);
    }

    #[test]
    fn class_mmd_undefined_when_class_absent() {
        let s = EmbeddingBatch::new(vec![vec![0.0]], vec![C0]).unwrap();
        let t = EmbeddingBatch::new(vec![vec![1.0]], vec![C0]).unwrap();
        assert!(matches!(
            class_mmd(&s, &t, C1, C1, 1.0),
            Err(Error::UndefinedDiscrepancy)
        ));
        let l = contrastive_loss(&s, &t, 1.0).unwrap();
        assert_eq!(l.components[1], None);
        // D11 drops all three terms, D01 and D10 two each.
        assert_eq!(l.skipped_terms, 7);
    }

    #[test]
    fn partial_skip_is_recorded() {
        // T has no class 1: D01 keeps only its source-source term.
        let s = EmbeddingBatch::new(vec![vec![0.0], vec![1.0]], vec![C0, C1]).unwrap();
        let t = EmbeddingBatch::new(vec![vec![0.5]], vec![C0]).unwrap();
        let d = class_mmd(&s, &t, C0, C1, 1.0).unwrap();
        assert_eq!(d.skipped_terms, 2);
        assert!((d.value - 1.0).abs() < 1e-15);
        let d = class_mmd(&s, &t, C1, C0, 1.0).unwrap();
        assert_eq!(d.skipped_terms, 0);
        assert!((d.value - (2.0 - 2.0 * gaussian_kernel(&[1.0], &[0.5], 1.0))).abs() < 1e-15);
    }

    #[test]
    fn identical_batches_give_nonpositive_loss() {
        let mut rng = crate::rng_from_seed(5);
        let s = random_batch(8, 3, &mut rng);
        let l = contrastive_loss(&s, &s, 0.9).unwrap();
        assert!(l.components[0].unwrap().abs() <= 1e-12);
        assert!(l.components[1].unwrap().abs() <= 1e-12);
        assert!(l.value <= 1e-12);
    }

    #[test]
    fn separated_clusters_give_strongly_negative_loss() {
        // Class 0 at the origin, class 1 at distance 10 in both domains.
        let mk = |off: f64| {
            EmbeddingBatch::new(
                vec![
                    vec![off, 0.0],
                    vec![-off, 0.0],
                    vec![10.0 + off, 0.0],
                    vec![10.0 - off, 0.0],
                ],
                vec![C0, C0, C1, C1],
            )
            .unwrap()
        };
        let (s, t) = (mk(0.01), mk(0.02));
        let l = contrastive_loss(&s, &t, 1.0).unwrap();
        // Inter-class terms approach 2 each, intra-class approach 0.
        assert!(l.value < -1.99, "{}", l.value);
    }

    #[test]
    fn gradient_sums_to_zero_and_respects_mirror_symmetry() {
        let mut rng = crate::rng_from_seed(8);
        let s = random_batch(6, 4, &mut rng);
        let t = random_batch(5, 4, &mut rng);
        let g = contrastive_grad(&s, &t, 1.7).unwrap();
        for c in 0..4 {
            let total: f64 = g.source.iter().chain(&g.target).map(|v| v[c]).sum();
            assert!(total.abs() < 1e-9);
        }

        // Mirror layout: x and -x with equal labels; gradients flip sign.
        let v = vec![vec![0.3, -0.2], vec![-0.3, 0.2], vec![1.0, 0.5], vec![-1.0, -0.5]];
        let b = EmbeddingBatch::new(v, vec![C0, C0, C1, C1]).unwrap();
        let g = contrastive_grad(&b, &b, 1.0).unwrap();
        for (p, q) in [(0, 1), (2, 3)] {
            for c in 0..2 {
                assert!((g.source[p][c] + g.source[q][c]).abs() < 1e-12);
                assert!((g.target[p][c] + g.target[q][c]).abs() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn mmd_symmetric_nonnegative_permutation_invariant(seed in 0u64..500, na in 1usize..7, nb in 1usize..7) {
            let mut rng = crate::rng_from_seed(seed);
            let a = random_vecs(na, 3, &mut rng);
            let b = random_vecs(nb, 3, &mut rng);
            let ab = mmd_sq(&a, &b, 0.5);
            proptest::prop_assert!(ab >= -1e-12);
            proptest::prop_assert!((ab - mmd_sq(&b, &a, 0.5)).abs() <= 1e-12);
            let mut ar = a.clone();
            ar.reverse();
            proptest::prop_assert!((ab - mmd_sq(&ar, &b, 0.5)).abs() <= 1e-12);
        }

        #[test]
        fn class_mmd_reduces_to_mmd_on_filtered(seed in 0u64..500) {
            let mut rng = crate::rng_from_seed(seed);
            let s = random_batch(7, 3, &mut rng);
            let t = random_batch(6, 3, &mut rng);
            for c in Label::ALL {
                let fs: Vec<Vec<f64>> = s.vectors.iter().zip(&s.labels).filter(|(_, l)| **l == c).map(|(v, _)| v.clone()).collect();
                let ft: Vec<Vec<f64>> = t.vectors.iter().zip(&t.labels).filter(|(_, l)| **l == c).map(|(v, _)| v.clone()).collect();
                if fs.is_empty() || ft.is_empty() {
                    continue;
                }
                let d = class_mmd(&s, &t, c, c, 0.9).unwrap();
                proptest::prop_assert!((d.value - mmd_sq(&fs, &ft, 0.9)).abs() <= 1e-12);
            }
        }
    }
}
