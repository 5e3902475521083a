mod common;

use canmd::data::Label;
use canmd::mmd::{class_mmd, contrastive_grad, contrastive_loss, median_bandwidth, mmd_sq, EmbeddingBatch};
use canmd::model::ModelParams;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use Label::{Misinformation as C0, NonMisleading as C1};

fn batch_strategy(max_n: usize, dim: usize) -> impl Strategy<Value = EmbeddingBatch> {
    prop::collection::vec((prop::collection::vec(-2.0f64..2.0, dim), any::<bool>()), 1..=max_n).prop_map(|rows| {
        let (vectors, labels) = rows.into_iter().map(|(v, b)| (v, if b { C1 } else { C0 })).unzip();
        EmbeddingBatch::new(vectors, labels).unwrap()
    })
}

fn pair_strategy() -> impl Strategy<Value = (EmbeddingBatch, EmbeddingBatch, f64)> {
    (1usize..=8).prop_flat_map(|dim| (batch_strategy(12, dim), batch_strategy(12, dim), 0.1f64..5.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_sq_matches_double_sums((s, t, gamma) in pair_strategy()) {
        let got = mmd_sq(&s.vectors, &t.vectors, gamma);
        prop_assert!((got - naive_mmd_sq(&s.vectors, &t.vectors, gamma)).abs() <= 1e-9);
    }

    #[test]
    fn class_mmd_matches_indicator_loops((s, t, gamma) in pair_strategy()) {
        for (c1, c2) in [(C0, C0), (C1, C1), (C0, C1), (C1, C0)] {
            match (class_mmd(&s, &t, c1, c2, gamma), naive_class_mmd(&s, &t, c1, c2, gamma)) {
                (Ok(d), Some(o)) => prop_assert!((d.value - o).abs() <= 1e-9),
                (Err(_), None) => {}
                (a, b) => prop_assert!(false, "defined-ness differs: {:?} vs {:?}", a.map(|d| d.value), b),
            }
        }
    }

    #[test]
    fn contrastive_matches_composed_oracle((s, t, gamma) in pair_strategy()) {
        if let Ok(l) = contrastive_loss(&s, &t, gamma) {
            prop_assert!((l.value - naive_contrastive(&s, &t, gamma)).abs() <= 1e-9);
        }
    }

    #[test]
    fn same_class_mmd_is_mmd_of_filtered_lists((s, t, gamma) in pair_strategy()) {
        for c in [C0, C1] {
            let pick = |b: &EmbeddingBatch| -> Vec<Vec<f64>> {
                b.vectors.iter().zip(&b.labels).filter(|(_, &l)| l == c).map(|(v, _)| v.clone()).collect()
            };
            let (a, b) = (pick(&s), pick(&t));
            if !a.is_empty() && !b.is_empty() {
                let d = class_mmd(&s, &t, c, c, gamma).unwrap();
                prop_assert!((d.value - mmd_sq(&a, &b, gamma)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn mmd_five_by_seven_against_oracle() {
    let mut rng = rng(5);
    for _ in 0..20 {
        let a = random_batch(5, 3, &mut rng).vectors;
        let b = random_batch(7, 3, &mut rng).vectors;
        assert!((mmd_sq(&a, &b, 1.3) - naive_mmd_sq(&a, &b, 1.3)).abs() <= 1e-9);
    }
}

#[test]
fn median_bandwidth_of_six_vectors() {
    let mut rng = rng(6);
    for _ in 0..20 {
        let a = random_batch(2, 3, &mut rng).vectors;
        let b = random_batch(4, 3, &mut rng).vectors;
        let all: Vec<&Vec<f64>> = a.iter().chain(&b).collect();
        let mut d: Vec<f64> = Vec::new();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                d.push(all[i].iter().zip(all[j]).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        assert_eq!(d.len(), 15);
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((median_bandwidth(&a, &b) - d[7]).abs() <= 1e-12);
    }
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let mut rng = rng(7);
    for _ in 0..30 {
        let dim = rng.random_range(1..=6);
        let s = random_batch_both(rng.random_range(2..=8), dim, &mut rng);
        let t = random_batch_both(rng.random_range(2..=8), dim, &mut rng);
        let gamma = rng.random_range(0.5..3.0);
        let g = contrastive_grad(&s, &t, gamma).unwrap();
        let f = |s: &EmbeddingBatch, t: &EmbeddingBatch| contrastive_loss(s, t, gamma).unwrap().value;
        for i in 0..s.len() {
            for k in 0..dim {
                let (mut up, mut down) = (s.clone(), s.clone());
                up.vectors[i][k] += FD_STEP;
                down.vectors[i][k] -= FD_STEP;
                let num = (f(&up, &t) - f(&down, &t)) / (2.0 * FD_STEP);
                assert!(
                    rel_err(g.source[i][k], num) <= 1e-4,
                    "source {i},{k}: {} vs {num}",
                    g.source[i][k]
                );
            }
        }
        for j in 0..t.len() {
            for k in 0..dim {
                let (mut up, mut down) = (t.clone(), t.clone());
                up.vectors[j][k] += FD_STEP;
                down.vectors[j][k] -= FD_STEP;
                let num = (f(&s, &up) - f(&s, &down)) / (2.0 * FD_STEP);
                assert!(
                    rel_err(g.target[j][k], num) <= 1e-4,
                    "target {j},{k}: {} vs {num}",
                    g.target[j][k]
                );
            }
        }
    }
}

#[test]
fn backward_matches_finite_differences_on_four_example_batch() {
    let mut rng = rng(8);
    let params = ModelParams::init(64, 3, 4, 1);
    let obj = BatchObjective::random(&params, 4, &mut rng);
    let worst = backward_fd_worst(&params, &obj);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn backward_matches_finite_differences_across_shapes() {
    let mut rng = rng(9);
    for seed in 0..20 {
        let params = ModelParams::init(
            1 << rng.random_range(3..=8),
            rng.random_range(1..=5),
            rng.random_range(1..=6),
            seed,
        );
        let obj = BatchObjective::random(&params, rng.random_range(1..=6), &mut rng);
        let worst = backward_fd_worst(&params, &obj);
        assert!(worst <= 1e-4, "seed {seed}: {worst}");
    }
}
