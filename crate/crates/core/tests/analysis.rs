mod common;

use common::oracle::{ap_definition, auc_pairs};
use molfrag::analysis::*;
use molfrag::model::{sample_positions_by_frequency, stream};
use molfrag::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>) {
    let n = rng.random_range(2..=300);
    let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    y[0] = true;
    y[1] = false;
    // Coarse scores so ties occur.
    let s = (0..n).map(|_| (rng.random_range(0..40) as f64) / 7.0).collect();
    (y, s)
}

#[test]
fn auc_and_ap_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (y, s) = random_instance(&mut rng);
        assert!((roc_auc(&y, &s).unwrap() - auc_pairs(&y, &s)).abs() <= 1e-9);
        assert!((average_precision(&y, &s).unwrap() - ap_definition(&y, &s)).abs() <= 1e-9);
    }
}

#[test]
fn nmi_null_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    let y: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    assert!(nmi(&x, &y).unwrap() < 0.05);
    assert!((nmi(&x, &x).unwrap() - 1.0).abs() < 1e-12);
}

fn random_maps(rng: &mut ChaCha8Rng, layers: usize, heads: usize, n: usize) -> Vec<Vec<Tensor>> {
    (0..layers)
        .map(|_| {
            (0..heads)
                .map(|_| {
                    let mut t = Tensor::zeros(n, n);
                    for i in 0..n {
                        let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                        let s: f64 = row.iter().sum();
                        for j in 0..n {
                            t.set(i, j, row[j] / s);
                        }
                    }
                    t
                })
                .collect()
        })
        .collect()
}

#[test]
fn two_layer_rollout_is_explicit_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5;
    let maps = random_maps(&mut rng, 2, 3, n);
    let pad = vec![false; n];
    // Oracle: average heads, add identity, normalize rows; multiply by hand.
    let hat = |layer: &[Tensor]| {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] =
                    layer.iter().map(|h| h.get(i, j)).sum::<f64>() / layer.len() as f64 + f64::from(u8::from(i == j));
            }
            let s: f64 = a[i].iter().sum();
            a[i].iter_mut().for_each(|x| *x /= s);
        }
        a
    };
    let (a1, a2) = (hat(&maps[0]), hat(&maps[1]));
    let r = attention_rollout(&maps, &pad).unwrap();
    for i in 0..n {
        for j in 0..n {
            let expect: f64 = (0..n).map(|k| a2[i][k] * a1[k][j]).sum();
            assert!((r.rollout.get(i, j) - expect).abs() < 1e-14);
        }
    }
    assert_eq!(r.scores.len(), n - 1);
}

#[test]
fn mask_sampling_frequencies() {
    let mut first = 0usize;
    let draws = 100_000;
    for i in 0..draws {
        let mut rng = stream(0, 9, 0, i as u64);
        let p = sample_positions_by_frequency(&[1.0, 4.0], 0.2, &mut rng);
        assert_eq!(p.len(), 1);
        first += usize::from(p[0] == 0);
    }
    assert!((first as f64 / draws as f64 - 2.0 / 3.0).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollout_rows_sum_to_one(seed in 0u64..10_000, layers in 1usize..4, n in 2usize..8, n_pad in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps = random_maps(&mut rng, layers, 2, n + n_pad);
        let pad: Vec<bool> = (0..n + n_pad).map(|i| i >= n).collect();
        let r = attention_rollout(&maps, &pad).unwrap();
        for i in 0..n {
            let s: f64 = (0..n).map(|j| r.rollout.get(i, j)).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        prop_assert!(r.scores.iter().all(|s| s.is_finite() && *s >= 0.0));
    }

    #[test]
    fn nmi_symmetric_and_bounded(seed in 0u64..10_000, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<usize> = (0..50).map(|_| rng.random_range(0..k)).collect();
        let y: Vec<usize> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let a = nmi(&x, &y).unwrap();
        prop_assert!((a - nmi(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_oracle_small(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, s) = random_instance(&mut rng);
        prop_assert!((roc_auc(&y, &s).unwrap() - auc_pairs(&y, &s)).abs() <= 1e-9);
    }
}
