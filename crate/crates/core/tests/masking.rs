use kaleido::masking::{
    actor_reset, adaptive_coefficient, compute_mask, critic_cyclic_reset, derive_masks, diversity_gradient_s,
    diversity_objective, layer_weights, sparsity_stats, str_transform, Granularity, MaskSet, Reinit, ThresholdSet,
};
use kaleido::tensor::{sigmoid, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct evaluation of the layer-weighted ordered-pair L1 distance.
fn objective_oracle(theta: &[Vec<f64>], masks: &[Vec<Vec<f64>>], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..masks.len() {
        for j in 0..masks.len() {
            if i == j {
                continue;
            }
            for (l, t) in theta.iter().enumerate() {
                let mut layer = 0.0;
                for k in 0..t.len() {
                    layer += (t[k] * (masks[i][l][k] - masks[j][l][k])).abs();
                }
                total += weights[l] * layer;
            }
        }
    }
    total
}

fn mask_oracle(theta: &[f64], s: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(s)
        .map(|(t, sv)| if t.abs() > oracle_sigmoid(*sv) { 1.0 } else { 0.0 })
        .collect()
}

fn vals(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #[test]
    fn mask_is_strict_threshold(theta in vals(24, -1.0, 1.0), s in vals(24, -6.0, 3.0)) {
        let m = compute_mask(&tensor(&[4, 6], theta.clone()), &tensor(&[4, 6], s.clone())).unwrap();
        prop_assert_eq!(m.data().to_vec(), mask_oracle(&theta, &s));
    }

    #[test]
    fn str_keeps_sign_and_shrinks(theta in vals(24, -1.0, 1.0), s in vals(24, -6.0, 3.0)) {
        let th = tensor(&[4, 6], theta.clone());
        let st = tensor(&[4, 6], s.clone());
        let y = str_transform(&th, &st).unwrap();
        let m = compute_mask(&th, &st).unwrap();
        for k in 0..24 {
            let v = y.data()[k];
            prop_assert!(v.abs() <= theta[k].abs());
            prop_assert!(v == 0.0 || v.signum() == theta[k].signum());
            prop_assert_eq!(v != 0.0, m.data()[k] == 1.0);
            let expected = theta[k].signum() * (theta[k].abs() - oracle_sigmoid(s[k])).max(0.0);
            prop_assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn objective_matches_direct_sum(
        theta in vals(12, -1.0, 1.0),
        bits in prop::collection::vec(prop::bool::ANY, 36),
        base in 1.0f64..3.0,
    ) {
        let theta_layers = vec![theta[..8].to_vec(), theta[8..].to_vec()];
        let masks: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|i| {
                let b: Vec<f64> = bits[i * 12..(i + 1) * 12].iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
                vec![b[..8].to_vec(), b[8..].to_vec()]
            })
            .collect();
        let w = layer_weights(2, base);
        let t0 = tensor(&[2, 4], theta_layers[0].clone());
        let t1 = tensor(&[4, 1], theta_layers[1].clone());
        let sets: Vec<MaskSet> = masks
            .iter()
            .map(|m| MaskSet { layers: vec![tensor(&[2, 4], m[0].clone()), tensor(&[4, 1], m[1].clone())], derived_at_step: 0 })
            .collect();
        let got = diversity_objective(&[&t0, &t1], &sets, &w).unwrap();
        let want = objective_oracle(&theta_layers, &masks, &w);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn masks_are_idempotent(theta in vals(16, -1.0, 1.0), s in vals(16, -5.0, 1.0)) {
        let th = tensor(&[4, 4], theta);
        let ts = ThresholdSet { owner: 0, layers: vec![tensor(&[4, 4], s)], init_value: -5.0, granularity: Granularity::Weight };
        let a = derive_masks(&[&th], &ts, 3).unwrap();
        let b = derive_masks(&[&th], &ts, 3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sparsity_matches_count(bits in prop::collection::vec(prop::bool::ANY, 3 * 20)) {
        let masks: Vec<MaskSet> = (0..3)
            .map(|i| {
                let b: Vec<f64> = bits[i * 20..(i + 1) * 20].iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
                MaskSet { layers: vec![tensor(&[2, 6], b[..12].to_vec()), tensor(&[8], b[12..].to_vec())], derived_at_step: 0 }
            })
            .collect();
        let stats = sparsity_stats(&masks);
        let mut zeros = 0;
        for i in 0..3 {
            let own = &bits[i * 20..(i + 1) * 20];
            zeros += own.iter().filter(|&&x| !x).count();
            let l0 = own[..12].iter().filter(|&&x| !x).count() as f64 / 12.0;
            prop_assert_eq!(stats.per_layer_sparsity[i][0], l0);
            for j in 0..3 {
                let other = &bits[j * 20..(j + 1) * 20];
                let diff = own.iter().zip(other).filter(|(a, b)| a != b).count() as f64 / 20.0;
                prop_assert!((stats.pairwise_hamming[i][j] - diff).abs() < 1e-15);
            }
        }
        prop_assert!((stats.overall_sparsity - zeros as f64 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn reset_only_touches_dead_coordinates(seed in 0u64..1000, rho in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [[3, 4], [4, 4], [4, 5], [5, 2]];
        let theta: Vec<Tensor> = shapes
            .iter()
            .map(|s| tensor(s, (0..s[0] * s[1]).map(|_| rng.random_range(-0.5..0.5)).collect()))
            .collect();
        let sets: Vec<ThresholdSet> = (0..3)
            .map(|owner| ThresholdSet {
                owner,
                layers: shapes.iter().map(|s| tensor(s, (0..s[0] * s[1]).map(|_| rng.random_range(-3.0..0.5)).collect())).collect(),
                init_value: -5.0,
                granularity: Granularity::Weight,
            })
            .collect();
        let mut theta_after = theta.clone();
        let mut sets_after = sets.clone();
        let reinit = Reinit { weight_bounds: vec![0.5; 4], threshold_value: -5.0 };
        let count = actor_reset(&mut theta_after, &mut sets_after, rho, &mut rng, &reinit).unwrap();
        let mut changed = 0;
        for l in 0..4 {
            for k in 0..theta[l].len() {
                let live = sets.iter().any(|ts| theta[l].data()[k].abs() > oracle_sigmoid(ts.layers[l].data()[k]));
                let touched = theta_after[l].data()[k] != theta[l].data()[k]
                    || sets.iter().zip(&sets_after).any(|(a, b)| a.layers[l].data()[k] != b.layers[l].data()[k]);
                if live || l == 0 {
                    prop_assert!(!touched, "layer {} coordinate {} changed", l, k);
                }
                if touched {
                    changed += 1;
                }
            }
        }
        prop_assert!(changed <= count);
    }

    #[test]
    fn coefficient_is_nonnegative(task in -100.0f64..100.0, div in 0.0f64..100.0, ratio in 0.0f64..5.0) {
        let c = adaptive_coefficient(task, div, ratio);
        prop_assert!(c >= 0.0 && c.is_finite());
        prop_assert!((c * div.max(1e-8) - ratio * task.abs()).abs() <= 1e-9 * (ratio * task.abs()).max(1.0));
    }
}

#[test]
fn objective_worked_example() {
    let theta = tensor(&[1, 2], vec![1.0, -2.0]);
    let m1 = MaskSet { layers: vec![tensor(&[1, 2], vec![1.0, 0.0])], derived_at_step: 0 };
    let m2 = MaskSet { layers: vec![tensor(&[1, 2], vec![0.0, 1.0])], derived_at_step: 0 };
    assert_eq!(diversity_objective(&[&theta], &[m1, m2], &[2.0]).unwrap(), 12.0);
}

#[test]
fn one_ascent_step_pushes_tied_masks_apart() {
    // both owners keep both weights, owner 0 by the thinner margin
    let theta = tensor(&[1, 2], vec![0.5, -0.5]);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let sets = vec![
        ThresholdSet {
            owner: 0,
            layers: vec![tensor(&[1, 2], vec![logit(0.5 - 1e-5), logit(0.5 - 1e-5)])],
            init_value: 0.0,
            granularity: Granularity::Weight,
        },
        ThresholdSet {
            owner: 1,
            layers: vec![tensor(&[1, 2], vec![logit(0.5 - 2e-5), logit(0.5 - 2e-5)])],
            init_value: 0.0,
            granularity: Granularity::Weight,
        },
    ];
    let weights = [2.0];
    let j = |sets: &[ThresholdSet]| {
        let masks: Vec<Vec<Vec<f64>>> = sets
            .iter()
            .map(|ts| vec![mask_oracle(theta.data(), ts.layers[0].data())])
            .collect();
        objective_oracle(&[theta.data().to_vec()], &masks, &weights)
    };
    assert_eq!(j(&sets), 0.0);
    let grads = diversity_gradient_s(&[&theta], &sets, &weights).unwrap();
    let mut stepped = sets.clone();
    for (ts, g) in stepped.iter_mut().zip(&grads) {
        for (s, gv) in ts.layers[0].data_mut().iter_mut().zip(g[0].data()) {
            *s += 1e-3 * gv;
        }
    }
    assert!(j(&stepped) > j(&sets));
}

#[test]
fn reset_count_is_binomial() {
    let n = 10_000;
    let mut theta = vec![tensor(&[100, 100], vec![0.001; n])];
    let mut sets = vec![
        ThresholdSet { owner: 0, layers: vec![Tensor::filled(&[100, 100], 0.0)], init_value: -5.0, granularity: Granularity::Weight },
        ThresholdSet { owner: 1, layers: vec![Tensor::filled(&[100, 100], 0.0)], init_value: -5.0, granularity: Granularity::Weight },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let reinit = Reinit { weight_bounds: vec![0.1], threshold_value: -5.0 };
    let count = actor_reset(&mut theta, &mut sets, 0.5, &mut rng, &reinit).unwrap();
    assert!((4850..=5150).contains(&count), "{count}");
}

#[test]
fn cyclic_reset_visits_each_member_once() {
    let k = 5;
    let mut sets: Vec<ThresholdSet> = (0..k)
        .map(|owner| ThresholdSet {
            owner,
            layers: vec![Tensor::filled(&[2, 2], owner as f64)],
            init_value: -9.0,
            granularity: Granularity::Weight,
        })
        .collect();
    let mut cursor = 2;
    let mut resets = vec![0; k];
    for _ in 0..k {
        let before = sets.clone();
        let target = cursor;
        cursor = critic_cyclic_reset(&mut sets, cursor);
        for m in 0..k {
            if m == target {
                assert!(sets[m].layers[0].data().iter().all(|&v| v == -9.0));
                resets[m] += 1;
            } else {
                assert_eq!(sets[m], before[m]);
            }
        }
    }
    assert_eq!(resets, vec![1; k]);
    assert_eq!(cursor, 2);
    assert_eq!(critic_cyclic_reset(&mut sets, 4), 0);
}

#[test]
fn low_thresholds_keep_every_nonzero_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = tensor(&[8, 8], (0..64).map(|_| rng.random_range(-1.0..1.0)).collect());
    let s = Tensor::filled(&[8, 8], -40.0);
    let m = compute_mask(&theta, &s).unwrap();
    assert!(m.data().iter().all(|&v| v == 1.0));
    let soft = str_transform(&theta, &s).unwrap();
    let bound = sigmoid(-40.0);
    for (a, b) in soft.data().iter().zip(theta.data()) {
        // one ulp of slack: the threshold is far below the weight's precision
        assert!((a - b).abs() <= bound + f64::EPSILON * b.abs());
    }
}
