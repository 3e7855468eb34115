//! Quick invariant checks behind `kaleido selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::RunConfig;
use super::flops::{flops_fc, flops_gru};
use crate::masking::{self, Granularity, MaskMode, Reinit, ThresholdSet};
use crate::networks::{Bind, MaskSpec, MixingNet, Mlp};
use crate::params::{finite_difference_gradient, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainers::{self, apply_diversity, Scheme};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all() -> Vec<Check> {
    vec![
        flops_formulas(),
        masked_gradients(),
        diversity_stop_gradient(),
        mixer_monotone(),
        reset_leaves_live_coordinates(),
        ensemble_min_bias(),
        short_run_determinism(),
    ]
}

fn flops_formulas() -> Check {
    let got = (
        flops_fc(64, 64, 0.0).ok(),
        flops_fc(64, 64, 0.5).ok(),
        flops_gru(64, 64),
    );
    check(
        "flops formulas",
        got == (Some(8192), Some(4096), 50816),
        format!("{got:?}"),
    )
}

fn masked_net(rng: &mut ChaCha8Rng) -> (ParamStore, Mlp) {
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        rng,
        "net",
        &[4, 8, 8, 3],
        false,
        None,
        MaskSpec::Learned {
            members: 1,
            mode: MaskMode::Soft,
            granularity: Granularity::Weight,
            init_value: -2.0,
        },
    );
    (store, net)
}

fn masked_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut store, net) = masked_net(&mut rng);
    let x = Tensor::new(vec![2, 4], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized");
    let loss = |store: &ParamStore, tape: &mut Tape| {
        let xv = tape.constant(x.clone());
        let y = net.forward(tape, Bind::Live(store), xv, Some(0)).expect("forward");
        let sq = tape.square(y);
        tape.sum(sq)
    };
    let mut tape = Tape::new();
    let l = loss(&store, &mut tape);
    store.zero_grad();
    tape.backward(l, &mut store).expect("backward");
    let analytic: Vec<Tensor> = store.ids().map(|id| store.grad(id).clone()).collect();
    let numeric = finite_difference_gradient(
        |s| {
            let mut t = Tape::new();
            let l = loss(s, &mut t);
            t.value(l).item().expect("scalar")
        },
        &mut store,
        1e-5,
    );
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            worst = worst.max((av - nv).abs() / av.abs().max(nv.abs()).max(1e-6));
        }
    }
    check("masked mlp gradients", worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn diversity_stop_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let net = Mlp::new(
        &mut store,
        &mut rng,
        "net",
        &[6, 6, 6],
        false,
        None,
        MaskSpec::Learned {
            members: 3,
            mode: MaskMode::Soft,
            granularity: Granularity::Weight,
            init_value: -1.0,
        },
    );
    for m in 0..3 {
        for &id in net.score_ids(m) {
            for v in store.value_mut(id).data_mut() {
                *v = rng.random_range(-3.0..0.0);
            }
        }
    }
    store.zero_grad();
    let step = apply_diversity(&net, &mut store, 0.5, 1.0, 2.0).expect("diversity");
    let weight_grads_zero = net
        .layers
        .iter()
        .all(|l| store.grad(l.weight).data().iter().all(|&g| g == 0.0) && store.grad(l.bias).data().iter().all(|&g| g == 0.0));
    let score_moved = (0..3).any(|m| net.score_ids(m).iter().any(|&id| store.grad(id).data().iter().any(|&g| g != 0.0)));
    check(
        "diversity gradient reaches scores only",
        step.is_some() && weight_grads_zero && score_moved,
        format!("weights untouched: {weight_grads_zero}, scores moved: {score_moved}"),
    )
}

fn mixer_monotone() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let mixer = MixingNet::new(&mut store, &mut rng, 3, 5, 8);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let qs: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let state = Tensor::new(vec![1, 5], (0..5).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("sized");
        for i in 0..3 {
            let eval = |d: f64| {
                let mut q = qs.clone();
                q[i] += d;
                let q = Tensor::new(vec![1, 3], q).expect("sized");
                mixer.eval(&store, &q, &state).expect("mixer").data()[0]
            };
            worst = worst.min((eval(1e-5) - eval(-1e-5)) / 2e-5);
        }
    }
    check("mixer is monotone", worst >= -1e-9, format!("smallest slope {worst:.3e}"))
}

fn reset_leaves_live_coordinates() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let theta0: Vec<Tensor> = (0..3)
        .map(|_| Tensor::new(vec![10, 10], (0..100).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized"))
        .collect();
    let mut sets: Vec<ThresholdSet> = (0..2)
        .map(|owner| ThresholdSet {
            owner,
            layers: (0..3)
                .map(|_| Tensor::new(vec![10, 10], (0..100).map(|_| rng.random_range(-3.0..3.0)).collect()).expect("sized"))
                .collect(),
            init_value: -5.0,
            granularity: Granularity::Weight,
        })
        .collect();
    let before = theta0.clone();
    let before_sets = sets.clone();
    let mut theta = theta0;
    let reinit = Reinit {
        weight_bounds: vec![0.3; 3],
        threshold_value: -5.0,
    };
    let count = masking::actor_reset(&mut theta, &mut sets, 1.0, &mut rng, &reinit).unwrap_or(usize::MAX);
    let mut ok = count != usize::MAX;
    for l in 0..3 {
        for k in 0..100 {
            let live = before_sets
                .iter()
                .any(|ts| before[l].data()[k].abs() > crate::tensor::sigmoid(ts.layers[l].data()[k]));
            if live && theta[l].data()[k] != before[l].data()[k] {
                ok = false;
            }
        }
    }
    check("reset spares live coordinates", ok, format!("{count} coordinates reset"))
}

fn ensemble_min_bias() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let trials = 10_000;
    let mean_min = (0..trials)
        .map(|_| (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / trials as f64;
    check(
        "min of five estimates underestimates",
        (-1.20..=-1.13).contains(&mean_min),
        format!("mean of min = {mean_min:.4}"),
    )
}

fn short_run_determinism() -> Check {
    let mut cfg = RunConfig::default();
    cfg.scheme = Scheme::Kaleidoscope;
    cfg.total_steps = 300;
    cfg.eval_interval = 150;
    cfg.eval_episodes = 2;
    cfg.warmup_steps = 50;
    cfg.batch_size = 16;
    cfg.hidden_sizes = vec![16];
    let a = trainers::train(&cfg, 5);
    let b = trainers::train(&cfg, 5);
    let same = matches!((&a, &b), (Ok(x), Ok(y)) if x == y);
    check("training is deterministic", same, format!("{} rows", a.map(|t| t.rows.len()).unwrap_or(0)))
}
