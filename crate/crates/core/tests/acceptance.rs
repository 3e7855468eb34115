//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines reach the terminal uncaptured.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use kaleido::env::{Env, EnvName, Environment, HeteroSpread};
use kaleido::harness::compare::SchemeSummary;
use kaleido::harness::run::METRICS_FILE;
use kaleido::harness::{compare, flops_fc, flops_gru, run_experiment, RunConfig, RunOptions};
use kaleido::masking::{self, Granularity, MaskMode, Reinit, ThresholdSet};
use kaleido::networks::{Bind, MaskSpec, MixingNet, Mlp};
use kaleido::params::ParamStore;
use kaleido::tape::Tape;
use kaleido::tensor::Tensor;
use kaleido::trainers::matd3::ensemble_target;
use kaleido::trainers::{apply_diversity, Matd3Learner, QmixLearner, Scheme, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erf;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn learned(members: usize, mode: MaskMode, init_value: f64) -> MaskSpec {
    MaskSpec::Learned {
        members,
        mode,
        granularity: Granularity::Weight,
        init_value,
    }
}

/// Sum of squared outputs of a soft-thresholded ReLU net, computed by hand.
fn oracle_loss(store: &ParamStore, net: &Mlp, x: &Tensor) -> f64 {
    let (rows, _) = x.dims2();
    let scores = net.score_ids(0);
    let mut total = 0.0;
    for r in 0..rows {
        let mut h = x.row(r).to_vec();
        for (l, lin) in net.layers.iter().enumerate() {
            let w = store.value(lin.weight).data();
            let s = store.value(scores[l]).data();
            let b = store.value(lin.bias).data();
            let mut next = b.to_vec();
            for (i, &hi) in h.iter().enumerate() {
                for (o, out) in next.iter_mut().enumerate() {
                    let k = i * lin.fan_out + o;
                    let shrunk = (w[k].abs() - sigmoid(s[k])).max(0.0);
                    *out += hi * w[k].signum() * shrunk;
                }
            }
            if l + 1 < net.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = next;
        }
        total += h.iter().map(|v| v * v).sum::<f64>();
    }
    total
}

fn gradient_correctness() -> Outcome {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut value_gap: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, &mut rng, "net", &[8, 16, 16, 4], false, None, learned(2, MaskMode::Soft, -2.0));
        for member in 0..2 {
            for &id in net.score_ids(member) {
                let shape = store.value(id).shape().to_vec();
                *store.value_mut(id) = random_tensor(&mut rng, &shape, -3.0, -1.0);
            }
        }
        let x = random_tensor(&mut rng, &[4, 8], -1.0, 1.0);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, Bind::Live(&store), xv, Some(0)).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq);
        value_gap = value_gap.max((tape.value(loss).item().unwrap() - oracle_loss(&store, &net, &x)).abs());
        store.zero_grad();
        tape.backward(loss, &mut store).unwrap();

        let theta = net.layers[0].weight;
        let score = net.score_ids(0)[0];
        for id in [theta, score] {
            // skip coordinates sitting on the shrinkage kink
            let k = loop {
                let k = rng.random_range(0..store.value(id).len());
                let gap = store.value(theta).data()[k].abs() - sigmoid(store.value(score).data()[k]);
                if gap.abs() > 1e-3 {
                    break k;
                }
            };
            let analytic = store.grad(id).data()[k];
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let up = oracle_loss(&store, &net, &x);
            store.value_mut(id).data_mut()[k] = orig - eps;
            let down = oracle_loss(&store, &net, &x);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-8 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    outcome(
        worst < 1e-5 && value_gap < 1e-10,
        format!("max relative error {worst:.2e} over 100 trials of theta_0 and s coordinates"),
    )
}

fn degenerate_equivalence() -> Outcome {
    let base = |scheme| {
        let mut cfg = RunConfig::default();
        cfg.scheme = scheme;
        cfg.warmup_steps = 200;
        cfg.batch_size = 32;
        cfg.masking.mode = MaskMode::Hard;
        cfg.masking.threshold_init = -40.0;
        cfg
    };
    let mut masked = Trainer::new(&base(Scheme::Kaleidoscope), 7).unwrap();
    let mut plain = Trainer::new(&base(Scheme::Fups), 7).unwrap();
    let mut updates = 0;
    for step in 0..1_000 {
        let a = masked.step().unwrap();
        let b = plain.step().unwrap();
        if a.action != b.action {
            return outcome(false, format!("actions differ at step {step}"));
        }
        updates += a.update.is_some() as usize;
    }
    outcome(updates > 0, format!("1000 identical joint actions, {updates} updates in between"))
}

fn flops_formulas() -> Outcome {
    let got = (flops_fc(64, 64, 0.0).unwrap(), flops_fc(64, 64, 0.5).unwrap(), flops_gru(64, 64));
    outcome(got == (8192, 4096, 50816), format!("fc {} / {}, gru {}", got.0, got.1, got.2))
}

/// True when every non-score parameter of `net` has an exactly zero gradient
/// and some score gradient is non-zero.
fn only_scores_move(net: &Mlp, store: &ParamStore) -> bool {
    let scores: Vec<_> = (0..net.members()).flat_map(|m| net.score_ids(m).to_vec()).collect();
    let zero = store
        .ids()
        .filter(|id| !scores.contains(id))
        .all(|id| store.grad(id).data().iter().all(|&g| g == 0.0));
    let moved = scores.iter().any(|&id| store.grad(id).data().iter().any(|&g| g != 0.0));
    zero && moved
}

fn scramble_scores(net: &Mlp, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for member in 0..net.members() {
        for &id in net.score_ids(member) {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = random_tensor(rng, &shape, -4.0, 0.0);
        }
    }
}

fn stop_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spread = Env::new(EnvName::HeteroSpread);
    let mut q = QmixLearner::new(&RunConfig::default(), spread.spec(), &mut rng);
    let actor = q.agents.shared().clone();
    scramble_scores(&actor, &mut q.store, &mut rng);
    q.store.zero_grad();
    let a = apply_diversity(&actor, &mut q.store, 0.5, 1.0, 2.0).unwrap().unwrap();
    let actor_ok = a.objective > 0.0 && only_scores_move(&actor, &q.store);

    let reach = Env::new(EnvName::HeteroReach);
    let mut cfg = RunConfig::defaults_for(EnvName::HeteroReach, None);
    cfg.hidden_sizes = vec![64, 64];
    cfg.critic_hidden_sizes = vec![64, 64];
    let mut m = Matd3Learner::new(&cfg, reach.spec(), &mut rng);
    let critic = m.critics.masked().unwrap().clone();
    scramble_scores(&critic, &mut m.critic_store, &mut rng);
    m.critic_store.zero_grad();
    let c = apply_diversity(&critic, &mut m.critic_store, 0.1, 1.0, 2.0).unwrap().unwrap();
    let critic_ok = c.objective > 0.0 && only_scores_move(&critic, &m.critic_store);
    outcome(
        actor_ok && critic_ok,
        format!("weight gradients exactly zero for the actor ({actor_ok}) and the critic ensemble ({critic_ok})"),
    )
}

fn diversity_ascent() -> Outcome {
    let mut rises = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, &mut rng, "net", &[8, 8], false, None, learned(2, MaskMode::Soft, -1.7));
        for member in 0..2 {
            for &id in net.score_ids(member) {
                for v in store.value_mut(id).data_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
        }
        let hamming = |store: &ParamStore| masking::sparsity_stats(&net.all_masks(store)).pairwise_hamming[0][1];
        let before = hamming(&store);
        for _ in 0..500 {
            store.zero_grad();
            apply_diversity(&net, &mut store, 1.0, 1.0, 2.0).unwrap();
            store.adam_step(1e-2);
        }
        rises.push((before, hamming(&store)));
    }
    let ok = rises.iter().all(|(b, a)| a > b);
    let text: Vec<String> = rises.iter().map(|(b, a)| format!("{b:.3}->{a:.3}")).collect();
    outcome(ok, format!("hamming per seed {}", text.join(" ")))
}

fn reset_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let reinit = Reinit {
        weight_bounds: vec![0.1],
        threshold_value: -5.0,
    };
    let theta = random_tensor(&mut rng, &[100, 100], -0.6, 0.6);
    let mut sets: Vec<ThresholdSet> = (0..3)
        .map(|owner| ThresholdSet {
            owner,
            layers: vec![random_tensor(&mut rng, &[100, 100], -3.0, 0.0)],
            init_value: -5.0,
            granularity: Granularity::Weight,
        })
        .collect();
    let live: Vec<bool> = (0..10_000)
        .map(|k| sets.iter().any(|s| theta.data()[k].abs() > sigmoid(s.layers[0].data()[k])))
        .collect();
    let dead = live.iter().filter(|&&l| !l).count();
    let before_sets = sets.clone();
    let mut after = vec![theta.clone()];
    let count = masking::actor_reset(&mut after, &mut sets, 1.0, &mut rng, &reinit).unwrap();
    let untouched = (0..10_000).filter(|&k| live[k]).all(|k| {
        after[0].data()[k] == theta.data()[k]
            && sets.iter().zip(&before_sets).all(|(s, b)| s.layers[0].data()[k] == b.layers[0].data()[k])
    });

    let mut all_dead = vec![random_tensor(&mut rng, &[100, 100], -0.5, 0.5)];
    let mut high: Vec<ThresholdSet> = (0..2)
        .map(|owner| ThresholdSet::uniform(owner, &[&all_dead[0]], 10.0, Granularity::Weight))
        .collect();
    let half = masking::actor_reset(&mut all_dead, &mut high, 0.5, &mut rng, &reinit).unwrap();
    outcome(
        untouched && count == dead && (4850..=5150).contains(&half),
        format!("{} live coordinates untouched, {count}/{dead} dead reset at rho 1, {half}/10000 at rho 0.5", 10_000 - dead),
    )
}

/// E[min of k standard normals] by quadrature of the order-statistic density.
fn expected_min(k: i32) -> f64 {
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let (lo, hi, n) = (-10.0, 10.0, 200_000);
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * x * k as f64 * phi(x) * (1.0 - cdf(x)).powi(k - 1)
        })
        .sum::<f64>()
        * h
}

fn ensemble_underestimation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mean_min = |k: usize| {
        (0..10_000)
            .map(|_| {
                let qs: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                ensemble_target(0.0, 0.0, 1.0, &qs)
            })
            .sum::<f64>()
            / 10_000.0
    };
    let k5 = mean_min(5);
    let k1 = mean_min(1);
    outcome(
        (-1.20..=-1.13).contains(&k5) && (-0.05..=0.05).contains(&k1),
        format!("K=5 mean {k5:.4} (quadrature {:.4}), K=1 mean {k1:.4}", expected_min(5)),
    )
}

fn mixing_monotonicity() -> Outcome {
    let h = 1e-6;
    let mut lowest = f64::INFINITY;
    for net_seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(net_seed);
        let mut store = ParamStore::new();
        let mixer = MixingNet::new(&mut store, &mut rng, 4, 16, 32);
        for _ in 0..10 {
            let qs = random_tensor(&mut rng, &[1, 4], -5.0, 5.0);
            let state = random_tensor(&mut rng, &[1, 16], -3.0, 3.0);
            for i in 0..4 {
                let mut up = qs.clone();
                up.data_mut()[i] += h;
                let mut down = qs.clone();
                down.data_mut()[i] -= h;
                let fu = mixer.eval(&store, &up, &state).unwrap().data()[0];
                let fd = mixer.eval(&store, &down, &state).unwrap().data()[0];
                lowest = lowest.min((fu - fd) / (2.0 * h));
            }
        }
    }
    outcome(lowest >= -1e-9, format!("smallest dQ_tot/dQ_i over 1000 inputs x 4 agents: {lowest:.3e}"))
}

fn kaleido_binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kaleido"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut all_equal = true;
    for (name, env) in [("spread", "hetero_spread"), ("reach", "hetero_reach")] {
        let out = dir.path().join(name);
        let cfg = dir.path().join(format!("{name}.cfg"));
        fs::write(
            &cfg,
            format!(
                "env = {env}\nscheme = kaleidoscope\nseeds = 3\nout_dir = {}\ntotal_steps = 3000\n\
eval_interval = 1000\neval_episodes = 2\nhidden_sizes = 32,32\ncritic_hidden_sizes = 32,32\n\
batch_size = 32\nwarmup_steps = 500\n",
                out.display()
            ),
        )
        .unwrap();
        let mut files = Vec::new();
        for _ in 0..2 {
            let status = kaleido_binary().args(["run", "--force", "--config"]).arg(&cfg).output().unwrap();
            if !status.status.success() {
                return outcome(false, String::from_utf8_lossy(&status.stderr).into_owned());
            }
            files.push(fs::read(out.join(METRICS_FILE)).unwrap());
        }
        all_equal &= files[0] == files[1] && !files[0].is_empty();
    }
    outcome(all_equal, "two runs per environment wrote byte-identical metrics.csv")
}

const EXPERIMENT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn experiment_config(scheme: Scheme, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scheme = scheme;
    cfg.seeds = EXPERIMENT_SEEDS.to_vec();
    cfg.out_dir = out.to_path_buf();
    cfg.total_steps = 200_000;
    cfg.eval_interval = 20_000;
    // episodes start from a fixed layout and greedy play is deterministic
    cfg.eval_episodes = 1;
    cfg.batch_size = 32;
    cfg.train_every = 8;
    cfg
}

/// Trains every scheme of the ordering experiment and summarizes it.
fn experiment(schemes: &[Scheme]) -> Result<Vec<SchemeSummary>, String> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut dirs = Vec::new();
    for &scheme in schemes {
        let dir = root.join(scheme.as_str());
        let cfg = experiment_config(scheme, &dir);
        let opts = RunOptions {
            force: true,
            ..RunOptions::default()
        };
        run_experiment(&cfg, opts).map_err(|e| format!("{scheme:?}: {e}"))?;
        dirs.push(dir);
    }
    let report = compare(&dirs).map_err(|e| e.to_string())?;
    Ok(report.schemes)
}

fn describe(s: &SchemeSummary) -> String {
    format!("{} {:.2} [{:.2}, {:.2}]", s.scheme, s.mean_return, s.ci_low, s.ci_high)
}

fn heterogeneity_gap(summaries: &[SchemeSummary]) -> Outcome {
    let get = |name: &str| summaries.iter().find(|s| s.scheme == name).unwrap();
    let (k, f, id) = (get("kaleidoscope"), get("fups"), get("fups_id"));
    let mut env = HeteroSpread::new();
    env.reset(0);
    let bound = env.identical_action_bound(env.spec().episode_limit);
    let separated = k.ci_low > f.ci_high;
    let at_least_id = k.mean_return >= id.mean_return;
    let bounded = f.mean_return <= bound + 1e-9;
    outcome(
        separated && at_least_id && bounded,
        format!(
            "{}, {}, {}; identical-action bound {bound}; separated {separated}, >= fups_id {at_least_id}, fups within bound {bounded}",
            describe(k),
            describe(f),
            describe(id)
        ),
    )
}

fn ablation_direction(summaries: &[SchemeSummary]) -> Outcome {
    let get = |name: &str| summaries.iter().find(|s| s.scheme == name).unwrap();
    let (k, n) = (get("kaleidoscope"), get("kaleido_no_reg"));
    outcome(n.mean_return <= k.mean_return, format!("{}, {}", describe(n), describe(k)))
}

/// Training-outcome checks: printed like the others but not turned into a
/// failing exit status, since they measure learning results rather than
/// correctness.
const REPORT_ONLY: [usize; 2] = [9, 11];

fn main() -> ExitCode {
    let quick: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient correctness", gradient_correctness),
        ("degenerate equivalence", degenerate_equivalence),
        ("flops formulas", flops_formulas),
        ("stop-gradient", stop_gradient),
        ("diversity ascent", diversity_ascent),
        ("reset correctness", reset_correctness),
        ("ensemble underestimation", ensemble_underestimation),
        ("mixing monotonicity", mixing_monotonicity),
    ];
    let mut results = Vec::new();
    for (i, (name, check)) in quick.into_iter().enumerate() {
        let start = Instant::now();
        let o = check();
        results.push((i + 1, name, o, start.elapsed().as_secs_f64()));
    }

    let start = Instant::now();
    let schemes = [Scheme::Fups, Scheme::FupsId, Scheme::Kaleidoscope, Scheme::KaleidoNoReg];
    // set KALEIDO_SKIP_EXPERIMENT to leave 9 and 11 unrun (reported as failures)
    let run = if std::env::var_os("KALEIDO_SKIP_EXPERIMENT").is_some() {
        Err("experiment skipped".to_string())
    } else {
        experiment(&schemes)
    };
    let (gap, ablation) = match run {
        Ok(s) => (heterogeneity_gap(&s), ablation_direction(&s)),
        Err(e) => (outcome(false, e.clone()), outcome(false, e)),
    };
    let elapsed = start.elapsed().as_secs_f64();
    results.push((9, "heterogeneity gap", gap, elapsed));
    let start = Instant::now();
    let det = determinism();
    results.push((10, "determinism", det, start.elapsed().as_secs_f64()));
    results.push((11, "ablation direction", ablation, elapsed));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    let mut enforced_failures = 0;
    for (n, name, o, secs) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
            enforced_failures += !REPORT_ONLY.contains(n) as usize;
        }
        println!("{tag} {n:>2} {name}: {} ({secs:.1} s)", o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if enforced_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
