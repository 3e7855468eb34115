use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use kaleido::env::EnvName;
use kaleido::harness::compare::dense_reference_flops;
use kaleido::harness::run::{MASKS_FILE, METRICS_FILE, METRICS_HEADER, RESOLVED_FILE};
use kaleido::harness::{
    compare, flops_fc, flops_gru, mean_ci95, read_metrics, run_experiment, Arch, HarnessError, RunConfig, RunOptions,
};
use kaleido::trainers::Scheme;
use proptest::prelude::*;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.out_dir = out.to_path_buf();
    cfg.seeds = vec![0, 1];
    cfg.hidden_sizes = vec![8];
    cfg.batch_size = 16;
    cfg.buffer_size = 1_000;
    cfg.warmup_steps = 200;
    cfg.train_every = 16;
    cfg.total_steps = 20_000;
    cfg.eval_interval = 5_000;
    cfg.eval_episodes = 1;
    cfg
}

#[test]
fn config_examples() {
    let cfg = RunConfig::parse_str("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert!(cfg.validate().is_ok());
    assert!(RunConfig::parse_str("[qmix]\ngamma = 1.5\n").is_err());
    assert!(RunConfig::parse_str("colour = blue\n").is_err());
    assert!(RunConfig::parse_str("total_steps = many\n").is_err());
    assert!(RunConfig::parse_file(Path::new("/nonexistent/run.cfg")).is_err());

    let cfg = RunConfig::parse_str("scheme = fups_id\n").unwrap();
    let again = RunConfig::parse_str(&cfg.to_cfg_string()).unwrap();
    assert_eq!(again.scheme, Scheme::FupsId);
    assert_eq!(again.to_cfg_string(), cfg.to_cfg_string());
}

fn scheme_strategy() -> impl Strategy<Value = Scheme> {
    prop::sample::select(Scheme::ALL.to_vec())
}

proptest! {
    #[test]
    fn resolved_config_is_a_fixed_point(
        reach in any::<bool>(),
        scheme in scheme_strategy(),
        seeds in prop::collection::vec(0u64..1000, 1..6),
        total in 1u64..1_000_000,
        hidden in prop::collection::vec(1usize..300, 1..4),
        lr in 1e-6f64..1e-1,
        beta in 0.0f64..2.0,
        rho in 0.0f64..1.0,
        init in -10.0f64..0.0,
        double_q in any::<bool>(),
    ) {
        let env = if reach { EnvName::HeteroReach } else { EnvName::HeteroSpread };
        let mut cfg = RunConfig::defaults_for(env, None);
        cfg.scheme = scheme;
        cfg.seeds = seeds;
        cfg.total_steps = total;
        cfg.eval_interval = total.min(5_000);
        cfg.hidden_sizes = hidden;
        cfg.qmix.lr = lr;
        cfg.matd3.actor_lr = lr;
        cfg.masking.beta = beta;
        cfg.masking.rho = rho;
        cfg.masking.threshold_init = init;
        cfg.qmix.double_q = double_q;
        prop_assert!(cfg.validate().is_ok());
        let text = cfg.to_cfg_string();
        let parsed = RunConfig::parse_str(&text).unwrap();
        prop_assert_eq!(parsed.to_cfg_string(), text);
        prop_assert_eq!(parsed.actor_reset_steps(), cfg.actor_reset_steps());
        prop_assert_eq!(parsed.critic_reset_steps(), cfg.critic_reset_steps());
        let mut back = parsed;
        back.masking.actor_reset_interval = cfg.masking.actor_reset_interval;
        back.masking.critic_reset_interval = cfg.masking.critic_reset_interval;
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn flops_examples() {
    assert_eq!(flops_fc(64, 64, 0.0).unwrap(), 8192);
    assert_eq!(flops_fc(64, 64, 0.5).unwrap(), 4096);
    assert_eq!(flops_fc(1, 1, 0.0).unwrap(), 2);
    assert!(flops_fc(4, 4, 1.5).is_err());
    assert!(flops_fc(4, 4, -0.1).is_err());
    assert_eq!(flops_gru(64, 64), 50816);
    assert_eq!(flops_gru(1, 1), 38);
    assert_eq!(flops_gru(5, 0), 0);
    let arch = Arch::parse("[arch]\nlayers = 64,64,64\nsparsity = 0.0,0.5\ngru = 64,64\n").unwrap();
    let f = arch.flops().unwrap();
    assert_eq!(f.per_layer, vec![8192, 4096]);
    assert_eq!(f.total, 8192 + 4096 + 50816);
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = tiny(&out);
    let summary = run_experiment(&cfg, RunOptions { force: false, workers: 2 }).unwrap();
    assert_eq!(summary.final_returns.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1]);

    // plain RFC 4180 parse, independent of the library reader
    let text = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    assert!(text.starts_with("step,seed,scheme,split,return,td_loss,div_loss,sparsity,mean_hamming,flops_fwd\n"));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), METRICS_HEADER.to_vec());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), summary.rows);
    let mut keys = HashSet::new();
    let mut evals = 0;
    for r in &records {
        assert_eq!(r.len(), 10);
        assert!(keys.insert((r[0].to_string(), r[1].to_string(), r[3].to_string())));
        if &r[3] == "eval" {
            evals += 1;
        }
    }
    assert!(evals >= 2 * 4, "{evals} eval rows");
    assert_eq!(read_metrics(&out.join(METRICS_FILE)).unwrap().len(), records.len());

    let resolved = RunConfig::parse_file(&out.join(RESOLVED_FILE)).unwrap();
    assert_eq!(resolved.to_cfg_string(), cfg.to_cfg_string());

    let masks: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(MASKS_FILE)).unwrap()).unwrap();
    assert_eq!(masks["scheme"], "kaleidoscope");
    let seeds = masks["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 2);
    for s in seeds {
        let layers = s["layers"].as_array().unwrap();
        assert_eq!(layers.len(), 4 * 2);
        for l in layers {
            assert!(l["agent_id"].is_u64() && l["layer"].is_u64());
            let sp = l["sparsity"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&sp));
        }
        let h = s["hamming"].as_array().unwrap();
        assert_eq!(h.len(), 4);
        for (i, row) in h.iter().enumerate() {
            assert_eq!(row[i].as_f64().unwrap(), 0.0);
            assert_eq!(row.as_array().unwrap().len(), 4);
        }
    }

    // a second run into the same directory needs force
    let again = run_experiment(&cfg, RunOptions { force: false, workers: 1 });
    assert!(matches!(again, Err(HarnessError::Exists(_))));
    let mut short = cfg.clone();
    short.total_steps = 1_000;
    short.eval_interval = 1_000;
    run_experiment(&short, RunOptions { force: true, workers: 1 }).unwrap();
    assert!(read_metrics(&out.join(METRICS_FILE)).unwrap().iter().all(|r| r.step <= 1_000));
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let mut cfg = tiny(&dir.path().join(format!("w{workers}")));
        cfg.seeds = vec![4, 2, 9];
        cfg.total_steps = 2_000;
        cfg.eval_interval = 1_000;
        run_experiment(&cfg, RunOptions { force: false, workers }).unwrap();
        outputs.push(fs::read(cfg.out_dir.join(METRICS_FILE)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

/// A run directory holding only final eval rows with the given returns.
fn fake_run(dir: &Path, scheme: Scheme, env: EnvName, returns: &[f64], flops: u64) {
    let mut cfg = RunConfig::defaults_for(env, None);
    cfg.scheme = scheme;
    cfg.out_dir = dir.to_path_buf();
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(RESOLVED_FILE), cfg.to_cfg_string()).unwrap();
    let mut text = METRICS_HEADER.join(",") + "\n";
    for (seed, r) in returns.iter().enumerate() {
        // an earlier eval row that must be ignored
        text += &format!("0,{seed},{scheme},eval,-100,,,0,0,{flops}\n");
        text += &format!("10,{seed},{scheme},train,-50,0.5,,0,0,{flops}\n");
        text += &format!("10,{seed},{scheme},eval,{r},0.5,,0.5,0.1,{flops}\n");
    }
    fs::write(dir.join(METRICS_FILE), text).unwrap();
}

#[test]
fn compare_matches_a_closed_form_interval() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dense_reference_flops(&RunConfig::default());
    fake_run(&dir.path().join("a"), Scheme::Kaleidoscope, EnvName::HeteroSpread, &[1.0, 2.0, 3.0], reference / 2);
    fake_run(&dir.path().join("b"), Scheme::FupsId, EnvName::HeteroSpread, &[4.0, 4.0], reference);
    fake_run(&dir.path().join("c"), Scheme::Fups, EnvName::HeteroSpread, &[7.5], reference);
    let report = compare(&[dir.path().join("a"), dir.path().join("b"), dir.path().join("c")]).unwrap();
    let get = |name: &str| report.schemes.iter().find(|s| s.scheme == name).unwrap();

    // mean 2, sample sd 1, t(0.975, 2) = 4.302652729911275
    let k = get("kaleidoscope");
    let half = 4.302652729911275 / 3f64.sqrt();
    assert_eq!(k.seeds, 3);
    assert!((k.mean_return - 2.0).abs() < 1e-12);
    assert!((k.ci_low - (2.0 - half)).abs() < 1e-9);
    assert!((k.ci_high - (2.0 + half)).abs() < 1e-9);
    assert!((k.normalized_flops - 0.5).abs() < 0.01);

    let f = get("fups_id");
    assert_eq!((f.mean_return, f.ci_low, f.ci_high), (4.0, 4.0, 4.0));
    assert_eq!(f.normalized_flops, 1.0);

    let single = get("fups");
    assert!(single.single_seed);
    assert_eq!((single.ci_low, single.ci_high), (7.5, 7.5));
    assert_eq!(report.warnings().len(), 1);

    let csv_text = report.to_csv().unwrap();
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(reader.records().count(), 3);
    assert!(report.to_text().contains("kaleidoscope"));

    let (m, lo, hi) = mean_ci95(&[10.0, 12.0]);
    // t(0.975, 1) = 12.706204736174698, sd sqrt(2), n 2
    assert_eq!(m, 11.0);
    assert!((hi - m - 12.706204736174698).abs() < 1e-9);
    assert!((m - lo - 12.706204736174698).abs() < 1e-9);

    fake_run(&dir.path().join("d"), Scheme::Fups, EnvName::HeteroReach, &[1.0], 10);
    assert!(matches!(
        compare(&[dir.path().join("a"), dir.path().join("d")]),
        Err(HarnessError::MismatchedEnvs { .. })
    ));
}

#[test]
fn sparse_kaleidoscope_costs_less_than_the_dense_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("k"));
    cfg.masking.threshold_init = -1.0;
    cfg.seeds = vec![0];
    cfg.total_steps = 1_000;
    cfg.eval_interval = 1_000;
    run_experiment(&cfg, RunOptions::default()).unwrap();
    let rows = read_metrics(&cfg.out_dir.join(METRICS_FILE)).unwrap();
    let last = rows.iter().filter(|r| r.split == "eval").last().unwrap();
    assert!(last.sparsity > 0.0);
    let report = compare(&[cfg.out_dir.clone()]).unwrap();
    assert!(report.schemes[0].normalized_flops <= 1.0);
}

fn kaleido() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kaleido"))
}

#[test]
fn command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cli");
    let cfg_path = dir.path().join("run.cfg");
    fs::write(
        &cfg_path,
        format!(
            "scheme = fups\nseeds = 3\nout_dir = {}\ntotal_steps = 600\neval_interval = 300\neval_episodes = 1\n\
hidden_sizes = 8\nbatch_size = 16\nwarmup_steps = 100\n",
            out.display()
        ),
    )
    .unwrap();

    let run = kaleido().args(["run", "--config"]).arg(&cfg_path).args(["--seeds", "5,6"]).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let seeds: HashSet<u64> = read_metrics(&out.join(METRICS_FILE)).unwrap().iter().map(|r| r.seed).collect();
    assert_eq!(seeds, HashSet::from([5, 6]));

    let refused = kaleido().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!refused.status.success());

    let env_seed = kaleido()
        .args(["run", "--force", "--config"])
        .arg(&cfg_path)
        .env("KALEIDO_SEED", "8")
        .output()
        .unwrap();
    assert!(env_seed.status.success());
    let seeds: HashSet<u64> = read_metrics(&out.join(METRICS_FILE)).unwrap().iter().map(|r| r.seed).collect();
    assert_eq!(seeds, HashSet::from([8]));

    let table = dir.path().join("table.csv");
    let cmp = kaleido().arg("compare").arg(&out).arg("--csv").arg(&table).output().unwrap();
    assert!(cmp.status.success());
    assert!(String::from_utf8_lossy(&cmp.stderr).contains("only one seed"));
    assert!(fs::read_to_string(&table).unwrap().starts_with("scheme,seeds,mean_return"));

    let arch = dir.path().join("arch.cfg");
    fs::write(&arch, "[arch]\nlayers = 64,64\ngru = 64,64\n").unwrap();
    let flops = kaleido().args(["flops", "--arch"]).arg(&arch).output().unwrap();
    let text = String::from_utf8(flops.stdout).unwrap();
    assert!(text.contains("total: 59008"), "{text}");

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[qmix]\ngamma = 1.5\n").unwrap();
    assert!(!kaleido().args(["run", "--config"]).arg(&bad).output().unwrap().status.success());

    let selftest = kaleido().arg("selftest").output().unwrap();
    assert!(selftest.status.success(), "{}", String::from_utf8_lossy(&selftest.stdout));
}
