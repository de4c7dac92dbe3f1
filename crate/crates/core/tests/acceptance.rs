//! One line per acceptance criterion. Runs the full experiment on 100
//! synthetic cases, so expect several minutes on one core.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dosinglab::agents::{
    epsilon, mse_loss, reward, td_target, train_online, value_iteration, ModelConfig, QModel, TabularMg, TrainConfig,
    TrainMode, Trainer, Transition,
};
use dosinglab::envsim::ForestModel;
use dosinglab::evalrep::{mdape, mdpe, AggregateRow};
use dosinglab::experiment::{self, ExperimentConfig};
use dosinglab::mg::ActionGrid;
use dosinglab::mixers::{qtran_mix, wqmix_weight, Mixer, MixerConfig, MixerKind};
use dosinglab::nn::{argmax, OptimizerKind};
use dosinglab::pipeline::{apply_split, process_case, run_pipeline, split_dataset, PipelineConfig, RejectReason};
use dosinglab::synth::{generate_cases, SynthConfig};
use dosinglab::types::{CaseRecord, Indicator, PatientProfile, TrajectoryTrack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const DATA_SEED: u64 = 7;
const SPLIT_SEED: u64 = 1;
const N_CASES: usize = 100;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn c1_formulas() -> Outcome {
    let e = (-0.5f64).exp();
    let eps_floor = (0..500).map(epsilon).all(|x| x >= 0.1) && (0..499).all(|t| epsilon(t + 1) <= epsilon(t));
    let bis = [40.0, 50.0, 60.0];
    let checks = [
        ("reward(50)", reward(50.0) == 1.0),
        ("reward(30)", close(reward(30.0), e, 1e-12)),
        ("reward(70)", close(reward(70.0), e, 1e-12)),
        ("eps(0)", close(epsilon(0), 0.8, 1e-12)),
        ("eps(70)", close(epsilon(70), 0.1, 1e-12)),
        ("eps monotone floor", eps_floor),
        ("td_target", close(td_target(1.0, 2.0, 0.9, false), 2.8, 1e-12)),
        ("mdpe", close(mdpe(&bis).map_err(|e| e.to_string())?, 0.0, 1e-12)),
        ("mdape", close(mdape(&bis).map_err(|e| e.to_string())?, 20.0, 1e-12)),
    ];
    let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Ok((bad.is_empty(), if bad.is_empty() { "all exact".into() } else { format!("wrong: {bad:?}") }))
}

const S: usize = 15;
const K: usize = 11;

fn mixer(kind: MixerKind, rng: &mut ChaCha8Rng) -> (Mixer, Vec<f64>) {
    let cfg = MixerConfig { embed_dim: 8, hyper_hidden: 16, heads: 4, key_dim: 4, ..MixerConfig::default() };
    let m = Mixer::new(kind, cfg, 2, K, S).unwrap();
    let mut p = vec![0.0; m.n_params()];
    m.init(&mut p, rng);
    (m, p)
}

fn probe(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let q = (0..2).map(|_| (0..K).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let s = (0..S).map(|_| rng.random_range(-0.5..1.5)).collect();
    (q, s, vec![rng.random_range(0..K), rng.random_range(0..K)])
}

fn c2_mixers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_vdn: f64 = 0.0;
    let (vdn, _) = mixer(MixerKind::Vdn, &mut rng);
    for _ in 0..1000 {
        let (q, s, a) = probe(&mut rng);
        worst_vdn = worst_vdn.max((vdn.value(&[], &q, &a, &s) - (q[0][a[0]] + q[1][a[1]])).abs());
    }
    let mut min_slope = f64::INFINITY;
    for kind in [MixerKind::Qmix, MixerKind::Qplex] {
        let (m, p) = mixer(kind, &mut rng);
        for _ in 0..1000 {
            let (q, s, a) = probe(&mut rng);
            for i in 0..2 {
                let (mut up, mut dn) = (q.clone(), q.clone());
                up[i][a[i]] += 1e-6;
                dn[i][a[i]] -= 1e-6;
                min_slope = min_slope.min((m.value(&p, &up, &a, &s) - m.value(&p, &dn, &a, &s)) / 2e-6);
            }
        }
    }
    let (m, p) = mixer(MixerKind::Qatten, &mut rng);
    let qa = m.qatten().unwrap();
    let mut worst_att: f64 = 0.0;
    for _ in 0..1000 {
        let (_, s, _) = probe(&mut rng);
        let w = qa.weights(&p, &s);
        for h in 0..qa.heads {
            worst_att = worst_att.max((w[2 * h] + w[2 * h + 1] - 1.0).abs());
        }
    }
    let (m, p) = mixer(MixerKind::Qtran, &mut rng);
    let qt = m.qtran().unwrap();
    let mut worst_qtran: f64 = 0.0;
    for _ in 0..1000 {
        let (q, s, a) = probe(&mut rng);
        let (v, vi) = qt.heads(&p, &s);
        let oracle = q[0][a[0]] + q[1][a[1]] + v - vi[0] - vi[1];
        worst_qtran = worst_qtran.max((m.value(&p, &q, &a, &s) - oracle).abs());
        worst_qtran = worst_qtran.max((qtran_mix(&[q[0][a[0]], q[1][a[1]]], v, &vi) - oracle).abs());
    }
    let (a, b) = ([1, 2], [0, 2]);
    let (cw, ow) = (MixerKind::CwQmix, MixerKind::OwQmix);
    let weights_ok = wqmix_weight(cw, 0.0, -10.0, &a, &a, 5.0, 0.5).ok() == Some(1.0)
        && wqmix_weight(cw, 0.0, 6.0, &a, &b, 5.0, 0.5).ok() == Some(1.0)
        && wqmix_weight(cw, 0.0, 4.0, &a, &b, 5.0, 0.5).ok() == Some(0.5)
        && wqmix_weight(ow, 2.0, 3.0, &a, &b, 0.0, 0.5).ok() == Some(1.0)
        && wqmix_weight(ow, 3.0, 2.0, &a, &b, 0.0, 0.5).ok() == Some(0.5)
        && (0..1000).all(|_| {
            let (x, y, z) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            [cw, ow].iter().all(|&k| matches!(wqmix_weight(k, x, y, &a, &b, z, 0.3), Ok(w) if w == 1.0 || w == 0.3))
        });
    let pass = worst_vdn <= 1e-12 && min_slope >= -1e-9 && worst_att <= 1e-9 && worst_qtran <= 1e-12 && weights_ok;
    Ok((
        pass,
        format!(
            "vdn err {worst_vdn:.1e}, min dQtot/dQi {min_slope:.3e}, attention sum err {worst_att:.1e}, qtran err {worst_qtran:.1e}, cw/ow weights {}",
            if weights_ok { "ok" } else { "wrong" }
        ),
    ))
}

fn c3_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for kind in MixerKind::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = ModelConfig {
            mixer: MixerConfig { embed_dim: 4, hyper_hidden: 4, heads: 2, key_dim: 2, alpha: 0.5, qtran_penalty: 0.7 },
            hidden: vec![5],
            ..ModelConfig::new(kind, 2, 3, 3)
        };
        let mut model = QModel::new(cfg, &mut rng).map_err(|e| e.to_string())?;
        largest = largest.max(model.n_params());
        for t in &mut model.target {
            *t += rng.random_range(-0.1..0.1);
        }
        let batch: Vec<Transition> = (0..6)
            .map(|i| Transition {
                case_id: "x".into(),
                state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                actions: vec![rng.random_range(0..3), rng.random_range(0..3)],
                reward: rng.random_range(0.0..1.0),
                next_state: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: i % 3 == 0,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = |p: &[f64]| mse_loss(&model, p, &refs, 0.9).map(|o| o.loss);
        let grad = mse_loss(&model, &model.params, &refs, 0.9).map_err(|e| e.to_string())?.grad;
        for i in 0..model.n_params() {
            let (mut a, mut b) = (model.params.clone(), model.params.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a).map_err(|e| e.to_string())? - loss(&b).map_err(|e| e.to_string())?) / 2e-6;
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4));
        }
    }
    Ok((worst < 1e-4 && largest <= 500, format!("worst relative error {worst:.2e} over 7 mixers, largest net {largest} params")))
}

fn c4_tabular() -> Outcome {
    let mut env = TabularMg::default();
    let cfg = TrainConfig {
        gamma: 0.9,
        lr: 0.05,
        batch_size: 16,
        target_sync: 50,
        episodes: 120,
        grad_clip: None,
        seed: 5,
        ..TrainConfig::default()
    };
    let mc = ModelConfig { hidden: vec![], zero_agents: true, ..ModelConfig::new(MixerKind::Vdn, 2, 3, 2) };
    let mut trainer = Trainer::new(QModel::new(mc, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?, &cfg);
    train_online(&mut trainer, &mut env, &cfg).map_err(|e| e.to_string())?;
    let q_star = value_iteration(&env, cfg.gamma, 1e-12);
    let mut worst: f64 = 0.0;
    let mut same_policy = true;
    for s in 0..2 {
        let (a, v) = trainer.model.greedy_with(&trainer.model.params, &TabularMg::observation(s));
        let j = argmax(&q_star[s]);
        same_policy &= a == vec![j / 3, j % 3];
        worst = worst.max((v - q_star[s][j]).abs());
    }
    Ok((worst <= 1e-3 && same_policy, format!("max |Q - Q*| {worst:.2e}, greedy policy {}", if same_policy { "matches" } else { "differs" })))
}

type Raw = (BTreeMap<String, Vec<TrajectoryTrack>>, BTreeMap<String, PatientProfile>);

fn raw_cases(n: usize, seed: u64) -> Raw {
    let cases = generate_cases(n, seed, &SynthConfig::default()).unwrap();
    (
        cases.iter().map(|c| (c.meta.case_id.clone(), c.tracks.clone())).collect(),
        cases.iter().map(|c| (c.meta.case_id.clone(), c.meta.profile)).collect(),
    )
}

fn c5_pipeline(raw: &Raw) -> Outcome {
    let cfg = PipelineConfig::default();
    let (records, _) = run_pipeline(&raw.0, &raw.1, &cfg).map_err(|e| e.to_string())?;
    let again: BTreeMap<_, _> = records.iter().map(|r| (r.case_id.clone(), r.to_tracks())).collect();
    let (second, _) = run_pipeline(&again, &raw.1, &cfg).map_err(|e| e.to_string())?;
    let idempotent = second == records;
    let shape_ok = records.iter().all(|r| {
        (120..=1000).contains(&r.len())
            && r.start_time_s < 300.0
            && r.to_tracks().iter().all(|t| t.samples.windows(2).all(|w| close(w[1].0 - w[0].0, 30.0, 1e-9)))
    });
    let profile = PatientProfile::new(40, 0, 60.0, 165.0).map_err(|e| e.to_string())?;
    let late: Vec<TrajectoryTrack> = Indicator::ALL
        .iter()
        .map(|&ind| {
            let start = if ind == Indicator::Mbp { 40.0 } else { 0.0 };
            TrajectoryTrack::new("late", ind, (0..6000).map(|s| (start + s as f64, 50.0)).collect())
        })
        .collect();
    let sync_fail = matches!(process_case("late", &late, Some(profile), &cfg), Err(r) if r.reason == RejectReason::SyncFail);
    Ok((
        idempotent && shape_ok && sync_fail && !records.is_empty(),
        format!(
            "{} kept, idempotent {idempotent}, spacing/length/start {shape_ok}, 40 s late -> SYNC_FAIL {sync_fail}",
            records.len()
        ),
    ))
}

struct Experiment {
    train: Vec<CaseRecord>,
    test: Vec<CaseRecord>,
    env: ForestModel,
}

fn base_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.agents.grid = ActionGrid::new(11, vec![1.0, 0.3]).unwrap();
    cfg.agents.train.optimizer = OptimizerKind::Adam;
    cfg.agents.train.gamma = 0.95;
    cfg.agents.train.episodes = 200;
    cfg
}

fn c6_environment(raw: &Raw) -> Result<(bool, String, Experiment), String> {
    let t0 = Instant::now();
    let cfg = base_config().resolved().map_err(|e| e.to_string())?;
    let (records, _) = run_pipeline(&raw.0, &raw.1, &cfg.pipeline).map_err(|e| e.to_string())?;
    let split = split_dataset(&records, SPLIT_SEED).map_err(|e| e.to_string())?;
    let (train, test) = apply_split(&records, &split).map_err(|e| e.to_string())?;
    let env = experiment::fit_env(&cfg, &train).map_err(|e| e.to_string())?;
    let m = experiment::env_metrics(&cfg, &env, &test, "test", true).map_err(|e| e.to_string())?;
    let (rf, pkpd) = (&m.methods[0], &m.methods[1]);
    let r2 = rf.bis_r2().unwrap_or(f64::NAN);
    let (rf_rmse, pk_rmse) = (rf.bis_rmse().unwrap_or(f64::NAN), pkpd.bis_rmse().unwrap_or(f64::NAN));
    let total: f64 = m.feature_importance.iter().map(|f| f.1).sum();
    let rank = m.feature_importance.iter().position(|f| f.0 == "bis").map_or(usize::MAX, |r| r + 1);
    let elapsed = t0.elapsed();
    let pass = r2 >= 0.8 && rf_rmse < pk_rmse && close(total, 1.0, 1e-9) && rank <= 3 && elapsed <= Duration::from_secs(300);
    let msg = format!(
        "BIS R2 {r2:.4}, BIS RMSE RF {rf_rmse:.5} vs PK/PD {pk_rmse:.5}, importance sum {total:.12}, BIS rank {rank}, {} train / {} test cases, {:.0} s",
        train.len(),
        test.len(),
        elapsed.as_secs_f64()
    );
    Ok((pass, msg, Experiment { train, test, env }))
}

fn policy_vs_behavior(cfg: &ExperimentConfig, ex: &Experiment) -> Result<(AggregateRow, AggregateRow), String> {
    let (ckpt, _) = experiment::train_agents(cfg, &ex.train, Some(&ex.env)).map_err(|e| e.to_string())?;
    let rep = experiment::evaluate_agents(cfg, &ex.env, &[ckpt], &ex.test, false).map_err(|e| e.to_string())?;
    Ok((rep.aggregate[0].clone(), rep.aggregate[1].clone()))
}

fn c7_online(ex: &Experiment) -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let mut cfg = base_config();
        cfg.seed = seed;
        let cfg = cfg.resolved().map_err(|e| e.to_string())?;
        let (b, p) = policy_vs_behavior(&cfg, ex)?;
        pass &= p.cr > b.cr && p.mdape_mean < b.mdape_mean;
        parts.push(format!(
            "seed {seed}: CR {:.1} vs {:.1}, MDAPE {:.2} vs {:.2}",
            p.cr, b.cr, p.mdape_mean, b.mdape_mean
        ));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed <= Duration::from_secs(1200);
    Ok((pass, format!("{} (policy vs behavior), {:.0} s", parts.join("; "), elapsed.as_secs_f64())))
}

fn offline_config() -> ExperimentConfig {
    let mut cfg = base_config();
    cfg.agents.mode = TrainMode::Offline;
    cfg
}

fn c8_offline(ex: &Experiment) -> Outcome {
    let t0 = Instant::now();
    let cfg = offline_config().resolved().map_err(|e| e.to_string())?;
    let (b, p) = policy_vs_behavior(&cfg, ex)?;
    let elapsed = t0.elapsed();
    Ok((
        p.mdape_mean <= b.mdape_mean && elapsed <= Duration::from_secs(1200),
        format!("offline MDAPE {:.2} vs behavior {:.2}, {:.0} s", p.mdape_mean, b.mdape_mean, elapsed.as_secs_f64()),
    ))
}

/// Every stage twice from scratch, compared through its serialized form.
fn c9_determinism() -> Outcome {
    let bytes = || -> Result<Vec<Vec<u8>>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (raw, data) = (dir.path().join("raw"), dir.path().join("data"));
        let mut cfg = base_config();
        cfg.seed = 3;
        cfg.synth.n_cases = 12;
        cfg.envsim.n_trees = 5;
        cfg.agents.hidden = vec![16];
        cfg.agents.train.episodes = 3;
        let cfg = cfg.resolved().map_err(|e| e.to_string())?;
        let e = |x: dosinglab::Error| x.to_string();
        experiment::generate(&cfg, &raw).map_err(e)?;
        experiment::preprocess(&cfg, &raw, &data).map_err(e)?;
        let (train, test) = experiment::load_split(&data).map_err(e)?;
        let env = experiment::fit_env(&cfg, &train).map_err(e)?;
        let mut out = vec![std::fs::read(raw.join("manifest.json")).map_err(|x| x.to_string())?];
        for f in dosinglab::io::list_files(&data.join("records"), "csv").map_err(e)? {
            out.push(std::fs::read(f).map_err(|x| x.to_string())?);
        }
        out.push(serde_json::to_vec(&env).map_err(|x| x.to_string())?);
        let mut ckpts = Vec::new();
        for mode in [TrainMode::Online, TrainMode::Offline] {
            let mut c = cfg.clone();
            c.agents.mode = mode;
            let (ck, log) = experiment::train_agents(&c, &train, Some(&env)).map_err(e)?;
            out.push(serde_json::to_vec(&ck).map_err(|x| x.to_string())?);
            out.push(serde_json::to_vec(&log).map_err(|x| x.to_string())?);
            ckpts.push(ck);
        }
        let rep = experiment::evaluate_agents(&cfg, &env, &ckpts, &test, true).map_err(e)?;
        let rdir = dir.path().join("report");
        dosinglab::evalrep::write_report(&rdir, &rep).map_err(e)?;
        for f in ["metrics_per_case.csv", "metrics_aggregate.csv", "traj_mean_bis.csv", "boxstats.json"] {
            out.push(std::fs::read(rdir.join(f)).map_err(|x| x.to_string())?);
        }
        Ok(out)
    };
    let (a, b) = (bytes()?, bytes()?);
    let n = a.len();
    let same = a == b;
    Ok((same, format!("{n} artifacts (manifest, records, forest, checkpoints, logs, report) {}", if same { "identical" } else { "differ" })))
}

fn report(id: usize, name: &str, outcome: Outcome) -> bool {
    let (pass, msg) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("[{}] {id}. {name}: {msg}", if pass { "PASS" } else { "FAIL" });
    pass
}

/// Every criterion is reported. The exit status is nonzero on a failure only when
/// ACCEPTANCE_STRICT is set, so a red criterion does not stop the rest of a workspace test run.
fn main() {
    let mut passed = 0;
    let mut tally = |ok: bool| passed += ok as usize;
    tally(report(1, "formula exactness", c1_formulas()));
    tally(report(2, "mixer correctness", c2_mixers()));
    tally(report(3, "gradient oracle", c3_gradients()));
    tally(report(4, "tabular oracle", c4_tabular()));
    let raw = raw_cases(N_CASES, DATA_SEED);
    tally(report(5, "pipeline", c5_pipeline(&raw)));
    match c6_environment(&raw) {
        Ok((pass, msg, ex)) => {
            tally(report(6, "environment model", Ok((pass, msg))));
            tally(report(7, "online policy quality", c7_online(&ex)));
            tally(report(8, "offline mode parity", c8_offline(&ex)));
        }
        Err(e) => {
            for (id, name) in [(6, "environment model"), (7, "online policy quality"), (8, "offline mode parity")] {
                tally(report(id, name, Err(e.clone())));
            }
        }
    }
    tally(report(9, "determinism", c9_determinism()));
    println!("acceptance: {passed} of 9 criteria pass");
    if passed < 9 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
