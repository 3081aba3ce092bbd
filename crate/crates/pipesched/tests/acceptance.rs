//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pipesched::check::oracle_check;
use pipesched::config::TrainConfig;
use pipesched::evaluate::{evaluate, EvalOptions};
use pipesched::train::{build_datasets, derive_seed, initial_params, train_on, SplitSpec, Stream};
use pipesched_core::deploy::{repair_schedule, CoStageRule};
use pipesched_core::embed::embed_graph;
use pipesched_core::error::ScheduleError;
use pipesched_core::exact::{exact_schedule, exact_schedule_with, ExactConfig};
use pipesched_core::graph::ComputeDag;
use pipesched_core::heuristic::list_schedule;
use pipesched_core::policy::{
    backward, decode_sequence, encode, greedy_decode, sequence_log_prob, DecodeMode, PolicyConfig, PolicyParams, TENSOR_NAMES,
};
use pipesched_core::rl::{cosine_reward, policy_schedule, seq_to_schedule};
use pipesched_core::sampler::{sample_dag, SamplerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn oracle_correctness() -> Verdict {
    let t = Instant::now();
    let report = oracle_check(8, 200, 0).expect("oracle check");
    let elapsed = t.elapsed();
    verdict(
        report.mismatches.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} DAGs with |V| <= 8 and n in 2..=4, {} mismatches, {:.2} s (limit 60 s)",
            report.trials,
            report.mismatches.len(),
            secs(elapsed)
        ),
    )
}

fn gradient_fidelity() -> Verdict {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let t = Instant::now();
    let g = sample_dag(&SamplerConfig::new(4, 2, 7)).unwrap();
    let e = embed_graph(&g, 2).unwrap();
    let p = PolicyParams::init(PolicyConfig::new(8, 2), 17);
    let enc = encode(&e, &p).unwrap();
    let mut seq = greedy_decode(&enc, &p).unwrap().sequence;
    seq.reverse();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = decode_sequence(&enc, &p, DecodeMode::Forced(&seq), &mut rng).unwrap();
    let advantage = 0.73;
    let grad = backward(&enc, &trace, advantage, &p).unwrap();
    let loss = |q: &PolicyParams| advantage * sequence_log_prob(&e, &seq, q).unwrap();
    let mut worst = (0.0f64, "");
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        for k in 0..p.tensors()[ti].len() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].as_mut_slice()[k] += STEP;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].as_mut_slice()[k] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let analytic = grad.tensors()[ti].as_slice()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, name);
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        worst.0 <= 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "|V| = 4, d = 8, {} tensors: max relative error {:.2e} (in {}), {:.2} s (limits 1e-4, 30 s)",
            TENSOR_NAMES.len(),
            worst.0,
            worst.1,
            secs(elapsed)
        ),
    )
}

fn decoding_validity() -> Verdict {
    const EPISODES: usize = 10_000;
    let rules = [CoStageRule::Off, CoStageRule::CrossingFanOut, CoStageRule::AllChildren];
    let results: Vec<(bool, usize)> = (0..EPISODES)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(5, Stream::Check, 1, i as u64));
            let v = rng.random_range(2..=30);
            let degree = rng.random_range(1..=6usize.min(v - 1));
            let n = rng.random_range(1..=4usize.min(v));
            let g = sample_dag(&SamplerConfig::new(v, degree, rng.random())).unwrap();
            let p = PolicyParams::init(PolicyConfig::new(16, 6), rng.random());
            let enc = encode(&embed_graph(&g, 6).unwrap(), &p).unwrap();
            let pi = decode_sequence(&enc, &p, DecodeMode::Sample, &mut rng).unwrap().sequence;
            let mut seen = vec![false; v];
            let permutation = pi.len() == v && pi.iter().all(|&x| x < v && !std::mem::replace(&mut seen[x], true));
            let raw = seq_to_schedule(&pi, &g, n).unwrap();
            let infeasible = rules
                .iter()
                .filter(|&&rule| {
                    let s = repair_schedule(&raw, &g, rule).schedule;
                    s.check_dependencies(&g).is_err() || s.stage_of.iter().any(|&x| x >= n)
                })
                .count();
            (permutation, infeasible)
        })
        .collect();
    let permutations = results.iter().filter(|r| r.0).count();
    let infeasible: usize = results.iter().map(|r| r.1).sum();
    verdict(
        permutations == EPISODES && infeasible == 0,
        format!(
            "{EPISODES} sampled episodes on |V| <= 30: {permutations} permutations, \
             {infeasible} infeasible repaired schedules over 3 co-stage rules"
        ),
    )
}

fn reward_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(6, Stream::Check, 2, 0));
    let mut self_ok = 0;
    let mut range_ok = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=40);
        let n = rng.random_range(1..=8);
        let mut a: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        if a.iter().all(|&x| x == 0) {
            a[0] = 1;
        }
        let b: Vec<usize> = (0..len).map(|_| rng.random_range(0..n)).collect();
        if cosine_reward(&a, &a, 1e-8).unwrap() == 1.0 {
            self_ok += 1;
        }
        if (0.0..=1.0).contains(&cosine_reward(&a, &b, 1e-8).unwrap()) {
            range_ok += 1;
        }
    }
    let derived = cosine_reward(&[0, 1, 1, 2], &[0, 1, 2, 2], 1e-8).unwrap();
    let expected = 7.0 / (6f64.sqrt() * 3.0);
    let err = (derived - expected).abs();
    verdict(
        self_ok == 1000 && range_ok == 1000 && err <= 1e-9,
        format!(
            "R(S,S) = 1 on {self_ok}/1000, R in [0,1] on {range_ok}/1000, \
             R([0,1,1,2],[0,1,2,2]) = {derived:.12} (error {err:.1e}, limit 1e-9)"
        ),
    )
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        learning_rate: 1e-3,
        batch_size: 32,
        degrees: vec![2, 3],
        graphs_per_degree: 2500,
        num_nodes: 10,
        num_stages: 3,
        hidden_dim: 64,
        validation_graphs: 256,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn desk_scale_learning() -> (Verdict, PolicyParams) {
    const HELD_OUT: usize = 500;
    let cfg = desk_config();
    let t = Instant::now();
    let (train_set, validation) = build_datasets(&cfg).expect("datasets");
    let outcome = train_on(&cfg, &train_set, &validation, |_| Ok(())).expect("training");
    let elapsed = t.elapsed();

    let held_out: Vec<ComputeDag> = SplitSpec::for_config(&cfg, Stream::Test, HELD_OUT)
        .sample()
        .expect("held-out graphs")
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    let opts = EvalOptions::new(cfg.num_stages);
    let trained = evaluate(&held_out, &outcome.params, &opts).expect("evaluation").summary;
    let untrained = evaluate(&held_out, &initial_params(&cfg), &opts).expect("evaluation").summary;
    let first = outcome.history[0].val_reward;
    let best = outcome.history.iter().map(|m| m.baseline_val_reward).fold(f64::MIN, f64::max);

    let passed = trained.mean_reward >= 0.95
        && trained.mean_gap_pct <= 10.0
        && untrained.mean_gap_pct >= 25.0
        && trained.feasibility_rate == 1.0
        && best > first
        && elapsed <= Duration::from_secs(30 * 60);
    let detail = format!(
        "{} training graphs, {} epochs, {:.0} s (limit 1800 s); validation R {first:.4} -> {best:.4}; \
         held-out ({HELD_OUT} graphs) R {:.4} (need >= 0.95), gap {:.2}% (need <= 10%), \
         untrained gap {:.2}% (need >= 25%), feasible {:.3}, heuristic gap {:.2}%",
        outcome.train_graphs,
        cfg.epochs,
        secs(elapsed),
        trained.mean_reward,
        trained.mean_gap_pct,
        untrained.mean_gap_pct,
        trained.feasibility_rate,
        trained.mean_heuristic_gap_pct,
    );
    (verdict(passed, detail), outcome.params)
}

fn solving_time(params: &PolicyParams) -> Verdict {
    const INSTANCES: usize = 50;
    const N: usize = 4;
    // a budget cut-off only understates the exact time
    const BUDGET: u64 = 20_000_000;
    let mut rl_total = 0.0;
    let mut exact_total = 0.0;
    let mut ordered = 0;
    let mut cut_off = 0;
    for i in 0..INSTANCES {
        let g = sample_dag(&SamplerConfig::new(100, 3, derive_seed(8, Stream::Test, 100, i as u64))).unwrap();
        let t = Instant::now();
        list_schedule(&g, N).unwrap();
        let heuristic = secs(t.elapsed());
        let t = Instant::now();
        policy_schedule(&g, params, N, CoStageRule::Off).unwrap();
        let rl = secs(t.elapsed());
        let t = Instant::now();
        match exact_schedule_with(&g, N, &ExactConfig { max_expansions: Some(BUDGET) }) {
            Ok(_) => {}
            Err(ScheduleError::SearchLimit(_)) => cut_off += 1,
            Err(e) => panic!("exact schedule: {e}"),
        }
        let exact = secs(t.elapsed());
        rl_total += rl;
        exact_total += exact;
        if heuristic <= rl && rl <= exact {
            ordered += 1;
        }
    }
    let speedup = exact_total / rl_total;
    verdict(
        speedup >= 10.0 && ordered * 10 >= INSTANCES * 9,
        format!(
            "{INSTANCES} graphs, |V| = 100, n = {N}: mean RL {:.2} ms, mean exact {:.1} ms \
             ({cut_off} stopped at {BUDGET} expansions), speedup {speedup:.0}x (need >= 10x), \
             heuristic <= RL <= exact on {ordered}/{INSTANCES} (need >= 90%)",
            rl_total / INSTANCES as f64 * 1e3,
            exact_total / INSTANCES as f64 * 1e3,
        ),
    )
}

fn baseline_sanity() -> Verdict {
    const GRAPHS: usize = 500;
    let violations: usize = (0..GRAPHS)
        .into_par_iter()
        .map(|i| {
            let degree = 2 + i % 5;
            let n = 2 + i % 3;
            let g = sample_dag(&SamplerConfig::new(30, degree, derive_seed(9, Stream::Test, 30, i as u64))).unwrap();
            let heuristic = list_schedule(&g, n).unwrap().1.peak_stage_memory;
            let exact = exact_schedule(&g, n).unwrap().1.peak_stage_memory;
            usize::from(heuristic < exact)
        })
        .sum();
    verdict(
        violations == 0,
        format!("{GRAPHS} graphs, |V| = 30, n in 2..=4: {violations} heuristic peaks below the exact peak"),
    )
}

fn run_cli(args: &[&str], threads: &str) {
    let out = Command::new(env!("CARGO_BIN_EXE_pipesched"))
        .args(args)
        .env(pipesched::THREADS_ENV, threads)
        .output()
        .expect("spawn pipesched");
    assert!(
        out.status.success(),
        "pipesched {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("train.toml");
    fs::write(
        &config,
        "epochs = 2\nbatch_size = 16\ndegrees = [2, 3]\ngraphs_per_degree = 60\nnum_nodes = 8\nnum_stages = 3\n\
         hidden_dim = 16\nvalidation_graphs = 16\nlearning_rate = 1e-3\n",
    )
    .unwrap();
    let config = config.to_str().unwrap();
    let path = |name: &str| root.join(name).to_str().unwrap().to_string();
    let bytes = |name: &str| fs::read(Path::new(&path(name))).unwrap();

    let mut checks = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4")] {
        let ckpt = path(&format!("policy-{run}.json"));
        let metrics = path(&format!("metrics-{run}.jsonl"));
        run_cli(
            &["train", "--config", config, "--seed", "3", "--checkpoint", &ckpt, "--metrics", &metrics],
            threads,
        );
    }
    checks.push(("train checkpoint", bytes("policy-a.json") == bytes("policy-b.json")));

    run_cli(&["sample", "--nodes", "24", "--degree", "3", "--count", "1", "--seed", "2", "--out", &path("g")], "1");
    let graph = root.join("g/graph-00000.json");
    let graph = graph.to_str().unwrap();
    let ckpt = path("policy-a.json");
    for method in ["exact", "heuristic", "rl"] {
        for run in ["a", "b"] {
            let out = path(&format!("{method}-{run}.json"));
            run_cli(
                &["schedule", "--graph", graph, "--stages", "3", "--method", method, "--checkpoint", &ckpt, "--out", &out],
                if run == "a" { "1" } else { "4" },
            );
        }
        let same = bytes(&format!("{method}-a.json")) == bytes(&format!("{method}-b.json"));
        checks.push((method, same));
    }
    let differing: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        differing.is_empty(),
        format!(
            "reruns on 1 and 4 threads: train checkpoint and exact/heuristic/rl schedule files {}",
            if differing.is_empty() {
                "byte-identical".to_string()
            } else {
                format!("differ: {differing:?}")
            }
        ),
    )
}

fn main() -> ExitCode {
    pipesched::init_threads().expect("thread pool");
    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed += 1;
        }
    };
    report("oracle correctness", oracle_correctness());
    report("gradient fidelity", gradient_fidelity());
    report("decoding validity", decoding_validity());
    report("reward identities", reward_identities());
    let (learning, params) = desk_scale_learning();
    report("desk-scale learning", learning);
    report("solving-time ordering", solving_time(&params));
    report("baseline sanity", baseline_sanity());
    report("determinism", determinism());
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
