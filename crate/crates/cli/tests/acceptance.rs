//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`)
//! and prints one line per criterion:
//!
//! ```text
//! cargo test -p crowdcause-cli --test acceptance
//! ```

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use crowdcause::aggregate::{em_fit, structure_search, MixtureData, Scorer};
use crowdcause::design::{
    components, e_optimality, eig_gain, information_matrix, run_sequential, select_stage,
    Criterion, GaussianBelief, Pair, PoolMode, SequentialConfig, StageContext,
};
use crowdcause::enumerate::enumerate_dags;
use crowdcause::expert::{
    all_queries, build_crowd, elicit, homogeneous_crowd, make_profile, Archetype, Protocol,
    SimulatedExpert,
};
use crowdcause::graph::canonical_pairs;
use crowdcause::inference::edgewise::dirichlet_eig;
use crowdcause::inference::ordering::{grad_indexed, loglik_indexed};
use crowdcause::iv::{iv_replicates, knowledge_filter, simulate_iv, tsls, write_csv, IvScenario};
use crowdcause::{asia_fixture, shd, Dag};
use crowdcause_cli::{run_experiment, ExperimentConfig, ExperimentReport};
use crowdcause_service::{router, AppState, SessionStore};
use http_body_util::BodyExt;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn experiment(doc: Value) -> Result<ExperimentReport, String> {
    let config = ExperimentConfig::from_value(doc, &[]).map_err(|e| e.to_string())?;
    run_experiment(&config).map_err(|e| e.to_string())
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn omniscient_recovery() -> Outcome {
    let report = experiment(json!({
        "crowd": [{"archetype": "Omniscient"}],
        "protocol": "edge",
        "aggregation": "single",
        "replicates": 100
    }))?;
    for r in &report.rows {
        ensure(
            r.shd == 0 && r.edge_precision == 1.0 && r.edge_recall == 1.0,
            || {
                format!(
                    "seed {}: shd {} P {} R {}",
                    r.seed, r.shd, r.edge_precision, r.edge_recall
                )
            },
        )?;
    }
    Ok(format!("{} seeds, all SHD 0, P = R = 1", report.rows.len()))
}

fn perfect_incomplete_safety() -> Outcome {
    let report = experiment(json!({
        "crowd": [{"archetype": "PerfectIncomplete"}],
        "protocol": "edge",
        "aggregation": "single",
        "replicates": 100
    }))?;
    let wrong = report
        .rows
        .iter()
        .filter(|r| r.edge_precision != 1.0)
        .count();
    ensure(wrong == 0, || format!("{wrong} seeds with precision < 1"))?;
    let recall = report.summary.edge_recall.mean;
    ensure((0.25..=0.55).contains(&recall), || {
        format!("mean recall {recall:.3} outside [0.25, 0.55]")
    })?;
    Ok(format!(
        "precision 1 in 100/100 seeds, mean recall {recall:.3}"
    ))
}

fn wisdom_of_the_crowd() -> Outcome {
    let report = experiment(json!({
        "crowd": [{"archetype": "Imperfect", "count": 20}],
        "protocol": "edge",
        "aggregation": "query_level",
        "restarts": 1,
        "replicates": 100,
        "parallelism": threads()
    }))?;
    let wins = report.summary.beats_individual;
    ensure(wins >= 90, || {
        format!("aggregate beat the mean individual in {wins}/100 seeds")
    })?;
    Ok(format!(
        "aggregate beats mean individual in {wins}/100 seeds (SHD {:.2} vs {:.2})",
        report.summary.shd.mean, report.summary.mean_individual_shd.mean
    ))
}

fn oracle_equivalence() -> Outcome {
    let mut parts = Vec::new();
    for protocol in [Protocol::EdgeWise, Protocol::OrderingWise] {
        for (n, expected) in [(3usize, 25usize), (4, 543)] {
            let dags = enumerate_dags(n).map_err(|e| e.to_string())?;
            ensure(dags.len() == expected, || {
                format!("{n} nodes: {} DAGs", dags.len())
            })?;
            let mut hits = 0;
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truth = &dags[rng.random_range(0..dags.len())];
                let members = homogeneous_crowd(Archetype::Imperfect, 10, "e");
                let mut crowd = build_crowd(&members, truth, seed).map_err(|e| e.to_string())?;
                let d =
                    elicit(&mut crowd, &all_queries(truth), protocol).map_err(|e| e.to_string())?;
                let data = MixtureData::new(&d, truth.nodes()).map_err(|e| e.to_string())?;
                let scorer = Scorer::new(&data);
                let mut best = f64::NEG_INFINITY;
                for g in &dags {
                    best = best.max(scorer.score(g).map_err(|e| e.to_string())?.score);
                }
                let init = Dag::empty(truth.nodes()).map_err(|e| e.to_string())?;
                let found = structure_search(&data, &init, 10, seed).map_err(|e| e.to_string())?;
                if found.best.score >= best - 1e-6 {
                    hits += 1;
                }
            }
            ensure(hits >= 95, || {
                format!("{protocol} N={n}: {hits}/100 within 1e-6")
            })?;
            parts.push(format!("{protocol} N={n} {hits}/100"));
        }
    }
    Ok(parts.join(", "))
}

fn design_value() -> Outcome {
    let truth = asia_fixture();
    let mut diffs = Vec::new();
    let mut means = [0.0; 2];
    for seed in 0..200u64 {
        let mut finals = [0.0; 2];
        for (k, criterion) in [Criterion::Eig, Criterion::Random].into_iter().enumerate() {
            let mut expert = vec![SimulatedExpert::new(
                "i",
                make_profile(Archetype::Imperfect),
                &truth,
                seed,
            )];
            let config = SequentialConfig {
                stages: vec![4, 4, 4, 4],
                criterion,
                protocol: Protocol::EdgeWise,
                pool_mode: PoolMode::Remove,
                seed,
            };
            let out = run_sequential(&mut expert, &truth, &config).map_err(|e| e.to_string())?;
            finals[k] = shd(&out.estimate, &truth).map_err(|e| e.to_string())? as f64;
            means[k] += finals[k] / 200.0;
        }
        diffs.push(finals[0] - finals[1]);
    }
    let (d, se) = mean_se(&diffs);
    let detail = format!(
        "mean SHD eig {:.3}, random {:.3}, paired diff {d:.3} (SE {se:.3})",
        means[0], means[1]
    );
    ensure(means[0] <= means[1], || detail.clone())?;
    Ok(detail)
}

fn e_optimality_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut steps = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..=8);
        let pool = canonical_pairs(n);
        let history: Vec<(Pair, f64)> = pool
            .iter()
            .filter(|_| rng.random_bool(0.2))
            .map(|&p| (p, 1.0))
            .collect();
        let k = rng.random_range(1..=pool.len());
        let ctx = StageContext {
            stage: 0,
            n,
            history: &history,
            weight: 1.0,
            belief: None,
            seed: 0,
        };
        let stage =
            select_stage(&pool, k, Criterion::EOptimality, &ctx).map_err(|e| e.to_string())?;
        let mut design = history.clone();
        let mut last = e_optimality(&information_matrix(n, &design));
        for q in &stage.queries {
            design.push((*q, 1.0));
            let now = e_optimality(&information_matrix(n, &design));
            ensure(now >= last - 1e-12, || {
                format!("lambda1 fell {last} -> {now}")
            })?;
            last = now;
            steps += 1;
        }
    }
    let truth = asia_fixture();
    for seed in 0..10 {
        let mut expert = vec![SimulatedExpert::new(
            "i",
            make_profile(Archetype::Imperfect),
            &truth,
            seed,
        )];
        let config = SequentialConfig {
            stages: vec![3; 9],
            criterion: Criterion::EOptimality,
            protocol: Protocol::OrderingWise,
            pool_mode: PoolMode::Remove,
            seed,
        };
        let out = run_sequential(&mut expert, &truth, &config).map_err(|e| e.to_string())?;
        for w in out.trace.windows(2) {
            ensure(w[1].lambda1 >= w[0].lambda1 - 1e-12, || {
                format!(
                    "sequential lambda1 fell {} -> {}",
                    w[0].lambda1, w[1].lambda1
                )
            })?;
        }
    }
    let mut checked = 0;
    for _ in 0..300 {
        let n = rng.random_range(2..=8);
        let design: Vec<(Pair, f64)> = canonical_pairs(n)
            .into_iter()
            .filter(|_| rng.random_bool(0.25))
            .map(|p| (p, 1.0))
            .collect();
        let l = e_optimality(&information_matrix(n, &design));
        ensure((l == 0.0) == (components(n, &design) > 1), || {
            format!("lambda1 {l} with {} components", components(n, &design))
        })?;
        checked += 1;
    }
    for n in 2..=12 {
        let complete: Vec<(Pair, f64)> = canonical_pairs(n).into_iter().map(|p| (p, 1.0)).collect();
        let m = information_matrix(n, &complete);
        let l = e_optimality(&m);
        let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        ensure(
            (l - n as f64).abs() < 1e-8 && (eig[1] - n as f64).abs() < 1e-8,
            || format!("complete K{n}: lambda1 {l}, eigensolver {}", eig[1]),
        )?;
    }
    Ok(format!(
        "{steps} greedy steps monotone, {checked} connectivity checks, complete graphs N=2..12 give N"
    ))
}

fn numerical_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 5;
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sigma = rng.random_range(0.5..5.0);
        let obs: Vec<(usize, usize, i32)> = (0..12)
            .map(|_| {
                let u = rng.random_range(0..n - 1);
                let v = rng.random_range(u + 1..n);
                (u, v, rng.random_range(-10..=10))
            })
            .collect();
        let g = grad_indexed(&phi, sigma, 2.0, &obs);
        for k in 0..n {
            let h = 1e-5;
            let (mut up, mut down) = (phi.clone(), phi.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (loglik_indexed(&up, sigma, 2.0, &obs)
                - loglik_indexed(&down, sigma, 2.0, &obs))
                / (2.0 * h);
            worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3));
        }
    }
    ensure(worst < 1e-5, || {
        format!("gradient relative error {worst:e}")
    })?;

    let truth = asia_fixture();
    let candidates = [
        truth.clone(),
        Dag::empty(truth.nodes()).map_err(|e| e.to_string())?,
        truth.transitive_reduction(),
    ];
    let mut iterations = 0;
    for protocol in [Protocol::EdgeWise, Protocol::OrderingWise] {
        for seed in 0..4u64 {
            let mut members = homogeneous_crowd(Archetype::Imperfect, 4, "i");
            members.extend(homogeneous_crowd(Archetype::BadActor, 2, "b"));
            let mut crowd = build_crowd(&members, &truth, seed).map_err(|e| e.to_string())?;
            let d =
                elicit(&mut crowd, &all_queries(&truth), protocol).map_err(|e| e.to_string())?;
            let data = MixtureData::new(&d, truth.nodes()).map_err(|e| e.to_string())?;
            for g in &candidates {
                let fit = em_fit(&data, g).map_err(|e| e.to_string())?;
                for w in fit.trace.windows(2) {
                    ensure(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), || {
                        format!("{protocol} seed {seed}: EM {} -> {}", w[0], w[1])
                    })?;
                }
                iterations += fit.trace.len();
            }
        }
    }

    let mut mc_checks = 0;
    for case in 0..5 {
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let mean = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = rng.random_range(0.2..2.0);
        let belief = GaussianBelief::new(mean.clone(), cov.clone(), noise);
        let (u, v) = (case % n, (case + 1) % n);
        let chol = cov
            .cholesky()
            .ok_or("covariance not positive definite")?
            .l();
        let mu_d = mean[u] - mean[v];
        let var_d = belief.pair_variance(u, v);
        let log_normal = |x: f64, m: f64, var: f64| {
            -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - m).powi(2) / var)
        };
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let phi = &mean + &chol * z;
                let signal = phi[u] - phi[v];
                let y = signal + noise.sqrt() * rng.sample::<f64, _>(StandardNormal);
                log_normal(y, signal, noise) - log_normal(y, mu_d, var_d + noise)
            })
            .collect();
        let (m, se) = mean_se(&draws);
        let exact = eig_gain(&belief, u, v);
        ensure((m - exact).abs() <= 3.0 * se, || {
            format!("gaussian case {case}: closed form {exact}, MC {m} +- {se}")
        })?;
        mc_checks += 1;
    }
    for alpha in [
        [1.0, 1.0, 1.0],
        [2.0, 1.0, 1.0],
        [0.5, 3.0, 1.5],
        [6.0, 1.0, 2.0],
    ] {
        let total: f64 = alpha.iter().sum();
        let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
                let s: f64 = g.iter().sum();
                let r: f64 = rng.random::<f64>() * s;
                let y = if r < g[0] {
                    0
                } else if r < g[0] + g[1] {
                    1
                } else {
                    2
                };
                (g[y] / s).ln() - (alpha[y] / total).ln()
            })
            .collect();
        let (m, se) = mean_se(&draws);
        let exact = dirichlet_eig(alpha);
        ensure((m - exact).abs() <= 3.0 * se, || {
            format!("dirichlet {alpha:?}: closed form {exact}, MC {m} +- {se}")
        })?;
        mc_checks += 1;
    }
    Ok(format!(
        "gradient max rel err {worst:.1e}, {iterations} EM iterations monotone, {mc_checks} EIG MC checks within 3 SE"
    ))
}

fn iv_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let p = rng.random_range(1..=5);
        let s = IvScenario {
            alpha: (0..p).map(|_| rng.random_range(0.3..2.0)).collect(),
            beta: rng.random_range(-3.0..3.0),
            gamma: vec![0.0; p],
            xi_conf: 0.0,
            zeta: 0.0,
            sigma_exposure: 0.0,
            sigma_outcome: 0.0,
            sigma_confounder: 0.0,
        };
        let d = simulate_iv(&s, p + 2 + k % 20, k as u64).map_err(|e| e.to_string())?;
        let est = tsls(&d, &(0..p).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        worst = worst.max((est.beta_hat - s.beta).abs());
    }
    ensure(worst < 1e-10, || format!("noiseless error {worst:e}"))?;

    let mean_beta = |s: &IvScenario, n: usize, seeds: u64, filtered: bool| -> Result<f64, String> {
        let all: Vec<usize> = (0..s.instruments()).collect();
        let mut total = 0.0;
        for seed in 0..seeds {
            let d = simulate_iv(s, n, seed).map_err(|e| e.to_string())?;
            let est = if filtered {
                knowledge_filter(&s.true_flags(), &d)
            } else {
                tsls(&d, &all)
            };
            total += est.map_err(|e| e.to_string())?.beta_hat;
        }
        Ok(total / seeds as f64)
    };
    let s = IvScenario::default();
    let leaky = mean_beta(&s, 10_000, 100, false)? - s.beta;
    let clean = mean_beta(&s, 10_000, 100, true)? - s.beta;
    ensure(leaky.abs() > 0.1 && clean.abs() < 0.05, || {
        format!("bias all {leaky:.4}, filtered {clean:.4}")
    })?;
    let mut grid = Vec::new();
    for g in [0.0, 0.25, 0.5, 1.0] {
        let mut s = IvScenario::default();
        s.gamma[4] = g;
        grid.push((mean_beta(&s, 10_000, 100, false)? - s.beta).abs());
    }
    ensure(grid.windows(2).all(|w| w[1] >= w[0]), || {
        format!("bias over gamma grid {grid:?}")
    })?;
    Ok(format!(
        "noiseless err {worst:.1e}, bias all {leaky:.3} / filtered {clean:.4}, gamma grid {:?}",
        grid.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>()
    ))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_crowdcause");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        json!({
            "crowd": [{"archetype": "Imperfect", "count": 6}, {"archetype": "BadActor", "count": 2}],
            "protocol": "ordering",
            "aggregation": "query_level",
            "design": {"criterion": "eig", "stages": [6, 6, 6]},
            "replicates": 4,
            "parallelism": 2
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let mut files = 0;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = std::process::Command::new(bin)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })
    };
    for cmd in ["simulate", "design"] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        for out in [&a, &b] {
            run(&[
                cmd,
                "--config",
                config.to_str().unwrap(),
                "--seed",
                "7",
                "--output",
                out.to_str().unwrap(),
            ])?;
        }
        for name in ["replicates.csv", "summary.json", "design-trace.jsonl"] {
            let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
            let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
            ensure(x == y, || format!("{cmd}: {name} differs between runs"))?;
            files += 1;
        }
    }
    let iv: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let rows = iv_replicates(
                &IvScenario::default(),
                &IvScenario::default().true_flags(),
                500,
                0..10,
            )
            .map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).map_err(|e| e.to_string())?;
            Ok(buf)
        })
        .collect::<Result<_, String>>()?;
    ensure(iv[0] == iv[1], || "iv CSV differs between runs".into())?;
    let edge = |parallelism: usize| {
        experiment(json!({
            "crowd": [{"archetype": "Imperfect", "count": 5}],
            "protocol": "edge",
            "aggregation": "expert_level",
            "replicates": 6,
            "seed": 3,
            "parallelism": parallelism
        }))
    };
    let (serial, parallel) = (edge(1)?, edge(3)?);
    ensure(
        serial.csv().map_err(|e| e.to_string())? == parallel.csv().map_err(|e| e.to_string())?
            && serial.summary_json() == parallel.summary_json(),
        || "output depends on parallelism".into(),
    )?;
    Ok(format!(
        "{files} CLI output files, iv CSV and serial/parallel runs byte-identical"
    ))
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> Result<(StatusCode, Value), String> {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(b.to_string())
        }
        None => Body::empty(),
    };
    let resp = app
        .clone()
        .oneshot(req.body(body).map_err(|e| e.to_string())?)
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).map_err(|e| e.to_string())?
    };
    Ok((status, value))
}

async fn create(app: &Router, protocol: &str, budget: usize) -> Result<String, String> {
    let (status, v) = call(
        app,
        "POST",
        "/sessions",
        Some(
            json!({"network": "asia", "protocol": protocol, "criterion": "eig", "budget": budget}),
        ),
    )
    .await?;
    ensure(status == StatusCode::CREATED, || {
        format!("create: {status} {v}")
    })?;
    Ok(v["session_id"].as_str().unwrap_or_default().to_string())
}

async fn service_replay_async() -> Outcome {
    let transcript: Value =
        serde_json::from_str(include_str!("fixtures/asia_edge_transcript.json"))
            .map_err(|e| e.to_string())?;
    let answers = transcript["answers"]
        .as_array()
        .ok_or("transcript without answers")?;
    let lookup = |a: &str, b: &str| -> Option<i64> {
        answers.iter().find_map(|x| {
            let (u, v, y) = (
                x["pair"][0].as_str()?,
                x["pair"][1].as_str()?,
                x["value"].as_i64()?,
            );
            if (u, v) == (a, b) {
                Some(y)
            } else if (u, v) == (b, a) {
                Some(-y)
            } else {
                None
            }
        })
    };
    let app = router(AppState {
        store: Arc::new(SessionStore::in_memory()),
        token: None,
    });
    let id = create(&app, "edge", answers.len()).await?;
    for _ in 0..answers.len() {
        let (status, q) = call(&app, "GET", &format!("/sessions/{id}/next-query"), None).await?;
        ensure(status == StatusCode::OK, || {
            format!("next-query: {status} {q}")
        })?;
        let (a, b) = (
            q["pair"][0].as_str().unwrap_or(""),
            q["pair"][1].as_str().unwrap_or(""),
        );
        let value = lookup(a, b).ok_or_else(|| format!("pair ({a}, {b}) not in transcript"))?;
        let (status, r) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/responses"),
            Some(json!({"value": value})),
        )
        .await?;
        ensure(status == StatusCode::OK, || {
            format!("response: {status} {r}")
        })?;
    }
    let (_, est) = call(&app, "GET", &format!("/sessions/{id}/estimate"), None).await?;
    let truth = asia_fixture();
    let edges: Vec<(String, String)> = est["edges"]
        .as_array()
        .ok_or("estimate without edges")?
        .iter()
        .map(|e| {
            (
                e[0].as_str().unwrap_or("").to_string(),
                e[1].as_str().unwrap_or("").to_string(),
            )
        })
        .collect();
    let g = Dag::new(truth.nodes(), &edges).map_err(|e| e.to_string())?;
    let distance = shd(&g, &truth).map_err(|e| e.to_string())?;
    ensure(distance == 0 && est["remaining"] == 0, || {
        format!("final SHD {distance}, remaining {}", est["remaining"])
    })?;

    let mut exactly_one = 0;
    let rounds = 20;
    for _ in 0..rounds {
        let id = create(&app, "ordering", 3).await?;
        call(&app, "GET", &format!("/sessions/{id}/next-query"), None).await?;
        let tasks: Vec<_> = (0..8)
            .map(|k| {
                let app = app.clone();
                let uri = format!("/sessions/{id}/responses");
                tokio::spawn(async move {
                    call(&app, "POST", &uri, Some(json!({"value": k - 4}))).await
                })
            })
            .collect();
        let mut ok = 0;
        for t in tasks {
            let (status, _) = t.await.map_err(|e| e.to_string())??;
            if status == StatusCode::OK {
                ok += 1;
            }
        }
        let (_, est) = call(&app, "GET", &format!("/sessions/{id}/estimate"), None).await?;
        if ok == 1 && est["answered"] == 1 {
            exactly_one += 1;
        }
    }
    ensure(exactly_one == rounds, || {
        format!("exactly one accepted in {exactly_one}/{rounds} rounds")
    })?;
    Ok(format!(
        "{}-answer replay ends at SHD 0 with budget 0; {rounds}/{rounds} duplicate bursts accept one",
        answers.len()
    ))
}

fn service_replay() -> Outcome {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?
        .block_on(service_replay_async())
}

struct Check {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Check {
            id: 1,
            name: "omniscient recovery",
            budget: secs(1),
            run: omniscient_recovery,
        },
        Check {
            id: 2,
            name: "perfect-but-incomplete safety",
            budget: secs(5),
            run: perfect_incomplete_safety,
        },
        Check {
            id: 3,
            name: "crowd beats individuals",
            budget: secs(120),
            run: wisdom_of_the_crowd,
        },
        Check {
            id: 4,
            name: "search matches enumeration",
            budget: secs(120),
            run: oracle_equivalence,
        },
        Check {
            id: 5,
            name: "EIG versus random design",
            budget: secs(180),
            run: design_value,
        },
        Check {
            id: 6,
            name: "E-optimality invariants",
            budget: secs(10),
            run: e_optimality_invariants,
        },
        Check {
            id: 7,
            name: "numerical correctness",
            budget: secs(60),
            run: numerical_correctness,
        },
        Check {
            id: 8,
            name: "IV pipeline",
            budget: secs(60),
            run: iv_pipeline,
        },
        Check {
            id: 9,
            name: "determinism",
            budget: None,
            run: determinism,
        },
        Check {
            id: 10,
            name: "service replay",
            budget: secs(10),
            run: service_replay,
        },
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
    {
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(detail), Some(b)) if took > b => {
                Err(format!("{detail}; over the {}s budget", b.as_secs()))
            }
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => {
                failed += 1;
                ("FAIL", d.as_str())
            }
        };
        println!(
            "criterion {}: {tag} {} ({detail}; {:.2}s)",
            c.id,
            c.name,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
