//! Acceptance report. Prints one PASS/FAIL line per criterion and exits 0;
//! failures are reported, not hidden.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;
use sscafl::baselines::{ssca_momentum_equivalence, EquivalenceSetup, SgdConfig};
use sscafl::data::RawDataset;
use sscafl::experiment::{
    load_datasets, presets, run_experiment, write_metrics_csv, Datasets, RunConfig,
};
use sscafl::model::{sample_loss, sample_stats, swish_prime, NnParams, NnShape};
use sscafl::numerics::{finite_diff_grad, max_abs_diff, sample_minibatch, SeededRng};
use sscafl::protocol::message::{decode_message, encode_message, MessageKind, RoundMessage};
use sscafl::protocol::{Algorithm, Federation, PartitionedDataset, TransportKind};
use sscafl::solvers::{
    dual_bisection_oracle, solve_penalized_ball, solve_qcqp_barrier, solve_unconstrained,
    BallProblem,
};
use sscafl::surrogate::QuadraticSurrogate;

type Outcome = Result<String, String>;

struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) => (took <= budget, d),
            Err(d) => (false, d),
        };
        let over = if took > budget { " over budget" } else { "" };
        println!(
            "{} {id} {name}: {detail} [{:.1}s of {}s{over}]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixture() -> RunConfig {
    RunConfig::default()
}

fn fixture_data() -> Datasets {
    load_datasets(&fixture().data).expect("fixture data")
}

fn fixture_shape(data: &RawDataset) -> NnShape {
    NnShape::new(data.z(0).len(), fixture().round.hidden, data.y(0).len()).expect("shape")
}

fn gradients(data: &RawDataset) -> Outcome {
    let shape = fixture_shape(data);
    let mut rng = SeededRng::new(11, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let params = NnParams::random(shape, &mut rng, 0.5);
        let n = (rng.next_u32() as usize) % data.len();
        let s = data.sample(n);
        let analytic = sample_stats(&params, s)
            .map_err(|e| e.to_string())?
            .stacked();
        let loss = |w: &[f64]| {
            sample_loss(&NnParams::from_flat(shape, w).expect("flat"), s).expect("loss")
        };
        let fd = finite_diff_grad(loss, &params.to_flat(), 1e-6).map_err(|e| e.to_string())?;
        let diff: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-8));
    }
    let mut swish_worst = 0.0f64;
    for k in 0..=400 {
        let z = -10.0 + 0.05 * k as f64;
        let h = 1e-5;
        let sw = |x: f64| x / (1.0 + (-x).exp());
        let fd = (sw(z + h) - sw(z - h)) / (2.0 * h);
        swish_worst = swish_worst.max((swish_prime(z) - fd).abs());
    }
    verdict(
        worst < 1e-5 && swish_worst < 1e-7,
        format!("max rel err {worst:.2e} (< 1e-5), swish' err {swish_worst:.2e} (< 1e-7)"),
    )
}

/// Minimizer from function values only: each coordinate of a separable
/// quadratic is the vertex of the parabola through three probes.
fn parabola_minimizer(q: &QuadraticSurrogate) -> Vec<f64> {
    let d = q.dim();
    let f = |w: &[f64]| q.eval(w).expect("eval");
    let origin = vec![0.0; d];
    let f0 = f(&origin);
    (0..d)
        .map(|k| {
            let mut w = origin.clone();
            w[k] = 1.0;
            let up = f(&w);
            w[k] = -1.0;
            let down = f(&w);
            let slope = (up - down) / 2.0;
            let curv = up - 2.0 * f0 + down;
            -slope / curv
        })
        .collect()
}

fn random_vec(rng: &mut SeededRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.uniform(-scale, scale)).collect()
}

#[derive(Clone, Copy, Debug)]
enum BallCase {
    Slack,
    Interior,
    Capped,
    Infeasible,
}

fn ball_instance(rng: &mut SeededRng, case: BallCase) -> BallProblem {
    let d = 2 + (rng.next_u32() as usize) % 20;
    let a_lin = random_vec(rng, d, 2.0);
    let b: f64 = a_lin.iter().map(|x| x * x).sum();
    let tau = rng.uniform(0.05, 1.0);
    let constant = rng.uniform(-1.0, 2.0);
    let edge = b / (4.0 * tau);
    let (ubound, penalty) = match case {
        BallCase::Slack => (constant + rng.uniform(0.0, 2.0), rng.uniform(1.0, 1e5)),
        BallCase::Interior => (constant - rng.uniform(0.05, 0.9) * edge, 1e5),
        BallCase::Capped => {
            let penalty = rng.uniform(1.0, 20.0);
            let eps = rng.uniform(0.2, 0.9) / (1.0 + tau * penalty).powi(2);
            (constant - (1.0 - eps) * edge, penalty)
        }
        BallCase::Infeasible => (
            constant - rng.uniform(1.0, 3.0) * edge,
            rng.uniform(1.0, 1e5),
        ),
    };
    BallProblem {
        a_lin,
        tau,
        constant,
        ubound,
        penalty,
    }
}

fn solvers() -> Outcome {
    let mut rng = SeededRng::new(12, 0);
    let mut quad_worst = 0.0f64;
    for _ in 0..100 {
        let d = 1 + (rng.next_u32() as usize) % 30;
        let q = QuadraticSurrogate {
            constant: rng.uniform(-5.0, 5.0),
            linear: random_vec(&mut rng, d, 3.0),
            curvature: rng.uniform(0.05, 2.0),
        };
        quad_worst = quad_worst.max(max_abs_diff(
            &solve_unconstrained(&q),
            &parabola_minimizer(&q),
        ));
    }
    let cases = [
        BallCase::Slack,
        BallCase::Interior,
        BallCase::Capped,
        BallCase::Infeasible,
    ];
    let mut counts = [0usize; 4];
    let mut oracle_worst = 0.0f64;
    let mut barrier_worst = 0.0f64;
    for k in 0..1000 {
        let p = ball_instance(&mut rng, cases[k % 4]);
        let closed = solve_penalized_ball(&p).map_err(|e| e.to_string())?;
        let nu = closed.dual[0];
        let disc = p.b() + 4.0 * p.tau * (p.ubound - p.constant);
        let seen = if disc <= 0.0 {
            3
        } else if nu == 0.0 {
            0
        } else if nu >= p.penalty {
            2
        } else {
            1
        };
        counts[seen] += 1;
        let oracle = dual_bisection_oracle(&p).map_err(|e| e.to_string())?;
        let (obj, con) = p.as_qcqp();
        let barrier = solve_qcqp_barrier(&obj, &[con], p.penalty, 1e-11)
            .map_err(|e| format!("{e} on {:?} nu {nu} {p:?}", cases[k % 4]))?;
        oracle_worst = oracle_worst.max(max_abs_diff(&closed.omega_bar, &oracle.omega_bar));
        barrier_worst = barrier_worst.max(max_abs_diff(&closed.omega_bar, &barrier.omega_bar));
    }
    let covered = counts.iter().all(|&c| c > 0);
    verdict(
        quad_worst <= 1e-8 && oracle_worst <= 1e-5 && barrier_worst <= 1e-5 && covered,
        format!(
            "unconstrained {quad_worst:.1e} (<= 1e-8); ball vs bisection {oracle_worst:.1e}, vs barrier \
             {barrier_worst:.1e} (<= 1e-5); cases nu=0 {} interior {} nu=c {} D<=0 {}",
            counts[0], counts[1], counts[2], counts[3]
        ),
    )
}

fn momentum(data: &RawDataset) -> Outcome {
    let shape = fixture_shape(data);
    let mut worst = 0.0f64;
    let mut settings = 0;
    for name in presets::NAMES.iter().filter(|n| **n != "fixture") {
        let cfg = presets::preset(name).map_err(|e| e.to_string())?;
        let r = &cfg.round;
        let mut rng = SeededRng::new(13, 0);
        let batch = r.batch.min(data.len());
        let batches: Vec<Vec<usize>> = (0..100)
            .map(|_| sample_minibatch(&mut rng, data.len(), batch))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let init = NnParams::random(shape, &mut rng, 0.05).to_flat();
        let setup = EquivalenceSetup {
            shape,
            data,
            batches: &batches,
            init,
            rho: r.rho,
            gamma: r.gamma,
            tau: r.tau,
            lambda: r.lambda,
            full_first_round: true,
        };
        let rep = ssca_momentum_equivalence(&setup).map_err(|e| e.to_string())?;
        worst = worst.max(rep.max_deviation);
        settings += 1;
    }
    verdict(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} (<= 1e-10) over {settings} published settings, T = 100"),
    )
}

fn trajectory(
    cfg: &sscafl::protocol::RoundConfig,
    parted: &PartitionedDataset,
) -> Result<Vec<Vec<f64>>, String> {
    let mut fed =
        Federation::start(cfg, parted, TransportKind::InProcess).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for _ in 0..cfg.rounds {
        fed.step().map_err(|e| e.to_string())?;
        out.push(fed.server().omega().to_vec());
    }
    fed.shutdown().map_err(|e| e.to_string())?;
    Ok(out)
}

fn full_batch(train: &Arc<RawDataset>) -> Outcome {
    let base = fixture();
    let clients = base.clients;
    let mut worst = 0.0f64;
    for (s, f) in [
        (Algorithm::SscaSampleUncon, Algorithm::SscaFeatureUncon),
        (Algorithm::SscaSampleCon, Algorithm::SscaFeatureCon),
    ] {
        let mut sc = base.round.clone();
        sc.algorithm = s;
        sc.rounds = 50;
        sc.batch = train.len() / clients;
        sc.ubound = 0.5;
        let mut fc = sc.clone();
        fc.algorithm = f;
        fc.batch = train.len();
        let sample =
            PartitionedDataset::sample_based(train.clone(), clients).map_err(|e| e.to_string())?;
        let feature =
            PartitionedDataset::feature_based(train.clone(), clients).map_err(|e| e.to_string())?;
        let a = trajectory(&sc, &sample)?;
        let b = trajectory(&fc, &feature)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max(max_abs_diff(x, y));
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} (<= 1e-10) over 50 rounds, I = {clients}"),
    )
}

struct SeedRuns {
    first: Vec<f64>,
    last: Vec<f64>,
    slack: Vec<f64>,
}

impl SeedRuns {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn seeds(cfg: &RunConfig, data: &Datasets) -> Result<SeedRuns, String> {
    let result = run_experiment(cfg, data).map_err(|e| e.to_string())?;
    let mut runs = SeedRuns {
        first: Vec::new(),
        last: Vec::new(),
        slack: Vec::new(),
    };
    for rep in &result.repetitions {
        let first = rep.rows.first().ok_or("no rounds")?;
        let last = rep.rows.last().ok_or("no rounds")?;
        runs.first.push(first.training_cost);
        runs.last.push(last.training_cost);
        runs.slack.push(last.slack.unwrap_or(0.0));
    }
    Ok(runs)
}

fn five_seed(algorithm: Algorithm) -> RunConfig {
    let mut cfg = fixture();
    cfg.round.algorithm = algorithm;
    cfg.round.seed = 1;
    cfg.repetitions = 5;
    cfg
}

fn convergence(data: &Datasets, uncon: &mut Option<SeedRuns>) -> Outcome {
    let ssca = seeds(&five_seed(Algorithm::SscaSampleUncon), data)?;
    let mut sgd_cfg = five_seed(Algorithm::SgdSample);
    sgd_cfg.round.sgd = SgdConfig::sgd();
    let sgd = seeds(&sgd_cfg, data)?;
    let first = SeedRuns::mean(&ssca.first);
    let last = SeedRuns::mean(&ssca.last);
    let wins = ssca
        .last
        .iter()
        .zip(&sgd.last)
        .filter(|(a, b)| a <= b)
        .count();
    let detail = format!(
        "mean cost {first:.4} -> {last:.4} (<= {:.4}); beats FedSGD ({:.4}) in {wins}/5 seeds (>= 4)",
        0.5 * first,
        SeedRuns::mean(&sgd.last)
    );
    let ok = last <= 0.5 * first && wins >= 4;
    *uncon = Some(ssca);
    verdict(ok, detail)
}

fn constrained(data: &Datasets, sample_uncon: Option<SeedRuns>) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (uncon_alg, con_alg, label) in [
        (
            Algorithm::SscaSampleUncon,
            Algorithm::SscaSampleCon,
            "sample",
        ),
        (
            Algorithm::SscaFeatureUncon,
            Algorithm::SscaFeatureCon,
            "feature",
        ),
    ] {
        let base = match (&sample_uncon, uncon_alg) {
            (Some(r), Algorithm::SscaSampleUncon) => SeedRuns::mean(&r.last),
            _ => SeedRuns::mean(&seeds(&five_seed(uncon_alg), data)?.last),
        };
        let ubound = 1.1 * base;
        let mut cfg = five_seed(con_alg);
        cfg.round.ubound = ubound;
        cfg.round.penalty = 1e5;
        let runs = seeds(&cfg, data)?;
        let cost = SeedRuns::mean(&runs.last);
        let slack = SeedRuns::mean(&runs.slack);
        let pass = cost <= ubound + 0.02 && slack <= 1e-3;
        ok &= pass;
        lines.push(format!(
            "{label}: U {ubound:.4}, F_T {cost:.4} (<= {:.4}), slack {slack:.1e} (<= 1e-3){}",
            ubound + 0.02,
            if pass { "" } else { " short" }
        ));
    }
    verdict(ok, lines.join("; "))
}

fn random_message(rng: &mut SeededRng) -> RoundMessage {
    let kind = MessageKind::ALL[(rng.next_u32() % 6) as usize];
    let round = rng.next_u32();
    let sender = rng.next_u32() as u16;
    let dims: Vec<u32> = (0..1 + rng.next_u32() % 3)
        .map(|_| 1 + rng.next_u32() % 6)
        .collect();
    let count: u32 = dims.iter().product();
    if kind == MessageKind::BatchAnnounce {
        let idx = (0..count).map(|_| rng.next_u32()).collect();
        RoundMessage::batch(round, sender, idx).expect("valid batch")
    } else {
        let data = (0..count)
            .map(|_| rng.standard_normal() * 10f64.powi(rng.next_u32() as i32 % 20 - 10))
            .collect();
        RoundMessage::reals(kind, round, sender, dims, data).expect("valid reals")
    }
}

fn csv(cfg: &RunConfig, data: &Datasets) -> Result<Vec<u8>, String> {
    let result = run_experiment(cfg, data).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    write_metrics_csv(cfg, &result, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

fn wire(data: &Datasets) -> Outcome {
    let mut rng = SeededRng::new(17, 0);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let msg = random_message(&mut rng);
        let bytes = encode_message(&msg).map_err(|e| e.to_string())?;
        match decode_message(&bytes) {
            Ok(back) if back == msg => {}
            _ => mismatches += 1,
        }
    }
    let mut identical = true;
    for alg in [Algorithm::SscaSampleCon, Algorithm::SscaFeatureCon] {
        let mut cfg = fixture();
        cfg.round.algorithm = alg;
        cfg.round.rounds = 20;
        let local = csv(&cfg, data)?;
        cfg.transport = TransportKind::Tcp;
        identical &= local == csv(&cfg, data)?;
    }
    verdict(
        mismatches == 0 && identical,
        format!("{mismatches} round-trip mismatches in 10000; in-process vs TCP CSV identical: {identical}"),
    )
}

fn determinism(data: &Datasets) -> Outcome {
    let mut cfg = fixture();
    cfg.round.algorithm = Algorithm::SscaFeatureCon;
    cfg.round.rounds = 50;
    cfg.repetitions = 2;
    let a = csv(&cfg, data)?;
    let b = csv(&cfg, data)?;
    verdict(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let data = fixture_data();
    let mut report = Report {
        passed: 0,
        failed: 0,
    };
    let secs = Duration::from_secs;
    report.check(1, "per-sample gradient", secs(10), || {
        gradients(&data.train)
    });
    report.check(2, "surrogate solvers", secs(60), solvers);
    report.check(3, "momentum equivalence", secs(30), || {
        momentum(&data.train)
    });
    report.check(4, "full-batch sample/feature agreement", secs(60), || {
        full_batch(&data.train)
    });
    let mut uncon = None;
    report.check(5, "fixture convergence", secs(300), || {
        convergence(&data, &mut uncon)
    });
    report.check(6, "constraint satisfaction", secs(600), || {
        constrained(&data, uncon.take())
    });
    report.check(7, "wire format and transports", secs(60), || wire(&data));
    report.check(8, "seeded determinism", secs(60), || determinism(&data));
    println!(
        "acceptance: {} passed, {} failed",
        report.passed, report.failed
    );
}
