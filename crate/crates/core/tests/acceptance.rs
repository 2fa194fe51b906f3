//! Acceptance gate. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criteria 12 and 13 need the melt-pool CSV; point `SURPRISE_BO_DATA` at it
//! to run them.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use surprise_bo::acquisition::expected_improvement;
use surprise_bo::bench::{
    phase2_sweep, run_scenario, BenchData, Model, RunOptions, Scenario, ScenarioResult, ScenarioSpec, SyntheticTask,
};
use surprise_bo::augmentation::GanConfig;
use surprise_bo::dataset::{load_and_clean, split, FeatureSchema, Target};
use surprise_bo::engine::{
    campaign_step, run_campaign, run_surprise_bo, AnomalyOutcome, CampaignConfig, CampaignSetup, CampaignState, Member,
    Oracle, Phase, Policy, StepOutcome,
};
use surprise_bo::gp::{GpModel, Hyperparams};
use surprise_bo::rng;
use surprise_bo::surprise::gaussian_kl;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, outcome: Outcome, elapsed: Duration) {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{id:>2}] {name}: {detail} ({:.1}s)", elapsed.as_secs_f64());
    }

    /// Fails every criterion of a group whose total runtime exceeds its limit.
    fn group(&mut self, limit: Duration, items: Vec<(u32, &str, Box<dyn FnOnce() -> Outcome + '_>)>) {
        let start = Instant::now();
        let mut done = Vec::new();
        for (id, name, f) in items {
            let t = Instant::now();
            let o = f();
            done.push((id, name, o, t.elapsed()));
        }
        let total = start.elapsed();
        for (id, name, o, dt) in done {
            let o = match o {
                Outcome::Pass(d) if total > limit => {
                    Outcome::Fail(format!("{d}; group runtime {:.0}s exceeds {:.0}s", total.as_secs_f64(), limit.as_secs_f64()))
                }
                other => other,
            };
            self.report(id, name, o, dt);
        }
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------------------
// Closed-form numerics

/// Standard normal CDF and density at 1, from tables.
const PHI_1: f64 = 0.841_344_746_068_542_9;
const PDF_1: f64 = 0.241_970_724_519_143_37;

fn ei_closed_form() -> Outcome {
    let analytic = expected_improvement(1.0, 1.0, 0.0).unwrap();
    let closed_err = (analytic - (PHI_1 + PDF_1)).abs();
    let mut r = rng::seeded(101);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mu = r.random_range(-2.0..2.0);
        let sd = r.random_range(0.1..2.0);
        let best = r.random_range(-2.0..2.0);
        let n = 1_000_000;
        let (mut s, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut r);
            let gain = (mu + sd * z - best).max(0.0);
            s += gain;
            ss += gain * gain;
        }
        let m = s / n as f64;
        let se = ((ss / n as f64 - m * m) / n as f64).sqrt();
        let ei = expected_improvement(mu, sd, best).unwrap();
        worst = worst.max((ei - m).abs() / se);
    }
    verdict(
        closed_err <= 1e-10 && worst <= 3.0,
        format!("|EI - (Phi(1)+phi(1))| = {closed_err:.1e}; worst Monte-Carlo deviation {worst:.2} SE"),
    )
}

fn kl_checks() -> Outcome {
    let v = gaussian_kl((0.0, 1.0), (1.0, 1.0)).unwrap();
    let mut r = rng::seeded(102);
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let p = (r.random_range(-5.0..5.0), r.random_range(0.01..10.0));
        let q = (r.random_range(-5.0..5.0), r.random_range(0.01..10.0));
        min = min.min(gaussian_kl(p, q).unwrap());
    }
    verdict(
        (v - 0.5).abs() <= 1e-12 && min >= 0.0,
        format!("KL = {v}; min over 1000 random pairs {min:.3e}"),
    )
}

fn lml_gradient() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng::seeded(200 + seed);
        let x: DMatrix<f64> = DMatrix::from_fn(8, 2, |_, _| r.random_range(-2.0..2.0));
        let y = DVector::from_fn(8, |i, _| (x[(i, 0)] * 1.3).sin() + 0.1 * r.random_range(-1.0..1.0));
        let theta = [r.random_range(-0.7..0.7), r.random_range(-0.5..0.5), r.random_range(-4.0..-1.0)];
        let model = |t: [f64; 3]| GpModel::new(x.clone(), y.clone(), Hyperparams::from_log(t)).unwrap();
        let (_, grad) = model(theta).log_marginal_likelihood();
        for k in 0..3 {
            let h = 1e-5;
            let (mut up, mut down) = (theta, theta);
            up[k] += h;
            down[k] -= h;
            let fd = (model(up).log_marginal_likelihood().0 - model(down).log_marginal_likelihood().0) / (2.0 * h);
            worst = worst.max((fd - grad[k]).abs() / fd.abs().max(1e-3));
        }
    }
    verdict(worst < 1e-5, format!("worst relative error {worst:.2e} over 20 problems"))
}

fn posterior_vs_dense() -> Outcome {
    let (mut worst_m, mut worst_v) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut r = rng::seeded(300 + seed);
        let x: DMatrix<f64> = DMatrix::from_fn(10, 1, |_, _| r.random_range(-3.0..3.0));
        let y = DVector::from_fn(10, |i, _| x[(i, 0)].cos() + 0.05 * r.random_range(-1.0..1.0));
        let (l, s2, n2) = (r.random_range(0.3..2.0), r.random_range(0.5..2.0), r.random_range(1e-3..1e-1));
        let model = GpModel::new(x.clone(), y.clone(), Hyperparams::new(l, s2, n2).unwrap()).unwrap();
        let q = DMatrix::from_fn(7, 1, |_, _| r.random_range(-3.5..3.5));
        let post = model.predict(&q).unwrap();

        let k = |a: f64, b: f64| s2 * (-(a - b) * (a - b) / (2.0 * l * l)).exp();
        let kxx = DMatrix::from_fn(10, 10, |i, j| k(x[(i, 0)], x[(j, 0)]) + if i == j { n2 + model.jitter() } else { 0.0 });
        let inv = kxx.try_inverse().unwrap();
        let m0 = model.prior_mean();
        for j in 0..7 {
            let ks = DVector::from_fn(10, |i, _| k(x[(i, 0)], q[(j, 0)]));
            let mean = m0 + (ks.transpose() * &inv * y.add_scalar(-m0))[(0, 0)];
            let var = s2 - (ks.transpose() * &inv * &ks)[(0, 0)];
            worst_m = worst_m.max((mean - post.mean[j]).abs());
            worst_v = worst_v.max((var.max(0.0) - post.variance[j]).abs());
        }
    }
    verdict(
        worst_m <= 1e-8 && worst_v <= 1e-8,
        format!("max |mean diff| {worst_m:.1e}, max |var diff| {worst_v:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// Engine behavior

fn grid_2d(side: usize) -> DMatrix<f64> {
    DMatrix::from_fn(side * side, 2, |i, j| {
        let k = if j == 0 { i % side } else { i / side };
        -1.0 + 2.0 * k as f64 / (side - 1) as f64
    })
}

fn smooth(x: &[f64]) -> f64 {
    (1.3 * x[0]).sin() + 0.5 * (0.9 * x[1]).cos()
}

fn pool_oracle(c: &DMatrix<f64>, f: impl Fn(&[f64]) -> f64) -> (Oracle, DVector<f64>) {
    let t = DVector::from_iterator(c.nrows(), c.row_iter().map(|r| f(&[r[0], r[1]])));
    (Oracle::pool(t.clone()), t)
}

fn small_config(policy: Policy, warmup: usize, budget: usize, seed: u64) -> CampaignConfig {
    let mut c = CampaignConfig::new(policy, warmup, budget, seed);
    c.fit.warmup_starts = 3;
    c.fit.max_iter = 30;
    c
}

/// Returns the first violated invariant, if any.
fn invariant_violation(state: &CampaignState) -> Option<String> {
    let cfg = state.config();
    let log = state.log();
    if state.budget_used() != log.len() || state.budget_used() > cfg.total_budget() {
        return Some("budget accounting".into());
    }
    if state.early_stop().is_none() && state.budget_used() != cfg.total_budget() {
        return Some("budget not spent without an early stop".into());
    }
    let mut seen = BTreeSet::new();
    for (k, e) in log.iter().enumerate() {
        if e.step != k || e.budget_used != k + 1 {
            return Some(format!("step numbering at {k}"));
        }
        if !seen.insert(e.candidate_index) {
            return Some(format!("candidate {} observed twice", e.candidate_index));
        }
        if (e.phase == Phase::Warmup) != (k < cfg.warmup_count) {
            return Some(format!("warm-up phase at step {k}"));
        }
    }
    if let Some(w) = log.windows(2).find(|w| !w[0].phase.can_move_to(w[1].phase)) {
        return Some(format!("illegal transition {:?} -> {:?}", w[0].phase, w[1].phase));
    }
    let members: BTreeSet<usize> = state
        .members()
        .iter()
        .filter_map(|m| match m {
            Member::Candidate(i) => Some(*i),
            Member::Extra(_) => None,
        })
        .collect();
    let discarded = state.unresolved_discards().iter().copied().chain(
        log.iter()
            .filter_map(|e| e.resolves)
            .filter(|r| r.outcome == AnomalyOutcome::Discarded)
            .map(|r| r.step),
    );
    for s in discarded {
        if log[s].accepted || members.contains(&log[s].candidate_index) {
            return Some(format!("discarded step {s} reached the model"));
        }
    }
    None
}

fn fuzzed_invariants() -> Outcome {
    let mut r = rng::seeded(400);
    for seed in 0..50u64 {
        let c = grid_2d(r.random_range(5..9));
        let jump = r.random_range(0.0..3.0);
        let (o, _) = pool_oracle(&c, |x| smooth(x) + if x[1] > 0.2 { jump } else { 0.0 });
        let policy = [Policy::Ei, Policy::Shannon, Policy::Bayesian][seed as usize % 3];
        let warm = r.random_range(5..10);
        let budget = r.random_range(0..c.nrows() - warm + 5);
        let mut cfg = small_config(policy, warm, budget, seed);
        cfg.refit_every = r.random_range(1..8);
        cfg.exploit_cap = r.random_range(1..4);
        cfg.surprise.k_shannon = r.random_range(0.5..2.5);
        cfg.surprise.k_bayesian = r.random_range(0.5..2.5);
        if r.random_bool(0.3) {
            cfg.neighborhood_radius = Some(r.random_range(0.05..0.6));
        }
        let setup = CampaignSetup::draw(c.clone(), &cfg).unwrap();
        let state = run_campaign(cfg, setup, &o).unwrap();
        if let Some(v) = invariant_violation(&state) {
            return Outcome::Fail(format!("seed {seed}: {v}"));
        }
    }
    Outcome::Pass("50 fuzzed campaigns".into())
}

fn anomaly_injection() -> Outcome {
    let c = grid_2d(12);
    let (clean, targets) = pool_oracle(&c, smooth);
    let mut discarded = 0;
    for seed in 0..20 {
        let cfg = small_config(Policy::Shannon, 15, 20, seed);
        // Find the first exploration pick, then corrupt exactly that reading.
        let mut probe = CampaignState::new(cfg.clone(), CampaignSetup::draw(c.clone(), &cfg).unwrap()).unwrap();
        let target = loop {
            let StepOutcome::Suggest(s) = campaign_step(&mut probe, None).unwrap() else {
                return Outcome::Fail("campaign ended during warm-up".into());
            };
            if s.phase == Phase::Explore {
                break s.candidate_index;
            }
            campaign_step(&mut probe, clean.observe(s.candidate_index, &s.point)).unwrap();
        };
        let mut bad = targets.clone();
        bad[target] += 8.0;
        let state = run_campaign(cfg.clone(), CampaignSetup::draw(c.clone(), &cfg).unwrap(), &Oracle::pool(bad)).unwrap();
        if !state.members().contains(&Member::Candidate(target)) {
            discarded += 1;
        }
    }
    verdict(discarded >= 18, format!("discarded in {discarded}/20 seeds"))
}

fn trace_equivalence() -> Outcome {
    let c = grid_2d(10);
    let (o, _) = pool_oracle(&c, |x| smooth(x) + if x[0] > 0.3 { 1.5 } else { 0.0 });
    for seed in 0..5 {
        let policy = if seed % 2 == 0 { Policy::Shannon } else { Policy::Bayesian };
        let cfg = small_config(policy, 10, 30, seed);
        let batch = run_surprise_bo(cfg.clone(), CampaignSetup::draw(c.clone(), &cfg).unwrap(), &o).unwrap();
        let mut state = CampaignState::new(cfg.clone(), CampaignSetup::draw(c.clone(), &cfg).unwrap()).unwrap();
        while !state.is_done() {
            match campaign_step(&mut state, None).unwrap() {
                StepOutcome::Suggest(s) => {
                    campaign_step(&mut state, o.observe(s.candidate_index, &s.point)).unwrap();
                }
                _ => break,
            }
        }
        let a = serde_json::to_string(state.log()).unwrap();
        let b = serde_json::to_string(batch.log()).unwrap();
        if a != b || state.log() != batch.log() {
            return Outcome::Fail(format!("seed {seed}: logs differ"));
        }
    }
    Outcome::Pass("5 seeds, identical logs".into())
}

// ---------------------------------------------------------------------------
// Benchmarks

const TASK_SEED: u64 = 0;
const MASTER_SEED: u64 = 0;

fn desk_benchmark(data: &BenchData) -> ScenarioResult {
    let spec = SyntheticTask::desk(TASK_SEED).spec(20, MASTER_SEED);
    let models = [Model::Ei, Model::Shannon, Model::Bayesian, Model::Ridge, Model::Lasso];
    run_scenario(&spec, data, &models, Scenario::II, &RunOptions::default()).expect("benchmark runs")
}

fn shannon_vs_ei(res: &ScenarioResult) -> Outcome {
    let ei = res.get(Model::Ei).unwrap();
    let sh = res.get(Model::Shannon).unwrap();
    let wins = sh.rmses.iter().zip(&ei.rmses).filter(|(s, e)| s <= e).count();
    verdict(
        wins >= 14,
        format!("Shannon <= EI in {wins}/20 repetitions (means: Shannon {:.4}, EI {:.4})", sh.mean, ei.mean),
    )
}

fn surprise_vs_linear(res: &ScenarioResult) -> Outcome {
    let m = |model| res.get(model).unwrap().mean;
    let linear = m(Model::Ridge).min(m(Model::Lasso));
    let ok = m(Model::Shannon) < linear && m(Model::Bayesian) < linear;
    verdict(
        ok,
        format!(
            "means: Shannon {:.4}, Bayesian {:.4}, ridge {:.4}, lasso {:.4}",
            m(Model::Shannon),
            m(Model::Bayesian),
            m(Model::Ridge),
            m(Model::Lasso)
        ),
    )
}

fn sweep_reduction(data: &BenchData, phase1: &ScenarioResult) -> Outcome {
    let spec = SyntheticTask::desk(TASK_SEED).spec(5, MASTER_SEED);
    let curve = phase2_sweep(
        &spec,
        data,
        &GanConfig::default(),
        &[0],
        &[Policy::Shannon, Policy::Bayesian],
        &RunOptions::default(),
    )
    .expect("sweep runs");
    for r in &curve.points[0].results {
        let full = &phase1.get(r.model).unwrap().rmses[..5];
        if r.rmses.iter().zip(full).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Outcome::Fail(format!("{} differs at c = 0", r.model));
        }
    }
    Outcome::Pass("Shannon and Bayesian, 5 repetitions, bit-identical".into())
}

fn augmentation_helps(data: &BenchData) -> Outcome {
    let counts: Vec<usize> = (0..=45).step_by(5).collect();
    let mut improved = 0;
    let mut best_counts = Vec::new();
    for sweep in 0..20u64 {
        let spec = SyntheticTask::desk(TASK_SEED).spec(1, 1000 + sweep);
        let curve = phase2_sweep(&spec, data, &GanConfig::default(), &counts, &[Policy::Shannon], &RunOptions::default())
            .expect("sweep runs");
        let base = curve.points[0].mean(Model::Shannon).expect("c = 0 never fails");
        let better = curve.points[1..]
            .iter()
            .filter_map(|p| p.mean(Model::Shannon).map(|v| (p.count, v)))
            .filter(|(_, v)| *v < base)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((c, _)) = better {
            improved += 1;
            best_counts.push(c);
        }
    }
    verdict(
        improved >= 12,
        format!("some c in 5..45 beat c = 0 in {improved}/20 sweeps (best counts {best_counts:?})"),
    )
}

// ---------------------------------------------------------------------------
// Data-gated checks

fn data_path() -> Option<String> {
    std::env::var("SURPRISE_BO_DATA").ok().filter(|p| !p.is_empty())
}

fn cleaning_counts(path: &str) -> Outcome {
    let mut got = Vec::new();
    for t in Target::ALL {
        match load_and_clean(path, &FeatureSchema::meltpool(t)) {
            Ok((ds, _)) => got.push(ds.len()),
            Err(e) => return Outcome::Fail(format!("{t}: {e}")),
        }
    }
    verdict(got == [1115, 850, 257], format!("depth/width/length rows {got:?}"))
}

fn depth_reproduction(path: &str) -> Outcome {
    let ds = match load_and_clean(path, &FeatureSchema::meltpool(Target::Depth)) {
        Ok((ds, _)) => ds,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let sp = split(&ds, 0.75, MASTER_SEED).expect("split");
    let data = BenchData::from_split(&sp).expect("normalizable");
    let spec = ScenarioSpec::preset(Target::Depth, MASTER_SEED);
    let res = run_scenario(
        &spec,
        &data,
        &[Model::Ei, Model::Shannon, Model::Bayesian],
        Scenario::II,
        &RunOptions::default(),
    )
    .expect("benchmark runs");
    let m = |model| res.get(model).unwrap().mean;
    let (sh, ba, ei) = (m(Model::Shannon), m(Model::Bayesian), m(Model::Ei));
    verdict(
        (sh - 0.0787).abs() <= 0.015 && sh < ba && ba < ei,
        format!("means: Shannon {sh:.4}, Bayesian {ba:.4}, EI {ei:.4}"),
    )
}

fn main() -> ExitCode {
    let mut gate = Gate { failed: 0 };
    let secs = Duration::from_secs;

    gate.group(
        secs(10),
        vec![
            (1, "EI closed form and Monte-Carlo", Box::new(ei_closed_form)),
            (2, "Gaussian KL", Box::new(kl_checks)),
            (3, "LML gradient vs finite differences", Box::new(lml_gradient)),
            (4, "GP posterior vs dense inverse", Box::new(posterior_vs_dense)),
        ],
    );
    gate.group(
        secs(120),
        vec![
            (5, "campaign invariants under fuzzing", Box::new(fuzzed_invariants)),
            (6, "corrupted observation discarded", Box::new(anomaly_injection)),
            (7, "stepwise fold equals batch run", Box::new(trace_equivalence)),
        ],
    );

    let data = SyntheticTask::desk(TASK_SEED).data().expect("synthetic task builds");
    let t = Instant::now();
    let phase1 = desk_benchmark(&data);
    let bench_time = t.elapsed();
    gate.group(
        secs(600).saturating_sub(bench_time),
        vec![
            (8, "Shannon <= EI on the desk benchmark", Box::new(|| shannon_vs_ei(&phase1))),
            (9, "surprise policies beat ridge and lasso", Box::new(|| surprise_vs_linear(&phase1))),
        ],
    );
    println!("      desk benchmark: {:.0}s", bench_time.as_secs_f64());

    gate.group(
        secs(900),
        vec![
            (10, "sweep at c = 0 reproduces Phase I", Box::new(|| sweep_reduction(&data, &phase1))),
            (11, "synthetic warm-up rows help", Box::new(|| augmentation_helps(&data))),
        ],
    );

    match data_path() {
        Some(p) => gate.group(
            secs(1800),
            vec![
                (12, "cleaned row counts", Box::new(|| cleaning_counts(&p))),
                (13, "depth Scenario II reproduction", Box::new(|| depth_reproduction(&p))),
            ],
        ),
        None => {
            let why = "SURPRISE_BO_DATA not set".to_string();
            gate.report(12, "cleaned row counts", Outcome::Skip(why.clone()), Duration::ZERO);
            gate.report(13, "depth Scenario II reproduction", Outcome::Skip(why), Duration::ZERO);
        }
    }

    if gate.failed == 0 {
        println!("acceptance: all criteria passed or skipped");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failed);
        ExitCode::FAILURE
    }
}
