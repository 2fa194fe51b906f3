use super::*;
use crate::engine::FitSettings;

fn small_task() -> SyntheticTask {
    SyntheticTask {
        rows: 240,
        ..SyntheticTask::desk(3)
    }
}

fn small_spec(reps: usize) -> ScenarioSpec {
    ScenarioSpec {
        name: "small".into(),
        target: Target::Depth,
        warmup: 10,
        sequential_budget: 14,
        ml_train_size_scenario1: 48,
        ml_train_size_scenario2: 24,
        repetitions: reps,
        master_seed: 21,
    }
}

fn fast() -> RunOptions {
    RunOptions {
        fit: FitSettings {
            warmup_starts: 2,
            refit_starts: 1,
            max_iter: 25,
        },
        ..RunOptions::default()
    }
}

#[test]
fn presets_follow_published_sizes() {
    let d = ScenarioSpec::preset(Target::Depth, 0);
    assert_eq!((d.warmup, d.sequential_budget, d.ml_train_size_scenario1, d.ml_train_size_scenario2), (50, 175, 450, 225));
    let w = ScenarioSpec::preset(Target::Width, 0);
    assert_eq!((w.warmup, w.sequential_budget, w.ml_train_size_scenario1, w.ml_train_size_scenario2), (40, 125, 350, 165));
    let l = ScenarioSpec::preset(Target::Length, 0);
    assert_eq!((l.warmup, l.sequential_budget, l.ml_train_size_scenario1, l.ml_train_size_scenario2), (30, 90, 200, 120));
    for s in [d, w, l] {
        s.validate().unwrap();
        assert_eq!(s.repetitions, 20);
    }
    let broken = ScenarioSpec {
        ml_train_size_scenario2: 100,
        ..small_spec(1)
    };
    assert!(matches!(broken.validate(), Err(BenchError::Spec(_))));
}

#[test]
fn desk_task_sizes() {
    let task = SyntheticTask::desk(0);
    let split = task.split().unwrap();
    assert_eq!((split.train.len(), split.test.len()), (849, 284));
    assert!((task.length_scale - 3.464_101_615_137_754_6).abs() < 1e-15);
}

#[test]
fn single_ei_repetition_matches_a_direct_campaign() {
    let data = small_task().data().unwrap();
    let spec = small_spec(1);
    let res = run_scenario(&spec, &data, &[Model::Ei], Scenario::II, &fast()).unwrap();
    let r = res.get(Model::Ei).unwrap();
    assert_eq!(r.rmses.len(), 1);

    let cfg = campaign_config(&spec, Policy::Ei, spec.repetition_seed(0), &fast());
    let setup = CampaignSetup::draw(data.train.features().clone(), &cfg).unwrap();
    let state = run_campaign(cfg, setup, &Oracle::pool(data.train.targets().clone())).unwrap();
    let report = final_report(&state, Some(&data.test)).unwrap();
    assert_eq!(r.rmses[0], report.test_rmse.unwrap());
    assert_eq!(r.seeds[0], spec.repetition_seed(0));
}

#[test]
fn parity_and_recomputable_statistics() {
    let data = small_task().data().unwrap();
    let spec = small_spec(3);
    let runs = run_benchmark(&spec, &data, &[Model::Shannon, Model::Ridge, Model::Lasso], &fast()).unwrap();
    assert_eq!(runs.len(), 2);
    for sr in &runs {
        for r in &sr.results {
            assert_eq!(r.rmses.len(), 3);
            assert_eq!(r.mean, metrics::mean(&r.rmses));
            assert_eq!(r.median, metrics::median(&r.rmses));
            assert!(r.rmses.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
    let second = &runs[1];
    assert_eq!(second.scenario, Scenario::II);
    for r in &second.results {
        assert!(r.train_sizes.iter().all(|&s| s == spec.ml_train_size_scenario2), "{:?}", r);
    }
    let first = &runs[0];
    assert_eq!(first.get(Model::Ridge).unwrap().train_sizes, vec![48; 3]);
    assert_eq!(first.get(Model::Shannon).unwrap().rmses, second.get(Model::Shannon).unwrap().rmses);
}

#[test]
fn oversized_scenarios_fail_before_running() {
    let data = small_task().data().unwrap();
    let spec = ScenarioSpec {
        warmup: 100,
        sequential_budget: 200,
        ml_train_size_scenario2: 300,
        ..small_spec(1)
    };
    assert!(matches!(run_scenario(&spec, &data, &[Model::Ei], Scenario::II, &fast()), Err(BenchError::Spec(_))));
    let spec = ScenarioSpec {
        ml_train_size_scenario1: 1000,
        ..small_spec(1)
    };
    assert!(matches!(run_scenario(&spec, &data, &[Model::Ridge], Scenario::I, &fast()), Err(BenchError::Spec(_))));
}

#[test]
fn leaked_rows_are_detected() {
    let mut data = small_task().data().unwrap();
    data.test_rows.push(data.train_rows[0]);
    assert!(matches!(data.check_disjoint(4, [0, 1]), Err(BenchError::Leak { rep: 4, .. })));
    assert!(data.check_disjoint(4, [1, 2]).is_ok());
}

#[test]
fn result_files_are_reproducible() {
    let data = small_task().data().unwrap();
    let spec = small_spec(2);
    let write = || {
        let dir = tempfile::tempdir().unwrap();
        let runs = run_benchmark(&spec, &data, &[Model::Ei, Model::Ridge], &fast()).unwrap();
        let mut files = Vec::new();
        for r in &runs {
            files.extend(write_scenario(dir.path(), r).unwrap());
        }
        files.extend(write_summary(dir.path(), &summarize(&runs, &[]).unwrap()).unwrap());
        let contents: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| (p.strip_prefix(dir.path()).unwrap().display().to_string(), std::fs::read(p).unwrap()))
            .collect();
        contents
    };
    let a = write();
    assert!(a.iter().any(|(p, _)| p == "small/scenario2.json"));
    assert!(a.iter().any(|(p, _)| p == "small/boxplot.json"));
    assert!(a.iter().any(|(p, _)| p == "small/boxplot_scenario2.svg"));
    assert_eq!(a, write());
}

fn constant_result(model: Model, scenario: Scenario, v: f64) -> ModelResult {
    ModelResult {
        model,
        scenario,
        rmses: vec![v; 4],
        seeds: vec![0, 1, 2, 3],
        train_sizes: vec![10; 4],
        mean: v,
        median: v,
    }
}

#[test]
fn summary_merges_external_rows() {
    let mk = |scenario| ScenarioResult {
        spec: small_spec(4),
        scenario,
        results: Model::ALL.iter().map(|&m| constant_result(m, scenario, 0.1)).collect(),
        config_hash: String::new(),
    };
    let mut external = Vec::new();
    for name in ["Random Forest", "Neural Network", "Support Vector Regression", "Gradient Boosting"] {
        for (scenario, v) in [(Scenario::I, 0.07), (Scenario::II, 0.08)] {
            external.push(ExternalRow {
                model_name: name.into(),
                scenario,
                target: "small".into(),
                mean_rmse: v,
                median_rmse: v,
            });
        }
    }
    external.push(ExternalRow {
        model_name: "Elsewhere".into(),
        scenario: Scenario::I,
        target: "width".into(),
        mean_rmse: 1.0,
        median_rmse: 1.0,
    });
    let s = summarize(&[mk(Scenario::I), mk(Scenario::II)], &external).unwrap();
    assert_eq!(s.rows.len(), 9);
    assert_eq!(s.rows.iter().filter(|r| r.external).count(), 4);
    assert!(s.rows.iter().all(|r| r.scenario1.is_some() && r.scenario2.is_some()));
    let b = &s.boxplots[0].stats;
    assert_eq!((b.q1, b.median, b.q3, b.whisker_low, b.whisker_high), (0.1, 0.1, 0.1, 0.1, 0.1));
    let csv = summary_csv(&s).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(summarize(&[], &[]).is_err());

    let rows = read_external_rows(serde_json::to_string(&external).unwrap().as_bytes()).unwrap();
    assert_eq!(rows, external);
}

#[test]
fn sweep_at_zero_reproduces_phase_one() {
    let data = small_task().data().unwrap();
    let spec = small_spec(2);
    let gan = GanConfig {
        epochs: 5,
        batch_size: 10,
        ..GanConfig::default()
    };
    let policies = [Policy::Shannon, Policy::Bayesian];
    let curve = phase2_sweep(&spec, &data, &gan, &[0, 5], &policies, &fast()).unwrap();
    let phase1 = run_scenario(&spec, &data, &[Model::Shannon, Model::Bayesian], Scenario::II, &fast()).unwrap();
    let zero = &curve.points[0];
    assert_eq!(zero.count, 0);
    for m in [Model::Shannon, Model::Bayesian] {
        let a = zero.results.iter().find(|r| r.model == m).unwrap();
        assert_eq!(a.rmses, phase1.get(m).unwrap().rmses);
    }
    assert!(curve.points[1].failed.is_none());
    assert_eq!(curve.argmin.len(), 2);
    let csv = sweep_csv(&curve).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(render_sweep_svg(&curve).starts_with("<svg"));
}

#[test]
fn failed_sweep_points_do_not_stop_the_sweep() {
    let data = small_task().data().unwrap();
    let spec = small_spec(1);
    // pac larger than the 10-row warm-up: the GAN cannot train.
    let gan = GanConfig {
        pac: 20,
        batch_size: 20,
        epochs: 1,
        ..GanConfig::default()
    };
    let curve = phase2_sweep(&spec, &data, &gan, &[0, 5, 10], &[Policy::Shannon], &fast()).unwrap();
    assert!(curve.points[0].failed.is_none());
    assert!(curve.points[1].failed.as_deref().unwrap().contains("training rows"));
    assert!(curve.points[2].failed.is_some());
    assert_eq!(curve.argmin[&Model::Shannon], 0);
}
