//! Seeded benchmark harness: sequential policies against linear baselines
//! on a fixed test set, and synthetic-warm-up sweeps.

mod output;
mod task;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::{self, AugmentError, Condition, GanConfig, PlausibleRanges};
use crate::baselines::{self, BaselineError, Penalty};
use crate::dataset::{Dataset, DatasetError, SplitDataset, Target};
use crate::engine::{
    final_report, run_campaign, CampaignConfig, CampaignSetup, EngineError, ExtraRows, FitSettings, Oracle, Policy,
};
use crate::metrics::{self, BoxStats};
use crate::rng::{self, derive_seed, stream};
use crate::surprise::SurpriseConfig;

pub use output::{
    read_external_rows, render_boxplot_svg, render_sweep_svg, scenario_csv, summary_csv, sweep_csv, write_scenario,
    write_summary, write_sweep,
};
pub use task::SyntheticTask;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("repetition {rep}: a fitted row belongs to the test set ({rows:?})")]
    Leak { rep: usize, rows: Vec<usize> },
    #[error("nothing to summarize")]
    Empty,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Ei,
    Shannon,
    Bayesian,
    Ridge,
    Lasso,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Ei, Model::Shannon, Model::Bayesian, Model::Ridge, Model::Lasso];

    pub fn policy(self) -> Option<Policy> {
        match self {
            Model::Ei => Some(Policy::Ei),
            Model::Shannon => Some(Policy::Shannon),
            Model::Bayesian => Some(Policy::Bayesian),
            Model::Ridge | Model::Lasso => None,
        }
    }

    pub fn from_policy(p: Policy) -> Model {
        match p {
            Policy::Ei => Model::Ei,
            Policy::Shannon => Model::Shannon,
            Policy::Bayesian => Model::Bayesian,
        }
    }

    pub fn is_sequential(self) -> bool {
        self.policy().is_some()
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Model::Ei => "EI-based BO",
            Model::Shannon => "Shannon Surprise",
            Model::Bayesian => "Bayesian Surprise",
            Model::Ridge => "Ridge Regression",
            Model::Lasso => "Lasso Regression",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Model::Ei),
            "shannon" => Ok(Model::Shannon),
            "bayesian" => Ok(Model::Bayesian),
            "ridge" => Ok(Model::Ridge),
            "lasso" => Ok(Model::Lasso),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Scenario I gives the static baselines more rows than the sequential
/// models; Scenario II gives them the same number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
}

impl Scenario {
    pub fn file_stem(self) -> &'static str {
        match self {
            Scenario::I => "scenario1",
            Scenario::II => "scenario2",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            other => Err(format!("unknown scenario {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Output directory name, e.g. the target.
    pub name: String,
    pub target: Target,
    pub warmup: usize,
    pub sequential_budget: usize,
    pub ml_train_size_scenario1: usize,
    pub ml_train_size_scenario2: usize,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl ScenarioSpec {
    /// Published sizes per target: (warm-up, budget, Scenario I ML size).
    pub fn preset(target: Target, master_seed: u64) -> Self {
        let (warmup, budget, ml1) = match target {
            Target::Depth => (50, 175, 450),
            Target::Width => (40, 125, 350),
            Target::Length => (30, 90, 200),
        };
        ScenarioSpec {
            name: target.name().to_string(),
            target,
            warmup,
            sequential_budget: budget,
            ml_train_size_scenario1: ml1,
            ml_train_size_scenario2: warmup + budget,
            repetitions: 20,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions == 0 {
            return Err(BenchError::Spec("repetitions must be positive".into()));
        }
        if self.ml_train_size_scenario2 != self.warmup + self.sequential_budget {
            return Err(BenchError::Spec(format!(
                "Scenario II ML size {} differs from warm-up + budget = {}",
                self.ml_train_size_scenario2,
                self.warmup + self.sequential_budget
            )));
        }
        Ok(())
    }

    pub fn ml_train_size(&self, scenario: Scenario) -> usize {
        match scenario {
            Scenario::I => self.ml_train_size_scenario1,
            Scenario::II => self.ml_train_size_scenario2,
        }
    }

    pub fn repetition_seed(&self, rep: usize) -> u64 {
        derive_seed(self.master_seed, rep as u64)
    }
}

/// Standardized train and test tables of one fixed split; the test table
/// uses the training statistics.
#[derive(Debug, Clone)]
pub struct BenchData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl BenchData {
    pub fn from_split(split: &SplitDataset) -> Result<Self, BenchError> {
        let train = split.train.normalize()?;
        let scaling = train.scaling().expect("normalized").clone();
        let test = split.test.normalize_with(&scaling);
        Ok(BenchData {
            train,
            test,
            train_rows: split.train_rows.clone(),
            test_rows: split.test_rows.clone(),
        })
    }

    fn check_disjoint(&self, rep: usize, fitted: impl IntoIterator<Item = usize>) -> Result<(), BenchError> {
        let test: BTreeSet<usize> = self.test_rows.iter().copied().collect();
        let leaked: Vec<usize> = fitted
            .into_iter()
            .map(|i| self.train_rows[i])
            .filter(|r| test.contains(r))
            .collect();
        if leaked.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Leak { rep, rows: leaked })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub surprise: SurpriseConfig,
    pub fit: FitSettings,
    pub ridge_grid: Vec<f64>,
    pub lasso_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            surprise: SurpriseConfig::default(),
            fit: FitSettings::default(),
            ridge_grid: vec![0.01, 0.1, 1.0, 10.0, 50.0],
            lasso_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 5,
        }
    }
}

/// One model's RMSEs over the repetitions of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: Model,
    pub scenario: Scenario,
    pub rmses: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Rows each repetition's model was fitted on (observations for the
    /// sequential models).
    pub train_sizes: Vec<usize>,
    pub mean: f64,
    pub median: f64,
}

impl ModelResult {
    fn new(model: Model, scenario: Scenario, runs: Vec<RepRun>) -> Self {
        let rmses: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
        ModelResult {
            model,
            scenario,
            mean: metrics::mean(&rmses),
            median: metrics::median(&rmses),
            seeds: runs.iter().map(|r| r.seed).collect(),
            train_sizes: runs.iter().map(|r| r.train_size).collect(),
            rmses,
        }
    }

    pub fn box_stats(&self) -> Option<BoxStats> {
        BoxStats::from_values(&self.rmses)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub scenario: Scenario,
    pub results: Vec<ModelResult>,
    pub config_hash: String,
}

impl ScenarioResult {
    pub fn get(&self, model: Model) -> Option<&ModelResult> {
        self.results.iter().find(|r| r.model == model)
    }
}

fn config_hash<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("config serializes")))
}

#[derive(Debug, Clone, Copy)]
struct RepRun {
    seed: u64,
    rmse: f64,
    train_size: usize,
}

fn campaign_config(spec: &ScenarioSpec, policy: Policy, seed: u64, opts: &RunOptions) -> CampaignConfig {
    let mut cfg = CampaignConfig::new(policy, spec.warmup, spec.sequential_budget, seed);
    cfg.surprise = opts.surprise.clone();
    cfg.fit = opts.fit.clone();
    cfg
}

/// Runs one policy campaign over the training pool and scores it on the
/// test table.
fn run_sequential(
    data: &BenchData,
    cfg: CampaignConfig,
    setup: CampaignSetup,
    rep: usize,
) -> Result<RepRun, BenchError> {
    let seed = cfg.seed;
    let state = run_campaign(cfg, setup, &Oracle::pool(data.train.targets().clone()))?;
    let fitted = state.warmup_indices().iter().chain(state.pool().consumed()).copied();
    data.check_disjoint(rep, fitted)?;
    let report = final_report(&state, Some(&data.test))?;
    Ok(RepRun {
        seed,
        rmse: report.test_rmse.expect("test set given"),
        train_size: report.budget_used,
    })
}

fn run_baseline(
    data: &BenchData,
    model: Model,
    size: usize,
    seed: u64,
    rep: usize,
    opts: &RunOptions,
) -> Result<RepRun, BenchError> {
    let mut r = rng::derived(seed, stream::BASELINE);
    let mut rows = index::sample(&mut r, data.train.len(), size).into_vec();
    rows.sort_unstable();
    data.check_disjoint(rep, rows.iter().copied())?;
    let sub = data.train.subset(&rows);
    let grid: Vec<Penalty> = match model {
        Model::Ridge => opts.ridge_grid.iter().map(|&a| Penalty::ridge(a)).collect(),
        Model::Lasso => opts.lasso_grid.iter().map(|&a| Penalty::lasso(a)).collect(),
        _ => unreachable!("sequential model"),
    };
    let search = baselines::cv_grid_search(
        sub.features(),
        sub.targets(),
        &grid,
        opts.folds,
        derive_seed(seed, stream::FOLDS),
    )?;
    let fit = baselines::fit_penalty(sub.features(), sub.targets(), search.best)?;
    let pred = fit.predict(data.test.features());
    Ok(RepRun {
        seed,
        rmse: metrics::rmse(pred.as_slice(), data.test.targets().as_slice()).expect("test set is nonempty"),
        train_size: size,
    })
}

fn check_sizes(spec: &ScenarioSpec, data: &BenchData, models: &[Model], scenario: Scenario) -> Result<(), BenchError> {
    spec.validate()?;
    let n = data.train.len();
    if models.iter().any(|m| m.is_sequential()) && spec.warmup + spec.sequential_budget > n {
        return Err(BenchError::Spec(format!(
            "warm-up {} + budget {} exceeds the {n} training rows",
            spec.warmup, spec.sequential_budget
        )));
    }
    let ml = spec.ml_train_size(scenario);
    if models.iter().any(|m| !m.is_sequential()) && ml > n {
        return Err(BenchError::Spec(format!(
            "{scenario:?} ML train size {ml} exceeds the {n} training rows"
        )));
    }
    if data.test.is_empty() {
        return Err(BenchError::Spec("empty test set".into()));
    }
    Ok(())
}

/// Runs every model for every repetition of one scenario.
pub fn run_scenario(
    spec: &ScenarioSpec,
    data: &BenchData,
    models: &[Model],
    scenario: Scenario,
    opts: &RunOptions,
) -> Result<ScenarioResult, BenchError> {
    check_sizes(spec, data, models, scenario)?;
    let per_rep: Vec<Vec<RepRun>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let seed = spec.repetition_seed(rep);
            models
                .iter()
                .map(|&m| match m.policy() {
                    Some(policy) => {
                        let cfg = campaign_config(spec, policy, seed, opts);
                        let setup = CampaignSetup::draw(data.train.features().clone(), &cfg)?;
                        run_sequential(data, cfg, setup, rep)
                    }
                    None => run_baseline(data, m, spec.ml_train_size(scenario), seed, rep, opts),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let results = models
        .iter()
        .enumerate()
        .map(|(k, &m)| ModelResult::new(m, scenario, per_rep.iter().map(|runs| runs[k]).collect()))
        .collect();
    Ok(ScenarioResult {
        spec: spec.clone(),
        scenario,
        results,
        config_hash: config_hash(&(spec, scenario, models, opts)),
    })
}

/// Both scenarios; sequential models are run once and reported under
/// each, since their training does not depend on the scenario.
pub fn run_benchmark(
    spec: &ScenarioSpec,
    data: &BenchData,
    models: &[Model],
    opts: &RunOptions,
) -> Result<Vec<ScenarioResult>, BenchError> {
    let second = run_scenario(spec, data, models, Scenario::II, opts)?;
    let statics: Vec<Model> = models.iter().copied().filter(|m| !m.is_sequential()).collect();
    let first_static = if statics.is_empty() {
        None
    } else {
        Some(run_scenario(spec, data, &statics, Scenario::I, opts)?)
    };
    let results = models
        .iter()
        .map(|&m| {
            if m.is_sequential() {
                let mut r = second.get(m).expect("ran").clone();
                r.scenario = Scenario::I;
                r
            } else {
                first_static.as_ref().and_then(|s| s.get(m)).expect("ran").clone()
            }
        })
        .collect();
    let first = ScenarioResult {
        spec: spec.clone(),
        scenario: Scenario::I,
        results,
        config_hash: config_hash(&(spec, Scenario::I, models, opts)),
    };
    Ok(vec![first, second])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub count: usize,
    /// Per policy; empty when the point failed.
    pub results: Vec<ModelResult>,
    pub failed: Option<String>,
}

impl SweepPoint {
    pub fn mean(&self, model: Model) -> Option<f64> {
        self.results.iter().find(|r| r.model == model).map(|r| r.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub spec: ScenarioSpec,
    pub points: Vec<SweepPoint>,
    /// Synthetic count with the lowest mean RMSE, per policy.
    pub argmin: BTreeMap<Model, usize>,
    pub config_hash: String,
}

pub fn default_synth_counts() -> Vec<usize> {
    (0..=50).step_by(5).collect()
}

/// Synthetic rows of one repetition, or why there are none.
fn synthetic_pool(
    data: &BenchData,
    warmup: &[usize],
    gan_cfg: &GanConfig,
    ranges: &PlausibleRanges,
    n: usize,
    seed: u64,
) -> Result<augmentation::SyntheticBatch, AugmentError> {
    let real = data.train.subset(warmup);
    let cfg = GanConfig {
        seed: derive_seed(seed, stream::GAN),
        ..gan_cfg.clone()
    };
    let gan = augmentation::train_gan(&real, &cfg)?;
    let batch = gan.sample(n, Condition::Uniform, derive_seed(seed, stream::GAN_SAMPLE))?;
    augmentation::filter_plausible(&batch, ranges)
}

/// For each synthetic count, warm-starts the surprise campaigns with that
/// many plausible GAN rows and records RMSE over the repetitions. The GAN
/// of a repetition is trained once on its real warm-up, so larger counts
/// extend smaller ones.
pub fn phase2_sweep(
    spec: &ScenarioSpec,
    data: &BenchData,
    gan_cfg: &GanConfig,
    counts: &[usize],
    policies: &[Policy],
    opts: &RunOptions,
) -> Result<SweepCurve, BenchError> {
    let models: Vec<Model> = policies.iter().map(|&p| Model::from_policy(p)).collect();
    check_sizes(spec, data, &models, Scenario::II)?;
    gan_cfg.validate()?;
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let ranges = PlausibleRanges::from_dataset(&data.train);

    // runs[rep][count index] = per-policy runs, or the failure message.
    let runs: Vec<Vec<Result<Vec<RepRun>, String>>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<_, BenchError> {
            let seed = spec.repetition_seed(rep);
            let base = campaign_config(spec, policies[0], seed, opts);
            let setup = CampaignSetup::draw(data.train.features().clone(), &base)?;
            let synth = if max_count > 0 {
                Some(synthetic_pool(data, &setup.warmup, gan_cfg, &ranges, 3 * max_count, seed))
            } else {
                None
            };
            let real = data.train.subset(&setup.warmup);
            counts
                .iter()
                .map(|&c| {
                    let extra: Option<ExtraRows> = if c == 0 {
                        None
                    } else {
                        match synth.as_ref().expect("drawn when a count is positive") {
                            Ok(batch) => match augmentation::augment_warmup(&real, batch, c) {
                                Ok(aug) => Some(aug.synthetic_rows()),
                                Err(e) => return Ok(Err(e.to_string())),
                            },
                            Err(e) => return Ok(Err(e.to_string())),
                        }
                    };
                    policies
                        .iter()
                        .map(|&p| {
                            let cfg = campaign_config(spec, p, seed, opts);
                            run_sequential(data, cfg, setup.clone().with_extra(extra.clone()), rep)
                        })
                        .collect::<Result<Vec<_>, _>>()
                        .map(Ok)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let mut points = Vec::with_capacity(counts.len());
    for (ci, &count) in counts.iter().enumerate() {
        let failure = runs.iter().enumerate().find_map(|(rep, r)| {
            r[ci].as_ref().err().map(|e| format!("repetition {rep}: {e}"))
        });
        if let Some(msg) = failure {
            tracing::warn!(count, %msg, "sweep point failed");
            points.push(SweepPoint {
                count,
                results: Vec::new(),
                failed: Some(msg),
            });
            continue;
        }
        let results = models
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let reps = runs.iter().map(|r| r[ci].as_ref().expect("checked")[k]).collect();
                ModelResult::new(m, Scenario::II, reps)
            })
            .collect();
        points.push(SweepPoint {
            count,
            results,
            failed: None,
        });
    }
    let mut argmin = BTreeMap::new();
    for &m in &models {
        let best = points
            .iter()
            .filter_map(|p| p.mean(m).map(|v| (p.count, v)))
            .fold(None::<(usize, f64)>, |b, (c, v)| match b {
                Some((_, bv)) if bv <= v => b,
                _ => Some((c, v)),
            });
        if let Some((c, _)) = best {
            argmin.insert(m, c);
        }
    }
    Ok(SweepCurve {
        spec: spec.clone(),
        points,
        argmin,
        config_hash: config_hash(&(spec, gan_cfg, counts, policies, opts)),
    })
}

/// A comparison-table row supplied from outside (models this crate does
/// not fit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRow {
    pub model_name: String,
    pub scenario: Scenario,
    pub target: String,
    pub mean_rmse: f64,
    pub median_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMedian {
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub external: bool,
    pub scenario1: Option<MeanMedian>,
    pub scenario2: Option<MeanMedian>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotEntry {
    pub model: String,
    pub scenario: Scenario,
    pub stats: BoxStats,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub rows: Vec<TableRow>,
    pub boxplots: Vec<BoxplotEntry>,
}

/// Builds the comparison table (internal models first, then external rows
/// for this run's name) and the boxplot data.
pub fn summarize(results: &[ScenarioResult], external: &[ExternalRow]) -> Result<Summary, BenchError> {
    let first = results.first().ok_or(BenchError::Empty)?;
    let name = first.spec.name.clone();
    let mut rows: Vec<TableRow> = Vec::new();
    let mut boxplots = Vec::new();
    let slot = |rows: &mut Vec<TableRow>, model: &str, external: bool| -> usize {
        match rows.iter().position(|r| r.model == model) {
            Some(i) => i,
            None => {
                rows.push(TableRow {
                    model: model.to_string(),
                    external,
                    scenario1: None,
                    scenario2: None,
                });
                rows.len() - 1
            }
        }
    };
    for sr in results {
        for r in &sr.results {
            let i = slot(&mut rows, r.model.label(), false);
            let mm = Some(MeanMedian {
                mean: r.mean,
                median: r.median,
            });
            match sr.scenario {
                Scenario::I => rows[i].scenario1 = mm,
                Scenario::II => rows[i].scenario2 = mm,
            }
            if let Some(stats) = r.box_stats() {
                boxplots.push(BoxplotEntry {
                    model: r.model.label().to_string(),
                    scenario: sr.scenario,
                    stats,
                    values: r.rmses.clone(),
                });
            }
        }
    }
    for e in external.iter().filter(|e| e.target.eq_ignore_ascii_case(&name)) {
        let i = slot(&mut rows, &e.model_name, true);
        let mm = Some(MeanMedian {
            mean: e.mean_rmse,
            median: e.median_rmse,
        });
        match e.scenario {
            Scenario::I => rows[i].scenario1 = mm,
            Scenario::II => rows[i].scenario2 = mm,
        }
    }
    Ok(Summary { name, rows, boxplots })
}

#[cfg(test)]
mod tests;
