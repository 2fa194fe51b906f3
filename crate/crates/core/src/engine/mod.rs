//! Sequential campaigns: the EI loop and the three-stage surprise-guided
//! loop (explore with maximin, confirm a surprise nearby, exploit its
//! neighbourhood until observations stop surprising the model).
//!
//! Both loops are driven one transition at a time by [`campaign_step`]:
//! a call without an observation acquires the next suggestion, a call with
//! one ingests the measurement for the pending suggestion. The batch
//! drivers [`run_ei_bo`] and [`run_surprise_bo`] fold that step function
//! with an internal oracle, so a campaign fed externally (for example by a
//! human through the service) follows exactly the same trace.

mod oracle;
mod report;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{self, expected_improvement};
use crate::dataset::{draw_warmup, CandidatePool, ColumnScale, DatasetError};
use crate::gp::{self, FitConfig, GpError, GpModel, PredictionCache};
use crate::rng::{self, derive_seed};
use crate::surprise::{
    self, Calibration, SurpriseConfig, SurpriseError, SurpriseVerdict,
};

pub use oracle::{Oracle, RffFunction, SyntheticOracle, TestFunction};
pub use report::{final_report, read_log_jsonl, write_log_jsonl, BestObservation, CampaignReport};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("awaiting the observation for candidate {candidate_index}")]
    AwaitingObservation { candidate_index: usize },
    #[error("a deferred oracle cannot answer inside a batch run")]
    Deferred,
    #[error("replay diverged at log entry {step}: {detail}")]
    ReplayMismatch { step: usize, detail: String },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Surprise(#[from] SurpriseError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed log line {line}: {message}")]
    Log { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Ei,
    Shannon,
    Bayesian,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Ei => "ei",
            Policy::Shannon => "shannon",
            Policy::Bayesian => "bayesian",
        }
    }

    pub fn is_surprise(self) -> bool {
        !matches!(self, Policy::Ei)
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Policy::Ei),
            "shannon" => Ok(Policy::Shannon),
            "bayesian" => Ok(Policy::Bayesian),
            other => Err(format!("unknown policy {other:?} (expected ei, shannon or bayesian)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Explore,
    Confirm,
    Exploit,
    Done,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Warmup, Phase::Explore, Phase::Confirm, Phase::Exploit, Phase::Done];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Explore => "explore",
            Phase::Confirm => "confirm",
            Phase::Exploit => "exploit",
            Phase::Done => "done",
        }
    }

    /// Legal transitions of the campaign state machine (staying put is
    /// always legal).
    pub fn can_move_to(self, to: Phase) -> bool {
        use Phase::*;
        self == to
            || to == Done
            || matches!(
                (self, to),
                (Warmup, Explore) | (Explore, Confirm) | (Confirm, Explore) | (Confirm, Exploit) | (Exploit, Explore)
            )
    }
}

/// Hyperparameter-fitting effort at warm-up and at periodic refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub warmup_starts: usize,
    /// Refits start from the current optimum plus this many extra starts.
    pub refit_starts: usize,
    pub max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            warmup_starts: 8,
            refit_starts: 1,
            max_iter: 60,
        }
    }
}

fn default_refit_every() -> usize {
    10
}

fn default_exploit_cap() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub policy: Policy,
    pub warmup_count: usize,
    pub sequential_budget: usize,
    #[serde(default)]
    pub surprise: SurpriseConfig,
    /// Caps the distance of confirm/exploit picks from the surprise locus.
    #[serde(default)]
    pub neighborhood_radius: Option<f64>,
    #[serde(default = "default_refit_every")]
    pub refit_every: usize,
    #[serde(default = "default_exploit_cap")]
    pub exploit_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: FitSettings,
    /// Standardize observed targets with warm-up statistics before they
    /// reach the model (for campaigns fed raw measurements).
    #[serde(default)]
    pub standardize_targets: bool,
}

impl CampaignConfig {
    pub fn new(policy: Policy, warmup_count: usize, sequential_budget: usize, seed: u64) -> Self {
        CampaignConfig {
            policy,
            warmup_count,
            sequential_budget,
            surprise: SurpriseConfig::default(),
            neighborhood_radius: None,
            refit_every: default_refit_every(),
            exploit_cap: default_exploit_cap(),
            seed,
            fit: FitSettings::default(),
            standardize_targets: false,
        }
    }

    pub fn total_budget(&self) -> usize {
        self.warmup_count + self.sequential_budget
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.warmup_count < 2 {
            return bad("warmup_count must be at least 2");
        }
        if self.refit_every == 0 {
            return bad("refit_every must be positive");
        }
        if self.exploit_cap == 0 {
            return bad("exploit_cap must be positive");
        }
        if self.fit.warmup_starts == 0 || self.fit.max_iter == 0 {
            return bad("fit settings need at least one start and one iteration");
        }
        if let Some(r) = self.neighborhood_radius {
            if !(r > 0.0) {
                return bad("neighborhood_radius must be positive");
            }
        }
        self.surprise.validate().map_err(EngineError::Config)?;
        if self.policy == Policy::Bayesian
            && self.surprise.calibration.is_none()
            && self.warmup_count < surprise::MIN_CALIBRATION_SAMPLES
        {
            return Err(EngineError::Config(format!(
                "Bayesian surprise calibrates on warm-up and needs warmup_count >= {}",
                surprise::MIN_CALIBRATION_SAMPLES
            )));
        }
        Ok(())
    }
}

/// Extra warm-up training rows that are not experiments (e.g. synthetic
/// data). They are fitted alongside the real warm-up but never consume
/// budget, never enter the pool and never count as observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraRows {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

/// Candidate locations and the warm-up/pool partition of them.
#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub candidates: Arc<DMatrix<f64>>,
    pub warmup: Vec<usize>,
    pub pool: CandidatePool,
    pub extra: Option<ExtraRows>,
}

impl CampaignSetup {
    /// Draws the warm-up set from `candidates` with the config's seed.
    pub fn draw(candidates: DMatrix<f64>, config: &CampaignConfig) -> Result<Self, EngineError> {
        Self::draw_with_seed(candidates, config.warmup_count, derive_seed(config.seed, rng::stream::WARMUP))
    }

    pub fn draw_with_seed(candidates: DMatrix<f64>, warmup_count: usize, seed: u64) -> Result<Self, EngineError> {
        let (warmup, pool) = draw_warmup(candidates.nrows(), warmup_count, seed)?;
        Ok(CampaignSetup {
            candidates: Arc::new(candidates),
            warmup,
            pool,
            extra: None,
        })
    }

    pub fn with_extra(mut self, extra: Option<ExtraRows>) -> Self {
        self.extra = extra;
        self
    }
}

/// What a training row of the model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Member {
    Candidate(usize),
    Extra(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyOutcome {
    Confirmed,
    Discarded,
}

/// Attached to a confirmation entry: what happened to the anomaly it tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub step: usize,
    pub outcome: AnomalyOutcome,
}

/// One observation. Entries are append-only; an anomaly's fate is recorded
/// on the confirmation entry that resolves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub phase: Phase,
    pub candidate_index: usize,
    pub point: Vec<f64>,
    pub y: f64,
    pub verdict: Option<SurpriseVerdict>,
    /// Whether the observation entered the model when it was ingested.
    pub accepted: bool,
    pub budget_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolves: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub candidate_index: usize,
    pub point: Vec<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Suggest(Suggestion),
    Ingested(LogEntry),
    Done,
}

#[derive(Debug, Clone)]
struct HeldAnomaly {
    step: usize,
    candidate_index: usize,
    point: Vec<f64>,
    y_model: f64,
}

/// Full state of one campaign.
#[derive(Debug, Clone)]
pub struct CampaignState {
    config: CampaignConfig,
    candidates: Arc<DMatrix<f64>>,
    warmup: Vec<usize>,
    extra: Option<ExtraRows>,
    pool: CandidatePool,
    phase: Phase,
    model: Option<GpModel>,
    members: Vec<Member>,
    log: Vec<LogEntry>,
    budget_used: usize,
    pending: Option<Suggestion>,
    held: Option<HeldAnomaly>,
    locus: Option<Vec<f64>>,
    exploit_run: usize,
    since_refit: usize,
    refits: usize,
    calibration: Option<Calibration>,
    grid: Option<DMatrix<f64>>,
    target_scale: Option<ColumnScale>,
    best_y: Option<f64>,
    early_stop: Option<String>,
    unresolved_discards: Vec<usize>,
    /// Squared distance from each candidate to the nearest used candidate.
    min_d2: Vec<f64>,
    ei_cache: Option<PredictionCache>,
}

impl CampaignState {
    pub fn new(config: CampaignConfig, setup: CampaignSetup) -> Result<Self, EngineError> {
        config.validate()?;
        let n = setup.candidates.nrows();
        if setup.warmup.len() != config.warmup_count {
            return Err(EngineError::Config(format!(
                "setup has {} warm-up rows but the config asks for {}",
                setup.warmup.len(),
                config.warmup_count
            )));
        }
        if setup.warmup.iter().any(|&i| i >= n || setup.pool.contains(i))
            || setup.pool.indices().iter().any(|&i| i >= n)
        {
            return Err(EngineError::Config("warm-up and pool must be disjoint candidate rows".into()));
        }
        if let Some(extra) = &setup.extra {
            if extra.features.nrows() != extra.targets.len() || extra.features.ncols() != setup.candidates.ncols() {
                return Err(EngineError::Config("extra rows do not match the candidate dimension".into()));
            }
        }
        Ok(CampaignState {
            phase: Phase::Warmup,
            candidates: setup.candidates,
            warmup: setup.warmup,
            extra: setup.extra,
            pool: setup.pool,
            model: None,
            members: Vec::new(),
            log: Vec::new(),
            budget_used: 0,
            pending: None,
            held: None,
            locus: None,
            exploit_run: 0,
            since_refit: 0,
            refits: 0,
            calibration: config.surprise.calibration,
            grid: None,
            target_scale: None,
            best_y: None,
            early_stop: None,
            unresolved_discards: Vec::new(),
            min_d2: vec![f64::INFINITY; n],
            ei_cache: None,
            config,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn model(&self) -> Option<&GpModel> {
        self.model.as_ref()
    }

    /// Provenance of each model training row, in row order.
    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn candidates(&self) -> &DMatrix<f64> {
        &self.candidates
    }

    pub fn warmup_indices(&self) -> &[usize] {
        &self.warmup
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    pub fn budget_used(&self) -> usize {
        self.budget_used
    }

    pub fn budget_remaining(&self) -> usize {
        self.config.total_budget() - self.budget_used
    }

    pub fn pending(&self) -> Option<&Suggestion> {
        self.pending.as_ref()
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    pub fn target_scale(&self) -> Option<ColumnScale> {
        self.target_scale
    }

    pub fn refits(&self) -> usize {
        self.refits
    }

    pub fn early_stop(&self) -> Option<&str> {
        self.early_stop.as_deref()
    }

    /// Log steps of anomalies discarded without a confirmation observation
    /// (no neighbour left, or the budget ran out while confirming).
    pub fn unresolved_discards(&self) -> &[usize] {
        &self.unresolved_discards
    }

    /// Number of extra (non-experiment) warm-up rows.
    pub fn extra_count(&self) -> usize {
        self.extra.as_ref().map_or(0, |e| e.targets.len())
    }

    /// Posterior mean and predictive standard deviation (latent plus noise)
    /// at normalized `points`, in observation units.
    pub fn posterior_at(&self, points: &DMatrix<f64>) -> Result<Option<Vec<(f64, f64)>>, EngineError> {
        let Some(model) = &self.model else {
            return Ok(None);
        };
        let post = model.predict(points)?;
        let noise = model.hyperparams().noise_variance();
        let scale = self.target_scale.unwrap_or(ColumnScale { mean: 0.0, std: 1.0 });
        Ok(Some(
            (0..points.nrows())
                .map(|i| {
                    (
                        scale.inverse(post.mean[i]),
                        (post.variance[i] + noise).sqrt() * scale.std,
                    )
                })
                .collect(),
        ))
    }

    fn to_model_units(&self, y: f64) -> f64 {
        self.target_scale.map_or(y, |s| s.forward(y))
    }

    fn set_phase(&mut self, to: Phase) {
        assert!(
            self.phase.can_move_to(to),
            "illegal phase transition {:?} -> {:?}",
            self.phase,
            to
        );
        self.phase = to;
    }

    fn mark_used(&mut self, index: usize) {
        let c = &self.candidates;
        let row = c.row(index);
        for (j, d) in self.min_d2.iter_mut().enumerate() {
            let d2: f64 = c.row(j).iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < *d {
                *d = d2;
            }
        }
    }

    fn finish(&mut self, reason: Option<String>) {
        if let Some(h) = self.held.take() {
            self.unresolved_discards.push(h.step);
        }
        if reason.is_some() {
            self.early_stop = reason;
        }
        self.locus = None;
        self.pending = None;
        self.set_phase(Phase::Done);
    }

    fn fit_config(&self, starts: usize, initial: Option<gp::Hyperparams>) -> FitConfig {
        FitConfig {
            n_starts: starts,
            max_iter: self.config.fit.max_iter,
            seed: derive_seed(self.config.seed, rng::stream::FIT + 16 * self.refits as u64),
            initial,
            ..FitConfig::default()
        }
    }

    fn finish_warmup(&mut self) -> Result<(), EngineError> {
        let raw: Vec<f64> = self.log.iter().map(|e| e.y).collect();
        if self.config.standardize_targets {
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let std = if var.sqrt() > 1e-12 * (1.0 + mean.abs()) { var.sqrt() } else { 1.0 };
            self.target_scale = Some(ColumnScale { mean, std });
        }
        let n_extra = self.extra_count();
        let d = self.candidates.ncols();
        let n = self.warmup.len() + n_extra;
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut members = Vec::with_capacity(n);
        for (k, &idx) in self.warmup.iter().enumerate() {
            x.row_mut(k).copy_from(&self.candidates.row(idx));
            y[k] = self.to_model_units(raw[k]);
            members.push(Member::Candidate(idx));
        }
        if let Some(extra) = &self.extra {
            for k in 0..n_extra {
                let r = self.warmup.len() + k;
                x.row_mut(r).copy_from(&extra.features.row(k));
                y[r] = self.to_model_units(extra.targets[k]);
                members.push(Member::Extra(k));
            }
        }
        self.best_y = raw.iter().copied().map(|v| self.to_model_units(v)).reduce(f64::max);
        let cfg = self.fit_config(self.config.fit.warmup_starts, None);
        let model = gp::fit(&x, &y, &cfg)?;
        if self.config.policy == Policy::Bayesian {
            let grid = surprise::reference_grid(
                &self.candidates,
                self.config.surprise.reference_grid_size,
                derive_seed(self.config.seed, rng::stream::GRID),
            );
            if self.calibration.is_none() {
                let kls = surprise::leave_one_out_kls(&model, &grid)?;
                self.calibration = Some(surprise::calibrate(&kls, self.config.surprise.k_bayesian)?);
            }
            self.grid = Some(grid);
        }
        if self.config.policy == Policy::Ei {
            self.ei_cache = Some(PredictionCache::new(&model, (*self.candidates).clone())?);
        }
        self.model = Some(model);
        self.members = members;
        self.set_phase(Phase::Explore);
        Ok(())
    }

    /// Adds an observation to the model; `trial` is the already conditioned
    /// model when the caller computed it for a Bayesian verdict.
    fn incorporate(&mut self, index: usize, point: &[f64], y: f64, trial: Option<GpModel>) -> Result<(), EngineError> {
        let model = self.model.as_ref().expect("model exists after warm-up");
        let next = match trial {
            Some(m) => m,
            None => model.condition_on(point, y)?,
        };
        self.model = Some(next);
        self.members.push(Member::Candidate(index));
        self.best_y = Some(self.best_y.map_or(y, |b| b.max(y)));
        self.since_refit += 1;
        if self.since_refit >= self.config.refit_every {
            self.refit()?;
        }
        Ok(())
    }

    fn refit(&mut self) -> Result<(), EngineError> {
        let model = self.model.as_ref().expect("model exists after warm-up");
        self.refits += 1;
        let cfg = self.fit_config(self.config.fit.refit_starts, Some(model.hyperparams()));
        let fitted = gp::fit(model.inputs(), model.outputs(), &cfg)?;
        self.model = Some(fitted);
        self.since_refit = 0;
        Ok(())
    }

    fn verdict(&self, point: &[f64], y: f64) -> Result<(SurpriseVerdict, Option<GpModel>), EngineError> {
        let model = self.model.as_ref().expect("model exists after warm-up");
        match self.config.policy {
            Policy::Shannon => {
                let (mu, var) = model.predict_point(point)?;
                let sd = (var + model.hyperparams().noise_variance()).sqrt();
                Ok((surprise::shannon_surprise(y, mu, sd, &self.config.surprise)?, None))
            }
            Policy::Bayesian => {
                let after = model.condition_on(point, y)?;
                let cfg = SurpriseConfig {
                    calibration: self.calibration,
                    ..self.config.surprise.clone()
                };
                let grid = self.grid.as_ref().expect("grid is built at warm-up");
                let v = surprise::bayesian_surprise(model, &after, grid, &cfg)?;
                Ok((v, Some(after)))
            }
            Policy::Ei => unreachable!("EI campaigns do not evaluate surprise"),
        }
    }

    fn suggest(&mut self, index: usize) -> StepOutcome {
        let s = Suggestion {
            candidate_index: index,
            point: self.candidates.row(index).iter().copied().collect(),
            phase: self.phase,
        };
        self.pending = Some(s.clone());
        StepOutcome::Suggest(s)
    }

    fn acquire(&mut self) -> Result<StepOutcome, EngineError> {
        if self.budget_used >= self.config.total_budget() {
            self.finish(None);
            return Ok(StepOutcome::Done);
        }
        match self.phase {
            Phase::Warmup => {
                let idx = self.warmup[self.budget_used];
                Ok(self.suggest(idx))
            }
            Phase::Explore => self.acquire_explore(),
            Phase::Confirm | Phase::Exploit => {
                let locus = self.locus.clone().expect("locus is set while confirming or exploiting");
                match acquisition::nearest_unused(&self.pool, &self.candidates, &locus, self.config.neighborhood_radius) {
                    Some((idx, _)) => Ok(self.suggest(idx)),
                    None => {
                        if let Some(h) = self.held.take() {
                            self.unresolved_discards.push(h.step);
                        }
                        self.locus = None;
                        self.set_phase(Phase::Explore);
                        self.acquire_explore()
                    }
                }
            }
            Phase::Done => unreachable!("checked by campaign_step"),
        }
    }

    fn acquire_explore(&mut self) -> Result<StepOutcome, EngineError> {
        if self.pool.is_empty() {
            self.finish(Some("candidate pool exhausted before the budget".into()));
            return Ok(StepOutcome::Done);
        }
        let idx = match self.config.policy {
            Policy::Ei => {
                let model = self.model.as_ref().expect("model exists after warm-up");
                let cache = self.ei_cache.as_mut().expect("EI cache is built at warm-up");
                cache.sync(model)?;
                let best = self.best_y.expect("warm-up produced observations");
                let mut pick: Option<(usize, f64)> = None;
                for &i in self.pool.indices() {
                    let (mu, var) = cache.mean_var(i);
                    let s = expected_improvement(mu, var.sqrt(), best).expect("variance is non-negative");
                    if pick.is_none_or(|(_, b)| s > b) {
                        pick = Some((i, s));
                    }
                }
                pick.expect("pool is nonempty").0
            }
            _ => {
                let mut pick: Option<(usize, f64)> = None;
                for &i in self.pool.indices() {
                    let s = self.min_d2[i].sqrt();
                    if pick.is_none_or(|(_, b)| s > b) {
                        pick = Some((i, s));
                    }
                }
                pick.expect("pool is nonempty").0
            }
        };
        Ok(self.suggest(idx))
    }

    fn ingest(&mut self, y_raw: f64) -> Result<StepOutcome, EngineError> {
        if !y_raw.is_finite() {
            return Err(EngineError::Protocol(format!("observation must be finite, got {y_raw}")));
        }
        let s = self.pending.take().expect("checked by campaign_step");
        let index = s.candidate_index;
        if self.phase != Phase::Warmup {
            let removed = self.pool.consume(index);
            debug_assert!(removed, "candidate {index} observed twice");
        }
        self.mark_used(index);
        self.budget_used += 1;
        let step = self.log.len();
        let phase = self.phase;
        let y = self.to_model_units(y_raw);
        let mut entry = LogEntry {
            step,
            phase,
            candidate_index: index,
            point: s.point.clone(),
            y: y_raw,
            verdict: None,
            accepted: true,
            budget_used: self.budget_used,
            resolves: None,
        };

        match phase {
            Phase::Warmup => {
                self.log.push(entry.clone());
                if self.budget_used == self.config.warmup_count {
                    self.finish_warmup()?;
                }
            }
            Phase::Explore if self.config.policy == Policy::Ei => {
                self.incorporate(index, &s.point, y, None)?;
                self.log.push(entry.clone());
            }
            Phase::Explore => {
                let (v, trial) = self.verdict(&s.point, y)?;
                entry.verdict = Some(v);
                if v.flagged {
                    entry.accepted = false;
                    self.held = Some(HeldAnomaly {
                        step,
                        candidate_index: index,
                        point: s.point.clone(),
                        y_model: y,
                    });
                    self.locus = Some(s.point.clone());
                    self.set_phase(Phase::Confirm);
                } else {
                    self.incorporate(index, &s.point, y, trial)?;
                }
                self.log.push(entry.clone());
            }
            Phase::Confirm => {
                let (v, trial) = self.verdict(&s.point, y)?;
                entry.verdict = Some(v);
                let held = self.held.take().expect("an anomaly is held while confirming");
                if v.flagged {
                    self.incorporate(held.candidate_index, &held.point, held.y_model, None)?;
                    self.incorporate(index, &s.point, y, None)?;
                    entry.resolves = Some(Resolution {
                        step: held.step,
                        outcome: AnomalyOutcome::Confirmed,
                    });
                    self.exploit_run = 0;
                    self.set_phase(Phase::Exploit);
                } else {
                    self.incorporate(index, &s.point, y, trial)?;
                    entry.resolves = Some(Resolution {
                        step: held.step,
                        outcome: AnomalyOutcome::Discarded,
                    });
                    self.locus = None;
                    self.set_phase(Phase::Explore);
                }
                self.log.push(entry.clone());
            }
            Phase::Exploit => {
                let (v, trial) = self.verdict(&s.point, y)?;
                entry.verdict = Some(v);
                self.incorporate(index, &s.point, y, trial)?;
                self.exploit_run += 1;
                if !v.flagged || self.exploit_run >= self.config.exploit_cap {
                    self.locus = None;
                    self.set_phase(Phase::Explore);
                }
                self.log.push(entry.clone());
            }
            Phase::Done => unreachable!("checked by campaign_step"),
        }

        if self.budget_used >= self.config.total_budget() {
            self.finish(None);
        }
        Ok(StepOutcome::Ingested(entry))
    }
}

/// Advances the campaign by one transition: acquires the next suggestion
/// when `observed` is `None` and nothing is pending, or ingests `observed`
/// for the pending suggestion.
pub fn campaign_step(state: &mut CampaignState, observed: Option<f64>) -> Result<StepOutcome, EngineError> {
    if state.phase == Phase::Done {
        return Err(EngineError::Protocol("campaign is done".into()));
    }
    match (&state.pending, observed) {
        (Some(p), None) => Err(EngineError::AwaitingObservation {
            candidate_index: p.candidate_index,
        }),
        (None, Some(_)) => Err(EngineError::Protocol("no suggestion is pending".into())),
        (None, None) => state.acquire(),
        (Some(_), Some(y)) => state.ingest(y),
    }
}

/// Folds [`campaign_step`] to completion, answering with `oracle`.
pub fn run_campaign(config: CampaignConfig, setup: CampaignSetup, oracle: &Oracle) -> Result<CampaignState, EngineError> {
    let mut state = CampaignState::new(config, setup)?;
    drive(&mut state, oracle)?;
    Ok(state)
}

/// Continues `state` to completion with `oracle`.
pub fn drive(state: &mut CampaignState, oracle: &Oracle) -> Result<(), EngineError> {
    while !state.is_done() {
        match campaign_step(state, None)? {
            StepOutcome::Suggest(s) => {
                let y = oracle.observe(s.candidate_index, &s.point).ok_or(EngineError::Deferred)?;
                campaign_step(state, Some(y))?;
            }
            StepOutcome::Done => break,
            StepOutcome::Ingested(_) => unreachable!("acquire never ingests"),
        }
    }
    Ok(())
}

/// The EI baseline loop.
pub fn run_ei_bo(config: CampaignConfig, setup: CampaignSetup, oracle: &Oracle) -> Result<CampaignState, EngineError> {
    if config.policy != Policy::Ei {
        return Err(EngineError::Config("run_ei_bo needs policy ei".into()));
    }
    run_campaign(config, setup, oracle)
}

/// The surprise-guided loop (Shannon or Bayesian surprise).
pub fn run_surprise_bo(config: CampaignConfig, setup: CampaignSetup, oracle: &Oracle) -> Result<CampaignState, EngineError> {
    if !config.policy.is_surprise() {
        return Err(EngineError::Config("run_surprise_bo needs policy shannon or bayesian".into()));
    }
    run_campaign(config, setup, oracle)
}

/// Rebuilds a campaign by feeding a recorded log back through
/// [`campaign_step`]; every suggestion must match the logged candidate.
pub fn replay(config: CampaignConfig, setup: CampaignSetup, log: &[LogEntry]) -> Result<CampaignState, EngineError> {
    let mut state = CampaignState::new(config, setup)?;
    for (k, entry) in log.iter().enumerate() {
        match campaign_step(&mut state, None)? {
            StepOutcome::Suggest(s) if s.candidate_index == entry.candidate_index => {}
            StepOutcome::Suggest(s) => {
                return Err(EngineError::ReplayMismatch {
                    step: k,
                    detail: format!("suggested candidate {} but the log has {}", s.candidate_index, entry.candidate_index),
                })
            }
            _ => {
                return Err(EngineError::ReplayMismatch {
                    step: k,
                    detail: "campaign finished before the log ended".into(),
                })
            }
        }
        campaign_step(&mut state, Some(entry.y))?;
    }
    Ok(state)
}
