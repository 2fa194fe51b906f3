//! One human-driven campaign: the engine state plus the raw candidate grid
//! it was built from. All payloads leaving this module are in raw units.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use surprise_bo::dataset::{ColumnScale, DatasetError, FeatureSchema};
use surprise_bo::engine::{
    campaign_step, final_report, read_log_jsonl, replay, CampaignConfig, CampaignReport, CampaignSetup,
    CampaignState, EngineError, LogEntry, Phase, StepOutcome,
};
use surprise_bo::gp::GpSnapshot;
use surprise_bo::surprise::Calibration;

use crate::error::ApiError;

/// Echoed points must match the pending suggestion this closely, relative
/// to the coordinate's magnitude once it exceeds 1.
pub const POINT_TOLERANCE: f64 = 1e-9;

const SESSION_FILE: &str = "session.json";
const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCampaign {
    pub config: CampaignConfig,
    pub schema: FeatureSchema,
    /// Candidate parameter vectors in raw units, one per row.
    #[serde(default)]
    pub grid: Option<Vec<Vec<f64>>>,
    /// Alternatively, a CSV table with a header naming the schema features.
    #[serde(default)]
    pub grid_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub warmup_count: usize,
    /// The warm-up experiments, in the order the campaign will ask for them.
    pub warmup: Vec<Vec<f64>>,
    pub budget_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    /// Predictive standard deviation, observation noise included.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSuggestion {
    pub step: usize,
    pub candidate_index: usize,
    pub phase: Phase,
    pub point: Vec<f64>,
    pub features: BTreeMap<String, f64>,
    /// Model prediction at the point; absent during warm-up.
    pub predicted: Option<Prediction>,
    pub budget_used: usize,
    pub budget_remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SuggestionBody {
    Pending(PendingSuggestion),
    Done { report: Box<CampaignReport> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub point: Vec<f64>,
    pub value: f64,
    /// Raw points at which to return the updated posterior.
    #[serde(default)]
    pub posterior_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPosterior {
    pub point: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationResult {
    pub entry: LogEntry,
    pub phase: Phase,
    pub budget_used: usize,
    pub budget_remaining: usize,
    pub done: bool,
    pub posterior: Vec<PointPosterior>,
}

/// Everything the dashboard needs to render a campaign from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    pub created: u64,
    pub updated: u64,
    pub status: String,
    pub phase: Phase,
    pub budget_used: usize,
    pub budget_total: usize,
    pub budget_remaining: usize,
    pub config: CampaignConfig,
    pub schema: FeatureSchema,
    pub warmup: Vec<Vec<f64>>,
    pub pending: Option<PendingSuggestion>,
    pub log: Vec<LogEntry>,
    pub model: Option<GpSnapshot>,
    pub calibration: Option<Calibration>,
    pub target_scale: Option<ColumnScale>,
    pub early_stop: Option<String>,
}

/// What is written to `session.json`; the log lives next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    id: String,
    created: u64,
    config: CampaignConfig,
    schema: FeatureSchema,
    grid: Vec<Vec<f64>>,
}

pub struct Session {
    pub id: String,
    created: u64,
    updated: u64,
    schema: FeatureSchema,
    grid: Vec<Vec<f64>>,
    scales: Vec<ColumnScale>,
    state: CampaignState,
    dir: Option<PathBuf>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn grid_from_csv(text: &str, schema: &FeatureSchema) -> Result<Vec<Vec<f64>>, ApiError> {
    let bad = |m: String| ApiError::bad_request("invalid_grid", m, Some("grid_csv"));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols: Vec<usize> = schema
        .features()
        .iter()
        .map(|f| {
            header
                .iter()
                .position(|h| h.trim() == f)
                .ok_or_else(|| bad(format!("missing column `{f}`")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = cols
            .iter()
            .map(|&c| {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse::<f64>().map_err(|_| bad(format!("row {}: `{s}` is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_grid(grid: &[Vec<f64>], width: usize) -> Result<(), ApiError> {
    if grid.is_empty() {
        return Err(ApiError::bad_request("invalid_grid", "candidate grid is empty", Some("grid")));
    }
    for (i, row) in grid.iter().enumerate() {
        let field = format!("grid[{i}]");
        if row.len() != width {
            return Err(ApiError::bad_request(
                "invalid_grid",
                format!("row has {} values, the schema has {width} features", row.len()),
                Some(&field),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("invalid_grid", "non-finite value", Some(&field)));
        }
    }
    Ok(())
}

/// Per-column mean and sample std of the grid; constant columns keep std 1.
fn grid_scales(grid: &[Vec<f64>], width: usize) -> Vec<ColumnScale> {
    let n = grid.len() as f64;
    (0..width)
        .map(|j| {
            let mean = grid.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = if grid.len() > 1 {
                grid.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let std = var.sqrt();
            ColumnScale {
                mean,
                std: if std > 0.0 { std } else { 1.0 },
            }
        })
        .collect()
}

fn engine_error(e: EngineError) -> ApiError {
    match e {
        EngineError::Config(m) => ApiError::bad_request("invalid_config", m, Some("config")),
        EngineError::Dataset(DatasetError::Budget(m)) => {
            ApiError::bad_request("budget", m, Some("config.warmup_count"))
        }
        EngineError::Protocol(m) => ApiError::conflict("protocol", m),
        EngineError::AwaitingObservation { candidate_index } => ApiError::conflict(
            "awaiting_observation",
            format!("candidate {candidate_index} is still waiting for its measurement"),
        ),
        other => ApiError::internal(other.to_string()),
    }
}

fn build(config: &CampaignConfig, grid: &[Vec<f64>], scales: &[ColumnScale]) -> Result<CampaignSetup, ApiError> {
    let width = scales.len();
    let candidates = DMatrix::from_fn(grid.len(), width, |i, j| scales[j].forward(grid[i][j]));
    CampaignSetup::draw(candidates, config).map_err(engine_error)
}

impl Session {
    pub fn create(id: String, mut req: CreateCampaign, store: Option<&Path>) -> Result<Session, ApiError> {
        let grid = match (req.grid.take(), req.grid_csv.take()) {
            (Some(g), None) => g,
            (None, Some(text)) => grid_from_csv(&text, &req.schema)?,
            _ => {
                return Err(ApiError::bad_request(
                    "invalid_grid",
                    "give exactly one of `grid` and `grid_csv`",
                    Some("grid"),
                ))
            }
        };
        let width = req.schema.features().len();
        check_grid(&grid, width)?;
        // Humans report raw measurements; the model always sees them standardized.
        req.config.standardize_targets = true;
        let scales = grid_scales(&grid, width);
        let setup = build(&req.config, &grid, &scales)?;
        let state = CampaignState::new(req.config.clone(), setup).map_err(engine_error)?;
        let created = now();
        let dir = match store {
            Some(root) => {
                let dir = root.join(&id);
                let record = SessionRecord {
                    id: id.clone(),
                    created,
                    config: req.config,
                    schema: req.schema.clone(),
                    grid: grid.clone(),
                };
                fs::create_dir_all(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
                let text = serde_json::to_string_pretty(&record).map_err(|e| ApiError::internal(e.to_string()))?;
                fs::write(dir.join(SESSION_FILE), text).map_err(|e| ApiError::internal(e.to_string()))?;
                File::create(dir.join(LOG_FILE)).map_err(|e| ApiError::internal(e.to_string()))?;
                Some(dir)
            }
            None => None,
        };
        Ok(Session {
            id,
            created,
            updated: created,
            schema: req.schema,
            grid,
            scales,
            state,
            dir,
        })
    }

    /// Rebuilds a stored session by replaying its log.
    pub fn restore(dir: &Path) -> Result<Session, String> {
        let text = fs::read_to_string(dir.join(SESSION_FILE)).map_err(|e| e.to_string())?;
        let record: SessionRecord = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let log_path = dir.join(LOG_FILE);
        let log = read_log_jsonl(BufReader::new(File::open(&log_path).map_err(|e| e.to_string())?))
            .map_err(|e| e.to_string())?;
        let width = record.schema.features().len();
        let scales = grid_scales(&record.grid, width);
        let setup = build(&record.config, &record.grid, &scales).map_err(|e| e.body.message)?;
        let state = replay(record.config, setup, &log).map_err(|e| e.to_string())?;
        let updated = fs::metadata(&log_path)
            .and_then(|m| m.modified())
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map_or(record.created, |d| d.as_secs());
        Ok(Session {
            id: record.id,
            created: record.created,
            updated,
            schema: record.schema,
            grid: record.grid,
            scales,
            state,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn created(&self) -> Created {
        Created {
            id: self.id.clone(),
            warmup_count: self.state.config().warmup_count,
            warmup: self.state.warmup_indices().iter().map(|&i| self.grid[i].clone()).collect(),
            budget_total: self.state.config().total_budget(),
        }
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scales).map(|(x, s)| s.forward(*x)).collect()
    }

    /// The engine entry with the point and credible interval in raw units.
    fn raw_entry(&self, e: &LogEntry) -> LogEntry {
        let mut out = e.clone();
        out.point = self.grid[e.candidate_index].clone();
        if let (Some(v), Some(scale)) = (out.verdict.as_mut(), self.state.target_scale()) {
            v.interval = v.interval.map(|(lo, hi)| (scale.inverse(lo), scale.inverse(hi)));
        }
        out
    }

    fn predictions(&self, raw: &[Vec<f64>]) -> Result<Option<Vec<(f64, f64)>>, ApiError> {
        if raw.is_empty() {
            return Ok(Some(Vec::new()));
        }
        let width = self.scales.len();
        let m = DMatrix::from_fn(raw.len(), width, |i, j| self.normalize(&raw[i])[j]);
        self.state.posterior_at(&m).map_err(engine_error)
    }

    fn pending_body(&self) -> Option<PendingSuggestion> {
        let p = self.state.pending()?;
        let point = self.grid[p.candidate_index].clone();
        let predicted = self
            .predictions(std::slice::from_ref(&point))
            .ok()
            .flatten()
            .and_then(|v| v.first().map(|&(mean, std)| Prediction { mean, std }));
        Some(PendingSuggestion {
            step: self.state.log().len(),
            candidate_index: p.candidate_index,
            phase: p.phase,
            features: self.schema.features().iter().cloned().zip(point.iter().copied()).collect(),
            point,
            predicted,
            budget_used: self.state.budget_used(),
            budget_remaining: self.state.budget_remaining(),
        })
    }

    pub fn report(&self) -> Result<CampaignReport, ApiError> {
        let mut r = final_report(&self.state, None).map_err(engine_error)?;
        if let Some(b) = r.best_observed.as_mut() {
            b.point = self.grid[b.candidate_index].clone();
        }
        Ok(r)
    }

    fn done_body(&self) -> Result<SuggestionBody, ApiError> {
        Ok(SuggestionBody::Done {
            report: Box::new(self.report()?),
        })
    }

    /// Returns the pending suggestion, acquiring one first if needed.
    pub fn suggestion(&mut self) -> Result<SuggestionBody, ApiError> {
        if self.state.is_done() {
            return self.done_body();
        }
        if self.state.pending().is_none() {
            match campaign_step(&mut self.state, None).map_err(engine_error)? {
                StepOutcome::Suggest(_) => self.updated = now(),
                StepOutcome::Done => {
                    self.updated = now();
                    return self.done_body();
                }
                StepOutcome::Ingested(_) => unreachable!("acquiring never ingests"),
            }
        }
        Ok(SuggestionBody::Pending(self.pending_body().expect("a suggestion is pending")))
    }

    pub fn observe(&mut self, obs: &Observation) -> Result<ObservationResult, ApiError> {
        let Some(p) = self.state.pending() else {
            return Err(ApiError::conflict("no_pending", "no suggestion is waiting for a measurement"));
        };
        let expected = &self.grid[p.candidate_index];
        let matches = obs.point.len() == expected.len()
            && obs
                .point
                .iter()
                .zip(expected)
                .all(|(a, b)| (a - b).abs() <= POINT_TOLERANCE * b.abs().max(1.0));
        if !matches {
            return Err(ApiError::conflict(
                "point_mismatch",
                format!("submitted point does not match the pending suggestion {expected:?}"),
            ));
        }
        if !obs.value.is_finite() {
            return Err(ApiError::bad_request("invalid_value", "measured value must be finite", Some("value")));
        }
        let width = self.scales.len();
        if let Some(i) = obs.posterior_points.iter().position(|p| p.len() != width) {
            let field = format!("posterior_points[{i}]");
            return Err(ApiError::bad_request("invalid_point", format!("expected {width} values"), Some(&field)));
        }
        let entry = match campaign_step(&mut self.state, Some(obs.value)).map_err(engine_error)? {
            StepOutcome::Ingested(e) => self.raw_entry(&e),
            _ => unreachable!("an observation was pending"),
        };
        self.updated = now();
        self.append(&entry)?;
        let posterior = match self.predictions(&obs.posterior_points)? {
            Some(v) => obs
                .posterior_points
                .iter()
                .zip(v)
                .map(|(p, (mean, std))| PointPosterior {
                    point: p.clone(),
                    mean,
                    std,
                })
                .collect(),
            None => Vec::new(),
        };
        Ok(ObservationResult {
            entry,
            phase: self.state.phase(),
            budget_used: self.state.budget_used(),
            budget_remaining: self.state.budget_remaining(),
            done: self.state.is_done(),
            posterior,
        })
    }

    fn append(&self, entry: &LogEntry) -> Result<(), ApiError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let io = |e: std::io::Error| ApiError::internal(format!("could not persist observation: {e}"));
        let mut f = OpenOptions::new().append(true).open(dir.join(LOG_FILE)).map_err(io)?;
        let mut line = serde_json::to_vec(entry).map_err(|e| ApiError::internal(e.to_string()))?;
        line.push(b'\n');
        f.write_all(&line).map_err(io)?;
        f.sync_data().map_err(io)
    }

    /// The log in raw units, one JSON object per line.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.state.log() {
            out.push_str(&serde_json::to_string(&self.raw_entry(e)).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn view(&self) -> StateView {
        let s = &self.state;
        StateView {
            id: self.id.clone(),
            created: self.created,
            updated: self.updated,
            status: if s.is_done() { "done" } else { "active" }.to_string(),
            phase: s.phase(),
            budget_used: s.budget_used(),
            budget_total: s.config().total_budget(),
            budget_remaining: s.budget_remaining(),
            config: s.config().clone(),
            schema: self.schema.clone(),
            warmup: self.created().warmup,
            pending: self.pending_body(),
            log: s.log().iter().map(|e| self.raw_entry(e)).collect(),
            model: s.model().map(|m| m.snapshot()),
            calibration: s.calibration(),
            target_scale: s.target_scale(),
            early_stop: s.early_stop().map(str::to_string),
        }
    }
}
