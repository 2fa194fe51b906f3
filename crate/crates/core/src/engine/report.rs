use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AnomalyOutcome, CampaignState, EngineError, LogEntry, Phase, Policy};
use crate::dataset::Dataset;
use crate::gp::GpSnapshot;
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestObservation {
    pub step: usize,
    pub candidate_index: usize,
    pub point: Vec<f64>,
    pub y: f64,
}

/// End-of-campaign summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub policy: Policy,
    pub budget_used: usize,
    pub budget_total: usize,
    pub warmup_count: usize,
    pub extra_rows: usize,
    pub n_train: usize,
    pub test_rmse: Option<f64>,
    pub best_observed: Option<BestObservation>,
    /// Flagged verdicts keyed by the phase the observation was taken in.
    pub flags_by_phase: BTreeMap<Phase, usize>,
    pub flags: usize,
    pub confirmations: usize,
    pub discards: usize,
    pub exploit_observations: usize,
    pub refits: usize,
    pub early_stop: Option<String>,
    pub model: Option<GpSnapshot>,
}

/// Summarizes a finished campaign, scoring the final model on `test` when
/// given. Test features must be in the candidates' coordinates; targets in
/// observation units.
pub fn final_report(state: &CampaignState, test: Option<&Dataset>) -> Result<CampaignReport, EngineError> {
    if !state.is_done() {
        return Err(EngineError::Protocol("report requested before the campaign finished".into()));
    }
    let log = state.log();
    let mut flags_by_phase = BTreeMap::new();
    for e in log {
        if e.verdict.is_some_and(|v| v.flagged) {
            *flags_by_phase.entry(e.phase).or_insert(0) += 1;
        }
    }
    let outcome_count = |o: AnomalyOutcome| {
        log.iter()
            .filter(|e| e.resolves.is_some_and(|r| r.outcome == o))
            .count()
    };
    let best_observed = log
        .iter()
        .fold(None::<&LogEntry>, |best, e| match best {
            Some(b) if b.y >= e.y => Some(b),
            _ => Some(e),
        })
        .map(|e| BestObservation {
            step: e.step,
            candidate_index: e.candidate_index,
            point: e.point.clone(),
            y: e.y,
        });
    let test_rmse = match (test, state.model()) {
        (Some(t), Some(_)) => {
            let post = state.posterior_at(t.features())?.expect("model exists");
            let pred: Vec<f64> = post.iter().map(|(m, _)| *m).collect();
            Some(metrics::rmse(&pred, t.targets().as_slice()).map_err(|e| EngineError::Config(e.to_string()))?)
        }
        _ => None,
    };
    Ok(CampaignReport {
        policy: state.config().policy,
        budget_used: state.budget_used(),
        budget_total: state.config().total_budget(),
        warmup_count: state.config().warmup_count,
        extra_rows: state.extra_count(),
        n_train: state.model().map_or(0, |m| m.n_train()),
        test_rmse,
        best_observed,
        flags: flags_by_phase.values().sum(),
        flags_by_phase,
        confirmations: outcome_count(AnomalyOutcome::Confirmed),
        discards: outcome_count(AnomalyOutcome::Discarded) + state.unresolved_discards().len(),
        exploit_observations: log.iter().filter(|e| e.phase == Phase::Exploit).count(),
        refits: state.refits(),
        early_stop: state.early_stop().map(str::to_string),
        model: state.model().map(|m| m.snapshot()),
    })
}

/// Writes one JSON object per log entry.
pub fn write_log_jsonl<W: Write>(log: &[LogEntry], mut out: W) -> Result<(), EngineError> {
    for e in log {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log_jsonl<R: BufRead>(input: R) -> Result<Vec<LogEntry>, EngineError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| EngineError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}
