//! Trial records as JSON lines and summaries as CSV.

use std::io::Write;

use serde::Serialize;

use super::config::GameConfig;
use super::game::{MonteCarloSummary, TrialOutcome};
use super::sweep::SweepRow;
use super::EngineError;

/// Flat per-trial record.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord<'a> {
    pub record: &'static str,
    pub config: String,
    pub trial: u64,
    pub seed: u64,
    pub won: bool,
    pub first_failure_index: Option<usize>,
    pub max_error: f64,
    pub queries: usize,
    pub attempts: usize,
    pub final_error: Option<f64>,
    pub analyst: &'a str,
    pub applicable: bool,
    pub predicted_inaccuracy: Option<f64>,
    pub knowledge_accuracy: Option<f64>,
    pub data_digest: String,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub transcript: &'a [super::game::QueryRecord],
}

#[derive(Clone, Debug, Serialize)]
struct SummaryRecord<'a> {
    record: &'static str,
    config: String,
    name: Option<&'a str>,
    trials: usize,
    failures: usize,
    failure_rate: f64,
    interval_low: f64,
    interval_high: f64,
}

pub fn digest_hex(cfg: &GameConfig) -> String {
    format!("{:016x}", cfg.digest())
}

pub fn trial_record<'a>(cfg: &GameConfig, outcome: &'a TrialOutcome) -> TrialRecord<'a> {
    let r = &outcome.result;
    TrialRecord {
        record: "trial",
        config: digest_hex(cfg),
        trial: outcome.trial,
        seed: outcome.seed,
        won: r.curator_won,
        first_failure_index: r.first_failure_index,
        max_error: r.max_error,
        queries: r.queries,
        attempts: r.attempts,
        final_error: r.final_error,
        analyst: &r.report.strategy,
        applicable: r.report.applicable,
        predicted_inaccuracy: r.report.predicted_inaccuracy.as_ref().map(crate::value::to_f64),
        knowledge_accuracy: r.knowledge_accuracy,
        data_digest: format!("{:016x}", outcome.transcript.data_digest),
        transcript: &outcome.transcript.records,
    }
}

/// One line per trial followed by a summary line.
pub fn write_jsonl(
    out: &mut impl Write,
    cfg: &GameConfig,
    summary: &MonteCarloSummary,
    outcomes: &[TrialOutcome],
) -> Result<(), EngineError> {
    for o in outcomes {
        serde_json::to_writer(&mut *out, &trial_record(cfg, o))?;
        writeln!(out)?;
    }
    let s = SummaryRecord {
        record: "summary",
        config: digest_hex(cfg),
        name: cfg.name.as_deref(),
        trials: summary.trials,
        failures: summary.failure_count,
        failure_rate: summary.failure_rate,
        interval_low: summary.interval.0,
        interval_high: summary.interval.1,
    };
    serde_json::to_writer(&mut *out, &s)?;
    writeln!(out)?;
    Ok(())
}

/// CSV with one row per trial (without transcripts).
pub fn write_trials_csv(out: impl Write, cfg: &GameConfig, outcomes: &[TrialOutcome]) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "config", "trial", "seed", "won", "first_failure_index", "max_error", "queries", "attempts", "analyst",
    ])?;
    for o in outcomes {
        let r = trial_record(cfg, o);
        w.write_record([
            r.config,
            r.trial.to_string(),
            r.seed.to_string(),
            r.won.to_string(),
            r.first_failure_index.map(|i| i.to_string()).unwrap_or_default(),
            r.max_error.to_string(),
            r.queries.to_string(),
            r.attempts.to_string(),
            r.analyst.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep table: one column per axis, then the summary columns.
pub fn write_sweep_csv(out: impl Write, rows: &[SweepRow]) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header: Vec<String> = first.params.iter().map(|(p, _)| p.clone()).collect();
        header.extend(["trials", "failures", "failure_rate", "interval_low", "interval_high"].map(String::from));
        w.write_record(&header)?;
    }
    for row in rows {
        let mut fields: Vec<String> = row.params.iter().map(|(_, v)| v.clone()).collect();
        let s = &row.summary;
        fields.extend([
            s.trials.to_string(),
            s.failure_count.to_string(),
            s.failure_rate.to_string(),
            s.interval.0.to_string(),
            s.interval.1.to_string(),
        ]);
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Single-row CSV mirroring the JSON summary record.
pub fn write_summary_csv(out: impl Write, cfg: &GameConfig, summary: &MonteCarloSummary) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config", "name", "trials", "failures", "failure_rate", "interval_low", "interval_high"])?;
    w.write_record([
        digest_hex(cfg),
        cfg.name.clone().unwrap_or_default(),
        summary.trials.to_string(),
        summary.failure_count.to_string(),
        summary.failure_rate.to_string(),
        summary.interval.0.to_string(),
        summary.interval.1.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}
