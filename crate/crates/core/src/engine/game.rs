//! One game between a curator and an analyst, and Monte Carlo estimates over many.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysts::{build_analyst, AnalystContext, AttackReport};
use crate::curators::{AnswerSource, Curator, PartitionMemo};
use crate::models::{Dataset, Hypothesis, Model, PointStatus, PosteriorState};
use crate::queries::{true_answer, Query};
use crate::seeds::{derive_seed, stream_rng, trial_seed, Stream};
use crate::value::{Rational, Value};

use super::config::{resolve, Condition, GameConfig};
use super::EngineError;

/// One answered query.
#[derive(Clone, Debug, Serialize)]
pub struct QueryRecord {
    pub index: usize,
    pub query: Query,
    pub answer: Value,
    pub source: AnswerSource,
    pub truth: Value,
    pub error: Value,
    pub accurate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Transcript {
    pub records: Vec<QueryRecord>,
    /// Hypothesis summary (leaf 0).
    pub hypothesis: String,
    pub data_digest: u64,
}

/// Counts of answers by how they were produced, plus the mid-range statistics used to
/// check that released proxies stay near one half.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AnswerStats {
    pub direct: usize,
    pub noisy: usize,
    pub rounded: usize,
    pub proxy_release: usize,
    pub fallback: usize,
    /// Answers in `[1/4, 3/4]`.
    pub mid_range: usize,
    /// Mid-range answers that are proxy releases within `1/m` of one half, where `m` is the
    /// point count of leaf 0 (when it is a classification leaf).
    pub mid_range_proxy_near_half: usize,
}

impl AnswerStats {
    fn add(&mut self, source: AnswerSource, answer: f64, near_half: Option<f64>) {
        match source {
            AnswerSource::Direct => self.direct += 1,
            AnswerSource::Noisy => self.noisy += 1,
            AnswerSource::Rounded => self.rounded += 1,
            AnswerSource::ProxyRelease => self.proxy_release += 1,
            AnswerSource::Fallback => self.fallback += 1,
        }
        if (0.25..=0.75).contains(&answer) {
            self.mid_range += 1;
            if source == AnswerSource::ProxyRelease && near_half.is_some_and(|w| (answer - 0.5).abs() <= w) {
                self.mid_range_proxy_near_half += 1;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GameResult {
    pub curator_won: bool,
    pub first_failure_index: Option<usize>,
    pub max_error: f64,
    pub queries: usize,
    /// Draws needed to satisfy the trial condition (1 when unconditioned).
    pub attempts: usize,
    /// Error of the last query.
    pub final_error: Option<f64>,
    /// Mean error over all queries but the last.
    pub mean_prefix_error: Option<f64>,
    pub answers: AnswerStats,
    /// Fraction of points of the reported knowledge map that match the curator's
    /// actual knowledge.
    pub knowledge_accuracy: Option<f64>,
    pub report: AttackReport,
}

/// A validated config with everything trials share.
pub struct Game {
    config: GameConfig,
    model: Arc<Model>,
    budget: usize,
    memo: Arc<PartitionMemo>,
}

impl Game {
    pub fn new(config: GameConfig) -> Result<Self, EngineError> {
        let (model, budget) = resolve(&config)?;
        config.curator.validate()?;
        let game = Self { config, model, budget, memo: Arc::new(PartitionMemo::new()) };
        game.check_compatible()?;
        Ok(game)
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn memo(&self) -> &Arc<PartitionMemo> {
        &self.memo
    }

    /// Builds an analyst against a prior-only dataset so incompatibilities surface before
    /// any trial runs.
    fn check_compatible(&self) -> Result<(), EngineError> {
        let h = Arc::new(Hypothesis::lazy(self.model.clone(), 0));
        let ctx = self.context(h);
        build_analyst(&self.config.analyst, &ctx, stream_rng(0, Stream::Analyst))?;
        if let Some(Condition::TwoEligible { leaf, .. }) = &self.config.condition {
            if !self.model.leaf(*leaf)?.is_classification() {
                return Err(EngineError::Config(format!("condition leaf {leaf} is not a classification leaf")));
            }
        }
        Ok(())
    }

    fn context(&self, oracle: Arc<Hypothesis>) -> AnalystContext {
        AnalystContext {
            model: self.model.clone(),
            n: self.config.n,
            epsilon: self.config.epsilon.clone(),
            curator: self.config.curator.clone(),
            memo: self.memo.clone(),
            oracle: Some(oracle),
        }
    }

    /// Draws the hypothesis and data for a trial, redrawing until the condition holds.
    fn draw(&self, seed: u64) -> Result<(Arc<Hypothesis>, Arc<Dataset>, usize), EngineError> {
        let (leaf, max_attempts) = match &self.config.condition {
            Some(Condition::TwoEligible { leaf, max_attempts }) => (Some(*leaf), *max_attempts),
            None => (None, 1),
        };
        for attempt in 0..max_attempts.max(1) {
            let s = if leaf.is_some() { derive_seed(seed, attempt as u64) } else { seed };
            let h = Arc::new(Hypothesis::lazy(self.model.clone(), derive_seed(s, Stream::Hypothesis as u64)));
            let data = Arc::new(Dataset::new(h.clone(), self.config.n, derive_seed(s, Stream::Data as u64)));
            match leaf {
                None => return Ok((h, data, 1)),
                Some(l) => {
                    let post = PosteriorState::from_dataset(data.clone());
                    if post.eligible_count(l)? == 2u32.into() {
                        return Ok((h, data, attempt + 1));
                    }
                }
            }
        }
        Err(EngineError::ConditionUnmet(max_attempts))
    }

    /// Plays one game with the given trial seed.
    pub fn play(&self, seed: u64) -> Result<(Transcript, GameResult), EngineError> {
        let (h, data, attempts) = self.draw(seed)?;
        let mut curator =
            Curator::new(self.config.curator.clone(), data.clone(), stream_rng(seed, Stream::Curator), self.memo.clone())?;
        let mut analyst = build_analyst(&self.config.analyst, &self.context(h.clone()), stream_rng(seed, Stream::Analyst))?;
        let near_half = self.model.leaf(0)?.point_count().map(|m| 1.0 / m as f64);
        let mut records = Vec::new();
        let mut stats = AnswerStats::default();
        let mut first_failure = None;
        let mut max_error = 0.0f64;
        let mut errors_sum = 0.0;
        let mut last_error = None;
        let mut issued = 0;
        while issued < self.budget {
            let Some(q) = analyst.next_query()? else { break };
            let answer = curator.answer(&q)?;
            let truth = true_answer(&q, &*h)?;
            let error = answer.value.abs_diff(&truth);
            let accurate = error.lt(&self.config.epsilon);
            let e = error.to_f64();
            if !accurate && first_failure.is_none() {
                first_failure = Some(issued);
            }
            max_error = max_error.max(e);
            if let Some(prev) = last_error.replace(e) {
                errors_sum += prev;
            }
            stats.add(answer.source, answer.value.to_f64(), near_half);
            analyst.observe(&answer.value)?;
            if self.config.record_queries {
                records.push(QueryRecord { index: issued, query: q, answer: answer.value, source: answer.source, truth, error, accurate });
            }
            issued += 1;
        }
        let report = analyst.report();
        let knowledge_accuracy = match (&report.knowledge_map, report.knowledge_leaf) {
            (Some(map), Some(leaf)) => Some(knowledge_agreement(curator.posterior(), leaf, map)?),
            _ => None,
        };
        let result = GameResult {
            curator_won: first_failure.is_none(),
            first_failure_index: first_failure,
            max_error,
            queries: issued,
            attempts,
            final_error: last_error,
            mean_prefix_error: (issued > 1).then(|| errors_sum / (issued - 1) as f64),
            answers: stats,
            knowledge_accuracy,
            report,
        };
        let transcript = Transcript { records, hypothesis: describe(&h), data_digest: data.digest() };
        Ok((transcript, result))
    }

    /// Runs `trials` games with seeds `seed ^ t`, in parallel, collected in trial order.
    pub fn monte_carlo(&self, trials: usize, seed: u64) -> Result<(MonteCarloSummary, Vec<TrialOutcome>), EngineError> {
        let outcomes = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let s = trial_seed(seed, t);
                self.play(s).map(|(transcript, result)| TrialOutcome { trial: t, seed: s, transcript, result })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let failures = outcomes.iter().filter(|o| !o.result.curator_won).count();
        Ok((MonteCarloSummary::new(trials, failures, outcomes.iter().map(|o| o.seed).collect()), outcomes))
    }
}

fn knowledge_agreement(post: &PosteriorState, leaf: usize, map: &str) -> Result<f64, EngineError> {
    let actual = post.knowledge(leaf)?;
    let total = map.len().max(1);
    let agree = map
        .chars()
        .enumerate()
        .filter(|(y, c)| {
            let status = actual.status(*y as u64);
            matches!(
                (status, c),
                (PointStatus::Known(false), '0') | (PointStatus::Known(true), '1') | (PointStatus::Unknown, '?')
            )
        })
        .count();
    Ok(agree as f64 / total as f64)
}

fn describe(h: &Hypothesis) -> String {
    match h.leaf(0) {
        Ok(leaf) => match &*leaf {
            crate::models::LeafHypothesis::Labels { coefficients: Some(c), .. } => format!("coefficients {c}"),
            crate::models::LeafHypothesis::Labels { table, .. } => format!("table {table}"),
            crate::models::LeafHypothesis::Coin { heads } => format!("heads {heads}"),
            crate::models::LeafHypothesis::Simplex { probabilities } => format!("simplex {probabilities:?}"),
            crate::models::LeafHypothesis::Gaussian { center } => format!("center of dimension {}", center.len()),
        },
        Err(e) => e.to_string(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub seed: u64,
    pub transcript: Transcript,
    pub result: GameResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub failure_count: usize,
    pub failure_rate: f64,
    /// Wilson 95% interval for the failure probability.
    pub interval: (f64, f64),
    pub seeds: Vec<u64>,
}

impl MonteCarloSummary {
    pub fn new(trials: usize, failures: usize, seeds: Vec<u64>) -> Self {
        let failure_rate = if trials == 0 { 0.0 } else { failures as f64 / trials as f64 };
        Self { trials, failure_count: failures, failure_rate, interval: wilson_interval(failures, trials, 1.96), seeds }
    }
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Convenience: parse, validate and run a config with its own trials and seed.
pub fn run_config(config: GameConfig) -> Result<(MonteCarloSummary, Vec<TrialOutcome>), EngineError> {
    let trials = config.trials;
    let seed = config.seed;
    Game::new(config)?.monte_carlo(trials, seed)
}

/// Accuracy check used throughout: `|answer - truth| < epsilon`.
pub fn accurate(answer: &Value, truth: &Value, epsilon: &Rational) -> bool {
    answer.abs_diff(truth).lt(epsilon)
}
