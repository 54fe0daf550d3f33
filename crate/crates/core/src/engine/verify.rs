//! Property suites runnable from the command line.

use std::sync::Arc;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codes::{reed_muller, LinearCode};
use crate::f2_linalg::F2Vector;
use crate::models::{two_hypothesis_event, LeafHypothesis, Model, PosteriorState, Sample};
use crate::partition::{audit_partition, audit_safe_point, safe_partition, safe_point, DiscreteDistribution};
use crate::queries::{eval_unit, posterior_mean, random_query, random_weighted_points, Query, WeightedPoint};
use crate::seeds::derive_seed;
use crate::value::{ratio, Rational};

use super::game::wilson_interval;
use super::EngineError;

pub const SUITES: [&str; 4] = ["priorconc", "safepart", "generalcode", "posterior-oracle"];

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: usize,
    pub violations: usize,
    pub details: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checks > 0
    }
}

/// Sizes of each suite; `trials` scales the Monte Carlo and random-instance counts.
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: Option<usize>,
}

pub fn verify(suite: &str, options: &VerifyOptions) -> Result<VerifyReport, EngineError> {
    match suite {
        "priorconc" => Ok(prior_concentration(&[4, 6, 8, 10], options.trials.unwrap_or(50), options.seed)),
        "safepart" => Ok(safe_partitions(options.trials.unwrap_or(500), options.seed)),
        "generalcode" => general_code(options.trials.unwrap_or(100_000), options.seed),
        "posterior-oracle" => Ok(posterior_oracle(options.trials.unwrap_or(1000), options.seed)),
        other => Err(EngineError::UnknownSuite(other.to_string())),
    }
}

/// Exact prior variance of a weighted-point query on `LC(m)`, by enumerating all
/// coefficient vectors. Weights are multiples of 1/16; returns `(variance numerator,
/// denominator)` with the variance of the answer equal to their ratio.
pub fn weighted_points_prior_variance(vars: u32, entries: &[WeightedPoint]) -> (i128, i128) {
    let points = 1i128 << vars;
    let scaled: Vec<(u64, bool, i128)> = entries
        .iter()
        .map(|e| {
            let w = &e.weight * Rational::from_integer(BigInt::from(16));
            (e.point, e.label, w.to_integer().try_into().unwrap_or(0))
        })
        .collect();
    let count = 1i128 << (vars + 1);
    let (mut sum, mut sum_sq) = (0i128, 0i128);
    for a in 0..(1u64 << (vars + 1)) {
        let bias = a & 1 == 1;
        let linear = a >> 1;
        let s: i128 = scaled
            .iter()
            .filter(|(y, z, _)| (bias ^ ((linear & y).count_ones() % 2 == 1)) == *z)
            .map(|(_, _, w)| w)
            .sum();
        sum += s;
        sum_sq += s * s;
    }
    // Var(S) = (H * sum_sq - sum^2) / H^2 and the answer is S / (16 N).
    (count * sum_sq - sum * sum, count * count * (16 * points) * (16 * points))
}

fn prior_concentration(ms: &[u32], per_m: usize, seed: u64) -> VerifyReport {
    let mut report = VerifyReport { suite: "priorconc".into(), ..Default::default() };
    for &m in ms {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(m)));
        let points = 1u64 << m;
        let mut worst = 0.0f64;
        for _ in 0..per_m {
            let entries = rng.random_range(1..=2 * points as usize);
            let Query::WeightedPoints { entries } = random_weighted_points(points, entries, &mut rng) else {
                continue;
            };
            let (num, den) = weighted_points_prior_variance(m, &entries);
            // Var <= 2^-m / 4  <=>  4 * 2^m * num <= den.
            report.checks += 1;
            worst = worst.max(num as f64 / den as f64 * 4.0 * points as f64);
            if 4 * (points as i128) * num > den {
                report.violations += 1;
                report.details.push(format!("m={m}: variance {num}/{den} exceeds 2^-m/4"));
            }
        }
        report.details.push(format!("m={m}: worst variance / bound = {worst:.4}"));
    }
    report
}

/// Random discrete distribution with at most `max_support` atoms on a 1/10000 grid.
pub fn random_distribution(rng: &mut impl Rng, max_support: usize) -> DiscreteDistribution {
    let s = rng.random_range(1..=max_support);
    let atoms = (0..s)
        .map(|_| (ratio(rng.random_range(0..=10_000), 10_000), ratio(rng.random_range(1..=100), 1)))
        .collect();
    DiscreteDistribution::normalized(atoms).expect("positive weights")
}

fn safe_partitions(count: usize, seed: u64) -> VerifyReport {
    let mut report = VerifyReport { suite: "safepart".into(), ..Default::default() };
    let epsilons = [ratio(1, 20), ratio(1, 10), ratio(3, 10)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let d = random_distribution(&mut rng, 50);
        let x = safe_point(&d);
        report.checks += 1;
        let issues = audit_safe_point(&d, &x);
        if !issues.is_empty() {
            report.violations += 1;
            report.details.push(format!("distribution {i}: safe point {x}: {}", issues.join("; ")));
        }
        for eps in &epsilons {
            report.checks += 1;
            match safe_partition(&d, eps) {
                Ok(p) => {
                    let issues = audit_partition(&d, &p);
                    if !issues.is_empty() {
                        report.violations += 1;
                        report.details.push(format!("distribution {i}, epsilon {eps}: {}", issues.join("; ")));
                    }
                }
                Err(e) => {
                    report.violations += 1;
                    report.details.push(format!("distribution {i}, epsilon {eps}: {e}"));
                }
            }
        }
    }
    report
}

/// Estimated probability of exactly two eligible codewords after `n` samples.
pub fn two_eligible_rate(code: &LinearCode, n: usize, trials: usize, seed: u64) -> usize {
    (0..trials as u64)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ (n as u64).rotate_left(32), t));
            two_hypothesis_event(code, n, &mut rng).occurred
        })
        .count()
}

fn general_code(trials: usize, seed: u64) -> Result<VerifyReport, EngineError> {
    let mut report = VerifyReport { suite: "generalcode".into(), ..Default::default() };
    let mut code = reed_muller(4, 1)?;
    let d = code.verify_distance()?;
    let (m, k) = (code.length(), code.dimension());
    let target = d as f64 / (4 * m * k) as f64;
    let mut best = (0usize, 0.0f64);
    for n in 4..=20 {
        let hits = two_eligible_rate(&code, n, trials, seed);
        let (lo, _) = wilson_interval(hits, trials, 1.96);
        report.details.push(format!("n={n}: {hits}/{trials} two-eligible, Wilson lower {lo:.4}"));
        if lo > best.1 {
            best = (n, lo);
        }
    }
    report.checks = 1;
    if best.1 < target {
        report.violations = 1;
    }
    report.details.push(format!("best n={} lower bound {:.4} vs target d/(4mk) = {target:.4}", best.0, best.1));
    Ok(report)
}

/// Brute-force posterior mean: enumerate every hypothesis of a single-leaf classification
/// model, keep those consistent with the samples, average their true answers.
pub fn brute_force_posterior_mean(model: &Model, samples: &[(u64, bool)], q: &Query) -> Option<Rational> {
    let points = model.point_count()? as usize;
    let tables: Vec<F2Vector> = match model.coefficient_dim() {
        Some(k) => (0..1u64 << k).filter_map(|a| model.label_table(&F2Vector::from_u64(k, a))).collect(),
        None => (0..1u64 << points).map(|bits| F2Vector::from_u64(points, bits)).collect(),
    };
    let eligible: Vec<&F2Vector> =
        tables.iter().filter(|t| samples.iter().all(|&(y, z)| t.get(y as usize) == z)).collect();
    if eligible.is_empty() {
        return None;
    }
    let mut ones = vec![0i64; points];
    for t in &eligible {
        for (y, c) in ones.iter_mut().enumerate() {
            *c += i64::from(t.get(y));
        }
    }
    let e = eligible.len() as i64;
    let mut total = Rational::from_integer(0.into());
    for (y, &c1) in ones.iter().enumerate() {
        let f1 = eval_unit(q, &Sample::Labeled { point: y as u64, label: true }).ok()?.to_rational();
        let f0 = eval_unit(q, &Sample::Labeled { point: y as u64, label: false }).ok()?.to_rational();
        total += f1 * Rational::from_integer(c1.into()) + f0 * Rational::from_integer((e - c1).into());
    }
    Some(total / Rational::from_integer(BigInt::from(e) * BigInt::from(points)))
}

/// Random classification models with coefficient dimension at most 12.
pub fn random_small_classification(rng: &mut impl Rng) -> Model {
    match rng.random_range(0..4u8) {
        0 => Model::linear(rng.random_range(1..=8)).expect("small linear"),
        1 => {
            let vars = rng.random_range(1..=4);
            Model::polynomial(vars, rng.random_range(1..=vars.min(2))).expect("small polynomial")
        }
        2 => Model::code(reed_muller(rng.random_range(2..=3), rng.random_range(0..=1)).expect("small code")),
        _ => Model::independent(rng.random_range(1..=10)).expect("small independent"),
    }
}

fn posterior_oracle(pairs: usize, seed: u64) -> VerifyReport {
    let mut report = VerifyReport { suite: "posterior-oracle".into(), ..Default::default() };
    let results: Vec<Option<String>> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            let model = Arc::new(random_small_classification(&mut rng));
            let h = LeafHypothesis::draw(&model, &mut rng);
            let dim = model.coefficient_dim().unwrap_or(model.point_count().unwrap_or(1) as usize);
            let n = rng.random_range(0..=dim + 2);
            let mut post = PosteriorState::new(model.clone());
            let mut seen = Vec::new();
            for _ in 0..n {
                let s = h.draw_sample(&model, &mut rng);
                if let Sample::Labeled { point, label } = s {
                    seen.push((point, label));
                }
                post.update(&s).ok()?;
            }
            let q = random_query(model.point_count().unwrap_or(1), &mut rng);
            let fast = posterior_mean(&q, &post).ok()?.to_rational();
            let slow = brute_force_posterior_mean(&model, &seen, &q)?;
            (fast != slow).then(|| format!("pair {i} on {model}: {fast} vs {slow}"))
        })
        .collect();
    report.checks = pairs;
    for r in results.into_iter().flatten() {
        report.violations += 1;
        report.details.push(r);
    }
    report
}
