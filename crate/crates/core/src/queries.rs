//! Statistical queries as expression trees, with pointwise evaluation and exact
//! expectations under hypotheses, posteriors and other beliefs.
//!
//! Leaf-level queries (`PointIndicator`, `GraphIndicator`, ...) act on one leaf of the
//! model: directly when the model is a single leaf, otherwise through `Component`.
//! `DiagonalMix` and `CoinProjection` name the leaves they read themselves.

use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::f2_linalg::F2Vector;
use crate::models::{Belief, LabelView, LeafHypothesis, LeafView, Model, ModelError, Sample};
use crate::partition::{DiscreteDistribution, PartitionError};
use crate::seeds::fnv1a;
use crate::value::{from_f64, half, int, rational_serde, Rational, Value};

/// Default number of grid cells when a prior answer distribution must be discretized.
pub const DEFAULT_RESOLUTION: usize = 4096;
/// Largest hypothesis count enumerated exactly for a prior answer distribution.
pub const MAX_ENUMERATED_HYPOTHESES: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query does not fit the universe: {0}")]
    UniverseMismatch(String),
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

fn mismatch<T>(msg: impl Into<String>) -> Result<T, QueryError> {
    Err(QueryError::UniverseMismatch(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub point: u64,
    pub label: bool,
    #[serde(with = "rational_serde")]
    pub weight: Rational,
}

/// A function from the universe to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Query {
    Constant {
        #[serde(with = "rational_serde")]
        value: Rational,
    },
    /// 1 exactly at `(point, label)`.
    PointIndicator { point: u64, label: bool },
    /// 1 on the graph of the label table.
    GraphIndicator { table: F2Vector },
    /// `weight` at each listed `(point, label)`, 0 elsewhere.
    WeightedPoints { entries: Vec<WeightedPoint> },
    /// `(points[l], 1)` maps to `2 * 3^-(l+1)`, everything else to 0.
    TernaryEncoding { points: Vec<u64> },
    /// `level` away from `point`, the label itself at `point`.
    BoundaryStraddle {
        point: u64,
        #[serde(with = "rational_serde")]
        level: Rational,
    },
    /// `label * coefficient` at the probe point of the label leaf, else the chosen copy of
    /// the coin leaf.
    DiagonalMix {
        label_leaf: usize,
        probe: u64,
        coin: usize,
        #[serde(default)]
        copy: usize,
        #[serde(with = "rational_serde")]
        coefficient: Rational,
    },
    /// Indicator that copy `copy` of coin leaf `coin` shows outcome 1.
    CoinProjection {
        coin: usize,
        #[serde(default)]
        copy: usize,
    },
    /// `clamp((<direction, x> - lower) / (upper - lower), 0, 1)`.
    CompiledDirection { direction: Vec<f64>, lower: f64, upper: f64 },
    /// 1 if more than half of the sub-queries sum to over half their count, the first
    /// sub-query's value on an exact tie, 0 otherwise.
    MajorityOf { queries: Vec<Query> },
    /// A leaf-level query applied to leaf `index`.
    Component { index: usize, query: Box<Query> },
    /// A leaf-level query applied to copy `copy` of a power leaf.
    Copy { copy: usize, query: Box<Query> },
}

enum Site<'q> {
    Constant(&'q Rational),
    Leaf { leaf: usize, copy: usize, query: &'q Query },
    Cross(&'q Query),
}

impl Query {
    pub fn constant(value: Rational) -> Self {
        Query::Constant { value }
    }

    pub fn component(index: usize, query: Query) -> Self {
        Query::Component { index, query: Box::new(query) }
    }

    fn is_leaf_level(&self) -> bool {
        matches!(
            self,
            Query::Constant { .. }
                | Query::PointIndicator { .. }
                | Query::GraphIndicator { .. }
                | Query::WeightedPoints { .. }
                | Query::TernaryEncoding { .. }
                | Query::BoundaryStraddle { .. }
                | Query::CompiledDirection { .. }
                | Query::MajorityOf { .. }
        )
    }

    /// The same query on a copy of the model whose leaves start at `offset`.
    pub fn relocate(&self, offset: usize) -> Query {
        match self {
            Query::Constant { .. } => self.clone(),
            Query::Component { index, query } => Query::Component { index: index + offset, query: query.clone() },
            Query::DiagonalMix { label_leaf, probe, coin, copy, coefficient } => Query::DiagonalMix {
                label_leaf: label_leaf + offset,
                probe: *probe,
                coin: coin + offset,
                copy: *copy,
                coefficient: coefficient.clone(),
            },
            Query::CoinProjection { coin, copy } => Query::CoinProjection { coin: coin + offset, copy: *copy },
            other => Query::component(offset, other.clone()),
        }
    }

    fn site(&self, model: &Model) -> Result<Site<'_>, QueryError> {
        match self {
            Query::Constant { value } => Ok(Site::Constant(value)),
            Query::Component { index, query } => {
                let leaf = model.leaf(*index)?;
                match &**query {
                    Query::Copy { copy, query } if query.is_leaf_level() => {
                        Ok(Site::Leaf { leaf: *index, copy: *copy, query })
                    }
                    q if q.is_leaf_level() => Ok(Site::Leaf { leaf: *index, copy: 0, query: q }),
                    _ => mismatch(format!("component {index} ({leaf}) needs a leaf-level query")),
                }
            }
            Query::Copy { copy, query } if model.is_leaf() && query.is_leaf_level() => {
                Ok(Site::Leaf { leaf: 0, copy: *copy, query })
            }
            Query::DiagonalMix { .. } | Query::CoinProjection { .. } => Ok(Site::Cross(self)),
            q if q.is_leaf_level() && model.is_leaf() => Ok(Site::Leaf { leaf: 0, copy: 0, query: q }),
            _ => mismatch(format!("query cannot be placed on {model}")),
        }
    }

    /// Leaves whose distribution the query's expectation depends on.
    pub fn touched_leaves(&self, model: &Model) -> Result<Vec<usize>, QueryError> {
        Ok(match self.site(model)? {
            Site::Constant(_) => Vec::new(),
            Site::Leaf { leaf, .. } => vec![leaf],
            Site::Cross(Query::DiagonalMix { label_leaf, coin, .. }) => vec![*label_leaf, *coin],
            Site::Cross(Query::CoinProjection { coin, .. }) => vec![*coin],
            Site::Cross(_) => Vec::new(),
        })
    }

    /// Checks that the query is well formed for `model` and maps into `[0, 1]`.
    pub fn validate(&self, model: &Model) -> Result<(), QueryError> {
        let unit_range = |r: &Rational, what: &str| {
            if r < &Rational::zero() || r > &Rational::one() {
                Err(QueryError::Invalid(format!("{what} {r} outside [0, 1]")))
            } else {
                Ok(())
            }
        };
        match self.site(model)? {
            Site::Constant(v) => unit_range(v, "constant"),
            Site::Leaf { leaf, copy, query } => {
                let leaf_model = model.leaf(leaf)?;
                if copy >= leaf_model.copies() {
                    return mismatch(format!("copy {copy} of leaf {leaf} does not exist"));
                }
                validate_leaf_query(query, leaf_model, &unit_range)
            }
            Site::Cross(Query::CoinProjection { coin, copy }) => {
                let c = model.leaf(*coin)?;
                if c.outcome_count().is_none() || *copy >= c.copies() {
                    return mismatch(format!("leaf {coin} copy {copy} is not a coin"));
                }
                Ok(())
            }
            Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, copy, coefficient }) => {
                let l = model.leaf(*label_leaf)?;
                if !l.is_classification() || l.point_count().is_none_or(|n| *probe >= n) {
                    return mismatch(format!("leaf {label_leaf} cannot host probe {probe}"));
                }
                let c = model.leaf(*coin)?;
                if c.outcome_count().is_none() || *copy >= c.copies() || coin == label_leaf {
                    return mismatch(format!("leaf {coin} copy {copy} is not a coin"));
                }
                unit_range(coefficient, "coefficient")
            }
            Site::Cross(_) => mismatch("unsupported query"),
        }
    }
}

fn validate_leaf_query(
    q: &Query,
    leaf: &Model,
    unit_range: &dyn Fn(&Rational, &str) -> Result<(), QueryError>,
) -> Result<(), QueryError> {
    let points = leaf.point_count();
    let need_points = |what: &str| -> Result<u64, QueryError> {
        points.ok_or_else(|| QueryError::UniverseMismatch(format!("{what} needs a classification leaf, got {leaf}")))
    };
    match q {
        Query::Constant { value } => unit_range(value, "constant"),
        Query::PointIndicator { point, .. } => {
            if *point >= need_points("point indicator")? {
                return mismatch(format!("point {point} outside Y"));
            }
            Ok(())
        }
        Query::GraphIndicator { table } => {
            if table.len() as u64 != need_points("graph indicator")? {
                return mismatch(format!("label table has length {}", table.len()));
            }
            Ok(())
        }
        Query::WeightedPoints { entries } => {
            let n = need_points("weighted points")?;
            let mut seen = std::collections::HashSet::new();
            for e in entries {
                if e.point >= n || !seen.insert((e.point, e.label)) {
                    return mismatch(format!("bad or repeated entry ({}, {})", e.point, e.label));
                }
                unit_range(&e.weight, "weight")?;
            }
            Ok(())
        }
        Query::TernaryEncoding { points: list } => {
            let n = need_points("ternary encoding")?;
            let mut seen = std::collections::HashSet::new();
            if list.iter().any(|&y| y >= n || !seen.insert(y)) {
                return mismatch("ternary encoding points must be distinct points of Y");
            }
            Ok(())
        }
        Query::BoundaryStraddle { point, level } => {
            if *point >= need_points("boundary straddle")? {
                return mismatch(format!("point {point} outside Y"));
            }
            unit_range(level, "level")
        }
        Query::CompiledDirection { direction, lower, upper } => {
            if leaf.gaussian_dim() != Some(direction.len()) {
                return mismatch("direction length must match the gaussian dimension");
            }
            if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                return Err(QueryError::Invalid("compiled direction needs finite lower < upper".into()));
            }
            Ok(())
        }
        Query::MajorityOf { queries } => {
            if queries.is_empty() {
                return Err(QueryError::Invalid("majority of an empty list".into()));
            }
            queries.iter().try_for_each(|sub| validate_leaf_query(sub, leaf, unit_range))
        }
        _ => mismatch("not a leaf-level query"),
    }
}

fn ternary_weight(l: usize) -> Rational {
    Rational::new(BigInt::from(2), num_traits::pow(BigInt::from(3), l + 1))
}

/// `sum_l 2 p_l / 3^(l+1)`, accumulated over a common denominator with one final reduction.
fn ternary_mean(probs: impl Iterator<Item = Rational>) -> Rational {
    let probs: Vec<Rational> = probs.collect();
    let den = probs.iter().fold(BigInt::one(), |acc, p| num_integer::Integer::lcm(&acc, p.denom()));
    let three = BigInt::from(3);
    let mut acc = BigInt::zero();
    for p in &probs {
        acc = acc * &three + p.numer() * (&den / p.denom());
    }
    Rational::new(acc * 2, den * num_traits::pow(three, probs.len()))
}

fn bool_value(b: bool) -> Value {
    Value::Exact(if b { Rational::one() } else { Rational::zero() })
}

/// Value of a leaf-level query on one unit sample of a leaf.
pub fn eval_unit(q: &Query, sample: &Sample) -> Result<Value, QueryError> {
    let labeled = || match sample {
        Sample::Labeled { point, label } => Ok((*point, *label)),
        _ => mismatch("expected a labeled sample"),
    };
    Ok(match q {
        Query::Constant { value } => Value::Exact(value.clone()),
        Query::PointIndicator { point, label } => bool_value(labeled()? == (*point, *label)),
        Query::GraphIndicator { table } => {
            let (y, z) = labeled()?;
            if y >= table.len() as u64 {
                return mismatch("point outside label table");
            }
            bool_value(table.get(y as usize) == z)
        }
        Query::WeightedPoints { entries } => {
            let (y, z) = labeled()?;
            Value::Exact(
                entries.iter().find(|e| e.point == y && e.label == z).map_or_else(Rational::zero, |e| e.weight.clone()),
            )
        }
        Query::TernaryEncoding { points } => {
            let (y, z) = labeled()?;
            Value::Exact(match points.iter().position(|&p| p == y) {
                Some(l) if z => ternary_weight(l),
                _ => Rational::zero(),
            })
        }
        Query::BoundaryStraddle { point, level } => {
            let (y, z) = labeled()?;
            if y == *point {
                bool_value(z)
            } else {
                Value::Exact(level.clone())
            }
        }
        Query::CompiledDirection { direction, lower, upper } => {
            let Sample::Real(x) = sample else { return mismatch("expected a real sample") };
            let dot: f64 = direction.iter().zip(x).map(|(a, b)| a * b).sum();
            Value::Real(((dot - lower) / (upper - lower)).clamp(0.0, 1.0))
        }
        Query::MajorityOf { queries } => {
            let values = queries.iter().map(|sub| eval_unit(sub, sample)).collect::<Result<Vec<_>, _>>()?;
            majority(&values)
        }
        _ => return mismatch("not a leaf-level query"),
    })
}

fn majority(values: &[Value]) -> Value {
    let total = values.iter().fold(Value::zero(), |acc, v| acc.add(v));
    let twice = total.scale(&int(2));
    let k = values.len() as f64;
    let cmp = match &twice {
        Value::Exact(t) => t.cmp(&int(values.len() as i64)),
        Value::Real(t) => t.partial_cmp(&k).unwrap_or(std::cmp::Ordering::Less),
    };
    match cmp {
        std::cmp::Ordering::Greater => bool_value(true),
        std::cmp::Ordering::Equal => values[0].clone(),
        std::cmp::Ordering::Less => bool_value(false),
    }
}

fn unit_of(leaf: &Model, sample: &Sample, copy: usize) -> Result<Sample, QueryError> {
    let units = leaf.unit_samples(sample).ok_or_else(|| QueryError::UniverseMismatch("bad leaf sample".into()))?;
    units.into_iter().nth(copy).ok_or_else(|| QueryError::UniverseMismatch(format!("no copy {copy}")))
}

/// Value of `q` at a universe point given by a per-leaf sample accessor.
pub fn evaluate_with(
    q: &Query,
    model: &Model,
    leaf_sample: &dyn Fn(usize) -> Result<Sample, QueryError>,
) -> Result<Value, QueryError> {
    match q.site(model)? {
        Site::Constant(v) => Ok(Value::Exact(v.clone())),
        Site::Leaf { leaf, copy, query } => {
            let unit = unit_of(model.leaf(leaf)?, &leaf_sample(leaf)?, copy)?;
            eval_unit(query, &unit)
        }
        Site::Cross(Query::CoinProjection { coin, copy }) => {
            let unit = unit_of(model.leaf(*coin)?, &leaf_sample(*coin)?, *copy)?;
            Ok(bool_value(unit == Sample::Outcome(1)))
        }
        Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, copy, coefficient }) => {
            let Sample::Labeled { point, label } = unit_of(model.leaf(*label_leaf)?, &leaf_sample(*label_leaf)?, 0)? else {
                return mismatch("expected a labeled sample");
            };
            if point == *probe {
                Ok(Value::Exact(if label { coefficient.clone() } else { Rational::zero() }))
            } else {
                let unit = unit_of(model.leaf(*coin)?, &leaf_sample(*coin)?, *copy)?;
                Ok(bool_value(unit == Sample::Outcome(1)))
            }
        }
        Site::Cross(_) => mismatch("unsupported query"),
    }
}

/// Value of `q` at a materialized universe point.
pub fn evaluate(q: &Query, model: &Model, x: &Sample) -> Result<Value, QueryError> {
    if !model.contains(x) {
        return mismatch("sample is not in the universe");
    }
    let single = model.is_leaf();
    evaluate_with(q, model, &|leaf| match (single, x) {
        (true, s) => Ok(s.clone()),
        (false, Sample::Tuple(parts)) => Ok(parts[leaf].clone()),
        _ => mismatch("product sample expected"),
    })
}

/// Probability that the label of `y` is 1.
pub fn p_one(view: &LabelView, y: u64) -> Rational {
    let bit = |b: bool| if b { Rational::one() } else { Rational::zero() };
    match view {
        LabelView::Table(t) => bit(t.get(y as usize)),
        LabelView::Knowledge(k) => {
            if k.known.get(y as usize) {
                bit(k.value.get(y as usize))
            } else {
                half()
            }
        }
        LabelView::Sparse(seen) => seen.get(&y).map_or_else(half, |&z| bit(z)),
        LabelView::Probabilities(p) => p[y as usize].clone(),
    }
}

fn p_label(view: &LabelView, y: u64, z: bool) -> Rational {
    let p = p_one(view, y);
    if z {
        p
    } else {
        Rational::one() - p
    }
}

fn count_ones(words: impl Iterator<Item = u64>) -> u64 {
    words.map(|w| w.count_ones() as u64).sum()
}

/// Twice the expected number of points where the label agrees with `table`.
fn doubled_agreement(view: &LabelView, table: &F2Vector) -> Option<BigInt> {
    let n = table.len();
    let tail = |i: usize, w: u64| -> u64 {
        let last = n.div_ceil(64) - 1;
        if i == last && !n.is_multiple_of(64) {
            w & ((1u64 << (n % 64)) - 1)
        } else {
            w
        }
    };
    match view {
        LabelView::Table(h) => {
            let agree = count_ones(h.words().iter().zip(table.words()).enumerate().map(|(i, (a, b))| tail(i, !(a ^ b))));
            Some(BigInt::from(2 * agree))
        }
        LabelView::Knowledge(k) => {
            let known = k.known.weight() as u64;
            let agree = count_ones(
                k.known
                    .words()
                    .iter()
                    .zip(k.value.words())
                    .zip(table.words())
                    .enumerate()
                    .map(|(i, ((kn, v), t))| tail(i, kn & !(v ^ t))),
            );
            Some(BigInt::from(2 * agree + (n as u64 - known)))
        }
        LabelView::Sparse(seen) => {
            let agree = seen.iter().filter(|(&y, &z)| table.get(y as usize) == z).count() as u64;
            Some(BigInt::from(2 * agree + (n as u64 - seen.len() as u64)))
        }
        LabelView::Probabilities(_) => None,
    }
}

fn labels_expectation(q: &Query, view: &LabelView, n: u64) -> Result<Rational, QueryError> {
    let inv_n = Rational::new(BigInt::one(), BigInt::from(n));
    Ok(match q {
        Query::Constant { value } => value.clone(),
        Query::PointIndicator { point, label } => p_label(view, *point, *label) * inv_n,
        Query::GraphIndicator { table } => match doubled_agreement(view, table) {
            Some(twice) => Rational::new(twice, BigInt::from(2 * n)),
            None => (0..n).map(|y| p_label(view, y, table.get(y as usize))).sum::<Rational>() * inv_n,
        },
        Query::WeightedPoints { entries } => {
            entries.iter().map(|e| &e.weight * p_label(view, e.point, e.label)).sum::<Rational>() * inv_n
        }
        Query::TernaryEncoding { points } => ternary_mean(points.iter().map(|&y| p_one(view, y))) * inv_n,
        Query::BoundaryStraddle { point, level } => {
            (level * int(n as i64 - 1) + p_one(view, *point)) * inv_n
        }
        other => {
            let mut total = Rational::zero();
            for y in 0..n {
                let p1 = p_one(view, y);
                for (z, pz) in [(false, Rational::one() - &p1), (true, p1.clone())] {
                    if pz.is_zero() {
                        continue;
                    }
                    let v = eval_unit(other, &Sample::Labeled { point: y, label: z })?;
                    total += pz * v.to_rational();
                }
            }
            total * inv_n
        }
    })
}

fn joint_expectation(q: &Query, weights: &[f64]) -> Result<f64, QueryError> {
    let w = |y: u64, z: bool| weights[(2 * y + u64::from(z)) as usize];
    Ok(match q {
        Query::Constant { value } => crate::value::to_f64(value),
        Query::PointIndicator { point, label } => w(*point, *label),
        Query::GraphIndicator { table } => (0..table.len() as u64).map(|y| w(y, table.get(y as usize))).sum(),
        Query::WeightedPoints { entries } => {
            entries.iter().map(|e| crate::value::to_f64(&e.weight) * w(e.point, e.label)).sum()
        }
        other => {
            let mut total = 0.0;
            for y in 0..(weights.len() / 2) as u64 {
                for z in [false, true] {
                    let p = w(y, z);
                    if p != 0.0 {
                        total += p * eval_unit(other, &Sample::Labeled { point: y, label: z })?.to_f64();
                    }
                }
            }
            total
        }
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `E[clamp((X - lower) / (upper - lower), 0, 1)]` for `X ~ N(mean, sd^2)`.
pub fn clipped_normal_mean(mean: f64, sd: f64, lower: f64, upper: f64) -> f64 {
    let width = upper - lower;
    if sd <= 0.0 {
        return ((mean - lower) / width).clamp(0.0, 1.0);
    }
    let n = std_normal();
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let inside = (mean - lower) * (n.cdf(b) - n.cdf(a)) + sd * (density(a) - density(b));
    (inside / width + n.sf(b)).clamp(0.0, 1.0)
}

fn leaf_expectation(q: &Query, view: &LeafView, leaf: &Model) -> Result<Value, QueryError> {
    if let Query::Constant { value } = q {
        return Ok(Value::Exact(value.clone()));
    }
    match view {
        LeafView::Labels(lv) => {
            let n = leaf.point_count().ok_or_else(|| QueryError::UniverseMismatch("no point set".into()))?;
            Ok(Value::Exact(labels_expectation(q, lv, n)?))
        }
        LeafView::Joint(w) => Ok(Value::Real(joint_expectation(q, w)?)),
        LeafView::Gaussian { mean, variance } => match q {
            Query::CompiledDirection { direction, lower, upper } => {
                let mu: f64 = direction.iter().zip(mean.iter()).map(|(a, b)| a * b).sum();
                let norm2: f64 = direction.iter().map(|a| a * a).sum();
                Ok(Value::Real(clipped_normal_mean(mu, (norm2 * variance).sqrt(), *lower, *upper)))
            }
            _ => mismatch("gaussian leaves only take compiled-direction queries"),
        },
        LeafView::Outcomes(_) | LeafView::OutcomesReal(_) => mismatch("coin leaves are read with coin projections"),
    }
}

fn heads(view: &LeafView) -> Result<Value, QueryError> {
    match view {
        LeafView::Outcomes(p) if p.len() >= 2 => Ok(Value::Exact(p[1].clone())),
        LeafView::OutcomesReal(p) if p.len() >= 2 => Ok(Value::Real(p[1])),
        _ => mismatch("expected a coin leaf"),
    }
}

/// Exact expectation of `q` under a belief (hypothesis, posterior, proxy, ...).
pub fn expectation(q: &Query, belief: &dyn Belief) -> Result<Value, QueryError> {
    let model = belief.model().clone();
    match q.site(&model)? {
        Site::Constant(v) => Ok(Value::Exact(v.clone())),
        Site::Leaf { leaf, query, .. } => leaf_expectation(query, &belief.leaf_view(leaf)?, model.leaf(leaf)?),
        Site::Cross(Query::CoinProjection { coin, .. }) => heads(&belief.leaf_view(*coin)?),
        Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, coefficient, .. }) => {
            let label_model = model.leaf(*label_leaf)?;
            let n = label_model.point_count().ok_or_else(|| QueryError::UniverseMismatch("no point set".into()))?;
            let p_heads = heads(&belief.leaf_view(*coin)?)?;
            match belief.leaf_view(*label_leaf)? {
                LeafView::Labels(lv) => {
                    let inv_n = Rational::new(BigInt::one(), BigInt::from(n));
                    let at_probe = Value::Exact(coefficient * p_one(&lv, *probe) * &inv_n);
                    Ok(at_probe.add(&p_heads.scale(&(Rational::one() - inv_n))))
                }
                LeafView::Joint(w) => {
                    let (w0, w1) = (w[2 * *probe as usize], w[2 * *probe as usize + 1]);
                    let c = crate::value::to_f64(coefficient);
                    Ok(Value::Real(c * w1 + (1.0 - w0 - w1) * p_heads.to_f64()))
                }
                _ => mismatch("diagonal mix needs a classification leaf"),
            }
        }
        Site::Cross(_) => mismatch("unsupported query"),
    }
}

/// For each atom of `leaf` (outcome `o` of a coin leaf, or `(y, z)` at index `2y + z` of a
/// classification leaf), the expectation of `q` under `belief` conditioned on that atom.
pub fn conditional_expectations(q: &Query, belief: &dyn Belief, leaf: usize) -> Result<Vec<f64>, QueryError> {
    let model = belief.model().clone();
    let leaf_model = model.leaf(leaf)?;
    let atoms = match (leaf_model.outcome_count(), leaf_model.point_count()) {
        (Some(k), _) => k,
        (None, Some(n)) => 2 * n as usize,
        _ => return mismatch("conditional expectations need a finite leaf"),
    };
    let unconditional = || expectation(q, belief).map(|v| vec![v.to_f64(); atoms]);
    match q.site(&model)? {
        Site::Constant(v) => Ok(vec![crate::value::to_f64(v); atoms]),
        Site::Leaf { leaf: l, query, .. } if l == leaf && leaf_model.point_count().is_some() => (0..atoms)
            .map(|a| {
                eval_unit(query, &Sample::Labeled { point: (a / 2) as u64, label: a % 2 == 1 }).map(|v| v.to_f64())
            })
            .collect(),
        Site::Cross(Query::CoinProjection { coin, .. }) if *coin == leaf => {
            Ok((0..atoms).map(|o| if o == 1 { 1.0 } else { 0.0 }).collect())
        }
        Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, coefficient, .. })
            if *coin == leaf || *label_leaf == leaf =>
        {
            let n = model.leaf(*label_leaf)?.point_count().unwrap_or(1) as f64;
            let c = crate::value::to_f64(coefficient);
            if *coin == leaf {
                let p1 = match belief.leaf_view(*label_leaf)? {
                    LeafView::Labels(lv) => crate::value::to_f64(&p_one(&lv, *probe)),
                    LeafView::Joint(w) => {
                        let (w0, w1) = (w[2 * *probe as usize], w[2 * *probe as usize + 1]);
                        if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.5 }
                    }
                    _ => return mismatch("diagonal mix needs a classification leaf"),
                };
                Ok((0..atoms).map(|o| c * p1 / n + (1.0 - 1.0 / n) * if o == 1 { 1.0 } else { 0.0 }).collect())
            } else {
                let heads = heads(&belief.leaf_view(*coin)?)?.to_f64();
                Ok((0..atoms)
                    .map(|a| match ((a / 2) as u64 == *probe, a % 2 == 1) {
                        (true, z) => if z { c } else { 0.0 },
                        (false, _) => heads,
                    })
                    .collect())
            }
        }
        _ => unconditional(),
    }
}

pub fn true_answer(q: &Query, h: &dyn Belief) -> Result<Value, QueryError> {
    expectation(q, h)
}

pub fn posterior_mean(q: &Query, ps: &crate::models::PosteriorState) -> Result<Value, QueryError> {
    expectation(q, ps)
}

/// Atoms `(answer, probability)` of the prior pushforward of a leaf-level query.
fn leaf_prior_atoms(
    q: &Query,
    leaf: &Model,
    resolution: usize,
) -> Result<Vec<(Rational, Rational)>, QueryError> {
    if let Query::Constant { value } = q {
        return Ok(vec![(value.clone(), Rational::one())]);
    }
    let n = leaf.point_count();
    if let (Some(n), Some(k)) = (n, leaf.coefficient_dim()) {
        if k as u32 <= MAX_ENUMERATED_HYPOTHESES.trailing_zeros() {
            // Gray-code walk over all coefficient vectors, updating the label table by XOR.
            let basis: Vec<F2Vector> = (0..k)
                .map(|t| leaf.label_table(&F2Vector::unit(k, t)).unwrap_or_else(|| F2Vector::zeros(n as usize)))
                .collect();
            let mut table = F2Vector::zeros(n as usize);
            let weight = Rational::new(BigInt::one(), BigInt::one() << k);
            let mut atoms = Vec::with_capacity(1 << k);
            for step in 0u64..(1u64 << k) {
                if step > 0 {
                    table.xor_assign(&basis[step.trailing_zeros() as usize]);
                }
                let view = LabelView::Table(Arc::new(table.clone()));
                atoms.push((labels_expectation(q, &view, n)?, weight.clone()));
            }
            return Ok(atoms);
        }
    }
    if let (Some(n), Model::IndependentClassification { .. }) = (n, leaf.unit()) {
        if n <= MAX_ENUMERATED_HYPOTHESES.trailing_zeros() as u64 {
            let weight = Rational::new(BigInt::one(), BigInt::one() << n);
            return (0u64..(1u64 << n))
                .map(|bits| {
                    let view = LabelView::Table(Arc::new(F2Vector::from_u64(n as usize, bits)));
                    Ok((labels_expectation(q, &view, n)?, weight.clone()))
                })
                .collect();
        }
    }
    if n.is_some() {
        // Too many hypotheses to enumerate: a fixed-seed sample of `resolution` of them.
        let seed = fnv1a(serde_json::to_string(q).unwrap_or_default().as_bytes()) ^ fnv1a(leaf.to_string().as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Rational::new(BigInt::one(), BigInt::from(resolution));
        return (0..resolution)
            .map(|_| {
                let h = LeafHypothesis::draw(leaf, &mut rng);
                let table = h.label_table().cloned().unwrap_or_else(|| Arc::new(F2Vector::zeros(n.unwrap_or(0) as usize)));
                Ok((labels_expectation(q, &LabelView::Table(table), n.unwrap_or(0))?, weight.clone()))
            })
            .collect();
    }
    if let (Model::Gaussian { variance, .. }, Query::CompiledDirection { direction, lower, upper }) = (leaf.unit(), q) {
        let norm2: f64 = direction.iter().map(|a| a * a).sum();
        let spread = (norm2 * variance).sqrt();
        let normal = std_normal();
        let weight = Rational::new(BigInt::one(), BigInt::from(resolution));
        return Ok((0..resolution)
            .map(|j| {
                let u = (j as f64 + 0.5) / resolution as f64;
                let center = spread * normal.inverse_cdf(u);
                let answer = clipped_normal_mean(center, norm2.sqrt(), *lower, *upper);
                (from_f64(answer), weight.clone())
            })
            .collect());
    }
    mismatch(format!("no prior answer distribution for this query on {leaf}"))
}

/// Prior distribution of the heads probability of a coin-like leaf.
fn coin_prior_atoms(leaf: &Model, resolution: usize) -> Result<Vec<(Rational, Rational)>, QueryError> {
    match leaf.unit() {
        Model::BiasedCoin { bias } => Ok(vec![(half() - bias, half()), (half() + bias, half())]),
        Model::Uniform { outcomes } => {
            // Marginal of one coordinate is Beta(1, k - 1): CDF 1 - (1 - x)^(k - 1).
            let r = resolution as i64;
            let cdf = |j: i64| {
                let x = Rational::new(BigInt::from(j), BigInt::from(r));
                Rational::one() - num_traits::pow(Rational::one() - x, *outcomes as usize - 1)
            };
            Ok((0..r)
                .map(|j| (Rational::new(BigInt::from(2 * j + 1), BigInt::from(2 * r)), cdf(j + 1) - cdf(j)))
                .filter(|(_, w)| !w.is_zero())
                .collect())
        }
        _ => mismatch("expected a coin leaf"),
    }
}

/// Pushforward of the prior through `h -> true_answer(q, h)`: exact enumeration when the
/// touched leaf has at most `2^20` hypotheses, otherwise a `resolution`-point grid.
pub fn prior_answer_distribution(
    q: &Query,
    model: &Model,
    resolution: usize,
) -> Result<DiscreteDistribution, QueryError> {
    let resolution = resolution.max(1);
    let atoms = match q.site(model)? {
        Site::Constant(v) => vec![(v.clone(), Rational::one())],
        Site::Leaf { leaf, query, .. } => leaf_prior_atoms(query, model.leaf(leaf)?, resolution)?,
        Site::Cross(Query::CoinProjection { coin, .. }) => coin_prior_atoms(model.leaf(*coin)?, resolution)?,
        Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, coefficient, .. }) => {
            let label_model = model.leaf(*label_leaf)?;
            let n = label_model.point_count().unwrap_or(1);
            let p_one = match label_model.functional(*probe) {
                Some(f) if f.is_zero() => Rational::zero(),
                _ => half(),
            };
            let inv_n = Rational::new(BigInt::one(), BigInt::from(n));
            let rest = Rational::one() - &inv_n;
            let mut atoms = Vec::new();
            for (p, w) in coin_prior_atoms(model.leaf(*coin)?, resolution)? {
                let base = &rest * &p;
                for (label, pw) in [(true, p_one.clone()), (false, Rational::one() - &p_one)] {
                    if pw.is_zero() {
                        continue;
                    }
                    let pos = if label { &base + coefficient * &inv_n } else { base.clone() };
                    atoms.push((pos, &w * pw));
                }
            }
            atoms
        }
        Site::Cross(_) => return mismatch("unsupported query"),
    };
    let clamped = atoms
        .into_iter()
        .filter(|(_, w)| !w.is_zero())
        .map(|(p, w)| (p.clamp(Rational::zero(), Rational::one()), w))
        .collect();
    Ok(DiscreteDistribution::new(clamped)?)
}

/// Canonical text naming everything the prior answer distribution of `q` depends on.
/// Queries with equal keys have equal prior answer distributions.
pub fn prior_key(q: &Query, model: &Model) -> Result<String, QueryError> {
    Ok(match q.site(model)? {
        Site::Constant(v) => format!("const:{v}"),
        Site::Leaf { leaf, query, .. } => {
            format!("leaf:{}:{}", model.leaf(leaf)?, serde_json::to_string(query).unwrap_or_default())
        }
        Site::Cross(Query::CoinProjection { coin, .. }) => format!("coin:{}", model.leaf(*coin)?),
        Site::Cross(Query::DiagonalMix { label_leaf, probe, coin, coefficient, .. }) => {
            let label_model = model.leaf(*label_leaf)?;
            let zero_functional = label_model.functional(*probe).is_some_and(|f| f.is_zero());
            format!(
                "mix:{}:{}:{}:{}",
                label_model.point_count().unwrap_or(0),
                zero_functional,
                coefficient,
                model.leaf(*coin)?
            )
        }
        Site::Cross(_) => return mismatch("unsupported query"),
    })
}

/// Draws a random `WeightedPoints` query on a classification leaf.
pub fn random_weighted_points(points: u64, entries: usize, rng: &mut impl Rng) -> Query {
    let mut chosen = std::collections::BTreeMap::new();
    while chosen.len() < entries.min(2 * points as usize) {
        let key = (rng.random_range(0..points), rng.random::<bool>());
        let weight = Rational::new(BigInt::from(rng.random_range(0..=16u32)), BigInt::from(16));
        chosen.insert(key, weight);
    }
    Query::WeightedPoints {
        entries: chosen.into_iter().map(|((point, label), weight)| WeightedPoint { point, label, weight }).collect(),
    }
}

/// Draws a random leaf-level query on a classification leaf with `points` points.
pub fn random_query(points: u64, rng: &mut impl Rng) -> Query {
    let table = |rng: &mut dyn rand::RngCore| {
        let mut t = F2Vector::zeros(points as usize);
        for y in 0..points as usize {
            t.set(y, rng.random::<bool>());
        }
        t
    };
    let sixteenths = |rng: &mut dyn rand::RngCore| Rational::new(BigInt::from(rng.random_range(0..=16u32)), BigInt::from(16));
    match rng.random_range(0..7u8) {
        0 => Query::PointIndicator { point: rng.random_range(0..points), label: rng.random() },
        1 => Query::GraphIndicator { table: table(rng) },
        2 => {
            let entries = rng.random_range(1..=(2 * points as usize).min(24));
            random_weighted_points(points, entries, rng)
        }
        3 => {
            let mut pts: Vec<u64> = (0..points).collect();
            let keep = rng.random_range(1..=pts.len().min(6));
            for i in 0..keep {
                let j = rng.random_range(i..pts.len());
                pts.swap(i, j);
            }
            pts.truncate(keep);
            Query::TernaryEncoding { points: pts }
        }
        4 => Query::BoundaryStraddle { point: rng.random_range(0..points), level: sixteenths(rng) },
        5 => Query::MajorityOf {
            queries: (0..rng.random_range(1..=4))
                .map(|_| {
                    if rng.random::<bool>() {
                        Query::GraphIndicator { table: table(rng) }
                    } else {
                        Query::PointIndicator { point: rng.random_range(0..points), label: rng.random() }
                    }
                })
                .collect(),
        },
        _ => Query::Constant { value: sixteenths(rng) },
    }
}

/// `as f64` for small exact values used in reports.
pub fn approx(v: &Value) -> f64 {
    match v {
        Value::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
        Value::Real(x) => *x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Hypothesis, PosteriorState};
    use crate::value::ratio;

    fn lc(m: u32) -> Arc<Model> {
        Arc::new(Model::linear(m).unwrap())
    }

    #[test]
    fn pointwise_values() {
        let model = lc(2);
        let table = F2Vector::parse("0110").unwrap();
        let g = Query::GraphIndicator { table: table.clone() };
        assert_eq!(evaluate(&g, &model, &Sample::Labeled { point: 1, label: true }).unwrap(), Value::Exact(int(1)));
        assert_eq!(evaluate(&g, &model, &Sample::Labeled { point: 0, label: true }).unwrap(), Value::zero());
        let t = Query::TernaryEncoding { points: vec![0, 2] };
        assert_eq!(evaluate(&t, &model, &Sample::Labeled { point: 2, label: true }).unwrap(), Value::Exact(ratio(2, 9)));
        assert_eq!(evaluate(&t, &model, &Sample::Labeled { point: 2, label: false }).unwrap(), Value::zero());
    }

    #[test]
    fn diagonal_mix_pointwise() {
        let coins = Model::tensor_power(Model::power(Model::uniform(2).unwrap(), 8).unwrap(), 2).unwrap();
        let model = Model::product(Model::linear(2).unwrap(), coins);
        let c = ratio(3, 17);
        let q = Query::DiagonalMix { label_leaf: 0, probe: 1, coin: 2, copy: 0, coefficient: c.clone() };
        q.validate(&model).unwrap();
        let flips = Sample::Outcomes(vec![0, 1, 1, 1, 1, 1, 1, 1]);
        let on = Sample::Tuple(vec![Sample::Labeled { point: 1, label: true }, flips.clone(), flips.clone()]);
        assert_eq!(evaluate(&q, &model, &on).unwrap(), Value::Exact(c));
        let off = Sample::Tuple(vec![Sample::Labeled { point: 3, label: true }, flips.clone(), flips]);
        assert_eq!(evaluate(&q, &model, &off).unwrap(), Value::zero());
    }

    #[test]
    fn graph_indicator_truth() {
        let model = lc(3);
        let a = LeafHypothesis::from_coefficients(&model, F2Vector::parse("1010").unwrap());
        let b = LeafHypothesis::from_coefficients(&model, F2Vector::parse("0110").unwrap());
        let q = Query::GraphIndicator { table: (**a.label_table().unwrap()).clone() };
        let ha = Hypothesis::from_leaves(model.clone(), vec![a]).unwrap();
        let hb = Hypothesis::from_leaves(model.clone(), vec![b]).unwrap();
        assert_eq!(true_answer(&q, &ha).unwrap(), Value::Exact(int(1)));
        assert_eq!(true_answer(&q, &hb).unwrap(), Value::Exact(half()));
    }

    #[test]
    fn prior_means() {
        let model = lc(3);
        let prior = PosteriorState::new(model.clone());
        let p = Query::PointIndicator { point: 5, label: true };
        assert_eq!(posterior_mean(&p, &prior).unwrap(), Value::Exact(ratio(1, 16)));
        let coin = Arc::new(Model::uniform(2).unwrap());
        let cp = Query::CoinProjection { coin: 0, copy: 0 };
        assert_eq!(posterior_mean(&cp, &PosteriorState::new(coin)).unwrap(), Value::Exact(half()));
    }

    #[test]
    fn lc2_graph_prior_distribution() {
        let model = lc(2);
        let q = Query::GraphIndicator { table: F2Vector::parse("0110").unwrap() };
        let d = prior_answer_distribution(&q, &model, 16).unwrap();
        // The complement table is also affine and agrees nowhere.
        assert_eq!(d.atoms(), &[(int(0), ratio(1, 8)), (half(), ratio(3, 4)), (int(1), ratio(1, 8))]);
        let prior = PosteriorState::new(model);
        assert_eq!(posterior_mean(&q, &prior).unwrap(), Value::Exact(half()));
    }

    #[test]
    fn biased_coin_prior_distribution() {
        let model = Model::biased_coin(ratio(1, 10)).unwrap();
        let d = prior_answer_distribution(&Query::CoinProjection { coin: 0, copy: 0 }, &model, 8).unwrap();
        assert_eq!(d.atoms(), &[(ratio(2, 5), half()), (ratio(3, 5), half())]);
    }

    #[test]
    fn clipped_normal_limits() {
        assert!((clipped_normal_mean(0.0, 1.0, -3.0, 3.0) - 0.5).abs() < 1e-12);
        assert!((clipped_normal_mean(0.3, 0.0, -1.0, 1.0) - 0.65).abs() < 1e-12);
        assert!(clipped_normal_mean(50.0, 1.0, -3.0, 3.0) > 1.0 - 1e-12);
        let wide = clipped_normal_mean(0.7, 1.0, -1000.0, 1000.0);
        assert!((wide - (0.7 + 1000.0) / 2000.0).abs() < 1e-12);
    }

    #[test]
    fn serde_tagged_tree() {
        let q = Query::component(3, Query::BoundaryStraddle { point: 2, level: ratio(1, 3) });
        let text = serde_json::to_string(&q).unwrap();
        assert!(text.contains("\"type\":\"component\""));
        assert_eq!(serde_json::from_str::<Query>(&text).unwrap(), q);
    }

    #[test]
    fn validation_rejects_misfits() {
        let model = lc(2);
        assert!(Query::PointIndicator { point: 4, label: true }.validate(&model).is_err());
        assert!(Query::GraphIndicator { table: F2Vector::zeros(3) }.validate(&model).is_err());
        assert!(Query::CoinProjection { coin: 0, copy: 0 }.validate(&model).is_err());
        assert!(Query::constant(ratio(3, 2)).validate(&model).is_err());
        assert!(Query::PointIndicator { point: 3, label: true }.validate(&model).is_ok());
    }
}
