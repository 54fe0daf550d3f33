//! Analyst strategies. Each analyst is a state machine: the engine asks for the next query,
//! hands back the curator's answer, and repeats until the analyst stops or the budget ends.

use std::collections::VecDeque;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::curators::{CuratorSpec, PartitionMemo, PmwFallback};
use crate::f2_linalg::{AffineSystem, F2Error, F2Vector};
use crate::models::{Belief, Hypothesis, LeafView, Model, ModelError, PointStatus};
use crate::partition::{round_to, Partition};
use crate::queries::{random_weighted_points, Query, QueryError};
use crate::seeds::TrialRng;
use crate::value::{int, opt_rational_serde, ratio, to_f64, Rational, Value};

#[derive(Debug, Error)]
pub enum AnalystError {
    #[error("analyst does not fit the model: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Curator(#[from] crate::curators::CuratorError),
}

fn incompatible<T>(msg: impl Into<String>) -> Result<T, AnalystError> {
    Err(AnalystError::Incompatible(msg.into()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Centers windows at the prior center.
    #[default]
    Prior,
    /// Centers windows at the true center (the frequentist analyst knows the distribution).
    Oracle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// Counts answers below one half.
    #[default]
    Half,
    /// Counts answers below one quarter and above three quarters separately.
    Quarters,
}

fn default_beta() -> f64 {
    300.0
}

fn default_entries() -> usize {
    8
}

/// Analyst strategy and its parameters, as read from a game config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AnalystSpec {
    /// A fixed list of queries.
    StaticBatch { queries: Vec<Query> },
    /// One coin projection per leaf, in leaf order.
    CoinSweep,
    /// Independent random weighted-point queries chosen up front.
    RandomWeighted {
        count: usize,
        #[serde(default = "default_entries")]
        entries: usize,
    },
    Boosting {
        queries: usize,
        #[serde(default)]
        leaf: usize,
        /// Fraction of exploratory queries that are random weighted-point queries instead of
        /// random graph indicators.
        #[serde(default)]
        random_fraction: f64,
    },
    GaussianCompile {
        #[serde(default)]
        reference: Reference,
    },
    AffineSpan {
        #[serde(default)]
        leaf: usize,
    },
    Ternary {
        #[serde(default)]
        leaf: usize,
    },
    Averaging {
        repeats: usize,
        #[serde(default)]
        leaf: usize,
    },
    ExploreExploit {
        /// Queries per point; defaults to `ceil(beta * n^2 * ln(n + 1))`.
        #[serde(default)]
        repeats: Option<usize>,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        counting: Counting,
        /// Defaults to one ladder step per unit of knowledge.
        #[serde(default, with = "opt_rational_serde")]
        coefficient: Option<Rational>,
    },
    /// Runs the inner strategy on every copy of a tensor power, one copy after another.
    Repeated { inner: Box<AnalystSpec> },
}

/// What an analyst knows before the game starts.
#[derive(Clone)]
pub struct AnalystContext {
    pub model: Arc<Model>,
    pub n: usize,
    pub epsilon: Rational,
    pub curator: CuratorSpec,
    pub memo: Arc<PartitionMemo>,
    /// The drawn hypothesis, for strategies that are explicitly frequentist.
    pub oracle: Option<Arc<Hypothesis>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AttackReport {
    pub strategy: String,
    pub queries_used: usize,
    pub applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exploit_query: Option<Query>,
    #[serde(skip_serializing_if = "Option::is_none", with = "opt_rational_serde")]
    pub predicted_inaccuracy: Option<Rational>,
    /// Per point of `knowledge_leaf`: `0`, `1` or `?`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge_map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge_leaf: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub trait Analyst: Send {
    /// The next query, or `None` once the strategy is finished.
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError>;
    /// The curator's answer to the last query.
    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError>;
    fn report(&self) -> AttackReport;
}

pub fn marks_to_string(marks: &[PointStatus]) -> String {
    marks
        .iter()
        .map(|m| match m {
            PointStatus::Known(false) => '0',
            PointStatus::Known(true) => '1',
            PointStatus::Unknown => '?',
        })
        .collect()
}

/// Explore repeats per point for `n` samples.
pub fn default_repeats(beta: f64, n: usize) -> usize {
    let n = n as f64;
    (beta * n * n * (n + 1.0).ln()).ceil().max(1.0) as usize
}

impl AnalystSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AnalystSpec::StaticBatch { .. } => "static_batch",
            AnalystSpec::CoinSweep => "coin_sweep",
            AnalystSpec::RandomWeighted { .. } => "random_weighted",
            AnalystSpec::Boosting { .. } => "boosting",
            AnalystSpec::GaussianCompile { .. } => "gaussian_compile",
            AnalystSpec::AffineSpan { .. } => "affine_span",
            AnalystSpec::Ternary { .. } => "ternary",
            AnalystSpec::Averaging { .. } => "averaging",
            AnalystSpec::ExploreExploit { .. } => "explore_exploit",
            AnalystSpec::Repeated { .. } => "repeated",
        }
    }

    /// Most queries the strategy can issue on `model` with `n` samples.
    pub fn required_queries(&self, model: &Model, n: usize) -> Result<usize, AnalystError> {
        Ok(match self {
            AnalystSpec::StaticBatch { queries } => queries.len(),
            AnalystSpec::CoinSweep => model.leaf_count(),
            AnalystSpec::RandomWeighted { count, .. } => *count,
            AnalystSpec::Boosting { queries, .. } => *queries,
            AnalystSpec::GaussianCompile { .. } => gaussian_leaf_dim(model)? + 1,
            AnalystSpec::AffineSpan { leaf } => model.leaf(*leaf)?.coefficient_dim().unwrap_or(1) + 2,
            AnalystSpec::Ternary { .. } => 2,
            AnalystSpec::Averaging { repeats, leaf } => {
                *repeats * model.leaf(*leaf)?.point_count().unwrap_or(0) as usize + 1
            }
            AnalystSpec::ExploreExploit { repeats, beta, .. } => {
                let points = model.leaf(0)?.point_count().unwrap_or(0) as usize;
                points * repeats.unwrap_or_else(|| default_repeats(*beta, n)) + 1
            }
            AnalystSpec::Repeated { inner } => {
                let (base, copies) = tensor_power_parts(model)?;
                inner.required_queries(base, n)? * copies
            }
        })
    }
}

fn tensor_power_parts(model: &Model) -> Result<(&Model, usize), AnalystError> {
    match model {
        Model::TensorPower { base, copies } => Ok((base, *copies)),
        _ => incompatible(format!("repeated attack needs a tensor power, got {model}")),
    }
}

fn gaussian_leaf_dim(model: &Model) -> Result<usize, AnalystError> {
    match (model.is_leaf(), model.gaussian_dim()) {
        (true, Some(d)) => Ok(d),
        _ => incompatible(format!("gaussian compile needs a gaussian model, got {model}")),
    }
}

/// Wraps a leaf-level query for `leaf` of `model`.
fn place(model: &Model, leaf: usize, q: Query) -> Query {
    if model.is_leaf() {
        q
    } else {
        Query::component(leaf, q)
    }
}

fn classification_leaf(model: &Model, leaf: usize) -> Result<&Model, AnalystError> {
    let m = model.leaf(leaf)?;
    if !m.is_classification() || m.copies() != 1 {
        return incompatible(format!("leaf {leaf} ({m}) is not a plain classification leaf"));
    }
    Ok(m)
}

pub fn build_analyst(
    spec: &AnalystSpec,
    ctx: &AnalystContext,
    rng: TrialRng,
) -> Result<Box<dyn Analyst>, AnalystError> {
    let model = ctx.model.clone();
    Ok(match spec {
        AnalystSpec::StaticBatch { queries } => {
            for q in queries {
                q.validate(&model)?;
            }
            Box::new(Fixed::new("static_batch", queries.clone()))
        }
        AnalystSpec::CoinSweep => {
            let queries = (0..model.leaf_count()).map(|coin| Query::CoinProjection { coin, copy: 0 }).collect();
            Box::new(Fixed::new("coin_sweep", queries))
        }
        AnalystSpec::RandomWeighted { count, entries } => {
            let mut rng = rng;
            let points = classification_leaf(&model, 0)?.point_count().unwrap_or(1);
            let queries = (0..*count)
                .map(|_| place(&model, 0, random_weighted_points(points, *entries, &mut rng)))
                .collect();
            Box::new(Fixed::new("random_weighted", queries))
        }
        AnalystSpec::Boosting { queries, leaf, random_fraction } => {
            if *queries < 2 {
                return incompatible("boosting needs at least two queries");
            }
            let points = classification_leaf(&model, *leaf)?.point_count().unwrap_or(0);
            Box::new(Boosting {
                model,
                leaf: *leaf,
                points,
                budget: *queries,
                random_fraction: random_fraction.clamp(0.0, 1.0),
                rng,
                issued: 0,
                last: None,
                collected: Vec::new(),
                done: false,
            })
        }
        AnalystSpec::GaussianCompile { reference } => {
            let dim = gaussian_leaf_dim(&model)?;
            let center = match reference {
                Reference::Prior => vec![0.0; dim],
                Reference::Oracle => {
                    let h = ctx.oracle.as_ref().ok_or_else(|| {
                        AnalystError::Incompatible("oracle reference needs the drawn hypothesis".into())
                    })?;
                    match h.leaf_view(0)? {
                        LeafView::Gaussian { mean, .. } => (*mean).clone(),
                        _ => return incompatible("oracle hypothesis is not gaussian"),
                    }
                }
            };
            Box::new(GaussianCompile { dim, center, estimates: Vec::new(), issued: 0, final_issued: false })
        }
        AnalystSpec::AffineSpan { leaf } => Box::new(AffineSpan::new(model, *leaf)?),
        AnalystSpec::Ternary { leaf } => {
            let lm = classification_leaf(&model, *leaf)?;
            let points = lm.point_count().unwrap_or(0);
            if points > 256 {
                return incompatible("ternary readout is limited to 256 points");
            }
            Box::new(Ternary { model, leaf: *leaf, points, stage: 0, pending: None, report: report_for("ternary", *leaf) })
        }
        AnalystSpec::Averaging { repeats, leaf } => {
            let points = classification_leaf(&model, *leaf)?.point_count().unwrap_or(0);
            if *repeats == 0 {
                return incompatible("averaging needs at least one repeat");
            }
            Box::new(Averaging {
                model,
                leaf: *leaf,
                points,
                repeats: *repeats,
                sums: vec![0.0; points as usize],
                issued: 0,
                finished: false,
                report: report_for("averaging", *leaf),
            })
        }
        AnalystSpec::ExploreExploit { repeats, beta, counting, coefficient } => {
            Box::new(ExploreExploit::new(ctx, repeats.unwrap_or_else(|| default_repeats(*beta, ctx.n)), *beta, *counting, coefficient.clone())?)
        }
        AnalystSpec::Repeated { inner } => {
            let (base, copies) = tensor_power_parts(&model)?;
            let base = Arc::new(base.clone());
            let inner_ctx = AnalystContext { model: base.clone(), oracle: None, ..ctx.clone() };
            let mut rng = rng;
            let analysts = (0..copies)
                .map(|_| {
                    let seed = rng.random::<u64>();
                    build_analyst(inner, &inner_ctx, rand::SeedableRng::seed_from_u64(seed))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(Repeated { stride: base.leaf_count(), analysts, current: 0 })
        }
    })
}

fn report_for(strategy: &str, leaf: usize) -> AttackReport {
    AttackReport { strategy: strategy.into(), knowledge_leaf: Some(leaf), ..Default::default() }
}

struct Fixed {
    name: &'static str,
    queries: VecDeque<Query>,
    used: usize,
}

impl Fixed {
    fn new(name: &'static str, queries: Vec<Query>) -> Self {
        Self { name, queries: queries.into(), used: 0 }
    }
}

impl Analyst for Fixed {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        let q = self.queries.pop_front();
        self.used += usize::from(q.is_some());
        Ok(q)
    }

    fn observe(&mut self, _: &Value) -> Result<(), AnalystError> {
        Ok(())
    }

    fn report(&self) -> AttackReport {
        AttackReport { strategy: self.name.into(), queries_used: self.used, applicable: true, ..Default::default() }
    }
}

fn random_table(points: u64, rng: &mut impl Rng) -> F2Vector {
    let mut t = F2Vector::zeros(points as usize);
    for y in 0..points as usize {
        if rng.random::<bool>() {
            t.set(y, true);
        }
    }
    t
}

/// Pointwise majority; ties take the first table's label.
pub fn majority_table(tables: &[F2Vector]) -> Option<F2Vector> {
    let first = tables.first()?;
    let mut out = F2Vector::zeros(first.len());
    for y in 0..first.len() {
        let ones = tables.iter().filter(|t| t.get(y)).count();
        let bit = match (2 * ones).cmp(&tables.len()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => first.get(y),
        };
        out.set(y, bit);
    }
    Some(out)
}

struct Boosting {
    model: Arc<Model>,
    leaf: usize,
    points: u64,
    budget: usize,
    random_fraction: f64,
    rng: TrialRng,
    issued: usize,
    last: Option<F2Vector>,
    collected: Vec<F2Vector>,
    done: bool,
}

impl Analyst for Boosting {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        if self.done {
            return Ok(None);
        }
        self.issued += 1;
        if self.issued == self.budget {
            self.done = true;
            let table = majority_table(&self.collected).unwrap_or_else(|| random_table(self.points, &mut self.rng));
            return Ok(Some(place(&self.model, self.leaf, Query::GraphIndicator { table })));
        }
        if self.rng.random::<f64>() < self.random_fraction {
            self.last = None;
            return Ok(Some(place(&self.model, self.leaf, random_weighted_points(self.points, 8, &mut self.rng))));
        }
        let table = random_table(self.points, &mut self.rng);
        self.last = Some(table.clone());
        Ok(Some(place(&self.model, self.leaf, Query::GraphIndicator { table })))
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        if let Some(t) = self.last.take() {
            if !self.done && answer.to_f64() > 0.5 {
                self.collected.push(t);
            }
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        AttackReport {
            strategy: "boosting".into(),
            queries_used: self.issued,
            applicable: true,
            note: Some(format!("{} tables above one half", self.collected.len())),
            ..Default::default()
        }
    }
}

/// Half-width of the compiled-direction windows.
pub const WINDOW_HALF_WIDTH: f64 = 3.0;

struct GaussianCompile {
    dim: usize,
    center: Vec<f64>,
    estimates: Vec<f64>,
    issued: usize,
    final_issued: bool,
}

impl Analyst for GaussianCompile {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        if self.issued < self.dim {
            let i = self.issued;
            self.issued += 1;
            let mut direction = vec![0.0; self.dim];
            direction[i] = 1.0;
            let c = self.center[i];
            return Ok(Some(Query::CompiledDirection {
                direction,
                lower: c - WINDOW_HALF_WIDTH,
                upper: c + WINDOW_HALF_WIDTH,
            }));
        }
        if self.final_issued {
            return Ok(None);
        }
        self.final_issued = true;
        let scale = 1.0 / (self.dim as f64).sqrt();
        let direction: Vec<f64> = self
            .estimates
            .iter()
            .zip(&self.center)
            .map(|(x, c)| if x >= c { scale } else { -scale })
            .collect();
        let c: f64 = direction.iter().zip(&self.estimates).map(|(a, b)| a * b).sum();
        Ok(Some(Query::CompiledDirection { direction, lower: c - WINDOW_HALF_WIDTH, upper: c + WINDOW_HALF_WIDTH }))
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        if self.estimates.len() < self.dim {
            let c = self.center[self.estimates.len()];
            self.estimates.push(c - WINDOW_HALF_WIDTH + 2.0 * WINDOW_HALF_WIDTH * answer.to_f64());
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        AttackReport {
            strategy: "gaussian_compile".into(),
            queries_used: self.issued + usize::from(self.final_issued),
            applicable: true,
            ..Default::default()
        }
    }
}

/// Lexicographic order on label tables, point 0 first.
fn lex_less(a: &F2Vector, b: &F2Vector) -> bool {
    (0..a.len()).find(|&y| a.get(y) != b.get(y)).is_some_and(|y| !a.get(y))
}

enum Exploit {
    Ready { table: F2Vector, predicted: Rational },
    Inapplicable(String),
}

/// Solves for the eligible hypotheses consistent with the marked points and picks the
/// exploit table, if at most two remain.
fn plan_exploit(leaf: &Model, marks: &[(u64, bool)]) -> Exploit {
    let Some(k) = leaf.coefficient_dim() else {
        return plan_exploit_independent(leaf, marks);
    };
    let mut system = AffineSystem::new(k);
    for &(y, z) in marks {
        let Some(f) = leaf.functional(y) else { return Exploit::Inapplicable("no functional".into()) };
        match system.add_constraint(&f, z) {
            Ok(_) => {}
            Err(F2Error::Inconsistent) => return Exploit::Inapplicable("knowledge map is inconsistent".into()),
            Err(e) => return Exploit::Inapplicable(e.to_string()),
        }
    }
    if system.free_dimension() > 1 {
        return Exploit::Inapplicable(format!("{} eligible hypotheses remain", system.solution_count()));
    }
    let Ok(solution) = system.solve() else { return Exploit::Inapplicable("unsolvable".into()) };
    let Some(first) = leaf.label_table(&solution.particular) else {
        return Exploit::Inapplicable("no label table".into());
    };
    match solution.null_basis.first() {
        None => Exploit::Ready { table: first, predicted: Rational::zero() },
        Some(dir) => {
            let second = leaf.label_table(&solution.particular.xor(dir)).unwrap_or_else(|| first.clone());
            let differ = first.xor(&second).weight();
            let predicted = Rational::new(BigInt::from(differ), BigInt::from(2 * first.len()));
            let table = if lex_less(&second, &first) { second } else { first };
            Exploit::Ready { table, predicted }
        }
    }
}

fn plan_exploit_independent(leaf: &Model, marks: &[(u64, bool)]) -> Exploit {
    let points = leaf.point_count().unwrap_or(0);
    if marks.len() as u64 + 1 < points {
        return Exploit::Inapplicable(format!("{} points unknown", points - marks.len() as u64));
    }
    let mut table = F2Vector::zeros(points as usize);
    for &(y, z) in marks {
        table.set(y as usize, z);
    }
    let predicted = if marks.len() as u64 == points { Rational::zero() } else { Rational::new(BigInt::one(), BigInt::from(2 * points)) };
    Exploit::Ready { table, predicted }
}

fn known_marks(marks: &[PointStatus]) -> Vec<(u64, bool)> {
    marks
        .iter()
        .enumerate()
        .filter_map(|(y, m)| match m {
            PointStatus::Known(z) => Some((y as u64, *z)),
            PointStatus::Unknown => None,
        })
        .collect()
}

/// Digits of `x` in base 3 after the point, exactly `count` of them, if `x` has no more.
pub fn ternary_digits(x: &Rational, count: usize) -> Option<Vec<u8>> {
    let scaled = x * Rational::from_integer(num_traits::pow(BigInt::from(3), count));
    if !scaled.is_integer() || scaled.is_negative() {
        return None;
    }
    let mut n = scaled.to_integer();
    let mut digits = vec![0u8; count];
    let three = BigInt::from(3);
    for d in digits.iter_mut().rev() {
        let (q, r) = n.div_rem(&three);
        *d = r.to_u8()?;
        n = q;
    }
    n.is_zero().then_some(digits)
}

/// Digits of `points * answer`. Real answers are snapped to the readout grid when that
/// grid is fine enough to be resolved in double precision.
fn readout_digits(answer: &Value, points: u64, count: usize) -> Option<Vec<u8>> {
    let scaled = match answer {
        Value::Exact(r) => r * int(points as i64),
        Value::Real(x) => {
            let grid = (points as f64) * 3f64.powi(i32::try_from(count).ok()?);
            if !(grid < 2f64.powi(40)) {
                return None;
            }
            let units = (x * grid).round();
            if (x * grid - units).abs() > 1e-6 {
                return None;
            }
            Rational::new(BigInt::from(units as i64), BigInt::from(3).pow(count as u32))
        }
    };
    ternary_digits(&scaled, count)
}

fn digit_mark(d: u8) -> PointStatus {
    match d {
        0 => PointStatus::Known(false),
        2 => PointStatus::Known(true),
        _ => PointStatus::Unknown,
    }
}

/// Fixes the exploit into the report and returns the query.
fn finish(report: &mut AttackReport, model: &Model, leaf: usize, plan: Exploit) -> Option<Query> {
    match plan {
        Exploit::Ready { table, predicted } => {
            let q = place(model, leaf, Query::GraphIndicator { table });
            report.applicable = true;
            report.predicted_inaccuracy = Some(predicted);
            report.exploit_query = Some(q.clone());
            report.queries_used += 1;
            Some(q)
        }
        Exploit::Inapplicable(why) => {
            report.applicable = false;
            report.note = Some(why);
            None
        }
    }
}

enum SpanStage {
    Probing(usize),
    Readout(Vec<u64>),
    Exploit(Vec<(u64, bool)>),
    Done,
}

struct AffineSpan {
    model: Arc<Model>,
    leaf: usize,
    vars: usize,
    probes: Vec<PointStatus>,
    stage: SpanStage,
    known: Vec<(u64, bool)>,
    report: AttackReport,
}

impl AffineSpan {
    fn new(model: Arc<Model>, leaf: usize) -> Result<Self, AnalystError> {
        let vars = match classification_leaf(&model, leaf)? {
            Model::LinearClassification { vars } => *vars as usize,
            other => return incompatible(format!("affine span attack needs a linear model, got {other}")),
        };
        Ok(Self {
            model,
            leaf,
            vars,
            probes: Vec::new(),
            stage: SpanStage::Probing(0),
            known: Vec::new(),
            report: report_for("affine_span", leaf),
        })
    }

    fn probe_point(&self, i: usize) -> u64 {
        if i == 0 {
            0
        } else {
            1u64 << (i - 1)
        }
    }

    /// After the probes: either exploit straight away or read out an affine basis of the
    /// known hyperplane.
    fn after_probes(&mut self) -> SpanStage {
        let unknown = |i: usize| self.probes[i] == PointStatus::Unknown;
        let w0 = unknown(0);
        let w: Vec<bool> = (1..=self.vars).map(|j| unknown(j) != w0).collect();
        let Some(pivot) = w.iter().position(|&b| b) else {
            // Knowledge is constant across Y: either everything is known or nothing is.
            return if w0 { SpanStage::Done } else { SpanStage::Exploit(self.known.clone()) };
        };
        let leaf = self.model.leaf(self.leaf).expect("validated leaf");
        let mut system = AffineSystem::new(self.vars + 1);
        for &(y, z) in &self.known {
            if let Some(f) = leaf.functional(y) {
                let _ = system.add_constraint(&f, z);
            }
        }
        if system.rank() >= self.vars {
            return SpanStage::Exploit(self.known.clone());
        }
        let base = if w0 { 1u64 << pivot } else { 0 };
        let mut points = vec![base];
        for (j, &wj) in w.iter().enumerate() {
            if j == pivot {
                continue;
            }
            let dir = if wj { (1u64 << j) | (1u64 << pivot) } else { 1u64 << j };
            points.push(base ^ dir);
        }
        SpanStage::Readout(points)
    }
}

impl Analyst for AffineSpan {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        let leaf_q = match &self.stage {
            SpanStage::Probing(i) => Query::PointIndicator { point: self.probe_point(*i), label: true },
            SpanStage::Readout(points) => Query::TernaryEncoding { points: points.clone() },
            SpanStage::Exploit(marks) => {
                let leaf = self.model.leaf(self.leaf)?.clone();
                let plan = plan_exploit(&leaf, marks);
                self.stage = SpanStage::Done;
                return Ok(finish(&mut self.report, &self.model, self.leaf, plan));
            }
            SpanStage::Done => return Ok(None),
        };
        self.report.queries_used += 1;
        Ok(Some(place(&self.model, self.leaf, leaf_q)))
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        let points = 1u64 << self.vars;
        match std::mem::replace(&mut self.stage, SpanStage::Done) {
            SpanStage::Probing(i) => {
                // Levels 0, 1/2N, 1/N for Known0, Unknown, Known1.
                let level = (answer.to_f64() * 2.0 * points as f64).round().clamp(0.0, 2.0) as u8;
                let mark = digit_mark(level);
                if let PointStatus::Known(z) = mark {
                    self.known.push((self.probe_point(i), z));
                }
                self.probes.push(mark);
                self.stage = if i < self.vars { SpanStage::Probing(i + 1) } else { self.after_probes() };
                if matches!(self.stage, SpanStage::Done) {
                    self.report.applicable = false;
                    self.report.note = Some("no point is known".into());
                }
            }
            SpanStage::Readout(basis) => {
                match readout_digits(answer, points, basis.len()) {
                    Some(digits) if digits.iter().all(|&d| d != 1) => {
                        for (y, d) in basis.into_iter().zip(digits) {
                            self.known.push((y, d == 2));
                        }
                        self.stage = SpanStage::Exploit(self.known.clone());
                    }
                    Some(_) => {
                        self.report.note = Some("more than two eligible hypotheses".into());
                    }
                    None => self.report.note = Some("readout answer is not exact".into()),
                }
            }
            other => self.stage = other,
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        self.report.clone()
    }
}

struct Ternary {
    model: Arc<Model>,
    leaf: usize,
    points: u64,
    stage: u8,
    pending: Option<Query>,
    report: AttackReport,
}

impl Analyst for Ternary {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        match self.stage {
            0 => {
                self.stage = 1;
                self.report.queries_used += 1;
                let q = Query::TernaryEncoding { points: (0..self.points).collect() };
                Ok(Some(place(&self.model, self.leaf, q)))
            }
            _ => {
                let q = self.pending.take();
                self.report.queries_used += usize::from(q.is_some());
                Ok(q)
            }
        }
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        if self.stage != 1 {
            return Ok(());
        }
        self.stage = 2;
        let Some(digits) = readout_digits(answer, self.points, self.points as usize) else {
            self.report.note = Some("answer is not an exact ternary readout".into());
            return Ok(());
        };
        let marks: Vec<PointStatus> = digits.into_iter().map(digit_mark).collect();
        self.report.knowledge_map = Some(marks_to_string(&marks));
        let leaf = self.model.leaf(self.leaf)?.clone();
        let plan = plan_exploit(&leaf, &known_marks(&marks));
        if let Some(q) = finish(&mut self.report, &self.model, self.leaf, plan) {
            // Queue the exploit as the second query.
            self.report.queries_used -= 1;
            self.pending = Some(q);
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        self.report.clone()
    }
}

struct Averaging {
    model: Arc<Model>,
    leaf: usize,
    points: u64,
    repeats: usize,
    sums: Vec<f64>,
    issued: usize,
    finished: bool,
    report: AttackReport,
}

impl Analyst for Averaging {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        let total = self.repeats * self.points as usize;
        if self.issued < total {
            let point = (self.issued / self.repeats) as u64;
            self.issued += 1;
            self.report.queries_used += 1;
            return Ok(Some(place(&self.model, self.leaf, Query::PointIndicator { point, label: true })));
        }
        if self.finished {
            return Ok(None);
        }
        self.finished = true;
        let n = self.points as f64;
        let marks: Vec<PointStatus> = self
            .sums
            .iter()
            .map(|s| digit_mark((s / self.repeats as f64 * 2.0 * n).round().clamp(0.0, 2.0) as u8))
            .collect();
        self.report.knowledge_map = Some(marks_to_string(&marks));
        let leaf = self.model.leaf(self.leaf)?.clone();
        let plan = plan_exploit(&leaf, &known_marks(&marks));
        Ok(finish(&mut self.report, &self.model, self.leaf, plan))
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        if !self.finished && self.issued > 0 {
            let point = (self.issued - 1) / self.repeats;
            self.sums[point] += answer.to_f64();
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        self.report.clone()
    }
}

/// How the curator turns a posterior mean `a` into a released answer, as far as the
/// analyst can predict it: the probability of each counted category given `a`.
enum ResponseLaw {
    Exact,
    Rounded(Vec<Arc<Partition>>),
    Noisy(f64),
    Proxy { center: f64, threshold: f64, sd: f64 },
    Constant(f64),
}

struct ExploreExploit {
    model: Arc<Model>,
    points: u64,
    repeats: usize,
    counting: Counting,
    coefficient: Rational,
    /// `P(category | knowledge)` per point, knowledge index 0 (Known0), 1 (Unknown), 2 (Known1).
    class_probabilities: Vec<[[f64; 3]; 3]>,
    counts: Vec<[u64; 3]>,
    issued: usize,
    finished: bool,
    report: AttackReport,
}

impl ExploreExploit {
    fn new(
        ctx: &AnalystContext,
        repeats: usize,
        beta: f64,
        counting: Counting,
        coefficient: Option<Rational>,
    ) -> Result<Self, AnalystError> {
        let model = ctx.model.clone();
        let label = classification_leaf(&model, 0)?;
        let points = label.point_count().unwrap_or(0);
        let coins = model.leaf_count().saturating_sub(1);
        if coins < points as usize * repeats {
            return incompatible(format!("{coins} coin leaves cannot serve {} explore queries", points as usize * repeats));
        }
        let coin = model.leaf(1)?;
        if !matches!(coin.unit(), Model::Uniform { outcomes: 2 }) {
            return incompatible(format!("explore phase needs uniform binary coins, got {coin}"));
        }
        let flips = (coin.copies() * ctx.n) as i64;
        let m = points as i64;
        // One ladder step per half unit of label knowledge.
        let coefficient = coefficient.unwrap_or_else(|| ratio(2 * (m - 1), flips + 2));
        let mut out = Self {
            model: model.clone(),
            points,
            repeats,
            counting,
            coefficient,
            class_probabilities: Vec::new(),
            counts: vec![[0; 3]; points as usize],
            issued: 0,
            finished: false,
            report: AttackReport {
                note: Some(format!("repeats={repeats} beta={beta}")),
                ..report_for("explore_exploit", 0)
            },
        };
        let law = out.response_law(ctx)?;
        out.class_probabilities = (0..points).map(|y| out.category_table(&law, y, flips)).collect();
        Ok(out)
    }

    fn query(&self, probe: u64, coin: usize) -> Query {
        Query::DiagonalMix { label_leaf: 0, probe, coin, copy: 0, coefficient: self.coefficient.clone() }
    }

    fn response_law(&self, ctx: &AnalystContext) -> Result<ResponseLaw, AnalystError> {
        let default_sd = (1.0 / (4.0 * ctx.n.max(1) as f64)).sqrt();
        Ok(match &ctx.curator {
            CuratorSpec::NoisyPosteriorMean { noise_sd } => ResponseLaw::Noisy(noise_sd.unwrap_or(default_sd)),
            CuratorSpec::SmartRounded { epsilon, resolution } => ResponseLaw::Rounded(
                (0..self.points)
                    .map(|y| ctx.memo.partition(&self.query(y, 1), &self.model, epsilon, *resolution))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            CuratorSpec::Pmw { epsilon, threshold, noise_sd, fallback, .. } => {
                let m = self.points as f64;
                let center = to_f64(&self.coefficient) / (2.0 * m) + (1.0 - 1.0 / m) * 0.5;
                let sd = match fallback {
                    PmwFallback::PosteriorMean => 0.0,
                    PmwFallback::NoisyPosteriorMean => noise_sd.unwrap_or(default_sd),
                };
                let threshold = threshold.as_ref().map_or(to_f64(epsilon) / 2.0, to_f64);
                ResponseLaw::Proxy { center, threshold, sd }
            }
            CuratorSpec::PriorMean => ResponseLaw::Constant(0.5),
            _ => ResponseLaw::Exact,
        })
    }

    fn category(&self, answer: f64) -> usize {
        match self.counting {
            Counting::Half => usize::from(answer >= 0.5),
            Counting::Quarters if answer < 0.25 => 0,
            Counting::Quarters if answer > 0.75 => 1,
            Counting::Quarters => 2,
        }
    }

    fn category_probabilities(&self, law: &ResponseLaw, y: u64, a: &Rational) -> [f64; 3] {
        let point = |x: f64| {
            let mut p = [0.0; 3];
            p[self.category(x)] = 1.0;
            p
        };
        let gaussian = |mean: f64, sd: f64| {
            if sd == 0.0 {
                return point(mean);
            }
            let n = Normal::new(mean, sd).expect("positive sd");
            match self.counting {
                Counting::Half => [n.cdf(0.5), 1.0 - n.cdf(0.5), 0.0],
                Counting::Quarters => {
                    let lo = n.cdf(0.25);
                    let hi = 1.0 - n.cdf(0.75);
                    [lo, hi, 1.0 - lo - hi]
                }
            }
        };
        match law {
            ResponseLaw::Exact => point(to_f64(a)),
            ResponseLaw::Rounded(parts) => point(to_f64(&round_to(&parts[y as usize], a))),
            ResponseLaw::Noisy(sd) => gaussian(to_f64(a), *sd),
            ResponseLaw::Proxy { center, threshold, sd } => {
                let a = to_f64(a);
                if (a - center).abs() <= *threshold {
                    point(*center)
                } else {
                    gaussian(a, *sd)
                }
            }
            ResponseLaw::Constant(c) => point(*c),
        }
    }

    /// Category probabilities for each knowledge state, averaging over the uniformly
    /// distributed number of heads the curator saw on a fresh coin.
    fn category_table(&self, law: &ResponseLaw, y: u64, flips: i64) -> [[f64; 3]; 3] {
        let m = self.points as i64;
        let mut table = [[0.0; 3]; 3];
        for (kappa, row) in table.iter_mut().enumerate() {
            for s in 0..=flips {
                let a = &self.coefficient * ratio(kappa as i64, 2 * m)
                    + ratio(m - 1, m) * ratio(s + 1, flips + 2);
                let p = self.category_probabilities(law, y, &a);
                row.iter_mut().zip(p).for_each(|(r, v)| *r += v / (flips + 1) as f64);
            }
        }
        table
    }

    fn classify(&self, y: usize) -> PointStatus {
        let score = |kappa: usize| -> f64 {
            self.counts[y]
                .iter()
                .zip(self.class_probabilities[y][kappa])
                .map(|(&c, p)| c as f64 * p.clamp(1e-12, 1.0).ln())
                .sum()
        };
        let best = (0..3).fold(0, |best, k| if score(k) > score(best) { k } else { best });
        digit_mark(best as u8)
    }
}

impl Analyst for ExploreExploit {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        let total = self.repeats * self.points as usize;
        if self.issued < total {
            let probe = (self.issued / self.repeats) as u64;
            let coin = 1 + self.issued;
            self.issued += 1;
            self.report.queries_used += 1;
            return Ok(Some(self.query(probe, coin)));
        }
        if self.finished {
            return Ok(None);
        }
        self.finished = true;
        if self.repeats == 0 {
            self.report.note = Some("no explore queries".into());
            return Ok(None);
        }
        let marks: Vec<PointStatus> = (0..self.points as usize).map(|y| self.classify(y)).collect();
        self.report.knowledge_map = Some(marks_to_string(&marks));
        let leaf = self.model.leaf(0)?.clone();
        let plan = plan_exploit(&leaf, &known_marks(&marks));
        Ok(finish(&mut self.report, &self.model, 0, plan))
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        if !self.finished && self.issued > 0 {
            let y = (self.issued - 1) / self.repeats;
            let c = self.category(answer.to_f64());
            self.counts[y][c] += 1;
        }
        Ok(())
    }

    fn report(&self) -> AttackReport {
        self.report.clone()
    }
}

struct Repeated {
    stride: usize,
    analysts: Vec<Box<dyn Analyst>>,
    current: usize,
}

impl Analyst for Repeated {
    fn next_query(&mut self) -> Result<Option<Query>, AnalystError> {
        while self.current < self.analysts.len() {
            if let Some(q) = self.analysts[self.current].next_query()? {
                return Ok(Some(q.relocate(self.current * self.stride)));
            }
            self.current += 1;
        }
        Ok(None)
    }

    fn observe(&mut self, answer: &Value) -> Result<(), AnalystError> {
        match self.analysts.get_mut(self.current) {
            Some(a) => a.observe(answer),
            None => Ok(()),
        }
    }

    fn report(&self) -> AttackReport {
        let reports: Vec<AttackReport> = self.analysts.iter().map(|a| a.report()).collect();
        AttackReport {
            strategy: "repeated".into(),
            queries_used: reports.iter().map(|r| r.queries_used).sum(),
            applicable: reports.iter().any(|r| r.applicable),
            note: Some(format!(
                "{} of {} copies applicable",
                reports.iter().filter(|r| r.applicable).count(),
                reports.len()
            )),
            ..Default::default()
        }
    }
}
