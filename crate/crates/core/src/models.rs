//! Priors, hypotheses, data and exact posteriors.
//!
//! Composite models (tensor products, tensor powers) are flattened into a sequence of
//! *leaves*. A [`Power`](Model::Power) is itself a leaf: one hypothesis, `r`-tuples of
//! samples. Leaf lookups are arithmetic, so a tensor power with a hundred thousand
//! copies never materializes per-copy structures until a copy is touched.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::LinearCode;
use crate::f2_linalg::{AffineSystem, Determination, F2Error, F2Vector, Novelty};
use crate::seeds::{derive_seed, fnv1a};
use crate::value::{from_f64, half, int, Rational};

/// Largest classification universe whose label tables are materialized.
pub const MAX_TABLE_POINTS: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("leaf index {0} out of range")]
    NoSuchLeaf(usize),
    #[error("sample does not belong to the universe of leaf {leaf}")]
    UniverseMismatch { leaf: usize },
    #[error("sample contradicts the posterior of leaf {leaf}")]
    Inconsistent { leaf: usize },
    #[error("leaf {leaf} is not a classification component")]
    NotClassification { leaf: usize },
    #[error("leaf {leaf} has no coefficient space")]
    NoCoefficients { leaf: usize },
}

/// A universe together with a prior over distributions on it.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// Coin with heads probability `1/2 - bias` or `1/2 + bias`, equally likely.
    BiasedCoin { bias: Rational },
    /// Outcomes `0..outcomes` with a uniform prior on the simplex.
    Uniform { outcomes: u32 },
    /// Uniform points of `Y = [points]` with independent fair labels.
    IndependentClassification { points: u64 },
    /// Labels `a + <b, y>` on `F2^vars`.
    LinearClassification { vars: u32 },
    /// Labels given by polynomials of bounded degree on `F2^vars`.
    PolynomialClassification { vars: u32, degree: u32, monomials: Arc<Vec<u64>> },
    /// Points are code coordinates `[m]`, labels are a uniformly random codeword.
    CodeClassification { code: Arc<LinearCode> },
    /// Samples `N(c, I_dim)` with prior `c ~ N(0, variance * I_dim)`.
    Gaussian { dim: usize, variance: f64 },
    TensorProduct(Arc<Model>, Arc<Model>),
    /// One hypothesis of `base`, each sample an `copies`-tuple drawn from it.
    Power { base: Arc<Model>, copies: usize },
    /// `copies` independent instances of `base`.
    TensorPower { base: Arc<Model>, copies: usize },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Invalid(msg.into()))
}

impl Model {
    pub fn biased_coin(bias: Rational) -> Result<Self, ModelError> {
        if bias < Rational::zero() || bias > half() {
            return invalid(format!("coin bias {bias} outside [0, 1/2]"));
        }
        Ok(Model::BiasedCoin { bias })
    }

    pub fn uniform(outcomes: u32) -> Result<Self, ModelError> {
        if !(2..=256).contains(&outcomes) {
            return invalid(format!("uniform model needs 2..=256 outcomes, got {outcomes}"));
        }
        Ok(Model::Uniform { outcomes })
    }

    pub fn independent(points: u64) -> Result<Self, ModelError> {
        if points == 0 || points > MAX_TABLE_POINTS {
            return invalid(format!("independent classification needs 1..={MAX_TABLE_POINTS} points"));
        }
        Ok(Model::IndependentClassification { points })
    }

    pub fn linear(vars: u32) -> Result<Self, ModelError> {
        if (1u64 << vars.min(63)) > MAX_TABLE_POINTS || vars >= 63 {
            return invalid(format!("linear classification over {vars} variables is too large"));
        }
        Ok(Model::LinearClassification { vars })
    }

    pub fn polynomial(vars: u32, degree: u32) -> Result<Self, ModelError> {
        if degree > vars {
            return invalid(format!("degree {degree} exceeds {vars} variables"));
        }
        if vars >= 63 || (1u64 << vars) > MAX_TABLE_POINTS {
            return invalid(format!("polynomial classification over {vars} variables is too large"));
        }
        let monomials = crate::codes::graded_lex_monomials(vars as usize, degree as usize)
            .into_iter()
            .map(|mono| mono.iter().fold(0u64, |mask, &v| mask | (1 << v)))
            .collect();
        Ok(Model::PolynomialClassification { vars, degree, monomials: Arc::new(monomials) })
    }

    pub fn code(code: LinearCode) -> Self {
        Model::CodeClassification { code: Arc::new(code) }
    }

    pub fn gaussian(dim: usize, variance: f64) -> Result<Self, ModelError> {
        if dim == 0 || !(variance > 0.0 && variance.is_finite()) {
            return invalid("gaussian model needs dim >= 1 and a positive finite variance");
        }
        Ok(Model::Gaussian { dim, variance })
    }

    pub fn product(left: Model, right: Model) -> Self {
        Model::TensorProduct(Arc::new(left), Arc::new(right))
    }

    pub fn power(base: Model, copies: usize) -> Result<Self, ModelError> {
        if copies == 0 {
            return invalid("power needs at least one copy");
        }
        if !base.is_leaf() || matches!(base, Model::Power { .. }) {
            return invalid("the base of a power must be a simple model");
        }
        Ok(Model::Power { base: Arc::new(base), copies })
    }

    pub fn tensor_power(base: Model, copies: usize) -> Result<Self, ModelError> {
        if copies == 0 {
            return invalid("tensor power needs at least one copy");
        }
        Ok(Model::TensorPower { base: Arc::new(base), copies })
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, Model::TensorProduct(..) | Model::TensorPower { .. })
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Model::TensorProduct(l, r) => l.leaf_count() + r.leaf_count(),
            Model::TensorPower { base, copies } => base.leaf_count() * copies,
            _ => 1,
        }
    }

    pub fn leaf(&self, index: usize) -> Result<&Model, ModelError> {
        match self {
            Model::TensorProduct(l, r) => {
                let lc = l.leaf_count();
                if index < lc {
                    l.leaf(index)
                } else {
                    r.leaf(index - lc).map_err(|_| ModelError::NoSuchLeaf(index))
                }
            }
            Model::TensorPower { base, copies } => {
                let bc = base.leaf_count();
                if index >= bc * copies {
                    return Err(ModelError::NoSuchLeaf(index));
                }
                base.leaf(index % bc)
            }
            _ if index == 0 => Ok(self),
            _ => Err(ModelError::NoSuchLeaf(index)),
        }
    }

    /// The model that draws a single coordinate of this leaf's samples.
    pub fn unit(&self) -> &Model {
        match self {
            Model::Power { base, .. } => base,
            other => other,
        }
    }

    /// Copies per sample for a leaf (1 unless it is a power).
    pub fn copies(&self) -> usize {
        match self {
            Model::Power { copies, .. } => *copies,
            _ => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self.unit(),
            Model::IndependentClassification { .. }
                | Model::LinearClassification { .. }
                | Model::PolynomialClassification { .. }
                | Model::CodeClassification { .. }
        )
    }

    /// Outcome count for coin-like leaves.
    pub fn outcome_count(&self) -> Option<usize> {
        match self.unit() {
            Model::BiasedCoin { .. } => Some(2),
            Model::Uniform { outcomes } => Some(*outcomes as usize),
            _ => None,
        }
    }

    /// `|Y|` for classification leaves.
    pub fn point_count(&self) -> Option<u64> {
        match self.unit() {
            Model::IndependentClassification { points } => Some(*points),
            Model::LinearClassification { vars } | Model::PolynomialClassification { vars, .. } => {
                Some(1u64 << vars)
            }
            Model::CodeClassification { code } => Some(code.length() as u64),
            _ => None,
        }
    }

    /// Dimension `K` of the coefficient space for affine classification leaves.
    pub fn coefficient_dim(&self) -> Option<usize> {
        match self.unit() {
            Model::LinearClassification { vars } => Some(*vars as usize + 1),
            Model::PolynomialClassification { monomials, .. } => Some(monomials.len()),
            Model::CodeClassification { code } => Some(code.dimension()),
            _ => None,
        }
    }

    pub fn gaussian_dim(&self) -> Option<usize> {
        match self.unit() {
            Model::Gaussian { dim, .. } => Some(*dim),
            _ => None,
        }
    }

    /// Writes the evaluation functional of point `y` into `buf` (length `ceil(K/64)`).
    pub fn functional_words(&self, y: u64, buf: &mut [u64]) {
        buf.iter_mut().for_each(|w| *w = 0);
        match self.unit() {
            Model::LinearClassification { vars } => {
                // vars < 63, so the functional fits in one word.
                buf[0] = 1 | ((y & ((1u64 << vars) - 1)) << 1);
            }
            Model::PolynomialClassification { monomials, .. } => {
                for (t, &mask) in monomials.iter().enumerate() {
                    if y & mask == mask {
                        buf[t / 64] |= 1 << (t % 64);
                    }
                }
            }
            Model::CodeClassification { code } => {
                buf.copy_from_slice(code.column(y as usize).words());
            }
            _ => {}
        }
    }

    /// Evaluation functional `phi(y)`, so that the label is `<phi(y), coefficients>`.
    pub fn functional(&self, y: u64) -> Option<F2Vector> {
        let k = self.coefficient_dim()?;
        let mut buf = vec![0u64; k.div_ceil(64).max(1)];
        self.functional_words(y, &mut buf);
        buf.truncate(k.div_ceil(64));
        Some(F2Vector::from_words(k, buf))
    }

    /// Label table over `Y` of the hypothesis with the given coefficients.
    pub fn label_table(&self, coefficients: &F2Vector) -> Option<F2Vector> {
        if let Model::CodeClassification { code } = self.unit() {
            return Some(code.encode(coefficients));
        }
        let k = self.coefficient_dim()?;
        let points = self.point_count()?;
        let mut table = F2Vector::zeros(points as usize);
        if let Model::LinearClassification { .. } = self.unit() {
            let c = coefficients.words()[0];
            let (offset, slope) = (c & 1 == 1, c >> 1);
            for y in 0..points {
                if offset ^ ((y & slope).count_ones() & 1 == 1) {
                    table.set(y as usize, true);
                }
            }
            return Some(table);
        }
        let mut buf = vec![0u64; k.div_ceil(64)];
        for y in 0..points {
            self.functional_words(y, &mut buf);
            let parity = buf.iter().zip(coefficients.words()).fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
            if parity & 1 == 1 {
                table.set(y as usize, true);
            }
        }
        Some(table)
    }

    /// Whether `sample` is a legal sample of this leaf's unit model.
    fn unit_sample_ok(&self, sample: &Sample) -> bool {
        match (self.unit(), sample) {
            (Model::BiasedCoin { .. }, Sample::Outcome(o)) => *o < 2,
            (Model::Uniform { outcomes }, Sample::Outcome(o)) => o < outcomes,
            (Model::Gaussian { dim, .. }, Sample::Real(x)) => x.len() == *dim,
            (_, Sample::Labeled { point, .. }) => self.point_count().is_some_and(|p| *point < p),
            _ => false,
        }
    }

    /// Splits a leaf sample into its unit samples (one per copy).
    pub fn unit_samples(&self, sample: &Sample) -> Option<Vec<Sample>> {
        match (self, sample) {
            (Model::Power { copies, .. }, Sample::Outcomes(o)) if o.len() == *copies => {
                Some(o.iter().map(|&x| Sample::Outcome(x as u32)).collect())
            }
            (Model::Power { copies, .. }, Sample::Tuple(t)) if t.len() == *copies => Some(t.clone()),
            (Model::Power { .. }, _) => None,
            (_, s) => Some(vec![s.clone()]),
        }
    }

    /// Checks that `sample` lies in this model's universe.
    pub fn contains(&self, sample: &Sample) -> bool {
        if self.is_leaf() {
            return self.unit_samples(sample).is_some_and(|units| units.iter().all(|u| self.unit_sample_ok(u)));
        }
        match sample {
            Sample::Tuple(parts) if parts.len() == self.leaf_count() => {
                parts.iter().enumerate().all(|(i, s)| self.leaf(i).is_ok_and(|leaf| leaf.contains(s)))
            }
            _ => false,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::BiasedCoin { bias } => write!(f, "biased_coin({bias})"),
            Model::Uniform { outcomes } => write!(f, "uniform({outcomes})"),
            Model::IndependentClassification { points } => write!(f, "independent({points})"),
            Model::LinearClassification { vars } => write!(f, "linear({vars})"),
            Model::PolynomialClassification { vars, degree, .. } => write!(f, "polynomial({vars},{degree})"),
            Model::CodeClassification { code } => write!(
                f,
                "code({},{},{:016x})",
                code.length(),
                code.dimension(),
                fnv1a(code.to_text().as_bytes())
            ),
            Model::Gaussian { dim, variance } => write!(f, "gaussian({dim},{variance})"),
            Model::TensorProduct(l, r) => write!(f, "product({l},{r})"),
            Model::Power { base, copies } => write!(f, "power({base},{copies})"),
            Model::TensorPower { base, copies } => write!(f, "tensor_power({base},{copies})"),
        }
    }
}

/// A point of the universe. Product samples hold one entry per leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    Outcome(u32),
    Labeled { point: u64, label: bool },
    Real(Vec<f64>),
    /// Copies of a finite-outcome power leaf.
    Outcomes(Vec<u8>),
    Tuple(Vec<Sample>),
}

/// The hypothesis of a single leaf.
#[derive(Clone, Debug, PartialEq)]
pub enum LeafHypothesis {
    Coin { heads: Rational },
    Simplex { probabilities: Vec<f64> },
    Labels { table: Arc<F2Vector>, coefficients: Option<F2Vector> },
    Gaussian { center: Vec<f64> },
}

impl LeafHypothesis {
    pub fn draw(leaf: &Model, rng: &mut impl Rng) -> Self {
        match leaf.unit() {
            Model::BiasedCoin { bias } => {
                let heads = if rng.random::<bool>() { half() + bias } else { half() - bias };
                LeafHypothesis::Coin { heads }
            }
            Model::Uniform { outcomes } => {
                let raw: Vec<f64> = (0..*outcomes).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = raw.iter().sum();
                LeafHypothesis::Simplex { probabilities: raw.iter().map(|x| x / total).collect() }
            }
            Model::IndependentClassification { points } => {
                let words = (0..(*points as usize).div_ceil(64)).map(|_| rng.next_u64()).collect();
                LeafHypothesis::Labels {
                    table: Arc::new(F2Vector::from_words(*points as usize, words)),
                    coefficients: None,
                }
            }
            Model::Gaussian { dim, variance } => {
                let sd = variance.sqrt();
                let center =
                    (0..*dim).map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect();
                LeafHypothesis::Gaussian { center }
            }
            unit => {
                let k = unit.coefficient_dim().unwrap_or(0);
                let bits: Vec<bool> = (0..k).map(|_| rng.random()).collect();
                Self::from_coefficients(leaf, F2Vector::from_bits(&bits))
            }
        }
    }

    /// Hypothesis of an affine classification leaf with given coefficients (or message).
    pub fn from_coefficients(leaf: &Model, coefficients: F2Vector) -> Self {
        let table = leaf.label_table(&coefficients).unwrap_or_else(|| F2Vector::zeros(0));
        LeafHypothesis::Labels { table: Arc::new(table), coefficients: Some(coefficients) }
    }

    pub fn label_table(&self) -> Option<&Arc<F2Vector>> {
        match self {
            LeafHypothesis::Labels { table, .. } => Some(table),
            _ => None,
        }
    }

    fn draw_unit_sample(&self, rng: &mut impl Rng) -> Sample {
        match self {
            LeafHypothesis::Coin { heads } => {
                let u: f64 = rng.random();
                Sample::Outcome(u32::from(u < crate::value::to_f64(heads)))
            }
            LeafHypothesis::Simplex { probabilities } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let last = probabilities.len() - 1;
                let idx = probabilities
                    .iter()
                    .position(|p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(last);
                Sample::Outcome(idx as u32)
            }
            LeafHypothesis::Labels { table, .. } => {
                let point = rng.random_range(0..table.len() as u64);
                Sample::Labeled { point, label: table.get(point as usize) }
            }
            LeafHypothesis::Gaussian { center } => Sample::Real(
                center.iter().map(|c| c + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect(),
            ),
        }
    }

    /// One sample of `leaf` (a tuple of copies for powers).
    pub fn draw_sample(&self, leaf: &Model, rng: &mut impl Rng) -> Sample {
        match leaf {
            Model::Power { copies, .. } => {
                let units: Vec<Sample> = (0..*copies).map(|_| self.draw_unit_sample(rng)).collect();
                if leaf.outcome_count().is_some() {
                    Sample::Outcomes(
                        units.iter().map(|s| if let Sample::Outcome(o) = s { *o as u8 } else { 0 }).collect(),
                    )
                } else {
                    Sample::Tuple(units)
                }
            }
            _ => self.draw_unit_sample(rng),
        }
    }
}

fn leaf_rng(seed: u64, leaf: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, leaf as u64))
}

/// A hypothesis for every leaf, drawn lazily and deterministically from a seed.
#[derive(Debug)]
pub struct Hypothesis {
    model: Arc<Model>,
    seed: u64,
    leaves: Mutex<HashMap<usize, Arc<LeafHypothesis>>>,
}

impl Hypothesis {
    pub fn lazy(model: Arc<Model>, seed: u64) -> Self {
        Self { model, seed, leaves: Mutex::new(HashMap::new()) }
    }

    /// A hypothesis with every leaf given explicitly.
    pub fn from_leaves(model: Arc<Model>, leaves: Vec<LeafHypothesis>) -> Result<Self, ModelError> {
        if leaves.len() != model.leaf_count() {
            return invalid(format!("expected {} leaf hypotheses, got {}", model.leaf_count(), leaves.len()));
        }
        let map = leaves.into_iter().map(Arc::new).enumerate().collect();
        Ok(Self { model, seed: 0, leaves: Mutex::new(map) })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn leaf(&self, index: usize) -> Result<Arc<LeafHypothesis>, ModelError> {
        let leaf_model = self.model.leaf(index)?;
        let mut map = self.leaves.lock().unwrap_or_else(|e| e.into_inner());
        Ok(map
            .entry(index)
            .or_insert_with(|| Arc::new(LeafHypothesis::draw(leaf_model, &mut leaf_rng(self.seed, index))))
            .clone())
    }
}

impl Clone for Hypothesis {
    fn clone(&self) -> Self {
        let map = self.leaves.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Self { model: self.model.clone(), seed: self.seed, leaves: Mutex::new(map) }
    }
}

/// `n` i.i.d. samples from a hypothesis, generated lazily leaf by leaf.
#[derive(Debug)]
pub struct Dataset {
    hypothesis: Arc<Hypothesis>,
    n: usize,
    seed: u64,
    leaves: Mutex<BTreeMap<usize, Arc<Vec<Sample>>>>,
}

impl Dataset {
    pub fn new(hypothesis: Arc<Hypothesis>, n: usize, seed: u64) -> Self {
        Self { hypothesis, n, seed, leaves: Mutex::new(BTreeMap::new()) }
    }

    /// A dataset holding exactly `samples`; product samples must be tuples with one entry
    /// per leaf.
    pub fn from_samples(hypothesis: Arc<Hypothesis>, samples: Vec<Sample>) -> Result<Self, ModelError> {
        let model = hypothesis.model().clone();
        let leaves = model.leaf_count();
        let mut per_leaf: Vec<Vec<Sample>> = vec![Vec::with_capacity(samples.len()); leaves];
        for s in &samples {
            if !model.contains(s) {
                return Err(ModelError::Invalid(format!("sample {s:?} is not in the universe of {model}")));
            }
            match s {
                Sample::Tuple(parts) if !model.is_leaf() => {
                    for (leaf, part) in parts.iter().enumerate() {
                        per_leaf[leaf].push(part.clone());
                    }
                }
                other => per_leaf[0].push(other.clone()),
            }
        }
        let map = per_leaf.into_iter().enumerate().map(|(i, s)| (i, Arc::new(s))).collect();
        Ok(Self { hypothesis, n: samples.len(), seed: 0, leaves: Mutex::new(map) })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn model(&self) -> &Arc<Model> {
        self.hypothesis.model()
    }

    pub fn hypothesis(&self) -> &Arc<Hypothesis> {
        &self.hypothesis
    }

    /// The `n` samples of one leaf.
    pub fn leaf_samples(&self, leaf: usize) -> Result<Arc<Vec<Sample>>, ModelError> {
        if let Some(s) = self.leaves.lock().unwrap_or_else(|e| e.into_inner()).get(&leaf) {
            return Ok(s.clone());
        }
        let leaf_model = self.model().leaf(leaf)?;
        let h = self.hypothesis.leaf(leaf)?;
        let mut rng = leaf_rng(self.seed, leaf);
        let samples = Arc::new((0..self.n).map(|_| h.draw_sample(leaf_model, &mut rng)).collect::<Vec<_>>());
        self.leaves.lock().unwrap_or_else(|e| e.into_inner()).insert(leaf, samples.clone());
        Ok(samples)
    }

    /// Sample `j` as a full universe point.
    pub fn sample(&self, j: usize) -> Result<Sample, ModelError> {
        let model = self.model();
        if model.is_leaf() {
            return Ok(self.leaf_samples(0)?[j].clone());
        }
        (0..model.leaf_count())
            .map(|leaf| Ok(self.leaf_samples(leaf)?[j].clone()))
            .collect::<Result<Vec<_>, _>>()
            .map(Sample::Tuple)
    }

    pub fn samples(&self) -> Result<Vec<Sample>, ModelError> {
        (0..self.n).map(|j| self.sample(j)).collect()
    }

    /// FNV-1a digest of every leaf sample generated so far, in leaf order.
    pub fn digest(&self) -> u64 {
        let map = self.leaves.lock().unwrap_or_else(|e| e.into_inner());
        let mut bytes = Vec::new();
        for (leaf, samples) in map.iter() {
            bytes.extend_from_slice(&(*leaf as u64).to_le_bytes());
            bytes.extend_from_slice(serde_json::to_string(&**samples).unwrap_or_default().as_bytes());
        }
        fnv1a(&bytes)
    }
}

/// What the posterior says about the label of one point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointStatus {
    Known(bool),
    Unknown,
}

impl From<Determination> for PointStatus {
    fn from(d: Determination) -> Self {
        match d {
            Determination::Determined(z) => PointStatus::Known(z),
            Determination::Undetermined => PointStatus::Unknown,
        }
    }
}

/// Per-point knowledge of a classification posterior as two bitsets over `Y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Knowledge {
    pub known: F2Vector,
    pub value: F2Vector,
}

impl Knowledge {
    pub fn unknown(points: usize) -> Self {
        Self { known: F2Vector::zeros(points), value: F2Vector::zeros(points) }
    }

    pub fn points(&self) -> usize {
        self.known.len()
    }

    pub fn status(&self, y: u64) -> PointStatus {
        if self.known.get(y as usize) {
            PointStatus::Known(self.value.get(y as usize))
        } else {
            PointStatus::Unknown
        }
    }

    pub fn set(&mut self, y: u64, status: PointStatus) {
        match status {
            PointStatus::Known(z) => {
                self.known.set(y as usize, true);
                self.value.set(y as usize, z);
            }
            PointStatus::Unknown => {
                self.known.set(y as usize, false);
                self.value.set(y as usize, false);
            }
        }
    }
}

/// Exact posterior of one leaf.
#[derive(Debug)]
pub enum LeafPosterior {
    Coin { bias: Rational, heads: u64, tails: u64 },
    Dirichlet { counts: Vec<u64> },
    Affine { system: AffineSystem, knowledge: OnceLock<Arc<Knowledge>> },
    Independent { points: u64, seen: BTreeMap<u64, bool> },
    Gaussian { sum: Vec<f64>, count: u64, prior_precision: f64 },
}

impl Clone for LeafPosterior {
    fn clone(&self) -> Self {
        match self {
            LeafPosterior::Coin { bias, heads, tails } => {
                LeafPosterior::Coin { bias: bias.clone(), heads: *heads, tails: *tails }
            }
            LeafPosterior::Dirichlet { counts } => LeafPosterior::Dirichlet { counts: counts.clone() },
            LeafPosterior::Affine { system, knowledge } => {
                let cache = OnceLock::new();
                if let Some(k) = knowledge.get() {
                    let _ = cache.set(k.clone());
                }
                LeafPosterior::Affine { system: system.clone(), knowledge: cache }
            }
            LeafPosterior::Independent { points, seen } => {
                LeafPosterior::Independent { points: *points, seen: seen.clone() }
            }
            LeafPosterior::Gaussian { sum, count, prior_precision } => {
                LeafPosterior::Gaussian { sum: sum.clone(), count: *count, prior_precision: *prior_precision }
            }
        }
    }
}

impl LeafPosterior {
    pub fn prior(leaf: &Model) -> Self {
        match leaf.unit() {
            Model::BiasedCoin { bias } => LeafPosterior::Coin { bias: bias.clone(), heads: 0, tails: 0 },
            Model::Uniform { outcomes } => LeafPosterior::Dirichlet { counts: vec![0; *outcomes as usize] },
            Model::IndependentClassification { points } => {
                LeafPosterior::Independent { points: *points, seen: BTreeMap::new() }
            }
            Model::Gaussian { dim, variance } => {
                LeafPosterior::Gaussian { sum: vec![0.0; *dim], count: 0, prior_precision: 1.0 / variance }
            }
            unit => LeafPosterior::Affine {
                system: AffineSystem::new(unit.coefficient_dim().unwrap_or(0)),
                knowledge: OnceLock::new(),
            },
        }
    }

    /// Folds one unit sample in. Returns whether an affine constraint was novel.
    fn absorb(&mut self, unit_model: &Model, sample: &Sample, leaf: usize) -> Result<bool, ModelError> {
        let mismatch = ModelError::UniverseMismatch { leaf };
        match (self, sample) {
            (LeafPosterior::Coin { heads, tails, .. }, Sample::Outcome(o)) => {
                match o {
                    0 => *tails += 1,
                    1 => *heads += 1,
                    _ => return Err(mismatch),
                }
                Ok(false)
            }
            (LeafPosterior::Dirichlet { counts }, Sample::Outcome(o)) => {
                *counts.get_mut(*o as usize).ok_or(mismatch)? += 1;
                Ok(false)
            }
            (LeafPosterior::Independent { points, seen }, Sample::Labeled { point, label }) => {
                if point >= points {
                    return Err(mismatch);
                }
                match seen.get(point) {
                    Some(z) if z != label => Err(ModelError::Inconsistent { leaf }),
                    Some(_) => Ok(false),
                    None => {
                        seen.insert(*point, *label);
                        Ok(true)
                    }
                }
            }
            (LeafPosterior::Affine { system, knowledge }, Sample::Labeled { point, label }) => {
                if unit_model.point_count().is_none_or(|p| *point >= p) {
                    return Err(mismatch);
                }
                let functional = unit_model.functional(*point).ok_or(mismatch.clone())?;
                match system.add_constraint(&functional, *label) {
                    Ok(Novelty::Novel) => {
                        *knowledge = OnceLock::new();
                        Ok(true)
                    }
                    Ok(Novelty::Redundant) => Ok(false),
                    Err(F2Error::Inconsistent) => Err(ModelError::Inconsistent { leaf }),
                    Err(_) => Err(mismatch),
                }
            }
            (LeafPosterior::Gaussian { sum, count, .. }, Sample::Real(x)) if x.len() == sum.len() => {
                sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
                *count += 1;
                Ok(false)
            }
            _ => Err(mismatch),
        }
    }

    pub fn knowledge(&self, leaf_model: &Model) -> Option<Arc<Knowledge>> {
        match self {
            LeafPosterior::Affine { system, knowledge } => Some(
                knowledge
                    .get_or_init(|| {
                        let points = leaf_model.point_count().unwrap_or(0);
                        let k = system.n_cols();
                        let mut out = Knowledge::unknown(points as usize);
                        if let Model::LinearClassification { .. } = leaf_model.unit() {
                            // phi(y) has the constant bit set, so determined points are exactly
                            // the row-space vectors carrying that bit.
                            let enumerated = system.for_each_implied(20, |word, z| {
                                if word & 1 == 1 {
                                    let y = (word >> 1) as usize;
                                    out.known.set(y, true);
                                    out.value.set(y, z);
                                }
                            });
                            if enumerated {
                                return Arc::new(out);
                            }
                        }
                        let mut buf = vec![0u64; k.div_ceil(64).max(1)];
                        for y in 0..points {
                            leaf_model.functional_words(y, &mut buf);
                            if let Determination::Determined(z) = system.determine_words(&mut buf[..k.div_ceil(64)]) {
                                out.known.set(y as usize, true);
                                out.value.set(y as usize, z);
                            }
                        }
                        Arc::new(out)
                    })
                    .clone(),
            ),
            _ => None,
        }
    }

    pub fn system(&self) -> Option<&AffineSystem> {
        match self {
            LeafPosterior::Affine { system, .. } => Some(system),
            _ => None,
        }
    }

    /// Posterior mean of the outcome probabilities of a coin-like leaf.
    pub fn outcome_means(&self) -> Option<Vec<Rational>> {
        match self {
            LeafPosterior::Coin { bias, heads, tails } => {
                let hi = half() + bias;
                let lo = half() - bias;
                let w_hi = num_traits::pow(hi.clone(), *heads as usize) * num_traits::pow(lo.clone(), *tails as usize);
                let w_lo = num_traits::pow(lo.clone(), *heads as usize) * num_traits::pow(hi.clone(), *tails as usize);
                let p = (&w_hi * &hi + &w_lo * &lo) / (&w_hi + &w_lo);
                Some(vec![Rational::one() - &p, p])
            }
            LeafPosterior::Dirichlet { counts } => {
                let total = int((counts.iter().sum::<u64>() + counts.len() as u64) as i64);
                Some(counts.iter().map(|&c| int(c as i64 + 1) / &total).collect())
            }
            _ => None,
        }
    }

    /// Posterior mean of the center and the precision of that estimate.
    pub fn gaussian_posterior(&self) -> Option<(Vec<f64>, f64)> {
        match self {
            LeafPosterior::Gaussian { sum, count, prior_precision } => {
                let precision = *count as f64 + prior_precision;
                Some((sum.iter().map(|s| s / precision).collect(), precision))
            }
            _ => None,
        }
    }

    pub fn eligible_count(&self) -> Option<BigUint> {
        match self {
            LeafPosterior::Affine { system, .. } => Some(system.solution_count()),
            LeafPosterior::Independent { points, seen } => Some(BigUint::one() << (*points as usize - seen.len())),
            _ => None,
        }
    }
}

/// Per-leaf predictive description of a single fresh sample, used to take expectations.
#[derive(Clone, Debug)]
pub enum LeafView {
    /// Exact outcome probabilities of one coordinate.
    Outcomes(Arc<Vec<Rational>>),
    /// Real outcome probabilities of one coordinate.
    OutcomesReal(Arc<Vec<f64>>),
    /// Points are uniform on `Y`; labels as described.
    Labels(LabelView),
    /// Joint real weights over `(y, z)` stored at index `2y + z`.
    Joint(Arc<Vec<f64>>),
    /// `x ~ N(mean, variance * I)`.
    Gaussian { mean: Arc<Vec<f64>>, variance: f64 },
}

#[derive(Clone, Debug)]
pub enum LabelView {
    Table(Arc<F2Vector>),
    Knowledge(Arc<Knowledge>),
    /// Labels of seen points; others are fair coins.
    Sparse(Arc<BTreeMap<u64, bool>>),
    /// Exact `P(z = 1 | y)` per point.
    Probabilities(Arc<Vec<Rational>>),
}

/// Anything that induces a product distribution over a model's universe.
pub trait Belief {
    fn model(&self) -> &Arc<Model>;
    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError>;
}

impl Belief for Hypothesis {
    fn model(&self) -> &Arc<Model> {
        &self.model
    }

    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError> {
        Ok(match &*self.leaf(leaf)? {
            LeafHypothesis::Coin { heads } => LeafView::Outcomes(Arc::new(vec![Rational::one() - heads, heads.clone()])),
            LeafHypothesis::Simplex { probabilities } => {
                LeafView::Outcomes(Arc::new(probabilities.iter().map(|&p| from_f64(p)).collect()))
            }
            LeafHypothesis::Labels { table, .. } => LeafView::Labels(LabelView::Table(table.clone())),
            LeafHypothesis::Gaussian { center } => LeafView::Gaussian { mean: Arc::new(center.clone()), variance: 1.0 },
        })
    }
}

/// Exact posterior over all leaves. Leaves not yet touched are derived on demand from the
/// backing dataset (if any), so a state over a huge product costs only what is queried.
#[derive(Debug)]
pub struct PosteriorState {
    model: Arc<Model>,
    data: Option<Arc<Dataset>>,
    observed: usize,
    leaves: Mutex<HashMap<usize, Arc<LeafPosterior>>>,
}

impl Clone for PosteriorState {
    fn clone(&self) -> Self {
        let map = self.leaves.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Self { model: self.model.clone(), data: self.data.clone(), observed: self.observed, leaves: Mutex::new(map) }
    }
}

impl PosteriorState {
    /// The prior.
    pub fn new(model: Arc<Model>) -> Self {
        Self { model, data: None, observed: 0, leaves: Mutex::new(HashMap::new()) }
    }

    /// The posterior after every sample of `data`.
    pub fn from_dataset(data: Arc<Dataset>) -> Self {
        Self {
            model: data.model().clone(),
            observed: data.len(),
            data: Some(data),
            leaves: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        self.data.as_ref()
    }

    pub fn leaf(&self, leaf: usize) -> Result<Arc<LeafPosterior>, ModelError> {
        if let Some(p) = self.leaves.lock().unwrap_or_else(|e| e.into_inner()).get(&leaf) {
            return Ok(p.clone());
        }
        let leaf_model = self.model.leaf(leaf)?;
        let mut post = LeafPosterior::prior(leaf_model);
        if let Some(data) = &self.data {
            for s in data.leaf_samples(leaf)?.iter() {
                absorb_leaf_sample(&mut post, leaf_model, s, leaf)?;
            }
        }
        let post = Arc::new(post);
        self.leaves.lock().unwrap_or_else(|e| e.into_inner()).insert(leaf, post.clone());
        Ok(post)
    }

    /// Conditions on one more sample. Returns, per leaf, whether it was novel for an
    /// affine classification leaf.
    pub fn update(&mut self, sample: &Sample) -> Result<Vec<bool>, ModelError> {
        if !self.model.contains(sample) {
            return Err(ModelError::UniverseMismatch { leaf: 0 });
        }
        let parts: Vec<&Sample> = match (self.model.is_leaf(), sample) {
            (true, s) => vec![s],
            (false, Sample::Tuple(parts)) => parts.iter().collect(),
            _ => return Err(ModelError::UniverseMismatch { leaf: 0 }),
        };
        let mut staged = Vec::with_capacity(parts.len());
        let mut novel = Vec::with_capacity(parts.len());
        for (leaf, part) in parts.into_iter().enumerate() {
            let mut post = (*self.leaf(leaf)?).clone();
            novel.push(absorb_leaf_sample(&mut post, self.model.leaf(leaf)?, part, leaf)?);
            staged.push(post);
        }
        let mut map = self.leaves.lock().unwrap_or_else(|e| e.into_inner());
        for (leaf, post) in staged.into_iter().enumerate() {
            map.insert(leaf, Arc::new(post));
        }
        drop(map);
        self.observed += 1;
        Ok(novel)
    }

    fn classification_leaf(&self, leaf: usize) -> Result<(&Model, Arc<LeafPosterior>), ModelError> {
        let leaf_model = self.model.leaf(leaf)?;
        if !leaf_model.is_classification() {
            return Err(ModelError::NotClassification { leaf });
        }
        Ok((leaf_model, self.leaf(leaf)?))
    }

    pub fn eligible_count(&self, leaf: usize) -> Result<BigUint, ModelError> {
        let (_, post) = self.classification_leaf(leaf)?;
        post.eligible_count().ok_or(ModelError::NotClassification { leaf })
    }

    pub fn knowledge(&self, leaf: usize) -> Result<Arc<Knowledge>, ModelError> {
        let (leaf_model, post) = self.classification_leaf(leaf)?;
        if let LeafPosterior::Independent { points, seen } = &*post {
            let mut k = Knowledge::unknown(*points as usize);
            for (&y, &z) in seen {
                k.set(y, PointStatus::Known(z));
            }
            return Ok(Arc::new(k));
        }
        post.knowledge(leaf_model).ok_or(ModelError::NotClassification { leaf })
    }

    pub fn point_marginal(&self, leaf: usize, y: u64) -> Result<PointStatus, ModelError> {
        let (leaf_model, post) = self.classification_leaf(leaf)?;
        if leaf_model.point_count().is_none_or(|p| y >= p) {
            return Err(ModelError::UniverseMismatch { leaf });
        }
        match &*post {
            LeafPosterior::Independent { seen, .. } => {
                Ok(seen.get(&y).map_or(PointStatus::Unknown, |&z| PointStatus::Known(z)))
            }
            LeafPosterior::Affine { system, .. } => {
                let f = leaf_model.functional(y).ok_or(ModelError::NoCoefficients { leaf })?;
                Ok(system.functional_determined(&f).map_err(|_| ModelError::UniverseMismatch { leaf })?.into())
            }
            _ => Err(ModelError::NotClassification { leaf }),
        }
    }
}

fn absorb_leaf_sample(post: &mut LeafPosterior, leaf_model: &Model, sample: &Sample, leaf: usize) -> Result<bool, ModelError> {
    let units = leaf_model.unit_samples(sample).ok_or(ModelError::UniverseMismatch { leaf })?;
    let mut novel = false;
    for u in &units {
        novel |= post.absorb(leaf_model.unit(), u, leaf)?;
    }
    Ok(novel)
}

impl Belief for PosteriorState {
    fn model(&self) -> &Arc<Model> {
        &self.model
    }

    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError> {
        let leaf_model = self.model.leaf(leaf)?;
        let post = self.leaf(leaf)?;
        Ok(match &*post {
            LeafPosterior::Coin { .. } | LeafPosterior::Dirichlet { .. } => {
                LeafView::Outcomes(Arc::new(post.outcome_means().unwrap_or_default()))
            }
            LeafPosterior::Affine { .. } => {
                LeafView::Labels(LabelView::Knowledge(post.knowledge(leaf_model).unwrap_or_else(|| {
                    Arc::new(Knowledge::unknown(leaf_model.point_count().unwrap_or(0) as usize))
                })))
            }
            LeafPosterior::Independent { seen, .. } => LeafView::Labels(LabelView::Sparse(Arc::new(seen.clone()))),
            LeafPosterior::Gaussian { .. } => {
                let (mean, precision) = post.gaussian_posterior().unwrap_or_default();
                LeafView::Gaussian { mean: Arc::new(mean), variance: 1.0 + 1.0 / precision }
            }
        })
    }
}

pub fn sample_hypothesis(model: Arc<Model>, rng: &mut impl Rng) -> Hypothesis {
    Hypothesis::lazy(model, rng.random())
}

/// `n` i.i.d. samples from `h`, materialized.
pub fn sample_data(h: Arc<Hypothesis>, n: usize, rng: &mut impl Rng) -> Result<Vec<Sample>, ModelError> {
    Dataset::new(h, n, rng.random()).samples()
}

pub fn init_posterior(model: Arc<Model>) -> PosteriorState {
    PosteriorState::new(model)
}

pub fn update_posterior(ps: &PosteriorState, sample: &Sample) -> Result<PosteriorState, ModelError> {
    let mut next = ps.clone();
    next.update(sample)?;
    Ok(next)
}

/// Coefficient vectors of every eligible hypothesis (at most `2^max_free`).
pub fn eligible_coefficients(system: &AffineSystem, max_free: usize) -> Option<Vec<F2Vector>> {
    let sol = system.solve().ok()?;
    if sol.null_basis.len() > max_free {
        return None;
    }
    let mut out = vec![sol.particular.clone()];
    for b in &sol.null_basis {
        let extra: Vec<F2Vector> = out.iter().map(|v| v.xor(b)).collect();
        out.extend(extra);
    }
    out.sort();
    Some(out)
}

/// Outcome of [`two_hypothesis_event`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoHypothesisEvent {
    pub occurred: bool,
    /// Fraction of coordinates where the two survivors differ, when `occurred`.
    pub disagreement: Option<Rational>,
}

/// Draws a codeword and `n` samples, and reports whether exactly two hypotheses remain.
pub fn two_hypothesis_event(code: &LinearCode, n: usize, rng: &mut impl Rng) -> TwoHypothesisEvent {
    let k = code.dimension();
    let m = code.length();
    let bits: Vec<bool> = (0..k).map(|_| rng.random()).collect();
    let word = code.encode(&F2Vector::from_bits(&bits));
    let mut system = AffineSystem::new(k);
    for _ in 0..n {
        if system.rank() == k {
            break;
        }
        let i = rng.random_range(0..m);
        let _ = system.add_constraint(code.column(i), word.get(i));
    }
    if system.free_dimension() != 1 {
        return TwoHypothesisEvent { occurred: false, disagreement: None };
    }
    let diff = match system.solve() {
        Ok(sol) => code.encode(&sol.null_basis[0]),
        Err(_) => return TwoHypothesisEvent { occurred: false, disagreement: None },
    };
    TwoHypothesisEvent {
        occurred: true,
        disagreement: Some(Rational::new(diff.weight().into(), m.into())),
    }
}

/// `2^k` as a big integer, for eligible-count comparisons.
pub fn pow2(k: usize) -> BigUint {
    BigUint::one() << k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::reed_muller;
    use crate::value::ratio;
    use rand::SeedableRng;

    fn arc(m: Model) -> Arc<Model> {
        Arc::new(m)
    }

    #[test]
    fn biased_coin_hypotheses() {
        let model = arc(Model::biased_coin(ratio(1, 10)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..64 {
            let h = sample_hypothesis(model.clone(), &mut rng);
            if let LeafHypothesis::Coin { heads } = &*h.leaf(0).unwrap() {
                seen.insert(heads.clone());
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![ratio(2, 5), ratio(3, 5)]);
    }

    #[test]
    fn leaf_flattening() {
        let coin = Model::uniform(2).unwrap();
        let j = Model::product(
            Model::linear(3).unwrap(),
            Model::tensor_power(Model::power(coin, 8).unwrap(), 1000).unwrap(),
        );
        assert_eq!(j.leaf_count(), 1001);
        assert!(j.leaf(0).unwrap().is_classification());
        assert_eq!(j.leaf(1000).unwrap().copies(), 8);
        assert!(j.leaf(1001).is_err());
        let tp = Model::tensor_power(Model::uniform(2).unwrap(), 3).unwrap();
        let h = sample_hypothesis(arc(tp), &mut ChaCha8Rng::seed_from_u64(4));
        let ps: Vec<_> = (0..3).map(|i| h.leaf(i).unwrap()).collect();
        assert_ne!(ps[0], ps[1]);
    }

    #[test]
    fn empty_and_constant_data() {
        let model = arc(Model::linear(3).unwrap());
        let h = Arc::new(Hypothesis::from_leaves(model.clone(), vec![LeafHypothesis::from_coefficients(&model, F2Vector::zeros(4))]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_data(h.clone(), 0, &mut rng).unwrap().is_empty());
        let data = sample_data(h, 5, &mut rng).unwrap();
        assert_eq!(data.len(), 5);
        assert!(data.iter().all(|s| matches!(s, Sample::Labeled { label: false, .. })));
    }

    #[test]
    fn code_samples_follow_codeword() {
        let code = reed_muller(3, 1).unwrap();
        let model = arc(Model::code(code.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Arc::new(sample_hypothesis(model.clone(), &mut rng));
        let table = h.leaf(0).unwrap().label_table().unwrap().clone();
        for s in sample_data(h, 50, &mut rng).unwrap() {
            let Sample::Labeled { point, label } = s else { panic!() };
            assert_eq!(table.get(point as usize), label);
        }
    }

    #[test]
    fn eligible_counts_and_marginals() {
        let model = arc(Model::linear(2).unwrap());
        let mut ps = init_posterior(model.clone());
        assert_eq!(ps.eligible_count(0).unwrap(), pow2(3));
        assert_eq!(ps.point_marginal(0, 3).unwrap(), PointStatus::Unknown);
        ps.update(&Sample::Labeled { point: 0, label: false }).unwrap();
        ps.update(&Sample::Labeled { point: 1, label: true }).unwrap();
        assert_eq!(ps.point_marginal(0, 2).unwrap(), PointStatus::Unknown);
        assert_eq!(ps.point_marginal(0, 3).unwrap(), PointStatus::Unknown);
        ps.update(&Sample::Labeled { point: 2, label: true }).unwrap();
        assert_eq!(ps.point_marginal(0, 3).unwrap(), PointStatus::Known(false));
        assert_eq!(ps.eligible_count(0).unwrap(), BigUint::one());
        let k = ps.knowledge(0).unwrap();
        assert_eq!(k.status(3), PointStatus::Known(false));
        assert_eq!(k.status(1), PointStatus::Known(true));
        let before = ps.eligible_count(0).unwrap();
        assert_eq!(ps.update(&Sample::Labeled { point: 1, label: true }).unwrap(), vec![false]);
        assert_eq!(ps.eligible_count(0).unwrap(), before);
        assert_eq!(
            ps.update(&Sample::Labeled { point: 1, label: false }),
            Err(ModelError::Inconsistent { leaf: 0 })
        );
    }

    #[test]
    fn first_lc_sample_halves() {
        let model = arc(Model::linear(4).unwrap());
        let ps = init_posterior(model);
        let next = update_posterior(&ps, &Sample::Labeled { point: 0, label: true }).unwrap();
        assert_eq!(next.eligible_count(0).unwrap(), pow2(4));
        assert_eq!(ps.eligible_count(0).unwrap(), pow2(5));
    }

    #[test]
    fn dirichlet_and_gaussian_posteriors() {
        let ps = init_posterior(arc(Model::uniform(2).unwrap()));
        assert_eq!(ps.leaf(0).unwrap().outcome_means().unwrap(), vec![half(), half()]);
        let mut g = init_posterior(arc(Model::gaussian(1, 1.0).unwrap()));
        g.update(&Sample::Real(vec![0.8])).unwrap();
        let (mean, precision) = g.leaf(0).unwrap().gaussian_posterior().unwrap();
        assert!((mean[0] - 0.4).abs() < 1e-12);
        assert_eq!(precision, 2.0);
    }

    #[test]
    fn code_posterior_starts_with_all_messages() {
        let code = reed_muller(3, 1).unwrap();
        let ps = init_posterior(arc(Model::code(code)));
        assert_eq!(ps.eligible_count(0).unwrap(), pow2(4));
    }

    #[test]
    fn two_hypothesis_event_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let code = reed_muller(3, 1).unwrap();
        assert!(!two_hypothesis_event(&code, 0, &mut rng).occurred);
        let rep = reed_muller(3, 0).unwrap();
        let ev = two_hypothesis_event(&rep, 0, &mut rng);
        assert_eq!(ev, TwoHypothesisEvent { occurred: true, disagreement: Some(Rational::one()) });
        let never = (0..200).filter(|_| two_hypothesis_event(&code, 400, &mut rng).occurred).count();
        assert_eq!(never, 0);
    }

    #[test]
    fn dataset_is_deterministic_and_lazy() {
        let model = arc(Model::tensor_power(Model::power(Model::uniform(2).unwrap(), 8).unwrap(), 50).unwrap());
        let h = Arc::new(Hypothesis::lazy(model.clone(), 11));
        let a = Dataset::new(h.clone(), 4, 5);
        let b = Dataset::new(h, 4, 5);
        assert_eq!(a.leaf_samples(17).unwrap(), b.leaf_samples(17).unwrap());
        assert_eq!(a.digest(), b.digest());
        let ps = PosteriorState::from_dataset(Arc::new(a));
        let LeafPosterior::Dirichlet { counts } = &*ps.leaf(17).unwrap() else { panic!() };
        assert_eq!(counts.iter().sum::<u64>(), 32);
    }
}
