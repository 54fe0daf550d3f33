//! Curator strategies: how the holder of the samples answers each query.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::f2_linalg::F2Vector;
use crate::models::{
    Belief, Dataset, LabelView, LeafPosterior, LeafView, Model, ModelError, PosteriorState, Sample,
};
use crate::partition::{round_to, safe_partition, Partition, PartitionError};
use crate::queries::{
    conditional_expectations, evaluate_with, expectation, p_one, prior_answer_distribution, prior_key, Query,
    QueryError, DEFAULT_RESOLUTION,
};
use crate::seeds::TrialRng;
use crate::value::{from_f64, half, int, opt_rational_serde, rational_serde, to_f64, Rational, Value};

/// Largest coefficient dimension the soft posterior enumerates.
pub const MAX_SOFT_DIMENSION: usize = 20;
/// Largest `2^K * |Y|` the soft posterior accepts.
pub const MAX_SOFT_WORK: u128 = 1 << 28;

#[derive(Debug, Error)]
pub enum CuratorError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("curator cannot answer: {0}")]
    Unsupported(String),
}

fn default_softness() -> Rational {
    half()
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmwFallback {
    PosteriorMean,
    #[default]
    NoisyPosteriorMean,
}

/// Curator strategy and its parameters, as read from a game config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum CuratorSpec {
    PriorMean,
    PosteriorMean,
    EmpiricalMean,
    NoisyPosteriorMean {
        /// Defaults to `sqrt(1 / 4n)`.
        #[serde(default)]
        noise_sd: Option<f64>,
    },
    SmartRounded {
        #[serde(with = "rational_serde")]
        epsilon: Rational,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    Pmw {
        #[serde(with = "rational_serde")]
        epsilon: Rational,
        /// Defaults to `epsilon / 2`.
        #[serde(default, with = "opt_rational_serde")]
        threshold: Option<Rational>,
        /// Defaults to `epsilon / 2`.
        #[serde(default)]
        learning_rate: Option<f64>,
        #[serde(default)]
        noise_sd: Option<f64>,
        #[serde(default)]
        fallback: PmwFallback,
    },
    SoftPosterior {
        #[serde(default = "default_softness", with = "rational_serde")]
        softness: Rational,
    },
    Decomposition,
}

impl CuratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CuratorSpec::PriorMean => "prior_mean",
            CuratorSpec::PosteriorMean => "posterior_mean",
            CuratorSpec::EmpiricalMean => "empirical_mean",
            CuratorSpec::NoisyPosteriorMean { .. } => "noisy_posterior_mean",
            CuratorSpec::SmartRounded { .. } => "smart_rounded",
            CuratorSpec::Pmw { .. } => "pmw",
            CuratorSpec::SoftPosterior { .. } => "soft_posterior",
            CuratorSpec::Decomposition => "decomposition",
        }
    }

    pub fn validate(&self) -> Result<(), CuratorError> {
        let bad = |m: &str| Err(CuratorError::Unsupported(m.to_string()));
        match self {
            CuratorSpec::NoisyPosteriorMean { noise_sd: Some(sd) } if !(*sd >= 0.0) => bad("noise_sd must be >= 0"),
            CuratorSpec::SmartRounded { epsilon, resolution } => {
                if epsilon <= &Rational::zero() || epsilon > &Rational::one() || *resolution == 0 {
                    return bad("smart rounding needs 0 < epsilon <= 1 and a positive resolution");
                }
                Ok(())
            }
            CuratorSpec::Pmw { epsilon, learning_rate, noise_sd, .. } => {
                if epsilon <= &Rational::zero() || learning_rate.is_some_and(|r| !(r >= 0.0)) {
                    return bad("pmw needs epsilon > 0 and a non-negative learning rate");
                }
                if noise_sd.is_some_and(|s| !(s >= 0.0)) {
                    return bad("noise_sd must be >= 0");
                }
                Ok(())
            }
            CuratorSpec::SoftPosterior { softness } => {
                if softness <= &Rational::zero() || softness > &Rational::one() {
                    return bad("softness must lie in (0, 1]");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// How an answer was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Direct,
    Noisy,
    Rounded,
    ProxyRelease,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuratorAnswer {
    pub value: Value,
    pub source: AnswerSource,
}

/// Smart-rounding partitions keyed by everything they depend on. Partitions are a function
/// of the prior and the query only, so one memo may be shared by all trials of a game.
#[derive(Debug, Default)]
pub struct PartitionMemo {
    map: Mutex<HashMap<String, Arc<Partition>>>,
}

impl PartitionMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn partition(
        &self,
        q: &Query,
        model: &Model,
        epsilon: &Rational,
        resolution: usize,
    ) -> Result<Arc<Partition>, CuratorError> {
        let key = format!("{}|{}|{}", prior_key(q, model)?, epsilon, resolution);
        if let Some(p) = self.map.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(p.clone());
        }
        let d = prior_answer_distribution(q, model, resolution)?;
        let p = Arc::new(safe_partition(&d, epsilon)?);
        self.map.lock().unwrap_or_else(|e| e.into_inner()).entry(key).or_insert(p.clone());
        Ok(p)
    }
}

/// Product distribution that answers like the prior on classification leaves whose
/// hypothesis is not yet pinned down, and like the posterior everywhere else.
struct DecomposedBelief<'a> {
    posterior: &'a PosteriorState,
    prior: &'a PosteriorState,
}

impl Belief for DecomposedBelief<'_> {
    fn model(&self) -> &Arc<Model> {
        self.posterior.model()
    }

    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError> {
        if self.model().leaf(leaf)?.is_classification() && self.posterior.eligible_count(leaf)? != One::one() {
            self.prior.leaf_view(leaf)
        } else {
            self.posterior.leaf_view(leaf)
        }
    }
}

/// Posterior with every hypothesis kept, down-weighted by `c` per misclassified sample.
struct SoftBelief<'a> {
    posterior: &'a PosteriorState,
    views: &'a Mutex<HashMap<usize, LeafView>>,
    softness: &'a Rational,
}

impl Belief for SoftBelief<'_> {
    fn model(&self) -> &Arc<Model> {
        self.posterior.model()
    }

    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError> {
        let leaf_model = self.model().leaf(leaf)?;
        if !leaf_model.is_classification() {
            return self.posterior.leaf_view(leaf);
        }
        if let Some(v) = self.views.lock().unwrap_or_else(|e| e.into_inner()).get(&leaf) {
            return Ok(v.clone());
        }
        let counts = label_counts(self.posterior, leaf)?;
        let probs = soft_label_probabilities(leaf_model, &counts, self.softness)?;
        let view = LeafView::Labels(LabelView::Probabilities(Arc::new(probs)));
        self.views.lock().unwrap_or_else(|e| e.into_inner()).insert(leaf, view.clone());
        Ok(view)
    }
}

/// Number of 0- and 1-labels observed at each point of a classification leaf.
fn label_counts(posterior: &PosteriorState, leaf: usize) -> Result<BTreeMap<u64, [u64; 2]>, ModelError> {
    let leaf_model = posterior.model().leaf(leaf)?;
    let mut counts = BTreeMap::new();
    if let Some(data) = posterior.dataset() {
        for s in data.leaf_samples(leaf)?.iter() {
            for u in leaf_model.unit_samples(s).ok_or(ModelError::UniverseMismatch { leaf })? {
                if let Sample::Labeled { point, label } = u {
                    counts.entry(point).or_insert([0u64; 2])[usize::from(label)] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// `P(z = 1 | y)` under weights `c^errors` over every hypothesis of the leaf.
pub fn soft_label_probabilities(
    leaf: &Model,
    counts: &BTreeMap<u64, [u64; 2]>,
    softness: &Rational,
) -> Result<Vec<Rational>, ModelError> {
    let n = leaf.point_count().ok_or(ModelError::NotClassification { leaf: 0 })?;
    let power = |e: u64| num_traits::pow(softness.clone(), e as usize);
    if let Model::IndependentClassification { .. } = leaf.unit() {
        // Points are independent a priori, so the weights factor per point.
        return Ok((0..n)
            .map(|y| match counts.get(&y) {
                None => half(),
                Some([c0, c1]) => {
                    let (w1, w0) = (power(*c0), power(*c1));
                    &w1 / (&w1 + w0)
                }
            })
            .collect());
    }
    let k = leaf.coefficient_dim().ok_or(ModelError::NoCoefficients { leaf: 0 })?;
    if k > MAX_SOFT_DIMENSION || (1u128 << k) * n as u128 > MAX_SOFT_WORK {
        return Err(ModelError::Invalid(format!("soft posterior over {leaf} is too large to enumerate")));
    }
    let size = 1usize << k;
    let index_of = |f: Option<F2Vector>| f.map_or(0, |f| f.to_u64()) as usize;
    // Error count of every coefficient vector.
    let touched: Vec<(usize, [u64; 2])> =
        counts.iter().map(|(&y, &c)| (index_of(leaf.functional(y)), c)).collect();
    let errors: Vec<u64> = (0..size)
        .map(|a| touched.iter().map(|&(f, [c0, c1])| if (a & f).count_ones() % 2 == 1 { c0 } else { c1 }).sum())
        .collect();
    let mut levels: Vec<u64> = errors.clone();
    levels.sort_unstable();
    levels.dedup();
    // For each error level e, the Walsh transform of its indicator gives
    // #{a in level e : <a, f> = 1} = (|level| - W_e(f)) / 2 for every functional f.
    let mut numer = vec![Rational::zero(); n as usize];
    let mut denom = Rational::zero();
    let functionals: Vec<usize> = (0..n).map(|y| index_of(leaf.functional(y))).collect();
    for &e in &levels {
        let mut w: Vec<i64> = errors.iter().map(|&x| i64::from(x == e)).collect();
        let members: i64 = w.iter().sum();
        walsh_hadamard(&mut w);
        let weight = power(e);
        denom += &weight * int(members);
        for (y, &f) in functionals.iter().enumerate() {
            let ones = (members - w[f]) / 2;
            if ones != 0 {
                numer[y] += &weight * int(ones);
            }
        }
    }
    Ok(numer.into_iter().map(|x| x / &denom).collect())
}

fn walsh_hadamard(v: &mut [i64]) {
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Factored proxy distribution of the private multiplicative weights curator.
struct Proxy {
    model: Arc<Model>,
    prior: PosteriorState,
    leaves: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl Proxy {
    fn new(model: Arc<Model>) -> Self {
        Self { prior: PosteriorState::new(model.clone()), model, leaves: Mutex::new(HashMap::new()) }
    }

    fn weights(&self, leaf: usize) -> Result<Arc<Vec<f64>>, ModelError> {
        if let Some(w) = self.leaves.lock().unwrap_or_else(|e| e.into_inner()).get(&leaf) {
            return Ok(w.clone());
        }
        let leaf_model = self.model.leaf(leaf)?;
        let w = match self.prior.leaf_view(leaf)? {
            LeafView::Outcomes(p) => p.iter().map(to_f64).collect(),
            LeafView::OutcomesReal(p) => (*p).clone(),
            LeafView::Labels(lv) => {
                let n = leaf_model.point_count().unwrap_or(0);
                let inv = 1.0 / n as f64;
                (0..n)
                    .flat_map(|y| {
                        let p1 = to_f64(&p_one(&lv, y));
                        [inv * (1.0 - p1), inv * p1]
                    })
                    .collect()
            }
            LeafView::Joint(w) => (*w).clone(),
            LeafView::Gaussian { .. } => {
                return Err(ModelError::Invalid("the weights proxy needs a finite leaf".into()));
            }
        };
        let w = Arc::new(w);
        self.leaves.lock().unwrap_or_else(|e| e.into_inner()).insert(leaf, w.clone());
        Ok(w)
    }

    fn set(&self, leaf: usize, w: Vec<f64>) {
        self.leaves.lock().unwrap_or_else(|e| e.into_inner()).insert(leaf, Arc::new(w));
    }

    /// Total mass of every materialized component, for normalization checks.
    pub fn masses(&self) -> Vec<f64> {
        self.leaves.lock().unwrap_or_else(|e| e.into_inner()).values().map(|w| w.iter().sum()).collect()
    }
}

impl Belief for Proxy {
    fn model(&self) -> &Arc<Model> {
        &self.model
    }

    fn leaf_view(&self, leaf: usize) -> Result<LeafView, ModelError> {
        let w = self.weights(leaf)?;
        Ok(if self.model.leaf(leaf)?.outcome_count().is_some() { LeafView::OutcomesReal(w) } else { LeafView::Joint(w) })
    }
}

/// Draws Laplace(0, scale) by inverting its CDF.
pub fn laplace(scale: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

fn gaussian(sd: f64, rng: &mut impl Rng) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// One curator for one trial: the dataset, its exact posterior and strategy state.
pub struct Curator {
    spec: CuratorSpec,
    data: Arc<Dataset>,
    prior: PosteriorState,
    posterior: PosteriorState,
    rng: TrialRng,
    memo: Arc<PartitionMemo>,
    proxy: Option<Proxy>,
    soft_views: Mutex<HashMap<usize, LeafView>>,
}

impl Curator {
    pub fn new(spec: CuratorSpec, data: Arc<Dataset>, rng: TrialRng, memo: Arc<PartitionMemo>) -> Result<Self, CuratorError> {
        spec.validate()?;
        let model = data.model().clone();
        let proxy = matches!(spec, CuratorSpec::Pmw { .. }).then(|| Proxy::new(model.clone()));
        Ok(Self {
            spec,
            prior: PosteriorState::new(model),
            posterior: PosteriorState::from_dataset(data.clone()),
            data,
            rng,
            memo,
            proxy,
            soft_views: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &CuratorSpec {
        &self.spec
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    fn default_noise_sd(&self) -> f64 {
        (1.0 / (4.0 * self.data.len().max(1) as f64)).sqrt()
    }

    /// Mass of every materialized proxy component.
    pub fn proxy_masses(&self) -> Vec<f64> {
        self.proxy.as_ref().map(Proxy::masses).unwrap_or_default()
    }

    pub fn posterior_mean(&self, q: &Query) -> Result<Value, CuratorError> {
        Ok(expectation(q, &self.posterior)?)
    }

    pub fn empirical_mean(&self, q: &Query) -> Result<Value, CuratorError> {
        let n = self.data.len();
        if n == 0 {
            return Err(CuratorError::Unsupported("empirical mean of an empty dataset".into()));
        }
        let model = self.data.model().clone();
        let mut total = Value::zero();
        let mut columns: HashMap<usize, Arc<Vec<Sample>>> = HashMap::new();
        for leaf in q.touched_leaves(&model)? {
            columns.insert(leaf, self.data.leaf_samples(leaf)?);
        }
        for j in 0..n {
            let v = evaluate_with(q, &model, &|leaf| {
                columns
                    .get(&leaf)
                    .map(|c| c[j].clone())
                    .ok_or_else(|| QueryError::UniverseMismatch(format!("leaf {leaf} not touched")))
            })?;
            total = total.add(&v);
        }
        Ok(total.scale(&Rational::new(BigInt::one(), BigInt::from(n))))
    }

    pub fn answer(&mut self, q: &Query) -> Result<CuratorAnswer, CuratorError> {
        q.validate(self.data.model())?;
        let direct = |value| CuratorAnswer { value, source: AnswerSource::Direct };
        match self.spec.clone() {
            CuratorSpec::PriorMean => Ok(direct(expectation(q, &self.prior)?)),
            CuratorSpec::PosteriorMean => Ok(direct(self.posterior_mean(q)?)),
            CuratorSpec::EmpiricalMean => Ok(direct(self.empirical_mean(q)?)),
            CuratorSpec::NoisyPosteriorMean { noise_sd } => {
                let sd = noise_sd.unwrap_or_else(|| self.default_noise_sd());
                let mean = self.posterior_mean(q)?.to_f64();
                Ok(CuratorAnswer { value: Value::Real(mean + gaussian(sd, &mut self.rng)), source: AnswerSource::Noisy })
            }
            CuratorSpec::SmartRounded { epsilon, resolution } => {
                let partition = self.memo.partition(q, self.data.model(), &epsilon, resolution)?;
                let mean = match self.posterior_mean(q)? {
                    Value::Exact(r) => r,
                    Value::Real(x) => from_f64(x),
                };
                Ok(CuratorAnswer { value: Value::Exact(round_to(&partition, &mean)), source: AnswerSource::Rounded })
            }
            CuratorSpec::Pmw { epsilon, threshold, learning_rate, noise_sd, fallback } => {
                self.answer_pmw(q, &epsilon, threshold, learning_rate, noise_sd, fallback)
            }
            CuratorSpec::SoftPosterior { softness } => {
                let belief = SoftBelief { posterior: &self.posterior, views: &self.soft_views, softness: &softness };
                Ok(direct(expectation(q, &belief)?))
            }
            CuratorSpec::Decomposition => {
                let belief = DecomposedBelief { posterior: &self.posterior, prior: &self.prior };
                Ok(direct(expectation(q, &belief)?))
            }
        }
    }

    fn answer_pmw(
        &mut self,
        q: &Query,
        epsilon: &Rational,
        threshold: Option<Rational>,
        learning_rate: Option<f64>,
        noise_sd: Option<f64>,
        fallback: PmwFallback,
    ) -> Result<CuratorAnswer, CuratorError> {
        let eps = to_f64(epsilon);
        let threshold = threshold.map_or(eps / 2.0, |t| to_f64(&t));
        let rate = learning_rate.unwrap_or(eps / 2.0);
        let proxy = self.proxy.as_ref().ok_or_else(|| CuratorError::Unsupported("no proxy".into()))?;
        let proxy_answer = expectation(q, proxy)?.to_f64();
        let mean = self.posterior_mean(q)?.to_f64();
        let jitter = laplace(threshold / 4.0, &mut self.rng);
        if (proxy_answer - mean).abs() <= threshold + jitter {
            return Ok(CuratorAnswer { value: Value::Real(proxy_answer), source: AnswerSource::ProxyRelease });
        }
        let answer = match fallback {
            PmwFallback::PosteriorMean => mean,
            PmwFallback::NoisyPosteriorMean => {
                let sd = noise_sd.unwrap_or_else(|| self.default_noise_sd());
                mean + gaussian(sd, &mut self.rng)
            }
        };
        let step = rate * (answer - proxy_answer);
        let model = self.data.model().clone();
        let updates = q
            .touched_leaves(&model)?
            .into_iter()
            .map(|leaf| {
                let g = conditional_expectations(q, proxy, leaf)?;
                let w = proxy.weights(leaf)?;
                let mut next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi * (step * gi).exp()).collect();
                let total: f64 = next.iter().sum();
                next.iter_mut().for_each(|x| *x /= total);
                Ok((leaf, next))
            })
            .collect::<Result<Vec<_>, CuratorError>>()?;
        for (leaf, w) in updates {
            proxy.set(leaf, w);
        }
        Ok(CuratorAnswer { value: Value::Real(answer), source: AnswerSource::Fallback })
    }
}

/// Posterior leaf summary used by reports.
pub fn leaf_kind(post: &LeafPosterior) -> &'static str {
    match post {
        LeafPosterior::Coin { .. } => "coin",
        LeafPosterior::Dirichlet { .. } => "dirichlet",
        LeafPosterior::Affine { .. } => "affine",
        LeafPosterior::Independent { .. } => "independent",
        LeafPosterior::Gaussian { .. } => "gaussian",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Hypothesis, LeafHypothesis};
    use crate::seeds::{stream_rng, Stream};
    use crate::value::ratio;

    fn curator(spec: CuratorSpec, model: Model, coefs: Option<&str>, n: usize, seed: u64) -> Curator {
        let model = Arc::new(model);
        let h = match coefs {
            Some(c) => Hypothesis::from_leaves(
                model.clone(),
                vec![LeafHypothesis::from_coefficients(&model, F2Vector::parse(c).unwrap())],
            )
            .unwrap(),
            None => Hypothesis::lazy(model.clone(), seed),
        };
        let data = Arc::new(Dataset::new(Arc::new(h), n, seed));
        Curator::new(spec, data, stream_rng(seed, Stream::Curator), Arc::new(PartitionMemo::new())).unwrap()
    }

    #[test]
    fn prior_mean_point_indicator() {
        let mut c = curator(CuratorSpec::PriorMean, Model::linear(4).unwrap(), Some("10110"), 20, 1);
        let a = c.answer(&Query::PointIndicator { point: 3, label: false }).unwrap();
        assert_eq!(a.value, Value::Exact(ratio(1, 32)));
    }

    #[test]
    fn empirical_mean_constant() {
        let mut c = curator(CuratorSpec::EmpiricalMean, Model::uniform(2).unwrap(), None, 7, 3);
        let a = c.answer(&Query::constant(ratio(2, 7))).unwrap();
        assert_eq!(a.value, Value::Exact(ratio(2, 7)));
    }

    #[test]
    fn noise_zero_is_posterior_mean() {
        let spec = CuratorSpec::NoisyPosteriorMean { noise_sd: Some(0.0) };
        let mut c = curator(spec, Model::linear(3).unwrap(), Some("1100"), 2, 5);
        let q = Query::PointIndicator { point: 1, label: true };
        let mean = c.posterior_mean(&q).unwrap().to_f64();
        assert_eq!(c.answer(&q).unwrap().value, Value::Real(mean));
    }

    #[test]
    fn soft_limits() {
        let q = Query::GraphIndicator { table: F2Vector::parse("01101001").unwrap() };
        let mut one = curator(CuratorSpec::SoftPosterior { softness: int(1) }, Model::linear(3).unwrap(), Some("0111"), 3, 9);
        let prior = expectation(&q, &PosteriorState::new(one.dataset().model().clone())).unwrap();
        assert_eq!(one.answer(&q).unwrap().value, prior);
        let tiny = Rational::new(BigInt::one(), BigInt::from(10u64).pow(30));
        let mut sharp = curator(CuratorSpec::SoftPosterior { softness: tiny }, Model::linear(3).unwrap(), Some("0111"), 3, 9);
        let soft = sharp.answer(&q).unwrap().value.to_f64();
        let post = sharp.posterior_mean(&q).unwrap().to_f64();
        assert!((soft - post).abs() < 1e-20);
    }

    #[test]
    fn pmw_releases_proxy_when_equal_to_prior() {
        let spec = CuratorSpec::Pmw {
            epsilon: ratio(1, 10),
            threshold: None,
            learning_rate: None,
            noise_sd: None,
            fallback: PmwFallback::NoisyPosteriorMean,
        };
        let mut c = curator(spec, Model::linear(3).unwrap(), Some("0000"), 0, 2);
        let a = c.answer(&Query::PointIndicator { point: 2, label: true }).unwrap();
        assert_eq!(a.source, AnswerSource::ProxyRelease);
        assert!((a.value.to_f64() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_scale() {
        let mut rng = stream_rng(11, Stream::Aux);
        let draws: Vec<f64> = (0..200_000).map(|_| laplace(0.5, &mut rng)).collect();
        let mean_abs = draws.iter().map(|x| x.abs()).sum::<f64>() / draws.len() as f64;
        assert!((mean_abs - 0.5).abs() < 0.01);
    }
}
