//! Property tests for the structural invariants of every module.

use std::collections::BTreeSet;
use std::sync::Arc;

use adagame_core::codes::{min_distance, reed_muller, CodeError, LinearCode};
use adagame_core::curators::{Curator, CuratorSpec, PartitionMemo, PmwFallback};
use adagame_core::engine::verify::{brute_force_posterior_mean, random_distribution, random_small_classification};
use adagame_core::engine::{Game, GameConfig};
use adagame_core::f2_linalg::{row_reduce, AffineSystem, Determination, F2Matrix, F2Vector};
use adagame_core::models::{Dataset, Hypothesis, LeafHypothesis, Model, PosteriorState, Sample};
use adagame_core::partition::{audit_partition, audit_safe_point, round_to, safe_partition, safe_point};
use adagame_core::queries::{eval_unit, evaluate, posterior_mean, random_query, Query};
use adagame_core::seeds::{stream_rng, Stream};
use adagame_core::value::{int, ratio, Rational, Value};
use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vector(len: usize, rng: &mut impl Rng) -> F2Vector {
    F2Vector::from_bits(&(0..len).map(|_| rng.random::<bool>()).collect::<Vec<_>>())
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_counts_match_enumeration(seed in any::<u64>(), cols in 1usize..=12, rows in 0usize..16) {
        let mut r = rng(seed);
        let hidden = random_vector(cols, &mut r);
        let mut sys = AffineSystem::new(cols);
        let mut constraints = Vec::new();
        for _ in 0..rows {
            let f = random_vector(cols, &mut r);
            let value = f.dot(&hidden);
            sys.add_constraint(&f, value).unwrap();
            constraints.push((f, value));
        }
        let solutions: Vec<F2Vector> = (0..1u64 << cols)
            .map(|x| F2Vector::from_u64(cols, x))
            .filter(|x| constraints.iter().all(|(f, v)| x.dot(f) == *v))
            .collect();
        prop_assert_eq!(sys.solution_count(), BigUint::from(solutions.len()));
        let s = sys.solve().unwrap();
        prop_assert_eq!(1usize << s.null_basis.len(), solutions.len());
        prop_assert!(sys.satisfied_by(&s.particular));

        let probe = random_vector(cols, &mut r);
        let values: BTreeSet<bool> = solutions.iter().map(|x| x.dot(&probe)).collect();
        match sys.functional_determined(&probe).unwrap() {
            Determination::Determined(v) => prop_assert_eq!(values, BTreeSet::from([v])),
            Determination::Undetermined => {
                let ones = solutions.iter().filter(|x| x.dot(&probe)).count();
                prop_assert_eq!(2 * ones, solutions.len());
            }
        }
    }

    #[test]
    fn adding_constraints_never_grows_the_solution_set(seed in any::<u64>(), cols in 1usize..=20) {
        let mut r = rng(seed);
        let hidden = random_vector(cols, &mut r);
        let mut sys = AffineSystem::new(cols);
        let mut previous = sys.solution_count();
        for _ in 0..cols + 4 {
            let f = random_vector(cols, &mut r);
            sys.add_constraint(&f, f.dot(&hidden)).unwrap();
            let now = sys.solution_count();
            prop_assert!(now == previous || &now * 2u32 == previous);
            previous = now;
        }
    }

    #[test]
    fn row_reduction_is_idempotent_and_permutation_invariant(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..14) {
        let mut r = rng(seed);
        let vectors: Vec<F2Vector> = (0..rows).map(|_| random_vector(cols, &mut r)).collect();
        let m = F2Matrix::from_rows(cols, vectors.clone()).unwrap();
        let once = row_reduce(&m);
        prop_assert_eq!(&row_reduce(&once.reduced).reduced, &once.reduced);
        let mut shuffled = vectors;
        shuffled.reverse();
        prop_assert_eq!(row_reduce(&F2Matrix::from_rows(cols, shuffled).unwrap()).rank, once.rank);
    }

    #[test]
    fn reed_muller_parameters(vars in 1usize..=5, degree in 0usize..=5) {
        prop_assume!(degree <= vars);
        let code = reed_muller(vars, degree).unwrap();
        let dim: usize = (0..=degree).map(|i| binomial(vars, i)).sum();
        prop_assert_eq!(code.dimension(), dim);
        prop_assert_eq!(code.generator().n_rows(), dim);
        match min_distance(&code) {
            Ok(d) => prop_assert_eq!(d, 1 << (vars - degree)),
            Err(CodeError::DimensionTooLarge(k)) => prop_assert!(k > 24 && k == dim),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn codewords_are_closed_under_addition(seed in any::<u64>()) {
        let mut r = rng(seed);
        let code = reed_muller(r.random_range(2..=4), r.random_range(0..=2)).unwrap();
        let k = code.dimension();
        let words: BTreeSet<F2Vector> = (0..1u64 << k.min(10)).map(|u| code.encode(&F2Vector::from_u64(k, u))).collect();
        for _ in 0..20 {
            let a = code.encode(&random_vector(k, &mut r));
            let b = code.encode(&random_vector(k, &mut r));
            let sum = a.xor(&b);
            if k <= 10 {
                prop_assert!(words.contains(&sum));
            }
        }
    }

    #[test]
    fn eligible_count_tracks_novel_samples(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = Arc::new(random_small_classification(&mut r));
        prop_assume!(model.coefficient_dim().is_some());
        let k = model.coefficient_dim().unwrap();
        let h = LeafHypothesis::draw(&model, &mut r);
        let mut post = PosteriorState::new(model.clone());
        let mut seen = Vec::new();
        for _ in 0..k + 3 {
            let s = h.draw_sample(&model, &mut r);
            let Sample::Labeled { point, label } = s else { unreachable!() };
            seen.push((point, label));
            post.update(&s).unwrap();
            let brute = (0..1u64 << k)
                .filter_map(|a| model.label_table(&F2Vector::from_u64(k, a)))
                .filter(|t| seen.iter().all(|&(y, z)| t.get(y as usize) == z))
                .count();
            prop_assert_eq!(post.eligible_count(0).unwrap(), BigUint::from(brute));
            prop_assert!(brute.is_power_of_two());
        }
    }

    #[test]
    fn knowledge_map_matches_pointwise_determination(seed in any::<u64>(), vars in 1u32..=8, n in 0usize..12) {
        let mut r = rng(seed);
        let model = Arc::new(Model::linear(vars).unwrap());
        let h = LeafHypothesis::draw(&model, &mut r);
        let mut post = PosteriorState::new(model.clone());
        for _ in 0..n {
            post.update(&h.draw_sample(&model, &mut r)).unwrap();
        }
        let k = post.knowledge(0).unwrap();
        for y in 0..1u64 << vars {
            prop_assert_eq!(k.status(y), post.point_marginal(0, y).unwrap());
        }
        let LeafHypothesis::Labels { table, coefficients: Some(c) } = &h else { unreachable!() };
        for y in 0..1u64 << vars {
            prop_assert_eq!(table.get(y as usize), model.functional(y).unwrap().dot(c));
        }
    }

    #[test]
    fn posterior_mean_equals_enumeration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = Arc::new(random_small_classification(&mut r));
        let h = LeafHypothesis::draw(&model, &mut r);
        let mut post = PosteriorState::new(model.clone());
        let mut seen = Vec::new();
        for _ in 0..r.random_range(0..10) {
            let s = h.draw_sample(&model, &mut r);
            if let Sample::Labeled { point, label } = s {
                seen.push((point, label));
            }
            post.update(&s).unwrap();
        }
        let q = random_query(model.point_count().unwrap(), &mut r);
        let fast = posterior_mean(&q, &post).unwrap();
        prop_assert_eq!(fast, Value::Exact(brute_force_posterior_mean(&model, &seen, &q).unwrap()));
    }

    #[test]
    fn dirichlet_posterior_mean_is_add_one(seed in any::<u64>(), outcomes in 2u32..=6, n in 0usize..40) {
        let mut r = rng(seed);
        let model = Arc::new(Model::uniform(outcomes).unwrap());
        let mut post = PosteriorState::new(model);
        let mut counts = vec![0i64; outcomes as usize];
        for _ in 0..n {
            let o = r.random_range(0..outcomes);
            counts[o as usize] += 1;
            post.update(&Sample::Outcome(o)).unwrap();
        }
        let expected: Vec<Rational> =
            counts.iter().map(|&c| ratio(c + 1, n as i64 + outcomes as i64)).collect();
        prop_assert_eq!(post.leaf(0).unwrap().outcome_means().unwrap(), expected);
    }

    #[test]
    fn gaussian_posterior_mean_is_shrunk_empirical_mean(seed in any::<u64>(), n in 1usize..50, variance in 0.25f64..4.0) {
        let mut r = rng(seed);
        let model = Arc::new(Model::gaussian(3, variance).unwrap());
        let mut post = PosteriorState::new(model);
        let mut sum = [0.0f64; 3];
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
            sum.iter_mut().zip(&x).for_each(|(s, xi)| *s += xi);
            post.update(&Sample::Real(x)).unwrap();
        }
        let (mean, _) = post.leaf(0).unwrap().gaussian_posterior().unwrap();
        let shrink = n as f64 / (n as f64 + 1.0 / variance);
        for i in 0..3 {
            prop_assert!((mean[i] - shrink * sum[i] / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn product_posteriors_factor(seed in any::<u64>()) {
        let mut r = rng(seed);
        let left = Model::linear(3).unwrap();
        let right = Model::uniform(3).unwrap();
        let product = Arc::new(Model::product(left.clone(), right.clone()));
        let mut joint = PosteriorState::new(product.clone());
        let mut l = PosteriorState::new(Arc::new(left.clone()));
        let mut rr = PosteriorState::new(Arc::new(right.clone()));
        let hl = LeafHypothesis::draw(&left, &mut r);
        let hr = LeafHypothesis::draw(&right, &mut r);
        for _ in 0..6 {
            let a = hl.draw_sample(&left, &mut r);
            let b = hr.draw_sample(&right, &mut r);
            joint.update(&Sample::Tuple(vec![a.clone(), b.clone()])).unwrap();
            l.update(&a).unwrap();
            rr.update(&b).unwrap();
        }
        prop_assert_eq!(joint.eligible_count(0).unwrap(), l.eligible_count(0).unwrap());
        prop_assert_eq!(joint.leaf(1).unwrap().outcome_means(), rr.leaf(0).unwrap().outcome_means());
    }

    #[test]
    fn every_query_maps_into_the_unit_interval(seed in any::<u64>()) {
        let mut r = rng(seed);
        let points = 1u64 << r.random_range(1..=6);
        let q = random_query(points, &mut r);
        for y in 0..points {
            for z in [false, true] {
                let v = eval_unit(&q, &Sample::Labeled { point: y, label: z }).unwrap().to_rational();
                prop_assert!(v >= Rational::zero() && v <= Rational::one());
            }
        }
        let model = Model::product(Model::linear(2).unwrap(), Model::power(Model::uniform(2).unwrap(), 8).unwrap());
        let c = ratio(r.random_range(0..=16), 16);
        let dm = Query::DiagonalMix { label_leaf: 0, probe: r.random_range(0..4), coin: 1, copy: r.random_range(0..8), coefficient: c };
        let coins: Vec<u8> = (0..8).map(|_| r.random_range(0..2)).collect();
        let s = Sample::Tuple(vec![Sample::Labeled { point: r.random_range(0..4), label: r.random() }, Sample::Outcomes(coins)]);
        let v = evaluate(&dm, &model, &s).unwrap().to_rational();
        prop_assert!(v >= Rational::zero() && v <= Rational::one());
    }

    #[test]
    fn safe_points_and_partitions_pass_their_audits(seed in any::<u64>(), eps_index in 0usize..3) {
        let mut r = rng(seed);
        let d = random_distribution(&mut r, 50);
        let x = safe_point(&d);
        prop_assert!(audit_safe_point(&d, &x).is_empty());
        let eps = [ratio(1, 20), ratio(1, 10), ratio(3, 10)][eps_index].clone();
        let p = safe_partition(&d, &eps).unwrap();
        prop_assert!(audit_partition(&d, &p).is_empty());
        prop_assert_eq!(&safe_partition(&d, &eps).unwrap(), &p);
        let interior = p.interior();
        for w in interior.windows(2) {
            let width = &w[1] - &w[0];
            prop_assert!(width > &eps / int(3) && width < eps);
        }
        for _ in 0..10 {
            let v = ratio(r.random_range(0..=1000), 1000);
            let rounded = round_to(&p, &v);
            prop_assert!((rounded - &v).abs() < eps);
        }
    }

    #[test]
    fn smart_rounding_error_below_half_epsilon(seed in any::<u64>()) {
        let mut r = rng(seed);
        let eps = ratio(r.random_range(1..=6), 20);
        let model = Arc::new(Model::linear(r.random_range(2..=5)).unwrap());
        let h = Arc::new(Hypothesis::lazy(model.clone(), seed));
        let data = Arc::new(Dataset::new(h, r.random_range(0..6), seed));
        let spec = CuratorSpec::SmartRounded { epsilon: eps.clone(), resolution: 1024 };
        let mut c = Curator::new(spec, data, stream_rng(seed, Stream::Curator), Arc::new(PartitionMemo::new())).unwrap();
        let q = random_query(model.point_count().unwrap(), &mut r);
        let a = c.answer(&q).unwrap();
        let mean = c.posterior_mean(&q).unwrap();
        prop_assert!(a.value.abs_diff(&mean).lt(&(&eps / int(2))));
    }

    #[test]
    fn pmw_proxy_stays_normalized(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = Model::product(
            Model::linear(3).unwrap(),
            Model::tensor_power(Model::power(Model::uniform(2).unwrap(), 4).unwrap(), 12).unwrap(),
        );
        let h = Arc::new(Hypothesis::lazy(Arc::new(model), seed));
        let data = Arc::new(Dataset::new(h, 6, seed));
        let spec = CuratorSpec::Pmw { epsilon: ratio(1, 10), threshold: None, learning_rate: None, noise_sd: None, fallback: PmwFallback::NoisyPosteriorMean };
        let mut c = Curator::new(spec, data, stream_rng(seed, Stream::Curator), Arc::new(PartitionMemo::new())).unwrap();
        for i in 0..12 {
            let q = if r.random() {
                Query::DiagonalMix { label_leaf: 0, probe: r.random_range(0..8), coin: 1 + i, copy: r.random_range(0..4), coefficient: ratio(r.random_range(0..=8), 8) }
            } else {
                Query::component(0, random_query(8, &mut r))
            };
            c.answer(&q).unwrap();
            for mass in c.proxy_masses() {
                prop_assert!((mass - 1.0).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn games_respect_budgets_and_replay_identically(seed in any::<u64>(), which in 0usize..6) {
        let analyst = [
            "strategy = \"affine_span\"",
            "strategy = \"ternary\"",
            "strategy = \"boosting\"\nqueries = 9",
            "strategy = \"random_weighted\"\ncount = 7",
            "strategy = \"averaging\"\nrepeats = 2",
            "strategy = \"static_batch\"\nqueries = [{ type = \"point_indicator\", point = 3, label = true }]",
        ][which];
        let text = format!(
            "n = 5\nepsilon = \"1/8\"\nrecord_queries = true\n[model]\nkind = \"linear\"\nvars = 4\n[curator]\nstrategy = \"noisy_posterior_mean\"\n[analyst]\n{analyst}\n"
        );
        let game = Game::new(GameConfig::from_toml(&text).unwrap()).unwrap();
        let (t1, r1) = game.play(seed).unwrap();
        let (t2, r2) = game.play(seed).unwrap();
        prop_assert!(t1.records.len() <= game.budget());
        prop_assert_eq!(r1.queries, t1.records.len());
        prop_assert_eq!(serde_json::to_string(&t1).unwrap(), serde_json::to_string(&t2).unwrap());
        prop_assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    }
}

/// Probability that `m` uniform points of `F_2^m` are affinely independent.
fn all_novel_probability(m: u32) -> f64 {
    (1..m).map(|i| 1.0 - 2f64.powi(i as i32 - 1) / 2f64.powi(m as i32)).product()
}

#[test]
fn first_samples_all_novel_rate() {
    for m in [6u32, 10] {
        let model = Arc::new(Model::linear(m).unwrap());
        let trials = 100_000u64;
        let hits = (0..trials)
            .filter(|&t| {
                let mut r = rng(t ^ (u64::from(m) << 40));
                let h = LeafHypothesis::draw(&model, &mut r);
                let mut post = PosteriorState::new(model.clone());
                for _ in 0..m {
                    post.update(&h.draw_sample(&model, &mut r)).unwrap();
                }
                post.eligible_count(0).unwrap() == BigUint::from(2u32)
            })
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - all_novel_probability(m)).abs() < 0.01, "m={m}: {rate} vs {}", all_novel_probability(m));
    }
}

#[test]
fn code_search_results_reverify() {
    for seed in 0..4 {
        let code = adagame_core::codes::search_code(12, 3, 5, seed, 1 << 14).unwrap();
        let copy = LinearCode::new(code.generator().clone()).unwrap();
        assert!(min_distance(&copy).unwrap() >= 5);
    }
}
