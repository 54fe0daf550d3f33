//! Worked examples checked against brute-force oracles written independently of the
//! library's fast paths.

use std::collections::BTreeSet;
use std::sync::Arc;

use adagame_core::codes::{min_distance, reed_muller, search_code, CodeError, LinearCode};
use adagame_core::f2_linalg::{
    affine_span_size, in_affine_span, row_reduce, AffineSystem, Determination, F2Matrix, F2Vector,
};
use adagame_core::models::{
    two_hypothesis_event, Dataset, Hypothesis, LeafHypothesis, Model, PointStatus, PosteriorState, Sample,
};
use adagame_core::partition::{audit_partition, audit_safe_point, round_to, safe_partition, DiscreteDistribution, Partition};
use adagame_core::queries::{
    eval_unit, evaluate, posterior_mean, prior_answer_distribution, true_answer, Query, WeightedPoint,
};
use adagame_core::value::{int, ratio, Rational, Value};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(bits: &str) -> F2Vector {
    F2Vector::parse(bits).unwrap()
}

fn all_vectors(len: usize) -> impl Iterator<Item = F2Vector> {
    (0..1u64 << len).map(move |x| F2Vector::from_u64(len, x))
}

fn exact(r: Rational) -> Value {
    Value::Exact(r)
}

// ---------------------------------------------------------------- f2 linear algebra

/// Row space by closing under addition.
fn row_space(rows: &[F2Vector]) -> BTreeSet<u64> {
    let mut space = BTreeSet::from([0u64]);
    for r in rows {
        let add: Vec<u64> = space.iter().map(|s| s ^ r.to_u64()).collect();
        space.extend(add);
    }
    space
}

#[test]
fn row_reduction_examples() {
    let id = F2Matrix::identity(4);
    let r = row_reduce(&id);
    assert_eq!((r.rank, r.pivot_cols.clone()), (4, vec![0, 1, 2, 3]));

    let zero = F2Matrix::zeros(3, 5);
    let r = row_reduce(&zero);
    assert_eq!((r.rank, r.pivot_cols.len()), (0, 0));

    let m = F2Matrix::parse_rows(&["1100", "0110", "1010"]).unwrap();
    let r = row_reduce(&m);
    let space = row_space(m.rows());
    assert_eq!(1usize << r.rank, space.len());
    assert_eq!(r.rank, 2);
    assert_eq!(row_reduce(&r.reduced).reduced, r.reduced);
}

/// Affine span by enumerating every combination with an odd number of terms.
fn brute_affine_span(points: &[F2Vector]) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for mask in 1u64..(1 << points.len()) {
        if mask.count_ones() % 2 == 1 {
            let x = points.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).fold(0, |acc, (_, p)| acc ^ p.to_u64());
            out.insert(x);
        }
    }
    out
}

#[test]
fn affine_span_examples() {
    assert!(in_affine_span(&[v("101")], &v("101")).unwrap());
    let pts = [v("000"), v("100"), v("010")];
    assert!(in_affine_span(&pts, &v("110")).unwrap());
    assert!(brute_affine_span(&pts).contains(&v("110").to_u64()));
    let pts = [v("000"), v("100")];
    assert!(!in_affine_span(&pts, &v("010")).unwrap());
    assert!(!brute_affine_span(&pts).contains(&v("010").to_u64()));
    assert!(in_affine_span(&pts, &v("01")).is_err());

    assert_eq!(affine_span_size(&[v("011")]).unwrap(), BigUint::from(1u32));
    let pts = [v("000"), v("110"), v("011")];
    assert_eq!(affine_span_size(&pts).unwrap(), BigUint::from(brute_affine_span(&pts).len()));
    assert_eq!(affine_span_size(&pts).unwrap(), BigUint::from(4u32));
    let mut simplex = vec![F2Vector::zeros(5)];
    simplex.extend((0..5).map(|i| F2Vector::unit(5, i)));
    assert_eq!(affine_span_size(&simplex).unwrap(), BigUint::from(32u32));
    assert!(affine_span_size(&[]).is_err());
}

#[test]
fn solve_examples() {
    let empty = AffineSystem::new(3);
    assert_eq!(empty.solve().unwrap().null_basis.len(), 3);

    let mut full = AffineSystem::new(3);
    for i in 0..3 {
        full.add_constraint(&F2Vector::unit(3, i), i == 1).unwrap();
    }
    let s = full.solve().unwrap();
    assert!(s.null_basis.is_empty());
    assert_eq!(s.particular, v("010"));

    let mut sys = AffineSystem::new(2);
    sys.add_constraint(&v("11"), true).unwrap();
    let s = sys.solve().unwrap();
    let solutions: Vec<F2Vector> = all_vectors(2).filter(|x| x.dot(&v("11"))).collect();
    assert_eq!(solutions.len(), 1 << s.null_basis.len());
    assert!(solutions.contains(&s.particular));
    assert_eq!(s.null_basis, vec![v("11")]);
}

#[test]
fn determination_examples() {
    let mut sys = AffineSystem::new(2);
    sys.add_constraint(&v("10"), true).unwrap();
    assert_eq!(sys.functional_determined(&v("10")).unwrap(), Determination::Determined(true));
    assert_eq!(sys.functional_determined(&v("00")).unwrap(), Determination::Determined(false));
    for f in [v("01"), v("11")] {
        let values: Vec<bool> = all_vectors(2).filter(|x| sys.satisfied_by(x)).map(|x| x.dot(&f)).collect();
        assert_eq!(values.iter().filter(|&&b| b).count() * 2, values.len());
        assert_eq!(sys.functional_determined(&f).unwrap(), Determination::Undetermined);
    }
}

// ---------------------------------------------------------------- codes

fn brute_min_distance(code: &LinearCode) -> usize {
    all_vectors(code.dimension()).filter(|u| !u.is_zero()).map(|u| code.encode(&u).weight()).min().unwrap()
}

#[test]
fn reed_muller_examples() {
    let rep = reed_muller(3, 0).unwrap();
    assert_eq!((rep.length(), rep.dimension(), brute_min_distance(&rep)), (8, 1, 8));
    let rm21 = reed_muller(2, 1).unwrap();
    assert_eq!((rm21.length(), rm21.dimension(), brute_min_distance(&rm21)), (4, 3, 2));
    let full = reed_muller(3, 3).unwrap();
    assert_eq!((full.dimension(), brute_min_distance(&full)), (8, 1));
    assert!(reed_muller(2, 3).is_err());
}

#[test]
fn min_distance_examples() {
    assert_eq!(min_distance(&reed_muller(4, 1).unwrap()).unwrap(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let code = loop {
        let rows: Vec<F2Vector> = (0..3).map(|_| F2Vector::from_u64(6, rng.random_range(0..64))).collect();
        if let Ok(c) = LinearCode::new(F2Matrix::from_rows(6, rows).unwrap()) {
            break c;
        }
    };
    assert_eq!(min_distance(&code).unwrap(), brute_min_distance(&code));
}

#[test]
fn search_examples() {
    let code = search_code(16, 4, 6, 0, 1 << 16).unwrap();
    assert_eq!((code.length(), code.dimension()), (16, 4));
    assert!(brute_min_distance(&code) >= 6);
    assert!(matches!(search_code(4, 4, 2, 0, 1000), Err(CodeError::NotFound)));
    let rep = search_code(8, 1, 8, 0, 1 << 12).unwrap();
    assert_eq!(brute_min_distance(&rep), 8);
}

// ---------------------------------------------------------------- models

/// Label tables of every eligible hypothesis of a single classification leaf.
fn eligible_tables(model: &Model, samples: &[(u64, bool)]) -> Vec<F2Vector> {
    let k = model.coefficient_dim().unwrap();
    all_vectors(k)
        .filter_map(|a| model.label_table(&a))
        .filter(|t| samples.iter().all(|&(y, z)| t.get(y as usize) == z))
        .collect()
}

fn posterior_from(model: &Arc<Model>, samples: &[(u64, bool)]) -> PosteriorState {
    let mut post = PosteriorState::new(model.clone());
    for &(point, label) in samples {
        post.update(&Sample::Labeled { point, label }).unwrap();
    }
    post
}

#[test]
fn fresh_posterior_counts() {
    for m in 1..=6 {
        let model = Arc::new(Model::linear(m).unwrap());
        let post = PosteriorState::new(model.clone());
        assert_eq!(post.eligible_count(0).unwrap(), BigUint::from(1u64 << (m + 1)));
        assert_eq!(post.eligible_count(0).unwrap(), BigUint::from(eligible_tables(&model, &[]).len()));
    }
    let code = Arc::new(Model::code(reed_muller(4, 1).unwrap()));
    assert_eq!(PosteriorState::new(code).eligible_count(0).unwrap(), BigUint::from(32u32));
    let coin = Arc::new(Model::uniform(2).unwrap());
    let post = PosteriorState::new(coin);
    assert_eq!(post.leaf(0).unwrap().outcome_means().unwrap(), vec![ratio(1, 2), ratio(1, 2)]);
}

#[test]
fn updates_halve_or_keep() {
    let model = Arc::new(Model::linear(3).unwrap());
    let post = posterior_from(&model, &[(0, true)]);
    assert_eq!(post.eligible_count(0).unwrap(), BigUint::from(8u32));
    assert_eq!(eligible_tables(&model, &[(0, true)]).len(), 8);
    let again = posterior_from(&model, &[(0, true), (0, true)]);
    assert_eq!(again.eligible_count(0).unwrap(), BigUint::from(8u32));
}

#[test]
fn gaussian_one_sample_shrinks_by_half() {
    let model = Arc::new(Model::gaussian(1, 1.0).unwrap());
    let mut post = PosteriorState::new(model);
    post.update(&Sample::Real(vec![0.8])).unwrap();
    let (mean, _) = post.leaf(0).unwrap().gaussian_posterior().unwrap();
    assert!((mean[0] - 0.4).abs() < 1e-12);
}

#[test]
fn point_marginals_follow_eligible_tables() {
    let model = Arc::new(Model::linear(2).unwrap());
    let check = |samples: &[(u64, bool)]| {
        let post = posterior_from(&model, samples);
        let tables = eligible_tables(&model, samples);
        for y in 0..4u64 {
            let values: BTreeSet<bool> = tables.iter().map(|t| t.get(y as usize)).collect();
            let expected = if values.len() == 1 { PointStatus::Known(*values.first().unwrap()) } else { PointStatus::Unknown };
            assert_eq!(post.point_marginal(0, y).unwrap(), expected, "y={y} after {samples:?}");
        }
    };
    check(&[]);
    check(&[(0, false), (2, true)]);
    check(&[(0, false), (2, true), (1, true)]);
    let post = posterior_from(&model, &[(0, false), (2, true)]);
    assert_eq!(post.point_marginal(0, 1).unwrap(), PointStatus::Unknown);
    assert_eq!(post.point_marginal(0, 3).unwrap(), PointStatus::Unknown);
    let post = posterior_from(&model, &[(0, false), (2, true), (1, true)]);
    assert!(matches!(post.point_marginal(0, 3).unwrap(), PointStatus::Known(_)));
}

#[test]
fn sample_support() {
    let model = Arc::new(Model::linear(4).unwrap());
    let zero = LeafHypothesis::from_coefficients(&model, F2Vector::zeros(5));
    let h = Arc::new(Hypothesis::from_leaves(model.clone(), vec![zero]).unwrap());
    let data = Dataset::new(h, 5, 1);
    assert!(data.samples().unwrap().iter().all(|s| matches!(s, Sample::Labeled { label: false, .. })));
    assert!(Dataset::new(Arc::new(Hypothesis::lazy(model, 1)), 0, 1).samples().unwrap().is_empty());

    let code = reed_muller(3, 1).unwrap();
    let cm = Arc::new(Model::code(code.clone()));
    let u = v("1011");
    let h = Arc::new(Hypothesis::from_leaves(cm.clone(), vec![LeafHypothesis::from_coefficients(&cm, u.clone())]).unwrap());
    let word = code.encode(&u);
    for s in Dataset::new(h, 40, 2).samples().unwrap() {
        let Sample::Labeled { point, label } = s else { panic!("labeled sample expected") };
        assert_eq!(label, word.get(point as usize));
    }
}

#[test]
fn biased_coin_and_linear_priors() {
    let coin = Arc::new(Model::biased_coin(ratio(1, 10)).unwrap());
    let mut seen = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..64 {
        if let LeafHypothesis::Coin { heads } = LeafHypothesis::draw(&coin, &mut rng) {
            seen.insert(heads.to_string());
        }
    }
    assert_eq!(seen, BTreeSet::from(["2/5".to_string(), "3/5".to_string()]));

    let lc = Model::linear(3).unwrap();
    let mut counts = vec![0u32; 16];
    for _ in 0..16_000 {
        if let LeafHypothesis::Labels { coefficients: Some(c), .. } = LeafHypothesis::draw(&lc, &mut rng) {
            counts[c.to_u64() as usize] += 1;
        }
    }
    assert!(counts.iter().all(|&c| (800..1200).contains(&c)), "{counts:?}");
}

#[test]
fn two_hypothesis_event_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rm = reed_muller(4, 1).unwrap();
    assert!(!two_hypothesis_event(&rm, 0, &mut rng).occurred);
    let rep = reed_muller(3, 0).unwrap();
    let e = two_hypothesis_event(&rep, 0, &mut rng);
    assert!(e.occurred);
    assert_eq!(e.disagreement, Some(int(1)));
    let rare = (0..2000).filter(|_| two_hypothesis_event(&rm, 200, &mut rng).occurred).count();
    assert_eq!(rare, 0);
}

// ---------------------------------------------------------------- queries

#[test]
fn evaluation_examples() {
    let table = v("0110");
    let q = Query::GraphIndicator { table: table.clone() };
    for y in 0..4u64 {
        let s = Sample::Labeled { point: y, label: table.get(y as usize) };
        assert_eq!(eval_unit(&q, &s).unwrap(), exact(int(1)));
    }
    let t = Query::TernaryEncoding { points: vec![5, 2, 7] };
    assert_eq!(eval_unit(&t, &Sample::Labeled { point: 2, label: true }).unwrap(), exact(ratio(2, 9)));
    assert_eq!(eval_unit(&t, &Sample::Labeled { point: 2, label: false }).unwrap(), exact(int(0)));

    let model = Model::product(Model::linear(2).unwrap(), Model::power(Model::uniform(2).unwrap(), 8).unwrap());
    let c = ratio(15, 17);
    let dm = Query::DiagonalMix { label_leaf: 0, probe: 1, coin: 1, copy: 3, coefficient: c.clone() };
    let coins = Sample::Outcomes(vec![0, 0, 0, 1, 0, 0, 0, 0]);
    let at = |point, label| Sample::Tuple(vec![Sample::Labeled { point, label }, coins.clone()]);
    assert_eq!(evaluate(&dm, &model, &at(1, true)).unwrap(), exact(c));
    assert_eq!(evaluate(&dm, &model, &at(1, false)).unwrap(), exact(int(0)));
    assert_eq!(evaluate(&dm, &model, &at(2, false)).unwrap(), exact(int(1)));
}

fn lc_hypothesis(model: &Arc<Model>, coefficients: &str) -> Hypothesis {
    Hypothesis::from_leaves(model.clone(), vec![LeafHypothesis::from_coefficients(model, v(coefficients))]).unwrap()
}

#[test]
fn graph_indicator_true_answers() {
    let model = Arc::new(Model::linear(3).unwrap());
    let own = model.label_table(&v("1010")).unwrap();
    let q = Query::GraphIndicator { table: own.clone() };
    for a in all_vectors(4) {
        let h = lc_hypothesis(&model, &a.to_string());
        let table = model.label_table(&a).unwrap();
        let agree = (0..8).filter(|&y| table.get(y) == own.get(y)).count();
        assert_eq!(true_answer(&q, &h).unwrap(), exact(ratio(agree as i64, 8)));
        let expected = if table == own {
            int(1)
        } else if table.xor(&own).weight() == 8 {
            int(0)
        } else {
            ratio(1, 2)
        };
        assert_eq!(true_answer(&q, &h).unwrap(), exact(expected));
    }
}

#[test]
fn posterior_mean_examples() {
    for m in 1..=8 {
        let model = Arc::new(Model::linear(m).unwrap());
        let post = PosteriorState::new(model);
        let q = Query::PointIndicator { point: 3 % (1 << m), label: true };
        assert_eq!(posterior_mean(&q, &post).unwrap(), exact(Rational::new(1.into(), (1u64 << (m + 1)).into())));
    }
    // Samples at 0, e_1, e_2, e_3 on LC(4) leave exactly two eligible hypotheses.
    let model = Arc::new(Model::linear(4).unwrap());
    let samples = [(0, true), (1, false), (2, true), (4, false)];
    let post = posterior_from(&model, &samples);
    assert_eq!(post.eligible_count(0).unwrap(), BigUint::from(2u32));
    let tables = eligible_tables(&model, &samples);
    let q = Query::GraphIndicator { table: tables[0].clone() };
    assert_eq!(posterior_mean(&q, &post).unwrap(), exact(ratio(3, 4)));
}

#[test]
fn independent_regularization_identity() {
    let points = 40u64;
    let model = Arc::new(Model::independent(points).unwrap());
    let seen = [(3, true), (7, false), (3, true), (11, true), (20, false)];
    let post = posterior_from(&model, &seen);
    let table = F2Vector::from_bits(&(0..points).map(|y| y % 3 == 0).collect::<Vec<_>>());
    let distinct: BTreeSet<(u64, bool)> = seen.iter().copied().collect();
    let agree = distinct.iter().filter(|&&(y, z)| table.get(y as usize) == z).count() as i64;
    let n_seen = distinct.len() as i64;
    let expected = ratio(points as i64 - n_seen, 2 * points as i64) + ratio(agree, points as i64);
    assert_eq!(posterior_mean(&Query::GraphIndicator { table }, &post).unwrap(), exact(expected));
}

#[test]
fn prior_answer_distribution_examples() {
    let coin = Model::biased_coin(ratio(1, 10)).unwrap();
    let d = prior_answer_distribution(&Query::CoinProjection { coin: 0, copy: 0 }, &coin, 4096).unwrap();
    assert_eq!(d.atoms().to_vec(), vec![(ratio(2, 5), ratio(1, 2)), (ratio(3, 5), ratio(1, 2))]);

    let lc = Model::linear(2).unwrap();
    let own = lc.label_table(&v("011")).unwrap();
    let q = Query::GraphIndicator { table: own };
    let d = prior_answer_distribution(&q, &lc, 4096).unwrap();
    let mut oracle = std::collections::BTreeMap::<Rational, i64>::new();
    let lc_arc = Arc::new(lc);
    for a in all_vectors(3) {
        let h = lc_hypothesis(&lc_arc, &a.to_string());
        *oracle.entry(true_answer(&q, &h).unwrap().to_rational()).or_default() += 1;
    }
    let oracle: Vec<(Rational, Rational)> = oracle.into_iter().map(|(x, c)| (x, ratio(c, 8))).collect();
    assert_eq!(d.atoms().to_vec(), oracle);
}

// ---------------------------------------------------------------- partition

#[test]
fn rounding_examples() {
    let p = Partition::from_boundaries(vec![int(0), ratio(1, 2), int(1)], ratio(1, 2));
    assert_eq!(round_to(&p, &ratio(3, 10)), ratio(1, 4));
    assert_eq!(round_to(&p, &ratio(1, 2)), ratio(3, 4));
}

#[test]
fn safe_point_examples() {
    let two = DiscreteDistribution::normalized(vec![(ratio(1, 5), int(1)), (ratio(4, 5), int(1))]).unwrap();
    assert!(audit_safe_point(&two, &ratio(1, 2)).is_empty());
    let grid = DiscreteDistribution::normalized((0..100).map(|i| (ratio(2 * i + 1, 200), int(1))).collect()).unwrap();
    assert!(audit_safe_point(&grid, &ratio(1, 2)).is_empty());
}

#[test]
fn partition_examples() {
    let grid = DiscreteDistribution::normalized((0..1000).map(|i| (ratio(2 * i + 1, 2000), int(1))).collect()).unwrap();
    let p = safe_partition(&grid, &ratio(1, 10)).unwrap();
    assert!(audit_partition(&grid, &p).is_empty());
    assert!((10..=31).contains(&p.boundaries().len()), "{} boundaries", p.boundaries().len());

    let atom = DiscreteDistribution::normalized(vec![(ratio(1, 2), int(1))]).unwrap();
    let p = safe_partition(&atom, &ratio(3, 10)).unwrap();
    assert!(audit_partition(&atom, &p).is_empty());
    assert!(p.interior().iter().all(|b| b != &ratio(1, 2)));

    // Mass only near 0 leaves most blocks empty; their boundaries still keep widths in range.
    let corner = DiscreteDistribution::normalized(vec![(ratio(1, 100), int(1))]).unwrap();
    let p = safe_partition(&corner, &ratio(1, 10)).unwrap();
    assert!(audit_partition(&corner, &p).is_empty());
    assert_eq!(safe_partition(&corner, &ratio(1, 10)).unwrap(), p);
}

// ---------------------------------------------------------------- weighted points

#[test]
fn weighted_points_evaluate_to_their_weights() {
    let q = Query::WeightedPoints {
        entries: vec![
            WeightedPoint { point: 1, label: true, weight: ratio(3, 16) },
            WeightedPoint { point: 2, label: false, weight: ratio(1, 2) },
        ],
    };
    assert_eq!(eval_unit(&q, &Sample::Labeled { point: 1, label: true }).unwrap(), exact(ratio(3, 16)));
    assert_eq!(eval_unit(&q, &Sample::Labeled { point: 2, label: true }).unwrap(), exact(int(0)));
}
