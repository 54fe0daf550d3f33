//! Safe points and safe partitions of discrete distributions on `[0, 1]`, and rounding
//! to partition midpoints.

use std::ops::{Add, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::value::{half, int, ratio, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("atom position {0} outside [0, 1]")]
    PositionOutOfRange(Rational),
    #[error("atom weight {0} is not positive")]
    NonPositiveWeight(Rational),
    #[error("weights sum to {0}, not 1")]
    NotNormalized(Rational),
    #[error("epsilon {0} outside (0, 1)")]
    BadEpsilon(Rational),
    #[error("cannot parse distribution line {line}: {text:?}")]
    Parse { line: usize, text: String },
}

/// Finitely supported distribution on `[0, 1]` with exact weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteDistribution {
    atoms: Vec<(Rational, Rational)>,
}

impl DiscreteDistribution {
    pub fn empty() -> Self {
        Self { atoms: Vec::new() }
    }

    /// Sorts, merges equal positions, drops nothing. Weights must be positive and sum to 1.
    pub fn new(atoms: Vec<(Rational, Rational)>) -> Result<Self, PartitionError> {
        let d = Self::unnormalized(atoms)?;
        let total = d.total();
        if !total.is_one() {
            return Err(PartitionError::NotNormalized(total));
        }
        Ok(d)
    }

    /// Like [`new`](Self::new) but rescales the weights to sum to 1.
    pub fn normalized(atoms: Vec<(Rational, Rational)>) -> Result<Self, PartitionError> {
        let mut d = Self::unnormalized(atoms)?;
        let total = d.total();
        if !total.is_zero() {
            d.atoms.iter_mut().for_each(|(_, w)| *w /= &total);
        }
        Ok(d)
    }

    fn unnormalized(mut atoms: Vec<(Rational, Rational)>) -> Result<Self, PartitionError> {
        for (p, w) in &atoms {
            if p < &Rational::zero() || p > &Rational::one() {
                return Err(PartitionError::PositionOutOfRange(p.clone()));
            }
            if w <= &Rational::zero() {
                return Err(PartitionError::NonPositiveWeight(w.clone()));
            }
        }
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Rational, Rational)> = Vec::with_capacity(atoms.len());
        for (p, w) in atoms {
            match merged.last_mut() {
                Some((q, v)) if *q == p => *v += w,
                _ => merged.push((p, w)),
            }
        }
        Ok(Self { atoms: merged })
    }

    pub fn atoms(&self) -> &[(Rational, Rational)] {
        &self.atoms
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn total(&self) -> Rational {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    /// Parses `position weight` lines (blank lines and `#` comments ignored) and normalizes.
    pub fn parse(text: &str) -> Result<Self, PartitionError> {
        let mut atoms = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || PartitionError::Parse { line: i + 1, text: raw.to_string() };
            let mut parts = line.split_whitespace();
            let (Some(p), Some(w), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            let p = crate::value::parse_rational(p).map_err(|_| bad())?;
            let w = crate::value::parse_rational(w).map_err(|_| bad())?;
            atoms.push((p, w));
        }
        Self::normalized(atoms)
    }
}

/// Boundaries `0 = x_0 < ... < x_M = 1` and the width parameter they were built for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    boundaries: Vec<Rational>,
    epsilon: Rational,
}

impl Partition {
    pub fn from_boundaries(boundaries: Vec<Rational>, epsilon: Rational) -> Self {
        Self { boundaries, epsilon }
    }

    pub fn boundaries(&self) -> &[Rational] {
        &self.boundaries
    }

    /// The chosen boundaries, without the fixed ends 0 and 1.
    pub fn interior(&self) -> &[Rational] {
        let n = self.boundaries.len();
        if n <= 2 {
            &[]
        } else {
            &self.boundaries[1..n - 1]
        }
    }

    pub fn epsilon(&self) -> &Rational {
        &self.epsilon
    }
}

/// Integer arithmetic used by the safe-point search.
trait Int: Clone + Ord + Add<Output = Self> + Sub<Output = Self> {
    fn halve(&self) -> Self;
    fn twice(&self) -> Self;
    fn zero() -> Self;
}

impl Int for i128 {
    fn halve(&self) -> Self {
        self / 2
    }
    fn twice(&self) -> Self {
        self * 2
    }
    fn zero() -> Self {
        0
    }
}

impl Int for BigInt {
    fn halve(&self) -> Self {
        self / 2
    }
    fn twice(&self) -> Self {
        self * 2
    }
    fn zero() -> Self {
        <BigInt as Zero>::zero()
    }
}

/// Both one-sided closed masses within every critical distance are at most twice it.
fn passes<T: Int>(pos: &[T], weight: &[T], x: &T) -> bool {
    let split = pos.partition_point(|p| p < x);
    if split < pos.len() && pos[split] == *x {
        return false;
    }
    let mut mass = T::zero();
    for i in (0..split).rev() {
        mass = mass + weight[i].clone();
        if mass > (x.clone() - pos[i].clone()).twice() {
            return false;
        }
    }
    let mut mass = T::zero();
    for i in split..pos.len() {
        mass = mass + weight[i].clone();
        if mass > (pos[i].clone() - x.clone()).twice() {
            return false;
        }
    }
    true
}

/// Smallest passing candidate inside `(0, 1)`; the closed ends are a last resort, needed
/// only when a heavy atom sits near the middle.
fn search<T: Int>(pos: &[T], weight: &[T], one: &T) -> Option<T> {
    let zero = T::zero();
    let s = pos.len();
    let mut candidates = Vec::with_capacity(s * (s + 1));
    for i in 0..s {
        let mut run = T::zero();
        for j in i..s {
            run = run + weight[j].clone();
            let h = run.halve();
            let left = pos[i].clone() + h.clone();
            let right = pos[j].clone() - h;
            for c in [left, right] {
                if c > zero && c < *one {
                    candidates.push(c);
                }
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    candidates
        .into_iter()
        .chain([zero, one.clone()])
        .find(|c| passes(pos, weight, c))
}

/// Smallest candidate `x` in `(0, 1)` with every one-sided closed mass within distance `eta`
/// at most `2 eta`, falling back to `0` or `1` when no interior point qualifies (a single
/// atom at `1/2`). The empty distribution gives `1/2`.
pub fn safe_point(d: &DiscreteDistribution) -> Rational {
    if d.atoms.is_empty() {
        return half();
    }
    let denom = d
        .atoms
        .iter()
        .fold(BigInt::one(), |acc, (p, w)| acc.lcm(p.denom()).lcm(w.denom()));
    let scale: BigInt = &denom * 2;
    let scaled = |r: &Rational| r.numer() * (&scale / r.denom());
    let pos: Vec<BigInt> = d.atoms.iter().map(|(p, _)| scaled(p)).collect();
    let weight: Vec<BigInt> = d.atoms.iter().map(|(_, w)| scaled(w)).collect();
    let total: BigInt = weight.iter().sum();
    let fits = scale.bits() + total.bits() + 4 < 120 && pos.iter().all(|p| p.bits() < 116);
    let found = if fits {
        let as_i = |v: &BigInt| v.to_i128().unwrap_or_default();
        let pos_i: Vec<i128> = pos.iter().map(as_i).collect();
        let w_i: Vec<i128> = weight.iter().map(as_i).collect();
        search(&pos_i, &w_i, &as_i(&scale)).map(BigInt::from)
    } else {
        search(&pos, &weight, &scale)
    };
    match found {
        Some(x) => Rational::new(x, scale),
        None => {
            debug_assert!(false, "no safe point among the candidates");
            half()
        }
    }
}

/// Builds a partition whose interior boundaries carry little mass of `d` nearby: blocks
/// of width `epsilon/3` at pitch `2 epsilon/3`, with mass between blocks pushed to the
/// nearer block edge, and one safe point per block.
pub fn safe_partition(d: &DiscreteDistribution, epsilon: &Rational) -> Result<Partition, PartitionError> {
    if epsilon <= &Rational::zero() || epsilon >= &Rational::one() {
        return Err(PartitionError::BadEpsilon(epsilon.clone()));
    }
    let third = epsilon / int(3);
    let pitch = &third * int(2);
    // Blocks i with (2i + 1) epsilon / 3 <= 1.
    let last = ((Rational::one() / &third - Rational::one()) / int(2)).floor().to_integer();
    let blocks = last.to_usize().unwrap_or(0) + 1;
    let mut per_block: Vec<Vec<(Rational, Rational)>> = vec![Vec::new(); blocks];
    let three_quarters = ratio(3, 4);
    for (p, w) in d.atoms() {
        let t = p / &pitch;
        let i = t.floor();
        let f = &t - &i;
        let i = i.to_integer().to_usize().unwrap_or(usize::MAX);
        let (block, local) = if f.is_zero() {
            (i, Rational::zero())
        } else if f < half() {
            (i, f * int(2))
        } else if f < three_quarters {
            (i, Rational::one())
        } else {
            (i.saturating_add(1), Rational::zero())
        };
        if block < blocks {
            per_block[block].push((local, w.clone()));
        }
    }
    let mut boundaries = vec![Rational::zero()];
    for (i, atoms) in per_block.into_iter().enumerate() {
        let local = DiscreteDistribution::normalized(atoms)?;
        let s = safe_point(&local);
        boundaries.push(&pitch * int(i as i64) + s * &third);
    }
    boundaries.push(Rational::one());
    Ok(Partition { boundaries, epsilon: epsilon.clone() })
}

/// Midpoint of the interval `[x_i, x_{i+1})` holding `value` (the last interval is closed).
pub fn round_to(p: &Partition, value: &Rational) -> Rational {
    let b = &p.boundaries;
    if b.len() < 2 {
        return value.clone();
    }
    let idx = b.partition_point(|x| x <= value).clamp(1, b.len() - 1) - 1;
    (&b[idx] + &b[idx + 1]) / int(2)
}

/// Violations of the safe-point condition for `x`, checked at every critical distance.
pub fn audit_safe_point(d: &DiscreteDistribution, x: &Rational) -> Vec<String> {
    let mut out = Vec::new();
    if x < &Rational::zero() || x > &Rational::one() {
        out.push(format!("safe point {x} not in [0,1]"));
    }
    for (p, _) in d.atoms() {
        let eta = (p - x).abs();
        let left: Rational = d.atoms().iter().filter(|(q, _)| q <= x && (x - q) <= eta).map(|(_, w)| w).sum();
        let right: Rational = d.atoms().iter().filter(|(q, _)| q >= x && (q - x) <= eta).map(|(_, w)| w).sum();
        let bound = &eta * int(2);
        if left > bound || right > bound {
            out.push(format!("x={x}: eta={eta} left={left} right={right} exceed {bound}"));
        }
    }
    out
}

/// Violations of the partition guarantees: interior widths in `(eps/3, eps)`, end widths in
/// `(0, eps)`, and, for every critical distance `eta`, the mass of `d` within closed
/// distance `eta` on one side of some interior boundary at most `6 eta / eps`.
pub fn audit_partition(d: &DiscreteDistribution, p: &Partition) -> Vec<String> {
    let mut out = Vec::new();
    let eps = p.epsilon();
    let third = eps / int(3);
    let b = p.boundaries();
    if b.first() != Some(&Rational::zero()) || b.last() != Some(&Rational::one()) {
        out.push("partition must start at 0 and end at 1".to_string());
    }
    let n = b.len();
    for i in 0..n.saturating_sub(1) {
        let w = &b[i + 1] - &b[i];
        let end = i == 0 || i + 2 == n;
        let ok = if end { w > Rational::zero() && &w < eps } else { w > third && &w < eps };
        if !ok {
            out.push(format!("width {w} of interval {i} out of bounds"));
        }
    }
    // The one-sided union masses only jump at each atom's distance to its nearest interior
    // boundary on that side, so checking those distances covers every critical eta.
    let interior = p.interior();
    for (a, _) in d.atoms() {
        if interior.contains(a) {
            out.push(format!("atom {a} sits on a boundary"));
        }
    }
    let nearest = |right_side: bool| -> Vec<(Rational, Rational)> {
        let mut v: Vec<(Rational, Rational)> = d
            .atoms()
            .iter()
            .filter_map(|(a, w)| {
                interior
                    .iter()
                    .filter_map(|y| {
                        let gap = if right_side { a - y } else { y - a };
                        (gap > Rational::zero()).then_some(gap)
                    })
                    .min()
                    .map(|gap| (gap, w.clone()))
            })
            .collect();
        v.sort();
        v
    };
    for (side, gaps) in [("left", nearest(false)), ("right", nearest(true))] {
        let mut mass = Rational::zero();
        for (i, (eta, w)) in gaps.iter().enumerate() {
            mass += w;
            if gaps.get(i + 1).is_some_and(|(next, _)| next == eta) {
                continue;
            }
            let bound = eta * int(6) / eps;
            if mass > bound {
                out.push(format!("{side} mass {mass} within {eta} of the boundaries exceeds {bound}"));
            }
        }
    }
    out
}
