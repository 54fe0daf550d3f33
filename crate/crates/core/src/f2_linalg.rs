//! Linear algebra over the two-element field.
//!
//! Vectors are bit-packed into `u64` words so that row operations are word-level XORs.
//! [`AffineSystem`] keeps a reduced row-echelon form that is updated one constraint at a time.

use std::fmt;

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum F2Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("at least one point is required")]
    Empty,
    #[error("affine system is inconsistent")]
    Inconsistent,
    #[error("invalid bit character {0:?}")]
    BadBit(char),
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// Fixed-length vector over F2.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct F2Vector {
    words: Vec<u64>,
    len: usize,
}

impl F2Vector {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; words_for(len)], len }
    }

    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(index, true);
        v
    }

    /// Low `len` bits of `value`, bit `i` of the integer becoming coordinate `i`.
    pub fn from_u64(len: usize, value: u64) -> Self {
        let mut v = Self::zeros(len);
        if len > 0 {
            let mask = if len >= 64 { u64::MAX } else { (1u64 << len) - 1 };
            v.words[0] = value & mask;
        }
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    /// Parses a string such as `"0110"`; the first character is coordinate 0.
    pub fn parse(text: &str) -> Result<Self, F2Error> {
        let bits = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(F2Error::BadBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_bits(&bits))
    }

    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        let mut v = Self { words, len };
        v.clear_tail();
        v
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    fn check_len(&self, other: &Self) -> Result<(), F2Error> {
        if self.len == other.len {
            Ok(())
        } else {
            Err(F2Error::LengthMismatch { expected: self.len, found: other.len })
        }
    }

    /// `self += other`; panics on length mismatch.
    pub fn xor_assign(&mut self, other: &Self) {
        assert_eq!(self.len, other.len, "F2Vector length mismatch");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Inner product over F2.
    pub fn dot(&self, other: &Self) -> bool {
        assert_eq!(self.len, other.len, "F2Vector length mismatch");
        let ones: u32 = self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum();
        ones % 2 == 1
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Hamming weight.
    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn lowest_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Coordinates as an integer (bit `i` = coordinate `i`); only for `len <= 64`.
    pub fn to_u64(&self) -> u64 {
        assert!(self.len <= 64);
        self.words.first().copied().unwrap_or(0)
    }
}

impl fmt::Display for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for F2Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F2Vector({self})")
    }
}

/// Dense matrix over F2, stored as rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct F2Matrix {
    rows: Vec<F2Vector>,
    n_cols: usize,
}

impl F2Matrix {
    pub fn empty(n_cols: usize) -> Self {
        Self { rows: Vec::new(), n_cols }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { rows: vec![F2Vector::zeros(n_cols); n_rows], n_cols }
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: (0..n).map(|i| F2Vector::unit(n, i)).collect(), n_cols: n }
    }

    pub fn from_rows(n_cols: usize, rows: Vec<F2Vector>) -> Result<Self, F2Error> {
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(F2Error::LengthMismatch { expected: n_cols, found: bad.len() });
        }
        Ok(Self { rows, n_cols })
    }

    /// Rows given as bit strings of equal length.
    pub fn parse_rows(rows: &[&str]) -> Result<Self, F2Error> {
        let parsed = rows.iter().map(|r| F2Vector::parse(r)).collect::<Result<Vec<_>, _>>()?;
        let n_cols = parsed.first().map_or(0, F2Vector::len);
        Self::from_rows(n_cols, parsed)
    }

    pub fn push_row(&mut self, row: F2Vector) -> Result<(), F2Error> {
        if row.len() != self.n_cols {
            return Err(F2Error::LengthMismatch { expected: self.n_cols, found: row.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[F2Vector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &F2Vector {
        &self.rows[i]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].get(c)
    }

    pub fn column(&self, c: usize) -> F2Vector {
        let bits: Vec<bool> = self.rows.iter().map(|r| r.get(c)).collect();
        F2Vector::from_bits(&bits)
    }

    /// `u · M` for a row vector `u` of length `n_rows`.
    pub fn left_mul(&self, u: &F2Vector) -> F2Vector {
        assert_eq!(u.len(), self.n_rows());
        let mut out = F2Vector::zeros(self.n_cols);
        for (i, row) in self.rows.iter().enumerate() {
            if u.get(i) {
                out.xor_assign(row);
            }
        }
        out
    }

    pub fn rank(&self) -> usize {
        row_reduce(self).rank
    }
}

/// Result of [`row_reduce`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowReduction {
    /// Reduced row-echelon form; zero rows are moved to the bottom.
    pub reduced: F2Matrix,
    pub rank: usize,
    pub pivot_cols: Vec<usize>,
}

/// Gauss–Jordan elimination to reduced row-echelon form.
pub fn row_reduce(m: &F2Matrix) -> RowReduction {
    let mut rows = m.rows.clone();
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..m.n_cols {
        if rank == rows.len() {
            break;
        }
        let Some(found) = (rank..rows.len()).find(|&r| rows[r].get(col)) else {
            continue;
        };
        rows.swap(rank, found);
        let pivot_row = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row.get(col) {
                row.xor_assign(&pivot_row);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    RowReduction { reduced: F2Matrix { rows, n_cols: m.n_cols }, rank, pivot_cols: pivots }
}

/// Incrementally maintained basis of a linear subspace, one basis vector per pivot bit.
#[derive(Clone, Debug, Default)]
pub struct LinearSpan {
    basis: Vec<(usize, F2Vector)>,
}

impl LinearSpan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    pub fn reduce(&self, v: &F2Vector) -> F2Vector {
        let mut out = v.clone();
        for (pivot, b) in &self.basis {
            if out.get(*pivot) {
                out.xor_assign(b);
            }
        }
        out
    }

    pub fn contains(&self, v: &F2Vector) -> bool {
        self.reduce(v).is_zero()
    }

    /// Adds `v`; returns whether the dimension grew.
    pub fn insert(&mut self, v: &F2Vector) -> bool {
        let r = self.reduce(v);
        match r.lowest_one() {
            None => false,
            Some(pivot) => {
                for (_, b) in &mut self.basis {
                    if b.get(pivot) {
                        b.xor_assign(&r);
                    }
                }
                self.basis.push((pivot, r));
                true
            }
        }
    }
}

fn difference_span(points: &[F2Vector]) -> Result<(&F2Vector, LinearSpan), F2Error> {
    let base = points.first().ok_or(F2Error::Empty)?;
    let mut span = LinearSpan::new();
    for p in &points[1..] {
        base.check_len(p)?;
        span.insert(&p.xor(base));
    }
    Ok((base, span))
}

/// Whether `candidate` is an affine combination of `points`.
pub fn in_affine_span(points: &[F2Vector], candidate: &F2Vector) -> Result<bool, F2Error> {
    let (base, span) = difference_span(points)?;
    base.check_len(candidate)?;
    Ok(span.contains(&candidate.xor(base)))
}

/// Number of distinct affine combinations of `points`, i.e. `2^rank` of the differences.
pub fn affine_span_size(points: &[F2Vector]) -> Result<BigUint, F2Error> {
    let (_, span) = difference_span(points)?;
    Ok(BigUint::one() << span.dimension())
}

/// Outcome of adding a constraint to an [`AffineSystem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Novelty {
    /// The constraint was independent and halved the solution set.
    Novel,
    /// The constraint was implied by the existing ones.
    Redundant,
}

/// Value of a linear functional on the solution set of a system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Determination {
    Determined(bool),
    Undetermined,
}

/// Solution set description returned by [`AffineSystem::solve`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub particular: F2Vector,
    pub null_basis: Vec<F2Vector>,
}

/// A consistent system of affine constraints `<row, x> = rhs` over F2.
///
/// Constraints are kept both as given and in reduced row-echelon form; the reduced form
/// is updated incrementally as constraints arrive.
#[derive(Clone, Debug)]
pub struct AffineSystem {
    n_cols: usize,
    constraints: F2Matrix,
    rhs: Vec<bool>,
    reduced: Vec<(usize, F2Vector, bool)>,
}

impl AffineSystem {
    /// The unconstrained system over `n_cols` unknowns.
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, constraints: F2Matrix::empty(n_cols), rhs: Vec::new(), reduced: Vec::new() }
    }

    pub fn from_parts(constraints: &F2Matrix, rhs: &F2Vector) -> Result<Self, F2Error> {
        if rhs.len() != constraints.n_rows() {
            return Err(F2Error::LengthMismatch { expected: constraints.n_rows(), found: rhs.len() });
        }
        let mut sys = Self::new(constraints.n_cols());
        for (row, value) in constraints.rows().iter().zip(rhs.bits()) {
            sys.add_constraint(row, value)?;
        }
        Ok(sys)
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rank(&self) -> usize {
        self.reduced.len()
    }

    pub fn constraints(&self) -> &F2Matrix {
        &self.constraints
    }

    pub fn rhs(&self) -> F2Vector {
        F2Vector::from_bits(&self.rhs)
    }

    /// Reduced rows as `(pivot column, row, rhs)`.
    pub fn reduced_rows(&self) -> impl Iterator<Item = (usize, &F2Vector, bool)> {
        self.reduced.iter().map(|(p, r, b)| (*p, r, *b))
    }

    /// `log2` of the number of solutions.
    pub fn free_dimension(&self) -> usize {
        self.n_cols - self.rank()
    }

    pub fn solution_count(&self) -> BigUint {
        BigUint::one() << self.free_dimension()
    }

    fn reduce_words(&self, words: &mut [u64]) -> bool {
        let mut value = false;
        for (pivot, row, b) in &self.reduced {
            if (words[pivot / 64] >> (pivot % 64)) & 1 == 1 {
                for (w, r) in words.iter_mut().zip(row.words()) {
                    *w ^= r;
                }
                value ^= b;
            }
        }
        value
    }

    /// Calls `visit(functional, value)` for every functional in the row space together with
    /// the value the constraints force on it. Only systems of at most 64 unknowns and rank at
    /// most `max_rank` qualify; returns `false` without visiting otherwise.
    pub fn for_each_implied(&self, max_rank: usize, mut visit: impl FnMut(u64, bool)) -> bool {
        if self.n_cols > 64 || self.reduced.len() > max_rank {
            return false;
        }
        let rows: Vec<(u64, bool)> =
            self.reduced.iter().map(|(_, row, b)| (row.words().first().copied().unwrap_or(0), *b)).collect();
        let (mut word, mut value) = (0u64, false);
        visit(word, value);
        for step in 1u64..1 << rows.len() {
            let (r, b) = rows[step.trailing_zeros() as usize];
            word ^= r;
            value ^= b;
            visit(word, value);
        }
        true
    }

    /// Adds `<functional, x> = value`. An inconsistent constraint leaves the system
    /// untouched and returns [`F2Error::Inconsistent`].
    pub fn add_constraint(&mut self, functional: &F2Vector, value: bool) -> Result<Novelty, F2Error> {
        if functional.len() != self.n_cols {
            return Err(F2Error::LengthMismatch { expected: self.n_cols, found: functional.len() });
        }
        let mut row = functional.clone();
        let implied = self.reduce_words(&mut row.words);
        let rhs = value ^ implied;
        let Some(pivot) = row.lowest_one() else {
            return if rhs { Err(F2Error::Inconsistent) } else {
                self.constraints.rows.push(functional.clone());
                self.rhs.push(value);
                Ok(Novelty::Redundant)
            };
        };
        for (_, other, b) in &mut self.reduced {
            if other.get(pivot) {
                other.xor_assign(&row);
                *b ^= rhs;
            }
        }
        self.reduced.push((pivot, row, rhs));
        self.constraints.rows.push(functional.clone());
        self.rhs.push(value);
        Ok(Novelty::Novel)
    }

    /// A particular solution and a basis of the homogeneous solution space.
    pub fn solve(&self) -> Result<Solution, F2Error> {
        let mut particular = F2Vector::zeros(self.n_cols);
        let mut is_pivot = vec![false; self.n_cols];
        for (pivot, _, b) in &self.reduced {
            particular.set(*pivot, *b);
            is_pivot[*pivot] = true;
        }
        let null_basis = (0..self.n_cols)
            .filter(|&c| !is_pivot[c])
            .map(|free| {
                let mut v = F2Vector::unit(self.n_cols, free);
                for (pivot, row, _) in &self.reduced {
                    if row.get(free) {
                        v.set(*pivot, true);
                    }
                }
                v
            })
            .collect();
        Ok(Solution { particular, null_basis })
    }

    /// Whether `functional` takes a single value on every solution.
    pub fn functional_determined(&self, functional: &F2Vector) -> Result<Determination, F2Error> {
        if functional.len() != self.n_cols {
            return Err(F2Error::LengthMismatch { expected: self.n_cols, found: functional.len() });
        }
        let mut words = functional.words().to_vec();
        Ok(self.determine_words(&mut words))
    }

    /// Like [`functional_determined`](Self::functional_determined) but reuses a caller
    /// buffer holding the functional's words; the buffer is clobbered.
    pub fn determine_words(&self, words: &mut [u64]) -> Determination {
        let value = self.reduce_words(words);
        if words.iter().all(|&w| w == 0) {
            Determination::Determined(value)
        } else {
            Determination::Undetermined
        }
    }

    /// Whether `x` satisfies every constraint.
    pub fn satisfied_by(&self, x: &F2Vector) -> bool {
        self.constraints.rows().iter().zip(&self.rhs).all(|(row, &b)| row.dot(x) == b)
    }
}
