//! Binary linear codes: Reed–Muller construction, exhaustive distance checks and random search.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::f2_linalg::{F2Error, F2Matrix, F2Vector};
use crate::seeds::derive_seed;

/// Largest number of Reed–Muller variables (code length `2^16`).
pub const MAX_RM_VARS: usize = 16;
/// Largest dimension for exhaustive codeword enumeration.
pub const MAX_ENUM_DIMENSION: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("degree {degree} out of range for {vars} variables (need 0 <= degree <= vars <= {MAX_RM_VARS})")]
    DegreeOutOfRange { vars: usize, degree: usize },
    #[error("dimension {0} exceeds the enumeration cap {MAX_ENUM_DIMENSION}")]
    DimensionTooLarge(usize),
    #[error("generator matrix is not full row rank")]
    RankDeficient,
    #[error("no code found")]
    NotFound,
    #[error("generator text: {0}")]
    Parse(String),
    #[error(transparent)]
    F2(#[from] F2Error),
}

/// A binary linear code given by a full-rank `k x m` generator matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearCode {
    generator: F2Matrix,
    columns: Vec<F2Vector>,
    verified_distance: Option<usize>,
}

impl LinearCode {
    pub fn new(generator: F2Matrix) -> Result<Self, CodeError> {
        if generator.rank() != generator.n_rows() {
            return Err(CodeError::RankDeficient);
        }
        let columns = (0..generator.n_cols()).map(|c| generator.column(c)).collect();
        Ok(Self { generator, columns, verified_distance: None })
    }

    pub fn generator(&self) -> &F2Matrix {
        &self.generator
    }

    /// Code length `m`.
    pub fn length(&self) -> usize {
        self.generator.n_cols()
    }

    /// Dimension `k`.
    pub fn dimension(&self) -> usize {
        self.generator.n_rows()
    }

    pub fn verified_distance(&self) -> Option<usize> {
        self.verified_distance
    }

    /// Column `i` of the generator: the functional reading coordinate `i` off a message.
    pub fn column(&self, i: usize) -> &F2Vector {
        &self.columns[i]
    }

    pub fn encode(&self, message: &F2Vector) -> F2Vector {
        self.generator.left_mul(message)
    }

    /// Computes the minimum distance by enumeration and records it.
    pub fn verify_distance(&mut self) -> Result<usize, CodeError> {
        let d = min_distance(self)?;
        self.verified_distance = Some(d);
        Ok(d)
    }

    /// Plain-text generator: first line `k m`, then `k` rows of `m` characters in `{0,1}`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.dimension(), self.length());
        for row in self.generator.rows() {
            let _ = writeln!(out, "{row}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CodeError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| CodeError::Parse("missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| CodeError::Parse(format!("bad header {header:?}"))))
            .collect::<Result<_, _>>()?;
        let [k, m] = dims[..] else {
            return Err(CodeError::Parse(format!("header must be \"k m\", got {header:?}")));
        };
        let rows = lines.map(F2Vector::parse).collect::<Result<Vec<_>, _>>()?;
        if rows.len() != k {
            return Err(CodeError::Parse(format!("expected {k} rows, found {}", rows.len())));
        }
        Self::new(F2Matrix::from_rows(m, rows)?)
    }
}

/// Monomials of degree at most `degree` in `vars` variables, in graded lexicographic order.
/// Each monomial is the sorted list of its variable indices.
pub fn graded_lex_monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, vars: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for v in start..vars {
            cur.push(v);
            extend(v + 1, vars, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree.min(vars) {
        extend(0, vars, d, &mut Vec::new(), &mut out);
    }
    out
}

/// Evaluates a monomial at the point whose coordinates are the bits of `point`.
pub fn monomial_at(monomial: &[usize], point: u64) -> bool {
    monomial.iter().all(|&v| (point >> v) & 1 == 1)
}

/// Reed–Muller code RM(vars, degree): evaluation tables over F2^vars of polynomials of
/// degree at most `degree`. Rows follow [`graded_lex_monomials`]; column `y` is the point
/// with coordinates given by the bits of `y`.
pub fn reed_muller(vars: usize, degree: usize) -> Result<LinearCode, CodeError> {
    if degree > vars || vars > MAX_RM_VARS {
        return Err(CodeError::DegreeOutOfRange { vars, degree });
    }
    let length = 1usize << vars;
    let rows = graded_lex_monomials(vars, degree)
        .iter()
        .map(|mono| {
            let mut row = F2Vector::zeros(length);
            for y in 0..length {
                if monomial_at(mono, y as u64) {
                    row.set(y, true);
                }
            }
            row
        })
        .collect();
    LinearCode::new(F2Matrix::from_rows(length, rows)?)
}

/// Smallest codeword weight found while walking messages in Gray-code order.
/// Stops early once a weight below `floor` appears.
fn gray_min_weight(generator: &F2Matrix, floor: usize) -> usize {
    let k = generator.n_rows();
    let mut word = F2Vector::zeros(generator.n_cols());
    let mut best = usize::MAX;
    for step in 1u64..(1u64 << k) {
        let flip = step.trailing_zeros() as usize;
        word.xor_assign(generator.row(flip));
        best = best.min(word.weight());
        if best < floor {
            break;
        }
    }
    best
}

/// Minimum Hamming weight over all nonzero codewords (exhaustive).
pub fn min_distance(code: &LinearCode) -> Result<usize, CodeError> {
    let k = code.dimension();
    if k > MAX_ENUM_DIMENSION {
        return Err(CodeError::DimensionTooLarge(k));
    }
    if k == 0 {
        return Ok(code.length());
    }
    Ok(gray_min_weight(code.generator(), 0))
}

fn griesmer_length(k: usize, d: usize) -> usize {
    (0..k).map(|i| d.div_ceil(1 << i.min(63))).sum()
}

fn plotkin_allows(m: usize, k: usize, d: usize) -> bool {
    let size = 1u128 << k;
    if d.is_multiple_of(2) {
        if 2 * d > m {
            return size <= 2 * (d / (2 * d - m)) as u128;
        }
        if 2 * d == m {
            return size <= 4 * d as u128;
        }
    } else if 2 * d + 1 > m {
        return size <= 2 * ((d + 1) / (2 * d + 1 - m)) as u128;
    }
    true
}

/// Whether a binary linear `[m, k, d]` code can exist by the Singleton, Plotkin and
/// Griesmer bounds.
pub fn parameters_feasible(m: usize, k: usize, d: usize) -> bool {
    if k == 0 || k > m || d == 0 {
        return k <= m;
    }
    d + k <= m + 1 && plotkin_allows(m, k, d) && griesmer_length(k, d) <= m
}

/// Random search for a full-rank `[length, dimension]` code with distance at least
/// `distance_target`. Try `t` uses a generator seeded from `(seed, t)`; the lowest
/// successful try wins, so the result does not depend on scheduling.
pub fn search_code(
    length: usize,
    dimension: usize,
    distance_target: usize,
    seed: u64,
    max_tries: u64,
) -> Result<LinearCode, CodeError> {
    if dimension > MAX_ENUM_DIMENSION {
        return Err(CodeError::DimensionTooLarge(dimension));
    }
    if dimension == 0 || !parameters_feasible(length, dimension, distance_target) {
        return Err(CodeError::NotFound);
    }
    let found = (0..max_tries).into_par_iter().find_map_first(|t| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t));
        let rows = (0..dimension)
            .map(|_| {
                let bits: Vec<bool> = (0..length).map(|_| rng.random()).collect();
                F2Vector::from_bits(&bits)
            })
            .collect();
        let generator = F2Matrix::from_rows(length, rows).ok()?;
        if generator.rank() != dimension {
            return None;
        }
        (gray_min_weight(&generator, distance_target) >= distance_target).then_some(generator)
    });
    let generator = found.ok_or(CodeError::NotFound)?;
    let mut code = LinearCode::new(generator)?;
    code.verify_distance()?;
    Ok(code)
}
