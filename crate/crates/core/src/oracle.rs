//! Exhaustive evaluation over all `2^n` sign vectors.
//!
//! Every quantity is computed from a [`SignMatrix`]: `rows` linear forms
//! `s_j(eps) = sum_i c_{ij} eps_i + b_j`. Sign vectors are visited in reflected
//! Gray-code order, so consecutive vectors differ in one sign and each step
//! costs `O(rows)`. The index range `[0, 2^n)` is cut into fixed-size chunks,
//! each chunk seeds its own walk, and partial results are merged in chunk
//! order; results therefore do not depend on the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::family::{ProcessFamily, MAX_DYADIC_EXP};
use crate::numeric::{is_dyadic, Dyadic, NeumaierSum};

/// Largest `n` handled by exhaustive enumeration.
pub const MAX_ENUM_N: usize = 30;
/// Largest `n` for which all path values are materialized in memory.
pub const MAX_TABLE_N: usize = 22;
/// Absolute tolerance for threshold comparisons in float mode.
pub const FLOAT_TOL: f64 = 1e-12;

const CHUNK_BITS: u32 = 14;
const REFRESH_EVERY: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("n = {n} exceeds the enumeration limit {max}")]
    TooManyVariables { n: usize, max: usize },
    #[error("expected {expected} signs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the point set is empty")]
    EmptyPointSet,
    #[error("point {0} lies outside the box")]
    PointOutsideBox(usize),
    #[error("exact mode needs dyadic inputs with exponent <= {MAX_DYADIC_EXP}")]
    NotDyadic,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Threshold semantics: `Exact` compares `>=` literally (inputs must be dyadic
/// so every sum is exact), `Float` admits an absolute slack of `1e-12` so that
/// atoms sitting on a threshold are not lost to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Exact,
    Float,
}

impl Mode {
    #[inline]
    pub fn tol(self) -> f64 {
        match self {
            Mode::Exact => 0.0,
            Mode::Float => FLOAT_TOL,
        }
    }

    #[inline]
    pub fn ge(self, x: f64, u: f64) -> bool {
        x >= u - self.tol()
    }
}

/// One outcome of the signs, bit `i` set iff `eps_i = +1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SignVector {
    n: u32,
    bits: u64,
}

impl SignVector {
    pub fn new(n: usize, bits: u64) -> Self {
        assert!(n <= 64, "sign vectors hold at most 64 signs");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        SignVector { n: n as u32, bits: bits & mask }
    }

    pub fn from_signs(signs: &[i8]) -> Self {
        let bits = signs
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .fold(0u64, |acc, (i, _)| acc | 1 << i);
        Self::new(signs.len(), bits)
    }

    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if self.bits >> i & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.len()).map(|i| if self.bits >> i & 1 == 1 { 1 } else { -1 }).collect()
    }
}

/// `rows` affine forms in `n` signs, stored variable-major so a single sign
/// flip touches one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix {
    n: usize,
    rows: usize,
    coef: Vec<f64>,
    offset: Vec<f64>,
}

impl SignMatrix {
    /// Builds from `rows[j][i]` (row-major input) and per-row offsets.
    pub fn from_rows(rows: &[Vec<f64>], offsets: Option<&[f64]>) -> Result<Self, OracleError> {
        let m = rows.len();
        if m == 0 {
            return Err(OracleError::EmptyPointSet);
        }
        let n = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(OracleError::DimensionMismatch { expected: n, got: r.len() });
        }
        let mut coef = vec![0.0; n * m];
        for (j, row) in rows.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                coef[i * m + j] = c;
            }
        }
        let offset = match offsets {
            Some(b) if b.len() != m => {
                return Err(OracleError::DimensionMismatch { expected: m, got: b.len() })
            }
            Some(b) => b.to_vec(),
            None => vec![0.0; m],
        };
        Ok(SignMatrix { n, rows: m, coef, offset })
    }

    /// One row per merged time; the last row is the terminal vector `a(1)`.
    pub fn from_family(fam: &ProcessFamily) -> Self {
        let rows: Vec<Vec<f64>> =
            (0..fam.merged_times().len()).map(|j| fam.coeffs(j).to_vec()).collect();
        Self::from_rows(&rows, None).expect("families have consistent rows")
    }

    /// A single row: the weight vector itself.
    pub fn from_weights(weights: &[f64]) -> Self {
        Self::from_rows(&[weights.to_vec()], None).expect("one row")
    }

    /// Rows `k = 1..n` are the partial sums `sum_{i<=k} w_i eps_i`.
    pub fn partial_sums(weights: &[f64]) -> Self {
        let n = weights.len();
        let rows: Vec<Vec<f64>> = (1..=n)
            .map(|k| (0..n).map(|i| if i < k { weights[i] } else { 0.0 }).collect())
            .collect();
        Self::from_rows(&rows, None).expect("consistent rows")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_dyadic(&self) -> bool {
        self.coef.iter().chain(&self.offset).all(|&v| is_dyadic(v, MAX_DYADIC_EXP))
    }

    fn check_size(&self) -> Result<(), OracleError> {
        if self.n > MAX_ENUM_N {
            Err(OracleError::TooManyVariables { n: self.n, max: MAX_ENUM_N })
        } else {
            Ok(())
        }
    }

    /// Direct evaluation of every row for one sign vector.
    pub fn eval_naive(&self, mask: u64, out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        for i in 0..self.n {
            let s = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
            let col = &self.coef[i * self.rows..(i + 1) * self.rows];
            for (o, c) in out.iter_mut().zip(col) {
                *o += s * c;
            }
        }
    }

    /// Visits every Gray index in `range`, passing the sign mask and row
    /// values. Values are refreshed from scratch periodically so rounding does
    /// not accumulate along long walks.
    pub fn walk(&self, range: Range<u64>, mut visit: impl FnMut(u64, &[f64])) {
        if range.is_empty() {
            return;
        }
        let mut values = vec![0.0; self.rows];
        let mut g = range.start;
        let mut mask = g ^ (g >> 1);
        self.eval_naive(mask, &mut values);
        visit(mask, &values);
        g += 1;
        while g < range.end {
            let bit = g.trailing_zeros() as usize;
            mask ^= 1 << bit;
            if (g - range.start).is_multiple_of(REFRESH_EVERY) {
                self.eval_naive(mask, &mut values);
            } else {
                let step = if mask >> bit & 1 == 1 { 2.0 } else { -2.0 };
                let col = &self.coef[bit * self.rows..(bit + 1) * self.rows];
                for (v, c) in values.iter_mut().zip(col) {
                    *v += step * c;
                }
            }
            visit(mask, &values);
            g += 1;
        }
    }

    /// Chunked fold over all `2^n` sign vectors. Chunks are fixed by `n`
    /// alone and merged in index order.
    pub fn fold<A, I, V, M>(&self, init: I, visit: V, merge: M) -> Result<A, OracleError>
    where
        A: Send,
        I: Fn() -> A + Sync,
        V: Fn(&mut A, u64, &[f64]) + Sync,
        M: Fn(&mut A, A),
    {
        self.check_size()?;
        let total = 1u64 << self.n;
        let chunk = 1u64 << CHUNK_BITS;
        let chunks = total.div_ceil(chunk);
        let run = |c: u64| {
            let mut acc = init();
            let lo = c * chunk;
            self.walk(lo..(lo + chunk).min(total), |mask, vals| visit(&mut acc, mask, vals));
            acc
        };
        let parts: Vec<A> = if chunks == 1 {
            vec![run(0)]
        } else {
            (0..chunks).into_par_iter().map(run).collect()
        };
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("at least one chunk");
        for p in it {
            merge(&mut acc, p);
        }
        Ok(acc)
    }
}

/// Max over rows with ties broken toward the smallest index.
#[inline]
fn max_row(vals: &[f64]) -> (usize, f64) {
    let mut best = (0, vals[0]);
    for (j, &v) in vals.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathEval {
    pub sign: SignVector,
    /// `X(eps) = max_t sum_i a_i(t) eps_i`.
    pub sup_value: f64,
    /// Smallest merged time attaining the sup.
    pub argmax_time: f64,
    /// `Y(eps) = sum_i a_i(1) eps_i`.
    pub terminal_value: f64,
}

pub fn path_sup(fam: &ProcessFamily, sign: SignVector) -> Result<PathEval, OracleError> {
    if sign.len() != fam.n() {
        return Err(OracleError::DimensionMismatch { expected: fam.n(), got: sign.len() });
    }
    let times = fam.merged_times();
    let vals: Vec<f64> = (0..times.len())
        .map(|j| fam.coeffs(j).iter().enumerate().map(|(i, a)| a * sign.sign(i)).sum())
        .collect();
    let (j, x) = max_row(&vals);
    Ok(PathEval {
        sign,
        sup_value: x,
        argmax_time: times[j],
        terminal_value: vals[vals.len() - 1],
    })
}

/// A probability as reported: an exact dyadic in exact mode, a decimal in
/// float mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Prob {
    Exact(Dyadic),
    Float(f64),
}

impl Prob {
    fn from_count(count: u64, n: usize, mode: Mode) -> Self {
        let d = Dyadic::new(count, n as u32);
        match mode {
            Mode::Exact => Prob::Exact(d),
            Mode::Float => Prob::Float(d.to_f64()),
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Prob::Exact(d) => d.to_f64(),
            Prob::Float(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moment {
    pub p: f64,
    /// `E|Y|^p`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub mode: Mode,
    pub n: usize,
    pub thresholds: Vec<f64>,
    /// `P(X >= u)` per threshold.
    pub p_x: Vec<Prob>,
    /// `P(Y >= u)` per threshold.
    pub p_y: Vec<Prob>,
    /// `P(|X - EX| >= u)` per threshold.
    pub p_abs_dev: Vec<Prob>,
    pub ex: f64,
    /// `E(Y)_+`.
    pub ey_plus: f64,
    pub moments: Vec<Moment>,
}

fn require_exact_inputs(m: &SignMatrix, mode: Mode) -> Result<(), OracleError> {
    if mode == Mode::Exact && !m.is_dyadic() {
        Err(OracleError::NotDyadic)
    } else {
        Ok(())
    }
}

#[derive(Clone)]
struct TailAcc {
    cx: Vec<u64>,
    cy: Vec<u64>,
    sx: NeumaierSum,
    sy_plus: NeumaierSum,
    moments: Vec<NeumaierSum>,
}

impl TailAcc {
    fn merge(&mut self, o: TailAcc) {
        self.cx.iter_mut().zip(&o.cx).for_each(|(a, b)| *a += b);
        self.cy.iter_mut().zip(&o.cy).for_each(|(a, b)| *a += b);
        self.sx.merge(&o.sx);
        self.sy_plus.merge(&o.sy_plus);
        self.moments.iter_mut().zip(&o.moments).for_each(|(a, b)| a.merge(b));
    }
}

/// Exhaustive tail report for a family: `n <= 30`.
pub fn enumerate_exact(
    fam: &ProcessFamily,
    thresholds: &[f64],
    moment_orders: &[f64],
    mode: Mode,
) -> Result<TailReport, OracleError> {
    let m = SignMatrix::from_family(fam);
    m.check_size()?;
    require_exact_inputs(&m, mode)?;
    if let Some(p) = moment_orders.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(OracleError::InvalidInput(format!("moment order {p} must be positive")));
    }
    let k = thresholds.len();
    let last = m.rows() - 1;
    let acc = m.fold(
        || TailAcc {
            cx: vec![0; k],
            cy: vec![0; k],
            sx: NeumaierSum::new(),
            sy_plus: NeumaierSum::new(),
            moments: vec![NeumaierSum::new(); moment_orders.len()],
        },
        |acc, _, vals| {
            let (_, x) = max_row(vals);
            let y = vals[last];
            for (c, &u) in acc.cx.iter_mut().zip(thresholds) {
                *c += u64::from(mode.ge(x, u));
            }
            for (c, &u) in acc.cy.iter_mut().zip(thresholds) {
                *c += u64::from(mode.ge(y, u));
            }
            acc.sx.add(x);
            acc.sy_plus.add(y.max(0.0));
            for (s, &p) in acc.moments.iter_mut().zip(moment_orders) {
                s.add(y.abs().powf(p));
            }
        },
        TailAcc::merge,
    )?;
    let scale = 1.0 / (1u64 << m.n()) as f64;
    let ex = acc.sx.value() * scale;

    let dev = if k == 0 {
        Vec::new()
    } else {
        m.fold(
            || vec![0u64; k],
            |c, _, vals| {
                let d = (max_row(vals).1 - ex).abs();
                for (ci, &u) in c.iter_mut().zip(thresholds) {
                    *ci += u64::from(mode.ge(d, u));
                }
            },
            |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| *x += y),
        )?
    };

    let n = m.n();
    Ok(TailReport {
        mode,
        n,
        thresholds: thresholds.to_vec(),
        p_x: acc.cx.iter().map(|&c| Prob::from_count(c, n, mode)).collect(),
        p_y: acc.cy.iter().map(|&c| Prob::from_count(c, n, mode)).collect(),
        p_abs_dev: dev.iter().map(|&c| Prob::from_count(c, n, mode)).collect(),
        ex,
        ey_plus: acc.sy_plus.value() * scale,
        moments: moment_orders
            .iter()
            .zip(&acc.moments)
            .map(|(&p, s)| Moment { p, value: s.value() * scale })
            .collect(),
    })
}

/// Every `(X, Y)` pair, indexed by sign mask. For `n <= 22`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    n: usize,
    mode: Mode,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PathTable {
    pub fn from_family(fam: &ProcessFamily, mode: Mode) -> Result<Self, OracleError> {
        let m = SignMatrix::from_family(fam);
        Self::from_matrix(&m, m.rows(), m.rows() - 1, mode)
    }

    /// `X` is the max over rows `0..x_rows`, `Y` is row `y_row`.
    pub fn from_matrix(
        m: &SignMatrix,
        x_rows: usize,
        y_row: usize,
        mode: Mode,
    ) -> Result<Self, OracleError> {
        if m.n() > MAX_TABLE_N {
            return Err(OracleError::TooManyVariables { n: m.n(), max: MAX_TABLE_N });
        }
        require_exact_inputs(m, mode)?;
        if x_rows == 0 || x_rows > m.rows() || y_row >= m.rows() {
            return Err(OracleError::InvalidInput("row selection out of range".into()));
        }
        let x_end = x_rows;
        let size = 1usize << m.n();
        let mut x = vec![0.0; size];
        let mut y = vec![0.0; size];
        m.walk(0..size as u64, |mask, vals| {
            x[mask as usize] = max_row(&vals[..x_end]).1;
            y[mask as usize] = vals[y_row];
        });
        Ok(PathTable { n: m.n(), mode, x, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn count(&self, pred: impl Fn(f64, f64) -> bool) -> Dyadic {
        let c = self.x.iter().zip(&self.y).filter(|(&x, &y)| pred(x, y)).count();
        Dyadic::new(c as u64, self.n as u32)
    }

    pub fn p_x_ge(&self, u: f64) -> Dyadic {
        let mode = self.mode;
        self.count(|x, _| mode.ge(x, u))
    }

    pub fn p_y_ge(&self, u: f64) -> Dyadic {
        let mode = self.mode;
        self.count(|_, y| mode.ge(y, u))
    }

    /// `E f(X, Y)` with compensated summation.
    pub fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let s: NeumaierSum = self.x.iter().zip(&self.y).map(|(&x, &y)| f(x, y)).collect();
        s.value() / self.x.len() as f64
    }

    pub fn ex(&self) -> f64 {
        self.expect(|x, _| x)
    }

    pub fn ey_plus(&self) -> f64 {
        self.expect(|_, y| y.max(0.0))
    }

    /// `E|Y|^p`.
    pub fn y_moment(&self, p: f64) -> f64 {
        self.expect(|_, y| y.abs().powf(p))
    }

    /// `||Y||_p`.
    pub fn y_norm(&self, p: f64) -> f64 {
        self.y_moment(p).powf(1.0 / p)
    }
}

// ---------------------------------------------------------------------------
// Convex test functions and boxes

/// A convex test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiSpec {
    Exp { lambda: f64 },
    Hinge { u: f64 },
    Power { p: f64 },
    Square,
}

impl PhiSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        match *self {
            PhiSpec::Power { p } if !(p >= 1.0) => {
                Err(OracleError::InvalidInput(format!("power {p} < 1 is not convex")))
            }
            PhiSpec::Exp { lambda } if !lambda.is_finite() => {
                Err(OracleError::InvalidInput("lambda must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PhiSpec::Exp { lambda } => (lambda * x).exp(),
            PhiSpec::Hinge { u } => (x - u).max(0.0),
            PhiSpec::Power { p } => x.abs().powf(p),
            PhiSpec::Square => x * x,
        }
    }

    /// Nondecreasing on the whole line.
    pub fn is_increasing(&self) -> bool {
        match *self {
            PhiSpec::Exp { lambda } => lambda >= 0.0,
            PhiSpec::Hinge { .. } => true,
            PhiSpec::Power { .. } | PhiSpec::Square => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxPoint {
    pub t: Vec<f64>,
    pub b: f64,
}

/// The box `prod_i [0, t0_i]`, optionally restricted to finitely many points
/// with offsets `b(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSpec {
    pub corner: Vec<f64>,
    pub points: Option<Vec<BoxPoint>>,
}

impl BoxSpec {
    pub fn whole(corner: Vec<f64>) -> Self {
        BoxSpec { corner, points: None }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.corner.is_empty() {
            return Err(OracleError::InvalidInput("empty corner".into()));
        }
        if self.corner.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(OracleError::InvalidInput("corner must be nonnegative".into()));
        }
        if let Some(pts) = &self.points {
            if pts.is_empty() {
                return Err(OracleError::EmptyPointSet);
            }
            for (k, p) in pts.iter().enumerate() {
                if p.t.len() != self.corner.len() {
                    return Err(OracleError::DimensionMismatch {
                        expected: self.corner.len(),
                        got: p.t.len(),
                    });
                }
                if p.t.iter().zip(&self.corner).any(|(&t, &c)| !(0.0..=c).contains(&t)) {
                    return Err(OracleError::PointOutsideBox(k));
                }
            }
        }
        Ok(())
    }

    /// Matrix with the listed points first and the corner as the final row.
    fn matrix(&self) -> Result<(SignMatrix, usize), OracleError> {
        match &self.points {
            None => Ok((SignMatrix::from_weights(&self.corner), 0)),
            Some(pts) => {
                let mut rows: Vec<Vec<f64>> = pts.iter().map(|p| p.t.clone()).collect();
                let mut offs: Vec<f64> = pts.iter().map(|p| p.b).collect();
                rows.push(self.corner.clone());
                offs.push(0.0);
                Ok((SignMatrix::from_rows(&rows, Some(&offs))?, pts.len()))
            }
        }
    }

    /// Exact path table for this box: `X` is the sup over the box (or the
    /// point set), `Y` the corner form.
    pub fn table(&self, mode: Mode) -> Result<PathTable, OracleError> {
        self.validate()?;
        let (m, x_rows) = self.matrix()?;
        let mut table = PathTable::from_matrix(&m, x_rows.max(1), m.rows() - 1, mode)?;
        if self.points.is_none() {
            // sup over the box: X = sum_i t0_i 1{eps_i = +1} = (S + Y) / 2
            let s: f64 = self.corner.iter().sum();
            for (x, &y) in table.x.iter_mut().zip(&table.y) {
                *x = 0.5 * (s + y);
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiGap {
    /// `E phi(X - EX)`.
    pub lhs: f64,
    /// `E phi(Y)`.
    pub rhs: f64,
    pub ex: f64,
    /// `EX` by enumeration (equals `ex` up to rounding for whole boxes, where
    /// `ex` is the closed form `sum_i t0_i / 2`).
    pub ex_enumerated: f64,
}

pub fn phi_gap(spec: &BoxSpec, phi: PhiSpec, mode: Mode) -> Result<PhiGap, OracleError> {
    phi.validate()?;
    let table = spec.table(mode)?;
    Ok(phi_gap_on(spec, &table, phi))
}

/// [`phi_gap`] against a precomputed table.
pub fn phi_gap_on(spec: &BoxSpec, table: &PathTable, phi: PhiSpec) -> PhiGap {
    let ex_enumerated = table.ex();
    let ex = match spec.points {
        None => 0.5 * spec.corner.iter().sum::<f64>(),
        Some(_) => ex_enumerated,
    };
    PhiGap {
        lhs: table.expect(|x, _| phi.eval(x - ex)),
        rhs: table.expect(|_, y| phi.eval(y)),
        ex,
        ex_enumerated,
    }
}

// ---------------------------------------------------------------------------
// Weight-vector statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassicLo {
    /// `P(max_{1<=k<=n} S_k >= u)`.
    pub p_max: Prob,
    /// `P(S_n >= u)`.
    pub p_last: Prob,
}

pub fn classic_lo_stats(weights: &[f64], u: f64, mode: Mode) -> Result<ClassicLo, OracleError> {
    if weights.is_empty() {
        return Err(OracleError::InvalidInput("no weights".into()));
    }
    let m = SignMatrix::partial_sums(weights);
    m.check_size()?;
    require_exact_inputs(&m, mode)?;
    let last = m.rows() - 1;
    let (cm, cl) = m.fold(
        || (0u64, 0u64),
        |acc, _, vals| {
            acc.0 += u64::from(mode.ge(max_row(vals).1, u));
            acc.1 += u64::from(mode.ge(vals[last], u));
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    )?;
    Ok(ClassicLo {
        p_max: Prob::from_count(cm, m.n(), mode),
        p_last: Prob::from_count(cl, m.n(), mode),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KahaneIntegral {
    /// `int_0^inf P(Y >= u + s) ds = E(Y - u)_+`.
    pub lhs: f64,
    /// `4 P(Y >= u) E(Y)_+`.
    pub rhs: f64,
    pub p_y: Prob,
    pub ey_plus: f64,
}

pub fn kahane_integral(weights: &[f64], u: f64, mode: Mode) -> Result<KahaneIntegral, OracleError> {
    if weights.is_empty() {
        return Err(OracleError::InvalidInput("no weights".into()));
    }
    let m = SignMatrix::from_weights(weights);
    m.check_size()?;
    require_exact_inputs(&m, mode)?;
    let (count, tail, plus) = m.fold(
        || (0u64, NeumaierSum::new(), NeumaierSum::new()),
        |acc, _, vals| {
            let y = vals[0];
            acc.0 += u64::from(mode.ge(y, u));
            acc.1.add((y - u).max(0.0));
            acc.2.add(y.max(0.0));
        },
        |a, b| {
            a.0 += b.0;
            a.1.merge(&b.1);
            a.2.merge(&b.2);
        },
    )?;
    let scale = 1.0 / (1u64 << m.n()) as f64;
    let p_y = Prob::from_count(count, m.n(), mode);
    let ey_plus = plus.value() * scale;
    Ok(KahaneIntegral { lhs: tail.value() * scale, rhs: 4.0 * p_y.value() * ey_plus, p_y, ey_plus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{gen_family, make_step, FamilyKind, GenParams};

    /// `{a_1 = 1, a_2 = 1_{[0.5, 1]}}`
    fn two_piece() -> ProcessFamily {
        ProcessFamily::new(vec![
            make_step(&[(0.0, 1.0)]).unwrap(),
            make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn table_sup_includes_terminal_time() {
        let fam = two_piece();
        let t = PathTable::from_family(&fam, Mode::Exact).unwrap();
        // (+, +): path 1 then 2
        assert_eq!(t.xs()[0b11], 2.0);
        assert_eq!(t.p_x_ge(2.0), Dyadic::new(1, 2));
        assert_eq!(t.ex(), 0.5);
        for mask in 0..4u64 {
            let e = path_sup(&fam, SignVector::new(2, mask)).unwrap();
            assert_eq!(t.xs()[mask as usize], e.sup_value);
        }
    }

    #[test]
    fn path_sup_examples() {
        let fam = two_piece();
        let e = path_sup(&fam, SignVector::from_signs(&[1, -1])).unwrap();
        assert_eq!(e.sup_value, 1.0);
        assert_eq!(e.argmax_time, 0.0);
        assert_eq!(e.terminal_value, 0.0);

        let e = path_sup(&fam, SignVector::from_signs(&[-1, -1])).unwrap();
        assert_eq!(e.sup_value, -1.0);

        let single = ProcessFamily::constant(&[1.0]).unwrap();
        assert_eq!(path_sup(&single, SignVector::from_signs(&[1])).unwrap().sup_value, 1.0);

        assert_eq!(
            path_sup(&fam, SignVector::from_signs(&[1])),
            Err(OracleError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn sign_vector_round_trip() {
        let s = SignVector::from_signs(&[1, -1, -1, 1]);
        assert_eq!(s.bits(), 0b1001);
        assert_eq!(s.signs(), vec![1, -1, -1, 1]);
        assert_eq!(SignVector::from_signs(&s.signs()), s);
    }

    #[test]
    fn enumerate_two_piece() {
        let r = enumerate_exact(&two_piece(), &[1.0], &[], Mode::Exact).unwrap();
        assert_eq!(r.p_x[0], Prob::Exact(Dyadic::new(2, 2)));
        assert_eq!(r.p_y[0], Prob::Exact(Dyadic::new(1, 2)));
        assert_eq!(r.ex, 0.5);
    }

    #[test]
    fn enumerate_single_constant() {
        let fam = ProcessFamily::constant(&[1.0]).unwrap();
        let r = enumerate_exact(&fam, &[1.0], &[], Mode::Exact).unwrap();
        assert_eq!(r.p_y[0].value(), 0.5);
        assert_eq!(r.ex, 0.0);
        assert_eq!(r.ey_plus, 0.5);
    }

    #[test]
    fn enumerate_moments() {
        let fam = ProcessFamily::constant(&[1.0, 1.0]).unwrap();
        let r = enumerate_exact(&fam, &[], &[2.0, 4.0], Mode::Exact).unwrap();
        assert_eq!(r.moments[0].value, 2.0);
        assert_eq!(r.moments[1].value, 8.0);
        let ratio = r.moments[0].value.powi(2) / r.moments[1].value;
        assert_eq!(ratio, 0.5);
        assert!(ratio >= 1.0 / 9.0);
    }

    #[test]
    fn enumerate_errors() {
        let fam = ProcessFamily::constant(&vec![1.0; 31]).unwrap();
        assert_eq!(
            enumerate_exact(&fam, &[0.0], &[], Mode::Exact).unwrap_err(),
            OracleError::TooManyVariables { n: 31, max: 30 }
        );
        let fam = ProcessFamily::constant(&[0.1]).unwrap();
        assert_eq!(
            enumerate_exact(&fam, &[0.0], &[], Mode::Exact).unwrap_err(),
            OracleError::NotDyadic
        );
        assert!(enumerate_exact(&fam, &[0.0], &[], Mode::Float).is_ok());
    }

    #[test]
    fn abs_dev_and_mass() {
        let fam = two_piece();
        // X over the four sign patterns: 2, 1, 0, -1 with EX = 1/2
        let r = enumerate_exact(&fam, &[f64::NEG_INFINITY, 1.5], &[], Mode::Exact).unwrap();
        assert_eq!(r.p_x[0].value(), 1.0);
        assert_eq!(r.p_y[0].value(), 1.0);
        assert_eq!(r.p_abs_dev[1].value(), 0.5);
    }

    #[test]
    fn float_mode_counts_atoms_within_tolerance() {
        let fam = ProcessFamily::constant(&[0.1, 0.2]).unwrap();
        // Y = 0.1 + 0.2 != 0.3 in binary floating point
        let r = enumerate_exact(&fam, &[0.3], &[], Mode::Float).unwrap();
        assert_eq!(r.p_y[0].value(), 0.25);
    }

    #[test]
    fn gray_walk_matches_naive() {
        for seed in 0..20 {
            let fam = gen_family(FamilyKind::Random, 10, seed, &GenParams::dyadic(10)).unwrap();
            let m = SignMatrix::from_family(&fam);
            let mut naive = vec![0.0; m.rows()];
            m.walk(0..1 << 10, |mask, vals| {
                m.eval_naive(mask, &mut naive);
                assert_eq!(vals, &naive[..]);
            });
            // float families agree up to rounding
            let fam = gen_family(FamilyKind::Random, 10, seed, &GenParams::default()).unwrap();
            let m = SignMatrix::from_family(&fam);
            let mut naive = vec![0.0; m.rows()];
            m.walk(0..1 << 10, |mask, vals| {
                m.eval_naive(mask, &mut naive);
                for (a, b) in vals.iter().zip(&naive) {
                    assert!((a - b).abs() < 1e-12);
                }
            });
        }
    }

    #[test]
    fn gray_walk_visits_every_mask_once() {
        let m = SignMatrix::from_weights(&[1.0; 6]);
        let mut seen = [false; 64];
        m.walk(0..64, |mask, _| {
            assert!(!seen[mask as usize]);
            seen[mask as usize] = true;
        });
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn chunked_fold_equals_table() {
        // n = 16 spans several chunks
        let fam = gen_family(FamilyKind::Random, 16, 3, &GenParams::dyadic(10)).unwrap();
        let r = enumerate_exact(&fam, &[0.0, 1.0], &[2.0], Mode::Exact).unwrap();
        let t = PathTable::from_family(&fam, Mode::Exact).unwrap();
        assert_eq!(r.p_x[0], Prob::Exact(t.p_x_ge(0.0)));
        assert_eq!(r.p_y[1], Prob::Exact(t.p_y_ge(1.0)));
        assert!((r.ex - t.ex()).abs() < 1e-12);
        assert!((r.moments[0].value - fam.terminal_variance()).abs() < 1e-9);
    }

    #[test]
    fn phi_gap_examples() {
        let b = BoxSpec::whole(vec![1.0, 1.0]);
        let g = phi_gap(&b, PhiSpec::Square, Mode::Exact).unwrap();
        assert_eq!((g.lhs, g.rhs), (0.5, 2.0));
        assert_eq!(g.ex, 1.0);
        assert_eq!(g.ex_enumerated, 1.0);

        let g = phi_gap(&b, PhiSpec::Hinge { u: 1.0 }, Mode::Exact).unwrap();
        assert_eq!((g.lhs, g.rhs), (0.0, 0.25));

        let single = BoxSpec {
            corner: vec![1.0, 0.5, 0.25],
            points: Some(vec![BoxPoint { t: vec![1.0, 0.5, 0.25], b: 0.0 }]),
        };
        for phi in [PhiSpec::Square, PhiSpec::Hinge { u: 0.5 }, PhiSpec::Exp { lambda: 1.0 }] {
            let g = phi_gap(&single, phi, Mode::Exact).unwrap();
            assert!((g.lhs - g.rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_gap_errors() {
        let empty = BoxSpec { corner: vec![1.0], points: Some(vec![]) };
        assert_eq!(phi_gap(&empty, PhiSpec::Square, Mode::Exact), Err(OracleError::EmptyPointSet));
        let outside = BoxSpec {
            corner: vec![1.0],
            points: Some(vec![BoxPoint { t: vec![2.0], b: 0.0 }]),
        };
        assert_eq!(
            phi_gap(&outside, PhiSpec::Square, Mode::Exact),
            Err(OracleError::PointOutsideBox(0))
        );
        assert!(phi_gap(&BoxSpec::whole(vec![1.0]), PhiSpec::Power { p: 0.5 }, Mode::Exact).is_err());
    }

    #[test]
    fn classic_lo_examples() {
        let r = classic_lo_stats(&[0.5; 4], 1.0, Mode::Exact).unwrap();
        assert_eq!(r.p_max, Prob::Exact(Dyadic::new(6, 4)));
        assert_eq!(r.p_last, Prob::Exact(Dyadic::new(5, 4)));

        let r = classic_lo_stats(&[1.0], 1.0, Mode::Exact).unwrap();
        assert_eq!((r.p_max.value(), r.p_last.value()), (0.5, 0.5));

        let r = classic_lo_stats(&[1.0, 1.0], 2.0, Mode::Exact).unwrap();
        assert_eq!((r.p_max.value(), r.p_last.value()), (0.25, 0.25));
    }

    #[test]
    fn kahane_examples() {
        let k = kahane_integral(&[1.0], 1.0, Mode::Exact).unwrap();
        assert_eq!((k.lhs, k.rhs), (0.0, 1.0));

        let k = kahane_integral(&[1.0, 1.0], 1.0, Mode::Exact).unwrap();
        assert_eq!((k.lhs, k.rhs), (0.25, 0.5));

        // Y over 8 outcomes: 3, 1 (x3), -1 (x3), -3
        let k = kahane_integral(&[1.0, 1.0, 1.0], 0.0, Mode::Exact).unwrap();
        assert_eq!(k.ey_plus, 0.75);
        assert_eq!(k.lhs, 0.75);
        assert_eq!(k.p_y.value(), 0.5);
        assert_eq!(k.rhs, 1.5);
    }

    #[test]
    fn tail_report_json_shapes() {
        let r = enumerate_exact(&two_piece(), &[1.0], &[], Mode::Exact).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["p_x"][0]["num"], 2);
        assert_eq!(v["p_x"][0]["den2exp"], 2);
        let r = enumerate_exact(&two_piece(), &[1.0], &[], Mode::Float).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["p_x"][0], 0.5);
    }
}
