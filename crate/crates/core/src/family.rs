//! Monotone right-continuous step functions and the coefficient families
//! `a_1, ..., a_n` that drive the process `t -> sum_i a_i(t) eps_i`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::is_dyadic;

/// Largest binary exponent allowed in exact (dyadic) mode.
pub const MAX_DYADIC_EXP: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("step values must be nondecreasing (value {next} after {prev} at t = {t})")]
    NonMonotoneValues { t: f64, prev: f64, next: f64 },
    #[error("step values must be nonnegative and finite (got {0})")]
    NegativeValue(f64),
    #[error("breakpoint times must be strictly increasing (t = {0} repeats or goes back)")]
    UnsortedTimes(f64),
    #[error("the first breakpoint must sit at t = 0")]
    MissingTimeZero,
    #[error("time {0} lies outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("family file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub t: f64,
    pub v: f64,
}

/// A nondecreasing, nonnegative, right-continuous step function on `[0, 1]`.
///
/// The value at `t` is the value of the last breakpoint whose time is `<= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    points: Vec<Breakpoint>,
}

/// Validates `(time, value)` pairs into a [`StepFunction`].
pub fn make_step(points: &[(f64, f64)]) -> Result<StepFunction, FamilyError> {
    StepFunction::new(points.iter().map(|&(t, v)| Breakpoint { t, v }).collect())
}

impl StepFunction {
    pub fn new(points: Vec<Breakpoint>) -> Result<Self, FamilyError> {
        if points.is_empty() {
            return Err(FamilyError::MissingTimeZero);
        }
        for p in &points {
            if !(0.0..=1.0).contains(&p.t) {
                return Err(FamilyError::TimeOutOfRange(p.t));
            }
            if !p.v.is_finite() || p.v < 0.0 {
                return Err(FamilyError::NegativeValue(p.v));
            }
        }
        if points[0].t != 0.0 {
            return Err(FamilyError::MissingTimeZero);
        }
        for w in points.windows(2) {
            if w[1].t <= w[0].t {
                return Err(FamilyError::UnsortedTimes(w[1].t));
            }
            if w[1].v < w[0].v {
                return Err(FamilyError::NonMonotoneValues {
                    t: w[1].t,
                    prev: w[0].v,
                    next: w[1].v,
                });
            }
        }
        Ok(StepFunction { points })
    }

    pub fn constant(v: f64) -> Result<Self, FamilyError> {
        Self::new(vec![Breakpoint { t: 0.0, v }])
    }

    pub fn points(&self) -> &[Breakpoint] {
        &self.points
    }

    /// Right-continuous lookup.
    pub fn eval_at(&self, t: f64) -> Result<f64, FamilyError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FamilyError::TimeOutOfRange(t));
        }
        Ok(self.value_unchecked(t))
    }

    #[inline]
    fn value_unchecked(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.t <= t);
        self.points[idx.saturating_sub(1)].v
    }

    pub fn terminal(&self) -> f64 {
        self.points[self.points.len() - 1].v
    }

    fn scaled(&self, factor: f64) -> StepFunction {
        StepFunction {
            points: self
                .points
                .iter()
                .map(|p| Breakpoint { t: p.t, v: p.v * factor })
                .collect(),
        }
    }
}

/// Builds a step function from values sampled at `times` (which start at 0),
/// dropping breakpoints that do not change the value.
fn step_from_samples(times: &[f64], values: &[f64]) -> Result<StepFunction, FamilyError> {
    let mut pts: Vec<Breakpoint> = Vec::with_capacity(times.len());
    for (&t, &v) in times.iter().zip(values) {
        match pts.last() {
            Some(last) if last.v == v => {}
            _ => pts.push(Breakpoint { t, v }),
        }
    }
    StepFunction::new(pts)
}

/// `n` step functions together with their merged event grid.
///
/// The coefficient matrix is cached row-per-merged-time, so that
/// `coeffs(j)[i] = a_i(tau_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessFamily {
    functions: Vec<StepFunction>,
    times: Vec<f64>,
    coef: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub n: usize,
    pub functions: Vec<Vec<Breakpoint>>,
}

impl ProcessFamily {
    pub fn new(functions: Vec<StepFunction>) -> Result<Self, FamilyError> {
        if functions.is_empty() {
            return Err(FamilyError::InvalidParams("a family needs n >= 1".into()));
        }
        let mut times: Vec<f64> = functions
            .iter()
            .flat_map(|f| f.points.iter().map(|p| p.t))
            .chain([0.0, 1.0])
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let n = functions.len();
        let mut coef = Vec::with_capacity(times.len() * n);
        for &t in &times {
            coef.extend(functions.iter().map(|f| f.value_unchecked(t)));
        }
        Ok(ProcessFamily { functions, times, coef })
    }

    /// Family of constant functions, i.e. a single weight vector.
    pub fn constant(weights: &[f64]) -> Result<Self, FamilyError> {
        let fs = weights
            .iter()
            .map(|&w| StepFunction::constant(w))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(fs)
    }

    pub fn n(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[StepFunction] {
        &self.functions
    }

    /// Sorted distinct union of all breakpoint times plus `{0, 1}`.
    pub fn merged_times(&self) -> &[f64] {
        &self.times
    }

    /// `a(tau_j)` for the `j`-th merged time.
    pub fn coeffs(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.coef[j * n..(j + 1) * n]
    }

    /// `a(1)`, the point of maximal variance.
    pub fn terminal(&self) -> &[f64] {
        self.coeffs(self.times.len() - 1)
    }

    pub fn coeffs_at(&self, t: f64) -> Result<Vec<f64>, FamilyError> {
        self.functions.iter().map(|f| f.eval_at(t)).collect()
    }

    /// `V(tau_j) = sum_i a_i(tau_j)^2` at every merged time.
    pub fn variance_profile(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|j| self.coeffs(j).iter().map(|a| a * a).sum())
            .collect()
    }

    pub fn terminal_variance(&self) -> f64 {
        self.terminal().iter().map(|a| a * a).sum()
    }

    /// `||a(1)||`.
    pub fn terminal_norm(&self) -> f64 {
        self.terminal_variance().sqrt()
    }

    /// True when every time and value is a dyadic rational with exponent at
    /// most `max_exp`.
    pub fn is_dyadic(&self, max_exp: u32) -> bool {
        self.functions
            .iter()
            .flat_map(|f| f.points.iter())
            .all(|p| is_dyadic(p.t, max_exp) && is_dyadic(p.v, max_exp))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, FamilyError> {
        Self::new(self.functions.iter().map(|f| f.scaled(factor)).collect())
    }

    pub fn to_file(&self) -> FamilyFile {
        FamilyFile {
            n: self.n(),
            functions: self.functions.iter().map(|f| f.points.clone()).collect(),
        }
    }

    pub fn from_file(file: FamilyFile) -> Result<Self, FamilyError> {
        if file.n != file.functions.len() {
            return Err(FamilyError::InvalidParams(format!(
                "n = {} but {} functions listed",
                file.n,
                file.functions.len()
            )));
        }
        Self::new(
            file.functions
                .into_iter()
                .map(StepFunction::new)
                .collect::<Result<_, _>>()?,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("family serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FamilyError> {
        let file: FamilyFile =
            serde_json::from_str(s).map_err(|e| FamilyError::Io(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, FamilyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FamilyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Short content hash of the canonical JSON form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Generators

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// `a_i(t) = alpha_i(t) a_i(1)` with `0 <= alpha_n <= ... <= alpha_1 <= 1`.
    OrderedAlpha,
    /// `a_i(t) = a_i(1) 1_{[t_i, 1]}(t)` with `t_1 <= ... <= t_n`.
    Indicator,
    /// Arbitrary monotone step functions.
    Random,
    /// Pointwise ordered and `sum_i a_i(1) >= 1 + 2 a_1(1)`.
    Szatzschneider,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    /// Breakpoints per random function are uniform in `[1, max_breakpoints]`.
    pub max_breakpoints: usize,
    /// Rescale so that `||a(1)|| = 1` (kind `random` only).
    pub normalize: bool,
    /// Terminal weights `a_i(1)` (kinds `indicator`, `ordered_alpha`).
    pub weights: Option<Vec<f64>>,
    /// Jump times `t_i` (kind `indicator`).
    pub jumps: Option<Vec<f64>>,
    /// Common constant value (kind `szatzschneider`).
    pub value: Option<f64>,
    /// Snap times and values onto the grid `2^-q` so every downstream
    /// probability and sum is exact.
    pub dyadic: Option<u32>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_breakpoints: 8,
            normalize: false,
            weights: None,
            jumps: None,
            value: None,
            dyadic: None,
        }
    }
}

impl GenParams {
    pub fn dyadic(q: u32) -> Self {
        GenParams { dyadic: Some(q), ..Default::default() }
    }
}

struct Grid(Option<f64>);

impl Grid {
    fn new(q: Option<u32>) -> Result<Self, FamilyError> {
        match q {
            Some(q) if q > MAX_DYADIC_EXP / 2 => Err(FamilyError::InvalidParams(format!(
                "dyadic grid exponent {q} exceeds {}",
                MAX_DYADIC_EXP / 2
            ))),
            Some(q) => Ok(Grid(Some(f64::from(1u32 << q)))),
            None => Ok(Grid(None)),
        }
    }

    fn floor(&self, x: f64) -> f64 {
        match self.0 {
            Some(s) => (x * s).floor() / s,
            None => x,
        }
    }

    /// Rounds up, but never to zero.
    fn ceil_pos(&self, x: f64) -> f64 {
        match self.0 {
            Some(s) => ((x * s).ceil() / s).max(1.0 / s),
            None => x,
        }
    }
}

/// Draws a random monotone step function, snapped to `grid`.
fn random_step(rng: &mut ChaCha8Rng, max_bp: usize, grid: &Grid) -> StepFunction {
    let count = rng.gen_range(1..=max_bp);
    let mut times = vec![0.0];
    times.extend((1..count).map(|_| grid.floor(rng.gen_range(0.0..1.0))));
    times.sort_by(f64::total_cmp);
    let mut value = rng.gen_range(0.0..1.0);
    let mut pts: Vec<Breakpoint> = Vec::with_capacity(count);
    for &t in &times {
        let v = grid.floor(value);
        match pts.last_mut() {
            // snapped times may collide: keep the later (larger) value
            Some(last) if last.t == t => last.v = v,
            _ => pts.push(Breakpoint { t, v }),
        }
        value += 1.0 - rng.gen_range(0.0..1.0);
    }
    StepFunction::new(pts).expect("generator produces valid steps")
}

/// Sorts the family pointwise in decreasing order. The `k`-th largest of
/// nondecreasing functions is nondecreasing, so the result stays valid.
fn sort_pointwise(fam: &ProcessFamily) -> ProcessFamily {
    let n = fam.n();
    let times = fam.merged_times();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len()); n];
    for j in 0..times.len() {
        let mut row = fam.coeffs(j).to_vec();
        row.sort_by(|a, b| b.total_cmp(a));
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
    let fs = columns
        .iter()
        .map(|c| step_from_samples(times, c).expect("sorted samples stay monotone"))
        .collect();
    ProcessFamily::new(fs).expect("nonempty")
}

/// Replaces the terminal values by `new_terminal` via a jump at `t = 1`.
fn with_terminal(fam: &ProcessFamily, new_terminal: &[f64]) -> ProcessFamily {
    let fs = fam
        .functions()
        .iter()
        .zip(new_terminal)
        .map(|(f, &v)| {
            let mut pts = f.points().to_vec();
            let last = *pts.last().expect("nonempty");
            if v > last.v {
                if last.t == 1.0 {
                    pts.last_mut().unwrap().v = v;
                } else {
                    pts.push(Breakpoint { t: 1.0, v });
                }
            }
            StepFunction::new(pts).expect("raising the terminal keeps monotonicity")
        })
        .collect();
    ProcessFamily::new(fs).expect("nonempty")
}

/// `sum_i a_i(1) - 1 - 2 a_1(1)`.
pub fn mass_slack(fam: &ProcessFamily) -> f64 {
    let a1 = fam.terminal();
    a1.iter().sum::<f64>() - 1.0 - 2.0 * a1[0]
}

/// Makes a family admissible: pointwise ordering first, then the mass
/// condition. When `sum_{i>=2} a_i(1) <= a_1(1)` no rescaling can help, so the
/// lower terminal values are first pulled toward `a_1(1)` (a jump at `t = 1`,
/// which preserves ordering). Then all values are rescaled by the minimal
/// factor that restores `sum_i a_i(1) >= 1 + 2 a_1(1)`.
///
/// With `dyadic = Some(q)` the rescaling uses powers of two instead, so the
/// grid is preserved.
pub fn project_admissible(fam: &ProcessFamily, dyadic: Option<u32>) -> ProcessFamily {
    let mut fam = sort_pointwise(fam);
    if fam.n() < 3 {
        return fam;
    }
    let term = fam.terminal().to_vec();
    let top = term[0];
    let rest: f64 = term[1..].iter().sum();
    if top == 0.0 {
        fam = with_terminal(&fam, &vec![1.0; term.len()]);
    } else if rest - top <= 0.25 * top {
        let room: f64 = term[1..].iter().map(|a| top - a).sum();
        let s = ((0.25 * top - (rest - top)) / room).clamp(0.0, 1.0);
        let grid = Grid::new(dyadic).expect("validated by caller");
        let mut raised = term.clone();
        for a in raised.iter_mut().skip(1) {
            *a = grid.ceil_pos(*a + s * (top - *a)).min(top);
        }
        fam = with_terminal(&fam, &raised);
    }
    let excess = {
        let t = fam.terminal();
        t.iter().sum::<f64>() - 2.0 * t[0]
    };
    if mass_slack(&fam) >= 0.0 {
        return fam;
    }
    if dyadic.is_some() {
        let mut out = fam;
        while mass_slack(&out) < 0.0 {
            out = out.scaled(2.0).expect("scaling keeps validity");
        }
        return out;
    }
    let mut factor = 1.0 / excess;
    loop {
        let out = fam.scaled(factor).expect("scaling keeps validity");
        if mass_slack(&out) >= 0.0 {
            return out;
        }
        // rounding left us a hair below the boundary
        factor = f64::from_bits(factor.to_bits() + 1);
    }
}

/// Deterministic family generator: a pure function of its arguments.
pub fn gen_family(
    kind: FamilyKind,
    n: usize,
    seed: u64,
    params: &GenParams,
) -> Result<ProcessFamily, FamilyError> {
    if n == 0 {
        return Err(FamilyError::InvalidParams("n must be >= 1".into()));
    }
    if params.max_breakpoints == 0 {
        return Err(FamilyError::InvalidParams("max_breakpoints must be >= 1".into()));
    }
    let grid = Grid::new(params.dyadic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let check_len = |name: &str, v: &Option<Vec<f64>>| -> Result<(), FamilyError> {
        match v {
            Some(v) if v.len() != n => Err(FamilyError::InvalidParams(format!(
                "{name} has length {} but n = {n}",
                v.len()
            ))),
            _ => Ok(()),
        }
    };
    check_len("weights", &params.weights)?;
    check_len("jumps", &params.jumps)?;

    match kind {
        FamilyKind::Random => {
            let fs = (0..n)
                .map(|_| random_step(&mut rng, params.max_breakpoints, &grid))
                .collect();
            let fam = ProcessFamily::new(fs)?;
            let norm = fam.terminal_norm();
            if params.normalize && norm > 0.0 && params.dyadic.is_none() {
                fam.scaled(1.0 / norm)
            } else {
                Ok(fam)
            }
        }
        FamilyKind::Indicator => {
            let weights = match &params.weights {
                Some(w) => w.clone(),
                None => (0..n).map(|_| grid.ceil_pos(1.0 - rng.gen_range(0.0..1.0))).collect(),
            };
            let jumps = match &params.jumps {
                Some(j) => j.clone(),
                None => {
                    let mut j: Vec<f64> =
                        (0..n).map(|_| grid.floor(rng.gen_range(0.0..1.0))).collect();
                    j.sort_by(f64::total_cmp);
                    j
                }
            };
            if jumps.windows(2).any(|w| w[1] < w[0]) {
                return Err(FamilyError::InvalidParams("jump times must be nondecreasing".into()));
            }
            let fs = weights
                .iter()
                .zip(&jumps)
                .map(|(&w, &t)| {
                    if t == 0.0 {
                        make_step(&[(0.0, w)])
                    } else {
                        make_step(&[(0.0, 0.0), (t, w)])
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            ProcessFamily::new(fs)
        }
        FamilyKind::OrderedAlpha => {
            let weights = match &params.weights {
                Some(w) => w.clone(),
                None => (0..n).map(|_| grid.ceil_pos(1.0 - rng.gen_range(0.0..1.0))).collect(),
            };
            let alphas = (0..n)
                .map(|_| {
                    let f = random_step(&mut rng, params.max_breakpoints, &Grid(None));
                    let top = f.terminal();
                    let pts: Vec<Breakpoint> = f
                        .points()
                        .iter()
                        .map(|p| Breakpoint {
                            t: grid.floor(p.t),
                            v: if top > 0.0 { grid.floor(p.v / top) } else { 1.0 },
                        })
                        .collect();
                    normalize_points(pts)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let alpha = sort_pointwise(&ProcessFamily::new(alphas)?);
            let fs = alpha
                .functions()
                .iter()
                .zip(&weights)
                .map(|(f, &w)| f.scaled(w))
                .collect();
            ProcessFamily::new(fs)
        }
        FamilyKind::Szatzschneider => {
            if n < 3 {
                return Err(FamilyError::InvalidParams(
                    "conditions 1 and 2 need n >= 3".into(),
                ));
            }
            if let Some(v) = params.value {
                let fam = ProcessFamily::constant(&vec![v; n])?;
                if mass_slack(&fam) < 0.0 {
                    return Err(FamilyError::InvalidParams(format!(
                        "constant value {v} violates the mass condition for n = {n}"
                    )));
                }
                return Ok(fam);
            }
            let fs = (0..n)
                .map(|_| random_step(&mut rng, params.max_breakpoints, &grid))
                .collect();
            let fam = project_admissible(&ProcessFamily::new(fs)?, params.dyadic);
            if params.dyadic.is_some() {
                return Ok(fam);
            }
            // spread the mass slack instead of always sitting on the boundary
            let t = fam.terminal();
            let excess = t.iter().sum::<f64>() - 2.0 * t[0];
            let target = 1.0 + 0.5 * rng.gen_range(0.0..1.0);
            let out = fam.scaled(target / excess)?;
            Ok(if mass_slack(&out) >= 0.0 { out } else { fam })
        }
    }
}

/// Collapses snapped points that share a time (keeping the later value) and
/// forces the terminal value to 1.
fn normalize_points(pts: Vec<Breakpoint>) -> Result<StepFunction, FamilyError> {
    let mut out: Vec<Breakpoint> = Vec::with_capacity(pts.len() + 1);
    for p in pts {
        match out.last_mut() {
            Some(last) if last.t == p.t => last.v = p.v,
            _ => out.push(p),
        }
    }
    let last = out.last_mut().expect("nonempty");
    if last.v < 1.0 {
        if last.t == 1.0 {
            last.v = 1.0;
        } else {
            out.push(Breakpoint { t: 1.0, v: 1.0 });
        }
    }
    StepFunction::new(out)
}

// ---------------------------------------------------------------------------
// Admissibility

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub holds: bool,
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub monotone: Condition,
    pub right_continuous: Condition,
    /// Condition 1: `a_1(t) >= ... >= a_n(t)` at every `t`.
    pub ordering: Condition,
    /// Condition 2: `sum_i a_i(1) >= 1 + 2 a_1(1)`.
    pub mass: Condition,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.monotone.holds && self.right_continuous.holds && self.ordering.holds && self.mass.holds
    }
}

pub fn admissibility_check(fam: &ProcessFamily) -> AdmissibilityReport {
    // monotonicity and right-continuity are enforced by construction
    let monotone_slack = fam
        .functions()
        .iter()
        .flat_map(|f| f.points().windows(2).map(|w| w[1].v - w[0].v))
        .fold(f64::INFINITY, f64::min);
    let ordering_slack = (0..fam.merged_times().len())
        .flat_map(|j| {
            let row = fam.coeffs(j);
            (1..row.len()).map(move |i| row[i - 1] - row[i])
        })
        .fold(f64::INFINITY, f64::min);
    let mass = mass_slack(fam);
    AdmissibilityReport {
        monotone: Condition { holds: monotone_slack >= 0.0, slack: monotone_slack },
        right_continuous: Condition { holds: true, slack: 0.0 },
        ordering: Condition { holds: ordering_slack >= 0.0, slack: ordering_slack },
        mass: Condition { holds: mass >= 0.0, slack: mass },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indicator_half() -> StepFunction {
        make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap()
    }

    #[test]
    fn make_step_two_piece_indicator() {
        let f = indicator_half();
        assert_eq!(f.eval_at(0.0).unwrap(), 0.0);
        assert_eq!(f.eval_at(0.3).unwrap(), 0.0);
        assert_eq!(f.eval_at(0.5).unwrap(), 1.0);
        assert_eq!(f.eval_at(1.0).unwrap(), 1.0);
    }

    #[test]
    fn make_step_constant() {
        let f = make_step(&[(0.0, 1.0)]).unwrap();
        assert_eq!(f.eval_at(0.7).unwrap(), 1.0);
        assert_eq!(f.eval_at(1.0).unwrap(), 1.0);
    }

    #[test]
    fn make_step_errors() {
        assert!(matches!(
            make_step(&[(0.0, 1.0), (0.5, 0.5)]),
            Err(FamilyError::NonMonotoneValues { .. })
        ));
        assert_eq!(make_step(&[(0.0, -1.0)]), Err(FamilyError::NegativeValue(-1.0)));
        assert_eq!(
            make_step(&[(0.0, 0.0), (0.5, 1.0), (0.5, 2.0)]),
            Err(FamilyError::UnsortedTimes(0.5))
        );
        assert_eq!(make_step(&[(0.2, 1.0)]), Err(FamilyError::MissingTimeZero));
        assert_eq!(make_step(&[]), Err(FamilyError::MissingTimeZero));
        assert_eq!(
            make_step(&[(0.0, 0.0), (1.5, 1.0)]),
            Err(FamilyError::TimeOutOfRange(1.5))
        );
        assert!(matches!(
            make_step(&[(0.0, f64::NAN)]),
            Err(FamilyError::NegativeValue(_))
        ));
    }

    #[test]
    fn eval_right_continuity() {
        let f = indicator_half();
        assert_eq!(f.eval_at(0.49).unwrap(), 0.0);
        assert_eq!(f.eval_at(0.5).unwrap(), 1.0);
        assert_eq!(
            StepFunction::constant(1.0).unwrap().eval_at(1.0).unwrap(),
            1.0
        );
        assert_eq!(f.eval_at(-0.1), Err(FamilyError::TimeOutOfRange(-0.1)));
        assert_eq!(f.eval_at(1.1), Err(FamilyError::TimeOutOfRange(1.1)));
    }

    #[test]
    fn merged_times_examples() {
        let fam = ProcessFamily::new(vec![
            indicator_half(),
            make_step(&[(0.0, 0.0), (0.3, 1.0)]).unwrap(),
        ])
        .unwrap();
        assert_eq!(fam.merged_times(), &[0.0, 0.3, 0.5, 1.0]);

        let single = ProcessFamily::constant(&[1.0]).unwrap();
        assert_eq!(single.merged_times(), &[0.0, 1.0]);

        let dup = ProcessFamily::new(vec![indicator_half(), indicator_half()]).unwrap();
        assert_eq!(dup.merged_times(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn gen_indicator_example() {
        let params = GenParams {
            weights: Some(vec![1.0, 1.0]),
            jumps: Some(vec![0.0, 0.5]),
            ..Default::default()
        };
        let fam = gen_family(FamilyKind::Indicator, 2, 0, &params).unwrap();
        assert_eq!(fam.merged_times(), &[0.0, 0.5, 1.0]);
        assert_eq!(fam.coeffs(0), &[1.0, 0.0]);
        assert_eq!(fam.terminal(), &[1.0, 1.0]);
    }

    #[test]
    fn gen_indicator_rejects_unsorted_jumps() {
        let params = GenParams {
            weights: Some(vec![1.0, 1.0]),
            jumps: Some(vec![0.5, 0.1]),
            ..Default::default()
        };
        assert!(matches!(
            gen_family(FamilyKind::Indicator, 2, 0, &params),
            Err(FamilyError::InvalidParams(_))
        ));
    }

    #[test]
    fn gen_szatzschneider_constant_example() {
        let params = GenParams { value: Some(0.5), ..Default::default() };
        let fam = gen_family(FamilyKind::Szatzschneider, 5, 0, &params).unwrap();
        let rep = admissibility_check(&fam);
        assert!(rep.admissible());
        assert_eq!(rep.mass.slack, 0.5);

        assert!(gen_family(FamilyKind::Szatzschneider, 2, 0, &GenParams::default()).is_err());
        let bad = GenParams { value: Some(0.5), ..Default::default() };
        assert!(gen_family(FamilyKind::Szatzschneider, 3, 0, &bad).is_err());
    }

    #[test]
    fn admissibility_examples() {
        let boundary = ProcessFamily::constant(&[0.5; 4]).unwrap();
        let rep = admissibility_check(&boundary);
        assert!(rep.mass.holds);
        assert_eq!(rep.mass.slack, 0.0);

        let crossing = ProcessFamily::new(vec![
            make_step(&[(0.0, 0.0), (0.5, 2.0)]).unwrap(),
            make_step(&[(0.0, 0.0), (0.3, 1.0)]).unwrap(),
        ])
        .unwrap();
        let rep = admissibility_check(&crossing);
        assert!(!rep.ordering.holds);
        assert_eq!(rep.ordering.slack, -1.0);
    }

    #[test]
    fn ordered_alpha_is_ordered() {
        for seed in 0..50 {
            let fam = gen_family(FamilyKind::OrderedAlpha, 3, seed, &GenParams::dyadic(8)).unwrap();
            let w = fam.terminal().to_vec();
            for j in 0..fam.merged_times().len() {
                let alpha: Vec<f64> = fam.coeffs(j).iter().zip(&w).map(|(a, w)| a / w).collect();
                assert!(alpha.windows(2).all(|p| p[0] >= p[1]), "seed {seed}: {alpha:?}");
                assert!(alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
            }
            assert!(fam.is_dyadic(MAX_DYADIC_EXP));
        }
    }

    #[test]
    fn generators_are_deterministic_and_valid() {
        for kind in [
            FamilyKind::Random,
            FamilyKind::Indicator,
            FamilyKind::OrderedAlpha,
            FamilyKind::Szatzschneider,
        ] {
            for seed in 0..30 {
                for params in [GenParams::default(), GenParams::dyadic(10)] {
                    let a = gen_family(kind, 6, seed, &params).unwrap();
                    let b = gen_family(kind, 6, seed, &params).unwrap();
                    assert_eq!(a, b);
                    if kind == FamilyKind::Szatzschneider {
                        assert!(admissibility_check(&a).admissible(), "{kind:?} {seed}");
                    }
                    if params.dyadic.is_some() {
                        assert!(a.is_dyadic(MAX_DYADIC_EXP), "{kind:?} {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn projection_restores_conditions() {
        for seed in 0..100 {
            let raw = gen_family(FamilyKind::Random, 4, seed, &GenParams::default()).unwrap();
            let fam = project_admissible(&raw, None);
            assert!(admissibility_check(&fam).admissible(), "seed {seed}");
            let fam = project_admissible(&raw, Some(10));
            assert!(admissibility_check(&fam).admissible(), "seed {seed}");
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let fam = gen_family(FamilyKind::Random, 3, 7, &GenParams::default()).unwrap();
        let back = ProcessFamily::from_json(&fam.to_json()).unwrap();
        assert_eq!(fam, back);
        assert_eq!(fam.digest(), back.digest());

        let bad = r#"{"n": 1, "functions": [[{"t": 0, "v": 1}, {"t": 0.5, "v": 0.5}]]}"#;
        assert!(matches!(
            ProcessFamily::from_json(bad),
            Err(FamilyError::NonMonotoneValues { .. })
        ));
        let wrong_n = r#"{"n": 2, "functions": [[{"t": 0, "v": 1}]]}"#;
        assert!(matches!(
            ProcessFamily::from_json(wrong_n),
            Err(FamilyError::InvalidParams(_))
        ));
    }
}
