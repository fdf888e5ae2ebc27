//! Chaining bound for `E sup_t X_t` over variance-quantile nets.
//!
//! Net `k` holds the first times at which the variance profile
//! `V(t) = ||a(t)||^2` reaches each fraction `l / N_k` of `V(1)`. Chaining
//! through nested nets with level parameters `(C_k, p_k, N_k)` gives
//!
//! ```text
//! E X <= ||a(1)|| * sum_k C_k sqrt((p_k - 1) / N_{k-1})
//!                         * (1 + N_k * kwa(C_k, p_k) / C_k)
//! kwa(C, p) = 1/2 * C / (p - 1) * ((p - 1) / (C p))^p
//! ```
//!
//! Net sizes grow doubly exponentially, so they are carried as big integers
//! and level quantities fall back to log domain once they leave `f64` range.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::family::ProcessFamily;
use crate::numeric::{log_add_exp, sig12, NeumaierSum};

/// The published value of the generic constant, kept for comparison only.
pub const PAPER_CLAIM: f64 = 4.45;

/// Largest net that [`build_net`] will materialize point by point.
pub const MAX_NET_POINTS: u64 = 1 << 24;

const LN2: f64 = std::f64::consts::LN_2;
/// Tail levels are summed until a term drops below `e^-800`.
const TAIL_LN_CUTOFF: f64 = -800.0;
const TAIL_MAX_LEVELS: usize = 48;
/// Relative slack added to every upper-bounded tail term for rounding.
const TAIL_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainingError {
    #[error("the variance profile is identically zero")]
    ZeroVariance,
    #[error("net count N_{k} = {count} is not a multiple of N_{} = {prev}", .k - 1)]
    NonNestedCounts { k: usize, prev: String, count: String },
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
}

// ---------------------------------------------------------------------------
// Nets

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetLevel {
    pub k: usize,
    pub count: u64,
    /// `u^k_l` for `l = 0..count`; consecutive points may coincide when one
    /// jump of `V` covers several quantiles.
    pub points: Vec<f64>,
    #[serde(skip)]
    indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainingNet {
    pub levels: Vec<NetLevel>,
    #[serde(skip)]
    times: Vec<f64>,
    #[serde(skip)]
    variance: Vec<f64>,
}

/// Builds the variance-quantile nets for the given counts.
pub fn build_net(fam: &ProcessFamily, counts: &[u64]) -> Result<ChainingNet, ChainingError> {
    let variance = fam.variance_profile();
    let v1 = *variance.last().expect("merged times include 1");
    if v1 <= 0.0 {
        return Err(ChainingError::ZeroVariance);
    }
    for (k, w) in counts.windows(2).enumerate() {
        if w[0] == 0 || w[1] % w[0] != 0 {
            return Err(ChainingError::NonNestedCounts {
                k: k + 1,
                prev: w[0].to_string(),
                count: w[1].to_string(),
            });
        }
    }
    let times = fam.merged_times().to_vec();
    let mut levels = Vec::with_capacity(counts.len());
    for (k, &count) in counts.iter().enumerate() {
        if count == 0 || count > MAX_NET_POINTS {
            return Err(ChainingError::ParamOutOfRange(format!(
                "net count {count} outside [1, {MAX_NET_POINTS}]"
            )));
        }
        // single scan: thresholds l V(1) / N increase with l
        let nf = count as f64;
        let mut j = 0;
        let mut indices = Vec::with_capacity(count as usize);
        for l in 0..count {
            let target = l as f64 * v1;
            while variance[j] * nf < target {
                j += 1;
            }
            indices.push(j);
        }
        levels.push(NetLevel {
            k,
            count,
            points: indices.iter().map(|&j| times[j]).collect(),
            indices,
        });
    }
    Ok(ChainingNet { levels, times, variance })
}

impl ChainingNet {
    /// `pi_k(t) = max { u^k_l <= t }`, returned as `(l, u^k_l)` with the largest
    /// such `l`.
    pub fn project(&self, k: usize, t: f64) -> (usize, f64) {
        let pts = &self.levels[k].points;
        let l = pts.partition_point(|&u| u <= t).saturating_sub(1);
        (l, pts[l])
    }

    /// `V(u^k_l)`.
    pub fn variance_at(&self, k: usize, l: usize) -> f64 {
        self.variance[self.levels[k].indices[l]]
    }

    pub fn terminal_variance(&self) -> f64 {
        *self.variance.last().expect("nonempty")
    }

    pub fn merged_times(&self) -> &[f64] {
        &self.times
    }
}

// ---------------------------------------------------------------------------
// Level arithmetic

/// `1/2 * C / (p - 1) * ((p - 1) / (C p))^p`: the bound on
/// `E(X_t / ||X_t||_p - C)_+`.
pub fn kwa_bound(c: f64, p: f64) -> Result<f64, ChainingError> {
    check_cp(c, p)?;
    Ok(kwa_linear(c, p))
}

fn kwa_linear(c: f64, p: f64) -> f64 {
    let v = 0.5 * c / (p - 1.0) * ((p - 1.0) / (c * p)).powf(p);
    if v > 0.0 {
        v
    } else {
        ln_kwa(c, p).exp()
    }
}

fn check_cp(c: f64, p: f64) -> Result<(), ChainingError> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(ChainingError::ParamOutOfRange(format!("C = {c} must be >= 1")));
    }
    if !(p >= 2.0 && p.is_finite()) {
        return Err(ChainingError::ParamOutOfRange(format!("p = {p} must be >= 2")));
    }
    Ok(())
}

fn ln_kwa(c: f64, p: f64) -> f64 {
    (0.5 * c / (p - 1.0)).ln() + p * ((p - 1.0) / (c * p)).ln()
}

/// Log of the level-`k` size target
/// `((2^{k+1}-1)(2^k-1))^{1/3} (2^k/(2^k-1))^{(2/3) 2^k} N_{k-1}^{1/3} 2^{2^k}`.
pub fn ln_f_minimizer(k: u32, ln_prev: f64) -> f64 {
    let m = 2f64.powi(k as i32);
    ((2.0 * m - 1.0) * (m - 1.0)).ln() / 3.0
        + (2.0 / 3.0) * m * (m / (m - 1.0)).ln()
        + ln_prev / 3.0
        + m * LN2
}

pub fn f_minimizer(k: u32, prev: u64) -> f64 {
    ln_f_minimizer(k, (prev as f64).ln()).exp()
}

/// Natural log of a big count.
pub fn ln_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 64 {
        return (x.to_u64().expect("fits") as f64).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("64 bits");
    (top as f64).ln() + shift as f64 * LN2
}

/// Nearest integer to `e^ln_x` (ties up), at least 1. Beyond 2^52 the value
/// is carried with a 53-bit mantissa and a binary exponent.
fn biguint_round_exp(ln_x: f64) -> BigUint {
    if ln_x < 36.0 {
        let v = (ln_x.exp() + 0.5).floor().max(1.0);
        return BigUint::from(v as u64);
    }
    let e2 = ln_x / LN2;
    let shift = e2.floor() as u64 - 52;
    let mant = (e2 - shift as f64).exp2().round() as u64;
    BigUint::from(mant) << shift
}

/// Multiple of `prev` closest to `e^ln_x`, ties rounded up, never below `prev`.
fn nearest_multiple(ln_x: f64, prev: &BigUint) -> BigUint {
    let ln_ratio = ln_x - ln_big(prev);
    let m = if ln_ratio < 36.0 {
        let q = ln_ratio.exp();
        BigUint::from((q + 0.5).floor().max(1.0) as u64)
    } else {
        biguint_round_exp(ln_ratio)
    };
    m * prev
}

// ---------------------------------------------------------------------------
// Plans

fn ser_sig12<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(sig12(*x))
}

fn ser_big<S: Serializer>(x: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelParams {
    pub c: f64,
    pub p: f64,
    #[serde(serialize_with = "ser_big")]
    pub count: BigUint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelTerm {
    pub k: usize,
    #[serde(serialize_with = "ser_sig12")]
    pub c: f64,
    #[serde(serialize_with = "ser_sig12")]
    pub p: f64,
    /// `N_k` in decimal.
    #[serde(serialize_with = "ser_big")]
    pub count: BigUint,
    /// `C_k sqrt((p_k - 1) / N_{k-1})`.
    #[serde(serialize_with = "ser_sig12")]
    pub main: f64,
    /// `N_k kwa(C_k, p_k) / C_k`.
    #[serde(serialize_with = "ser_sig12")]
    pub correction: f64,
    #[serde(serialize_with = "ser_sig12")]
    pub term: f64,
}

/// A truncated parameter sequence together with its evaluated constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantPlan {
    pub levels: Vec<LevelTerm>,
    /// Upper bound on the sum of all levels beyond the last one, continuing
    /// with `C_k = 2`, `p_k = 2^k` and the size recursion.
    #[serde(serialize_with = "ser_sig12")]
    pub tail_bound: f64,
    pub tail_levels: usize,
    #[serde(serialize_with = "ser_sig12")]
    pub total: f64,
    pub paper_claim: f64,
    pub paper_claim_met: bool,
}

impl ConstantPlan {
    pub fn new(params: &[LevelParams]) -> Result<Self, ChainingError> {
        total_constant_of(params)
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn params(&self) -> Vec<LevelParams> {
        self.levels
            .iter()
            .map(|l| LevelParams { c: l.c, p: l.p, count: l.count.clone() })
            .collect()
    }

    pub fn counts(&self) -> Vec<BigUint> {
        self.levels.iter().map(|l| l.count.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn level_logs(c: f64, p: f64, ln_prev: f64, ln_count: f64) -> (f64, f64) {
    let ln_main = c.ln() + 0.5 * ((p - 1.0).ln() - ln_prev);
    let ln_corr = ln_count + ln_kwa(c, p) - c.ln();
    (ln_main, ln_corr)
}

/// `(main, correction, main * (1 + correction))`, in linear arithmetic while
/// the counts fit in `f64` and in log domain beyond.
fn level_term(c: f64, p: f64, prev: &BigUint, count: &BigUint) -> (f64, f64, f64) {
    let (lp, lc) = (ln_big(prev), ln_big(count));
    let kwa = kwa_linear(c, p);
    if lc < 700.0 && kwa > 1e-300 {
        let prev_f = prev.to_f64().expect("finite");
        let count_f = count.to_f64().expect("finite");
        let main = c * ((p - 1.0) / prev_f).sqrt();
        let corr = count_f * kwa / c;
        return (main, corr, main * (1.0 + corr));
    }
    let (ln_main, ln_corr) = level_logs(c, p, lp, lc);
    (ln_main.exp(), ln_corr.exp(), (ln_main + log_add_exp(0.0, ln_corr)).exp())
}

/// Upper bound on the levels after the last one, propagating an interval
/// `[lo, hi]` for `ln N_k` through the rounding recursion.
fn tail_bound_from(k_last: usize, ln_count: f64) -> (f64, usize) {
    let mut lo = ln_count;
    let mut hi = ln_count;
    let mut acc = NeumaierSum::new();
    let mut prev_ln_term = f64::INFINITY;
    for step in 1..=TAIL_MAX_LEVELS {
        let k = (k_last + step) as u32;
        let p = 2f64.powi(k as i32);
        let c = 2.0;
        // nearest multiple of N_{k-1} lies within N_{k-1}/2 of the target
        let x_hi = ln_f_minimizer(k, hi);
        let x_lo = ln_f_minimizer(k, lo);
        let next_hi = log_add_exp(x_hi, hi - LN2).max(hi);
        let next_lo = if x_lo > lo - LN2 {
            (x_lo + (-(lo - LN2 - x_lo).exp()).ln_1p()).max(lo)
        } else {
            lo
        };
        let (ln_main, ln_corr) = level_logs(c, p, lo, next_hi);
        let ln_term = ln_main + log_add_exp(0.0, ln_corr) + TAIL_SLACK;
        acc.add(ln_term.exp());
        lo = next_lo;
        hi = next_hi;
        if ln_term < TAIL_LN_CUTOFF && ln_term < prev_ln_term - LN2 {
            // terms now shrink faster than geometrically with ratio 1/2;
            // the remainder is at most the last term
            acc.add(ln_term.exp());
            return (acc.value(), step);
        }
        prev_ln_term = ln_term;
    }
    (acc.value(), TAIL_MAX_LEVELS)
}

fn total_constant_of(params: &[LevelParams]) -> Result<ConstantPlan, ChainingError> {
    if params.is_empty() {
        return Err(ChainingError::ParamOutOfRange("a plan needs K >= 1".into()));
    }
    let mut prev = BigUint::one();
    let mut levels = Vec::with_capacity(params.len());
    let mut sum = NeumaierSum::new();
    for (idx, lp) in params.iter().enumerate() {
        let k = idx + 1;
        check_cp(lp.c, lp.p)?;
        if lp.count.is_zero() || !(&lp.count % &prev).is_zero() {
            return Err(ChainingError::NonNestedCounts {
                k,
                prev: prev.to_string(),
                count: lp.count.to_string(),
            });
        }
        let (main, correction, term) = level_term(lp.c, lp.p, &prev, &lp.count);
        sum.add(term);
        levels.push(LevelTerm { k, c: lp.c, p: lp.p, count: lp.count.clone(), main, correction, term });
        prev = lp.count.clone();
    }
    let (tail_bound, tail_levels) = tail_bound_from(params.len(), ln_big(&prev));
    sum.add(tail_bound);
    let total = sum.value();
    Ok(ConstantPlan {
        levels,
        tail_bound,
        tail_levels,
        total,
        paper_claim: PAPER_CLAIM,
        paper_claim_met: total <= PAPER_CLAIM,
    })
}

/// Re-evaluates a plan from its parameters.
pub fn total_constant(plan: &ConstantPlan) -> Result<ConstantPlan, ChainingError> {
    total_constant_of(&plan.params())
}

/// `C_1 = 1`, `C_k = 2` for `k >= 2`, `p_k = 2^k`, `N_0 = 1`, and `N_k` the
/// multiple of `N_{k-1}` closest to the level-`k` size target.
pub fn paper_plan(k_max: usize) -> Result<ConstantPlan, ChainingError> {
    if k_max == 0 {
        return Err(ChainingError::ParamOutOfRange("K must be >= 1".into()));
    }
    let mut prev = BigUint::one();
    let mut params = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let count = nearest_multiple(ln_f_minimizer(k as u32, ln_big(&prev)), &prev);
        params.push(LevelParams {
            c: if k == 1 { 1.0 } else { 2.0 },
            p: 2f64.powi(k as i32),
            count: count.clone(),
        });
        prev = count;
    }
    ConstantPlan::new(&params)
}

// ---------------------------------------------------------------------------
// Re-optimization

/// Search coordinates for one level: `C`, `ln p` and `ln(N_k / N_{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coords {
    c: f64,
    ln_p: f64,
    ln_mult: f64,
}

const C_RANGE: (f64, f64) = (1.0, 4.0);

fn coords_of(plan: &ConstantPlan) -> Vec<Coords> {
    let mut prev = BigUint::one();
    plan.levels
        .iter()
        .map(|l| {
            let c = Coords { c: l.c, ln_p: l.p.ln(), ln_mult: ln_big(&l.count) - ln_big(&prev) };
            prev = l.count.clone();
            c
        })
        .collect()
}

fn params_of(coords: &[Coords]) -> Vec<LevelParams> {
    let mut prev = BigUint::one();
    coords
        .iter()
        .map(|x| {
            let mult = biguint_round_exp(x.ln_mult.max(0.0));
            let count = mult * &prev;
            prev = count.clone();
            LevelParams { c: x.c.clamp(C_RANGE.0, C_RANGE.1), p: x.ln_p.exp().max(2.0), count }
        })
        .collect()
}

fn clamp_coords(x: &mut Coords, k: usize) {
    x.c = x.c.clamp(C_RANGE.0, C_RANGE.1);
    x.ln_p = x.ln_p.clamp(2f64.ln(), (k as f64 + 4.0) * LN2);
    x.ln_mult = x.ln_mult.max(0.0);
}

/// Coordinate descent with random restarts over `(C_k, p_k, N_k)`, starting
/// from [`paper_plan`]. `budget` counts plan evaluations; only strict
/// improvements are accepted, so the result never exceeds the starting total.
pub fn optimize_plan(k_max: usize, budget: u64, seed: u64) -> Result<ConstantPlan, ChainingError> {
    let start = paper_plan(k_max)?;
    if budget == 0 {
        return Ok(start);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |x: &[Coords]| ConstantPlan::new(&params_of(x)).map(|p| p.total).ok();

    let mut best = coords_of(&start);
    let mut best_total = start.total;
    let mut cur = best.clone();
    let mut cur_total = best_total;
    let dims = 3 * k_max;
    let initial_steps = |k: usize| [0.5, 0.5, (k as f64).max(1.0)];
    let mut steps: Vec<f64> = (0..dims).map(|d| initial_steps(d / 3 + 1)[d % 3]).collect();
    let mut used = 0u64;
    let mut stalled = 0usize;

    while used < budget {
        let d = (used as usize) % dims;
        let (lvl, which) = (d / 3, d % 3);
        let mut improved = false;
        for dir in [1.0, -1.0] {
            if used >= budget {
                break;
            }
            let mut cand = cur.clone();
            let x = &mut cand[lvl];
            match which {
                0 => x.c += dir * steps[d],
                1 => x.ln_p += dir * steps[d],
                _ => x.ln_mult += dir * steps[d],
            }
            clamp_coords(x, lvl + 1);
            used += 1;
            if let Some(total) = eval(&cand) {
                if total < cur_total {
                    cur = cand;
                    cur_total = total;
                    improved = true;
                    break;
                }
            }
        }
        if improved {
            steps[d] *= 1.5;
            stalled = 0;
        } else {
            steps[d] *= 0.5;
            stalled += 1;
        }
        if cur_total < best_total {
            best = cur.clone();
            best_total = cur_total;
        }
        // restart once every coordinate has stalled at a tiny step
        if stalled >= dims && steps.iter().all(|&s| s < 1e-6) {
            cur = best.clone();
            for (k, x) in cur.iter_mut().enumerate() {
                x.c += rng.gen_range(-0.5..0.5);
                x.ln_p += rng.gen_range(-0.5..0.5);
                x.ln_mult += rng.gen_range(-1.0..1.0) * (k as f64 + 1.0);
                clamp_coords(x, k + 1);
            }
            used += 1;
            cur_total = eval(&cur).unwrap_or(f64::INFINITY);
            steps = (0..dims).map(|d| initial_steps(d / 3 + 1)[d % 3]).collect();
            stalled = 0;
        }
    }
    ConstantPlan::new(&params_of(&best))
}

// ---------------------------------------------------------------------------
// Per-family bounds

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyLevel {
    pub k: usize,
    /// Distinct net points at this level.
    pub net_points: usize,
    /// Largest increment norm `||a(u) - a(pi_{k-1}(u))||` over the net.
    pub max_increment: f64,
    /// Number of nonzero increments.
    pub nonzero_increments: usize,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyBound {
    pub bound: f64,
    pub chain_bound: f64,
    /// Level at which the net contains every change point of `a`.
    pub closure_level: Option<usize>,
    /// Finite-max term for whatever the last net does not resolve.
    pub residual: f64,
    /// `total_constant(plan) * ||a(1)||`.
    pub cap: f64,
    pub terminal_norm: f64,
    pub levels: Vec<FamilyLevel>,
}

/// Net membership by merged-time index: `j` is a net point iff some quantile
/// `l V(1) / N` (with `l < N`) falls in `(V(tau_{j-1}), V(tau_j)]`.
fn net_indices(variance: &[f64], count: f64) -> Vec<bool> {
    let v1 = variance[variance.len() - 1];
    let mut member = vec![false; variance.len()];
    member[0] = true;
    for j in 1..variance.len() {
        if variance[j] > variance[j - 1] {
            let lo = (variance[j - 1] * count / v1).floor() + 1.0;
            let hi = (variance[j] * count / v1).floor().min(count - 1.0);
            member[j] = lo <= hi;
        }
    }
    member
}

fn increment_norm(fam: &ProcessFamily, j: usize, from: usize) -> f64 {
    fam.coeffs(j)
        .iter()
        .zip(fam.coeffs(from))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Projection onto a net given as a membership mask: the last member at or
/// before each index.
fn projections(member: &[bool]) -> Vec<usize> {
    let mut last = 0;
    member
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            if m {
                last = j;
            }
            last
        })
        .collect()
}

/// Upper bound on `E sup_t X_t` by chaining through the plan's nets.
pub fn family_bound(fam: &ProcessFamily, plan: &ConstantPlan) -> Result<FamilyBound, ChainingError> {
    let variance = fam.variance_profile();
    let v1 = *variance.last().expect("nonempty");
    if v1 <= 0.0 {
        return Err(ChainingError::ZeroVariance);
    }
    let norm = v1.sqrt();
    let cap = plan.total * norm;
    let m = variance.len();
    let change: Vec<bool> = (0..m).map(|j| j == 0 || variance[j] > variance[j - 1]).collect();
    let closed = |member: &[bool]| change.iter().zip(member).all(|(&c, &mb)| !c || mb);

    let mut prev_member = vec![false; m];
    prev_member[0] = true;
    let mut levels = Vec::new();
    let mut chain = NeumaierSum::new();
    let mut closure_level = closed(&prev_member).then_some(0);

    for lvl in &plan.levels {
        if closure_level.is_some() {
            break;
        }
        let count = ln_big(&lvl.count).exp();
        let mut member = net_indices(&variance, count);
        // keep the nets nested even where floating point blurs quantiles
        for (a, &b) in member.iter_mut().zip(&prev_member) {
            *a |= b;
        }
        let proj = projections(&prev_member);
        let mut max_inc: f64 = 0.0;
        let mut nonzero = 0usize;
        for j in (0..m).filter(|&j| member[j]) {
            let d = increment_norm(fam, j, proj[j]);
            if d > 0.0 {
                nonzero += 1;
                max_inc = max_inc.max(d);
            }
        }
        let kwa = kwa_linear(lvl.c, lvl.p);
        let contribution =
            lvl.c * (lvl.p - 1.0).sqrt() * max_inc * (1.0 + nonzero as f64 * kwa / lvl.c);
        chain.add(contribution);
        levels.push(FamilyLevel {
            k: lvl.k,
            net_points: member.iter().filter(|&&b| b).count(),
            max_increment: max_inc,
            nonzero_increments: nonzero,
            contribution,
        });
        if closed(&member) {
            closure_level = Some(lvl.k);
        }
        prev_member = member;
    }

    let residual = if closure_level.is_some() {
        0.0
    } else {
        // E max_j (X_{tau_j} - X_{pi_K(tau_j)}) <= sigma sqrt(2 ln(2M))
        let proj = projections(&prev_member);
        let incs: Vec<f64> = (0..m).map(|j| increment_norm(fam, j, proj[j])).collect();
        let sigma = incs.iter().copied().fold(0.0, f64::max);
        let count = incs.iter().filter(|&&d| d > 0.0).count();
        if count > 0 {
            sigma * (2.0 * (2.0 * count as f64).ln()).sqrt()
        } else {
            0.0
        }
    };
    let chain_bound = chain.value();
    Ok(FamilyBound {
        bound: (chain_bound + residual).min(cap),
        chain_bound,
        closure_level,
        residual,
        cap,
        terminal_norm: norm,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{gen_family, make_step, FamilyKind, GenParams};

    fn indicator_quarters() -> ProcessFamily {
        let params = GenParams {
            weights: Some(vec![0.5; 4]),
            jumps: Some(vec![0.2, 0.4, 0.6, 0.8]),
            ..Default::default()
        };
        gen_family(FamilyKind::Indicator, 4, 0, &params).unwrap()
    }

    #[test]
    fn net_example_quarters() {
        let net = build_net(&indicator_quarters(), &[1, 4]).unwrap();
        assert_eq!(net.levels[0].points, vec![0.0]);
        assert_eq!(net.levels[1].points, vec![0.0, 0.2, 0.4, 0.6]);
        assert_eq!(net.project(1, 0.5), (2, 0.4));
        assert_eq!(net.project(1, 1.0), (3, 0.6));
    }

    #[test]
    fn net_single_level() {
        let net = build_net(&indicator_quarters(), &[1]).unwrap();
        assert_eq!(net.levels.len(), 1);
        assert_eq!(net.levels[0].points, vec![0.0]);
    }

    #[test]
    fn net_errors() {
        let zero = ProcessFamily::constant(&[0.0, 0.0]).unwrap();
        assert_eq!(build_net(&zero, &[1]), Err(ChainingError::ZeroVariance));
        assert!(matches!(
            build_net(&indicator_quarters(), &[1, 4, 6]),
            Err(ChainingError::NonNestedCounts { k: 2, .. })
        ));
    }

    #[test]
    fn net_duplicates_under_big_jump() {
        let fam = ProcessFamily::new(vec![make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap()]).unwrap();
        let net = build_net(&fam, &[4]).unwrap();
        assert_eq!(net.levels[0].points, vec![0.0, 0.5, 0.5, 0.5]);
        // the upper side of the sandwich fails across a jump
        assert!(net.variance_at(0, 1) > 2.0 / 4.0 * net.terminal_variance());
        assert_eq!(net.project(0, 0.7), (3, 0.5));
    }

    #[test]
    fn kwa_examples() {
        assert_eq!(kwa_bound(1.0, 2.0).unwrap(), 0.125);
        assert!((kwa_bound(2.0, 2.0).unwrap() - 0.0625).abs() < 1e-16);
        let mut last = f64::INFINITY;
        for p in [2.0, 3.0, 4.0, 8.0, 16.0, 64.0] {
            let v = kwa_bound(1.5, p).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(kwa_bound(0.5, 2.0).is_err());
        assert!(kwa_bound(1.0, 1.5).is_err());
    }

    #[test]
    fn f_minimizer_examples() {
        // closed-form values frozen from a 60-digit evaluation
        assert!((f_minimizer(1, 1) - 14.536_964_742_657_117).abs() < 1e-12);
        assert!((f_minimizer(2, 15) - 234.455_341_500_220_12).abs() < 1e-10);
        let ratio = f_minimizer(3, 480) / f_minimizer(3, 240);
        assert!((ratio - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn paper_plan_counts_and_params() {
        let plan = paper_plan(6).unwrap();
        let counts: Vec<String> = plan.counts().iter().map(|c| c.to_string()).collect();
        assert_eq!(
            counts,
            ["15", "240", "15360", "25128960", "30955335536640", "22682718228348522789396480"]
        );
        let l = &plan.levels;
        assert_eq!((l[0].c, l[1].c, l[0].p, l[1].p), (1.0, 2.0, 2.0, 4.0));
    }

    #[test]
    fn paper_plan_level_terms() {
        let plan = paper_plan(12).unwrap();
        assert_eq!(plan.levels[0].term, 2.875);
        assert!((plan.levels[1].term - 1.601_933_074_505_708_8).abs() < 1e-12);
        assert!((plan.levels[2].term - 0.844_556_974_532_981).abs() < 1e-12);
        assert!(plan.tail_bound < 1e-9);
        assert!(plan.total.is_finite());
        // frozen from the same 60-digit evaluation of the recursion
        assert!((plan.total - 5.774_433_172_244_839).abs() < 1e-12, "{}", plan.total);
        assert!(!plan.paper_claim_met);
    }

    #[test]
    fn telescoping_within_tail_bound() {
        for k in 1..12 {
            let a = paper_plan(k).unwrap();
            let b = paper_plan(k + 1).unwrap();
            assert!(
                (b.total - a.total).abs() <= a.tail_bound * (1.0 + 1e-9),
                "K = {k}: {} vs {} (tail {})",
                a.total,
                b.total,
                a.tail_bound
            );
            assert!(a.levels[k - 1].term > 0.0);
        }
    }

    #[test]
    fn plan_validation() {
        let bad = [LevelParams { c: 1.0, p: 2.0, count: BigUint::from(15u32) },
            LevelParams { c: 2.0, p: 4.0, count: BigUint::from(100u32) }];
        assert!(matches!(ConstantPlan::new(&bad), Err(ChainingError::NonNestedCounts { k: 2, .. })));
        let bad = [LevelParams { c: 0.5, p: 2.0, count: BigUint::from(15u32) }];
        assert!(ConstantPlan::new(&bad).is_err());
        assert!(paper_plan(0).is_err());
    }

    #[test]
    fn recompute_matches() {
        let plan = paper_plan(8).unwrap();
        assert_eq!(total_constant(&plan).unwrap(), plan);
    }

    #[test]
    fn optimizer_budget_zero_is_identity() {
        assert_eq!(optimize_plan(5, 0, 1).unwrap(), paper_plan(5).unwrap());
    }

    #[test]
    fn optimizer_improves_and_is_deterministic() {
        let base = paper_plan(8).unwrap();
        let a = optimize_plan(8, 2000, 7).unwrap();
        let b = optimize_plan(8, 2000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.total < base.total, "{} vs {}", a.total, base.total);
    }

    #[test]
    fn level_one_rebalancing_oracle() {
        // with C_1 = 1 the level-1 correction slope is x/8; x/8 + 2 sqrt(3/x)
        // is minimized over the integers at x = 6
        let g = |x: f64| x / 8.0 + 2.0 * (3.0 / x).sqrt();
        let best = (1..100).min_by(|&a, &b| g(a as f64).total_cmp(&g(b as f64))).unwrap();
        assert_eq!(best, 6);
        let plan = |n1: u32| {
            ConstantPlan::new(&[
                LevelParams { c: 1.0, p: 2.0, count: BigUint::from(n1) },
                LevelParams { c: 2.0, p: 4.0, count: BigUint::from(n1 * 16) },
            ])
            .unwrap()
        };
        assert!(plan(6).levels[0].term < plan(15).levels[0].term);
        assert_eq!(plan(6).levels[0].term, 1.75);
    }

    #[test]
    fn family_bound_examples() {
        let plan = paper_plan(12).unwrap();
        let two_piece = ProcessFamily::new(vec![
            make_step(&[(0.0, 1.0)]).unwrap(),
            make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap(),
        ])
        .unwrap();
        let b = family_bound(&two_piece, &plan).unwrap();
        assert!(b.bound >= 0.5);
        assert!(b.bound <= plan.total * 2f64.sqrt());

        let flat = ProcessFamily::constant(&[1.0]).unwrap();
        let b = family_bound(&flat, &plan).unwrap();
        assert_eq!(b.closure_level, Some(0));
        assert_eq!(b.bound, 0.0);

        let zero = ProcessFamily::constant(&[0.0]).unwrap();
        assert_eq!(family_bound(&zero, &plan), Err(ChainingError::ZeroVariance));
    }

    #[test]
    fn family_bound_residual_when_unclosed() {
        // two-level plan; many tiny jumps keep the nets from closing
        let fam = gen_family(FamilyKind::Random, 10, 3, &GenParams::default()).unwrap();
        let plan = ConstantPlan::new(&[LevelParams { c: 1.0, p: 2.0, count: BigUint::from(2u32) }])
            .unwrap();
        let b = family_bound(&fam, &plan).unwrap();
        assert!(b.closure_level.is_none());
        assert!(b.residual > 0.0);
        assert!(b.bound <= b.cap);
    }

    #[test]
    fn big_count_logs() {
        let x = BigUint::from(3u32).pow(200);
        assert!((ln_big(&x) - 200.0 * 3f64.ln()).abs() < 1e-10);
        let y = biguint_round_exp(500.0);
        assert!((ln_big(&y) - 500.0).abs() < 1e-12);
        assert_eq!(biguint_round_exp(2.5f64.ln()), BigUint::from(3u32));
    }
}
