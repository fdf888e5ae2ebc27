//! Derivative-free search for admissible families with a large conjecture
//! ratio `P(X >= c) / P(Y >= 1)`.
//!
//! Kernel: pick a function and one of its breakpoints, then jitter its time
//! (Gaussian, sd 0.1) or its value (uniform, +-20% of the larger of the value
//! and 0.1); with small probability add or drop a breakpoint instead. The
//! result is repaired into a monotone step function and projected onto the
//! admissible set. Moves that do not lower the restart's ratio are accepted.
//!
//! Restarts of [`RESTART_LEN`] evaluations each run independently, keyed by
//! `(seed, restart index)`, and are reduced by ratio with ties broken by the
//! smallest family digest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::family::{
    admissibility_check, gen_family, make_step, project_admissible, FamilyError, FamilyFile,
    FamilyKind, GenParams, ProcessFamily, StepFunction,
};
use crate::oracle::{Mode, OracleError, PathTable, MAX_TABLE_N};

/// Evaluations per restart.
pub const RESTART_LEN: u64 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("conditions 1 and 2 need n >= 3 (got n = {n})")]
    InfeasibleDimension { n: usize },
    #[error("initial family is not admissible")]
    InadmissibleInit,
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub evaluation: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchState {
    pub n: usize,
    pub c: f64,
    pub budget: u64,
    pub seed: u64,
    pub ratio: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub family_digest: String,
    pub incumbent: FamilyFile,
    pub evaluations: u64,
    /// Running best ratio, recorded at each improvement.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
}

impl SearchState {
    pub fn family(&self) -> ProcessFamily {
        ProcessFamily::from_file(self.incumbent.clone()).expect("incumbent is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Scored {
    fam: ProcessFamily,
    ratio: f64,
    p_x: f64,
    p_y: f64,
    digest: String,
}

impl Scored {
    /// Strictly better in the reduction order.
    fn beats(&self, other: &Scored) -> bool {
        self.ratio > other.ratio || (self.ratio == other.ratio && self.digest < other.digest)
    }
}

/// Exact ratio by enumeration. `P(Y >= 1) > 0` for every admissible family.
pub fn ratio_of(fam: &ProcessFamily, c: f64) -> Result<(f64, f64, f64), SearchError> {
    let t = PathTable::from_family(fam, Mode::Float)?;
    let px = t.p_x_ge(c).to_f64();
    let py = t.p_y_ge(1.0).to_f64();
    let r = if py > 0.0 { px / py } else { f64::INFINITY };
    Ok((r, px, py))
}

fn score(fam: ProcessFamily, c: f64) -> Result<Scored, SearchError> {
    let (ratio, p_x, p_y) = ratio_of(&fam, c)?;
    let digest = fam.digest();
    Ok(Scored { fam, ratio, p_x, p_y, digest })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rebuilds a valid step function from possibly disordered points: sorted
/// by time, later points win on equal times, values made nondecreasing.
fn repair(mut pts: Vec<(f64, f64)>) -> StepFunction {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (t, v) in pts {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 = v,
            _ => out.push((t, v)),
        }
    }
    out[0].0 = 0.0;
    let mut run = 0.0f64;
    for p in &mut out {
        run = run.max(p.1.max(0.0));
        p.1 = run;
    }
    make_step(&out).expect("repaired points are valid")
}

fn perturb(fam: &ProcessFamily, rng: &mut ChaCha8Rng) -> ProcessFamily {
    let mut fs: Vec<StepFunction> = fam.functions().to_vec();
    let i = rng.gen_range(0..fs.len());
    let mut pts: Vec<(f64, f64)> = fs[i].points().iter().map(|b| (b.t, b.v)).collect();
    let roll: f64 = rng.gen();
    if roll < 0.1 {
        let t = rng.gen_range(0.0..1.0);
        let v = fs[i].eval_at(t).expect("t in range") * (1.0 + rng.gen_range(0.0..0.3)) + 0.01;
        pts.push((t, v));
    } else if roll < 0.15 && pts.len() > 1 {
        let k = rng.gen_range(1..pts.len());
        pts.remove(k);
    } else {
        let k = rng.gen_range(0..pts.len());
        if k > 0 && rng.gen::<bool>() {
            pts[k].0 = (pts[k].0 + 0.1 * gaussian(rng)).clamp(f64::MIN_POSITIVE, 1.0);
        } else {
            let s = 0.2 * pts[k].1.max(0.1);
            pts[k].1 += rng.gen_range(-s..s);
        }
    }
    fs[i] = repair(pts);
    let raw = ProcessFamily::new(fs).expect("same dimension");
    project_admissible(&raw, None)
}

fn restart_rng(seed: u64, restart: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    rng
}

struct RestartOutcome {
    best: Scored,
    /// Restart incumbent ratio after each evaluation.
    ratios: Vec<f64>,
}

fn run_restart(
    start: ProcessFamily,
    c: f64,
    evals: u64,
    rng: &mut ChaCha8Rng,
) -> Result<RestartOutcome, SearchError> {
    let mut cur = score(start, c)?;
    let mut ratios = vec![cur.ratio];
    for _ in 1..evals {
        let cand = score(perturb(&cur.fam, rng), c)?;
        if cand.ratio >= cur.ratio {
            cur = cand;
        }
        ratios.push(cur.ratio);
    }
    Ok(RestartOutcome { best: cur, ratios })
}

fn check_dimension(n: usize) -> Result<(), SearchError> {
    if n < 3 {
        return Err(SearchError::InfeasibleDimension { n });
    }
    if n > MAX_TABLE_N {
        return Err(OracleError::TooManyVariables { n, max: MAX_TABLE_N }.into());
    }
    Ok(())
}

/// Random restarts with local perturbation. `budget` counts oracle
/// evaluations; with `budget = 0` the starting family is scored once and
/// returned.
pub fn search_ratio(
    n: usize,
    c: f64,
    budget: u64,
    seed: u64,
    init: Option<&ProcessFamily>,
) -> Result<SearchState, SearchError> {
    check_dimension(n)?;
    if let Some(f) = init {
        if f.n() != n {
            return Err(OracleError::DimensionMismatch { expected: n, got: f.n() }.into());
        }
        if !admissibility_check(f).admissible() {
            return Err(SearchError::InadmissibleInit);
        }
    }
    let start = |r: u64, rng: &mut ChaCha8Rng| -> Result<ProcessFamily, SearchError> {
        match (r, init) {
            (0, Some(f)) => Ok(f.clone()),
            _ => Ok(gen_family(FamilyKind::Szatzschneider, n, rng.gen(), &GenParams::default())?),
        }
    };

    if budget == 0 {
        let fam = start(0, &mut restart_rng(seed, 0))?;
        let s = score(fam, c)?;
        return Ok(finish(n, c, budget, seed, s, 0, Vec::new()));
    }

    let restarts = budget.div_ceil(RESTART_LEN);
    let outcomes: Vec<RestartOutcome> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(seed, r);
            let fam = start(r, &mut rng)?;
            let evals = RESTART_LEN.min(budget - r * RESTART_LEN);
            run_restart(fam, c, evals, &mut rng)
        })
        .collect::<Result<_, _>>()?;

    let mut trace = Vec::new();
    let mut running = f64::NEG_INFINITY;
    let mut evaluation = 0u64;
    for o in &outcomes {
        for &r in &o.ratios {
            evaluation += 1;
            if r > running {
                running = r;
                trace.push(TracePoint { evaluation, ratio: r });
            }
        }
    }
    let best = outcomes
        .into_iter()
        .map(|o| o.best)
        .reduce(|a, b| if b.beats(&a) { b } else { a })
        .expect("at least one restart");
    Ok(finish(n, c, budget, seed, best, evaluation, trace))
}

fn finish(
    n: usize,
    c: f64,
    budget: u64,
    seed: u64,
    s: Scored,
    evaluations: u64,
    trace: Vec<TracePoint>,
) -> SearchState {
    SearchState {
        n,
        c,
        budget,
        seed,
        ratio: s.ratio,
        p_x: s.p_x,
        p_y: s.p_y,
        family_digest: s.digest,
        incumbent: s.fam.to_file(),
        evaluations,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessRow {
    pub n: usize,
    pub best_ratio: f64,
    pub family_digest: String,
    /// `n in {3, 4}`: the constant 2 is a theorem there.
    pub theorem_backed: bool,
    pub conjecture_counterexample_candidate: bool,
}

/// One [`search_ratio`] run per `n`, each keyed by `seed + n`.
pub fn sharpness_table(
    ns: &[usize],
    c: f64,
    budget: u64,
    seed: u64,
) -> Result<Vec<SharpnessRow>, SearchError> {
    ns.iter()
        .map(|&n| {
            let s = search_ratio(n, c, budget, seed.wrapping_add(n as u64), None)?;
            Ok(SharpnessRow {
                n,
                best_ratio: s.ratio,
                family_digest: s.family_digest,
                theorem_backed: n <= 4,
                conjecture_counterexample_candidate: n >= 5 && s.ratio > 2.0,
            })
        })
        .collect()
}
