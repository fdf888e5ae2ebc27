//! Every tail, moment and concentration inequality evaluated on concrete
//! inputs against the exact oracle, and the constant presets of the
//! domination theorems.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::family::{admissibility_check, ProcessFamily};
use crate::oracle::{
    classic_lo_stats, kahane_integral, phi_gap_on, BoxPoint, BoxSpec, Mode, OracleError,
    PathTable, PhiSpec, SignMatrix,
};

/// Relative slack for checks whose sides are expectations or transcendental
/// constants. Pure probability comparisons use none.
pub const REL_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InequalityError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("preset infeasible: theta = {theta} must lie in (0, 1)")]
    InfeasiblePreset { theta: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The inputs fall outside the statement's hypotheses; reported only.
    SkippedHypothesis,
    /// Evaluated but not backed by a theorem (or backed by an external lemma).
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub margin: f64,
    pub inputs_digest: String,
    pub status: CheckStatus,
    pub theorem_backed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl CheckResult {
    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    /// Literal `lhs <= rhs`.
    Exact,
    /// `lhs <= rhs + REL_SLACK * max(1, |lhs|, |rhs|)`.
    Relative,
}

fn digest(parts: &str) -> String {
    let h = Sha256::digest(parts.as_bytes());
    h[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Builder {
    id: &'static str,
    digest: String,
    theorem_backed: bool,
    flags: Vec<String>,
}

impl Builder {
    fn new(id: &'static str, inputs: String) -> Self {
        Builder { id, digest: digest(&format!("{id}|{inputs}")), theorem_backed: true, flags: vec![] }
    }

    fn observational(mut self, flag: &str) -> Self {
        self.theorem_backed = false;
        self.flags.push(flag.to_string());
        self
    }

    fn flag(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_string());
        self
    }

    fn compare(self, lhs: f64, rhs: f64, cmp: Cmp) -> CheckResult {
        let holds = match cmp {
            Cmp::Exact => lhs <= rhs,
            Cmp::Relative => lhs <= rhs + REL_SLACK * lhs.abs().max(rhs.abs()).max(1.0),
        };
        let status = match (self.theorem_backed, holds) {
            (false, _) => CheckStatus::Observed,
            (true, true) => CheckStatus::Pass,
            (true, false) => CheckStatus::Fail,
        };
        CheckResult {
            check_id: self.id.to_string(),
            lhs,
            rhs,
            holds,
            margin: rhs - lhs,
            inputs_digest: self.digest,
            status,
            theorem_backed: self.theorem_backed,
            flags: self.flags,
        }
    }

    fn skipped(self, why: &str) -> CheckResult {
        CheckResult {
            check_id: self.id.to_string(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            holds: false,
            margin: f64::NAN,
            inputs_digest: self.digest,
            status: CheckStatus::SkippedHypothesis,
            theorem_backed: self.theorem_backed,
            flags: vec![format!("hypothesis-violated: {why}")],
        }
    }
}

// ---------------------------------------------------------------------------
// Cached oracle views

/// Tables for a single weight vector `t`.
pub struct WeightCtx {
    t: Vec<f64>,
    /// `Y = X_t` per mask (stored in both columns).
    table: PathTable,
    norm: f64,
    mode: Mode,
}

impl WeightCtx {
    pub fn new(t: &[f64], mode: Mode) -> Result<Self, InequalityError> {
        if t.is_empty() {
            return Err(InequalityError::InvalidInput("empty weight vector".into()));
        }
        let table = PathTable::from_matrix(&SignMatrix::from_weights(t), 1, 0, mode)?;
        Ok(WeightCtx {
            t: t.to_vec(),
            table,
            norm: t.iter().map(|x| x * x).sum::<f64>().sqrt(),
            mode,
        })
    }
}

/// Tables for a family: the path sups and its terminal vector.
pub struct FamilyCtx<'a> {
    fam: &'a ProcessFamily,
    table: PathTable,
    weights: WeightCtx,
    ex: f64,
}

impl<'a> FamilyCtx<'a> {
    pub fn new(fam: &'a ProcessFamily, mode: Mode) -> Result<Self, InequalityError> {
        let table = PathTable::from_family(fam, mode)?;
        let weights = WeightCtx::new(fam.terminal(), mode)?;
        let ex = table.ex();
        Ok(FamilyCtx { fam, table, weights, ex })
    }

    pub fn ex(&self) -> f64 {
        self.ex
    }

    /// `EX / ||a(1)||`, or 0 when the terminal vector vanishes.
    pub fn ex_ratio(&self) -> f64 {
        if self.weights.norm > 0.0 {
            self.ex / self.weights.norm
        } else {
            0.0
        }
    }
}

fn p_x(ctx: &FamilyCtx, u: f64) -> f64 {
    ctx.table.p_x_ge(u).to_f64()
}

fn p_y(w: &WeightCtx, u: f64) -> f64 {
    w.table.p_y_ge(u).to_f64()
}

// ---------------------------------------------------------------------------
// Individual checks

/// `||X_t||_p <= sqrt((p-1)/(q-1)) ||X_t||_q` for `1 < q < p`.
pub fn hyp(w: &WeightCtx, p: f64, q: f64) -> CheckResult {
    let b = Builder::new("hyp", format!("{:?}|{p}|{q}", w.t));
    if !(1.0 < q && q < p && p.is_finite()) {
        return b.skipped("requires 1 < q < p < inf");
    }
    let lhs = w.table.y_norm(p);
    let rhs = ((p - 1.0) / (q - 1.0)).sqrt() * w.table.y_norm(q);
    b.compare(lhs, rhs, Cmp::Relative)
}

/// `||t|| / sqrt 2 <= E|X_t|`.
pub fn szarek(w: &WeightCtx) -> CheckResult {
    let b = Builder::new("szarek", format!("{:?}", w.t));
    b.compare(w.norm / 2f64.sqrt(), w.table.y_moment(1.0), Cmp::Relative)
}

/// `(1 - theta)^2 / 18 <= P(Y >= sqrt(theta) ||t||)`.
pub fn pz(w: &WeightCtx, theta: f64) -> CheckResult {
    let b = Builder::new("pz", format!("{:?}|{theta}", w.t));
    if !(theta > 0.0 && theta < 1.0) {
        return b.skipped("requires theta in (0, 1)");
    }
    if w.norm == 0.0 {
        return b.skipped("requires t != 0");
    }
    let lhs = (1.0 - theta).powi(2) / 18.0;
    b.compare(lhs, p_y(w, theta.sqrt() * w.norm), Cmp::Relative)
}

/// `1/9 <= (E Y^2)^2 / E Y^4`.
pub fn pz_moment(w: &WeightCtx) -> CheckResult {
    let b = Builder::new("pz_moment", format!("{:?}", w.t));
    if w.norm == 0.0 {
        return b.skipped("requires t != 0");
    }
    let m2 = w.table.y_moment(2.0);
    let m4 = w.table.y_moment(4.0);
    b.compare(1.0 / 9.0, m2 * m2 / m4, Cmp::Relative)
}

/// `E(Y - u)_+ <= 4 P(Y >= u) E(Y)_+` for `u >= 0`.
pub fn kahane(t: &[f64], u: f64, mode: Mode) -> Result<CheckResult, InequalityError> {
    let b = Builder::new("kahane", format!("{t:?}|{u}"));
    if !(u >= 0.0) {
        return Ok(b.skipped("requires u >= 0"));
    }
    let k = kahane_integral(t, u, mode)?;
    Ok(b.compare(k.lhs, k.rhs, Cmp::Relative))
}

/// `E phi(X - EX) <= E phi(Y)` over a box or a point set inside it.
///
/// On the whole box `X - EX = Y / 2`, so any convex `phi` qualifies there;
/// non-increasing `phi` is flagged. Point sets are observational.
pub fn conc_phi(spec: &BoxSpec, table: &PathTable, phi: PhiSpec) -> CheckResult {
    let mut b = Builder::new("conc_phi", format!("{spec:?}|{phi:?}"));
    if phi.validate().is_err() {
        return b.skipped("phi is not convex");
    }
    if !phi.is_increasing() {
        b = b.flag("beyond-statement");
    }
    if spec.points.is_some() {
        b = b.observational("beyond-paper");
    }
    let g = phi_gap_on(spec, table, phi);
    b.compare(g.lhs, g.rhs, Cmp::Relative)
}

/// `P(|X - EX| >= u) <= 2 exp(-u^2 / (2 ||t0||^2))`.
pub fn subgauss(spec: &BoxSpec, table: &PathTable, u: f64) -> CheckResult {
    let mut b = Builder::new("subgauss", format!("{spec:?}|{u}"));
    let norm2: f64 = spec.corner.iter().map(|x| x * x).sum();
    if !(u > 0.0) {
        return b.skipped("requires u > 0");
    }
    if norm2 == 0.0 {
        return b.skipped("requires t0 != 0");
    }
    if spec.points.is_some() {
        b = b.observational("beyond-paper");
    }
    let ex = match spec.points {
        None => 0.5 * spec.corner.iter().sum::<f64>(),
        Some(_) => table.ex(),
    };
    let mode = table.mode();
    let lhs = table.count(|x, _| mode.ge((x - ex).abs(), u)).to_f64();
    let rhs = 2.0 * (-u * u / (2.0 * norm2)).exp();
    b.compare(lhs, rhs, Cmp::Relative)
}

/// `P(X >= EX + (1 + alpha) u) <= 4 / (alpha u) P(Y >= u) E(Y)_+`.
pub fn domin_ey(ctx: &FamilyCtx, alpha: f64, u: f64) -> CheckResult {
    let b = Builder::new("domin_ey", format!("{}|{alpha}|{u}", ctx.fam.digest()));
    if !(alpha > 0.0 && alpha <= 1.0) {
        return b.skipped("requires alpha in (0, 1]");
    }
    if !(u > 0.0) {
        return b.skipped("requires u > 0");
    }
    let lhs = p_x(ctx, ctx.ex + (1.0 + alpha) * u);
    let rhs = 4.0 / (alpha * u) * p_y(&ctx.weights, u) * ctx.weights.table.ey_plus();
    b.compare(lhs, rhs, Cmp::Relative)
}

/// Parameters `(alpha, theta, C_1)` of the domination theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationPreset {
    pub alpha: f64,
    pub theta: f64,
    pub c1: f64,
}

impl DominationPreset {
    pub fn new(alpha: f64, theta: f64, c1: f64) -> Result<Self, InequalityError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(InequalityError::InvalidInput(format!("alpha = {alpha} not in (0, 1]")));
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(InequalityError::InvalidInput(format!("C1 = {c1} must be positive")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(InequalityError::InfeasiblePreset { theta });
        }
        Ok(DominationPreset { alpha, theta, c1 })
    }

    /// `C_1 / sqrt(theta) + 1 + alpha`.
    pub fn multiplier(&self) -> f64 {
        self.c1 / self.theta.sqrt() + 1.0 + self.alpha
    }

    /// `max(18 / (1 - theta)^2, 2 / (alpha sqrt(theta)))`.
    pub fn tail_constant(&self) -> f64 {
        tail_constant(self.alpha, self.theta)
    }
}

fn tail_constant(alpha: f64, theta: f64) -> f64 {
    (18.0 / (1.0 - theta).powi(2)).max(2.0 / (alpha * theta.sqrt()))
}

/// Smallest `C_1 >= EX / ||a(1)||` representable, so the hypothesis holds.
pub fn exact_c1(ctx: &FamilyCtx) -> f64 {
    let r = ctx.ex_ratio();
    let mut c1 = if r > 0.0 { r } else { f64::MIN_POSITIVE };
    while ctx.ex > c1 * ctx.weights.norm {
        c1 = c1.next_up();
    }
    c1
}

/// `P(X >= multiplier u) <= C_{alpha,theta} P(Y >= u)` given `EX <= C_1 ||t0||`.
pub fn domina(ctx: &FamilyCtx, u: f64, preset: &DominationPreset) -> CheckResult {
    let b = Builder::new("domina", format!("{}|{u}|{preset:?}", ctx.fam.digest()));
    if !(u > 0.0) {
        return b.skipped("requires u > 0");
    }
    if ctx.ex > preset.c1 * ctx.weights.norm {
        return b.skipped("requires EX <= C1 ||t0||");
    }
    let lhs = p_x(ctx, preset.multiplier() * u);
    let rhs = preset.tail_constant() * p_y(&ctx.weights, u);
    b.compare(lhs, rhs, Cmp::Relative)
}

/// `P(X >= (2 sqrt 2 C_1 + 2) u) <= 16 P(Y >= u)`; relies on an external
/// lemma, so it is observational.
pub fn bt16(ctx: &FamilyCtx, u: f64, c1: f64) -> CheckResult {
    let b = Builder::new("bt16", format!("{}|{u}|{c1}", ctx.fam.digest()))
        .observational("external-lemma");
    if !(u > 0.0) {
        return b.skipped("requires u > 0");
    }
    if ctx.ex > c1 * ctx.weights.norm {
        return b.skipped("requires EX <= C1 ||t0||");
    }
    let lhs = p_x(ctx, (2.0 * 2f64.sqrt() * c1 + 2.0) * u);
    b.compare(lhs, 16.0 * p_y(&ctx.weights, u), Cmp::Exact)
}

/// `P(X >= 8u) <= 53 P(Y >= u)` for `n >= 5`.
pub fn sza(ctx: &FamilyCtx, u: f64) -> CheckResult {
    let b = Builder::new("sza", format!("{}|{u}", ctx.fam.digest()));
    if ctx.fam.n() < 5 {
        return b.skipped("requires n >= 5");
    }
    if !(u > 0.0) {
        return b.skipped("requires u > 0");
    }
    b.compare(p_x(ctx, 8.0 * u), 53.0 * p_y(&ctx.weights, u), Cmp::Exact)
}

/// `P(max_k S_k >= u) <= 2 P(S_n >= u)`.
pub fn classic_lo(weights: &[f64], u: f64, mode: Mode) -> Result<CheckResult, InequalityError> {
    let b = Builder::new("classic_lo", format!("{weights:?}|{u}"));
    let s = classic_lo_stats(weights, u, mode)?;
    Ok(b.compare(s.p_max.value(), 2.0 * s.p_last.value(), Cmp::Exact))
}

/// Whether `a_i(t) = alpha_i(t) a_i(1)` with `1 >= alpha_1(t) >= ... >=
/// alpha_n(t) >= 0` at every merged time. Functions with `a_i(1) = 0`
/// vanish identically and impose nothing.
pub fn ordered_alpha_form(fam: &ProcessFamily) -> bool {
    let term = fam.terminal();
    (0..fam.merged_times().len()).all(|j| {
        let row = fam.coeffs(j);
        let mut prev = 1.0;
        row.iter().zip(term).filter(|(_, &t)| t > 0.0).all(|(&a, &t)| {
            let alpha = a / t;
            let ok = alpha <= prev;
            prev = alpha;
            ok
        })
    })
}

/// `P(X >= 1) <= 2 P(Y >= 1)` for ordered-alpha families, and the pathwise
/// bound `X <= max(0, max_k S_k)` with `S_k = sum_{i<=k} a_i(1) eps_i`.
pub fn proposition(ctx: &FamilyCtx) -> Result<[CheckResult; 2], InequalityError> {
    let fd = ctx.fam.digest();
    let b = Builder::new("proposition", fd.clone());
    let bp = Builder::new("proposition_abel", fd);
    if !ordered_alpha_form(ctx.fam) {
        let why = "requires a_i = alpha_i a_i(1) with ordered alpha";
        return Ok([b.skipped(why), bp.skipped(why)]);
    }
    let main = b.compare(p_x(ctx, 1.0), 2.0 * p_y(&ctx.weights, 1.0), Cmp::Exact);
    let m = SignMatrix::partial_sums(ctx.fam.terminal());
    let sums = PathTable::from_matrix(&m, m.rows(), m.rows() - 1, ctx.table.mode())?;
    let tol = ctx.table.mode().tol();
    // worst excess of X over the running-maximum bound, over all sign vectors
    let excess = ctx
        .table
        .xs()
        .iter()
        .zip(sums.xs())
        .map(|(&x, &s)| x - s.max(0.0) - tol)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok([main, bp.compare(excess, 0.0, Cmp::Exact)])
}

/// `P(X >= (1 + 2 eps) u) <= 4 E(Y)_+ / (eps u) P(Y >= u)` when
/// `EX <= eps u`.
pub fn remark_large_u(ctx: &FamilyCtx, u: f64, eps: f64) -> CheckResult {
    let b = Builder::new("remark_large_u", format!("{}|{u}|{eps}", ctx.fam.digest()))
        .flag("rhs-uses-P(Y>=u)");
    if !(eps > 0.0 && eps <= 1.0) {
        return b.skipped("requires eps in (0, 1]");
    }
    if !(u > 0.0) || ctx.ex > eps * u {
        return b.skipped("requires EX <= eps u");
    }
    let factor = 4.0 * ctx.weights.table.ey_plus() / (eps * u);
    let lhs = p_x(ctx, (1.0 + 2.0 * eps) * u);
    b.compare(lhs, factor * p_y(&ctx.weights, u), Cmp::Relative)
}

/// Tail factor `4 E(Y)_+ / (eps u)` of [`remark_large_u`].
pub fn remark_factor(ctx: &FamilyCtx, u: f64, eps: f64) -> f64 {
    4.0 * ctx.weights.table.ey_plus() / (eps * u)
}

/// `P(X >= c) <= 2 P(Y >= 1)` on admissible families: a theorem for
/// `n in {3, 4}` and an open question beyond.
pub fn conjecture(ctx: &FamilyCtx, c: f64) -> CheckResult {
    let mut b = Builder::new("conjecture", format!("{}|{c}", ctx.fam.digest()));
    let n = ctx.fam.n();
    if n >= 5 {
        b = b.observational("conjecture");
    }
    if !admissibility_check(ctx.fam).admissible() {
        return b.skipped("requires conditions 1 and 2");
    }
    let r = b.compare(p_x(ctx, c), 2.0 * p_y(&ctx.weights, 1.0), Cmp::Exact);
    if n >= 5 && !r.holds {
        let mut r = r;
        r.flags.push("conjecture-counterexample-candidate".into());
        return r;
    }
    r
}

// ---------------------------------------------------------------------------
// Suite

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SuiteSummary {
    pub total: usize,
    pub passed: usize,
    /// Theorem-backed failures only.
    pub failed: usize,
    pub skipped_hypothesis: usize,
    pub observational: usize,
    pub conjecture_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub summary: SuiteSummary,
}

impl SuiteReport {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        let mut s = SuiteSummary { total: checks.len(), ..Default::default() };
        for c in &checks {
            match c.status {
                CheckStatus::Pass => s.passed += 1,
                CheckStatus::Fail => s.failed += 1,
                CheckStatus::SkippedHypothesis => s.skipped_hypothesis += 1,
                CheckStatus::Observed => s.observational += 1,
            }
            if c.flags.iter().any(|f| f == "conjecture-counterexample-candidate") {
                s.conjecture_candidates += 1;
            }
        }
        SuiteReport { checks, summary: s }
    }

    pub fn merge(reports: impl IntoIterator<Item = SuiteReport>) -> Self {
        Self::from_checks(reports.into_iter().flat_map(|r| r.checks).collect())
    }
}

/// Thresholds `j S / 10`, `j = 1..=10`, with `S = sum_i a_i(1)` the top of
/// the support of `Y`.
pub fn default_thresholds(fam: &ProcessFamily) -> Vec<f64> {
    let s: f64 = fam.terminal().iter().sum();
    (1..=10).map(|j| j as f64 * s / 10.0).collect()
}

pub const HYP_PAIRS: [(f64, f64); 3] = [(4.0, 2.0), (8.0, 2.0), (8.0, 4.0)];
pub const PZ_THETAS: [f64; 3] = [0.25, 0.5, 0.75];
pub const EXP_LAMBDAS: [f64; 6] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];

/// Checks that only involve the terminal vector `t`.
pub fn weight_checks(t: &[f64], us: &[f64], mode: Mode) -> Result<Vec<CheckResult>, InequalityError> {
    let w = WeightCtx::new(t, mode)?;
    let mut out = Vec::new();
    for (p, q) in HYP_PAIRS {
        out.push(hyp(&w, p, q));
    }
    out.push(szarek(&w));
    for th in PZ_THETAS {
        out.push(pz(&w, th));
    }
    out.push(pz_moment(&w));
    let spec = BoxSpec::whole(t.to_vec());
    let boxed = spec.table(mode)?;
    for phi in phi_family(us) {
        out.push(conc_phi(&spec, &boxed, phi));
    }
    for &u in us {
        out.push(kahane(t, u, mode)?);
        out.push(subgauss(&spec, &boxed, u));
        out.push(classic_lo(t, u, mode)?);
    }
    debug_assert_eq!(w.mode, mode);
    Ok(out)
}

/// `exp(lambda x)` over the fixed grid, hinges at the thresholds, and the
/// square.
pub fn phi_family(us: &[f64]) -> Vec<PhiSpec> {
    let mut v: Vec<PhiSpec> = EXP_LAMBDAS.iter().map(|&lambda| PhiSpec::Exp { lambda }).collect();
    v.extend(us.iter().map(|&u| PhiSpec::Hinge { u }));
    v.push(PhiSpec::Square);
    v
}

/// The family's path `{a(tau_j)}` as a point set inside the box of `a(1)`.
pub fn curve_box(fam: &ProcessFamily) -> BoxSpec {
    let points = (0..fam.merged_times().len())
        .map(|j| BoxPoint { t: fam.coeffs(j).to_vec(), b: 0.0 })
        .collect();
    BoxSpec { corner: fam.terminal().to_vec(), points: Some(points) }
}

/// The full suite for one family at the given thresholds.
pub fn family_suite(fam: &ProcessFamily, us: &[f64], mode: Mode) -> Result<SuiteReport, InequalityError> {
    let ctx = FamilyCtx::new(fam, mode)?;
    let mut out = weight_checks(fam.terminal(), us, mode)?;

    let curve = curve_box(fam);
    let curve_table = curve.table(mode)?;
    for phi in phi_family(us) {
        out.push(conc_phi(&curve, &curve_table, phi));
    }
    let c1 = exact_c1(&ctx);
    let preset = DominationPreset::new(0.1, 0.25, c1)?;
    for &u in us {
        out.push(subgauss(&curve, &curve_table, u));
        for alpha in [0.5, 1.0] {
            out.push(domin_ey(&ctx, alpha, u));
        }
        out.push(domina(&ctx, u, &preset));
        out.push(bt16(&ctx, u, c1));
        out.push(sza(&ctx, u));
        for eps in [0.5, 1.0] {
            out.push(remark_large_u(&ctx, u, eps));
        }
    }
    out.extend(proposition(&ctx)?);
    out.push(conjecture(&ctx, 1.0));
    Ok(SuiteReport::from_checks(out))
}

// ---------------------------------------------------------------------------
// Constant presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PresetId {
    #[serde(rename = "sza8_53")]
    Sza8_53,
    #[serde(rename = "six_430")]
    Six430,
    #[serde(rename = "bt_16")]
    Bt16,
}

impl PresetId {
    pub const ALL: [PresetId; 3] = [PresetId::Sza8_53, PresetId::Six430, PresetId::Bt16];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::Sza8_53 => "sza8_53",
            PresetId::Six430 => "six_430",
            PresetId::Bt16 => "bt_16",
        }
    }

    /// The published `(multiplier, tail constant)` pair.
    pub fn published(self) -> (f64, f64) {
        match self {
            PresetId::Sza8_53 => (8.0, 53.0),
            PresetId::Six430 => (6.0, 430.0),
            PresetId::Bt16 => (14.6, 16.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantRow {
    pub preset: PresetId,
    pub c1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub multiplier: f64,
    pub tail_constant: f64,
    pub published_multiplier: f64,
    pub published_tail_constant: f64,
}

/// Step of the `alpha` grid for the fixed-multiplier preset.
pub const SIX_GRID_STEP: f64 = 1e-5;

pub fn derive_constants(preset: PresetId, c1: f64) -> Result<ConstantRow, InequalityError> {
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(InequalityError::InvalidInput(format!("C1 = {c1} must be positive")));
    }
    let (pm, pt) = preset.published();
    let row = |alpha, theta, multiplier, tail_constant| ConstantRow {
        preset,
        c1,
        alpha,
        theta,
        multiplier,
        tail_constant,
        published_multiplier: pm,
        published_tail_constant: pt,
    };
    match preset {
        PresetId::Sza8_53 => {
            let alpha = 0.1;
            let root = c1 / (7.0 - alpha);
            let theta = root * root;
            if theta >= 1.0 {
                return Err(InequalityError::InfeasiblePreset { theta });
            }
            // C1 / sqrt(theta) = 7 - alpha by the choice of theta
            let multiplier = 7.0 + 1.0;
            Ok(row(Some(alpha), Some(theta), multiplier, tail_constant(alpha, theta)))
        }
        PresetId::Six430 => {
            let steps = (0.55 / SIX_GRID_STEP).round() as usize;
            let best = (1..steps)
                .filter_map(|j| {
                    let alpha = j as f64 * SIX_GRID_STEP;
                    let root = c1 / (5.0 - alpha);
                    let theta = root * root;
                    (theta < 1.0).then(|| (alpha, theta, tail_constant(alpha, theta)))
                })
                .min_by(|a, b| a.2.total_cmp(&b.2));
            match best {
                Some((alpha, theta, tail)) => Ok(row(Some(alpha), Some(theta), 6.0, tail)),
                None => Err(InequalityError::InfeasiblePreset { theta: (c1 / 5.0).powi(2) }),
            }
        }
        PresetId::Bt16 => Ok(row(None, None, 2.0 * 2f64.sqrt() * c1 + 2.0, 16.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{gen_family, make_step, FamilyKind, GenParams};

    fn two_piece() -> ProcessFamily {
        ProcessFamily::new(vec![
            make_step(&[(0.0, 1.0)]).unwrap(),
            make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn subgauss_unit_box() {
        let spec = BoxSpec::whole(vec![1.0, 1.0]);
        let t = spec.table(Mode::Exact).unwrap();
        let r = subgauss(&spec, &t, 1.0);
        assert_eq!(r.lhs, 0.5);
        assert!((r.rhs - 2.0 * (-0.25f64).exp()).abs() < 1e-15);
        assert_eq!(r.status, CheckStatus::Pass);
    }

    #[test]
    fn hyp_single_sign() {
        let w = WeightCtx::new(&[1.0], Mode::Exact).unwrap();
        let r = hyp(&w, 4.0, 2.0);
        assert_eq!(r.lhs, 1.0);
        assert!((r.rhs - 3f64.sqrt()).abs() < 1e-15);
        assert!(r.holds);
        assert_eq!(hyp(&w, 2.0, 4.0).status, CheckStatus::SkippedHypothesis);
    }

    #[test]
    fn szarek_equality_case() {
        let w = WeightCtx::new(&[1.0, 1.0], Mode::Exact).unwrap();
        let r = szarek(&w);
        assert_eq!(r.rhs, 1.0);
        assert!((r.lhs - 1.0).abs() < 1e-15);
        assert_eq!(r.status, CheckStatus::Pass);
    }

    #[test]
    fn classic_lo_quarter_weights() {
        let r = classic_lo(&[0.5; 4], 1.0, Mode::Exact).unwrap();
        assert_eq!(r.lhs, 6.0 / 16.0);
        assert_eq!(r.rhs, 2.0 * 5.0 / 16.0);
        assert!(r.holds);
    }

    #[test]
    fn sza_equal_halves() {
        let fam = ProcessFamily::constant(&[0.5; 5]).unwrap();
        assert!(admissibility_check(&fam).admissible());
        let ctx = FamilyCtx::new(&fam, Mode::Exact).unwrap();
        let r = sza(&ctx, 0.5);
        // X = Y, and 8u = 4 > 2.5 = max Y
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 53.0 * 16.0 / 32.0);
        assert_eq!(r.status, CheckStatus::Pass);
        let tp = two_piece();
        let small = FamilyCtx::new(&tp, Mode::Exact).unwrap();
        assert_eq!(sza(&small, 0.5).status, CheckStatus::SkippedHypothesis);
    }

    #[test]
    fn pz_and_moment() {
        let w = WeightCtx::new(&[1.0, 1.0, 1.0], Mode::Exact).unwrap();
        assert!(pz(&w, 0.5).holds);
        let m = pz_moment(&w);
        // E Y^2 = 3, E Y^4 = 3 + 3 * 2 * 3 = 21
        assert!((m.rhs - 9.0 / 21.0).abs() < 1e-15);
        assert!(pz(&w, 1.0).status == CheckStatus::SkippedHypothesis);
    }

    #[test]
    fn conc_phi_flags() {
        let spec = BoxSpec::whole(vec![0.5, 0.25, 1.0]);
        let t = spec.table(Mode::Exact).unwrap();
        let sq = conc_phi(&spec, &t, PhiSpec::Square);
        assert!(sq.flags.contains(&"beyond-statement".to_string()));
        assert_eq!(sq.status, CheckStatus::Pass);
        let fam = two_piece();
        let curve = curve_box(&fam);
        let ct = curve.table(Mode::Exact).unwrap();
        let r = conc_phi(&curve, &ct, PhiSpec::Exp { lambda: 1.0 });
        assert_eq!(r.status, CheckStatus::Observed);
        assert!(!r.theorem_backed);
    }

    #[test]
    fn proposition_on_ordered_alpha() {
        let params = GenParams::dyadic(8);
        for seed in 0..20 {
            let fam = gen_family(FamilyKind::OrderedAlpha, 5, seed, &params).unwrap();
            let ctx = FamilyCtx::new(&fam, Mode::Exact).unwrap();
            let [main, abel] = proposition(&ctx).unwrap();
            assert_eq!(main.status, CheckStatus::Pass, "{seed}");
            assert_eq!(abel.status, CheckStatus::Pass, "{seed}: excess {}", abel.lhs);
        }
        let fam = ProcessFamily::new(vec![
            make_step(&[(0.0, 0.0), (0.5, 1.0)]).unwrap(),
            make_step(&[(0.0, 1.0)]).unwrap(),
        ])
        .unwrap();
        let ctx = FamilyCtx::new(&fam, Mode::Exact).unwrap();
        assert_eq!(proposition(&ctx).unwrap()[0].status, CheckStatus::SkippedHypothesis);
    }

    #[test]
    fn remark_hypothesis_and_monotone_factor() {
        let tp = two_piece();
        let ctx = FamilyCtx::new(&tp, Mode::Exact).unwrap();
        // EX = 1/2
        assert_eq!(remark_large_u(&ctx, 0.25, 1.0).status, CheckStatus::SkippedHypothesis);
        assert_eq!(remark_large_u(&ctx, 1.0, 0.5).status, CheckStatus::Pass);
        let fs: Vec<f64> = [0.5, 1.0, 1.5, 2.0].iter().map(|&u| remark_factor(&ctx, u, 1.0)).collect();
        assert!(fs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn conjecture_quarter_indicator() {
        let params = GenParams {
            weights: Some(vec![0.5; 4]),
            jumps: Some(vec![0.2, 0.4, 0.6, 0.8]),
            ..Default::default()
        };
        let fam = gen_family(FamilyKind::Indicator, 4, 0, &params).unwrap();
        let ctx = FamilyCtx::new(&fam, Mode::Exact).unwrap();
        let r = conjecture(&ctx, 1.0);
        assert_eq!((r.lhs, r.rhs), (6.0 / 16.0, 10.0 / 16.0));
        assert!(r.theorem_backed);
    }

    #[test]
    fn constants_presets() {
        let r = derive_constants(PresetId::Sza8_53, 4.45).unwrap();
        assert_eq!(r.multiplier, 8.0);
        assert!((r.tail_constant - 52.764_882_609_501_6).abs() < 1e-9);
        assert!((r.theta.unwrap() - 0.415_931_526_990_128).abs() < 1e-12);
        let r = derive_constants(PresetId::Bt16, 4.45).unwrap();
        assert!((r.multiplier - 14.586_500_705_120_5).abs() < 1e-12);
        let r = derive_constants(PresetId::Six430, 4.45).unwrap();
        assert!((r.tail_constant - 423.284_571_914).abs() < 1e-6, "{}", r.tail_constant);
        assert!((r.alpha.unwrap() - 0.00531).abs() < 1e-9);
        assert!(matches!(
            derive_constants(PresetId::Sza8_53, 7.0),
            Err(InequalityError::InfeasiblePreset { .. })
        ));
    }

    #[test]
    fn preset_arithmetic() {
        let p = DominationPreset::new(0.1, 0.25, 1.0).unwrap();
        assert!((p.multiplier() - 3.1).abs() < 1e-15);
        assert_eq!(p.tail_constant(), 40.0);
        assert!(p.multiplier() > p.c1 && p.tail_constant() >= 18.0);
        assert!(DominationPreset::new(0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn suite_on_two_piece_passes() {
        let fam = two_piece();
        let r = family_suite(&fam, &default_thresholds(&fam), Mode::Exact).unwrap();
        assert_eq!(r.summary.failed, 0, "{:#?}", r.checks.iter().filter(|c| c.failed()).collect::<Vec<_>>());
        assert!(r.summary.passed > 20);
        assert_eq!(
            r.summary.total,
            r.summary.passed + r.summary.failed + r.summary.skipped_hypothesis + r.summary.observational
        );
    }

    #[test]
    fn digests_are_stable() {
        let w = WeightCtx::new(&[0.5, 0.25], Mode::Exact).unwrap();
        assert_eq!(szarek(&w).inputs_digest, szarek(&w).inputs_digest);
        assert_ne!(szarek(&w).inputs_digest, pz_moment(&w).inputs_digest);
        assert_eq!(szarek(&w).inputs_digest.len(), 16);
    }
}
