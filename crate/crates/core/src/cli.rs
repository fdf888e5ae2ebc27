//! Command-line surface.
//!
//! Exit codes: 0 success, 1 theorem-backed failures in `verify`, 2 usage
//! errors, 3 validation errors. Reports are deterministic: identical
//! arguments produce byte-identical output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::chaining::{family_bound, optimize_plan, paper_plan, ConstantPlan, PAPER_CLAIM};
use crate::family::{ProcessFamily, MAX_DYADIC_EXP};
use crate::inequalities::{
    default_thresholds, derive_constants, family_suite, ConstantRow, PresetId, SuiteReport,
};
use crate::montecarlo::estimate_tails;
use crate::oracle::{enumerate_exact, Mode, MAX_TABLE_N};
use crate::search::{search_ratio, SearchState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THEOREM_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

/// Published value of `C_1` used by the constant table.
pub const PUBLISHED_C1: f64 = 4.45;

#[derive(Debug, Parser)]
#[command(name = "lotail", version, about = "Tail domination for Bernoulli processes: exact checks, Monte-Carlo, chaining constants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exact tail report by enumeration over all sign vectors.
    Enumerate,
    /// Seeded Monte-Carlo tail estimates with Wilson intervals.
    Mc,
    /// Run the inequality suite; exits 1 on any theorem-backed failure.
    Verify,
    /// Chaining upper bound on EX per family, with the plan breakdown.
    Bound,
    /// Chaining totals and the constant presets.
    Constants,
    /// Search for families with a large conjecture ratio.
    Search,
    /// The full constant table.
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ModeArg {
    #[default]
    Exact,
    Float,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Float => Mode::Float,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Family file (JSON); repeatable.
    #[arg(long = "family", global = true, value_name = "PATH")]
    pub family: Vec<PathBuf>,
    /// Thresholds, comma separated. Defaults to `j S / 10`, `j = 1..10`.
    #[arg(long = "u", global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub u: Vec<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 100_000)]
    pub samples: u64,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Evaluation budget for `constants`, `reproduce` and `search`.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Dimensions for `search`, comma separated.
    #[arg(long = "n", global = true, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Left threshold `c` of the conjecture ratio.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub c: f64,
    /// Truncation level of chaining plans.
    #[arg(long, global = true, default_value_t = 12)]
    pub levels: usize,
    /// Include search traces.
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Validation(m) => f.write_str(m),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// A rendered report and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub exit: i32,
}

pub const DEFAULT_OPT_BUDGET: u64 = 10_000;
pub const DEFAULT_SEARCH_BUDGET: u64 = 2_000;
pub const DEFAULT_SEARCH_NS: [usize; 4] = [3, 4, 5, 6];

struct LoadedFamily {
    path: String,
    fam: ProcessFamily,
}

fn load_families(opts: &Opts, mode: Mode) -> Result<Vec<LoadedFamily>, CliError> {
    if opts.family.is_empty() {
        return Err(CliError::Usage("at least one --family PATH is required".into()));
    }
    opts.family
        .iter()
        .map(|p| {
            let fam = ProcessFamily::load(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            if mode == Mode::Exact && !fam.is_dyadic(MAX_DYADIC_EXP) {
                return Err(invalid(format!(
                    "{}: exact mode needs dyadic values p/2^q with q <= {MAX_DYADIC_EXP}; use --mode float",
                    p.display()
                )));
            }
            Ok(LoadedFamily { path: p.display().to_string(), fam })
        })
        .collect()
}

fn thresholds(opts: &Opts, fam: &ProcessFamily) -> Vec<f64> {
    if opts.u.is_empty() {
        default_thresholds(fam)
    } else {
        opts.u.clone()
    }
}

fn require_seed(opts: &Opts, cmd: &str) -> Result<u64, CliError> {
    opts.seed.ok_or_else(|| CliError::Usage(format!("`{cmd}` requires --seed")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn f(x: f64) -> String {
    format!("{x}")
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_enumerate(opts: &Opts) -> Result<Outcome, CliError> {
    let mode = opts.mode.into();
    let fams = load_families(opts, mode)?;
    let mut reports = Vec::new();
    for lf in &fams {
        let us = thresholds(opts, &lf.fam);
        let r = enumerate_exact(&lf.fam, &us, &[1.0, 2.0, 4.0], mode).map_err(invalid)?;
        reports.push((lf, r));
    }
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "enumerate",
            "reports": reports.iter().map(|(lf, r)| json!({
                "family": lf.path, "digest": lf.fam.digest(), "report": r,
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => csv(
            &["family", "digest", "u", "p_x", "p_y", "p_abs_dev", "ex", "ey_plus"],
            reports.iter().flat_map(|(lf, r)| {
                (0..r.thresholds.len()).map(move |k| {
                    vec![
                        lf.path.clone(),
                        lf.fam.digest(),
                        f(r.thresholds[k]),
                        f(r.p_x[k].value()),
                        f(r.p_y[k].value()),
                        f(r.p_abs_dev[k].value()),
                        f(r.ex),
                        f(r.ey_plus),
                    ]
                })
            }),
        ),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

fn cmd_mc(opts: &Opts) -> Result<Outcome, CliError> {
    let seed = require_seed(opts, "mc")?;
    let fams = load_families(opts, Mode::Float)?;
    let mut reports = Vec::new();
    for lf in &fams {
        let us = thresholds(opts, &lf.fam);
        let r = estimate_tails(&lf.fam, &us, opts.samples, seed).map_err(invalid)?;
        reports.push((lf, r));
    }
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "mc",
            "reports": reports.iter().map(|(lf, r)| json!({
                "family": lf.path, "digest": lf.fam.digest(), "report": r,
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => csv(
            &["family", "digest", "u", "p_x", "p_x_lo", "p_x_hi", "p_y", "p_y_lo", "p_y_hi", "samples", "seed"],
            reports.iter().flat_map(|(lf, r)| {
                (0..r.thresholds.len()).map(move |k| {
                    let (x, y) = (&r.p_x[k], &r.p_y[k]);
                    vec![
                        lf.path.clone(),
                        lf.fam.digest(),
                        f(r.thresholds[k]),
                        f(x.point_estimate),
                        f(x.ci95.0),
                        f(x.ci95.1),
                        f(y.point_estimate),
                        f(y.ci95.0),
                        f(y.ci95.1),
                        r.samples.to_string(),
                        r.seed.to_string(),
                    ]
                })
            }),
        ),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

fn cmd_verify(opts: &Opts) -> Result<Outcome, CliError> {
    let mode = opts.mode.into();
    let fams = load_families(opts, mode)?;
    let mut reports = Vec::new();
    for lf in &fams {
        if lf.fam.n() > MAX_TABLE_N {
            return Err(invalid(format!("{}: verify supports n <= {MAX_TABLE_N}", lf.path)));
        }
        let us = thresholds(opts, &lf.fam);
        reports.push(family_suite(&lf.fam, &us, mode).map_err(invalid)?);
    }
    let report = SuiteReport::merge(reports);
    let exit = if report.summary.failed == 0 { EXIT_OK } else { EXIT_THEOREM_FAILURE };
    let text = match opts.format {
        Format::Json => to_json(&report),
        Format::Csv => csv(
            &["check_id", "lhs", "rhs", "holds", "margin", "inputs_digest", "status", "theorem_backed", "flags"],
            report.checks.iter().map(|c| {
                vec![
                    c.check_id.clone(),
                    f(c.lhs),
                    f(c.rhs),
                    c.holds.to_string(),
                    f(c.margin),
                    c.inputs_digest.clone(),
                    serde_json::to_value(c.status).expect("enum").as_str().unwrap_or("").to_string(),
                    c.theorem_backed.to_string(),
                    c.flags.join(";").replace(',', " "),
                ]
            }),
        ),
    };
    Ok(Outcome { text, exit })
}

fn plan_for(opts: &Opts) -> Result<ConstantPlan, CliError> {
    match opts.budget {
        Some(b) if b > 0 => optimize_plan(opts.levels, b, opts.seed.unwrap_or(0)),
        _ => paper_plan(opts.levels),
    }
    .map_err(invalid)
}

fn cmd_bound(opts: &Opts) -> Result<Outcome, CliError> {
    let fams = load_families(opts, Mode::Float)?;
    let plan = plan_for(opts)?;
    let mut rows = Vec::new();
    for lf in &fams {
        let b = family_bound(&lf.fam, &plan).map_err(invalid)?;
        let ex = (lf.fam.n() <= MAX_TABLE_N)
            .then(|| enumerate_exact(&lf.fam, &[], &[], Mode::Float).map(|r| r.ex))
            .transpose()
            .map_err(invalid)?;
        rows.push((lf, b, ex));
    }
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "bound",
            "plan": plan,
            "bounds": rows.iter().map(|(lf, b, ex)| json!({
                "family": lf.path, "digest": lf.fam.digest(), "exact_ex": ex, "bound": b,
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => csv(
            &["family", "digest", "exact_ex", "bound", "chain_bound", "residual", "cap", "closure_level"],
            rows.iter().map(|(lf, b, ex)| {
                vec![
                    lf.path.clone(),
                    lf.fam.digest(),
                    ex.map(f).unwrap_or_default(),
                    f(b.bound),
                    f(b.chain_bound),
                    f(b.residual),
                    f(b.cap),
                    b.closure_level.map(|k| k.to_string()).unwrap_or_default(),
                ]
            }),
        ),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
enum PresetEntry {
    Row(ConstantRow),
    Infeasible { preset: PresetId, c1: f64, error: String },
}

impl PresetEntry {
    fn row(&self) -> Option<&ConstantRow> {
        match self {
            PresetEntry::Row(r) => Some(r),
            PresetEntry::Infeasible { .. } => None,
        }
    }
}

fn preset_table(c1: f64) -> Vec<PresetEntry> {
    PresetId::ALL
        .iter()
        .map(|&preset| match derive_constants(preset, c1) {
            Ok(row) => PresetEntry::Row(row),
            Err(e) => PresetEntry::Infeasible { preset, c1, error: e.to_string() },
        })
        .collect()
}

struct ChainingTotals {
    paper: ConstantPlan,
    optimized: ConstantPlan,
    budget: u64,
    seed: u64,
}

fn chaining_totals(opts: &Opts) -> Result<ChainingTotals, CliError> {
    let budget = opts.budget.unwrap_or(DEFAULT_OPT_BUDGET);
    let seed = opts.seed.unwrap_or(0);
    Ok(ChainingTotals {
        paper: paper_plan(opts.levels).map_err(invalid)?,
        optimized: optimize_plan(opts.levels, budget, seed).map_err(invalid)?,
        budget,
        seed,
    })
}

fn preset_csv(entries: &[PresetEntry]) -> impl Iterator<Item = Vec<String>> + '_ {
    entries.iter().map(|e| match e {
        PresetEntry::Row(r) => vec![
            r.preset.name().into(),
            f(r.c1),
            r.alpha.map(f).unwrap_or_default(),
            r.theta.map(f).unwrap_or_default(),
            f(r.multiplier),
            f(r.tail_constant),
            f(r.published_multiplier),
            f(r.published_tail_constant),
        ],
        PresetEntry::Infeasible { preset, c1, .. } => {
            let mut v = vec![preset.name().to_string(), f(*c1)];
            v.resize(8, String::new());
            v
        }
    })
}

const PRESET_HEADER: [&str; 8] = [
    "preset",
    "c1",
    "alpha",
    "theta",
    "multiplier",
    "tail_constant",
    "published_multiplier",
    "published_tail_constant",
];

fn cmd_constants(opts: &Opts) -> Result<Outcome, CliError> {
    let t = chaining_totals(opts)?;
    let published = preset_table(PUBLISHED_C1);
    let computed = preset_table(t.optimized.total);
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "constants",
            "paper_plan": t.paper,
            "optimized_plan": t.optimized,
            "optimizer": {"budget": t.budget, "seed": t.seed},
            "presets_published_c1": published,
            "presets_optimized_c1": computed,
        })),
        Format::Csv => csv(&PRESET_HEADER, preset_csv(&published).chain(preset_csv(&computed))),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

fn search_states(opts: &Opts) -> Result<Vec<SearchState>, CliError> {
    let seed = require_seed(opts, "search")?;
    let budget = opts.budget.unwrap_or(DEFAULT_SEARCH_BUDGET);
    let ns: Vec<usize> = if opts.n.is_empty() { DEFAULT_SEARCH_NS.to_vec() } else { opts.n.clone() };
    ns.iter()
        .map(|&n| {
            // keyed like `sharpness_table`
            let mut s = search_ratio(n, opts.c, budget, seed.wrapping_add(n as u64), None)
                .map_err(invalid)?;
            if !opts.verbose {
                s.trace.clear();
            }
            Ok(s)
        })
        .collect()
}

fn cmd_search(opts: &Opts) -> Result<Outcome, CliError> {
    let states = search_states(opts)?;
    let rows: Vec<_> = states
        .iter()
        .map(|s| {
            json!({
                "n": s.n,
                "best_ratio": s.ratio,
                "family_digest": s.family_digest,
                "theorem_backed": s.n <= 4,
                "conjecture_counterexample_candidate": s.n >= 5 && s.ratio > 2.0,
            })
        })
        .collect();
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "search",
            "c": opts.c,
            "table": rows,
            "runs": states,
        })),
        Format::Csv => csv(
            &["n", "best_ratio", "p_x", "p_y", "family_digest", "evaluations", "conjecture_counterexample_candidate"],
            states.iter().map(|s| {
                vec![
                    s.n.to_string(),
                    f(s.ratio),
                    f(s.p_x),
                    f(s.p_y),
                    s.family_digest.clone(),
                    s.evaluations.to_string(),
                    (s.n >= 5 && s.ratio > 2.0).to_string(),
                ]
            }),
        ),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

fn table_line(r: &ConstantRow) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{}: multiplier {}, constant {:.2} ({} {})",
        r.preset.name(),
        if r.multiplier.fract() == 0.0 { format!("{:.1}", r.multiplier) } else { format!("{:.2}", r.multiplier) },
        r.tail_constant,
        if r.tail_constant <= r.published_tail_constant { "<=" } else { ">" },
        r.published_tail_constant,
    );
    s
}

fn cmd_reproduce(opts: &Opts) -> Result<Outcome, CliError> {
    let t = chaining_totals(opts)?;
    let published = preset_table(PUBLISHED_C1);
    let computed = preset_table(t.optimized.total);
    let lines: Vec<String> = published.iter().filter_map(PresetEntry::row).map(table_line).collect();
    let mut notes = vec![
        format!("presets evaluated at the published C1 = {PUBLISHED_C1}"),
        format!(
            "chaining total with the stated parameters: {:.12} (published claim {PAPER_CLAIM}; met: {})",
            t.paper.total, t.paper.paper_claim_met
        ),
        format!(
            "re-optimized chaining total: {:.12} (met: {})",
            t.optimized.total, t.optimized.paper_claim_met
        ),
    ];
    if let Some(r) = published.iter().filter_map(PresetEntry::row).find(|r| r.preset == PresetId::Six430) {
        notes.push(format!(
            "six_430 minimum over the alpha grid: {:.6} at alpha = {}",
            r.tail_constant,
            r.alpha.unwrap_or(f64::NAN)
        ));
    }
    let text = match opts.format {
        Format::Json => to_json(&json!({
            "command": "reproduce",
            "table": lines,
            "presets_published_c1": published,
            "presets_optimized_c1": computed,
            "chaining": {
                "levels": opts.levels,
                "paper_plan_total": crate::numeric::sig12(t.paper.total),
                "paper_plan_tail_bound": crate::numeric::sig12(t.paper.tail_bound),
                "optimized_total": crate::numeric::sig12(t.optimized.total),
                "optimizer_budget": t.budget,
                "optimizer_seed": t.seed,
                "paper_claim": PAPER_CLAIM,
                "paper_claim_met": t.paper.paper_claim_met,
                "optimized_claim_met": t.optimized.paper_claim_met,
            },
            "notes": notes,
        })),
        Format::Csv => csv(&PRESET_HEADER, preset_csv(&published).chain(preset_csv(&computed))),
    };
    Ok(Outcome { text, exit: EXIT_OK })
}

/// Runs a parsed command and renders its report.
pub fn run_command(cli: &Cli) -> Result<Outcome, CliError> {
    let opts = &cli.opts;
    match cli.command {
        Command::Enumerate => cmd_enumerate(opts),
        Command::Mc => cmd_mc(opts),
        Command::Verify => cmd_verify(opts),
        Command::Bound => cmd_bound(opts),
        Command::Constants => cmd_constants(opts),
        Command::Search => cmd_search(opts),
        Command::Reproduce => cmd_reproduce(opts),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| invalid(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses `args`, runs the command, writes the report and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let run = || -> Result<i32, CliError> {
        let outcome = run_command(&cli)?;
        emit(cli.opts.out.as_deref(), &outcome.text)?;
        Ok(outcome.exit)
    };
    let result = match cli.opts.workers {
        Some(w) if w > 0 => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(invalid(e)),
        },
        Some(_) => Err(CliError::Usage("--workers must be >= 1".into())),
        None => run(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `lotail --help` for usage");
            }
            e.exit_code()
        }
    }
}
