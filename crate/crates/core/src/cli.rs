//! Batch front-end: configuration resolution, subcommand dispatch, CSV
//! emission.
//!
//! The model is configured by five keys — R, S, r, mu, sigma — resolved
//! with precedence **CLI flag > environment variable > config file**. The
//! environment override for a key is the key prefixed with `SDU_` (so
//! `SDU_R` and `SDU_r` are distinct, matching the case-sensitive keys).
//! Config files are flat `key = value` text; unknown or duplicate keys are
//! rejected rather than ignored, so a typo cannot silently fall back to
//! another source.
//!
//! Every output embeds the full resolved configuration as `#`-prefixed
//! header comments above the CSV body, floats are printed with 17
//! significant digits and a `.` decimal separator, and all reductions are
//! fixed-order — re-running any subcommand with identical configuration
//! and seed yields a byte-identical document.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad or missing
//! configuration, ill-posed parameters, divergent family data), 2 on
//! numerical failures (iteration budget exhausted, certificate
//! containment lost). Errors are written to standard error as a single
//! machine-parsable line `ERROR:<code>:<message>`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{crra_order_check, is_proper, residual};
use crate::closed_form::{
    candidate_value, default_residual_dt, family_member, family_member_from_t, ode_residual_at,
    optimal_strategy, proportional_h, AbsorptionTime,
};
use crate::error::SduError;
use crate::fixed_point::{compute_j, picard_solve, PerturbationSpec};
use crate::lattice::{
    build_lattice, indicator_consumption, level_offset, lower_bound_process,
    proportional_consumption, solve_backward, Lattice, LatticeSpec, ProportionalProfile,
    StoppingSpec, TailCondition,
};
use crate::montecarlo::{residual_estimate, simulate, truncation_tail, BatchSpec, Candidate};
use crate::params::{
    derive_market, derive_preferences, growth_h, MarketParams, PreferenceParams, Strategy,
};

/// The five model keys, in echo order. `R`/`S` are the preference pair,
/// `r`/`mu`/`sigma` the market constants.
const MODEL_KEYS: [&str; 5] = ["R", "S", "r", "mu", "sigma"];

#[derive(Parser, Debug)]
#[command(
    name = "sdu-lab",
    version,
    about = "Numerical laboratory for Epstein-Zin stochastic differential utility (theta > 1)",
    disable_help_subcommand = true
)]
struct Cli {
    /// Flat key=value config file carrying R, S, r, mu, sigma.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write the CSV document here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Relative risk aversion R (overrides SDU_R and the config file).
    #[arg(long = "R", global = true, value_name = "R")]
    risk_aversion: Option<f64>,

    /// EIS reciprocal S (overrides SDU_S and the config file).
    #[arg(long = "S", global = true, value_name = "S")]
    substitution: Option<f64>,

    /// Riskless rate r (overrides SDU_r and the config file).
    #[arg(long = "r", global = true, value_name = "r")]
    rate: Option<f64>,

    /// Stock drift mu (overrides SDU_mu and the config file).
    #[arg(long = "mu", global = true, value_name = "mu")]
    mu: Option<f64>,

    /// Stock volatility sigma (overrides SDU_sigma and the config file).
    #[arg(long = "sigma", global = true, value_name = "sigma")]
    sigma: Option<f64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Echo the derived preference and market quantities.
    Params,
    /// Closed-form optimal proportional strategy and its value at x = 1.
    Optimize,
    /// One improper-family member: profile A(t) and its ODE defect.
    Family(FamilyArgs),
    /// Backward induction on the moment-calibrated lattice.
    SolveLattice(SolveLatticeArgs),
    /// Picard fixed-point iteration with its order certificate.
    FixedPoint(FixedPointArgs),
    /// Classify a previously emitted solve-lattice document.
    Classify(ClassifyArgs),
    /// Monte Carlo residual cross-check of the closed-form candidate.
    McVerify(McVerifyArgs),
}

#[derive(Args, Debug)]
struct FamilyArgs {
    /// Initial datum A(0) in [0, (theta/H)^theta]. Exactly one of --A0/--T.
    #[arg(long = "A0")]
    a0: Option<f64>,

    /// Absorption time indexing the same member ("inf" for the proper one).
    #[arg(long = "T")]
    t_abs: Option<f64>,

    /// Right edge of the emitted time grid (default 1.25T, or 2theta/H).
    #[arg(long = "t-max")]
    t_max: Option<f64>,

    /// Number of grid points (at least 2).
    #[arg(long, default_value_t = 201)]
    points: usize,

    /// Strategy weight pi (default: the optimal strategy; set both or none).
    #[arg(long)]
    pi: Option<f64>,

    /// Strategy consumption rate xi (set both or none).
    #[arg(long)]
    xi: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TailArg {
    /// W(T_max) = 0.
    Zero,
    /// Proportional continuation after the horizon.
    Proportional,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ConsumptionArg {
    /// The canonical proportional stream of the optimal strategy.
    Proportional,
    /// The stopped-indicator stream gamma*theta*e^{-gamma*t} (never stopped).
    Indicator,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    /// Hold each node value across its step (plain first-order rule).
    Constant,
    /// Moment-consistent exponential within-step rule (exact collapse).
    Exponential,
}

impl TailArg {
    fn name(self) -> &'static str {
        match self {
            TailArg::Zero => "zero",
            TailArg::Proportional => "proportional",
        }
    }

    fn condition(self, strategy: Strategy) -> TailCondition {
        match self {
            TailArg::Zero => TailCondition::Zero,
            TailArg::Proportional => TailCondition::Proportional(strategy),
        }
    }
}

impl ConsumptionArg {
    fn name(self) -> &'static str {
        match self {
            ConsumptionArg::Proportional => "proportional",
            ConsumptionArg::Indicator => "indicator",
        }
    }
}

impl ProfileArg {
    fn name(self) -> &'static str {
        match self {
            ProfileArg::Constant => "constant",
            ProfileArg::Exponential => "exponential",
        }
    }

    fn profile(self) -> ProportionalProfile {
        match self {
            ProfileArg::Constant => ProportionalProfile::Plain,
            ProfileArg::Exponential => ProportionalProfile::MomentConsistent,
        }
    }
}

#[derive(Args, Debug)]
struct SolveLatticeArgs {
    /// Number of lattice steps.
    #[arg(long)]
    steps: usize,

    /// Horizon T_max (default: ln(1e8)/H, the 1e-8 tail budget).
    #[arg(long)]
    horizon: Option<f64>,

    /// Closing condition beyond the horizon.
    #[arg(long, value_enum, default_value_t = TailArg::Proportional)]
    tail: TailArg,

    /// Which consumption stream to solve.
    #[arg(long, value_enum, default_value_t = ConsumptionArg::Proportional)]
    consumption: ConsumptionArg,

    /// Indicator rate gamma (> 0); only with --consumption indicator.
    #[arg(long)]
    gamma: Option<f64>,

    /// Within-step rule for the proportional stream (default exponential).
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Args, Debug)]
struct FixedPointArgs {
    /// Perturbation size epsilon >= 0.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,

    /// Exponential tilt rate nu of the perturbation.
    #[arg(long, default_value_t = 0.0)]
    nu: f64,

    /// Sup-gap tolerance stopping the iteration.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,

    /// Iteration budget.
    #[arg(long = "max-iter", default_value_t = 200)]
    max_iter: usize,

    /// Number of lattice steps.
    #[arg(long)]
    steps: usize,

    /// Horizon T_max (default: ln(1e8)/H).
    #[arg(long)]
    horizon: Option<f64>,

    /// Within-step rule for the proportional stream.
    #[arg(long, value_enum, default_value_t = ProfileArg::Exponential)]
    profile: ProfileArg,

    /// Closing condition beyond the horizon.
    #[arg(long, value_enum, default_value_t = TailArg::Proportional)]
    tail: TailArg,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    /// A solve-lattice CSV document to classify.
    #[arg(long)]
    input: PathBuf,

    /// Pass threshold for the recursion residual.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Debug)]
struct McVerifyArgs {
    /// Number of Monte Carlo paths.
    #[arg(long, default_value_t = 10_000)]
    paths: usize,

    /// Time steps per path.
    #[arg(long, default_value_t = 200)]
    steps: usize,

    /// Simulation horizon.
    #[arg(long, default_value_t = 500.0)]
    horizon: f64,

    /// Master seed (path i draws from counter stream i).
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Entry point behind the binary: parse, dispatch, report. Returns the
/// process exit code instead of exiting so tests can drive it in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("ERROR:CONFIG:{e}");
            return 1;
        }
    };
    match execute(&cli) {
        Ok(doc) => match write_output(&cli.output, &doc) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("ERROR:{}:{}", e.code(), e);
                e.exit_code()
            }
        },
        Err(e) => {
            eprintln!("ERROR:{}:{}", e.code(), e);
            e.exit_code()
        }
    }
}

fn write_output(target: &Option<PathBuf>, doc: &str) -> Result<(), SduError> {
    match target {
        None => {
            print!("{doc}");
            Ok(())
        }
        Some(path) => std::fs::write(path, doc).map_err(|e| SduError::Config {
            reason: format!("cannot write output file {}: {e}", path.display()),
        }),
    }
}

/// Format a float with 17 significant digits — enough to round-trip any
/// f64, so identical runs print identical bytes.
fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

/// One CSV document: '#'-commented header lines, a column row, data rows.
struct CsvDoc {
    header: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl CsvDoc {
    fn new(columns: Vec<&'static str>) -> Self {
        CsvDoc {
            header: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    fn key(&mut self, k: &str, v: String) {
        self.header.push((k.to_string(), v));
    }

    fn key_f(&mut self, k: &str, v: f64) {
        self.key(k, fmt_f(v));
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// The resolved model: validated parameters plus the raw key values in echo
/// order.
struct Model {
    prefs: PreferenceParams,
    market: MarketParams,
    raw: [(String, f64); 5],
}

impl Model {
    fn echo(&self, doc: &mut CsvDoc) {
        for (k, v) in &self.raw {
            doc.key_f(k, *v);
        }
    }
}

/// Parse a flat key=value config file. Blank lines and '#' comments are
/// skipped; unknown and duplicate keys are errors.
fn parse_config_file(path: &PathBuf) -> Result<Vec<(String, f64)>, SduError> {
    let text = std::fs::read_to_string(path).map_err(|e| SduError::Config {
        reason: format!("cannot read config file {}: {e}", path.display()),
    })?;
    let mut pairs: Vec<(String, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SduError::Config {
                reason: format!("config line {} is not key = value: {line:?}", lineno + 1),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !MODEL_KEYS.contains(&key) {
            return Err(SduError::Config {
                reason: format!("unknown config key {key:?}"),
            });
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(SduError::Config {
                reason: format!("duplicate config key {key:?}"),
            });
        }
        let parsed: f64 = value.parse().map_err(|_| SduError::Config {
            reason: format!("config key {key} has a non-numeric value {value:?}"),
        })?;
        pairs.push((key.to_string(), parsed));
    }
    Ok(pairs)
}

/// Resolve the five model keys with precedence CLI flag > SDU_-prefixed
/// environment variable > config file, then validate them.
fn resolve_model(cli: &Cli) -> Result<Model, SduError> {
    let file_pairs = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => Vec::new(),
    };
    let flag_value = |key: &str| -> Option<f64> {
        match key {
            "R" => cli.risk_aversion,
            "S" => cli.substitution,
            "r" => cli.rate,
            "mu" => cli.mu,
            "sigma" => cli.sigma,
            _ => unreachable!("not a model key: {key}"),
        }
    };
    let mut resolved: Vec<(String, f64)> = Vec::with_capacity(5);
    for key in MODEL_KEYS {
        let from_env = match std::env::var(format!("SDU_{key}")) {
            Ok(text) => Some(text.parse::<f64>().map_err(|_| SduError::Config {
                reason: format!("environment variable SDU_{key} has a non-numeric value {text:?}"),
            })?),
            Err(_) => None,
        };
        let from_file = file_pairs.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
        let value = flag_value(key).or(from_env).or(from_file);
        match value {
            Some(v) => resolved.push((key.to_string(), v)),
            None => {
                return Err(SduError::Config {
                    reason: format!(
                        "missing key {key} (set --{key}, SDU_{key}, or a config file entry)"
                    ),
                })
            }
        }
    }
    let get = |key: &str| resolved.iter().find(|(k, _)| k == key).unwrap().1;
    let prefs = derive_preferences(get("R"), get("S"))?;
    let market = derive_market(get("r"), get("mu"), get("sigma"), &prefs)?;
    let raw: [(String, f64); 5] = resolved.try_into().expect("five model keys");
    Ok(Model { prefs, market, raw })
}

fn execute(cli: &Cli) -> Result<String, SduError> {
    let model = resolve_model(cli)?;
    let doc = match &cli.cmd {
        Cmd::Params => cmd_params(&model),
        Cmd::Optimize => cmd_optimize(&model)?,
        Cmd::Family(args) => cmd_family(&model, args)?,
        Cmd::SolveLattice(args) => cmd_solve_lattice(&model, args)?,
        Cmd::FixedPoint(args) => cmd_fixed_point(&model, args)?,
        Cmd::Classify(args) => cmd_classify(&model, args)?,
        Cmd::McVerify(args) => cmd_mc_verify(&model, args)?,
    };
    Ok(doc.render())
}

fn cmd_params(model: &Model) -> CsvDoc {
    let mut doc = CsvDoc::new(vec!["quantity", "value"]);
    model.echo(&mut doc);
    for (name, value) in [
        ("theta", model.prefs.theta),
        ("rho", model.prefs.rho),
        ("lambda", model.market.lambda),
        ("eta", model.market.eta),
    ] {
        doc.rows.push(vec![name.to_string(), fmt_f(value)]);
    }
    doc
}

fn cmd_optimize(model: &Model) -> Result<CsvDoc, SduError> {
    if !(model.market.eta > 0.0) {
        return Err(SduError::IllPosed {
            eta: model.market.eta,
        });
    }
    let opt = optimal_strategy(&model.market, &model.prefs);
    let sol = proportional_h(&opt, &model.market, &model.prefs)?;
    let mut doc = CsvDoc::new(vec!["quantity", "value"]);
    model.echo(&mut doc);
    for (name, value) in [
        ("pi_hat", opt.pi),
        ("xi_hat", opt.xi),
        ("growth_h", sol.growth),
        ("h_hat", sol.h_value),
        (
            "value_at_1",
            candidate_value(1.0, &model.market, &model.prefs),
        ),
        ("j_coefficient", sol.j_coefficient),
    ] {
        doc.rows.push(vec![name.to_string(), fmt_f(value)]);
    }
    Ok(doc)
}

fn cmd_family(model: &Model, args: &FamilyArgs) -> Result<CsvDoc, SduError> {
    let strategy = match (args.pi, args.xi) {
        (Some(pi), Some(xi)) => Strategy::new(pi, xi),
        (None, None) => optimal_strategy(&model.market, &model.prefs),
        _ => {
            return Err(SduError::Config {
                reason: "set both --pi and --xi, or neither (optimal strategy)".into(),
            })
        }
    };
    let member = match (args.a0, args.t_abs) {
        (Some(a0), None) => family_member(a0, &strategy, &model.market, &model.prefs)?,
        (None, Some(t)) => {
            let t_abs = if t.is_infinite() && t > 0.0 {
                AbsorptionTime::Infinite
            } else {
                AbsorptionTime::Finite(t)
            };
            family_member_from_t(t_abs, &strategy, &model.market, &model.prefs)?
        }
        _ => {
            return Err(SduError::Config {
                reason: "exactly one of --A0 and --T selects the family member".into(),
            })
        }
    };
    if args.points < 2 {
        return Err(SduError::Config {
            reason: format!("--points must be at least 2, got {}", args.points),
        });
    }
    let natural = member.theta / member.growth;
    let t_max = match args.t_max {
        Some(t) => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(SduError::Config {
                    reason: format!("--t-max must be positive and finite, got {t}"),
                });
            }
            t
        }
        None => match member.absorption.finite() {
            Some(t_abs) if t_abs > 0.0 => 1.25 * t_abs,
            _ => 2.0 * natural,
        },
    };
    let dt = default_residual_dt(&member);
    let mut doc = CsvDoc::new(vec!["t", "A_t", "residual"]);
    model.echo(&mut doc);
    doc.key_f("pi", strategy.pi);
    doc.key_f("xi", strategy.xi);
    doc.key_f("H", member.growth);
    doc.key_f("theta", member.theta);
    doc.key_f("A0", member.a0);
    doc.key(
        "T",
        match member.absorption {
            AbsorptionTime::Finite(t) => fmt_f(t),
            AbsorptionTime::Infinite => "inf".into(),
        },
    );
    doc.key_f("t_max", t_max);
    doc.key("points", args.points.to_string());
    doc.key_f("residual_dt", dt);
    for k in 0..args.points {
        let t = t_max * k as f64 / (args.points - 1) as f64;
        let a_t = member.a(t);
        // Beyond absorption the member satisfies the ODE identically
        // (0 = H·0 − θ·0^ρ); inside, the central stencil is kept off the
        // t = 0 boundary where the profile has no left extension.
        let absorbed = matches!(member.absorption, AbsorptionTime::Finite(cap) if t >= cap);
        let defect = if absorbed {
            0.0
        } else {
            ode_residual_at(&member, &model.prefs, t.max(dt), dt)
        };
        doc.rows.push(vec![fmt_f(t), fmt_f(a_t), fmt_f(defect)]);
    }
    Ok(doc)
}

/// Shared lattice construction for the solver subcommands: optimal
/// strategy, default horizon from the 1e-8 tail budget.
fn build_cli_lattice(
    model: &Model,
    steps: usize,
    horizon: Option<f64>,
) -> Result<(Lattice, Strategy, f64), SduError> {
    let opt = optimal_strategy(&model.market, &model.prefs);
    let h = growth_h(&opt, &model.market, &model.prefs);
    let horizon = horizon.unwrap_or_else(|| LatticeSpec::default_horizon(h));
    let lattice = build_lattice(
        LatticeSpec::new(steps, horizon),
        &opt,
        &model.market,
        &model.prefs,
    )?;
    Ok((lattice, opt, horizon))
}

fn cmd_solve_lattice(model: &Model, args: &SolveLatticeArgs) -> Result<CsvDoc, SduError> {
    let (lattice, opt, horizon) = build_cli_lattice(model, args.steps, args.horizon)?;
    let tail = args.tail.condition(opt);
    let u = match args.consumption {
        ConsumptionArg::Proportional => {
            if args.gamma.is_some() {
                return Err(SduError::Config {
                    reason: "--gamma only applies to --consumption indicator".into(),
                });
            }
            let profile = args.profile.unwrap_or(ProfileArg::Exponential);
            proportional_consumption(&lattice, &opt, profile.profile())
        }
        ConsumptionArg::Indicator => {
            if args.profile.is_some() {
                return Err(SduError::Config {
                    reason: "--profile only applies to --consumption proportional".into(),
                });
            }
            let Some(gamma) = args.gamma else {
                return Err(SduError::Config {
                    reason: "--consumption indicator requires --gamma".into(),
                });
            };
            let stops = StoppingSpec::always_active(&lattice);
            indicator_consumption(gamma, &stops, &lattice)?
        }
    };
    let w = solve_backward(&u, &tail, &lattice, &model.prefs)?;
    let lower = lower_bound_process(&u, &tail, &lattice, &model.prefs)?;
    let mut doc = CsvDoc::new(vec!["step", "node", "t", "X", "U", "W", "lower_bound"]);
    model.echo(&mut doc);
    doc.key_f("pi", opt.pi);
    doc.key_f("xi", opt.xi);
    doc.key_f("H", lattice.growth);
    doc.key("steps", args.steps.to_string());
    doc.key_f("horizon", horizon);
    doc.key("tail", args.tail.name().into());
    doc.key("consumption", args.consumption.name().into());
    match args.consumption {
        ConsumptionArg::Proportional => {
            let profile = args.profile.unwrap_or(ProfileArg::Exponential);
            doc.key("profile", profile.name().into());
        }
        ConsumptionArg::Indicator => {
            doc.key_f("gamma", args.gamma.expect("validated above"));
        }
    }
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for j in 0..=i {
            let idx = off + j;
            doc.rows.push(vec![
                i.to_string(),
                j.to_string(),
                fmt_f(lattice.time(i)),
                fmt_f(lattice.wealth(i, j)),
                fmt_f(u.values[idx]),
                fmt_f(w[idx]),
                fmt_f(lower[idx]),
            ]);
        }
    }
    Ok(doc)
}

fn cmd_fixed_point(model: &Model, args: &FixedPointArgs) -> Result<CsvDoc, SduError> {
    let (lattice, opt, horizon) = build_cli_lattice(model, args.steps, args.horizon)?;
    let tail = args.tail.condition(opt);
    let u = proportional_consumption(&lattice, &opt, args.profile.profile());
    let perturbation = PerturbationSpec {
        epsilon: args.epsilon,
        nu: args.nu,
        lambda: u.clone(),
    };
    let solution = picard_solve(&u, &perturbation, &tail, &lattice, args.tol, args.max_iter)?;
    let mut doc = CsvDoc::new(vec!["iteration", "gap"]);
    model.echo(&mut doc);
    doc.key_f("pi", opt.pi);
    doc.key_f("xi", opt.xi);
    doc.key("steps", args.steps.to_string());
    doc.key_f("horizon", horizon);
    doc.key("profile", args.profile.name().into());
    doc.key("tail", args.tail.name().into());
    doc.key_f("epsilon", args.epsilon);
    doc.key_f("nu", args.nu);
    doc.key_f("tol", args.tol);
    doc.key("max_iter", args.max_iter.to_string());
    doc.key_f("k", solution.certificate.k);
    doc.key_f("K", solution.certificate.k_cap);
    doc.key_f("A", solution.certificate.a);
    doc.key_f("B", solution.certificate.b);
    doc.key("iterations", solution.iterations.to_string());
    doc.key_f("W_root", solution.w[0]);
    for (i, gap) in solution.gaps.iter().enumerate() {
        doc.rows.push(vec![(i + 1).to_string(), fmt_f(*gap)]);
    }
    Ok(doc)
}

/// Header key/value pairs plus data rows of a parsed CSV document.
type ParsedDocument = (Vec<(String, String)>, Vec<Vec<String>>);

/// Pull `# key = value` header comments and the data rows out of a
/// previously emitted CSV document.
fn parse_csv_document(text: &str, expect_columns: &str) -> Result<ParsedDocument, SduError> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for line in text.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            if seen_columns {
                return Err(SduError::Config {
                    reason: "malformed input: comment after the column row".into(),
                });
            }
            let Some((k, v)) = comment.split_once('=') else {
                return Err(SduError::Config {
                    reason: format!("malformed header comment {line:?}"),
                });
            };
            header.push((k.trim().to_string(), v.trim().to_string()));
        } else if !seen_columns {
            if line.trim() != expect_columns {
                return Err(SduError::Config {
                    reason: format!(
                        "input is not a {expect_columns:?} document (found column row {line:?})"
                    ),
                });
            }
            seen_columns = true;
        } else if !line.trim().is_empty() {
            rows.push(line.split(',').map(|c| c.trim().to_string()).collect());
        }
    }
    if !seen_columns {
        return Err(SduError::Config {
            reason: "input has no column row".into(),
        });
    }
    Ok((header, rows))
}

fn header_value<'a>(header: &'a [(String, String)], key: &str) -> Result<&'a str, SduError> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| SduError::Config {
            reason: format!("input header is missing key {key}"),
        })
}

fn header_f64(header: &[(String, String)], key: &str) -> Result<f64, SduError> {
    let text = header_value(header, key)?;
    text.parse().map_err(|_| SduError::Config {
        reason: format!("input header key {key} is not numeric: {text:?}"),
    })
}

fn cmd_classify(model: &Model, args: &ClassifyArgs) -> Result<CsvDoc, SduError> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| SduError::Config {
        reason: format!("cannot read input file {}: {e}", args.input.display()),
    })?;
    let (header, rows) = parse_csv_document(&text, "step,node,t,X,U,W,lower_bound")?;

    // Rebuild the lattice the document was solved on: model parameters come
    // from this invocation's config, geometry from the document header —
    // then verify the two agree on the strategy and the wealth values.
    let steps: usize = header_value(&header, "steps")?
        .parse()
        .map_err(|_| SduError::Config {
            reason: "input header key steps is not an integer".into(),
        })?;
    let horizon = header_f64(&header, "horizon")?;
    let (lattice, opt, _) = build_cli_lattice(model, steps, Some(horizon))?;
    for (key, actual) in [("pi", opt.pi), ("xi", opt.xi)] {
        let recorded = header_f64(&header, key)?;
        if (recorded - actual).abs() > 1e-12 * actual.abs().max(1.0) {
            return Err(SduError::Config {
                reason: format!(
                    "input {key} = {recorded} does not match this config's optimal strategy ({actual}); \
                     classify must run under the document's parameters"
                ),
            });
        }
    }
    let tail_name = header_value(&header, "tail")?;
    let tail = match tail_name {
        "zero" => TailCondition::Zero,
        "proportional" => TailCondition::Proportional(opt),
        other => {
            return Err(SduError::Config {
                reason: format!("unknown tail kind in input: {other:?}"),
            })
        }
    };
    let u = match header_value(&header, "consumption")? {
        "proportional" => {
            let profile = match header_value(&header, "profile")? {
                "constant" => ProportionalProfile::Plain,
                "exponential" => ProportionalProfile::MomentConsistent,
                other => {
                    return Err(SduError::Config {
                        reason: format!("unknown profile kind in input: {other:?}"),
                    })
                }
            };
            proportional_consumption(&lattice, &opt, profile)
        }
        "indicator" => {
            let gamma = header_f64(&header, "gamma")?;
            let stops = StoppingSpec::always_active(&lattice);
            indicator_consumption(gamma, &stops, &lattice)?
        }
        other => {
            return Err(SduError::Config {
                reason: format!("unknown consumption kind in input: {other:?}"),
            })
        }
    };

    if rows.len() != lattice.node_count() {
        return Err(SduError::Config {
            reason: format!(
                "input has {} data rows; a {steps}-step lattice carries {} nodes",
                rows.len(),
                lattice.node_count()
            ),
        });
    }
    let mut w = vec![0.0f64; lattice.node_count()];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 7 {
            return Err(SduError::Config {
                reason: format!("data row {} has {} fields, expected 7", i + 1, row.len()),
            });
        }
        let field = |j: usize, name: &str| -> Result<f64, SduError> {
            row[j].parse().map_err(|_| SduError::Config {
                reason: format!(
                    "data row {} field {name} is not numeric: {:?}",
                    i + 1,
                    row[j]
                ),
            })
        };
        let x = field(3, "X")?;
        let u_row = field(4, "U")?;
        let expected_x = lattice.wealth_flat()[i];
        if (x - expected_x).abs() > 1e-9 * expected_x.abs() {
            return Err(SduError::Config {
                reason: format!(
                    "data row {} wealth {x} does not match the reconstructed lattice ({expected_x}); \
                     was the document emitted under a different config?",
                    i + 1
                ),
            });
        }
        let expected_u = u.values[i];
        if (u_row - expected_u).abs() > 1e-9 * expected_u.abs().max(1e-300) {
            return Err(SduError::Config {
                reason: format!(
                    "data row {} consumption {u_row} does not match the reconstructed stream ({expected_u})",
                    i + 1
                ),
            });
        }
        w[i] = field(5, "W")?;
    }

    let j = compute_j(&u, &tail, &lattice)?;
    let defect = residual(&w, &u, &lattice)?;
    let (proper, witnesses) = is_proper(&w, &j, &lattice);
    let order = crra_order_check(&w, &j, &lattice);

    let mut doc = CsvDoc::new(vec![
        "check",
        "pass",
        "value_a",
        "value_b",
        "witness_step",
        "witness_node",
    ]);
    model.echo(&mut doc);
    doc.key("steps", steps.to_string());
    doc.key_f("horizon", horizon);
    doc.key("tail", tail_name.into());
    doc.key("consumption", header_value(&header, "consumption")?.into());
    doc.key_f("tol", args.tol);
    let blank = String::new();
    doc.rows.push(vec![
        "residual".into(),
        (defect <= args.tol).to_string(),
        fmt_f(defect),
        blank.clone(),
        blank.clone(),
        blank.clone(),
    ]);
    let (wit_step, wit_node) = match witnesses.first() {
        Some((i, j)) => (i.to_string(), j.to_string()),
        None => (blank.clone(), blank.clone()),
    };
    doc.rows.push(vec![
        "proper".into(),
        proper.to_string(),
        witnesses.len().to_string(),
        blank.clone(),
        wit_step,
        wit_node,
    ]);
    doc.rows.push(match order {
        Some((k_hat, cap_hat)) => vec![
            "crra_order".into(),
            "true".into(),
            fmt_f(k_hat),
            fmt_f(cap_hat),
            blank.clone(),
            blank,
        ],
        None => vec![
            "crra_order".into(),
            "false".into(),
            blank.clone(),
            blank.clone(),
            blank.clone(),
            blank,
        ],
    });
    Ok(doc)
}

fn cmd_mc_verify(model: &Model, args: &McVerifyArgs) -> Result<CsvDoc, SduError> {
    if !(model.market.eta > 0.0) {
        return Err(SduError::IllPosed {
            eta: model.market.eta,
        });
    }
    let opt = optimal_strategy(&model.market, &model.prefs);
    let sol = proportional_h(&opt, &model.market, &model.prefs)?;
    let spec = BatchSpec {
        n_paths: args.paths,
        n_steps: args.steps,
        horizon: args.horizon,
        seed: args.seed,
        x0: 1.0,
    };
    let batch = simulate(&opt, &model.market, &spec)?;
    let (estimate, std_error) =
        residual_estimate(&Candidate::Proportional(sol), &batch, &model.prefs);
    let z = estimate / std_error;
    let mut doc = CsvDoc::new(vec!["quantity", "value"]);
    model.echo(&mut doc);
    doc.key_f("pi", opt.pi);
    doc.key_f("xi", opt.xi);
    doc.key("paths", args.paths.to_string());
    doc.key("steps", args.steps.to_string());
    doc.key_f("horizon", args.horizon);
    doc.key("seed", args.seed.to_string());
    doc.key_f("x0", spec.x0);
    doc.key_f(
        "truncation_tail",
        truncation_tail(&sol, spec.x0, args.horizon, &model.prefs),
    );
    for (name, value) in [
        ("estimate", estimate),
        ("std_error", std_error),
        ("z_score", z),
    ] {
        doc.rows.push(vec![name.to_string(), fmt_f(value)]);
    }
    Ok(doc)
}
