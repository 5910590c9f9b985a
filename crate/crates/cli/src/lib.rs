//! Batch front end: every subcommand reads flags and an optional config
//! file, writes `<name>.csv` and `<name>.summary.txt` into the output
//! directory and reports an exit status (0 ok, 1 check failed, 2 usage).

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;
use varexp::convolution::{
    ap_transfer_check, caputo_residual, finite_convolution, infinite_convolution, kernel_sum, solve_dfp, Forcing,
    Kernel,
};
use varexp::exponents::{conjugate, VariableExponent};
use varexp::funcspec::{Interval, RealFunction, ScalarFunction};
use varexp::modular::{luxemburg_norm, NormConfig};
use varexp::operators::{
    decay_fit, parse_matrix_csv, spectral_norm_real, verify_condition_p, ContourSemigroup, Family, OperatorFamily,
    PParams, Realization, Subordinated,
};
use varexp::specfun::{mittag_leffler_real, wright_phi};
use varexp::stepanov::{
    counterexample_divergence, counterexample_pair, epsilon_period_scan, stepanov_norm, StepanovConfig,
};

pub use config::{parse_config, ConfigError, ConfigFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    /// Help or version text requested.
    #[error("{0}")]
    Help(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Help(_) => 0,
            CliError::Failed(_) => 1,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn failed<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failed(e.to_string())
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub csv: PathBuf,
    pub summary: PathBuf,
    /// The run's own checks passed.
    pub passed: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: &'static [(&'static str, &'static str)],
}

const SUBCOMMANDS: &[Sub] = &[
    Sub {
        name: "norm",
        about: "Luxemburg norm on a domain, or Stepanov norm over a t range",
        keys: &[
            ("f", "function: expression in x, catalog:<name> or csv:<path>"),
            ("p", "exponent: number, inf or expression in x [2]"),
            ("domain", "a,b for the Luxemburg norm [0,1]"),
            ("kind", "luxemburg or stepanov [luxemburg]"),
            ("window", "Stepanov window length [1]"),
            ("t-range", "Stepanov window starts a,b [0,20]"),
            ("t-step", "Stepanov t step [0.1]"),
            ("tol", "relative bracket tolerance [1e-10]"),
        ],
    },
    Sub {
        name: "ap-scan",
        about: "ε-period scan of the Bohr lift in L^{p(x)}",
        keys: &[
            ("f", "function spec"),
            ("p", "exponent spec [2]"),
            ("eps", "ε"),
            ("window", "window length [1]"),
            ("t-range", "a,b [0,20]"),
            ("t-step", "[0.1]"),
            ("tau-range", "a,b [0,30]"),
            ("tau-step", "[0.05]"),
            (
                "gap-bound",
                "largest admissible gap between accepted periods [τ range / 4]",
            ),
            ("refine", "repeat at half step and compare verdicts [true]"),
        ],
    },
    Sub {
        name: "counterexample",
        about: "Truncated modulars of sign(sin x + sin √2 x) under p(x) = 1 − ln x",
        keys: &[
            ("lambda", "scale λ in (0, 2/e) [0.5]"),
            ("deltas", "decreasing truncation points [1e-3,1e-4,1e-5]"),
            ("tau", "translation τ [1]"),
            ("min-ratio", "required growth factor per decade [2]"),
        ],
    },
    Sub {
        name: "specfun",
        about: "Tables of Mittag-Leffler E_{α,β}(x) or Wright Φ_γ(x)",
        keys: &[
            ("function", "ml or wright [ml]"),
            ("alpha", "[1]"),
            ("beta", "[1]"),
            ("gamma", "Wright index [0.5]"),
            ("x-range", "a,b [0,10]"),
            ("points", "[101]"),
        ],
    },
    Sub {
        name: "operator",
        about: "Condition (P) report and semigroup/subordination norm tables",
        keys: MATRIX_KEYS_WITH_TABLE,
    },
    Sub {
        name: "convolve",
        about: "Infinite convolution G or finite convolution H on a time grid",
        keys: &[
            ("kernel", "exp, resolvent, or an expression in x [exp]"),
            ("sigma", "singularity order of an expression kernel [0]"),
            ("matrix", "operator for the resolvent kernel: path or inline:<rows;…>"),
            ("pencil-b", "pencil right-hand matrix"),
            ("c", "condition (P) opening"),
            ("beta", "condition (P) decay"),
            ("m", "condition (P) constant"),
            ("gamma", "fractional order of the resolvent kernel"),
            ("mode", "infinite or finite [infinite]"),
            ("g", "source function spec"),
            ("direction", "source direction vector [1,…,1]"),
            ("q", "kernel exponent [2]"),
            ("truncation", "number of unit windows K [20]"),
            ("t-range", "a,b [0,20]"),
            ("points", "[41]"),
            ("eps", "run the ε-period transfer check at this ε"),
            (
                "periods",
                "candidate periods for the transfer check [accepted periods of the scan]",
            ),
        ],
    },
    Sub {
        name: "solve-dfp",
        about: "Mild solution of D^γ u = A u + f(t) x with its Caputo residual",
        keys: &[
            ("matrix", "operator: path or inline:<rows;…>"),
            ("pencil-b", "pencil right-hand matrix"),
            ("c", "condition (P) opening"),
            ("beta", "condition (P) decay"),
            ("m", "condition (P) constant"),
            ("gamma", "order in (0, 1]"),
            ("x0", "initial value"),
            ("f", "source function spec [0]"),
            ("direction", "source direction [1,…,1]"),
            ("t-max", "[5]"),
            ("points", "grid intervals [1000]"),
            ("grid", "graded (t = T (i/N)²) or uniform [graded]"),
            ("residual-from", "residual checked on [a, t-max] [0.1]"),
            ("residual-tol", "[1e-3]"),
        ],
    },
];

const MATRIX_KEYS_WITH_TABLE: &[(&str, &str)] = &[
    ("matrix", "operator: path or inline:<rows;…>"),
    ("pencil-b", "pencil right-hand matrix"),
    ("c", "condition (P) opening"),
    ("beta", "condition (P) decay"),
    ("m", "condition (P) constant"),
    ("gamma", "also tabulate S_γ and P_γ"),
    ("t-range", "a,b with a > 0 [0.1,10]"),
    ("points", "log-spaced points [20]"),
    ("per-decade", "condition (P) samples per decade [4]"),
];

pub fn command() -> Command {
    let mut cmd = Command::new("varexp")
        .about("Variable-exponent norms, almost-periodicity scans and fractional resolvent families")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        let mut c = Command::new(sub.name)
            .about(sub.about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("key = value file with [subcommand] sections"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .help("output directory [.]"),
            )
            .arg(
                Arg::new("name")
                    .long("name")
                    .value_name("NAME")
                    .help("output file stem [subcommand]"),
            );
        for (key, help) in sub.keys {
            c = c.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .action(ArgAction::Set)
                    .help(*help),
            );
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

/// Merged parameters: config file values overridden by flags.
#[derive(Debug, Clone)]
struct Params {
    sub: &'static str,
    map: BTreeMap<String, String>,
}

impl Params {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::Usage(format!("{}: --{key} is required", self.sub)))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        self.raw(key).map_or(Ok(default), |s| parse_f64(key, s))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key).map(|s| parse_f64(key, s)).transpose()
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        self.raw(key).map_or(Ok(default), |s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--{key}: expected a nonnegative integer, got {s:?}")))
        })
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key).map(str::trim) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(s) => Err(CliError::Usage(format!("--{key}: expected true or false, got {s:?}"))),
        }
    }

    fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        self.raw(key).map_or(Ok(default.to_vec()), |s| parse_list(key, s))
    }

    fn range_or(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64), CliError> {
        let Some(s) = self.raw(key) else {
            return Ok(default);
        };
        match parse_list(key, s)?.as_slice() {
            [a, b] if a < b => Ok((*a, *b)),
            _ => Err(CliError::Usage(format!("--{key}: expected a,b with a < b, got {s:?}"))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.f64_or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("--{key} must be positive, got {v}")));
        }
        Ok(v)
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("--{key}: expected a number, got {s:?}")))?;
    if v.is_nan() {
        return Err(CliError::Usage(format!("--{key}: NaN is not allowed")));
    }
    Ok(v)
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|x| parse_f64(key, x)).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.11e}")
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| fmt(*v)).collect();
        s += &line.join(",");
        s.push('\n');
    }
    fs::write(path, s).map_err(failed)
}

fn function(spec: &str) -> Result<ScalarFunction, CliError> {
    ScalarFunction::parse_spec(spec).map_err(usage)
}

fn exponent(spec: &str, domain: Interval) -> Result<VariableExponent, CliError> {
    VariableExponent::parse(spec, domain).map_err(usage)
}

fn matrix(spec: &str) -> Result<DMatrix<f64>, CliError> {
    let text = match spec.strip_prefix("inline:") {
        Some(rows) => rows.replace(';', "\n"),
        None => fs::read_to_string(spec).map_err(|e| CliError::Usage(format!("cannot read matrix {spec:?}: {e}")))?,
    };
    parse_matrix_csv(&text).map_err(usage)
}

/// The operator with its condition (P) parameters: given in full, or
/// estimated when none are given. Estimation fails for unstable operators.
fn operator_with_estimate(p: &Params) -> Result<Result<OperatorFamily, String>, CliError> {
    let a = matrix(p.required("matrix")?)?;
    let op = match p.raw("pencil-b") {
        Some(b) => OperatorFamily::pencil(a, matrix(b)?),
        None => OperatorFamily::matrix(a),
    }
    .map_err(usage)?;
    let given = [p.f64_opt("c")?, p.f64_opt("beta")?, p.f64_opt("m")?];
    match given {
        [Some(c), Some(beta), Some(m)] => Ok(Ok(op.with_params(PParams::new(c, beta, m).map_err(usage)?))),
        [None, None, None] => Ok(op
            .estimate_params()
            .map(|params| op.with_params(params))
            .map_err(|e| e.to_string())),
        _ => Err(CliError::Usage("give all of --c, --beta, --m or none of them".into())),
    }
}

fn operator(p: &Params) -> Result<OperatorFamily, CliError> {
    operator_with_estimate(p)?.map_err(CliError::Failed)
}

fn direction(p: &Params, dim: usize) -> Result<DVector<f64>, CliError> {
    match p.raw("direction") {
        None => Ok(DVector::from_element(dim, 1.0)),
        Some(s) => {
            let v = parse_list("direction", s)?;
            if v.len() != dim {
                return Err(CliError::Usage(format!(
                    "--direction has {} entries, operator dimension is {dim}",
                    v.len()
                )));
            }
            Ok(DVector::from_vec(v))
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp
        | clap::error::ErrorKind::DisplayVersion
        | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => CliError::Help(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = SUBCOMMANDS.iter().find(|s| s.name == name).expect("known subcommand");

    let mut map = BTreeMap::new();
    let mut common = BTreeMap::new();
    if let Some(path) = sub_matches.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {path:?}: {e}")))?;
        let cfg = parse_config(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
        for (k, v) in &cfg.global {
            if k != "out" && k != "name" {
                return Err(CliError::Usage(format!(
                    "{path}: global key {k:?} must sit in a [section]"
                )));
            }
            common.insert(k.clone(), v.clone());
        }
        if let Some(section) = cfg.section(sub.name) {
            for (k, v) in section {
                if k == "out" || k == "name" {
                    common.insert(k.clone(), v.clone());
                } else if sub.keys.iter().any(|(key, _)| key == k) {
                    map.insert(k.clone(), v.clone());
                } else {
                    return Err(CliError::Usage(format!("{path}: unknown key {k:?} in [{}]", sub.name)));
                }
            }
        }
    }
    for (key, _) in sub.keys {
        if let Some(v) = sub_matches.get_one::<String>(key) {
            map.insert((*key).to_owned(), v.clone());
        }
    }
    for key in ["out", "name"] {
        if let Some(v) = sub_matches.get_one::<String>(key) {
            common.insert(key.to_owned(), v.clone());
        }
    }
    let out = PathBuf::from(common.get("out").map_or(".", |s| s.as_str()));
    let stem = common.get("name").cloned().unwrap_or_else(|| sub.name.to_owned());
    if stem.is_empty() || stem.contains(['/', '\\']) {
        return Err(CliError::Usage(format!("bad output name {stem:?}")));
    }
    fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("cannot create {out:?}: {e}")))?;
    let csv = out.join(format!("{stem}.csv"));
    let summary_path = out.join(format!("{stem}.summary.txt"));

    let params = Params { sub: sub.name, map };
    let (summary, passed) = match sub.name {
        "norm" => run_norm(&params, &csv)?,
        "ap-scan" => run_ap_scan(&params, &csv)?,
        "counterexample" => run_counterexample(&params, &csv)?,
        "specfun" => run_specfun(&params, &csv)?,
        "operator" => run_operator(&params, &csv)?,
        "convolve" => run_convolve(&params, &csv)?,
        "solve-dfp" => run_solve_dfp(&params, &csv)?,
        _ => unreachable!("subcommand table and dispatch agree"),
    };
    let mut text = format!("command = {}\n", sub.name);
    for (k, v) in &params.map {
        let _ = writeln!(text, "{k} = {v}");
    }
    text += &summary;
    let _ = writeln!(text, "status = {}", if passed { "ok" } else { "FAILED" });
    fs::write(&summary_path, text).map_err(failed)?;
    Ok(Outcome {
        csv,
        summary: summary_path,
        passed,
    })
}

type RunResult = Result<(String, bool), CliError>;

fn run_norm(p: &Params, csv: &Path) -> RunResult {
    let f = function(p.required("f")?)?;
    let tol = p.positive("tol", 1e-10)?;
    let norm_cfg = NormConfig::with_tol(tol);
    match p.raw("kind").unwrap_or("luxemburg") {
        "luxemburg" => {
            let (a, b) = p.range_or("domain", (0.0, 1.0))?;
            let domain = Interval::new(a, b).map_err(usage)?;
            let q = exponent(p.raw("p").unwrap_or("2"), domain)?;
            let r = luxemburg_norm(&f, &q, domain, &norm_cfg).map_err(failed)?;
            write_table(
                csv,
                &["norm", "bracket_lo", "bracket_hi", "modular_at_norm"].map(String::from),
                &[vec![r.value, r.bracket.0, r.bracket.1, r.modular_at_value]],
            )?;
            Ok((format!("luxemburg_norm = {}\n", fmt(r.value)), true))
        }
        "stepanov" => {
            let cfg = scan_config(p, norm_cfg)?;
            let q = exponent(p.raw("p").unwrap_or("2"), Interval::unit())?;
            let ts = cfg.t_grid();
            let values: Vec<f64> = ts
                .par_iter()
                .map(|&t| varexp::stepanov::window_norm(&f, t, cfg.window, &q, &cfg.norm))
                .collect::<Result<_, _>>()
                .map_err(failed)?;
            let rows: Vec<Vec<f64>> = ts.iter().zip(&values).map(|(t, v)| vec![*t, *v]).collect();
            write_table(csv, &["t".into(), "window_norm".into()], &rows)?;
            let r = stepanov_norm(&f, &q, &cfg).map_err(failed)?;
            Ok((
                format!(
                    "stepanov_norm = {}\nargmax_t = {}\nsamples = {}\n",
                    fmt(r.value),
                    fmt(r.argmax_t),
                    r.samples
                ),
                true,
            ))
        }
        other => Err(CliError::Usage(format!(
            "--kind must be luxemburg or stepanov, got {other:?}"
        ))),
    }
}

fn scan_config(p: &Params, norm: NormConfig) -> Result<StepanovConfig, CliError> {
    let (t0, t1) = p.range_or("t-range", (0.0, 20.0))?;
    let cfg = StepanovConfig {
        window: p.positive("window", 1.0)?,
        t_range: Interval { lo: t0, hi: t1 },
        t_step: p.positive("t-step", 0.1)?,
        tau_range: {
            let (a, b) = p.range_or("tau-range", (0.0, 30.0))?;
            Interval { lo: a, hi: b }
        },
        tau_step: p.positive("tau-step", 0.05)?,
        gap_bound: p.f64_opt("gap-bound")?,
        refine: p.bool_or("refine", true)?,
        norm,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn run_ap_scan(p: &Params, csv: &Path) -> RunResult {
    let f = function(p.required("f")?)?;
    let q = exponent(p.raw("p").unwrap_or("2"), Interval::unit())?;
    let eps = parse_f64("eps", p.required("eps")?)?;
    if !(eps > 0.0) {
        return Err(CliError::Usage(format!("--eps must be positive, got {eps}")));
    }
    let cfg = scan_config(p, NormConfig::with_tol(1e-8))?;
    let r = epsilon_period_scan(&f, &q, eps, &cfg).map_err(failed)?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf).map_err(failed)?;
    fs::write(csv, buf).map_err(failed)?;
    Ok((r.summary(), true))
}

fn run_counterexample(p: &Params, csv: &Path) -> RunResult {
    let lambda = p.f64_or("lambda", 0.5)?;
    if !(lambda > 0.0 && lambda < 2.0 / std::f64::consts::E) {
        return Err(CliError::Usage(format!("--lambda must lie in (0, 2/e), got {lambda}")));
    }
    let deltas = p.list_or("deltas", &[1e-3, 1e-4, 1e-5])?;
    if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Usage(
            "--deltas must be at least two decreasing values in (0, 1)".into(),
        ));
    }
    let tau = p.f64_or("tau", 1.0)?;
    let min_ratio = p.f64_or("min-ratio", 2.0)?;
    let (t, tau) = counterexample_pair(tau).map_err(failed)?;
    let r = counterexample_divergence(lambda, t, tau, &deltas).map_err(failed)?;
    let rows: Vec<Vec<f64>> = r
        .deltas
        .iter()
        .zip(&r.values)
        .enumerate()
        .map(|(i, (d, v))| vec![*d, *v, if i == 0 { f64::NAN } else { r.ratios_per_decade[i - 1] }])
        .collect();
    write_table(
        csv,
        &["delta", "truncated_modular", "ratio_per_decade"].map(String::from),
        &rows,
    )?;
    let passed = r.ratios_per_decade.iter().all(|x| *x >= min_ratio);
    let mut s = format!(
        "lambda = {}\nt = {}\ntau = {}\npredicted_exponent = {}\npredicted_ratio_per_decade = {}\n",
        fmt(lambda),
        fmt(t),
        fmt(tau),
        fmt(r.predicted_exponent),
        fmt(10f64.powf(-r.predicted_exponent))
    );
    for x in &r.ratios_per_decade {
        let _ = writeln!(s, "ratio_per_decade = {}", fmt(*x));
    }
    Ok((s, passed))
}

fn run_specfun(p: &Params, csv: &Path) -> RunResult {
    let (a, b) = p.range_or("x-range", (0.0, 10.0))?;
    let n = p.usize_or("points", 101)?;
    if n == 0 {
        return Err(CliError::Usage("--points must be positive".into()));
    }
    let xs = linspace(a, b, n);
    match p.raw("function").unwrap_or("ml") {
        "ml" => {
            let alpha = p.positive("alpha", 1.0)?;
            let beta = p.positive("beta", 1.0)?;
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| mittag_leffler_real(alpha, beta, x))
                .collect::<Result<_, _>>()
                .map_err(failed)?;
            let rows: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(x, y)| vec![*x, *y]).collect();
            write_table(csv, &["x".into(), "ml".into()], &rows)?;
            Ok((format!("function = E_{{{alpha},{beta}}}\npoints = {n}\n"), true))
        }
        "wright" => {
            let gamma = p.positive("gamma", 0.5)?;
            if gamma >= 1.0 || a < 0.0 {
                return Err(CliError::Usage("Wright tables need γ in (0, 1) and x ≥ 0".into()));
            }
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| wright_phi(gamma, x))
                .collect::<Result<_, _>>()
                .map_err(failed)?;
            let rows: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(x, y)| vec![*x, *y]).collect();
            write_table(csv, &["x".into(), "wright".into()], &rows)?;
            Ok((format!("function = Phi_{gamma}\npoints = {n}\n"), true))
        }
        other => Err(CliError::Usage(format!(
            "--function must be ml or wright, got {other:?}"
        ))),
    }
}

fn gamma_opt(p: &Params, allow_one: bool) -> Result<Option<f64>, CliError> {
    let g = p.f64_opt("gamma")?;
    if let Some(g) = g {
        let ok = g > 0.0 && (g < 1.0 || (allow_one && g == 1.0));
        if !ok {
            return Err(CliError::Usage(format!("--gamma out of range: {g}")));
        }
    }
    Ok(g)
}

fn run_operator(p: &Params, csv: &Path) -> RunResult {
    let gamma = gamma_opt(p, false)?;
    let (a, b) = p.range_or("t-range", (0.1, 10.0))?;
    if a <= 0.0 {
        return Err(CliError::Usage("--t-range must start above 0".into()));
    }
    let n = p.usize_or("points", 20)?.max(2);
    let per_decade = p.usize_or("per-decade", 4)?.max(1);
    let op = match operator_with_estimate(p)? {
        Ok(op) => op,
        Err(reason) => {
            write_table(csv, &["t".into(), "T_norm".into()], &[])?;
            return Ok((
                format!(
                    "condition_p = fails
reason = {reason}
"
                ),
                false,
            ));
        }
    };
    let report = verify_condition_p(&op, per_decade).map_err(failed)?;
    let params = op.params().expect("operator() attaches parameters");
    let mut s = format!(
        "c = {}\nbeta = {}\nm = {}\ncondition_p = {}\nworst_ratio = {}\nworst_lambda = {} {}i\nsamples = {}\n",
        fmt(params.c),
        fmt(params.beta),
        fmt(params.m),
        if report.passed { "holds" } else { "fails" },
        fmt(report.worst_ratio),
        fmt(report.worst_lambda.re),
        fmt(report.worst_lambda.im),
        report.samples,
    );
    if !report.passed {
        write_table(csv, &["t".into(), "T_norm".into()], &[])?;
        return Ok((s, false));
    }
    let ts = logspace(a, b, n);
    let contour = ContourSemigroup::new(&op, a.min(1e-6), b).map_err(failed)?;
    let mut header = vec!["t".to_owned(), "T_norm".to_owned()];
    let mut cols: Vec<Vec<f64>> = vec![
        ts.clone(),
        ts.iter().map(|&t| spectral_norm_real(&contour.at(t))).collect(),
    ];
    if let Some(g) = gamma {
        let sub = Subordinated::new(&op, g, a, b).map_err(failed)?;
        for (which, label) in [(Family::S, "S_norm"), (Family::P, "P_norm")] {
            let v: Vec<f64> = ts
                .par_iter()
                .map(|&t| sub.family(which, t).map(|m| spectral_norm_real(&m)))
                .collect::<Result<_, _>>()
                .map_err(failed)?;
            header.push(label.into());
            cols.push(v);
        }
        if a >= 1.0 || b <= 1.0 {
            for (which, label) in [(Family::S, "S"), (Family::P, "P")] {
                let fit = decay_fit(&op, g, which, &ts).map_err(failed)?;
                let _ = writeln!(
                    s,
                    "decay_{label}_slope = {} (reference {}, {})",
                    fmt(fit.slope),
                    fmt(fit.reference),
                    if fit.passes { "consistent" } else { "inconsistent" }
                );
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..ts.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    write_table(csv, &header, &rows)?;
    Ok((s, true))
}

fn run_convolve(p: &Params, csv: &Path) -> RunResult {
    let (a, b) = p.range_or("t-range", (0.0, 20.0))?;
    let n = p.usize_or("points", 41)?.max(1);
    let mode = p.raw("mode").unwrap_or("infinite");
    if mode != "infinite" && mode != "finite" {
        return Err(CliError::Usage(format!(
            "--mode must be infinite or finite, got {mode:?}"
        )));
    }
    let g = function(p.required("g")?)?;
    let big_k = p.usize_or("truncation", 20)?;
    let t_max_kernel = if mode == "infinite" {
        big_k as f64 + 1.0
    } else {
        b.max(1e-6)
    };
    let kernel = match p.raw("kernel").unwrap_or("exp") {
        "exp" => Kernel::scalar(|t| (-t).exp(), 0.0, "e^-t"),
        "resolvent" => {
            let op = operator(p)?;
            let gamma = gamma_opt(p, false)?.ok_or_else(|| CliError::Usage("--gamma is required".into()))?;
            Kernel::resolvent_family(&op, gamma, t_max_kernel).map_err(failed)?
        }
        expr => {
            let k = ScalarFunction::expression(expr).map_err(usage)?;
            let sigma = p.f64_or("sigma", 0.0)?;
            Kernel::scalar(move |t| k.value(t), sigma, expr)
        }
    };
    if mode == "finite" && a < 0.0 {
        return Err(CliError::Usage("finite convolutions need t ≥ 0".into()));
    }
    let forcing = Forcing::along(g, direction(p, kernel.dim())?);
    let ts = linspace(a, b, n);
    let mut s = format!("kernel = {}\nmode = {mode}\n", kernel.label());
    let mut passed = true;
    let values: Vec<(DVector<f64>, f64)> = if mode == "infinite" {
        let q = exponent(p.raw("q").unwrap_or("2"), Interval::unit())?;
        let ksum = kernel_sum(&kernel, &q, big_k, &NormConfig::default()).map_err(failed)?;
        if !ksum.summable {
            return Err(CliError::Failed(format!(
                "kernel is not summable: {}",
                ksum.reason.unwrap_or_default()
            )));
        }
        let _ = writeln!(
            s,
            "kernel_sum_m = {}\ntail_bound = {}",
            fmt(ksum.m),
            fmt(ksum.tail_bound)
        );
        let pconj = conjugate(&q);
        let scan = StepanovConfig {
            t_range: Interval { lo: 0.0, hi: 20.0 },
            t_step: 0.1,
            tau_range: Interval { lo: 0.0, hi: 30.0 },
            tau_step: 0.05,
            refine: false,
            norm: NormConfig::with_tol(1e-8),
            ..StepanovConfig::default()
        };
        let g_bound = stepanov_norm(&forcing.f.reflected(), &pconj, &scan)
            .map_err(failed)?
            .value;
        let _ = writeln!(s, "source_stepanov_norm = {}", fmt(g_bound));
        let values = ts
            .par_iter()
            .map(|&t| infinite_convolution(&kernel, &ksum, &forcing, t, g_bound).map(|v| (v.value, v.error_estimate)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(failed)?;
        if let Some(eps) = p.f64_opt("eps")? {
            if !(eps > 0.0) {
                return Err(CliError::Usage("--eps must be positive".into()));
            }
            let periods = match p.raw("periods") {
                Some(list) => parse_list("periods", list)?,
                None => {
                    let scan_r = epsilon_period_scan(&forcing.f.reflected(), &pconj, eps, &scan).map_err(failed)?;
                    scan_r.accepted_periods.into_iter().take(20).collect()
                }
            };
            let grid = linspace(a, b, n.min(21));
            let r = ap_transfer_check(&kernel, &ksum, &forcing, &pconj, eps, &periods, &grid, &scan).map_err(failed)?;
            let _ = writeln!(
                s,
                "transfer_applicable = {}\ntransfer_bound = {}\ntransfer_max_difference = {}\ntransfer_checked = {}\ntransfer_violations = {}",
                r.applicable,
                fmt(r.bound),
                fmt(r.max_difference),
                r.checked,
                r.violations.len()
            );
            for note in &r.notes {
                let _ = writeln!(s, "note = {note}");
            }
            passed = r.applicable && r.violations.is_empty();
        }
        values
    } else {
        ts.par_iter()
            .map(|&t| finite_convolution(&kernel, &forcing, t).map(|v| (v.value, v.error_estimate)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(failed)?
    };
    let label = if mode == "infinite" { "G" } else { "H" };
    let mut header = vec!["t".to_owned()];
    header.extend((0..kernel.dim()).map(|i| format!("{label}{i}")));
    header.push("error_estimate".into());
    let rows: Vec<Vec<f64>> = ts
        .iter()
        .zip(&values)
        .map(|(t, (v, e))| {
            let mut r = vec![*t];
            r.extend(v.iter());
            r.push(*e);
            r
        })
        .collect();
    write_table(csv, &header, &rows)?;
    Ok((s, passed))
}

fn run_solve_dfp(p: &Params, csv: &Path) -> RunResult {
    let op = operator(p)?;
    let gamma = gamma_opt(p, true)?.ok_or_else(|| CliError::Usage("--gamma is required".into()))?;
    let x0 = DVector::from_vec(parse_list("x0", p.required("x0")?)?);
    if x0.len() != op.dim() {
        return Err(CliError::Usage(format!(
            "--x0 has {} entries, operator dimension is {}",
            x0.len(),
            op.dim()
        )));
    }
    let f = function(p.raw("f").unwrap_or("0"))?;
    let forcing = Forcing::along(f, direction(p, op.dim())?);
    let t_max = p.positive("t-max", 5.0)?;
    let n = p.usize_or("points", 1000)?;
    if n < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let grid: Vec<f64> = match p.raw("grid").unwrap_or("graded") {
        "graded" => (0..=n).map(|i| t_max * (i as f64 / n as f64).powi(2)).collect(),
        "uniform" => (0..=n).map(|i| t_max * i as f64 / n as f64).collect(),
        other => {
            return Err(CliError::Usage(format!(
                "--grid must be graded or uniform, got {other:?}"
            )))
        }
    };
    let from = p.f64_or("residual-from", 0.1)?;
    let tol = p.positive("residual-tol", 1e-3)?;
    let u = solve_dfp(&op, gamma, &x0, &forcing, &grid).map_err(failed)?;
    let mut residual = vec![f64::NAN; grid.len()];
    let mut s = format!("grid_points = {}\n", grid.len());
    let mut passed = true;
    match op.realization() {
        Realization::Matrix(_) => {
            let r = caputo_residual(&u, &op, gamma, &forcing).map_err(failed)?;
            let mut worst = (0.0f64, f64::NAN);
            for (t, v) in r {
                if let Ok(i) = grid.binary_search_by(|x| x.total_cmp(&t)) {
                    residual[i] = v;
                }
                if t >= from && v > worst.0 {
                    worst = (v, t);
                }
            }
            passed = worst.0 <= tol;
            let _ = writeln!(
                s,
                "max_residual = {}\nmax_residual_t = {}\nresidual_tol = {}",
                fmt(worst.0),
                fmt(worst.1),
                fmt(tol)
            );
        }
        Realization::Pencil { .. } => {
            s += "residual = not available for pencils\n";
        }
    }
    let mut header = vec!["t".to_owned()];
    header.extend((0..u.dim()).map(|i| format!("u{i}")));
    header.push("error_estimate".into());
    header.push("residual".into());
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            let mut r = vec![u.t[i]];
            r.extend(u.values[i].iter());
            r.push(u.errors[i]);
            r.push(residual[i]);
            r
        })
        .collect();
    write_table(csv, &header, &rows)?;
    Ok((s, passed))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn formatting_has_twelve_digits() {
        assert_eq!(fmt(PI), "3.14159265359e0");
        assert_eq!(fmt(-1.5e-7), "-1.50000000000e-7");
    }

    #[test]
    fn command_table_is_consistent() {
        command().debug_assert();
    }
}
