//! Stepanov `S^{p(x)}` norms and distances through the Bohr lift
//! `f̂(t) = f(t + ·)|_{[0,1]}`, ε-period scans with relative-density
//! estimates, and diagnostics for the decomposition, counterexample and
//! composition results built on them.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::exponents::{composition_exponent, ExponentError, VariableExponent};
use crate::funcspec::{sign_change_roots, Interval, RealFunction};
use crate::modular::{luxemburg_norm, Modular, ModularError, NormConfig};
use crate::quad::{integrate_with_breaks, QuadConfig, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepanovError {
    #[error("invalid scan configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Modular(#[from] ModularError),
    #[error(transparent)]
    Exponent(#[from] ExponentError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Grids for the sup over `t` and the candidate periods `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepanovConfig {
    /// Window length `l`; windows are rescaled onto `[0, 1]`.
    pub window: f64,
    pub t_range: Interval,
    pub t_step: f64,
    pub tau_range: Interval,
    pub tau_step: f64,
    /// A τ-gap longer than this without an accepted period marks the
    /// function as not almost periodic. Defaults to a quarter of the τ range.
    pub gap_bound: Option<f64>,
    /// Recompute every scan at half step and compare verdicts.
    pub refine: bool,
    pub norm: NormConfig,
}

impl Default for StepanovConfig {
    fn default() -> Self {
        Self {
            window: 1.0,
            t_range: Interval { lo: 0.0, hi: 100.0 },
            t_step: 0.05,
            tau_range: Interval { lo: 0.0, hi: 50.0 },
            tau_step: 0.01,
            gap_bound: None,
            refine: true,
            norm: NormConfig::default(),
        }
    }
}

fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl StepanovConfig {
    pub fn validate(&self) -> Result<(), StepanovError> {
        let bad = |m: &str| Err(StepanovError::Config(m.to_owned()));
        if !(self.window > 0.0 && self.window.is_finite()) {
            return bad("window length must be positive and finite");
        }
        if !(self.t_step > 0.0 && self.tau_step > 0.0) {
            return bad("grid steps must be positive");
        }
        if !(self.t_range.is_bounded() && self.t_range.lo <= self.t_range.hi) {
            return bad("t range must be bounded and nonempty");
        }
        if !(self.tau_range.is_bounded() && self.tau_range.lo <= self.tau_range.hi) {
            return bad("τ range must be bounded and nonempty");
        }
        if let Some(b) = self.gap_bound {
            if !(b > 0.0) {
                return bad("gap bound must be positive");
            }
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        grid_points(self.t_range.lo, self.t_range.hi, self.t_step)
    }

    /// Candidate periods: the τ grid restricted to `τ > 0`.
    pub fn tau_grid(&self) -> Vec<f64> {
        let mut g = grid_points(self.tau_range.lo, self.tau_range.hi, self.tau_step);
        g.retain(|t| *t > 0.0);
        g
    }

    pub fn gap_bound(&self) -> f64 {
        self.gap_bound.unwrap_or(self.tau_range.length() / 4.0)
    }

    fn halved(&self) -> Self {
        Self {
            t_step: self.t_step / 2.0,
            tau_step: self.tau_step / 2.0,
            refine: false,
            ..self.clone()
        }
    }
}

/// `s ↦ f(t + l·s)` on `[0, 1]`.
struct Window<'a, F: ?Sized> {
    f: &'a F,
    t: f64,
    l: f64,
}

impl<F: RealFunction + ?Sized> RealFunction for Window<'_, F> {
    fn value(&self, s: f64) -> f64 {
        self.f.value(self.t + self.l * s)
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let (t, l) = (self.t, self.l);
        self.f
            .breakpoints(t + l * a, t + l * b)
            .into_iter()
            .map(|x| (x - t) / l)
            .collect()
    }
}

/// `s ↦ |f(t + τ + l·s) − f(t + l·s)|` on `[0, 1]`.
struct Lift<'a, F: ?Sized> {
    f: &'a F,
    t: f64,
    tau: f64,
    l: f64,
}

impl<F: RealFunction + ?Sized> RealFunction for Lift<'_, F> {
    fn value(&self, s: f64) -> f64 {
        let x = self.t + self.l * s;
        (self.f.value(x + self.tau) - self.f.value(x)).abs()
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let (t, l) = (self.t, self.l);
        let mut pts: Vec<f64> = self
            .f
            .breakpoints(t + l * a, t + l * b)
            .into_iter()
            .map(|x| (x - t) / l)
            .collect();
        let shifted = t + self.tau;
        pts.extend(
            self.f
                .breakpoints(shifted + l * a, shifted + l * b)
                .into_iter()
                .map(|x| (x - shifted) / l),
        );
        pts
    }
}

fn window_distance<F: RealFunction + ?Sized>(
    f: &F,
    t: f64,
    tau: f64,
    l: f64,
    p: &VariableExponent,
    cfg: &NormConfig,
) -> Result<f64, StepanovError> {
    let lift = Lift { f, t, tau, l };
    Ok(luxemburg_norm(&lift, p, Interval::unit(), cfg)?.value)
}

/// `‖f̂(t+τ) − f̂(t)‖_{L^{p(x)}[0,1]}`.
pub fn bohr_lift_distance<F: RealFunction + ?Sized>(
    f: &F,
    t: f64,
    tau: f64,
    p: &VariableExponent,
    cfg: &NormConfig,
) -> Result<f64, StepanovError> {
    window_distance(f, t, tau, 1.0, p, cfg)
}

/// `‖f̂(t)‖_{L^{p(x)}[0,1]}` for a window of length `l`.
pub fn window_norm<F: RealFunction + ?Sized>(
    f: &F,
    t: f64,
    l: f64,
    p: &VariableExponent,
    cfg: &NormConfig,
) -> Result<f64, StepanovError> {
    let w = Window { f, t, l };
    Ok(luxemburg_norm(&w, p, Interval::unit(), cfg)?.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepanovNorm {
    pub value: f64,
    pub argmax_t: f64,
    pub samples: usize,
    pub t_step: f64,
}

/// `sup_t ‖f̂(t)‖` over the t grid.
pub fn stepanov_norm<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    cfg: &StepanovConfig,
) -> Result<StepanovNorm, StepanovError> {
    cfg.validate()?;
    let ts = cfg.t_grid();
    let norms: Vec<f64> = ts
        .par_iter()
        .map(|&t| window_norm(f, t, cfg.window, p, &cfg.norm))
        .collect::<Result<_, _>>()?;
    let mut best = (f64::NEG_INFINITY, ts[0]);
    for (&t, &v) in ts.iter().zip(&norms) {
        if v > best.0 {
            best = (v, t);
        }
    }
    Ok(StepanovNorm {
        value: best.0,
        argmax_t: best.1,
        samples: ts.len(),
        t_step: cfg.t_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ApConsistent,
    ApViolated,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::ApConsistent => "AP-consistent",
            Verdict::ApViolated => "AP-violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Outcome of the ε-test for one candidate period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRecord {
    pub tau: f64,
    pub accepted: bool,
    /// First grid point `t` whose window fails the test.
    pub violation_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub tau: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct APDiagnosticReport {
    pub epsilon: f64,
    pub records: Vec<TauRecord>,
    pub accepted_periods: Vec<f64>,
    /// Longest stretch of the τ range without an accepted period, counting
    /// the stretches before the first and after the last one.
    pub max_gap: f64,
    pub gap_bound: f64,
    /// `1.5 × max_gap`; absent when the verdict is not AP-consistent.
    pub relative_density_l: Option<f64>,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    pub t_step: f64,
    pub tau_step: f64,
    /// Verdict of the half-step rescan agrees (always true when refinement
    /// is off).
    pub refinement_stable: bool,
    pub refined_verdict: Option<Verdict>,
}

impl APDiagnosticReport {
    /// One row per τ candidate.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau", "accepted", "violation_t"])?;
        for r in &self.records {
            out.write_record([
                format!("{:.11e}", r.tau),
                (r.accepted as u8).to_string(),
                r.violation_t.map(|t| format!("{t:.11e}")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s += &format!("epsilon = {:.11e}\n", self.epsilon);
        s += &format!("verdict = {}\n", self.verdict);
        s += &format!("candidates = {}\n", self.records.len());
        s += &format!("accepted = {}\n", self.accepted_periods.len());
        s += &format!("max_gap = {:.11e}\n", self.max_gap);
        s += &format!("gap_bound = {:.11e}\n", self.gap_bound);
        match self.relative_density_l {
            Some(l) => s += &format!("relative_density_l = {l:.11e}\n"),
            None => s += "relative_density_l = not found\n",
        }
        s += &format!("t_step = {:.11e}\n", self.t_step);
        s += &format!("tau_step = {:.11e}\n", self.tau_step);
        s += &format!("refinement_stable = {}\n", self.refinement_stable);
        for w in &self.witnesses {
            s += &format!(
                "witness t = {:.11e} tau = {:.11e} distance = {:.11e}\n",
                w.t, w.tau, w.distance
            );
        }
        s
    }
}

const MAX_WITNESSES: usize = 16;

/// Whether `‖f̂(t+τ) − f̂(t)‖ ≤ ε`, decided through `ρ(Δ/ε) ≤ 1`.
fn within<F: RealFunction + ?Sized>(
    f: &F,
    t: f64,
    tau: f64,
    eps: f64,
    p: &VariableExponent,
    cfg: &StepanovConfig,
) -> Result<bool, StepanovError> {
    let lift = Lift {
        f,
        t,
        tau,
        l: cfg.window,
    };
    let m = Modular::new(&lift, p, Interval::unit(), cfg.norm.modular)?;
    let r = m.at_scale(1.0 / eps)?;
    Ok(!r.diverged && r.value <= 1.0)
}

/// Whether `τ` passes the lifted ε-test at every point of the t grid.
pub fn is_epsilon_period<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    eps: f64,
    tau: f64,
    cfg: &StepanovConfig,
) -> Result<bool, StepanovError> {
    cfg.validate()?;
    for t in cfg.t_grid() {
        if !within(f, t, tau, eps, p, cfg)? {
            return Ok(false);
        }
    }
    Ok(true)
}

struct ScanCore {
    records: Vec<TauRecord>,
    accepted: Vec<f64>,
    max_gap: f64,
    verdict: Verdict,
}

fn scan_core<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    eps: f64,
    cfg: &StepanovConfig,
) -> Result<ScanCore, StepanovError> {
    let ts = cfg.t_grid();
    let taus = cfg.tau_grid();
    let records: Vec<TauRecord> = taus
        .par_iter()
        .map(|&tau| {
            for &t in &ts {
                if !within(f, t, tau, eps, p, cfg)? {
                    return Ok(TauRecord {
                        tau,
                        accepted: false,
                        violation_t: Some(t),
                    });
                }
            }
            Ok(TauRecord {
                tau,
                accepted: true,
                violation_t: None,
            })
        })
        .collect::<Result<_, StepanovError>>()?;
    let accepted: Vec<f64> = records.iter().filter(|r| r.accepted).map(|r| r.tau).collect();

    let (lo, hi) = (cfg.tau_range.lo, cfg.tau_range.hi);
    let max_gap = match (accepted.first(), accepted.last()) {
        (Some(&first), Some(&last)) => {
            let inner = accepted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            inner.max(first - lo).max(hi - last)
        }
        _ => hi - lo,
    };
    let verdict = if taus.len() < 2 {
        Verdict::Inconclusive
    } else if max_gap > cfg.gap_bound() {
        Verdict::ApViolated
    } else {
        Verdict::ApConsistent
    };
    Ok(ScanCore {
        records,
        accepted,
        max_gap,
        verdict,
    })
}

/// Scans the τ grid for ε-periods of the Bohr lift.
pub fn epsilon_period_scan<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    eps: f64,
    cfg: &StepanovConfig,
) -> Result<APDiagnosticReport, StepanovError> {
    cfg.validate()?;
    if !(eps > 0.0) {
        return Err(StepanovError::Config(format!("ε must be positive, got {eps}")));
    }
    let core = scan_core(f, p, eps, cfg)?;

    let rejected: Vec<&TauRecord> = core.records.iter().filter(|r| !r.accepted).collect();
    let stride = rejected.len().div_ceil(MAX_WITNESSES).max(1);
    let witnesses = rejected
        .iter()
        .step_by(stride)
        .map(|r| {
            let t = r.violation_t.unwrap_or(cfg.t_range.lo);
            let distance = window_distance(f, t, r.tau, cfg.window, p, &cfg.norm)?;
            Ok(Witness {
                t,
                tau: r.tau,
                distance,
            })
        })
        .collect::<Result<Vec<_>, StepanovError>>()?;

    let (refined_verdict, refinement_stable) = if cfg.refine {
        let fine = scan_core(f, p, eps, &cfg.halved())?;
        (Some(fine.verdict), fine.verdict == core.verdict)
    } else {
        (None, true)
    };
    let verdict = if refinement_stable {
        core.verdict
    } else {
        Verdict::Inconclusive
    };
    Ok(APDiagnosticReport {
        epsilon: eps,
        records: core.records,
        accepted_periods: core.accepted,
        max_gap: core.max_gap,
        gap_bound: cfg.gap_bound(),
        relative_density_l: (verdict == Verdict::ApConsistent).then_some(1.5 * core.max_gap),
        verdict,
        witnesses,
        t_step: cfg.t_step,
        tau_step: cfg.tau_step,
        refinement_stable,
        refined_verdict,
    })
}

/// `max |f(x+τ) − f(x)|` over `x` in `[t_lo, t_hi + l]` with spacing `h`.
pub fn sup_distance<F: RealFunction + ?Sized>(f: &F, tau: f64, cfg: &StepanovConfig, h: f64) -> f64 {
    grid_points(cfg.t_range.lo, cfg.t_range.hi + cfg.window, h)
        .into_iter()
        .map(|x| (f.value(x + tau) - f.value(x)).abs())
        .fold(0.0, f64::max)
}

/// τ candidates that pass the classical sup-norm ε-test on a grid of
/// spacing `h`.
pub fn sup_norm_periods<F: RealFunction + ?Sized>(f: &F, eps: f64, cfg: &StepanovConfig, h: f64) -> Vec<f64> {
    let xs = grid_points(cfg.t_range.lo, cfg.t_range.hi + cfg.window, h);
    cfg.tau_grid()
        .into_par_iter()
        .filter(|&tau| xs.iter().all(|&x| (f.value(x + tau) - f.value(x)).abs() <= eps))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AapReport {
    pub ap: APDiagnosticReport,
    /// `(t, ‖q̂(t)‖)` on the tail grid.
    pub tail: Vec<(f64, f64)>,
    /// For each tolerance, the first tail point after which all windowed
    /// norms stay below it.
    pub reached: Vec<(f64, Option<f64>)>,
    pub c0_passes: bool,
    pub passes: bool,
}

pub const AAP_TOLERANCES: [f64; 3] = [1e-2, 1e-4, 1e-6];
const TAIL_POINTS: usize = 200;

/// Checks `f = g + q` with `g` Stepanov almost periodic and `q̂ ∈ C₀`.
pub fn aap_split_check<G: RealFunction + ?Sized, Q: RealFunction + ?Sized>(
    g: &G,
    q: &Q,
    p: &VariableExponent,
    eps: f64,
    tolerances: &[f64],
    cfg: &StepanovConfig,
) -> Result<AapReport, StepanovError> {
    let ap = epsilon_period_scan(g, p, eps, cfg)?;
    let (lo, hi) = (cfg.t_range.lo.max(0.0), cfg.t_range.hi);
    let step = ((hi - lo) / TAIL_POINTS as f64).max(cfg.t_step);
    let ts = grid_points(lo, hi, step);
    let norms: Vec<f64> = ts
        .par_iter()
        .map(|&t| window_norm(q, t, cfg.window, p, &cfg.norm))
        .collect::<Result<_, _>>()?;
    let tail: Vec<(f64, f64)> = ts.into_iter().zip(norms).collect();
    let reached: Vec<(f64, Option<f64>)> = tolerances
        .iter()
        .map(|&tol| {
            let from = tail.iter().rposition(|&(_, v)| !(v <= tol)).map_or(0, |i| i + 1);
            (tol, tail.get(from).map(|&(t, _)| t))
        })
        .collect();
    let c0_passes = reached.iter().all(|(_, r)| r.is_some());
    Ok(AapReport {
        passes: c0_passes && ap.verdict == Verdict::ApConsistent,
        ap,
        tail,
        reached,
        c0_passes,
    })
}

/// `sin x + sin √2 x`, the inner function of the counterexample.
fn counter_inner(x: f64) -> f64 {
    x.sin() + (std::f64::consts::SQRT_2 * x).sin()
}

fn counter_sign(x: f64) -> f64 {
    let v = counter_inner(x);
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleReport {
    pub lambda: f64,
    pub t: f64,
    pub tau: f64,
    pub deltas: Vec<f64>,
    /// `∫_δ^1 (|ΔF|/λ)^{1−ln x} dx` for each `δ`.
    pub values: Vec<f64>,
    /// Growth factor per decade between successive `δ`.
    pub ratios_per_decade: Vec<f64>,
    /// `1 − ln(2/λ)`: the integrand behaves like `x^{-ln(2/λ)}` near 0.
    pub predicted_exponent: f64,
}

/// Truncated modulars of `F(t+τ+·) − F(t+·)` for `F = sign(sin x + sin √2 x)`
/// under `p(x) = 1 − ln x` at scale `1/λ`.
pub fn counterexample_divergence(
    lambda: f64,
    t: f64,
    tau: f64,
    deltas: &[f64],
) -> Result<CounterexampleReport, StepanovError> {
    let crit = 2.0 / std::f64::consts::E;
    if !(lambda > 0.0 && lambda < crit) {
        return Err(StepanovError::Precondition(format!(
            "λ = {lambda} must lie in (0, 2/e)"
        )));
    }
    let product = counter_inner(t + tau) * counter_inner(t);
    if !(product < 0.0) {
        return Err(StepanovError::Precondition(format!(
            "sign product at (t, τ) = ({t}, {tau}) is {product}, need < 0"
        )));
    }
    if deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(StepanovError::Precondition("every δ must lie in (0, 1)".into()));
    }
    let integrand = |x: f64| {
        let d = (counter_sign(x + t + tau) - counter_sign(x + t)).abs();
        if d == 0.0 {
            0.0
        } else {
            (d / lambda).powf(1.0 - x.ln())
        }
    };
    let mut roots = sign_change_roots(&|x: f64| counter_inner(x + t), 0.0, 1.0);
    roots.extend(sign_change_roots(&|x: f64| counter_inner(x + t + tau), 0.0, 1.0));
    let quad = QuadConfig::with_tolerances(1e-300, 1e-11);
    let mut values = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut pts = vec![delta, 1.0];
        pts.extend(roots.iter().copied().filter(|r| *r > delta && *r < 1.0));
        let mut x = delta;
        while x < 1.0 {
            pts.push(x);
            x *= 2.0;
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        values.push(integrate_with_breaks(&integrand, &pts, &quad)?.value);
    }
    let ratios_per_decade = deltas
        .windows(2)
        .zip(values.windows(2))
        .map(|(d, v)| (v[1] / v[0]).powf(1.0 / (d[0] / d[1]).log10()))
        .collect();
    Ok(CounterexampleReport {
        lambda,
        t,
        tau,
        deltas: deltas.to_vec(),
        values,
        ratios_per_decade,
        predicted_exponent: 1.0 - (2.0 / lambda).ln(),
    })
}

/// Picks `t ∈ [−1, 0]` for the given `τ` so that the two signs differ on the
/// longest initial stretch `(0, x₀)`.
pub fn counterexample_pair(tau: f64) -> Result<(f64, f64), StepanovError> {
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=100 {
        let t = -1.0 + 0.01 * i as f64;
        if !(counter_inner(t + tau) * counter_inner(t) < 0.0) {
            continue;
        }
        let first = |s: f64| {
            sign_change_roots(&|x: f64| counter_inner(x + s), 0.0, 1.0)
                .into_iter()
                .find(|r| *r > 0.0)
                .unwrap_or(1.0)
        };
        let x0 = first(t).min(first(t + tau));
        if best.is_none_or(|(_, b)| x0 > b) {
            best = Some((t, x0));
        }
    }
    best.map(|(t, _)| (t, tau))
        .ok_or_else(|| StepanovError::Precondition(format!("no t in [−1, 0] separates the signs for τ = {tau}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpgradeViolation {
    pub t: f64,
    pub tau: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpgradeReport {
    pub p: f64,
    pub sup_norm: f64,
    pub points: usize,
    /// Largest `lhs / rhs` over points with `rhs > 0`.
    pub max_ratio: f64,
    pub violations: Vec<UpgradeViolation>,
    pub holds: bool,
}

const UPGRADE_SLACK: f64 = 1e-8;

/// `(∫|Δ|^p)^{1/p} ≤ (2‖f‖_∞)^{(p−1)/p} (∫|Δ|)^{1/p}` on every scanned window.
pub fn bounded_upgrade_check<F: RealFunction + ?Sized>(
    f: &F,
    p: f64,
    cfg: &StepanovConfig,
) -> Result<UpgradeReport, StepanovError> {
    cfg.validate()?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(StepanovError::Config(format!(
            "target exponent must be in (1, ∞), got {p}"
        )));
    }
    let ts = cfg.t_grid();
    let taus = cfg.tau_grid();
    let reach = cfg.t_range.hi + cfg.tau_range.hi + cfg.window;
    let sup_norm = grid_points(cfg.t_range.lo, reach, 0.01)
        .into_iter()
        .map(|x| f.value(x).abs())
        .fold(0.0, f64::max);
    let pe = VariableExponent::constant_on_unit(p)?;
    let one = VariableExponent::constant_on_unit(1.0)?;
    let pairs: Vec<(f64, f64)> = ts.iter().flat_map(|&t| taus.iter().map(move |&tau| (t, tau))).collect();
    let sides: Vec<(f64, f64, f64, f64)> = pairs
        .par_iter()
        .map(|&(t, tau)| {
            let lift = Lift {
                f,
                t,
                tau,
                l: cfg.window,
            };
            let mp = Modular::new(&lift, &pe, Interval::unit(), cfg.norm.modular)?.at_scale(1.0)?;
            let m1 = Modular::new(&lift, &one, Interval::unit(), cfg.norm.modular)?.at_scale(1.0)?;
            let lhs = mp.value.powf(1.0 / p);
            let rhs = (2.0 * sup_norm).powf((p - 1.0) / p) * m1.value.powf(1.0 / p);
            Ok((t, tau, lhs, rhs))
        })
        .collect::<Result<_, StepanovError>>()?;
    let mut max_ratio = 0.0f64;
    let mut violations = Vec::new();
    for &(t, tau, lhs, rhs) in &sides {
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + UPGRADE_SLACK) + UPGRADE_SLACK {
            violations.push(UpgradeViolation { t, tau, lhs, rhs });
        }
    }
    Ok(UpgradeReport {
        p,
        sup_norm,
        points: sides.len(),
        max_ratio,
        holds: violations.is_empty(),
        violations,
    })
}

/// `t ↦ f2(t, u(t))`.
struct Composed<'a, U: ?Sized> {
    f2: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    u: &'a U,
}

impl<U: RealFunction + ?Sized> RealFunction for Composed<'_, U> {
    fn value(&self, t: f64) -> f64 {
        (self.f2)(t, self.u.value(t))
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        self.u.breakpoints(a, b)
    }
}

#[derive(Debug, Clone)]
pub struct CompositionReport {
    pub q: VariableExponent,
    pub lipschitz_samples: usize,
    pub u_scan: APDiagnosticReport,
    pub composed_scan: APDiagnosticReport,
    pub warnings: Vec<String>,
    pub hypotheses_hold: bool,
}

const LIPSCHITZ_SAMPLES: usize = 200;
const LIPSCHITZ_OFFSETS: [f64; 4] = [-1.0, -0.25, 0.37, 2.0];

/// Composition diagnostics: Lipschitz bound on samples, `L_f` bounded in
/// `S^{r(x)}`, `u` almost periodic in `S^{p(x)}`, and an ε-period scan of
/// `f2(·, u(·))` at `q = pr/(p + r)`.
#[allow(clippy::too_many_arguments)]
pub fn composition_ap_check<L: RealFunction + ?Sized, U: RealFunction + ?Sized>(
    f2: &(dyn Fn(f64, f64) -> f64 + Sync),
    lf: &L,
    u: &U,
    p: &VariableExponent,
    r: &VariableExponent,
    eps: f64,
    cfg: &StepanovConfig,
) -> Result<CompositionReport, StepanovError> {
    cfg.validate()?;
    let ts = cfg.t_grid();
    let stride = ts.len().div_ceil(LIPSCHITZ_SAMPLES).max(1);
    let mut samples = 0;
    for &t in ts.iter().step_by(stride) {
        let x = u.value(t);
        let bound = lf.value(t);
        for dy in LIPSCHITZ_OFFSETS {
            let y = x + dy;
            let lhs = (f2(t, x) - f2(t, y)).abs();
            let rhs = bound * (x - y).abs();
            samples += 1;
            if !(lhs <= rhs * (1.0 + 1e-9) + 1e-12) {
                return Err(StepanovError::Precondition(format!(
                    "Lipschitz bound fails at t = {t}, x = {x}, y = {y}: {lhs} > {rhs}"
                )));
            }
        }
    }

    let mut warnings = Vec::new();
    let (q, check) = composition_exponent(p, r)?;
    if !check.hypothesis_holds {
        warnings.push(format!(
            "r(x) ≥ max(p(x), p(x)/(p(x)−1)) fails at {} grid points",
            check.violations.len()
        ));
    }

    let l_norms: Vec<f64> = ts
        .par_iter()
        .step_by(stride)
        .map(|&t| window_norm(lf, t, cfg.window, r, &cfg.norm))
        .collect::<Result<_, _>>()?;
    let quarter = (l_norms.len() / 4).max(1);
    let head = l_norms[..quarter].iter().copied().fold(0.0, f64::max);
    let tail = l_norms[l_norms.len() - quarter..].iter().copied().fold(0.0, f64::max);
    if !tail.is_finite() || tail > 2.0 * head.max(f64::MIN_POSITIVE) {
        warnings.push(format!(
            "L_f appears unbounded in the Stepanov r(x) norm: window norms grow from {head:.3e} to {tail:.3e}"
        ));
    }

    let u_scan = epsilon_period_scan(u, p, eps, cfg)?;
    if u_scan.verdict != Verdict::ApConsistent {
        warnings.push(format!("u fails the ε-period scan ({})", u_scan.verdict));
    }
    let composed = Composed { f2, u };
    let composed_scan = epsilon_period_scan(&composed, &q, eps, cfg)?;
    Ok(CompositionReport {
        q,
        lipschitz_samples: samples,
        u_scan,
        composed_scan,
        hypotheses_hold: warnings.is_empty(),
        warnings,
    })
}
