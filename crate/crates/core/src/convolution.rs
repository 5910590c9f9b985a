//! Convolutions against operator-valued kernels: the infinite convolution
//! `G(t) = ∫_{−∞}^t R(t−s) g(s) ds` evaluated window by window, the finite
//! convolution `H(t) = ∫_0^t R(t−s) f(s) ds`, the kernel summability
//! constant `M = Σ_k ‖R(·+k)‖_{L^{q(x)}[0,1]}`, mild solutions of the
//! fractional Cauchy inclusion and a Caputo residual check.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::exponents::{conjugate, ExponentError, VariableExponent};
use crate::funcspec::{Interval, RealFunction, ScalarFunction};
use crate::modular::{luxemburg_norm, ModularError, NormConfig};
use crate::operators::{
    spectral_norm_real, verify_condition_p, ContourSemigroup, OperatorError, OperatorFamily, Realization, Subordinated,
};
use crate::quad::{integrate_vec, QuadConfig, QuadError};
use crate::specfun::gamma as gamma_fn;
use crate::stepanov::{epsilon_period_scan, is_epsilon_period, StepanovConfig, StepanovError, Verdict};
use crate::tabulate::Table;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvolutionError {
    #[error("kernel is not summable: {0}")]
    NotSummable(String),
    #[error("kernel singularity t^{sigma} at 0 is not integrable")]
    Singularity { sigma: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("kernel evaluation failed at t = {t}: {message}")]
    Kernel { t: f64, message: String },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Modular(#[from] ModularError),
    #[error(transparent)]
    Stepanov(#[from] StepanovError),
    #[error(transparent)]
    Exponent(#[from] ExponentError),
}

type KernelFn = dyn Fn(f64) -> Result<DMatrix<f64>, ConvolutionError> + Send + Sync;

/// Kernels of the families are resolved directly down to this time; below it
/// the tables are extrapolated in `t^γ`.
pub const KERNEL_T_MIN: f64 = 1e-9;

/// Relative accuracy of the tabulated subordinated families.
const TABLE_TOL: f64 = 1e-11;

/// A matrix-valued kernel `t ↦ R(t)` on `(0, ∞)` with a singularity of
/// order `σ ∈ (−1, 0]` at the origin. Values are memoized.
pub struct Kernel {
    dim: usize,
    sigma: f64,
    label: String,
    eval: Box<KernelFn>,
    memo: Option<Mutex<HashMap<u64, DMatrix<f64>>>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel")
            .field("dim", &self.dim)
            .field("sigma", &self.sigma)
            .field("label", &self.label)
            .finish()
    }
}

impl Kernel {
    /// A `1 × 1` kernel from a scalar function.
    pub fn scalar<F>(f: F, sigma: f64, label: &str) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim: 1,
            sigma,
            label: label.to_owned(),
            eval: Box::new(move |t| Ok(DMatrix::from_element(1, 1, f(t)))),
            memo: None,
        }
    }

    pub fn matrix<F>(dim: usize, f: F, sigma: f64, label: &str) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            sigma,
            label: label.to_owned(),
            eval: Box::new(move |t| Ok(f(t))),
            memo: None,
        }
    }

    /// `R_γ(t) = t^{γ−1} P_γ(t)` of a subordinated family on `(0, t_max]`,
    /// singular like `t^{γβ−1}`. The family is tabulated once by piecewise
    /// Chebyshev interpolation in `t^γ` near the origin and in `t` beyond 1.
    pub fn resolvent_family(op: &OperatorFamily, gamma: f64, t_max: f64) -> Result<Self, ConvolutionError> {
        let beta = op.params().ok_or(OperatorError::MissingParams)?.beta;
        let sub = Subordinated::new(op, gamma, KERNEL_T_MIN, t_max)?;
        Self::from_subordinated(&sub, gamma * beta - 1.0, t_max)
    }

    fn from_subordinated(sub: &Subordinated, sigma: f64, t_max: f64) -> Result<Self, ConvolutionError> {
        let gamma = sub.gamma();
        let table = Table::build(|t| sub.r(t), sigma, gamma, KERNEL_T_MIN, t_max, TABLE_TOL)?;
        Ok(Self {
            dim: sub.dim(),
            sigma,
            label: format!("R_{gamma}"),
            eval: Box::new(move |t| {
                if !(t > 0.0 && t <= t_max * (1.0 + 1e-12)) {
                    return Err(ConvolutionError::Kernel {
                        t,
                        message: format!("outside (0, {t_max}]"),
                    });
                }
                Ok(table.eval(t.min(table.t_max())))
            }),
            memo: None,
        })
    }

    /// The semigroup `T(t)` itself, bounded at the origin.
    pub fn semigroup(op: &OperatorFamily, t_max: f64) -> Result<Self, ConvolutionError> {
        let contour = Arc::new(ContourSemigroup::new(op, KERNEL_T_MIN, t_max)?);
        Ok(Self::from_contour(contour, t_max))
    }

    fn from_contour(contour: Arc<ContourSemigroup>, t_max: f64) -> Self {
        Self {
            dim: contour.dim(),
            sigma: 0.0,
            label: "T".to_owned(),
            eval: Box::new(move |t| {
                if !(t >= 0.0 && t <= t_max * (1.0 + 1e-12)) {
                    return Err(ConvolutionError::Kernel {
                        t,
                        message: format!("outside [0, {t_max}]"),
                    });
                }
                Ok(contour.at(t))
            }),
            memo: Some(Mutex::new(HashMap::new())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, t: f64) -> Result<DMatrix<f64>, ConvolutionError> {
        let Some(memo) = &self.memo else {
            return (self.eval)(t);
        };
        if let Some(m) = memo.lock().unwrap().get(&t.to_bits()) {
            return Ok(m.clone());
        }
        let m = (self.eval)(t)?;
        memo.lock().unwrap().insert(t.to_bits(), m.clone());
        Ok(m)
    }

    fn check_singularity(&self) -> Result<(), ConvolutionError> {
        if !(self.sigma > -1.0) {
            return Err(ConvolutionError::Singularity { sigma: self.sigma });
        }
        Ok(())
    }

    /// Grading exponent `1/(1+σ)` for meshes touching the origin.
    fn grading(&self) -> f64 {
        if self.sigma < 0.0 {
            1.0 / (1.0 + self.sigma)
        } else {
            1.0
        }
    }
}

/// Scalar source `f(s)` acting along a fixed direction `x ∈ ℝⁿ`.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub f: ScalarFunction,
    pub direction: DVector<f64>,
}

impl Forcing {
    pub fn scalar(f: ScalarFunction) -> Self {
        Self {
            f,
            direction: DVector::from_element(1, 1.0),
        }
    }

    pub fn along(f: ScalarFunction, direction: DVector<f64>) -> Self {
        Self { f, direction }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            f: ScalarFunction::expression("0").expect("literal parses"),
            direction: DVector::zeros(dim),
        }
    }

    fn vanishes(&self) -> bool {
        self.direction.iter().all(|v| *v == 0.0) || (self.f.is_constant() && self.f.value(0.0) == 0.0)
    }

    fn check_dim(&self, kernel: &Kernel) -> Result<(), ConvolutionError> {
        if self.direction.len() != kernel.dim {
            return Err(ConvolutionError::Shape(format!(
                "forcing has dimension {}, kernel {}",
                self.direction.len(),
                kernel.dim
            )));
        }
        Ok(())
    }
}

fn window_quad() -> QuadConfig {
    QuadConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 2000,
        divergence_cap: f64::INFINITY,
    }
}

/// `∫_{v0}^{v1} R(v) x g(v) dv` with breakpoints in `v`; when `v0 = 0` the
/// mesh is graded towards the origin through `v = v1·w^m`.
fn kernel_integral<G: Fn(f64) -> f64>(
    kernel: &Kernel,
    g: G,
    direction: &DVector<f64>,
    v0: f64,
    v1: f64,
    breaks: &[f64],
) -> Result<(DVector<f64>, f64), ConvolutionError> {
    let n = kernel.dim;
    let m = if v0 == 0.0 { kernel.grading() } else { 1.0 };
    let graded = m != 1.0;
    let failure: RefCell<Option<ConvolutionError>> = RefCell::new(None);
    let f = |w: f64, out: &mut [f64]| {
        let (v, jac) = if graded {
            (v1 * w.powf(m), v1 * m * w.powf(m - 1.0))
        } else {
            (w, 1.0)
        };
        let gv = g(v);
        if gv == 0.0 || jac == 0.0 {
            out.fill(0.0);
            return;
        }
        match kernel.value(v) {
            Ok(r) => {
                let y = r * direction;
                for (o, yi) in out.iter_mut().zip(y.iter()) {
                    *o = jac * gv * yi;
                }
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                out.fill(0.0);
            }
        }
    };
    let mut pts = vec![if graded { 0.0 } else { v0 }, if graded { 1.0 } else { v1 }];
    for &b in breaks {
        if b > v0 && b < v1 {
            pts.push(if graded { (b / v1).powf(1.0 / m) } else { b });
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let r = integrate_vec(&f, n, &pts, &window_quad())?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok((DVector::from_vec(r.value), r.error))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailModel {
    /// `‖R(·+k)‖ ≈ a e^{−b k}`.
    Exponential { a: f64, b: f64 },
    /// `‖R(·+k)‖ ≈ a k^{−p}`.
    Power { a: f64, p: f64 },
    /// The computed terms vanish.
    Vanishing,
}

#[derive(Debug, Clone)]
pub struct KernelSum {
    pub q: VariableExponent,
    /// `‖R(·+k)‖_{L^{q(x)}[0,1]}` for `k = 0..=K`.
    pub norms: Vec<f64>,
    pub partial: f64,
    pub tail_bound: f64,
    pub tail_model: TailModel,
    /// `partial + tail_bound`; infinite when not summable.
    pub m: f64,
    pub summable: bool,
    pub reason: Option<String>,
}

/// `s ↦ ‖R(s + k)‖₂`.
struct ShiftedNorm<'a> {
    kernel: &'a Kernel,
    k: f64,
}

impl RealFunction for ShiftedNorm<'_> {
    fn value(&self, s: f64) -> f64 {
        let t = s + self.k;
        if t <= 0.0 {
            // The origin itself is a null set.
            return 0.0;
        }
        match self.kernel.value(t) {
            Ok(m) if m.len() == 1 => m[0].abs(),
            Ok(m) => spectral_norm_real(&m),
            Err(_) => f64::NAN,
        }
    }
}

const TAIL_FIT_TERMS: usize = 10;

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, intercept, rss)
}

/// Window norms up to `k = K` with a fitted tail.
pub fn kernel_sum(
    kernel: &Kernel,
    q: &VariableExponent,
    truncation: usize,
    cfg: &NormConfig,
) -> Result<KernelSum, ConvolutionError> {
    kernel.check_singularity()?;
    let norms: Vec<f64> = (0..=truncation)
        .into_par_iter()
        .map(|k| {
            let f = ShiftedNorm { kernel, k: k as f64 };
            Ok(luxemburg_norm(&f, q, Interval::unit(), cfg)?.value)
        })
        .collect::<Result<_, ConvolutionError>>()?;
    let partial: f64 = norms.iter().sum();
    let not_summable = |reason: String, model| KernelSum {
        q: q.clone(),
        norms: norms.clone(),
        partial,
        tail_bound: f64::INFINITY,
        tail_model: model,
        m: f64::INFINITY,
        summable: false,
        reason: Some(reason),
    };
    if let Some(k) = norms.iter().position(|v| !v.is_finite()) {
        return Ok(not_summable(
            format!("window norm {k} is infinite"),
            TailModel::Vanishing,
        ));
    }

    let first = norms.len().saturating_sub(TAIL_FIT_TERMS).max(1);
    let fit: Vec<(f64, f64)> = (first..norms.len())
        .filter(|&k| norms[k] > 0.0)
        .map(|k| (k as f64, norms[k].ln()))
        .collect();
    if fit.len() < 3 {
        if norms.last().is_some_and(|v| *v == 0.0) {
            return Ok(KernelSum {
                q: q.clone(),
                partial,
                tail_bound: 0.0,
                tail_model: TailModel::Vanishing,
                m: partial,
                summable: true,
                reason: None,
                norms,
            });
        }
        return Ok(not_summable("too few terms to fit a tail".into(), TailModel::Vanishing));
    }
    let ks: Vec<f64> = fit.iter().map(|p| p.0).collect();
    let lks: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = fit.iter().map(|p| p.1).collect();
    let (se, ie, re) = least_squares(&ks, &ys);
    let (sp, ip, rp) = least_squares(&lks, &ys);
    let big_k = truncation as f64;
    let model = if re <= rp {
        TailModel::Exponential { a: ie.exp(), b: -se }
    } else {
        TailModel::Power { a: ip.exp(), p: -sp }
    };
    let tail = match model {
        TailModel::Exponential { a, b } if b > 1e-6 => a * (-b * (big_k + 1.0)).exp() / (1.0 - (-b).exp()),
        TailModel::Power { a, p } if p > 1.0 => a * big_k.powf(1.0 - p) / (p - 1.0),
        _ => return Ok(not_summable("terms do not decay".into(), model)),
    };
    Ok(KernelSum {
        q: q.clone(),
        partial,
        tail_bound: tail,
        tail_model: model,
        m: partial + tail,
        summable: true,
        reason: None,
        norms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionValue {
    pub value: DVector<f64>,
    /// Quadrature error plus, for the infinite convolution, the tail bound.
    pub error_estimate: f64,
}

/// `G(t) = Σ_{k ≤ K} ∫_0^1 R(s+k) x g(t−s−k) ds`, with `K` the truncation
/// of `ksum`. `g_bound` bounds `sup_t ‖ǧ(·−t)‖_{L^{p(x)}[0,1]}` for the
/// exponent conjugate to the one of `ksum`.
pub fn infinite_convolution(
    kernel: &Kernel,
    ksum: &KernelSum,
    forcing: &Forcing,
    t: f64,
    g_bound: f64,
) -> Result<ConvolutionValue, ConvolutionError> {
    kernel.check_singularity()?;
    forcing.check_dim(kernel)?;
    if !ksum.summable {
        return Err(ConvolutionError::NotSummable(ksum.reason.clone().unwrap_or_default()));
    }
    let big_k = (ksum.norms.len() - 1) as f64;
    let g = |v: f64| forcing.f.value(t - v);
    let breaks: Vec<f64> = forcing
        .f
        .breakpoints(t - big_k - 1.0, t)
        .into_iter()
        .map(|x| t - x)
        .collect();
    let (head, e0) = kernel_integral(kernel, g, &forcing.direction, 0.0, 1.0, &breaks)?;
    let mut value = head;
    let mut error = e0;
    if big_k >= 1.0 {
        let mut pts: Vec<f64> = (2..=big_k as usize).map(|k| k as f64).collect();
        pts.extend(&breaks);
        let (rest, e1) = kernel_integral(kernel, g, &forcing.direction, 1.0, big_k + 1.0, &pts)?;
        value += rest;
        error += e1;
    }
    error += 2.0 * ksum.tail_bound * g_bound * forcing.direction.norm();
    Ok(ConvolutionValue {
        value,
        error_estimate: error,
    })
}

/// `H(t) = ∫_0^t R(v) x f(t−v) dv`.
pub fn finite_convolution(kernel: &Kernel, forcing: &Forcing, t: f64) -> Result<ConvolutionValue, ConvolutionError> {
    kernel.check_singularity()?;
    forcing.check_dim(kernel)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ConvolutionError::Precondition(format!("t must be ≥ 0, got {t}")));
    }
    if t == 0.0 || forcing.vanishes() {
        return Ok(ConvolutionValue {
            value: DVector::zeros(kernel.dim),
            error_estimate: 0.0,
        });
    }
    let breaks: Vec<f64> = forcing.f.breakpoints(0.0, t).into_iter().map(|x| t - x).collect();
    let (value, error) = kernel_integral(kernel, |v| forcing.f.value(t - v), &forcing.direction, 0.0, t, &breaks)?;
    Ok(ConvolutionValue {
        value,
        error_estimate: error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferViolation {
    pub t: f64,
    pub tau: f64,
    pub difference: f64,
}

#[derive(Debug, Clone)]
pub struct ApTransferReport {
    /// The scanned object: `ǧ(x) = g(−x)`.
    pub reflected: String,
    pub reflected_verdict: Verdict,
    /// Hypotheses met: `ǧ` passes the scan, `K` summable, `q = p'`.
    pub applicable: bool,
    pub notes: Vec<String>,
    pub m: f64,
    pub bound: f64,
    pub checked_periods: Vec<f64>,
    pub rejected_periods: Vec<f64>,
    pub max_difference: f64,
    pub violations: Vec<TransferViolation>,
    pub checked: usize,
}

const TRANSFER_SLACK: f64 = 1e-8;
const CONJUGATE_GRID: usize = 200;

/// `‖G(t+τ) − G(t)‖ ≤ 2Mε` on every `(t, τ)` with `τ` an ε-period of `ǧ`.
#[allow(clippy::too_many_arguments)]
pub fn ap_transfer_check(
    kernel: &Kernel,
    ksum: &KernelSum,
    forcing: &Forcing,
    p: &VariableExponent,
    eps: f64,
    periods: &[f64],
    t_grid: &[f64],
    scan: &StepanovConfig,
) -> Result<ApTransferReport, ConvolutionError> {
    let reflected = forcing.f.reflected();
    let mut notes = Vec::new();
    let ap = epsilon_period_scan(&reflected, p, eps, scan)?;
    let mut applicable = ap.verdict == Verdict::ApConsistent;
    if !applicable {
        notes.push(format!("ǧ(x) = g(−x) fails the ε-period scan ({})", ap.verdict));
    }
    if !ksum.summable {
        applicable = false;
        notes.push("kernel is not summable".into());
    }
    let q_needed = conjugate(p);
    for i in 0..CONJUGATE_GRID {
        let x = (i as f64 + 0.5) / CONJUGATE_GRID as f64;
        let (a, b) = (q_needed.at(x)?, ksum.q.at(x)?);
        if a.to_f64() != b.to_f64() && (a.to_f64() - b.to_f64()).abs() > 1e-9 * a.to_f64() {
            applicable = false;
            notes.push(format!("kernel exponent q is not conjugate to p at x = {x}"));
            break;
        }
    }
    let bound = 2.0 * ksum.m * eps;
    let mut report = ApTransferReport {
        reflected: format!("ǧ(x) = g(−x) with g = {}", forcing.f.describe()),
        reflected_verdict: ap.verdict,
        applicable,
        notes,
        m: ksum.m,
        bound,
        checked_periods: Vec::new(),
        rejected_periods: Vec::new(),
        max_difference: 0.0,
        violations: Vec::new(),
        checked: 0,
    };
    if !applicable {
        return Ok(report);
    }
    let g_bound = crate::stepanov::stepanov_norm(&reflected, p, scan)?.value;
    for &tau in periods {
        if is_epsilon_period(&reflected, p, eps, tau, scan)? {
            report.checked_periods.push(tau);
        } else {
            report.rejected_periods.push(tau);
        }
    }
    let pairs: Vec<(f64, f64)> = report
        .checked_periods
        .iter()
        .flat_map(|&tau| t_grid.iter().map(move |&t| (t, tau)))
        .collect();
    let diffs: Vec<(f64, f64, f64, f64)> = pairs
        .par_iter()
        .map(|&(t, tau)| {
            let a = infinite_convolution(kernel, ksum, forcing, t + tau, g_bound)?;
            let b = infinite_convolution(kernel, ksum, forcing, t, g_bound)?;
            Ok((t, tau, (a.value - b.value).norm(), a.error_estimate + b.error_estimate))
        })
        .collect::<Result<_, ConvolutionError>>()?;
    for (t, tau, d, err) in diffs {
        report.checked += 1;
        report.max_difference = report.max_difference.max(d);
        if d > bound + err + TRANSFER_SLACK {
            report.violations.push(TransferViolation { t, tau, difference: d });
        }
    }
    Ok(report)
}

/// Values of a vector-valued function on an increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub errors: Vec<f64>,
}

impl Trajectory {
    pub fn new(t: Vec<f64>, values: Vec<DVector<f64>>, errors: Vec<f64>) -> Result<Self, ConvolutionError> {
        if t.len() != values.len() || t.len() != errors.len() {
            return Err(ConvolutionError::Shape(
                "grid, values and errors differ in length".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ConvolutionError::Precondition(
                "time grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(ConvolutionError::Precondition(
                "trajectory values must be finite".into(),
            ));
        }
        Ok(Self { t, values, errors })
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Columns `t, u0, …, u{n−1}, error_estimate`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_owned()];
        header.extend((0..self.dim()).map(|i| format!("u{i}")));
        header.push("error_estimate".into());
        out.write_record(&header)?;
        for ((t, v), e) in self.t.iter().zip(&self.values).zip(&self.errors) {
            let mut row = vec![format!("{t:.11e}")];
            row.extend(v.iter().map(|x| format!("{x:.11e}")));
            row.push(format!("{e:.11e}"));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

const CONDITION_P_PER_DECADE: usize = 4;

/// Mild solution `u(t) = S_γ(t)x₀ + ∫_0^t R_γ(t−s) f(s) ds` on `t_grid`;
/// `γ = 1` uses the semigroup for both terms.
pub fn solve_dfp(
    op: &OperatorFamily,
    gamma: f64,
    x0: &DVector<f64>,
    forcing: &Forcing,
    t_grid: &[f64],
) -> Result<Trajectory, ConvolutionError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ConvolutionError::Precondition(format!(
            "γ must lie in (0, 1], got {gamma}"
        )));
    }
    let n = op.dim();
    if x0.len() != n || forcing.direction.len() != n {
        return Err(ConvolutionError::Shape(format!(
            "operator has dimension {n}, x₀ {}, forcing {}",
            x0.len(),
            forcing.direction.len()
        )));
    }
    if t_grid.is_empty() || t_grid[0] < 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ConvolutionError::Precondition(
            "time grid must be nonempty, nonnegative and strictly increasing".into(),
        ));
    }
    let report = verify_condition_p(op, CONDITION_P_PER_DECADE)?;
    if !report.passed {
        return Err(ConvolutionError::Precondition(format!(
            "condition (P) fails: worst ratio {} at λ = {}",
            report.worst_ratio, report.worst_lambda
        )));
    }
    let t_max = t_grid[t_grid.len() - 1].max(KERNEL_T_MIN);
    let (initial, kernel): (
        Box<dyn Fn(f64) -> Result<DVector<f64>, ConvolutionError> + Sync>,
        Kernel,
    ) = if gamma < 1.0 {
        let beta = op.params().ok_or(OperatorError::MissingParams)?.beta;
        let sub = Subordinated::new(op, gamma, KERNEL_T_MIN, t_max)?;
        let kernel = Kernel::from_subordinated(&sub, gamma * beta - 1.0, t_max)?;
        let s_table = Table::build(|t| sub.s(t), 0.0, gamma, KERNEL_T_MIN, t_max, TABLE_TOL)?;
        let x0 = x0.clone();
        (
            Box::new(move |t| {
                if t == 0.0 {
                    return Ok(x0.clone());
                }
                Ok(s_table.eval(t.min(s_table.t_max())) * &x0)
            }),
            kernel,
        )
    } else {
        let contour = Arc::new(ContourSemigroup::new(op, KERNEL_T_MIN, t_max)?);
        let kernel = Kernel::from_contour(contour.clone(), t_max);
        let x0 = x0.clone();
        (
            Box::new(move |t| {
                if t == 0.0 {
                    return Ok(x0.clone());
                }
                Ok(contour.at(t) * &x0)
            }),
            kernel,
        )
    };
    let points: Vec<(DVector<f64>, f64)> = t_grid
        .par_iter()
        .map(|&t| {
            let h = finite_convolution(&kernel, forcing, t)?;
            Ok((initial(t)? + h.value, h.error_estimate))
        })
        .collect::<Result<_, ConvolutionError>>()?;
    let (values, errors) = points.into_iter().unzip();
    Trajectory::new(t_grid.to_vec(), values, errors)
}

/// `‖D_t^γ u(t) − A u(t) − f(t)‖` at the interior grid points, with
/// `D_t^γ u = d/dt [g_{1−γ} ∗ (u − u(0))]` by product integration of the
/// piecewise-linear interpolant and central differences.
pub fn caputo_residual(
    u: &Trajectory,
    op: &OperatorFamily,
    gamma: f64,
    forcing: &Forcing,
) -> Result<Vec<(f64, f64)>, ConvolutionError> {
    let a = match op.realization() {
        Realization::Matrix(a) => a,
        Realization::Pencil { .. } => {
            return Err(ConvolutionError::Unsupported(
                "the residual needs a single-valued operator, not a pencil".into(),
            ))
        }
    };
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ConvolutionError::Precondition(format!(
            "γ must lie in (0, 1], got {gamma}"
        )));
    }
    if u.dim() != a.nrows() || forcing.direction.len() != a.nrows() {
        return Err(ConvolutionError::Shape(
            "trajectory, operator and forcing dimensions differ".into(),
        ));
    }
    let ts = &u.t;
    if ts.len() < 3 || ts[0] != 0.0 {
        return Err(ConvolutionError::Precondition(
            "the trajectory needs at least three points starting at t = 0".into(),
        ));
    }
    let n = u.dim();
    let w: Vec<DVector<f64>> = if gamma == 1.0 {
        u.values.iter().map(|v| v - &u.values[0]).collect()
    } else {
        let shifted: Vec<DVector<f64>> = u.values.iter().map(|v| v - &u.values[0]).collect();
        let scale = 1.0 / gamma_fn(1.0 - gamma);
        let e0 = 1.0 - gamma;
        let e1 = 2.0 - gamma;
        (0..ts.len())
            .into_par_iter()
            .map(|j| {
                let big_t = ts[j];
                let mut acc = DVector::zeros(n);
                for i in 0..j {
                    let (lo, hi) = (ts[i], ts[i + 1]);
                    let h = hi - lo;
                    let (a_, b_) = (big_t - hi, big_t - lo);
                    let i0 = (b_.powf(e0) - a_.powf(e0)) / e0;
                    let i1 = b_ * i0 - (b_.powf(e1) - a_.powf(e1)) / e1;
                    let slope = (&shifted[i + 1] - &shifted[i]) / h;
                    acc += &shifted[i] * i0 + slope * i1;
                }
                acc * scale
            })
            .collect()
    };
    let out = (1..ts.len() - 1)
        .map(|j| {
            let d = (&w[j + 1] - &w[j - 1]) / (ts[j + 1] - ts[j - 1]);
            let f = &forcing.direction * forcing.f.value(ts[j]);
            let r = d - a * &u.values[j] - f;
            (ts[j], r.norm())
        })
        .collect();
    Ok(out)
}
