//! The modular `ρ(f) = ∫ φ_{p(x)}(|f(x)|) dx`, the Luxemburg norm, and
//! numeric checks of the Hölder, embedding and monotonicity inequalities of
//! variable-exponent Lebesgue spaces.

use std::cell::RefCell;

use thiserror::Error;

use crate::exponents::{composition_exponent, Exponent, ExponentError, VariableExponent};
use crate::funcspec::{Interval, RealFunction};
use crate::quad::{integrate_with_breaks, QuadConfig, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModularError {
    #[error("phi is undefined for negative argument {0}")]
    NegativeArgument(f64),
    #[error("function undefined (NaN) at x = {x}")]
    Undefined { x: f64 },
    #[error(transparent)]
    Exponent(#[from] ExponentError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("integration domain {0} must be bounded and nonempty")]
    BadDomain(Interval),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// `φ_p(t)`: `t^p` for finite `p`; for `p = ∞`, `0` on `[0, 1]` and `∞` above.
pub fn phi(p: Exponent, t: f64) -> Result<f64, ModularError> {
    if t < 0.0 || t.is_nan() {
        return Err(ModularError::NegativeArgument(t));
    }
    Ok(phi_unchecked(p, t))
}

#[inline]
fn phi_unchecked(p: Exponent, t: f64) -> f64 {
    match p {
        Exponent::Finite(p) => {
            if p == 1.0 {
                t
            } else if p == 2.0 {
                t * t
            } else {
                t.powf(p)
            }
        }
        Exponent::Infinite => {
            if t <= 1.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModularConfig {
    pub quad: QuadConfig,
}

impl Default for ModularConfig {
    fn default() -> Self {
        Self {
            quad: QuadConfig {
                abs_tol: 1e-14,
                rel_tol: 1e-12,
                max_intervals: 2000,
                divergence_cap: 1e12,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModularResult {
    /// `+∞` when `diverged`.
    pub value: f64,
    pub quadrature_error_estimate: f64,
    pub diverged: bool,
    pub converged: bool,
}

/// A prepared modular: function, exponent and domain with breakpoints
/// gathered once, evaluable at any scaling `ρ(s·f)`.
pub struct Modular<'a, F: RealFunction + ?Sized> {
    f: &'a F,
    p: &'a VariableExponent,
    omega: Interval,
    points: Vec<f64>,
    cfg: ModularConfig,
}

impl<'a, F: RealFunction + ?Sized> Modular<'a, F> {
    pub fn new(f: &'a F, p: &'a VariableExponent, omega: Interval, cfg: ModularConfig) -> Result<Self, ModularError> {
        if !omega.is_bounded() || omega.length() < 0.0 {
            return Err(ModularError::BadDomain(omega));
        }
        let mut points = vec![omega.lo];
        points.extend(f.breakpoints(omega.lo, omega.hi));
        points.extend(p.breakpoints(omega.lo, omega.hi));
        points.push(omega.hi);
        points.retain(|x| *x >= omega.lo && *x <= omega.hi);
        points.sort_by(f64::total_cmp);
        points.dedup();
        Ok(Self {
            f,
            p,
            omega,
            points,
            cfg,
        })
    }

    /// `ρ(scale · f)`.
    pub fn at_scale(&self, scale: f64) -> Result<ModularResult, ModularError> {
        let failure: RefCell<Option<ModularError>> = RefCell::new(None);
        let width = self.omega.length();
        let integrand_at = |x: f64| -> f64 {
            let fx = self.f.value(x);
            if fx.is_nan() {
                return f64::NAN;
            }
            match self.p.at(x) {
                Ok(p) => phi_unchecked(p, fx.abs() * scale),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.into());
                    f64::NAN
                }
            }
        };
        let integrand = |x: f64| -> f64 {
            let v = integrand_at(x);
            if v == f64::INFINITY {
                // Only a set of positive measure makes the modular infinite:
                // require the blow-up to persist at nearby points.
                let h = 1e-7 * width;
                let (lo, hi) = (self.omega.lo, self.omega.hi);
                let l = integrand_at(if x - h > lo { x - h } else { 0.5 * (lo + x) });
                let r = integrand_at(if x + h < hi { x + h } else { 0.5 * (x + hi) });
                if l == f64::INFINITY || r == f64::INFINITY {
                    return f64::INFINITY;
                }
                return 0.0;
            }
            v
        };
        let res = integrate_with_breaks(&integrand, &self.points, &self.cfg.quad);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let res = match res {
            Ok(r) => r,
            Err(QuadError::NotANumber { x }) => return Err(ModularError::Undefined { x }),
            Err(e) => return Err(e.into()),
        };
        Ok(ModularResult {
            value: res.value,
            quadrature_error_estimate: res.error,
            diverged: res.diverged,
            converged: res.converged,
        })
    }
}

/// `ρ(f)` over `omega`.
pub fn modular<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    omega: Interval,
    cfg: &ModularConfig,
) -> Result<ModularResult, ModularError> {
    Modular::new(f, p, omega, *cfg)?.at_scale(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormResult {
    /// `+∞` when no admissible `λ` exists below the search cap.
    pub value: f64,
    /// Final bracket: `ρ(f/hi) ≤ 1`, and `lo = 0` or `ρ(f/lo) > 1`.
    pub bracket: (f64, f64),
    pub modular_at_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    /// Relative bracket width at termination.
    pub tol: f64,
    pub modular: ModularConfig,
    /// Upper search cap for `λ`.
    pub lambda_cap: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            modular: ModularConfig::default(),
            lambda_cap: 1e15,
        }
    }
}

impl NormConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

const ESSSUP_GRID: usize = 4096;

/// Grid-plus-golden-section estimate of `ess sup |f|` over `{x : p(x) = ∞}`.
pub fn esssup_on_infinite_set<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    omega: Interval,
) -> Result<f64, ModularError> {
    if let Some(Exponent::Finite(_)) = p.as_constant() {
        return Ok(0.0);
    }
    let always_inf = p.as_constant() == Some(Exponent::Infinite);
    let eval = |x: f64| -> Result<Option<f64>, ModularError> {
        if !always_inf && !p.at(x)?.is_infinite() {
            return Ok(None);
        }
        let v = f.value(x);
        if v.is_nan() {
            return Err(ModularError::Undefined { x });
        }
        Ok(Some(v.abs()))
    };
    let n = ESSSUP_GRID;
    let h = omega.length() / n as f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_x = omega.lo;
    for i in 0..n {
        let x = omega.lo + (i as f64 + 0.5) * h;
        if let Some(v) = eval(x)? {
            if v > best {
                best = v;
                best_x = x;
            }
        }
    }
    if best == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    // Golden-section refinement of the local maximum.
    let score = |x: f64| eval(x).ok().flatten().unwrap_or(f64::NEG_INFINITY);
    let (mut a, mut b) = ((best_x - h).max(omega.lo), (best_x + h).min(omega.hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = score(d);
        }
    }
    for x in [a, b, c, d, omega.lo, omega.hi] {
        best = best.max(score(x));
    }
    Ok(best)
}

/// Luxemburg norm `inf{λ > 0 : ρ(f/λ) ≤ 1}` by bracketing and bisection.
pub fn luxemburg_norm<F: RealFunction + ?Sized>(
    f: &F,
    p: &VariableExponent,
    omega: Interval,
    cfg: &NormConfig,
) -> Result<NormResult, ModularError> {
    if !(cfg.tol > 0.0) {
        return Err(ModularError::BadTolerance(cfg.tol));
    }
    let m = Modular::new(f, p, omega, cfg.modular)?;
    let rho = |lambda: f64| -> Result<f64, ModularError> {
        let r = m.at_scale(1.0 / lambda)?;
        Ok(if r.diverged { f64::INFINITY } else { r.value })
    };

    // The ∞-part of p forces λ ≥ ess sup |f| on {p = ∞}.
    let floor = esssup_on_infinite_set(f, p, omega)?;
    if p.as_constant() == Some(Exponent::Infinite) {
        return Ok(NormResult {
            value: floor,
            bracket: (floor * (1.0 - cfg.tol), floor),
            modular_at_value: 0.0,
        });
    }
    if floor > 0.0 {
        let at_floor = rho(floor)?;
        if at_floor <= 1.0 {
            return Ok(NormResult {
                value: floor,
                bracket: (floor * (1.0 - cfg.tol), floor),
                modular_at_value: at_floor,
            });
        }
    } else if rho(1.0)? == 0.0 {
        return Ok(NormResult {
            value: 0.0,
            bracket: (0.0, 0.0),
            modular_at_value: 0.0,
        });
    }

    let mut lambda = floor.max(1.0);
    let (mut lo, mut hi);
    let mut rho_hi;
    let r0 = rho(lambda)?;
    if r0 <= 1.0 {
        hi = lambda;
        rho_hi = r0;
        lo = floor;
        loop {
            let next = lambda * 0.5;
            if next <= floor {
                break;
            }
            if next < 1e-300 {
                return Ok(NormResult {
                    value: 0.0,
                    bracket: (0.0, next),
                    modular_at_value: rho(next)?,
                });
            }
            let r = rho(next)?;
            if r > 1.0 {
                lo = next;
                break;
            }
            hi = next;
            rho_hi = r;
            lambda = next;
        }
    } else {
        lo = lambda;
        loop {
            lambda *= 2.0;
            if lambda > cfg.lambda_cap {
                return Ok(NormResult {
                    value: f64::INFINITY,
                    bracket: (lo, f64::INFINITY),
                    modular_at_value: f64::INFINITY,
                });
            }
            let r = rho(lambda)?;
            if r <= 1.0 {
                hi = lambda;
                rho_hi = r;
                break;
            }
            lo = lambda;
        }
    }

    while hi - lo > cfg.tol * hi {
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let r = rho(mid)?;
        if r <= 1.0 {
            hi = mid;
            rho_hi = r;
        } else {
            lo = mid;
        }
    }
    Ok(NormResult {
        value: hi,
        bracket: (lo, hi),
        modular_at_value: rho_hi,
    })
}

/// Pointwise product of two functions, keeping both breakpoint sets.
pub struct Product<A, B>(pub A, pub B);

impl<A: RealFunction, B: RealFunction> RealFunction for Product<A, B> {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x) * self.1.value(x)
    }
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut v = self.0.breakpoints(a, b);
        v.extend(self.1.breakpoints(a, b));
        v
    }
}

/// Outcome of one of the inequality checks below.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
    pub holds: bool,
    /// An infinite norm on the right makes the inequality vacuous.
    pub vacuous: bool,
    /// The individual norms that entered the check.
    pub norms: Vec<(String, f64)>,
}

impl InequalityReport {
    fn new(lhs: f64, rhs: f64, norms: Vec<(String, f64)>, tol: f64) -> Self {
        let vacuous = rhs.is_infinite();
        let holds = vacuous || lhs <= rhs * (1.0 + tol) + tol;
        Self {
            lhs,
            rhs,
            slack: rhs - lhs,
            holds,
            vacuous,
            norms,
        }
    }
}

/// Hölder inequality `‖uv‖_{q} ≤ 2‖u‖_{p}‖v‖_{r}` with `1/q = 1/p + 1/r`.
pub fn holder_check<U: RealFunction, V: RealFunction>(
    u: &U,
    v: &V,
    p: &VariableExponent,
    r: &VariableExponent,
    omega: Interval,
    cfg: &NormConfig,
) -> Result<InequalityReport, ModularError> {
    let (q, _) = composition_exponent(p, r)?;
    let uv = Product(u, v);
    let n_uv = luxemburg_norm(&uv, &q, omega, cfg)?.value;
    let n_u = luxemburg_norm(u, p, omega, cfg)?.value;
    let n_v = luxemburg_norm(v, r, omega, cfg)?.value;
    let rhs = if n_u == 0.0 || n_v == 0.0 { 0.0 } else { 2.0 * n_u * n_v };
    Ok(InequalityReport::new(
        n_uv,
        rhs,
        vec![("uv_q".into(), n_uv), ("u_p".into(), n_u), ("v_r".into(), n_v)],
        10.0 * cfg.tol,
    ))
}

fn grid(omega: Interval, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| omega.lo + (i as f64 + 0.5) * omega.length() / n as f64)
}

/// Embedding `‖f‖_{q} ≤ 2·max(1, |Ω|)·‖f‖_{p}` for `q ≤ p` on a bounded domain
/// (constant 2 on a unit-length domain).
pub fn embedding_check<F: RealFunction>(
    f: &F,
    p: &VariableExponent,
    q: &VariableExponent,
    omega: Interval,
    cfg: &NormConfig,
) -> Result<InequalityReport, ModularError> {
    for x in grid(omega, 1000) {
        if !q.at(x)?.le(p.at(x)?) {
            return Err(ModularError::Precondition(format!("q(x) > p(x) at x = {x}")));
        }
    }
    let n_q = luxemburg_norm(f, q, omega, cfg)?.value;
    let n_p = luxemburg_norm(f, p, omega, cfg)?.value;
    let constant = 2.0 * omega.length().max(1.0);
    let rhs = if n_p == 0.0 { 0.0 } else { constant * n_p };
    Ok(InequalityReport::new(
        n_q,
        rhs,
        vec![("f_q".into(), n_q), ("f_p".into(), n_p)],
        10.0 * cfg.tol,
    ))
}

/// Lattice property `|g| ≤ |f|` ⇒ `‖g‖ ≤ ‖f‖`.
pub fn monotonicity_check<F: RealFunction, G: RealFunction>(
    f: &F,
    g: &G,
    p: &VariableExponent,
    omega: Interval,
    cfg: &NormConfig,
) -> Result<InequalityReport, ModularError> {
    for x in grid(omega, 1000) {
        let (fx, gx) = (f.value(x), g.value(x));
        if gx.abs() > fx.abs() * (1.0 + 1e-12) + 1e-15 {
            return Err(ModularError::Precondition(format!(
                "|g| > |f| at x = {x} ({gx} vs {fx})"
            )));
        }
    }
    let n_g = luxemburg_norm(g, p, omega, cfg)?.value;
    let n_f = luxemburg_norm(f, p, omega, cfg)?.value;
    Ok(InequalityReport::new(
        n_g,
        n_f,
        vec![("g_p".into(), n_g), ("f_p".into(), n_f)],
        10.0 * cfg.tol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspec::{FnFunction, ScalarFunction};

    fn unit_exp(spec: &str) -> VariableExponent {
        VariableExponent::parse(spec, Interval::unit()).unwrap()
    }

    fn expr(s: &str) -> ScalarFunction {
        ScalarFunction::expression(s).unwrap()
    }

    #[test]
    fn phi_cases() {
        assert_eq!(phi(Exponent::Finite(2.0), 3.0).unwrap(), 9.0);
        assert_eq!(phi(Exponent::Infinite, 0.5).unwrap(), 0.0);
        assert_eq!(phi(Exponent::Infinite, 1.0).unwrap(), 0.0);
        assert_eq!(phi(Exponent::Infinite, 2.0).unwrap(), f64::INFINITY);
        assert!(matches!(
            phi(Exponent::Finite(2.0), -1.0),
            Err(ModularError::NegativeArgument(_))
        ));
    }

    #[test]
    fn modular_examples() {
        let cfg = ModularConfig::default();
        let p = unit_exp("1-ln(x)");
        let r = modular(&expr("1"), &p, Interval::unit(), &cfg).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        // ∫ 2·x^{−ln 2} dx = 2/(1 − ln 2).
        let r = modular(&expr("2"), &p, Interval::unit(), &cfg).unwrap();
        assert!((r.value - 2.0 / (1.0 - 2f64.ln())).abs() < 1e-9, "{r:?}");
        assert!((r.value - 6.517_783).abs() < 1e-6);
        let r = modular(&expr("2"), &unit_exp("inf"), Interval::unit(), &cfg).unwrap();
        assert!(r.diverged && r.value.is_infinite());
        // 3 > e makes ∫ 3·x^{−ln 3} divergent.
        let r = modular(&expr("3"), &p, Interval::unit(), &cfg).unwrap();
        assert!(r.diverged);
    }

    #[test]
    fn undefined_function_is_an_error() {
        let err = modular(
            &expr("ln(x-0.5)"),
            &unit_exp("2"),
            Interval::unit(),
            &ModularConfig::default(),
        );
        assert!(matches!(err, Err(ModularError::Undefined { .. })));
    }

    #[test]
    fn norm_examples() {
        let cfg = NormConfig::default();
        let n = luxemburg_norm(&expr("x"), &unit_exp("2"), Interval::unit(), &cfg).unwrap();
        assert!((n.value - 1.0 / 3f64.sqrt()).abs() < 1e-9, "{n:?}");
        assert!(n.bracket.1 - n.bracket.0 <= 1e-10 * n.bracket.1);
        let n = luxemburg_norm(&expr("3.5"), &unit_exp("inf"), Interval::unit(), &cfg).unwrap();
        assert_eq!(n.value, 3.5);
        let n = luxemburg_norm(&expr("1"), &unit_exp("1-ln(x)"), Interval::unit(), &cfg).unwrap();
        assert!((n.value - 1.0).abs() < 1e-8, "{n:?}");
        let n = luxemburg_norm(&expr("0*x"), &unit_exp("1-ln(x)"), Interval::unit(), &cfg).unwrap();
        assert_eq!(n.value, 0.0);
    }

    #[test]
    fn norm_of_mixed_exponent_respects_infinite_part() {
        // p = ∞ on [0, 1/2), 2 on [1/2, 1]; f = 3 on the first half, 0 after.
        let p = VariableExponent::custom(
            |x| {
                if x < 0.5 {
                    Exponent::Infinite
                } else {
                    Exponent::Finite(2.0)
                }
            },
            Interval::unit(),
            "mixed",
        );
        let f = FnFunction(|x: f64| if x < 0.5 { 3.0 } else { 0.0 });
        let n = luxemburg_norm(&f, &p, Interval::unit(), &NormConfig::default()).unwrap();
        assert!((n.value - 3.0).abs() < 1e-9, "{n:?}");
        // With mass on the finite half too: max(3, (∫_{1/2}^1 4)^{1/2} = √2) = 3.
        let f = FnFunction(|x: f64| if x < 0.5 { 1.0 } else { 2.0 });
        let n = luxemburg_norm(&f, &p, Interval::unit(), &NormConfig::default()).unwrap();
        assert!((n.value - 2f64.sqrt()).abs() < 1e-9, "{n:?}");
    }

    #[test]
    fn holder_examples() {
        let cfg = NormConfig::default();
        let r = holder_check(
            &expr("1"),
            &expr("1"),
            &unit_exp("2"),
            &unit_exp("2"),
            Interval::unit(),
            &cfg,
        )
        .unwrap();
        assert!(r.holds && (r.lhs - 1.0).abs() < 1e-9 && (r.rhs - 2.0).abs() < 1e-9);
        let r = holder_check(
            &expr("x"),
            &expr("1-x"),
            &unit_exp("2"),
            &unit_exp("2"),
            Interval::unit(),
            &cfg,
        )
        .unwrap();
        assert!(r.holds);
        assert!((r.lhs - 1.0 / 6.0).abs() < 1e-9);
        assert!((r.rhs - 2.0 / 3.0).abs() < 1e-9);
        let r = holder_check(
            &expr("sin(x)"),
            &expr("cos(x)"),
            &unit_exp("4"),
            &unit_exp("4/3"),
            Interval::unit(),
            &cfg,
        )
        .unwrap();
        assert!(r.holds);
    }

    #[test]
    fn embedding_and_monotonicity_examples() {
        let cfg = NormConfig::default();
        let r = embedding_check(&expr("1"), &unit_exp("2"), &unit_exp("1"), Interval::unit(), &cfg).unwrap();
        assert!(r.holds && (r.lhs - 1.0).abs() < 1e-9);
        let r = embedding_check(&expr("x"), &unit_exp("2"), &unit_exp("1"), Interval::unit(), &cfg).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-9 && (r.rhs - 2.0 / 3f64.sqrt()).abs() < 1e-9);
        let r = embedding_check(
            &expr("sin(x)"),
            &unit_exp("2+sin(x)^2"),
            &unit_exp("2"),
            Interval::unit(),
            &cfg,
        )
        .unwrap();
        assert!(r.holds);
        assert!(matches!(
            embedding_check(&expr("x"), &unit_exp("1"), &unit_exp("2"), Interval::unit(), &cfg),
            Err(ModularError::Precondition(_))
        ));

        let r = monotonicity_check(&expr("x"), &expr("x^2"), &unit_exp("2"), Interval::unit(), &cfg).unwrap();
        assert!((r.lhs - 1.0 / 5f64.sqrt()).abs() < 1e-9 && (r.rhs - 1.0 / 3f64.sqrt()).abs() < 1e-9);
        let r = monotonicity_check(
            &expr("sin(x)+2"),
            &expr("(sin(x)+2)/2"),
            &unit_exp("3"),
            Interval::unit(),
            &cfg,
        )
        .unwrap();
        assert!((r.lhs - r.rhs / 2.0).abs() < 1e-9);
        let g = expr("sin(x)*(sign(0.5-x)+1)/2");
        let r = monotonicity_check(&expr("sin(x)"), &g, &unit_exp("1-ln(x)"), Interval::unit(), &cfg).unwrap();
        assert!(r.holds && r.lhs < r.rhs);
        assert!(matches!(
            monotonicity_check(&expr("x"), &expr("2*x"), &unit_exp("2"), Interval::unit(), &cfg),
            Err(ModularError::Precondition(_))
        ));
    }
}
