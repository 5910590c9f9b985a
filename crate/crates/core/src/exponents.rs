//! Variable exponents `p: Ω → [1, ∞]`, their essential bounds and
//! classification, and pointwise exponent arithmetic.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::funcspec::{FuncError, Interval, RealFunction, ScalarFunction};

/// Slack below 1 tolerated before an exponent value is rejected.
const BELOW_ONE_SLACK: f64 = 1e-12;

/// A value in `[1, ∞]` with `∞` as a distinguished variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Exponent::Finite(v) => Some(v),
            Exponent::Infinite => None,
        }
    }

    /// As `f64`, with `∞` mapped to `f64::INFINITY`. Only for display and
    /// ordering; arithmetic goes through the variant-aware helpers.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    /// `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> Exponent {
        match self {
            Exponent::Infinite => Exponent::Finite(1.0),
            Exponent::Finite(p) if p == 1.0 => Exponent::Infinite,
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    /// `q` with `1/q = 1/p + 1/r`.
    pub fn harmonic_sum(p: Exponent, r: Exponent) -> Exponent {
        match (p, r) {
            (_, Exponent::Infinite) => p,
            (Exponent::Infinite, _) => r,
            (Exponent::Finite(p), Exponent::Finite(r)) => Exponent::Finite(p * r / (p + r)),
        }
    }

    pub fn le(self, other: Exponent) -> bool {
        match (self, other) {
            (_, Exponent::Infinite) => true,
            (Exponent::Infinite, Exponent::Finite(_)) => false,
            (Exponent::Finite(a), Exponent::Finite(b)) => a <= b,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(v) => write!(f, "{v}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExponentError {
    #[error("exponent value {value} < 1 at x = {x}")]
    BelowOne { x: f64, value: f64 },
    #[error("exponent evaluation failed: {0}")]
    Eval(#[from] FuncError),
    #[error("exponent undefined (NaN) at x = {x}")]
    Undefined { x: f64 },
    #[error("essential bounds need a bounded domain, got {0}")]
    UnboundedDomain(Interval),
}

type CustomFn = dyn Fn(f64) -> Exponent + Send + Sync;

#[derive(Clone)]
enum Repr {
    Constant(Exponent),
    Function(ScalarFunction),
    Conjugate(Arc<VariableExponent>),
    Composition(Arc<VariableExponent>, Arc<VariableExponent>),
    Custom(Arc<CustomFn>),
}

/// A measurable exponent `p: Ω → [1, ∞]`.
#[derive(Clone)]
pub struct VariableExponent {
    repr: Repr,
    domain: Interval,
    label: String,
}

impl fmt::Debug for VariableExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VariableExponent")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .finish()
    }
}

impl VariableExponent {
    pub fn constant(value: Exponent, domain: Interval) -> Result<Self, ExponentError> {
        if let Exponent::Finite(v) = value {
            if !(v >= 1.0 - BELOW_ONE_SLACK) || !v.is_finite() {
                return Err(ExponentError::BelowOne { x: domain.lo, value: v });
            }
        }
        Ok(Self {
            repr: Repr::Constant(value),
            domain,
            label: value.to_string(),
        })
    }

    pub fn constant_on_unit(value: f64) -> Result<Self, ExponentError> {
        Self::constant(Exponent::Finite(value), Interval::unit())
    }

    pub fn infinite(domain: Interval) -> Self {
        Self {
            repr: Repr::Constant(Exponent::Infinite),
            domain,
            label: "inf".into(),
        }
    }

    pub fn function(f: ScalarFunction, domain: Interval) -> Self {
        let label = f.describe();
        Self {
            repr: Repr::Function(f),
            domain,
            label,
        }
    }

    /// An exponent given by an arbitrary pointwise rule.
    pub fn custom<F>(rule: F, domain: Interval, label: &str) -> Self
    where
        F: Fn(f64) -> Exponent + Send + Sync + 'static,
    {
        Self {
            repr: Repr::Custom(Arc::new(rule)),
            domain,
            label: label.to_owned(),
        }
    }

    /// `inf`/`∞`, a constant expression, `catalog:<name>`, or an expression
    /// in `x`.
    pub fn parse(spec: &str, domain: Interval) -> Result<Self, ExponentError> {
        let s = spec.trim();
        if matches!(s, "inf" | "infinity" | "∞" | "Inf") {
            return Ok(Self::infinite(domain));
        }
        let f = ScalarFunction::parse_spec(s)?;
        if f.is_constant() {
            let v = f.eval(0.0)?;
            let mut p = Self::constant(Exponent::Finite(v), domain)?;
            p.label = s.to_owned();
            return Ok(p);
        }
        let mut p = Self::function(f, domain);
        p.label = s.to_owned();
        Ok(p)
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn as_constant(&self) -> Option<Exponent> {
        match self.repr {
            Repr::Constant(e) => Some(e),
            _ => None,
        }
    }

    /// `p(x)`.
    pub fn at(&self, x: f64) -> Result<Exponent, ExponentError> {
        match &self.repr {
            Repr::Constant(e) => Ok(*e),
            Repr::Function(f) => {
                let v = f.eval(x)?;
                check_value(x, v)
            }
            Repr::Conjugate(p) => Ok(p.at(x)?.conjugate()),
            Repr::Composition(p, r) => {
                let q = Exponent::harmonic_sum(p.at(x)?, r.at(x)?);
                match q {
                    Exponent::Finite(v) => check_value(x, v),
                    e => Ok(e),
                }
            }
            Repr::Custom(rule) => match rule(x) {
                Exponent::Finite(v) => check_value(x, v),
                e => Ok(e),
            },
        }
    }

    /// Points where `p` may jump.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        match &self.repr {
            Repr::Function(f) => f.breakpoints(a, b),
            Repr::Conjugate(p) => p.breakpoints(a, b),
            Repr::Composition(p, r) => {
                let mut v = p.breakpoints(a, b);
                v.extend(r.breakpoints(a, b));
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
            _ => Vec::new(),
        }
    }

    /// Same rule on a different domain.
    pub fn on_domain(&self, domain: Interval) -> Self {
        let mut p = self.clone();
        p.domain = domain;
        p
    }
}

fn check_value(x: f64, v: f64) -> Result<Exponent, ExponentError> {
    if v.is_nan() {
        return Err(ExponentError::Undefined { x });
    }
    if v < 1.0 - BELOW_ONE_SLACK {
        return Err(ExponentError::BelowOne { x, value: v });
    }
    if v == f64::INFINITY {
        return Ok(Exponent::Infinite);
    }
    Ok(Exponent::Finite(v.max(1.0)))
}

/// Grid approximations of `ess inf p` and `ess sup p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialBounds {
    pub p_minus: f64,
    pub p_plus: Exponent,
    /// Finest midpoint-grid size used.
    pub resolution: usize,
    /// Whether two successive refinements agreed within 1e-9.
    pub converged: bool,
}

const BOUNDS_AGREEMENT: f64 = 1e-9;
const MAX_RESOLUTION: usize = 1 << 18;
/// Number of trailing decades of an endpoint approach used to decide that
/// the exponent grows without bound.
const UNBOUNDED_DECADES: usize = 6;

fn grid_extrema(p: &VariableExponent, n: usize) -> Result<(f64, Exponent), ExponentError> {
    let d = p.domain;
    let h = d.length() / n as f64;
    let mut lo = f64::INFINITY;
    let mut hi = Exponent::Finite(1.0);
    // Endpoints join the grid where p is defined there.
    let ends = [d.lo, d.hi].into_iter().filter_map(|x| match p.at(x) {
        Err(ExponentError::Eval(_)) | Err(ExponentError::Undefined { .. }) => None,
        other => Some(other),
    });
    let interior = (0..n).map(|i| p.at(d.lo + (i as f64 + 0.5) * h));
    for v in ends.chain(interior) {
        let v = v?;
        if let Exponent::Finite(v) = v {
            lo = lo.min(v);
        }
        if !v.le(hi) {
            hi = v;
        }
    }
    Ok((lo, hi))
}

/// Values of `p` along a geometric approach to one endpoint, nearest last.
fn endpoint_approach(p: &VariableExponent, left: bool) -> Result<Vec<(f64, Exponent)>, ExponentError> {
    let d = p.domain;
    let w = d.length();
    let mut out = Vec::new();
    for k in 1..=320 {
        let h = w * 10f64.powi(-k);
        let x = if left { d.lo + h } else { d.hi - h };
        if x <= d.lo || x >= d.hi || h == 0.0 {
            break;
        }
        if let Some((last, _)) = out.last() {
            if *last == x {
                break;
            }
        }
        out.push((x, p.at(x)?));
    }
    Ok(out)
}

/// True when the approach values keep increasing by non-vanishing amounts.
fn grows_without_bound(seq: &[(f64, Exponent)]) -> bool {
    if seq.iter().any(|(_, v)| v.is_infinite()) {
        return true;
    }
    let vals: Vec<f64> = seq.iter().filter_map(|(_, v)| v.finite()).collect();
    if vals.len() < UNBOUNDED_DECADES + 1 {
        return false;
    }
    let tail = &vals[vals.len() - UNBOUNDED_DECADES - 1..];
    let incs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let first = incs[0];
    first > 1e-6 && incs.iter().all(|d| *d >= 0.5 * first)
}

/// Essential infimum and supremum of `p` over its domain.
///
/// Midpoint grids are refined by doubling until successive resolutions agree
/// within 1e-9 (or the resolution floor is reached); endpoints are probed
/// along a geometric sequence so logarithmic blow-ups such as `1 − ln x` at
/// `0` are reported as `p⁺ = ∞`. Sets of measure zero are invisible to the
/// grid.
pub fn essential_bounds(p: &VariableExponent, resolution: usize) -> Result<EssentialBounds, ExponentError> {
    if let Repr::Constant(e) = p.repr {
        return Ok(EssentialBounds {
            p_minus: e.to_f64(),
            p_plus: e,
            resolution: 1,
            converged: true,
        });
    }
    let d = p.domain;
    if !d.is_bounded() || d.length() <= 0.0 {
        return Err(ExponentError::UnboundedDomain(d));
    }
    let mut n = resolution.max(16);
    let (mut lo, mut hi) = grid_extrema(p, n)?;
    let mut converged = false;
    while n < MAX_RESOLUTION {
        n *= 2;
        let (lo2, hi2) = grid_extrema(p, n)?;
        let hi_close = match (hi, hi2) {
            (Exponent::Finite(a), Exponent::Finite(b)) => (a - b).abs() <= BOUNDS_AGREEMENT,
            (Exponent::Infinite, Exponent::Infinite) => true,
            _ => false,
        };
        let lo_close = (lo - lo2).abs() <= BOUNDS_AGREEMENT;
        lo = lo2;
        hi = hi2;
        if hi_close && lo_close {
            converged = true;
            break;
        }
    }

    let mut unbounded = hi.is_infinite();
    for left in [true, false] {
        let seq = endpoint_approach(p, left)?;
        for (_, v) in &seq {
            if let Exponent::Finite(v) = v {
                lo = lo.min(*v);
            }
            if !v.le(hi) {
                hi = *v;
            }
        }
        if grows_without_bound(&seq) {
            unbounded = true;
        }
    }
    Ok(EssentialBounds {
        p_minus: lo.max(1.0),
        p_plus: if unbounded { Exponent::Infinite } else { hi },
        resolution: n,
        converged: converged && !unbounded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentClass {
    pub is_constant: bool,
    pub in_d_plus: bool,
    pub in_c_plus: bool,
    pub attains_infinity: bool,
}

/// Classifies `p` into the `D₊` / `C₊` classes from its essential bounds.
pub fn classify(bounds: &EssentialBounds) -> ExponentClass {
    let finite_plus = bounds.p_plus.finite();
    ExponentClass {
        is_constant: finite_plus.is_some_and(|v| (v - bounds.p_minus).abs() <= 1e-12)
            || (bounds.p_plus.is_infinite() && bounds.p_minus.is_infinite()),
        in_d_plus: finite_plus.is_some(),
        in_c_plus: finite_plus.is_some() && bounds.p_minus > 1.0,
        attains_infinity: bounds.p_plus.is_infinite(),
    }
}

/// Convenience: bounds at the default resolution, then classify.
pub fn classify_exponent(p: &VariableExponent) -> Result<ExponentClass, ExponentError> {
    Ok(classify(&essential_bounds(p, 1024)?))
}

/// Pointwise conjugate exponent.
pub fn conjugate(p: &VariableExponent) -> VariableExponent {
    let repr = match p.repr {
        Repr::Constant(e) => Repr::Constant(e.conjugate()),
        _ => Repr::Conjugate(Arc::new(p.clone())),
    };
    VariableExponent {
        repr,
        domain: p.domain,
        label: format!("({})'", p.label),
    }
}

/// Outcome of the grid check behind [`composition_exponent`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionCheck {
    /// `r(x) ≥ max(p(x), p(x)/(p(x)−1))` at every grid point.
    pub hypothesis_holds: bool,
    /// Grid points where the hypothesis fails.
    pub violations: Vec<f64>,
    /// `1 ≤ q(x) ≤ p(x)` at every grid point.
    pub q_in_range: bool,
}

/// `q = p·r/(p+r)` (with `q = p` where `r = ∞`) together with a grid check
/// of the composition hypothesis. Violations are reported, not rejected.
pub fn composition_exponent(
    p: &VariableExponent,
    r: &VariableExponent,
) -> Result<(VariableExponent, CompositionCheck), ExponentError> {
    let domain = p.domain;
    let q = match (p.as_constant(), r.as_constant()) {
        (Some(a), Some(b)) => {
            let e = Exponent::harmonic_sum(a, b);
            VariableExponent {
                repr: Repr::Constant(e),
                domain,
                label: e.to_string(),
            }
        }
        _ => VariableExponent {
            repr: Repr::Composition(Arc::new(p.clone()), Arc::new(r.clone())),
            domain,
            label: format!("({})({})/(({})+({}))", p.label, r.label, p.label, r.label),
        },
    };

    let mut violations = Vec::new();
    let mut q_in_range = true;
    let n = 1000;
    for i in 0..n {
        let x = if domain.is_bounded() {
            domain.lo + (i as f64 + 0.5) * domain.length() / n as f64
        } else {
            i as f64 * 0.01
        };
        let (pv, rv) = (p.at(x)?, r.at(x)?);
        let needed = match pv {
            Exponent::Infinite => Exponent::Infinite,
            Exponent::Finite(v) if v == 1.0 => Exponent::Infinite,
            Exponent::Finite(v) => Exponent::Finite(v.max(v / (v - 1.0))),
        };
        if !needed.le(rv) {
            violations.push(x);
        }
        let qv = Exponent::harmonic_sum(pv, rv);
        let lower_ok = qv.finite().is_none_or(|v| v >= 1.0 - BELOW_ONE_SLACK);
        if !lower_ok || !qv.le(pv) {
            q_in_range = false;
        }
    }
    Ok((
        q,
        CompositionCheck {
            hypothesis_holds: violations.is_empty(),
            violations,
            q_in_range,
        },
    ))
}

impl RealFunction for VariableExponent {
    /// `p(x)` as a float (`∞` ↦ `f64::INFINITY`, errors ↦ NaN).
    fn value(&self, x: f64) -> f64 {
        self.at(x).map(Exponent::to_f64).unwrap_or(f64::NAN)
    }
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        VariableExponent::breakpoints(self, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(spec: &str) -> VariableExponent {
        VariableExponent::parse(spec, Interval::unit()).unwrap()
    }

    #[test]
    fn bounds_of_constant() {
        let b = essential_bounds(&unit("2"), 64).unwrap();
        assert_eq!(b.p_minus, 2.0);
        assert_eq!(b.p_plus, Exponent::Finite(2.0));
    }

    #[test]
    fn bounds_of_log_exponent() {
        let b = essential_bounds(&unit("1-ln(x)"), 1024).unwrap();
        assert!((b.p_minus - 1.0).abs() < 1e-9, "{b:?}");
        assert_eq!(b.p_plus, Exponent::Infinite);
        let c = classify(&b);
        assert_eq!(
            c,
            ExponentClass {
                is_constant: false,
                in_d_plus: false,
                in_c_plus: false,
                attains_infinity: true
            }
        );
    }

    #[test]
    fn bounds_of_sin_squared() {
        let b = essential_bounds(&unit("2+sin(x)^2"), 1024).unwrap();
        // Oracle: sin² is increasing on [0, 1]; dense-grid max below.
        let dense_max = (0..=1_000_000)
            .map(|i| 2.0 + (i as f64 * 1e-6).sin().powi(2))
            .fold(f64::MIN, f64::max);
        assert!((b.p_minus - 2.0).abs() < 1e-9);
        let hi = b.p_plus.finite().unwrap();
        assert!((hi - dense_max).abs() < 1e-9);
        assert!((hi - 2.708_073_418_273_571).abs() < 1e-9);
        assert!(b.converged);
    }

    #[test]
    fn below_one_is_rejected() {
        assert!(matches!(
            essential_bounds(&unit("0.5+x"), 64),
            Err(ExponentError::BelowOne { .. })
        ));
        assert!(VariableExponent::parse("0.5", Interval::unit()).is_err());
    }

    #[test]
    fn classification_of_constants() {
        let c = classify_exponent(&unit("2")).unwrap();
        assert!(c.is_constant && c.in_d_plus && c.in_c_plus && !c.attains_infinity);
        let c = classify_exponent(&unit("1")).unwrap();
        assert!(c.is_constant && c.in_d_plus && !c.in_c_plus && !c.attains_infinity);
        let c = classify_exponent(&unit("inf")).unwrap();
        assert!(c.attains_infinity && !c.in_d_plus && !c.in_c_plus);
    }

    #[test]
    fn conjugation() {
        assert_eq!(conjugate(&unit("2")).at(0.3).unwrap(), Exponent::Finite(2.0));
        assert_eq!(conjugate(&unit("1")).at(0.3).unwrap(), Exponent::Infinite);
        assert_eq!(conjugate(&unit("inf")).at(0.3).unwrap(), Exponent::Finite(1.0));
        let q = conjugate(&unit("1-ln(x)"));
        let v = q.at((-1.0f64).exp()).unwrap().finite().unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        assert_eq!(q.at(1.0).unwrap(), Exponent::Infinite);
    }

    #[test]
    fn composition_examples() {
        let (q, chk) = composition_exponent(&unit("2"), &unit("2")).unwrap();
        assert_eq!(q.at(0.5).unwrap(), Exponent::Finite(1.0));
        assert!(chk.hypothesis_holds && chk.q_in_range);
        let (q, _) = composition_exponent(&unit("2"), &unit("inf")).unwrap();
        assert_eq!(q.at(0.5).unwrap(), Exponent::Finite(2.0));
        let (q, chk) = composition_exponent(&unit("3"), &unit("6")).unwrap();
        assert_eq!(q.at(0.5).unwrap(), Exponent::Finite(2.0));
        assert!(chk.hypothesis_holds);
        let (_, chk) = composition_exponent(&unit("3"), &unit("2")).unwrap();
        assert!(!chk.hypothesis_holds);
        assert_eq!(chk.violations.len(), 1000);
        let (_, chk) = composition_exponent(&unit("2+x"), &unit("4+x")).unwrap();
        assert!(chk.hypothesis_holds && chk.q_in_range);
    }

    #[test]
    fn parse_variants() {
        assert_eq!(unit("inf").as_constant(), Some(Exponent::Infinite));
        assert_eq!(unit("3/2").as_constant(), Some(Exponent::Finite(1.5)));
        assert!(unit("1+x").as_constant().is_none());
    }
}
