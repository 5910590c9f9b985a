//! Scalar functions of one real variable: parsed expressions, a small
//! built-in catalog, and sampled data with interpolation.

mod expr;
mod sampled;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use expr::{parse_expr, BinOp, EvalError, Func, FuncExpr, Node, ParseError};
pub use sampled::{load_samples, ColumnRef, ColumnSpec, Interpolation, SampledData};

/// A closed real interval; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self, FuncError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(FuncError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        other.lo >= self.lo && other.hi <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuncError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("evaluation failed at x = {x}: {source}")]
    Eval { x: f64, source: EvalError },
    #[error("x = {x} lies outside the domain {domain}")]
    OutOfDomain { x: f64, domain: Interval },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("time column is not strictly increasing at data row {row}")]
    NonMonotoneTime { row: usize },
    #[error("unparsable or nonfinite value '{text}' at data row {row}")]
    BadValue { row: usize, text: String },
    #[error("sampled data needs at least two rows, got {0}")]
    TooFewSamples(usize),
    #[error("unknown catalog function '{0}'")]
    UnknownCatalog(String),
}

/// Functions that can be handed to the quadrature-based machinery.
///
/// `value` returns NaN where the function is undefined; the integrators turn
/// that into an error carrying the offending abscissa.
pub trait RealFunction: Sync {
    fn value(&self, x: f64) -> f64;

    /// Points in `[a, b]` where the function may jump or kink.
    fn breakpoints(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Adapter turning a closure into a [`RealFunction`] without breakpoints.
pub struct FnFunction<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> RealFunction for FnFunction<F> {
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

impl<T: RealFunction + ?Sized> RealFunction for &T {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        (**self).breakpoints(a, b)
    }
}

/// Built-in functions, evaluated natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Catalog {
    /// sin x
    Sin,
    /// cos x
    Cos,
    /// sin x + sin √2 x
    SinSinSqrt2,
    /// sign(sin x)
    SignSin,
    /// sign(sin x + sin √2 x)
    SignSinSinSqrt2,
    /// 1 − ln x on (0, ∞)
    OneMinusLn,
    /// e^{−x}
    ExpDecay,
}

impl Catalog {
    pub const ALL: [Catalog; 7] = [
        Catalog::Sin,
        Catalog::Cos,
        Catalog::SinSinSqrt2,
        Catalog::SignSin,
        Catalog::SignSinSinSqrt2,
        Catalog::OneMinusLn,
        Catalog::ExpDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Catalog::Sin => "sin",
            Catalog::Cos => "cos",
            Catalog::SinSinSqrt2 => "sin_sin_sqrt2",
            Catalog::SignSin => "sign_sin",
            Catalog::SignSinSinSqrt2 => "sign_sin_sin_sqrt2",
            Catalog::OneMinusLn => "one_minus_ln",
            Catalog::ExpDecay => "exp_decay",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, FuncError> {
        Catalog::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| FuncError::UnknownCatalog(name.to_owned()))
    }

    fn domain(self) -> Interval {
        match self {
            Catalog::OneMinusLn => Interval {
                lo: 0.0,
                hi: f64::INFINITY,
            },
            _ => Interval::REAL_LINE,
        }
    }

    fn eval(self, x: f64) -> Result<f64, EvalError> {
        let s2 = std::f64::consts::SQRT_2;
        Ok(match self {
            Catalog::Sin => x.sin(),
            Catalog::Cos => x.cos(),
            Catalog::SinSinSqrt2 => x.sin() + (s2 * x).sin(),
            Catalog::SignSin => sign(x.sin()),
            Catalog::SignSinSinSqrt2 => sign(x.sin() + (s2 * x).sin()),
            Catalog::OneMinusLn => {
                if x <= 0.0 {
                    return Err(EvalError::LnDomain { arg: x });
                }
                1.0 - x.ln()
            }
            Catalog::ExpDecay => (-x).exp(),
        })
    }

    fn breakpoints(self, a: f64, b: f64) -> Vec<f64> {
        match self {
            Catalog::SignSin => {
                let pi = std::f64::consts::PI;
                let k0 = (a / pi).ceil() as i64;
                let k1 = (b / pi).floor() as i64;
                (k0..=k1).map(|k| k as f64 * pi).collect()
            }
            Catalog::SignSinSinSqrt2 => {
                let s2 = std::f64::consts::SQRT_2;
                sign_change_roots(&|x: f64| x.sin() + (s2 * x).sin(), a, b)
            }
            _ => Vec::new(),
        }
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Locates sign changes of `g` on `[a, b]` by a uniform scan followed by
/// bisection to machine resolution.
pub fn sign_change_roots<G: Fn(f64) -> f64 + ?Sized>(g: &G, a: f64, b: f64) -> Vec<f64> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Vec::new();
    }
    let n = (((b - a) / 0.01).ceil() as usize).clamp(64, 200_000);
    let h = (b - a) / n as f64;
    let mut roots = Vec::new();
    let mut x0 = a;
    let mut g0 = g(a);
    if g0 == 0.0 {
        roots.push(a);
    }
    for i in 1..=n {
        let x1 = if i == n { b } else { a + i as f64 * h };
        let g1 = g(x1);
        if g1 == 0.0 {
            roots.push(x1);
        } else if g0 != 0.0 && g0.is_finite() && g1.is_finite() && (g0 < 0.0) != (g1 < 0.0) {
            let (mut lo, mut hi, mut glo) = (x0, x1, g0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let gm = g(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (gm < 0.0) == (glo < 0.0) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        g0 = g1;
    }
    roots.dedup();
    roots
}

#[derive(Debug, Clone)]
enum Kind {
    Expression(Arc<FuncExpr>),
    Catalog(Catalog),
    Sampled(Arc<SampledData>),
}

/// A real function of one real variable with an explicit domain.
///
/// An optional affine pre-map `x ↦ scale·x + shift` supports shifted and
/// reflected copies without rebuilding the underlying definition.
#[derive(Debug, Clone)]
pub struct ScalarFunction {
    kind: Kind,
    base_domain: Interval,
    scale: f64,
    shift: f64,
}

impl ScalarFunction {
    pub fn expression(source: &str) -> Result<Self, FuncError> {
        Ok(Self::from_expr(parse_expr(source)?, Interval::REAL_LINE))
    }

    pub fn from_expr(expr: FuncExpr, domain: Interval) -> Self {
        Self {
            kind: Kind::Expression(Arc::new(expr)),
            base_domain: domain,
            scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn catalog(entry: Catalog) -> Self {
        Self {
            kind: Kind::Catalog(entry),
            base_domain: entry.domain(),
            scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn sampled(data: SampledData) -> Self {
        let domain = data.domain();
        Self {
            kind: Kind::Sampled(Arc::new(data)),
            base_domain: domain,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Parses `catalog:<name>`, `csv:<path>` (columns `t`, `value`) or an
    /// expression.
    pub fn parse_spec(spec: &str) -> Result<Self, FuncError> {
        let spec = spec.trim();
        if let Some(name) = spec.strip_prefix("catalog:") {
            return Ok(Self::catalog(Catalog::from_name(name.trim())?));
        }
        if let Some(path) = spec.strip_prefix("csv:") {
            let data = load_samples(path.trim(), &ColumnSpec::default())?;
            return Ok(Self::sampled(data));
        }
        Self::expression(spec)
    }

    pub fn with_domain(mut self, domain: Interval) -> Self {
        self.base_domain = domain;
        self
    }

    /// `x ↦ f(x + a)`.
    pub fn shifted(&self, a: f64) -> Self {
        let mut g = self.clone();
        g.shift += self.scale * a;
        g
    }

    /// `x ↦ f(−x)`.
    pub fn reflected(&self) -> Self {
        let mut g = self.clone();
        g.scale = -self.scale;
        g
    }

    fn to_base(&self, x: f64) -> f64 {
        self.scale * x + self.shift
    }

    fn from_base(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn domain(&self) -> Interval {
        let (a, b) = (self.from_base(self.base_domain.lo), self.from_base(self.base_domain.hi));
        Interval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, FuncError> {
        let y = self.to_base(x);
        if !self.base_domain.contains(y) {
            return Err(FuncError::OutOfDomain {
                x,
                domain: self.domain(),
            });
        }
        let v = match &self.kind {
            Kind::Expression(e) => e.eval(y),
            Kind::Catalog(c) => c.eval(y),
            Kind::Sampled(s) => {
                return s.eval(y).map_err(|_| FuncError::OutOfDomain {
                    x,
                    domain: self.domain(),
                })
            }
        };
        v.map_err(|source| FuncError::Eval { x, source })
    }

    pub fn is_constant(&self) -> bool {
        match &self.kind {
            Kind::Expression(e) => e.ast().is_constant(),
            _ => false,
        }
    }

    /// Expression source, catalog name, or `<sampled>`.
    pub fn describe(&self) -> String {
        let base = match &self.kind {
            Kind::Expression(e) => e.source().to_owned(),
            Kind::Catalog(c) => format!("catalog:{}", c.name()),
            Kind::Sampled(_) => "<sampled>".to_owned(),
        };
        if self.scale == 1.0 && self.shift == 0.0 {
            base
        } else {
            format!("{base} ∘ (x ↦ {}·x + {})", self.scale, self.shift)
        }
    }

    fn base_breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        match &self.kind {
            Kind::Expression(e) => {
                let mut args = Vec::new();
                e.ast().sign_arguments(&mut args);
                let mut out = Vec::new();
                for arg in args {
                    out.extend(sign_change_roots(&|y: f64| arg.eval(y).unwrap_or(f64::NAN), lo, hi));
                }
                out
            }
            Kind::Catalog(c) => c.breakpoints(lo, hi),
            Kind::Sampled(s) => s.breakpoints(lo, hi),
        }
    }
}

impl RealFunction for ScalarFunction {
    fn value(&self, x: f64) -> f64 {
        self.eval(x).unwrap_or(f64::NAN)
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let (ya, yb) = (self.to_base(a), self.to_base(b));
        let (lo, hi) = (ya.min(yb).max(self.base_domain.lo), ya.max(yb).min(self.base_domain.hi));
        if !(lo < hi) {
            return Vec::new();
        }
        let mut pts: Vec<f64> = self
            .base_breakpoints(lo, hi)
            .into_iter()
            .map(|y| self.from_base(y))
            .filter(|x| *x > a && *x < b)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Evaluates `f` at `x`; alias kept for call sites that read better as a
/// free function.
pub fn eval_func(f: &ScalarFunction, x: f64) -> Result<f64, FuncError> {
    f.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn eval_examples() {
        let f = ScalarFunction::expression("sign(sin(x))").unwrap();
        assert_eq!(f.eval(PI / 2.0).unwrap(), 1.0);
        let f = ScalarFunction::expression("1-ln(x)").unwrap();
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
        assert!(matches!(f.eval(0.0), Err(FuncError::Eval { .. })));
        let f = ScalarFunction::expression("sign(x)").unwrap();
        assert_eq!(f.eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_domain() {
        let f = ScalarFunction::expression("x")
            .unwrap()
            .with_domain(Interval::new(0.0, 10.0).unwrap());
        assert!(matches!(f.eval(10.5), Err(FuncError::OutOfDomain { .. })));
        assert_eq!(f.eval(10.0).unwrap(), 10.0);
    }

    #[test]
    fn shift_and_reflect() {
        let f = ScalarFunction::expression("x^2+x")
            .unwrap()
            .with_domain(Interval::new(0.0, 10.0).unwrap());
        let g = f.shifted(2.0);
        assert_eq!(g.eval(1.0).unwrap(), 12.0);
        assert_eq!(g.domain(), Interval::new(-2.0, 8.0).unwrap());
        let r = f.reflected();
        assert_eq!(r.eval(-3.0).unwrap(), 12.0);
        assert_eq!(r.domain(), Interval::new(-10.0, 0.0).unwrap());
        assert_eq!(r.shifted(-1.0).eval(-2.0).unwrap(), 12.0);
    }

    #[test]
    fn catalog_matches_expression() {
        let cat = ScalarFunction::catalog(Catalog::SignSinSinSqrt2);
        let ex = ScalarFunction::expression("sign(sin(x)+sin(sqrt(2)*x))").unwrap();
        for i in 0..500 {
            let x = -20.0 + 0.0813 * i as f64;
            assert_eq!(cat.eval(x).unwrap(), ex.eval(x).unwrap());
        }
        assert_eq!(Catalog::from_name("one_minus_ln").unwrap(), Catalog::OneMinusLn);
        assert!(Catalog::from_name("nope").is_err());
    }

    #[test]
    fn sign_breakpoints() {
        let f = ScalarFunction::expression("sign(sin(x))").unwrap();
        let bp = f.breakpoints(0.5, 10.0);
        assert_eq!(bp.len(), 3);
        for (b, k) in bp.iter().zip(1..) {
            assert!((b - k as f64 * PI).abs() < 1e-13);
        }
        let c = ScalarFunction::catalog(Catalog::SignSin);
        assert_eq!(c.breakpoints(0.5, 10.0).len(), 3);
        let shifted = f.shifted(1.0);
        let bp = shifted.breakpoints(0.0, 3.0);
        assert_eq!(bp.len(), 1);
        assert!((bp[0] - (PI - 1.0)).abs() < 1e-13);
        let reflected = f.reflected();
        let bp = reflected.breakpoints(-4.0, -1.0);
        assert!((bp[0] + PI).abs() < 1e-13);
    }

    #[test]
    fn parse_spec_variants() {
        assert!(ScalarFunction::parse_spec("catalog:sin").is_ok());
        assert!(ScalarFunction::parse_spec("catalog:bogus").is_err());
        assert_eq!(ScalarFunction::parse_spec(" x*2 ").unwrap().eval(2.0).unwrap(), 4.0);
    }
}
