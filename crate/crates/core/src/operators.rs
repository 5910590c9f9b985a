//! Finite-dimensional operator families with a sectorial-type resolvent
//! bound, the contour-integral semigroup they generate, and the
//! Wright-subordinated families `S_γ`, `P_γ`, `R_γ`.
//!
//! An operator is either a dense matrix `A` or a pencil `(A, B)`; the pencil
//! stands for the multivalued operator `A B⁻¹`, whose resolvent is
//! `B (λB − A)⁻¹`. Condition (P) asks for
//!
//! ```text
//! Ψ = {λ : Re λ ≥ −c(|Im λ| + 1)} ⊆ ρ(𝒜),   ‖R(λ)‖ ≤ M (1 + |λ|)^{−β} on Ψ,
//! ```
//!
//! and the semigroup is `T(t) = 1/(2πi) ∫_Γ e^{λt} R(λ) dλ` along the
//! boundary `Γ: λ(η) = −c(|η| + 1) + iη`. The inputs are real, so
//! `R(λ̄) = conj R(λ)` and only the upper half of the contour is integrated:
//! `T(t) = (1/π) Im ∫_0^∞ e^{λt} R(λ) (−c + i) dη`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::quad::{integrate_vec, kronrod_nodes, QuadConfig, QuadError};
use crate::specfun::{wright_cutoff, wright_phi, SpecfunError};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("pencil matrices have different sizes")]
    PencilMismatch,
    #[error("λ = {lambda} is not in the resolvent set")]
    NotInResolventSet { lambda: Complex64 },
    #[error("pencil is not regular: det(λB − A) vanishes at every probe")]
    IrregularPencil,
    #[error("condition (P) constants are not set")]
    MissingParams,
    #[error("{0}")]
    Domain(String),
    #[error("contour tail still changing at truncation {truncation}")]
    TailNotConverged { truncation: f64 },
    #[error("matrix csv: {0}")]
    Parse(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Realization {
    Matrix(DMatrix<f64>),
    Pencil { a: DMatrix<f64>, b: DMatrix<f64> },
}

/// Claimed constants `(c, β, M)` of condition (P).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PParams {
    pub c: f64,
    pub beta: f64,
    pub m: f64,
}

impl PParams {
    pub fn new(c: f64, beta: f64, m: f64) -> Result<Self, OperatorError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(OperatorError::Domain(format!("c must be positive, got {c}")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(OperatorError::Domain(format!("β must lie in (0, 1], got {beta}")));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(OperatorError::Domain(format!("M must be positive, got {m}")));
        }
        Ok(Self { c, beta, m })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorFamily {
    realization: Realization,
    params: Option<PParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolvent {
    pub matrix: CMatrix,
    /// 1-norm condition number of `λI − A` (or `λB − A`).
    pub condition: f64,
}

const SINGULAR_CONDITION: f64 = 1e14;
const PENCIL_SEED: u64 = 0x5eed_0f9e_4c11;

fn check_square(m: &DMatrix<f64>) -> Result<(), OperatorError> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(OperatorError::Shape {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(OperatorError::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl OperatorFamily {
    pub fn matrix(a: DMatrix<f64>) -> Result<Self, OperatorError> {
        check_square(&a)?;
        Ok(Self {
            realization: Realization::Matrix(a),
            params: None,
        })
    }

    /// A regular pencil `(A, B)`; regularity is probed at three seeded random
    /// points.
    pub fn pencil(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, OperatorError> {
        check_square(&a)?;
        check_square(&b)?;
        if a.shape() != b.shape() {
            return Err(OperatorError::PencilMismatch);
        }
        let op = Self {
            realization: Realization::Pencil { a, b },
            params: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(PENCIL_SEED);
        let regular = (0..3).any(|_| {
            let lambda = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let k = op.shifted(lambda);
            let scale = norm1(&k).max(1e-300).powi(k.nrows() as i32);
            k.determinant().norm() > 1e-12 * scale
        });
        if !regular {
            return Err(OperatorError::IrregularPencil);
        }
        Ok(op)
    }

    pub fn with_params(mut self, params: PParams) -> Self {
        self.params = Some(params);
        self
    }

    pub fn params(&self) -> Option<PParams> {
        self.params
    }

    pub fn realization(&self) -> &Realization {
        &self.realization
    }

    pub fn dim(&self) -> usize {
        match &self.realization {
            Realization::Matrix(a) => a.nrows(),
            Realization::Pencil { a, .. } => a.nrows(),
        }
    }

    fn require_params(&self) -> Result<PParams, OperatorError> {
        self.params.ok_or(OperatorError::MissingParams)
    }

    /// `λI − A` or `λB − A`.
    fn shifted(&self, lambda: Complex64) -> CMatrix {
        match &self.realization {
            Realization::Matrix(a) => {
                let n = a.nrows();
                CMatrix::from_fn(n, n, |i, j| {
                    let d = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
                    d - a[(i, j)]
                })
            }
            Realization::Pencil { a, b } => {
                CMatrix::from_fn(a.nrows(), a.ncols(), |i, j| lambda * b[(i, j)] - a[(i, j)])
            }
        }
    }

    pub fn resolvent(&self, lambda: Complex64) -> Result<Resolvent, OperatorError> {
        let k = self.shifted(lambda);
        let inv = k
            .clone()
            .lu()
            .try_inverse()
            .ok_or(OperatorError::NotInResolventSet { lambda })?;
        let condition = norm1(&k) * norm1(&inv);
        if !condition.is_finite() || condition > SINGULAR_CONDITION {
            return Err(OperatorError::NotInResolventSet { lambda });
        }
        let matrix = match &self.realization {
            Realization::Matrix(_) => inv,
            Realization::Pencil { b, .. } => complexify(b) * inv,
        };
        Ok(Resolvent { matrix, condition })
    }

    /// Derives `(c, β = 1, M)` for a Hurwitz-stable matrix from its spectrum:
    /// `c` is half the largest admissible value and `M` is the sampled
    /// worst case of `‖R(λ)‖(1 + |λ|)` inflated by 25%.
    pub fn estimate_params(&self) -> Result<PParams, OperatorError> {
        let Realization::Matrix(a) = &self.realization else {
            return Err(OperatorError::Domain(
                "parameter estimation needs a matrix realization".into(),
            ));
        };
        let mut c = f64::INFINITY;
        for mu in a.complex_eigenvalues().iter() {
            if mu.re >= 0.0 {
                return Err(OperatorError::Domain(format!(
                    "eigenvalue {mu} is not in the open left half-plane"
                )));
            }
            c = c.min(-mu.re / (mu.im.abs() + 1.0));
        }
        let c = 0.5 * c.min(2.0);
        let probe = self.clone().with_params(PParams { c, beta: 1.0, m: 1.0 });
        let report = verify_condition_p(&probe, 16)?;
        if report.singular_at.is_some() {
            return Err(OperatorError::Domain("resolvent singular on the sampled region".into()));
        }
        PParams::new(c, 1.0, 1.25 * report.worst_ratio)
    }
}

/// Spectral norm by power iteration on the Gram matrix.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    let gram = m.adjoint() * m;
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
    let mut sigma2 = 0.0;
    for _ in 0..10_000 {
        let w = &gram * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw / v.norm();
        v = w / Complex64::new(nw, 0.0);
        if (next - sigma2).abs() <= 1e-10 * next {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.sqrt()
}

pub fn spectral_norm_real(m: &DMatrix<f64>) -> f64 {
    spectral_norm(&complexify(m))
}

/// Outcome of sampling condition (P).
#[derive(Debug, Clone, PartialEq)]
pub struct PReport {
    pub passed: bool,
    /// Largest `‖R(λ)‖(1 + |λ|)^β / M` seen.
    pub worst_ratio: f64,
    pub worst_lambda: Complex64,
    pub samples: usize,
    /// First sampled point where the resolvent does not exist.
    pub singular_at: Option<Complex64>,
}

const P_RADIUS_MIN: f64 = 1e-3;
const P_RADIUS_MAX: f64 = 1e4;

/// Points on the boundary of `Ψ` and on rays through its interior.
pub fn condition_p_samples(c: f64, per_decade: usize) -> Vec<Complex64> {
    let per_decade = per_decade.max(1);
    let decades = (P_RADIUS_MAX / P_RADIUS_MIN).log10().round() as usize;
    let radii: Vec<f64> = (0..=decades * per_decade)
        .map(|k| P_RADIUS_MIN * 10f64.powf(k as f64 / per_decade as f64))
        .collect();
    let mut pts = vec![Complex64::new(0.0, 0.0), Complex64::new(-c, 0.0)];
    for &eta in &radii {
        for e in [eta, -eta] {
            let lambda = Complex64::new(-c * (e.abs() + 1.0), e);
            if lambda.norm() <= P_RADIUS_MAX {
                pts.push(lambda);
            }
        }
    }
    // Direction of the boundary asymptote.
    let theta_max = 0.5 * PI + c.atan();
    for frac in [0.0, 0.45, -0.45, 0.9, -0.9] {
        let theta = frac * theta_max;
        for &r in &radii {
            pts.push(Complex64::from_polar(r, theta));
        }
    }
    pts
}

pub fn verify_condition_p(op: &OperatorFamily, per_decade: usize) -> Result<PReport, OperatorError> {
    let p = op.require_params()?;
    let pts = condition_p_samples(p.c, per_decade);
    let ratios: Vec<Result<f64, Complex64>> = pts
        .par_iter()
        .map(|&lambda| match op.resolvent(lambda) {
            Ok(r) => Ok(spectral_norm(&r.matrix) * (1.0 + lambda.norm()).powf(p.beta) / p.m),
            Err(_) => Err(lambda),
        })
        .collect();
    let mut report = PReport {
        passed: true,
        worst_ratio: 0.0,
        worst_lambda: pts[0],
        samples: pts.len(),
        singular_at: None,
    };
    for (lambda, r) in pts.iter().zip(ratios) {
        match r {
            Ok(ratio) if ratio > report.worst_ratio => {
                report.worst_ratio = ratio;
                report.worst_lambda = *lambda;
            }
            Ok(_) => {}
            Err(l) => {
                if report.singular_at.is_none() {
                    report.singular_at = Some(l);
                }
            }
        }
    }
    report.passed = report.singular_at.is_none() && report.worst_ratio <= 1.0 + 1e-12;
    if report.singular_at.is_some() {
        report.worst_ratio = f64::INFINITY;
    }
    Ok(report)
}

/// One evaluation of the contour semigroup.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupSample {
    pub t: f64,
    pub matrix: DMatrix<f64>,
    /// Final truncation `H` of `η ∈ [0, H]`.
    pub truncation: f64,
    pub evaluations: usize,
    pub error_estimate: f64,
}

const TAIL_TOL: f64 = 1e-9;

/// Writes `(1/π) Im(e^{λt} R(λ)(−c + i))` at contour parameter `η ≥ 0`.
fn contour_integrand(op: &OperatorFamily, c: f64, t: f64, eta: f64, out: &mut [f64]) {
    let lambda = Complex64::new(-c * (eta + 1.0), eta);
    let factor = (lambda * t).exp() * Complex64::new(-c, 1.0) / PI;
    match op.resolvent(lambda) {
        Ok(r) => {
            let n = r.matrix.nrows();
            for j in 0..n {
                for i in 0..n {
                    out[i + j * n] = (factor * r.matrix[(i, j)]).im;
                }
            }
        }
        Err(_) => out.fill(f64::NAN),
    }
}

fn octave_breaks(lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo];
    let mut x = if lo <= 0.0 { 1.0 } else { 2.0 * lo };
    while x < hi {
        pts.push(x);
        x *= 2.0;
    }
    pts.push(hi);
    pts
}

/// `T(t)` by adaptive quadrature along the boundary of `Ψ`, doubling the
/// truncation `H` until the added piece is below `1e-9`. `h0` defaults to
/// `max(8, 4/(ct))`.
pub fn semigroup_contour(op: &OperatorFamily, t: f64, h0: Option<f64>) -> Result<SemigroupSample, OperatorError> {
    let p = op.require_params()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(OperatorError::Domain(format!("t must be positive, got {t}")));
    }
    let n = op.dim();
    let dim = n * n;
    let f = |eta: f64, out: &mut [f64]| contour_integrand(op, p.c, t, eta, out);
    let cfg = QuadConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 4000,
        divergence_cap: f64::INFINITY,
    };
    let mut h = h0.unwrap_or_else(|| (4.0 / (p.c * t)).max(8.0));
    let first = integrate_vec(&f, dim, &octave_breaks(0.0, h), &cfg)?;
    let mut acc = first.value;
    let mut error = first.error;
    let mut evaluations = first.evaluations;
    for _ in 0..64 {
        let piece = integrate_vec(&f, dim, &octave_breaks(h, 2.0 * h), &cfg)?;
        evaluations += piece.evaluations;
        error += piece.error;
        let change = piece.value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, v) in acc.iter_mut().zip(&piece.value) {
            *a += v;
        }
        h *= 2.0;
        if change < TAIL_TOL {
            return Ok(SemigroupSample {
                t,
                matrix: DMatrix::from_column_slice(n, n, &acc),
                truncation: h,
                evaluations,
                error_estimate: error + change,
            });
        }
    }
    Err(OperatorError::TailNotConverged { truncation: h })
}

/// The contour rule frozen on a fixed set of Kronrod nodes, so that `T(τ)`
/// for many `τ` in `[tau_min, tau_max]` costs one weighted sum per call.
#[derive(Debug, Clone)]
pub struct ContourSemigroup {
    n: usize,
    tau_min: f64,
    tau_max: f64,
    re_lambda: Vec<f64>,
    im_lambda: Vec<f64>,
    /// Per node, `w (−c + i) R(λ) / π` in column-major order.
    weighted: Vec<Complex64>,
}

// Nodes where Re(λτ) is below this contribute nothing.
const CONTOUR_DAMPING: f64 = 45.0;

impl ContourSemigroup {
    pub fn new(op: &OperatorFamily, tau_min: f64, tau_max: f64) -> Result<Self, OperatorError> {
        let p = op.require_params()?;
        if !(tau_min > 0.0 && tau_max >= tau_min && tau_max.is_finite()) {
            return Err(OperatorError::Domain(format!("bad time range [{tau_min}, {tau_max}]")));
        }
        let c = p.c;
        let h = CONTOUR_DAMPING / (c * tau_min);
        let mut pieces = Vec::new();
        for k in 0..8 {
            pieces.push((k as f64 / 8.0, (k + 1) as f64 / 8.0));
        }
        let mut lo = 1.0;
        while lo < h {
            let hi = 2.0 * lo;
            // Phase swept by e^{iητ} across the octave, capped where damping wins.
            let phase = (lo * tau_max).min(CONTOUR_DAMPING / c);
            let m = ((phase / 8.0).ceil() as usize).max(4);
            let w = (hi - lo) / m as f64;
            for k in 0..m {
                pieces.push((lo + k as f64 * w, lo + (k + 1) as f64 * w));
            }
            lo = hi;
        }
        let mut nodes: Vec<(f64, f64)> = pieces.iter().flat_map(|&(a, b)| kronrod_nodes(a, b)).collect();
        nodes.sort_by(|x, y| x.0.total_cmp(&y.0));
        let n = op.dim();
        let mats: Vec<Result<Vec<Complex64>, OperatorError>> = nodes
            .par_iter()
            .map(|&(eta, w)| {
                let lambda = Complex64::new(-c * (eta + 1.0), eta);
                let r = op.resolvent(lambda)?;
                let f = Complex64::new(-c, 1.0) * (w / PI);
                Ok(r.matrix.iter().map(|v| f * v).collect())
            })
            .collect();
        let mut weighted = Vec::with_capacity(nodes.len() * n * n);
        for m in mats {
            weighted.extend(m?);
        }
        Ok(Self {
            n,
            tau_min,
            tau_max,
            re_lambda: nodes.iter().map(|&(eta, _)| -c * (eta + 1.0)).collect(),
            im_lambda: nodes.iter().map(|&(eta, _)| eta).collect(),
            weighted,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn range(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }

    /// `T(τ)` written column-major into `out`; `τ` below the range is
    /// clamped to `tau_min`.
    pub fn eval_into(&self, tau: f64, out: &mut [f64]) {
        let tau = tau.max(self.tau_min);
        let nn = self.n * self.n;
        out.fill(0.0);
        for (k, (&re, &im)) in self.re_lambda.iter().zip(&self.im_lambda).enumerate() {
            if re * tau < -CONTOUR_DAMPING {
                // Nodes are sorted by η, so every later node is damped too.
                break;
            }
            let e = Complex64::from_polar((re * tau).exp(), im * tau);
            for (o, m) in out.iter_mut().zip(&self.weighted[k * nn..(k + 1) * nn]) {
                *o += e.re * m.im + e.im * m.re;
            }
        }
    }

    pub fn at(&self, tau: f64) -> DMatrix<f64> {
        let mut out = vec![0.0; self.n * self.n];
        self.eval_into(tau, &mut out);
        DMatrix::from_column_slice(self.n, self.n, &out)
    }
}

/// Smallest `s` resolved by the subordination integral.
const SUBORDINATION_S_MIN: f64 = 1e-9;

/// `T_{γ,ν}(t) = t^{γν} ∫_0^∞ s^ν Φ_γ(s) T(s t^γ) ds` and the families
/// derived from it, for `t` in a fixed range.
#[derive(Debug, Clone)]
pub struct Subordinated {
    gamma: f64,
    beta: f64,
    t_range: (f64, f64),
    density: WrightDensity,
    contour: ContourSemigroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    S,
    P,
}

impl Subordinated {
    pub fn new(op: &OperatorFamily, gamma: f64, t_min: f64, t_max: f64) -> Result<Self, OperatorError> {
        let p = op.require_params()?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(OperatorError::Domain(format!("γ must lie in (0, 1), got {gamma}")));
        }
        if !(t_min > 0.0 && t_max >= t_min && t_max.is_finite()) {
            return Err(OperatorError::Domain(format!("bad time range [{t_min}, {t_max}]")));
        }
        let tau_min = SUBORDINATION_S_MIN * t_min.powf(gamma);
        let tau_max = wright_cutoff(gamma) * t_max.powf(gamma);
        Ok(Self {
            gamma,
            beta: p.beta,
            t_range: (t_min, t_max),
            density: WrightDensity::new(gamma),
            contour: ContourSemigroup::new(op, tau_min, tau_max)?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.contour.dim()
    }

    fn check_t(&self, t: f64) -> Result<(), OperatorError> {
        let (lo, hi) = self.t_range;
        if !(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12)) {
            return Err(OperatorError::Domain(format!("t = {t} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn t_gamma_nu(&self, nu: f64, t: f64) -> Result<DMatrix<f64>, OperatorError> {
        self.check_t(t)?;
        if !(nu > -self.beta) {
            return Err(OperatorError::Domain(format!(
                "ν must exceed −β = {}, got {nu}",
                -self.beta
            )));
        }
        subordinate_with(&self.density, nu, t, self.contour.dim(), |tau, out| {
            self.contour.eval_into(tau, out)
        })
    }

    pub fn s(&self, t: f64) -> Result<DMatrix<f64>, OperatorError> {
        self.t_gamma_nu(0.0, t)
    }

    pub fn p(&self, t: f64) -> Result<DMatrix<f64>, OperatorError> {
        Ok(self.t_gamma_nu(1.0, t)? * (self.gamma / t.powf(self.gamma)))
    }

    pub fn r(&self, t: f64) -> Result<DMatrix<f64>, OperatorError> {
        Ok(self.p(t)? * t.powf(self.gamma - 1.0))
    }

    pub fn family(&self, which: Family, t: f64) -> Result<DMatrix<f64>, OperatorError> {
        match which {
            Family::S => self.s(t),
            Family::P => self.p(t),
        }
    }
}

/// `t^{γν} ∫_0^∞ s^ν Φ_γ(s) T(s t^γ) ds` for any `n × n` family `T`, given
/// as a closure writing `T(τ)` column-major.
pub fn subordinate_fn<T>(gamma: f64, nu: f64, t: f64, n: usize, semigroup: T) -> Result<DMatrix<f64>, OperatorError>
where
    T: Fn(f64, &mut [f64]),
{
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(OperatorError::Domain(format!("γ must lie in (0, 1), got {gamma}")));
    }
    subordinate_with(&WrightDensity::new(gamma), nu, t, n, semigroup)
}

/// `Φ_γ` with memoized values; the subordination nodes repeat across `t`.
#[derive(Debug)]
struct WrightDensity {
    gamma: f64,
    memo: Mutex<HashMap<u64, f64>>,
}

impl Clone for WrightDensity {
    fn clone(&self) -> Self {
        Self::new(self.gamma)
    }
}

impl WrightDensity {
    fn new(gamma: f64) -> Self {
        Self {
            gamma,
            memo: Mutex::new(HashMap::new()),
        }
    }

    fn at(&self, s: f64) -> f64 {
        if let Some(v) = self.memo.lock().unwrap().get(&s.to_bits()) {
            return *v;
        }
        let v = wright_phi(self.gamma, s).unwrap_or(f64::NAN);
        self.memo.lock().unwrap().insert(s.to_bits(), v);
        v
    }
}

fn subordinate_with<T>(
    density: &WrightDensity,
    nu: f64,
    t: f64,
    n: usize,
    semigroup: T,
) -> Result<DMatrix<f64>, OperatorError>
where
    T: Fn(f64, &mut [f64]),
{
    let gamma = density.gamma;
    if !(nu > -1.0) {
        return Err(OperatorError::Domain(format!("ν must exceed −1, got {nu}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(OperatorError::Domain(format!("t must be positive, got {t}")));
    }
    let tg = t.powf(gamma);
    let f = |s: f64, out: &mut [f64]| {
        let phi = density.at(s);
        let w = if nu == 0.0 { phi } else { s.powf(nu) * phi };
        if w == 0.0 {
            out.fill(0.0);
            return;
        }
        semigroup(s * tg, out);
        for o in out.iter_mut() {
            *o *= w;
        }
    };
    let mut pts = vec![0.0];
    let mut x = SUBORDINATION_S_MIN;
    while x < 0.125 {
        pts.push(x);
        x *= 10.0;
    }
    let cutoff = wright_cutoff(gamma);
    let mut x = 0.125;
    while x < cutoff {
        pts.push(x);
        x *= 2.0;
    }
    pts.push(cutoff);
    let cfg = QuadConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 4000,
        divergence_cap: f64::INFINITY,
    };
    let r = integrate_vec(&f, n * n, &pts, &cfg)?;
    Ok(DMatrix::from_column_slice(n, n, &r.value) * tg.powf(nu))
}

/// One-off `T_{γ,ν}(t)`.
pub fn subordinate(op: &OperatorFamily, gamma: f64, nu: f64, t: f64) -> Result<DMatrix<f64>, OperatorError> {
    Subordinated::new(op, gamma, t, t)?.t_gamma_nu(nu, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayRegime {
    /// All grid points in `(0, 1]`: growth at most `t^{γ(β−1)}`.
    Small,
    /// All grid points in `[1, ∞)`: decay at least `t^{−γ}` (S) or `t^{−2γ}` (P).
    Large,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub norms: Vec<f64>,
    pub regime: DecayRegime,
    /// Exponent the slope is compared with.
    pub reference: f64,
    pub slack: f64,
    pub passes: bool,
}

pub const DECAY_SLACK: f64 = 0.1;

/// Least-squares slope of `log ‖F(t)‖` against `log t` with a one-sided
/// comparison to the expected power law.
pub fn decay_fit(op: &OperatorFamily, gamma: f64, which: Family, t_grid: &[f64]) -> Result<DecayFit, OperatorError> {
    let p = op.require_params()?;
    if t_grid.len() < 2 {
        return Err(OperatorError::Domain("need at least two grid points".into()));
    }
    let lo = t_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().copied().fold(0.0, f64::max);
    let regime = if hi <= 1.0 {
        DecayRegime::Small
    } else if lo >= 1.0 {
        DecayRegime::Large
    } else {
        return Err(OperatorError::Domain(
            "grid must lie entirely in (0, 1] or in [1, ∞)".into(),
        ));
    };
    let family = Subordinated::new(op, gamma, lo, hi)?;
    let norms = t_grid
        .iter()
        .map(|&t| family.family(which, t).map(|m| spectral_norm_real(&m)))
        .collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = norms.iter().map(|v| v.max(1e-300).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(OperatorError::Domain("grid points must differ".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (reference, passes) = match regime {
        DecayRegime::Small => {
            let r = gamma * (p.beta - 1.0);
            (r, slope >= r - DECAY_SLACK)
        }
        DecayRegime::Large => {
            let r = match which {
                Family::S => -gamma,
                Family::P => -2.0 * gamma,
            };
            (r, slope <= r + DECAY_SLACK)
        }
    };
    Ok(DecayFit {
        slope,
        intercept,
        norms,
        regime,
        reference,
        slack: DECAY_SLACK,
        passes,
    })
}

/// Parses a row-major matrix, one row per line, comma separated. Lines
/// starting with `#` are ignored.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, OperatorError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| OperatorError::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| OperatorError::Parse(format!("row {}: bad entry {f:?}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(OperatorError::Parse(format!(
                    "row {} has {} entries, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(OperatorError::Parse("no rows".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}
