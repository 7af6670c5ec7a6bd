//! Points, operators and their certification.
//!
//! A general single-valued operator is anything implementing [`Operator`]; the
//! analytic families used throughout the crate are all [`LinearOperator`]s of
//! the form `F(x) = gain * matrix * x`.
//!
//! Negative comonotonicity with modulus `rho` means
//!
//! ```text
//! <F(x) - F(y), x - y> >= -rho * ||F(x) - F(y)||^2   for all x, y,
//! ```
//!
//! which for a linear map `M` is the same as `I + 2 rho M` being expansive,
//! i.e. `sigma_min(I + 2 rho M) >= 1`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default relative tolerance for [`LinearOperator::certify_comonotone`].
pub const DEFAULT_CERTIFY_TOL: f64 = 1e-9;

/// Reciprocal condition number below which `I + gamma F` counts as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// A point of the ambient space `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(DVector<f64>);

impl Point {
    /// Builds a point, rejecting empty or non-finite input.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("a point needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Point(DVector::from_vec(coords)))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(DVector::zeros(dim))
    }

    /// Unit vector along coordinate `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[axis] = 1.0;
        Point(v)
    }

    /// Wraps a vector without validation. Iterates of diverging runs pass
    /// through here, so finiteness is the caller's business.
    pub fn from_vector(v: DVector<f64>) -> Self {
        Point(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn distance_squared(&self, other: &Point) -> f64 {
        (&self.0 - &other.0).norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, found: self.dim() });
        }
        Ok(())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

// Arithmetic panics on mismatched dimensions, like the underlying vectors.
impl Sub for &Point {
    type Output = Point;
    fn sub(self, rhs: &Point) -> Point {
        Point(&self.0 - &rhs.0)
    }
}

impl Add for &Point {
    type Output = Point;
    fn add(self, rhs: &Point) -> Point {
        Point(&self.0 + &rhs.0)
    }
}

impl Mul<f64> for &Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point(&self.0 * rhs)
    }
}

impl Neg for &Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point(-&self.0)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(deserializer)?;
        Point::new(coords).map_err(serde::de::Error::custom)
    }
}

/// A single-valued operator `F: R^d -> R^d`.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &Point) -> Result<Point>;

    /// Jacobian at `x`. The default uses central finite differences.
    fn jacobian(&self, x: &Point) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(self, x)
    }

    /// Solves `y + gamma * F(y) = x` for `y`.
    fn resolvent(&self, gamma: f64, x: &Point) -> Result<Point> {
        newton_resolvent(self, gamma, x, &NewtonOptions::default())
    }

    /// The linear representation, when there is one.
    fn as_linear(&self) -> Option<&LinearOperator> {
        None
    }
}

fn finite_difference_jacobian<O: Operator + ?Sized>(op: &O, x: &Point) -> Result<DMatrix<f64>> {
    let d = op.dim();
    x.check_dim(d)?;
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = 1e-6 * x.as_vector()[j].abs().max(1.0);
        let mut plus = x.as_vector().clone();
        let mut minus = x.as_vector().clone();
        plus[j] += h;
        minus[j] -= h;
        let fp = op.apply(&Point(plus))?;
        let fm = op.apply(&Point(minus))?;
        let col = (fp.0 - fm.0) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Settings for the damped Newton solve behind [`Operator::resolvent`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 100 }
    }
}

/// Damped Newton on `h(y) = y + gamma F(y) - x = 0`, started at `y = x`.
pub fn newton_resolvent<O: Operator + ?Sized>(
    op: &O,
    gamma: f64,
    x: &Point,
    opts: &NewtonOptions,
) -> Result<Point> {
    check_positive("gamma", gamma)?;
    x.check_dim(op.dim())?;
    let d = op.dim();
    let scale = x.norm().max(1.0);
    let residual = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let fy = op.apply(&Point(y.clone()))?;
        Ok(y + fy.0 * gamma - &x.0)
    };

    let mut y = x.0.clone();
    let mut h = residual(&y)?;
    let mut h_norm = h.norm();
    for _ in 0..opts.max_iter {
        if h_norm <= opts.tol * scale {
            return Ok(Point(y));
        }
        let jac = DMatrix::identity(d, d) + op.jacobian(&Point(y.clone()))? * gamma;
        let rcond = reciprocal_condition(&jac);
        if rcond < SINGULAR_RCOND {
            return Err(Error::SingularResolvent { gamma, rcond, step: None });
        }
        let step = jac
            .lu()
            .solve(&(-&h))
            .ok_or(Error::SingularResolvent { gamma, rcond, step: None })?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &y + &step * t;
            let h_trial = residual(&trial)?;
            let n_trial = h_trial.norm();
            if n_trial.is_finite() && n_trial <= (1.0 - 1e-4 * t) * h_norm {
                y = trial;
                h = h_trial;
                h_norm = n_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if h_norm <= opts.tol * scale {
        return Ok(Point(y));
    }
    Err(Error::ResolventNotConverged { iterations: opts.max_iter, residual: h_norm })
}

/// A general operator given by an evaluation callback.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F> Operator for FnOperator<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        x.check_dim(self.dim)?;
        let y = (self.f)(&x.0);
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: y.len() });
        }
        Ok(Point(y))
    }
}

/// Which constructor produced a linear operator. Carried into JSON as `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Linear,
    Identity,
    Scaling,
    Rotation,
    PpWorstCase,
    NegScaling,
}

impl OperatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Linear => "linear",
            OperatorKind::Identity => "identity",
            OperatorKind::Scaling => "scaling",
            OperatorKind::Rotation => "rotation",
            OperatorKind::PpWorstCase => "pp-worst-case",
            OperatorKind::NegScaling => "neg-scaling",
        }
    }
}

/// `F(x) = gain * matrix * x` with a square, finite matrix and `gain > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<f64>,
    gain: f64,
    kind: OperatorKind,
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<f64>, gain: f64) -> Result<Self> {
        Self::with_kind(matrix, gain, OperatorKind::Linear)
    }

    pub fn with_kind(matrix: DMatrix<f64>, gain: f64, kind: OperatorKind) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidParameter(format!(
                "operator matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidParameter("operator dimension must be at least 1".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator matrix"));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidParameter(format!("gain must be positive, got {gain}")));
        }
        Ok(LinearOperator { matrix, gain, kind })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::with_kind(DMatrix::identity(dim, dim), 1.0, OperatorKind::Identity)
    }

    /// `F(x) = l * x`, the monotone operator that breaks explicit methods with
    /// an extrapolation step above `1/l`.
    pub fn scaling(l: f64, dim: usize) -> Result<Self> {
        Self::with_kind(DMatrix::identity(dim, dim), l, OperatorKind::Scaling)
    }

    /// `F(x) = alpha * A(theta) x` with `A(theta)` the planar rotation.
    pub fn scaled_rotation(theta: f64, alpha: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::NonFinite("rotation angle"));
        }
        let (s, c) = theta.sin_cos();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        Self::with_kind(m, alpha, OperatorKind::Rotation)
    }

    /// The scaled rotation that is worst case for the proximal point method
    /// with stepsize `gamma` after `n + 1` steps.
    ///
    /// `alpha = 1 / sqrt(n gamma (gamma - 2 rho))` and `cos(theta) = -rho * alpha`,
    /// so the operator is exactly `rho`-negative comonotone (the defining
    /// inequality holds with equality).
    pub fn pp_worst_case(rho: f64, gamma: f64, n: usize) -> Result<Self> {
        check_positive("rho", rho)?;
        check_positive("gamma", gamma)?;
        if gamma <= 2.0 * rho {
            return Err(Error::Regime(format!(
                "gamma > 2*rho is required (gamma = {gamma}, rho = {rho})"
            )));
        }
        let min_n = pp_worst_case_min_n(rho, gamma);
        if (n as f64) < min_n || n == 0 {
            return Err(Error::Regime(format!(
                "N >= max(rho^2/(gamma*(gamma-2*rho)), 1) = {min_n} is required (N = {n})"
            )));
        }
        let alpha = 1.0 / (n as f64 * gamma * (gamma - 2.0 * rho)).sqrt();
        let cos_theta = (-rho * alpha).max(-1.0);
        let theta = cos_theta.acos();
        let mut op = Self::scaled_rotation(theta, alpha)?;
        op.kind = OperatorKind::PpWorstCase;
        Ok(op)
    }

    /// `F(x) = -x / rho` in dimension `dim`.
    pub fn negative_scaling(rho: f64, dim: usize) -> Result<Self> {
        check_positive("rho", rho)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        let m = DMatrix::from_diagonal_element(dim, dim, -1.0 / rho);
        Self::with_kind(m, 1.0, OperatorKind::NegScaling)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// `gain * matrix`.
    pub fn effective_matrix(&self) -> DMatrix<f64> {
        &self.matrix * self.gain
    }

    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        x.check_dim(self.dim())?;
        Ok(Point((&self.matrix * &x.0) * self.gain))
    }

    /// Spectral norm of `gain * matrix`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.effective_matrix()
            .singular_values()
            .iter()
            .fold(0.0_f64, |m, &s| m.max(s))
    }

    /// Complex eigenvalues of `gain * matrix`.
    pub fn spectrum(&self) -> Result<Vec<Complex<f64>>> {
        let schur = Schur::try_new(self.effective_matrix(), f64::EPSILON, 100_000)
            .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
        let eig = schur.complex_eigenvalues();
        if eig.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
            return Err(Error::Eigen("non-finite eigenvalue".into()));
        }
        Ok(eig.iter().copied().collect())
    }

    /// Checks `rho`-negative comonotonicity.
    ///
    /// Accepts iff `lambda_min(sym(F) + rho F^T F) >= -tol * (L + rho L^2)`,
    /// the quadratic-form statement of the defining inequality. For `rho > 0`
    /// this is the same as `sigma_min(I + 2 rho F) >= 1`, which in turn gives
    /// `|1 + 2 rho lambda| >= 1` on the spectrum; the spectral condition alone
    /// is sufficient only for normal matrices.
    pub fn certify_comonotone(&self, rho: f64, tol: f64) -> Result<(bool, OperatorCertificate)> {
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
        }
        let m = self.effective_matrix();
        let d = self.dim();
        let spectrum = self.spectrum()?;
        let lipschitz = self.lipschitz_constant();
        let expansion = (DMatrix::identity(d, d) + &m * (2.0 * rho))
            .singular_values()
            .iter()
            .fold(f64::INFINITY, |a, &s| a.min(s));
        let certified = comonotone_margin(&m, rho) >= -tol * (lipschitz + rho * lipschitz * lipschitz);
        let cert = OperatorCertificate {
            rho,
            tightest_rho: tightest_rho(&m, lipschitz),
            spectral_rho: spectral_rho(&spectrum),
            lipschitz,
            min_expansion: expansion,
            spectrum,
        };
        Ok((certified, cert))
    }

    /// Solves `y + gamma F(y) = x` exactly.
    pub fn resolvent(&self, gamma: f64, x: &Point) -> Result<Point> {
        check_positive("gamma", gamma)?;
        x.check_dim(self.dim())?;
        let d = self.dim();
        let t = DMatrix::identity(d, d) + self.effective_matrix() * gamma;
        let rcond = reciprocal_condition(&t);
        if rcond < SINGULAR_RCOND {
            return Err(Error::SingularResolvent { gamma, rcond, step: None });
        }
        t.lu()
            .solve(&x.0)
            .map(Point)
            .ok_or(Error::SingularResolvent { gamma, rcond, step: None })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Operator for LinearOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        self.evaluate(x)
    }

    fn jacobian(&self, x: &Point) -> Result<DMatrix<f64>> {
        x.check_dim(self.dim())?;
        Ok(self.effective_matrix())
    }

    fn resolvent(&self, gamma: f64, x: &Point) -> Result<Point> {
        LinearOperator::resolvent(self, gamma, x)
    }

    fn as_linear(&self) -> Option<&LinearOperator> {
        Some(self)
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorRecord {
    dim: usize,
    matrix: Vec<Vec<f64>>,
    gain: f64,
    kind: OperatorKind,
}

impl Serialize for LinearOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.dim())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect();
        OperatorRecord { dim: self.dim(), matrix: rows, gain: self.gain, kind: self.kind }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = OperatorRecord::deserialize(deserializer)?;
        if rec.matrix.len() != rec.dim || rec.matrix.iter().any(|r| r.len() != rec.dim) {
            return Err(D::Error::custom(format!("matrix must be {0}x{0}", rec.dim)));
        }
        let flat: Vec<f64> = rec.matrix.into_iter().flatten().collect();
        let m = DMatrix::from_row_slice(rec.dim, rec.dim, &flat);
        LinearOperator::with_kind(m, rec.gain, rec.kind).map_err(D::Error::custom)
    }
}

/// Result of [`LinearOperator::certify_comonotone`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCertificate {
    /// The modulus that was tested.
    pub rho: f64,
    /// Smallest modulus the operator satisfies; infinite when none does.
    #[serde(with = "infinite_as_null")]
    pub tightest_rho: f64,
    /// `max(0, max -Re(1/lambda))` over the spectrum.
    pub spectral_rho: f64,
    pub lipschitz: f64,
    /// `sigma_min(I + 2 rho F)`.
    pub min_expansion: f64,
    #[serde(with = "complex_pairs")]
    pub spectrum: Vec<Complex<f64>>,
}

fn spectral_rho(spectrum: &[Complex<f64>]) -> f64 {
    let scale = spectrum.iter().fold(0.0_f64, |m, l| m.max(l.norm()));
    spectrum
        .iter()
        .filter(|l| l.norm() > 1e-14 * scale.max(1e-300))
        .map(|l| -l.re / l.norm_sqr())
        .fold(0.0_f64, f64::max)
}

/// `lambda_min(sym(M) + rho M^T M)`.
fn comonotone_margin(m: &DMatrix<f64>, rho: f64) -> f64 {
    let s = (m + m.transpose()) * 0.5 + m.transpose() * m * rho;
    s.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &v| a.min(v))
}

/// Moduli beyond this multiple of `1/L` are reported as infinite.
const RHO_SEARCH_LIMIT: f64 = 1e6;

/// Smallest `rho >= 0` with `sym(M) + rho M^T M` positive semidefinite,
/// found by bisection on the (monotone) acceptance predicate.
fn tightest_rho(m: &DMatrix<f64>, lipschitz: f64) -> f64 {
    if lipschitz == 0.0 {
        return 0.0;
    }
    let accepts = |rho: f64| comonotone_margin(m, rho) >= -1e-14 * (lipschitz + rho * lipschitz * lipschitz);
    if accepts(0.0) {
        return 0.0;
    }
    let limit = RHO_SEARCH_LIMIT / lipschitz;
    let mut hi = 1.0 / lipschitz;
    while !accepts(hi) {
        hi *= 2.0;
        if hi > limit {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if accepts(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `sigma_min / sigma_max`, zero for the zero matrix.
pub(crate) fn reciprocal_condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let min = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    if max == 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

/// Lower limit on `N` for the worst-case rotation to exist.
pub fn pp_worst_case_min_n(rho: f64, gamma: f64) -> f64 {
    (rho * rho / (gamma * (gamma - 2.0 * rho))).max(1.0)
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// The angle `2 pi / 3` of the extragradient/optimistic counter-example.
pub const COUNTEREXAMPLE_ANGLE: f64 = 2.0 * PI / 3.0;

mod complex_pairs {
    use nalgebra::Complex;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| [c.re, c.im]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex<f64>>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
    }
}

pub(crate) mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
