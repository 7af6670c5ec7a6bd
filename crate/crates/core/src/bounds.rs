//! Closed-form rates, lower bounds, potentials, regime checks and divergence
//! certificates, and the comparison of traces against them.
//!
//! Every bound is proportional to `R^2 = ||x^0 - x*||^2`.
//!
//! | method | kind | value | regime |
//! |---|---|---|---|
//! | PP | best / last | `g R^2 / ((g - 2 rho) N)` | `g > 2 rho`, `N >= 1` |
//! | PP | lower | `R^2 / (g (g - 2 rho) N (1 + 1/N)^(N+1))` | also `N >= max(rho^2 / (g (g - 2 rho)), 1)` |
//! | EG | best | `R^2 / (g1 g2 (1 - L^2 g1^2) (N + 1))` | `2 rho < g1 < 1/L`, `0 < g2 <= g1 - 2 rho` |
//! | EG | best, tilde | `R^2 / (g2 (g1 - 2 rho - g2) (N + 1))` | `2 rho < g1 <= 1/L`, `0 < g2 < g1 - 2 rho` |
//! | EG | last | `28 R^2 / (N g^2 + 320 g rho)` | `rho <= 1/(8L)`, `4 rho <= g <= 1/(2L)`, `g1 = g2` |
//! | EG | last, refined | `(1 + 40 g rho L^2) R^2 / (N g^2 (1 - 5 rho/(2g) - L^2 g^2) + 40 g rho)` | as above |
//! | OG | best, tilde | `R^2 / (g1 g2 (1 - L^2 (g1 + g2)^2) (N + 1))` | `2 rho < g1 < 1/L`, `0 < g2 <= min(1/L - g1, g1 - 2 rho)` |
//! | OG | last | `717 R^2 / (N g (g - 3 rho) + 800 g^2)` | `rho <= 5/(62L)`, `4 rho <= g <= 10/(31L)`, `g1 = g2` |
//!
//! Best-iterate bounds control averages: of `||x^k - x^{k-1}||^2` over
//! `k = 1..N` for PP, of `||F(x^k)||^2` over `k = 0..N` for EG, and of
//! `||F(x~^k)||^2` over `k = 0..N` for the tilde variants.

use std::io::Write;

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Point;
use crate::solvers::{fmt_f64, residual_series, Method, StepSizes, Trace};

/// Relative tolerance applied to non-strict regime inequalities, so that
/// boundary values computed in floating point (e.g. `4 * 5/62` against
/// `10/31`) are accepted. Strict inequalities are compared exactly.
pub const REGIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    BestIterate,
    /// Average of `||F(x~^k)||^2`; EG's second best-iterate form.
    BestIterateTilde,
    LastIterate,
    /// EG's last-iterate bound before its constants are rounded.
    LastIterateRefined,
    LowerBound,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::BestIterate => "best-iterate",
            BoundKind::BestIterateTilde => "best-iterate-tilde",
            BoundKind::LastIterate => "last-iterate",
            BoundKind::LastIterateRefined => "last-iterate-refined",
            BoundKind::LowerBound => "lower-bound",
        }
    }

    pub fn is_lower(self) -> bool {
        matches!(self, BoundKind::LowerBound)
    }
}

impl std::str::FromStr for BoundKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "best-iterate" | "best" => BoundKind::BestIterate,
            "best-iterate-tilde" | "best-tilde" => BoundKind::BestIterateTilde,
            "last-iterate" | "last" => BoundKind::LastIterate,
            "last-iterate-refined" | "last-refined" => BoundKind::LastIterateRefined,
            "lower-bound" | "lower" => BoundKind::LowerBound,
            other => return Err(Error::Parse(format!("unknown bound kind '{other}'"))),
        })
    }
}

/// Parameters of one bound. `l` is ignored for PP, which uses `gamma1` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub method: Method,
    pub kind: BoundKind,
    pub rho: f64,
    pub l: f64,
    pub r: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub n: usize,
}

impl BoundSpec {
    /// The bound value, or a regime error naming the violated inequality.
    pub fn evaluate(&self) -> Result<f64> {
        match self.method {
            Method::Pp => pp_bound(self.kind, self.gamma1, self.rho, self.r, self.n),
            Method::Eg => eg_bound(self.kind, self.gamma1, self.gamma2, self.rho, self.l, self.r, self.n),
            Method::Og => og_bound(self.kind, self.gamma1, self.gamma2, self.rho, self.l, self.r, self.n),
        }
    }

    /// Violated inequalities of the regime; empty when in regime.
    pub fn regime_violations(&self) -> Vec<String> {
        let mut c = Conditions::default();
        regime(&mut c, self.method, self.kind, self.gamma1, self.gamma2, self.rho, self.l, self.n);
        c.violations
    }

    /// The formula value regardless of regime. Out of regime the result may
    /// be negative or infinite.
    pub fn formula(&self) -> Result<f64> {
        formula(self.method, self.kind, self.gamma1, self.gamma2, self.rho, self.l, self.r, self.n)
    }
}

/// Collects violated inequalities.
#[derive(Default)]
struct Conditions {
    violations: Vec<String>,
}

impl Conditions {
    fn lt(&mut self, lhs: (&str, f64), rhs: (&str, f64)) {
        if !(lhs.1 < rhs.1) {
            self.violations.push(format!("{} < {} violated ({} vs {})", lhs.0, rhs.0, lhs.1, rhs.1));
        }
    }

    fn le(&mut self, lhs: (&str, f64), rhs: (&str, f64)) {
        let tol = REGIME_TOL * lhs.1.abs().max(rhs.1.abs());
        if !(lhs.1 <= rhs.1 + tol) {
            self.violations.push(format!("{} <= {} violated ({} vs {})", lhs.0, rhs.0, lhs.1, rhs.1));
        }
    }

    fn require(&mut self, ok: bool, msg: &str) {
        if !ok {
            self.violations.push(msg.to_string());
        }
    }

    fn into_result(self) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Regime(self.violations.join("; ")))
        }
    }
}

fn check_inputs(gamma1: f64, gamma2: f64, rho: f64, l: f64, r: f64, needs_l: bool) -> Result<()> {
    let finite_pos = |v: f64| v.is_finite() && v > 0.0;
    if !finite_pos(gamma1) || !finite_pos(gamma2) {
        return Err(Error::InvalidParameter(format!(
            "stepsizes must be positive (gamma1 = {gamma1}, gamma2 = {gamma2})"
        )));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
    }
    if needs_l && !finite_pos(l) {
        return Err(Error::InvalidParameter(format!("L must be positive, got {l}")));
    }
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::InvalidParameter(format!("R must be nonnegative, got {r}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn regime(c: &mut Conditions, method: Method, kind: BoundKind, g1: f64, g2: f64, rho: f64, l: f64, n: usize) {
    let inv_l = 1.0 / l;
    match (method, kind) {
        (Method::Pp, BoundKind::BestIterate | BoundKind::LastIterate) => {
            c.lt(("2*rho", 2.0 * rho), ("gamma", g1));
            c.require(n >= 1, "N >= 1 violated");
        }
        (Method::Pp, BoundKind::LowerBound) => {
            c.lt(("2*rho", 2.0 * rho), ("gamma", g1));
            c.require(rho > 0.0, "rho > 0 violated");
            c.require(n >= 1, "N >= 1 violated");
            if g1 > 2.0 * rho {
                let min_n = rho * rho / (g1 * (g1 - 2.0 * rho));
                c.le(("rho^2/(gamma*(gamma-2*rho))", min_n), ("N", n as f64));
            }
        }
        (Method::Eg, BoundKind::BestIterate) => {
            c.lt(("2*rho", 2.0 * rho), ("gamma1", g1));
            c.lt(("gamma1", g1), ("1/L", inv_l));
            c.le(("gamma2", g2), ("gamma1 - 2*rho", g1 - 2.0 * rho));
        }
        (Method::Eg, BoundKind::BestIterateTilde) => {
            c.lt(("2*rho", 2.0 * rho), ("gamma1", g1));
            c.le(("gamma1", g1), ("1/L", inv_l));
            c.lt(("gamma2", g2), ("gamma1 - 2*rho", g1 - 2.0 * rho));
        }
        (Method::Eg, BoundKind::LastIterate | BoundKind::LastIterateRefined) => {
            c.require(g1 == g2, "gamma1 = gamma2 violated");
            c.le(("rho", rho), ("1/(8L)", inv_l / 8.0));
            c.le(("4*rho", 4.0 * rho), ("gamma", g1));
            c.le(("gamma", g1), ("1/(2L)", inv_l / 2.0));
        }
        (Method::Og, BoundKind::BestIterate | BoundKind::BestIterateTilde) => {
            c.lt(("2*rho", 2.0 * rho), ("gamma1", g1));
            c.lt(("gamma1", g1), ("1/L", inv_l));
            c.le(("gamma2", g2), ("min(1/L - gamma1, gamma1 - 2*rho)", (inv_l - g1).min(g1 - 2.0 * rho)));
        }
        (Method::Og, BoundKind::LastIterate) => {
            c.require(g1 == g2, "gamma1 = gamma2 violated");
            c.le(("rho", rho), ("5/(62L)", 5.0 * inv_l / 62.0));
            c.le(("4*rho", 4.0 * rho), ("gamma", g1));
            c.le(("gamma", g1), ("10/(31L)", 10.0 * inv_l / 31.0));
        }
        (m, k) => c.violations.push(format!("no {} bound for {}", k.as_str(), m.as_str())),
    }
}

#[allow(clippy::too_many_arguments)]
fn formula(method: Method, kind: BoundKind, g1: f64, g2: f64, rho: f64, l: f64, r: f64, n: usize) -> Result<f64> {
    let r2 = r * r;
    let nf = n as f64;
    let l2 = l * l;
    let v = match (method, kind) {
        (Method::Pp, BoundKind::BestIterate | BoundKind::LastIterate) => g1 * r2 / ((g1 - 2.0 * rho) * nf),
        (Method::Pp, BoundKind::LowerBound) => {
            r2 / (g1 * (g1 - 2.0 * rho) * nf * (1.0 + 1.0 / nf).powf(nf + 1.0))
        }
        (Method::Eg, BoundKind::BestIterate) => r2 / (g1 * g2 * (1.0 - l2 * g1 * g1) * (nf + 1.0)),
        (Method::Eg, BoundKind::BestIterateTilde) => r2 / (g2 * (g1 - 2.0 * rho - g2) * (nf + 1.0)),
        (Method::Eg, BoundKind::LastIterate) => 28.0 * r2 / (nf * g1 * g1 + 320.0 * g1 * rho),
        (Method::Eg, BoundKind::LastIterateRefined) => {
            let g = g1;
            (1.0 + 40.0 * g * rho * l2) * r2
                / (nf * g * g * (1.0 - 5.0 * rho / (2.0 * g) - l2 * g * g) + 40.0 * g * rho)
        }
        (Method::Og, BoundKind::BestIterate | BoundKind::BestIterateTilde) => {
            r2 / (g1 * g2 * (1.0 - l2 * (g1 + g2).powi(2)) * (nf + 1.0))
        }
        (Method::Og, BoundKind::LastIterate) => 717.0 * r2 / (nf * g1 * (g1 - 3.0 * rho) + 800.0 * g1 * g1),
        (m, k) => {
            return Err(Error::InvalidParameter(format!("no {} bound for {}", k.as_str(), m.as_str())));
        }
    };
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn bound(method: Method, kind: BoundKind, g1: f64, g2: f64, rho: f64, l: f64, r: f64, n: usize) -> Result<f64> {
    check_inputs(g1, g2, rho, l, r, method.is_explicit())?;
    formula(method, kind, g1, g2, rho, l, r, n)?;
    let mut c = Conditions::default();
    regime(&mut c, method, kind, g1, g2, rho, l, n);
    c.into_result()?;
    formula(method, kind, g1, g2, rho, l, r, n)
}

/// PP rates (best and last iterate share the value) and the worst-case lower bound.
pub fn pp_bound(kind: BoundKind, gamma: f64, rho: f64, r: f64, n: usize) -> Result<f64> {
    bound(Method::Pp, kind, gamma, gamma, rho, 1.0, r, n)
}

pub fn eg_bound(kind: BoundKind, gamma1: f64, gamma2: f64, rho: f64, l: f64, r: f64, n: usize) -> Result<f64> {
    bound(Method::Eg, kind, gamma1, gamma2, rho, l, r, n)
}

/// OG rates. `BestIterate` and `BestIterateTilde` coincide: the average is
/// taken over `||F(x~^k)||^2`, `k = 0..N`.
pub fn og_bound(kind: BoundKind, gamma1: f64, gamma2: f64, rho: f64, l: f64, r: f64, n: usize) -> Result<f64> {
    bound(Method::Og, kind, gamma1, gamma2, rho, l, r, n)
}

/// The smaller of EG's two last-iterate bounds.
pub fn eg_last_iterate_tightest(gamma: f64, rho: f64, l: f64, r: f64, n: usize) -> Result<f64> {
    let coarse = eg_bound(BoundKind::LastIterate, gamma, gamma, rho, l, r, n)?;
    let refined = eg_bound(BoundKind::LastIterateRefined, gamma, gamma, rho, l, r, n)?;
    Ok(coarse.min(refined))
}

/// Absolute plus relative slack for inequality checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Slack {
    fn default() -> Self {
        Slack { abs: 1e-9, rel: 1e-9 }
    }
}

impl Slack {
    /// `lhs <= rhs` up to slack.
    pub fn allows(&self, lhs: f64, rhs: f64) -> bool {
        lhs <= rhs + self.abs + self.rel * lhs.abs().max(rhs.abs())
    }
}

/// Which construction defeats a method in a given regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Counterexample {
    /// `F(x) = -x / rho` stalls or blows up PP for `gamma <= 2 rho`.
    NegativeScaling,
    /// `F(x) = L x` for extrapolation steps above `1/L`.
    Scaling,
    /// `F(x) = L A(2 pi / 3) x` for `rho >= 1/(2L)`.
    Rotation,
}

/// Guarantees that apply to a stepsize choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub method: Method,
    pub gamma1: f64,
    pub gamma2: f64,
    pub rho: f64,
    pub l: Option<f64>,
    /// Bounds whose regime holds.
    pub guarantees: Vec<BoundKind>,
    /// For each bound that does not apply, the violated inequalities.
    pub violations: Vec<(BoundKind, String)>,
    /// Set when a divergence construction exists for these parameters.
    pub counterexample: Option<Counterexample>,
}

impl RegimeReport {
    pub fn has_guarantee(&self) -> bool {
        !self.guarantees.is_empty()
    }
}

/// Lists which bounds apply and which divergence construction does.
///
/// For EG and OG, `F(x) = L x` is monotone and defeats any `gamma1 > 1/L`
/// regardless of `rho`; the rotation applies whenever `rho >= 1/(2L)`.
pub fn stepsize_admissible(method: Method, gamma1: f64, gamma2: f64, rho: f64, l: Option<f64>) -> RegimeReport {
    let kinds: &[BoundKind] = match method {
        Method::Pp => &[BoundKind::BestIterate, BoundKind::LastIterate],
        Method::Eg => &[
            BoundKind::BestIterate,
            BoundKind::BestIterateTilde,
            BoundKind::LastIterate,
            BoundKind::LastIterateRefined,
        ],
        Method::Og => &[BoundKind::BestIterateTilde, BoundKind::LastIterate],
    };
    let lv = l.unwrap_or(f64::NAN);
    let mut guarantees = Vec::new();
    let mut violations = Vec::new();
    for &kind in kinds {
        let mut c = Conditions::default();
        if method.is_explicit() && !(lv.is_finite() && lv > 0.0) {
            c.violations.push("a positive Lipschitz constant L is required".into());
        } else {
            let n = 1;
            regime(&mut c, method, kind, gamma1, gamma2, rho, lv, n);
        }
        if c.violations.is_empty() {
            guarantees.push(kind);
        } else {
            violations.push((kind, c.violations.join("; ")));
        }
    }
    let counterexample = match method {
        Method::Pp if gamma1 <= 2.0 * rho => Some(Counterexample::NegativeScaling),
        Method::Pp => None,
        _ if lv.is_finite() && gamma1 > 1.0 / lv => Some(Counterexample::Scaling),
        _ if lv.is_finite() && rho >= 1.0 / (2.0 * lv) => Some(Counterexample::Rotation),
        _ => None,
    };
    RegimeReport { method, gamma1, gamma2, rho, l, guarantees, violations, counterexample }
}

/// A potential along a trace, with per-step decrease flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSeries {
    pub phi: Vec<f64>,
    /// OG only.
    pub psi: Option<Vec<f64>>,
    /// `non_increasing[k]` is `phi[k+1] <= phi[k]` up to slack.
    pub non_increasing: Vec<bool>,
}

impl PotentialSeries {
    /// True when every step from `from` on is non-increasing.
    pub fn holds_from(&self, from: usize) -> bool {
        self.non_increasing.iter().skip(from).all(|&b| b)
    }

    /// Largest increase `phi[k+1] - phi[k]` over steps `from..`.
    pub fn max_increase_from(&self, from: usize) -> f64 {
        self.phi
            .windows(2)
            .skip(from)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn equal_step_reference(trace: &Trace, method: Method) -> Result<(f64, &Point)> {
    if trace.method != method {
        return Err(Error::InvalidParameter(format!(
            "expected a {} trace, got {}",
            method.as_str(),
            trace.method.as_str()
        )));
    }
    if !trace.steps.is_equal() {
        return Err(Error::InvalidParameter("the potential needs gamma1 = gamma2".into()));
    }
    let reference = trace.reference.as_ref().ok_or(Error::MissingReference)?;
    Ok((trace.steps.gamma1, reference))
}

fn flags(phi: &[f64], slack: Slack) -> Vec<bool> {
    phi.windows(2).map(|w| slack.allows(w[1], w[0])).collect()
}

/// `Phi_k = ||x^k - x*||^2 + (k g^2 (1 - 5 rho/(2g) - L^2 g^2) + 40 g rho) ||F(x^k)||^2`.
pub fn eg_potential(trace: &Trace, rho: f64, l: f64) -> Result<PotentialSeries> {
    eg_potential_with(trace, rho, l, Slack::default())
}

pub fn eg_potential_with(trace: &Trace, rho: f64, l: f64, slack: Slack) -> Result<PotentialSeries> {
    let (g, x_star) = equal_step_reference(trace, Method::Eg)?;
    let slope = g * g * (1.0 - 5.0 * rho / (2.0 * g) - l * l * g * g);
    let phi: Vec<f64> = trace
        .x
        .iter()
        .zip(&trace.f_x)
        .enumerate()
        .map(|(k, (x, fx))| x.distance_squared(x_star) + (k as f64 * slope + 40.0 * g * rho) * fx.norm_squared())
        .collect();
    let non_increasing = flags(&phi, slack);
    Ok(PotentialSeries { phi, psi: None, non_increasing })
}

/// `Phi_k = ||x^k - x*||^2 + (k g (g - 3 rho)/(2 + 6 L^2 g^2) + 400 g^2) Psi_k` with
/// `Psi_k = ||F(x^k)||^2 + ||F(x^k) - F(x~^{k-1})||^2` and `F(x~^{-1}) = 0`.
/// Decrease is only guaranteed from `k = 1` on.
pub fn og_potential(trace: &Trace, rho: f64, l: f64) -> Result<PotentialSeries> {
    og_potential_with(trace, rho, l, Slack::default())
}

pub fn og_potential_with(trace: &Trace, rho: f64, l: f64, slack: Slack) -> Result<PotentialSeries> {
    let (g, x_star) = equal_step_reference(trace, Method::Og)?;
    let slope = g * (g - 3.0 * rho) / (2.0 + 6.0 * l * l * g * g);
    let zero = Point::zeros(trace.x[0].dim());
    let psi: Vec<f64> = trace
        .f_x
        .iter()
        .enumerate()
        .map(|(k, fx)| {
            let prev = if k == 0 { &zero } else { &trace.f_x_tilde[k - 1] };
            fx.norm_squared() + fx.distance_squared(prev)
        })
        .collect();
    let phi: Vec<f64> = trace
        .x
        .iter()
        .zip(&psi)
        .enumerate()
        .map(|(k, (x, p))| x.distance_squared(x_star) + (k as f64 * slope + 400.0 * g * g) * p)
        .collect();
    let non_increasing = flags(&phi, slack);
    Ok(PotentialSeries { phi, psi: Some(psi), non_increasing })
}

/// The 4x4 matrix certifying OG's one-step potential decrease, in the basis
/// used by that argument.
pub fn og_descent_matrix() -> Matrix4<f64> {
    Matrix4::new(
        -1.0 / 3.0,
        -1.0 / 2.0,
        1.0 / 2.0,
        1.0 / 3.0,
        -1.0 / 2.0,
        -3.0 / 2.0,
        1.0,
        1.0,
        1.0 / 2.0,
        1.0,
        -4927.0 / 5766.0,
        -1861.0 / 2883.0,
        1.0 / 3.0,
        1.0,
        -1861.0 / 2883.0,
        -661.0 / 961.0,
    )
}

/// Quadratic form of `||F(x~^k) - F(x~^{k-1})||^2` in the same basis.
pub fn og_descent_difference_form() -> Matrix4<f64> {
    let mut d = Matrix4::zeros();
    d[(2, 2)] = 1.0;
    d[(3, 3)] = 1.0;
    d[(2, 3)] = -1.0;
    d[(3, 2)] = -1.0;
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCertificate {
    /// `lambda_max(M + D/100)`.
    pub max_eigenvalue: f64,
    /// `max_eigenvalue <= 1e-12`.
    pub holds: bool,
    pub matrix: Vec<Vec<f64>>,
}

/// Checks `M <= -D/100` for the built-in matrix.
pub fn og_descent_matrix_certificate() -> MatrixCertificate {
    og_descent_matrix_certificate_for(&og_descent_matrix())
}

/// Checks `M <= -D/100` for an arbitrary symmetric `M`.
pub fn og_descent_matrix_certificate_for(m: &Matrix4<f64>) -> MatrixCertificate {
    let s = m + og_descent_difference_form() / 100.0;
    let max_eigenvalue = s.symmetric_eigenvalues().iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    MatrixCertificate {
        max_eigenvalue,
        holds: max_eigenvalue <= 1e-12,
        matrix: (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect(),
    }
}

/// Divergence evidence for EG or OG on the matching construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleCertificate {
    pub method: Method,
    pub construction: Counterexample,
    /// EG: the squared per-step growth factor (`|lambda|^2` on the rotation,
    /// the multiplier on the scaling). OG: `||B||^2` on the rotation and the
    /// spectral radius of the companion matrix on the scaling.
    pub spectral_quantity: f64,
    /// Spectral radius of the linear iteration.
    pub spectral_radius: f64,
    /// `spectral_quantity > 1`.
    pub expansive: bool,
    /// `spectral_radius > 1`: generic starting points blow up.
    pub diverges: bool,
}

/// Closed-form divergence quantities for the scaling (`gamma1 > 1/L`) and
/// rotation (`gamma1 <= 1/L`) constructions.
///
/// For OG on the rotation, `||B|| > 1` alone does not force divergence; the
/// `diverges` flag comes from the spectral radius of `B`.
pub fn counterexample_certificates(method: Method, l: f64, gamma1: f64, gamma2: f64) -> Result<CounterexampleCertificate> {
    check_inputs(gamma1, gamma2, 0.0, l, 0.0, true)?;
    let (g1, g2) = (gamma1, gamma2);
    let cert = match method {
        Method::Pp => {
            return Err(Error::InvalidParameter("divergence certificates cover EG and OG only".into()));
        }
        Method::Eg if g1 > 1.0 / l => {
            let m = 1.0 - l * g2 + l * l * g1 * g2;
            (Counterexample::Scaling, m, m.abs())
        }
        Method::Eg => {
            let re = 1.0 + g2 * l * (1.0 - g1 * l) / 2.0;
            let im = 3f64.sqrt() * g2 * l * (1.0 + g1 * l) / 2.0;
            let mod2 = re * re + im * im;
            (Counterexample::Rotation, mod2, mod2.sqrt())
        }
        Method::Og if g1 > 1.0 / l => {
            let t = 1.0 - l * g1 - l * g2;
            let disc = l * l * g1 * g1 + l * l * g2 * g2 + 2.0 * l * l * g1 * g2 + 2.0 * l * g1 - 2.0 * l * g2 + 1.0;
            let lam_minus = (t - disc.sqrt()) / 2.0;
            let lam_plus = (t + disc.sqrt()) / 2.0;
            let radius = lam_minus.abs().max(lam_plus.abs());
            (Counterexample::Scaling, radius, radius)
        }
        Method::Og => {
            let c = (l.powi(4) * g1 * g1 * g2 * g2 + l * l * g1 * g1 + l * l * g2 * g2 + l * g2) / 2.0 + 1.0;
            let norm2 = c + (c * c - l * l * g1 * g1).sqrt();
            let b = og_rotation_iteration_matrix(l, g1, g2);
            let radius = b
                .complex_eigenvalues()
                .iter()
                .fold(0.0_f64, |m, z| m.max(z.norm()));
            (Counterexample::Rotation, norm2, radius)
        }
    };
    Ok(CounterexampleCertificate {
        method,
        construction: cert.0,
        spectral_quantity: cert.1,
        spectral_radius: cert.2,
        expansive: cert.1 > 1.0,
        diverges: cert.2 > 1.0,
    })
}

/// `B = [[I - g2 L A, g1 g2 L^2 A^2], [I, -g1 L A]]` with `A` the rotation by
/// `2 pi / 3`, acting on `(x^k, x~^{k-1})`.
pub fn og_rotation_iteration_matrix(l: f64, gamma1: f64, gamma2: f64) -> DMatrix<f64> {
    let theta = crate::operators::COUNTEREXAMPLE_ANGLE;
    let (s, c) = theta.sin_cos();
    let a = nalgebra::Matrix2::new(c, -s, s, c);
    let i = nalgebra::Matrix2::identity();
    let blocks = [
        [i - a * (gamma2 * l), a * a * (gamma1 * gamma2 * l * l)],
        [i, -a * (gamma1 * l)],
    ];
    let mut b = DMatrix::zeros(4, 4);
    for (bi, row) in blocks.iter().enumerate() {
        for (bj, blk) in row.iter().enumerate() {
            b.view_mut((2 * bi, 2 * bj), (2, 2)).copy_from(blk);
        }
    }
    b
}

/// The linear map a method applies to its state when `F(x) = M x`.
///
/// PP and EG act on `x^k`; OG acts on `(x^k, x~^{k-1})`, giving
/// `[[I - g2 M, g1 g2 M^2], [I, -g1 M]]`.
pub fn iteration_matrix(method: Method, m: &DMatrix<f64>, steps: StepSizes) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: m.ncols() });
    }
    let i = DMatrix::<f64>::identity(d, d);
    let (g1, g2) = (steps.gamma1, steps.gamma2);
    Ok(match method {
        Method::Pp => {
            let a = &i + m * g1;
            let rcond = crate::operators::reciprocal_condition(&a);
            if rcond < crate::operators::SINGULAR_RCOND {
                return Err(Error::SingularResolvent { gamma: g1, rcond, step: None });
            }
            a.try_inverse().ok_or(Error::SingularResolvent { gamma: g1, rcond, step: None })?
        }
        Method::Eg => &i - m * g2 * (&i - m * g1),
        Method::Og => {
            let mut b = DMatrix::zeros(2 * d, 2 * d);
            b.view_mut((0, 0), (d, d)).copy_from(&(&i - m * g2));
            b.view_mut((0, d), (d, d)).copy_from(&(m * m * (g1 * g2)));
            b.view_mut((d, 0), (d, d)).copy_from(&i);
            b.view_mut((d, d), (d, d)).copy_from(&(m * -g1));
            b
        }
    })
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(b: &DMatrix<f64>) -> f64 {
    b.complex_eigenvalues().iter().fold(0.0_f64, |a, l| a.max(l.norm()))
}

/// One row of a bound report. For lower bounds `margin = observed - bound`,
/// otherwise `margin = bound - observed`; nonnegative means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub k: usize,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub spec: BoundSpec,
    pub in_regime: bool,
    pub regime_violations: Vec<String>,
    pub rows: Vec<BoundRow>,
    pub satisfied: bool,
    pub first_violation: Option<usize>,
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads the rows written by [`BoundReport::write_csv`].
    pub fn read_csv_rows<R: std::io::Read>(input: R) -> Result<Vec<BoundRow>> {
        let mut out = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            out.push(row?);
        }
        Ok(out)
    }

    /// Columns `k, observed, bound, margin`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "observed", "bound", "margin"])?;
        for r in &self.rows {
            w.write_record([r.k.to_string(), fmt_f64(r.observed), fmt_f64(r.bound), fmt_f64(r.margin)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares a trace against a bound at every horizon the trace supports.
///
/// When `reference` is given, `R = ||x^0 - reference||` replaces `spec.r`.
/// Out-of-regime parameters are evaluated anyway and flagged, so a diverging
/// run can be shown to break a bound whose hypotheses it violates.
pub fn check_trace(trace: &Trace, spec: &BoundSpec, reference: Option<&Point>) -> Result<BoundReport> {
    check_trace_with(trace, spec, reference, Slack::default())
}

pub fn check_trace_with(trace: &Trace, spec: &BoundSpec, reference: Option<&Point>, slack: Slack) -> Result<BoundReport> {
    if trace.method != spec.method {
        return Err(Error::Regime(format!(
            "trace method {} does not match bound method {}",
            trace.method, spec.method
        )));
    }
    let steps_match = match spec.method {
        Method::Pp => trace.steps.gamma1 == spec.gamma1,
        _ => trace.steps.gamma1 == spec.gamma1 && trace.steps.gamma2 == spec.gamma2,
    };
    if !steps_match {
        return Err(Error::Regime(format!(
            "trace stepsizes ({}, {}) do not match bound stepsizes ({}, {})",
            trace.steps.gamma1, trace.steps.gamma2, spec.gamma1, spec.gamma2
        )));
    }
    let mut spec = *spec;
    if let Some(r) = reference {
        r.check_dim(trace.x[0].dim())?;
        spec.r = trace.x[0].distance_squared(r).sqrt();
    }
    check_inputs(spec.gamma1, spec.gamma2, spec.rho, spec.l, spec.r, spec.method.is_explicit())?;
    spec.formula()?;

    let res = residual_series(trace);
    let len = trace.len();
    let running_mean = |v: &[f64]| -> Vec<f64> {
        let mut sum = 0.0;
        v.iter()
            .enumerate()
            .map(|(i, x)| {
                sum += x;
                sum / (i + 1) as f64
            })
            .collect()
    };
    // (horizon N, observed value) pairs
    let observed: Vec<(usize, f64)> = match (spec.method, spec.kind) {
        (Method::Pp, BoundKind::BestIterate) => {
            let avg = running_mean(&res.sq_step[1..]);
            (1..=len).map(|n| (n, avg[n - 1])).collect()
        }
        (Method::Pp, BoundKind::LastIterate) => (1..=len).map(|n| (n, res.sq_step[n])).collect(),
        (Method::Pp, BoundKind::LowerBound) => (1..len).map(|n| (n, res.sq_norm_f[n + 1])).collect(),
        (Method::Eg, BoundKind::BestIterate) => {
            let avg = running_mean(&res.sq_norm_f);
            (0..=len).map(|n| (n, avg[n])).collect()
        }
        (Method::Eg | Method::Og, BoundKind::BestIterateTilde) | (Method::Og, BoundKind::BestIterate) => {
            let avg = running_mean(&res.sq_norm_f_tilde);
            (0..len).map(|n| (n, avg[n])).collect()
        }
        (Method::Eg, BoundKind::LastIterate | BoundKind::LastIterateRefined) | (Method::Og, BoundKind::LastIterate) => {
            (1..=len).map(|n| (n, res.sq_norm_f[n])).collect()
        }
        (m, k) => {
            return Err(Error::InvalidParameter(format!("no {} bound for {}", k.as_str(), m.as_str())));
        }
    };

    let regime_violations = {
        let mut s = spec;
        s.n = observed.last().map(|o| o.0).unwrap_or(1).max(1);
        s.regime_violations()
    };
    let mut rows = Vec::with_capacity(observed.len());
    let mut first_violation = None;
    for (n, obs) in observed {
        let mut s = spec;
        s.n = n;
        let b = s.formula()?;
        let (margin, ok) = if spec.kind.is_lower() {
            (obs - b, slack.allows(b, obs))
        } else {
            (b - obs, slack.allows(obs, b))
        };
        if !ok && first_violation.is_none() {
            first_violation = Some(n);
        }
        rows.push(BoundRow { k: n, observed: obs, bound: b, margin });
    }
    Ok(BoundReport {
        spec,
        in_regime: regime_violations.is_empty(),
        regime_violations,
        satisfied: first_violation.is_none(),
        first_violation,
        rows,
    })
}
