//! Proximal point (PP), extragradient (EG) and optimistic gradient (OG) runs.
//!
//! Update rules, with `F(x~^{-1}) = 0` so that `x~^0 = x^0` for OG:
//!
//! ```text
//! PP:  x^{k+1} = x^k - g F(x^{k+1})
//! EG:  x~^k = x^k - g1 F(x^k),     x^{k+1} = x^k - g2 F(x~^k)
//! OG:  x~^k = x^k - g1 F(x~^{k-1}), x^{k+1} = x^k - g2 F(x~^k)
//! ```

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Operator, Point};

/// Any coordinate beyond this magnitude trips the overflow guard.
pub const OVERFLOW_COORD: f64 = 1e150;
/// Growth of the distance to the reference beyond this factor trips the guard.
pub const OVERFLOW_GROWTH: f64 = 1e12;
/// Relative tolerance on the implicit-step residual of a PP trace.
pub const PP_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pp,
    Eg,
    Og,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pp => "pp",
            Method::Eg => "eg",
            Method::Og => "og",
        }
    }

    pub fn is_explicit(self) -> bool {
        !matches!(self, Method::Pp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pp" => Ok(Method::Pp),
            "eg" => Ok(Method::Eg),
            "og" => Ok(Method::Og),
            other => Err(Error::Parse(format!("unknown method '{other}' (expected pp, eg or og)"))),
        }
    }
}

/// Stepsizes. PP uses `gamma1` only and stores it in both fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl StepSizes {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        for (name, g) in [("gamma1", gamma1), ("gamma2", gamma2)] {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {g}")));
            }
        }
        Ok(StepSizes { gamma1, gamma2 })
    }

    pub fn single(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub fn is_equal(&self) -> bool {
        self.gamma1 == self.gamma2
    }
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    /// Index of the iterate that tripped the guard.
    pub step: usize,
    pub reason: String,
}

/// Optional settings for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// A known solution. Distances and the overflow guard are measured from it;
    /// without one they are measured from the origin.
    pub reference: Option<Point>,
}

impl RunOptions {
    pub fn with_reference(reference: Point) -> Self {
        RunOptions { reference: Some(reference) }
    }
}

/// The complete record of a run.
///
/// `x` holds `x^0..x^n` and `f_x` the matching operator values. For EG and OG
/// `x_tilde` holds `x~^0..x~^{n-1}`; for PP both tilde lists are empty. A run
/// stopped by the overflow guard keeps every finite iterate computed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub method: Method,
    pub steps: StepSizes,
    /// Number of steps asked for.
    pub requested: usize,
    pub x: Vec<Point>,
    pub x_tilde: Vec<Point>,
    pub f_x: Vec<Point>,
    pub f_x_tilde: Vec<Point>,
    pub reference: Option<Point>,
    pub diverged: bool,
    pub failure: Option<FailureRecord>,
}

impl Trace {
    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last(&self) -> &Point {
        self.x.last().expect("a trace always holds x^0")
    }

    pub fn residuals(&self) -> ResidualSeries {
        residual_series(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TraceRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: TraceRecord = serde_json::from_str(s)?;
        rec.try_into()
    }

    /// CSV with columns `k, sq_norm_F, sq_norm_F_tilde, sq_step, dist_to_ref`;
    /// the tilde column is empty for PP and at the last row, and the last column
    /// is empty without a reference.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        residual_series(self).write_csv(out)
    }
}

struct Guard {
    reference: Option<Point>,
    start_dist: f64,
}

impl Guard {
    fn new(x0: &Point, reference: Option<&Point>) -> Self {
        let start_dist = match reference {
            Some(r) => x0.distance_squared(r).sqrt(),
            None => x0.norm(),
        };
        Guard { reference: reference.cloned(), start_dist }
    }

    /// `Some(reason)` when `x` counts as diverged.
    fn check(&self, x: &Point) -> Option<String> {
        if !x.is_finite() {
            return Some("non-finite iterate".into());
        }
        if x.max_abs() > OVERFLOW_COORD {
            return Some(format!("coordinate magnitude exceeded {OVERFLOW_COORD:e}"));
        }
        let dist = match &self.reference {
            Some(r) => x.distance_squared(r).sqrt(),
            None => x.norm(),
        };
        if self.start_dist > 0.0 && dist > OVERFLOW_GROWTH * self.start_dist {
            return Some(format!("distance grew beyond {OVERFLOW_GROWTH:e} times its initial value"));
        }
        None
    }
}

fn start<O: Operator + ?Sized>(
    method: Method,
    op: &O,
    x0: &Point,
    steps: StepSizes,
    n: usize,
    opts: &RunOptions,
) -> Result<(Trace, Guard)> {
    x0.check_dim(op.dim())?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial point"));
    }
    StepSizes::new(steps.gamma1, steps.gamma2)?;
    if n == 0 {
        return Err(Error::InvalidParameter("the number of steps must be at least 1".into()));
    }
    if let Some(r) = &opts.reference {
        r.check_dim(op.dim())?;
    }
    let f0 = op.apply(x0)?;
    let trace = Trace {
        method,
        steps,
        requested: n,
        x: vec![x0.clone()],
        x_tilde: Vec::new(),
        f_x: vec![f0],
        f_x_tilde: Vec::new(),
        reference: opts.reference.clone(),
        diverged: false,
        failure: None,
    };
    Ok((trace, Guard::new(x0, opts.reference.as_ref())))
}

fn diverge(trace: &mut Trace, step: usize, reason: String) {
    trace.diverged = true;
    trace.failure = Some(FailureRecord { step, reason });
}

pub fn run_pp<O: Operator + ?Sized>(op: &O, x0: &Point, gamma: f64, n: usize) -> Result<Trace> {
    run_pp_with(op, x0, gamma, n, &RunOptions::default())
}

/// `n` implicit steps. A resolvent failure aborts the run with the step index.
pub fn run_pp_with<O: Operator + ?Sized>(
    op: &O,
    x0: &Point,
    gamma: f64,
    n: usize,
    opts: &RunOptions,
) -> Result<Trace> {
    let (mut trace, guard) = start(Method::Pp, op, x0, StepSizes::single(gamma)?, n, opts)?;
    for k in 0..n {
        let next = op.resolvent(gamma, &trace.x[k]).map_err(|e| match e {
            Error::SingularResolvent { gamma, rcond, .. } => {
                Error::SingularResolvent { gamma, rcond, step: Some(k + 1) }
            }
            other => other,
        })?;
        if !next.is_finite() {
            diverge(&mut trace, k + 1, "non-finite iterate".into());
            break;
        }
        let f_next = op.apply(&next)?;
        let tripped = guard.check(&next);
        trace.x.push(next);
        trace.f_x.push(f_next);
        if let Some(reason) = tripped {
            diverge(&mut trace, k + 1, reason);
            break;
        }
    }
    Ok(trace)
}

pub fn run_eg<O: Operator + ?Sized>(op: &O, x0: &Point, steps: StepSizes, n: usize) -> Result<Trace> {
    run_eg_with(op, x0, steps, n, &RunOptions::default())
}

pub fn run_eg_with<O: Operator + ?Sized>(
    op: &O,
    x0: &Point,
    steps: StepSizes,
    n: usize,
    opts: &RunOptions,
) -> Result<Trace> {
    let (mut trace, guard) = start(Method::Eg, op, x0, steps, n, opts)?;
    for k in 0..n {
        let xk = &trace.x[k];
        let xt = eg_extrapolate(xk, &trace.f_x[k], steps.gamma1);
        if !explicit_step(op, &mut trace, &guard, k, xt)? {
            break;
        }
    }
    Ok(trace)
}

pub fn run_og<O: Operator + ?Sized>(op: &O, x0: &Point, steps: StepSizes, n: usize) -> Result<Trace> {
    run_og_with(op, x0, steps, n, &RunOptions::default())
}

pub fn run_og_with<O: Operator + ?Sized>(
    op: &O,
    x0: &Point,
    steps: StepSizes,
    n: usize,
    opts: &RunOptions,
) -> Result<Trace> {
    let (mut trace, guard) = start(Method::Og, op, x0, steps, n, opts)?;
    for k in 0..n {
        let xt = match k {
            0 => trace.x[0].clone(),
            _ => eg_extrapolate(&trace.x[k], &trace.f_x_tilde[k - 1], steps.gamma1),
        };
        if !explicit_step(op, &mut trace, &guard, k, xt)? {
            break;
        }
    }
    Ok(trace)
}

/// Dispatches on `method`; PP uses `steps.gamma1`.
pub fn run<O: Operator + ?Sized>(
    method: Method,
    op: &O,
    x0: &Point,
    steps: StepSizes,
    n: usize,
    opts: &RunOptions,
) -> Result<Trace> {
    match method {
        Method::Pp => run_pp_with(op, x0, steps.gamma1, n, opts),
        Method::Eg => run_eg_with(op, x0, steps, n, opts),
        Method::Og => run_og_with(op, x0, steps, n, opts),
    }
}

fn eg_extrapolate(x: &Point, f: &Point, gamma: f64) -> Point {
    x - &(f * gamma)
}

/// Completes step `k` from the extrapolated point. Returns false once the run
/// must stop. `x~^k` and `x^{k+1}` are recorded together or not at all.
fn explicit_step<O: Operator + ?Sized>(
    op: &O,
    trace: &mut Trace,
    guard: &Guard,
    k: usize,
    xt: Point,
) -> Result<bool> {
    if !xt.is_finite() {
        diverge(trace, k, "non-finite extrapolation point".into());
        return Ok(false);
    }
    let ft = op.apply(&xt)?;
    let next = eg_extrapolate(&trace.x[k], &ft, trace.steps.gamma2);
    if !ft.is_finite() || !next.is_finite() {
        diverge(trace, k + 1, "non-finite iterate".into());
        return Ok(false);
    }
    let f_next = op.apply(&next)?;
    if !f_next.is_finite() {
        diverge(trace, k + 1, "non-finite operator value".into());
        return Ok(false);
    }
    let tripped = guard.check(&xt).or_else(|| guard.check(&next));
    trace.x_tilde.push(xt);
    trace.f_x_tilde.push(ft);
    trace.x.push(next);
    trace.f_x.push(f_next);
    if let Some(reason) = tripped {
        diverge(trace, k + 1, reason);
        return Ok(false);
    }
    Ok(true)
}

/// Checks the length and update-rule invariants of a trace against `op`.
///
/// PP steps must satisfy `x^{k+1} + g F(x^{k+1}) = x^k` to `1e-8` relative;
/// EG and OG steps and every recorded operator value must reproduce bitwise.
pub fn validate_trace<O: Operator + ?Sized>(trace: &Trace, op: &O) -> Result<()> {
    let bad = |msg: String| Err(Error::Inconsistent(msg));
    let n = trace.len();
    if trace.x.is_empty() {
        return bad("trace holds no iterates".into());
    }
    if trace.f_x.len() != trace.x.len() {
        return bad(format!("{} operator values for {} iterates", trace.f_x.len(), trace.x.len()));
    }
    let expected_tilde = if trace.method.is_explicit() { n } else { 0 };
    if trace.x_tilde.len() != expected_tilde || trace.f_x_tilde.len() != expected_tilde {
        return bad(format!(
            "expected {expected_tilde} extrapolation points, found {} (values {})",
            trace.x_tilde.len(),
            trace.f_x_tilde.len()
        ));
    }
    if n > trace.requested {
        return bad(format!("{n} steps recorded but only {} requested", trace.requested));
    }
    if n < trace.requested && !trace.diverged {
        return bad(format!("run stopped after {n} of {} steps without a failure", trace.requested));
    }
    for (k, (x, fx)) in trace.x.iter().zip(&trace.f_x).enumerate() {
        if &op.apply(x)? != fx {
            return bad(format!("recorded F(x^{k}) does not match the operator"));
        }
    }
    for (k, (x, fx)) in trace.x_tilde.iter().zip(&trace.f_x_tilde).enumerate() {
        if &op.apply(x)? != fx {
            return bad(format!("recorded F(x~^{k}) does not match the operator"));
        }
    }
    let (g1, g2) = (trace.steps.gamma1, trace.steps.gamma2);
    for k in 0..n {
        match trace.method {
            Method::Pp => {
                let lhs = &trace.x[k + 1] + &(&trace.f_x[k + 1] * g1);
                let err = lhs.distance_squared(&trace.x[k]).sqrt();
                if err > PP_RESIDUAL_TOL * trace.x[k].norm().max(1.0) {
                    return bad(format!("implicit step {k} has residual {err:e}"));
                }
            }
            Method::Eg | Method::Og => {
                let xt = match (trace.method, k) {
                    (Method::Eg, _) => eg_extrapolate(&trace.x[k], &trace.f_x[k], g1),
                    (_, 0) => trace.x[0].clone(),
                    _ => eg_extrapolate(&trace.x[k], &trace.f_x_tilde[k - 1], g1),
                };
                if xt != trace.x_tilde[k] {
                    return bad(format!("extrapolation point {k} does not follow the update rule"));
                }
                if eg_extrapolate(&trace.x[k], &trace.f_x_tilde[k], g2) != trace.x[k + 1] {
                    return bad(format!("iterate {} does not follow the update rule", k + 1));
                }
            }
        }
    }
    Ok(())
}

/// Per-iterate residuals of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    /// `||F(x^k)||^2`.
    #[serde(rename = "sq_norm_F")]
    pub sq_norm_f: Vec<f64>,
    /// `||F(x~^k)||^2`, empty for PP.
    #[serde(rename = "sq_norm_F_tilde")]
    pub sq_norm_f_tilde: Vec<f64>,
    /// `||x^k - x^{k-1}||^2`, with `sq_step[0] = 0`.
    pub sq_step: Vec<f64>,
    /// `||x^k - x_ref||^2` when the trace carries a reference.
    pub dist_to_ref: Option<Vec<f64>>,
}

pub fn residual_series(trace: &Trace) -> ResidualSeries {
    let sq_norm_f = trace.f_x.iter().map(Point::norm_squared).collect();
    let sq_norm_f_tilde = trace.f_x_tilde.iter().map(Point::norm_squared).collect();
    let sq_step = std::iter::once(0.0)
        .chain(trace.x.windows(2).map(|w| w[1].distance_squared(&w[0])))
        .collect();
    let dist_to_ref = trace
        .reference
        .as_ref()
        .map(|r| trace.x.iter().map(|x| x.distance_squared(r)).collect());
    ResidualSeries { sq_norm_f, sq_norm_f_tilde, sq_step, dist_to_ref }
}

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Deserialize)]
struct ResidualRow {
    k: usize,
    #[serde(rename = "sq_norm_F")]
    sq_norm_f: f64,
    #[serde(rename = "sq_norm_F_tilde")]
    sq_norm_f_tilde: Option<f64>,
    sq_step: f64,
    dist_to_ref: Option<f64>,
}

impl ResidualSeries {
    /// Reads the CSV written by [`ResidualSeries::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, rec) in csv::Reader::from_reader(input).deserialize::<ResidualRow>().enumerate() {
            let rec = rec?;
            if rec.k != i {
                return Err(Error::Parse(format!("row {i} has k = {}", rec.k)));
            }
            rows.push(rec);
        }
        let dist: Option<Vec<f64>> = rows.iter().map(|r| r.dist_to_ref).collect();
        if dist.is_none() && rows.iter().any(|r| r.dist_to_ref.is_some()) {
            return Err(Error::Parse("dist_to_ref is present on some rows only".into()));
        }
        let sq_norm_f_tilde: Vec<f64> = rows.iter().map_while(|r| r.sq_norm_f_tilde).collect();
        if rows.iter().filter(|r| r.sq_norm_f_tilde.is_some()).count() != sq_norm_f_tilde.len() {
            return Err(Error::Parse("sq_norm_F_tilde must fill a leading run of rows".into()));
        }
        Ok(ResidualSeries {
            sq_norm_f: rows.iter().map(|r| r.sq_norm_f).collect(),
            sq_norm_f_tilde,
            sq_step: rows.iter().map(|r| r.sq_step).collect(),
            dist_to_ref: if rows.is_empty() { None } else { dist },
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "sq_norm_F", "sq_norm_F_tilde", "sq_step", "dist_to_ref"])?;
        for k in 0..self.sq_norm_f.len() {
            let tilde = self.sq_norm_f_tilde.get(k).map(|&v| fmt_f64(v)).unwrap_or_default();
            let dist = self.dist_to_ref.as_ref().map(|d| fmt_f64(d[k])).unwrap_or_default();
            w.write_record([k.to_string(), fmt_f64(self.sq_norm_f[k]), tilde, fmt_f64(self.sq_step[k]), dist])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    method: Method,
    steps: StepSizes,
    requested: usize,
    points: Vec<Point>,
    #[serde(default)]
    points_tilde: Vec<Point>,
    operator_values: Vec<Point>,
    #[serde(default)]
    operator_values_tilde: Vec<Point>,
    #[serde(default)]
    reference: Option<Point>,
    residuals: ResidualSeries,
    diverged: bool,
    #[serde(default)]
    failure: Option<FailureRecord>,
}

impl From<&Trace> for TraceRecord {
    fn from(t: &Trace) -> Self {
        TraceRecord {
            method: t.method,
            steps: t.steps,
            requested: t.requested,
            points: t.x.clone(),
            points_tilde: t.x_tilde.clone(),
            operator_values: t.f_x.clone(),
            operator_values_tilde: t.f_x_tilde.clone(),
            reference: t.reference.clone(),
            residuals: residual_series(t),
            diverged: t.diverged,
            failure: t.failure.clone(),
        }
    }
}

impl TryFrom<TraceRecord> for Trace {
    type Error = Error;
    fn try_from(r: TraceRecord) -> Result<Self> {
        let steps = StepSizes::new(r.steps.gamma1, r.steps.gamma2)?;
        if r.points.is_empty() || r.points.len() != r.operator_values.len() {
            return Err(Error::Parse("trace needs matching, non-empty points and operator values".into()));
        }
        Ok(Trace {
            method: r.method,
            steps,
            requested: r.requested,
            x: r.points,
            x_tilde: r.points_tilde,
            f_x: r.operator_values,
            f_x_tilde: r.operator_values_tilde,
            reference: r.reference,
            diverged: r.diverged,
            failure: r.failure,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{FnOperator, LinearOperator, COUNTEREXAMPLE_ANGLE};
    use nalgebra::DVector;

    fn p(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn stationary_at_solution() {
        let op = LinearOperator::pp_worst_case(0.1, 0.5, 5).unwrap();
        let x0 = Point::zeros(2);
        let steps = StepSizes::new(0.3, 0.2).unwrap();
        for t in [
            run_pp(&op, &x0, 0.5, 5).unwrap(),
            run_eg(&op, &x0, steps, 5).unwrap(),
            run_og(&op, &x0, steps, 5).unwrap(),
        ] {
            assert!(t.x.iter().all(|x| x == &x0));
            let r = t.residuals();
            assert!(r.sq_norm_f.iter().chain(&r.sq_step).all(|&v| v == 0.0));
            validate_trace(&t, &op).unwrap();
        }
    }

    #[test]
    fn pp_worst_case_final_residual() {
        let (rho, gamma, n) = (0.1, 0.5, 10usize);
        let op = LinearOperator::pp_worst_case(rho, gamma, n).unwrap();
        let t = run_pp(&op, &p(&[1.0, 0.0]), gamma, n + 1).unwrap();
        let alpha2 = op.gain().powi(2);
        let expected = alpha2 * (n as f64 / (n as f64 + 1.0)).powi(n as i32 + 1);
        let got = *t.residuals().sq_norm_f.last().unwrap();
        assert!(close(got, expected, 1e-12), "{got} vs {expected}");
        validate_trace(&t, &op).unwrap();
    }

    #[test]
    fn pp_step_identity() {
        let op = LinearOperator::pp_worst_case(0.1, 0.5, 10).unwrap();
        let t = run_pp(&op, &p(&[1.0, -0.3]), 0.5, 8).unwrap();
        let r = t.residuals();
        for k in 1..r.sq_step.len() {
            assert!(close(r.sq_step[k], 0.25 * r.sq_norm_f[k], 1e-12));
        }
        assert_eq!(r.sq_step[0], 0.0);
    }

    #[test]
    fn pp_negative_scaling_regimes() {
        let rho = 0.5;
        let op = LinearOperator::negative_scaling(rho, 1).unwrap();
        // x^{k+1} = x^k / (1 - gamma / rho)
        for (gamma, factor) in [(0.2, 1.0 / 0.6), (0.7, -2.5), (0.9, -1.25), (1.0, -1.0)] {
            let t = run_pp(&op, &p(&[1.0]), gamma, 3).unwrap();
            for k in 0..3 {
                assert!(close(t.x[k + 1].coords()[0], t.x[k].coords()[0] * factor, 1e-13));
            }
        }
        // gamma = 2 rho flips the sign every step; the norm never moves.
        let t = run_pp(&op, &p(&[1.0]), 1.0, 4).unwrap();
        assert!(t.x.iter().all(|x| close(x.norm(), 1.0, 1e-15)));
    }

    #[test]
    fn pp_singular_resolvent_reports_step() {
        let op = LinearOperator::negative_scaling(0.5, 1).unwrap();
        match run_pp(&op, &p(&[1.0]), 0.5, 3) {
            Err(Error::SingularResolvent { step: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eg_scaling_doubles() {
        let op = LinearOperator::scaling(1.0, 1).unwrap();
        let t = run_eg(&op, &p(&[1.0]), StepSizes::new(2.0, 1.0).unwrap(), 6).unwrap();
        for k in 0..6 {
            assert_eq!(t.x[k + 1].coords()[0], 2.0 * t.x[k].coords()[0]);
        }
        validate_trace(&t, &op).unwrap();
    }

    #[test]
    fn eg_rotation_growth_rate() {
        let op = LinearOperator::scaled_rotation(COUNTEREXAMPLE_ANGLE, 1.0).unwrap();
        let t = run_eg(&op, &p(&[1.0, 0.0]), StepSizes::new(1.0, 0.5).unwrap(), 5).unwrap();
        for k in 0..5 {
            assert!(close(t.x[k + 1].norm_squared() / t.x[k].norm_squared(), 1.75, 1e-12));
        }
    }

    #[test]
    fn og_scaling_diverges_at_companion_rate() {
        let op = LinearOperator::scaling(1.0, 1).unwrap();
        let t = run_og(&op, &p(&[1.0]), StepSizes::new(2.0, 1.0).unwrap(), 60).unwrap();
        let lam = -(2.0 + 1.0 + 12f64.sqrt() - 1.0) / 2.0;
        let n = t.len();
        let ratio = t.x[n].coords()[0] / t.x[n - 1].coords()[0];
        assert!(close(ratio, lam, 1e-9), "{ratio} vs {lam}");
        validate_trace(&t, &op).unwrap();
    }

    #[test]
    fn og_first_extrapolation_is_start() {
        let op = LinearOperator::scaled_rotation(0.4, 1.0).unwrap();
        let t = run_og(&op, &p(&[0.5, 2.0]), StepSizes::new(0.3, 0.2).unwrap(), 3).unwrap();
        assert_eq!(t.x_tilde[0], t.x[0]);
        assert_eq!(t.x_tilde.len(), 3);
        assert_eq!(t.x.len(), 4);
    }

    #[test]
    fn overflow_guard_preserves_prefix() {
        let op = LinearOperator::scaling(1.0, 1).unwrap();
        let t = run_eg(&op, &p(&[1.0]), StepSizes::new(2.0, 1.0).unwrap(), 1000).unwrap();
        assert!(t.diverged);
        let f = t.failure.as_ref().unwrap();
        // 2^40 > 1e12 is the first power of two over the growth limit.
        assert_eq!(f.step, 40);
        assert_eq!(t.len(), 40);
        validate_trace(&t, &op).unwrap();
    }

    #[test]
    fn guard_uses_reference() {
        let op = LinearOperator::scaling(1.0, 1).unwrap();
        let opts = RunOptions::with_reference(p(&[0.0]));
        let t = run_eg_with(&op, &p(&[1.0]), StepSizes::new(0.5, 0.5).unwrap(), 10, &opts).unwrap();
        assert!(!t.diverged);
        let d = t.residuals().dist_to_ref.unwrap();
        assert!(d.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn determinism() {
        let op = LinearOperator::pp_worst_case(0.1, 0.5, 7).unwrap();
        let x0 = p(&[0.3, -0.8]);
        let s = StepSizes::new(0.4, 0.25).unwrap();
        assert_eq!(run_og(&op, &x0, s, 20).unwrap(), run_og(&op, &x0, s, 20).unwrap());
        assert_eq!(run_pp(&op, &x0, 0.5, 20).unwrap(), run_pp(&op, &x0, 0.5, 20).unwrap());
    }

    #[test]
    fn validator_detects_tampering() {
        let op = LinearOperator::scaled_rotation(1.0, 1.0).unwrap();
        let mut t = run_eg(&op, &p(&[1.0, 1.0]), StepSizes::new(0.3, 0.3).unwrap(), 4).unwrap();
        validate_trace(&t, &op).unwrap();
        let bumped = &t.x[2] + &p(&[1e-12, 0.0]);
        t.x[2] = bumped.clone();
        t.f_x[2] = op.apply(&bumped).unwrap();
        assert!(matches!(validate_trace(&t, &op), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn nonlinear_pp_run() {
        let op = FnOperator::new(2, |x: &DVector<f64>| x.map(|v| v + v * v * v));
        let t = run_pp(&op, &p(&[1.0, -2.0]), 0.5, 5).unwrap();
        validate_trace(&t, &op).unwrap();
        assert!(t.residuals().sq_norm_f.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_input() {
        let op = LinearOperator::identity(2).unwrap();
        assert!(run_pp(&op, &p(&[1.0]), 0.5, 3).is_err());
        assert!(run_pp(&op, &p(&[1.0, 0.0]), 0.0, 3).is_err());
        assert!(run_eg(&op, &p(&[1.0, 0.0]), StepSizes { gamma1: 1.0, gamma2: -1.0 }, 3).is_err());
        assert!(run_og(&op, &p(&[1.0, 0.0]), StepSizes::single(0.1).unwrap(), 0).is_err());
    }

    #[test]
    fn json_and_csv() {
        let op = LinearOperator::pp_worst_case(0.1, 0.5, 3).unwrap();
        let opts = RunOptions::with_reference(Point::zeros(2));
        let t = run_og_with(&op, &p(&[1.0, 0.5]), StepSizes::new(0.3, 0.2).unwrap(), 4, &opts).unwrap();
        let s = t.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["method", "steps", "points", "residuals", "diverged"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["method"], "og");
        assert_eq!(Trace::from_json(&s).unwrap(), t);

        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,sq_norm_F,sq_norm_F_tilde,sq_step,dist_to_ref");
        let row: Vec<&str> = lines.nth(2).unwrap().split(',').collect();
        assert_eq!(row[0], "2");
        assert_eq!(row[1].parse::<f64>().unwrap(), t.residuals().sq_norm_f[2]);
        assert_eq!(row[2].parse::<f64>().unwrap(), t.residuals().sq_norm_f_tilde[2]);
        assert_eq!(ResidualSeries::read_csv(text.as_bytes()).unwrap(), t.residuals());
        assert!(text.lines().last().unwrap().starts_with("4,") && text.lines().last().unwrap().split(',').nth(2) == Some(""));
    }
}
