//! Performance estimation for the proximal point method.
//!
//! The worst case of `||x^N - x^{N-1}||^2` over all `rho`-negative comonotone
//! operators and starting points with `||x^0 - x*||^2 <= R^2` is a small SDP
//! in the Gram matrix of `(x*, x^0, g^0, ..., g^N)`, with `g^k in F(x^k)` and
//! `x^k = x^0 - gamma (g^1 + ... + g^k)`. The pairwise interpolation
//! inequalities over the `N + 2` points `{*, 0, ..., N}` (with `g* = 0`) make
//! the relaxation exact.
//!
//! Objective values are in step units, `||x^N - x^{N-1}||^2 = gamma^2 ||g^N||^2`.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolation::{check_interpolable, InterpolationDataset, InterpolationReport, Pair};
use crate::operators::{pp_worst_case_min_n, Point};
use crate::sdp::{
    low_rank_factor, numerical_rank, solve_warm, solve_with, GramSolution, SdpProblem, Sense, SolveStatus, SolverOptions,
    SymmetricMatrix,
};
use crate::solvers::{fmt_f64, Method, Trace};

/// Eigenvalues below this fraction of the largest are dropped when
/// reconstructing vectors from a Gram matrix.
pub const RANK_REL_TOL: f64 = 1e-6;
/// Relative deflation of `v*` in the trace heuristic's equality.
pub const TRACE_DEFLATION: f64 = 1e-6;
/// Interpolation tolerance for reconstructed datasets.
pub const RECONSTRUCTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PepSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub rho: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl PepSpec {
    pub fn new(n: usize, gamma: f64, rho: f64, r: f64) -> Result<Self> {
        let s = PepSpec { n, gamma, rho, r };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {}", self.rho)));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::InvalidParameter(format!("R must be positive, got {}", self.r)));
        }
        if !(self.gamma.is_finite() && self.gamma > 2.0 * self.rho) {
            return Err(Error::Regime(format!(
                "gamma > 2*rho is required (gamma = {}, rho = {})",
                self.gamma, self.rho
            )));
        }
        Ok(())
    }

    /// Order of the Gram matrix, `N + 3`.
    pub fn order(&self) -> usize {
        self.n + 3
    }
}

/// Coordinates of the iterates and operator values in the Gram basis
/// `(x*, x^0, g^0, ..., g^N)`.
struct Basis {
    spec: PepSpec,
}

impl Basis {
    fn e(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.spec.order());
        v[i] = 1.0;
        v
    }

    fn x_star(&self) -> DVector<f64> {
        self.e(0)
    }

    fn x(&self, k: usize) -> DVector<f64> {
        let mut v = self.e(1);
        for i in 1..=k {
            v[2 + i] -= self.spec.gamma;
        }
        v
    }

    fn g(&self, k: usize) -> DVector<f64> {
        self.e(2 + k)
    }

    /// Point `*` is index `None`.
    fn point(&self, k: Option<usize>) -> (DVector<f64>, DVector<f64>) {
        match k {
            None => (self.x_star(), DVector::zeros(self.spec.order())),
            Some(k) => (self.x(k), self.g(k)),
        }
    }
}

/// The functional `-<g_i - g_j, x_i - x_j> - rho ||g_i - g_j||^2` as a matrix.
fn pair_matrix(a: &(DVector<f64>, DVector<f64>), b: &(DVector<f64>, DVector<f64>), rho: f64) -> SymmetricMatrix {
    let dx = &a.0 - &b.0;
    let dg = &a.1 - &b.1;
    SymmetricMatrix::sym_outer(&dg, &dx, -1.0).add(&SymmetricMatrix::sym_outer(&dg, &dg, -rho))
}

/// Points in constraint order: `*, 0, 1, ..., N`.
pub fn point_labels(n: usize) -> Vec<Option<usize>> {
    std::iter::once(None).chain((0..=n).map(Some)).collect()
}

/// Objective matrix `gamma^2 e_{g^N} e_{g^N}^T`.
pub fn objective_matrix(spec: &PepSpec) -> SymmetricMatrix {
    let b = Basis { spec: *spec };
    let g = b.g(spec.n);
    SymmetricMatrix::sym_outer(&g, &g, spec.gamma * spec.gamma)
}

/// `||x^0 - x*||^2` as a matrix.
pub fn initial_distance_matrix(spec: &PepSpec) -> SymmetricMatrix {
    let b = Basis { spec: *spec };
    let d = b.x(0) - b.x_star();
    SymmetricMatrix::sym_outer(&d, &d, 1.0)
}

/// Inequalities in order: one per unordered pair of points `*, 0, ..., N`
/// (lexicographic), then the initial-distance bound.
pub fn build_pp_pep(spec: &PepSpec) -> Result<SdpProblem> {
    spec.validate()?;
    let basis = Basis { spec: *spec };
    let labels = point_labels(spec.n);
    let points: Vec<_> = labels.iter().map(|&l| basis.point(l)).collect();
    let mut problem = SdpProblem::new(objective_matrix(spec), Sense::Max);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            problem.add_inequality(pair_matrix(&points[i], &points[j], spec.rho), 0.0);
        }
    }
    problem.add_inequality(initial_distance_matrix(spec), spec.r * spec.r);
    Ok(problem)
}

/// Gram matrix of explicit vectors `(x*, x^0, g^0, ..., g^N)`.
pub fn gram_from_vectors(x_star: &Point, x0: &Point, g: &[Point]) -> Result<SymmetricMatrix> {
    let dim = x_star.dim();
    x0.check_dim(dim)?;
    let mut cols = vec![x_star, x0];
    for v in g {
        v.check_dim(dim)?;
        cols.push(v);
    }
    let n = cols.len();
    let mut s = SymmetricMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            s.set(i, j, cols[i].dot(cols[j]));
        }
    }
    Ok(s)
}

/// Gram matrix of a proximal point trace with a reference solution, using
/// the stored operator values as `g^k`.
pub fn gram_from_trace(trace: &Trace) -> Result<SymmetricMatrix> {
    if trace.method != Method::Pp {
        return Err(Error::InvalidParameter("a proximal point trace is required".into()));
    }
    let star = trace.reference.as_ref().ok_or(Error::MissingReference)?;
    gram_from_vectors(star, &trace.x[0], &trace.f_x)
}

/// Vectors read off a Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub x_star: Point,
    /// `x^0, ..., x^N`, generated by the proximal recursion from `x^0`.
    pub points: Vec<Point>,
    /// `g^0, ..., g^N`.
    pub gvals: Vec<Point>,
    pub rank: usize,
    /// `||V^T V - G||_F` of the truncated factor.
    pub factor_error: f64,
    pub interpolation: InterpolationReport,
}

impl Reconstruction {
    /// Dataset of `(x*, 0)` followed by `(x^k, g^k)`.
    pub fn dataset(&self) -> Result<InterpolationDataset> {
        let mut pairs = vec![Pair { x: self.x_star.clone(), g: Point::zeros(self.x_star.dim()) }];
        pairs.extend(self.points.iter().zip(&self.gvals).map(|(x, g)| Pair { x: x.clone(), g: g.clone() }));
        InterpolationDataset::new(pairs, Some(0))
    }
}

/// Factors `G ~ V^T V` and maps its columns to `x*, x^0, g^k`; the iterates
/// are rebuilt as `x^k = x^{k-1} - gamma g^k`.
pub fn reconstruct(spec: &PepSpec, gram: &SymmetricMatrix) -> Result<Reconstruction> {
    spec.validate()?;
    if gram.order() != spec.order() {
        return Err(Error::DimensionMismatch { expected: spec.order(), found: gram.order() });
    }
    let f = low_rank_factor(gram, RANK_REL_TOL)?;
    let dim = f.rank.max(1);
    let col = |j: usize| -> Point {
        if f.rank == 0 {
            Point::zeros(dim)
        } else {
            Point::from_vector(f.v.column(j).into_owned())
        }
    };
    let x_star = col(0);
    let gvals: Vec<Point> = (0..=spec.n).map(|k| col(2 + k)).collect();
    let mut points = vec![col(1)];
    for k in 1..=spec.n {
        let next = &points[k - 1] - &(&gvals[k] * spec.gamma);
        points.push(next);
    }
    let mut rec = Reconstruction {
        x_star,
        points,
        gvals,
        rank: f.rank,
        factor_error: f.error,
        interpolation: InterpolationReport { rho: spec.rho, ok: true, violations: vec![], min_slack: f64::INFINITY },
    };
    rec.interpolation = check_interpolable(&rec.dataset()?, spec.rho, RECONSTRUCTION_TOL)?;
    Ok(rec)
}

/// Per-iterate `rho ||g|| / ||x - x*||` and `-<g, x - x*> / (||g|| ||x - x*||)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAnalysis {
    /// Iterate indices that were kept.
    pub indices: Vec<usize>,
    pub norm_ratio: Vec<f64>,
    pub cosine: Vec<f64>,
    pub std_norm_ratio: f64,
    pub std_cosine: f64,
    /// Indices with `g = 0` or `x = x*`, left out.
    pub skipped: Vec<usize>,
}

/// Population standard deviation; `0` for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Analyzes the pairs `(points[k], gvals[k])` for `k in indices`.
pub fn analyze_pairs(
    x_star: &Point,
    points: &[Point],
    gvals: &[Point],
    indices: impl IntoIterator<Item = usize>,
    rho: f64,
) -> Result<TrajectoryAnalysis> {
    let mut out = TrajectoryAnalysis {
        indices: vec![],
        norm_ratio: vec![],
        cosine: vec![],
        std_norm_ratio: 0.0,
        std_cosine: 0.0,
        skipped: vec![],
    };
    for k in indices {
        let (x, g) = match (points.get(k), gvals.get(k)) {
            (Some(x), Some(g)) => (x, g),
            _ => return Err(Error::InvalidParameter(format!("iterate {k} out of range"))),
        };
        let d = x - x_star;
        let (nd, ng) = (d.norm(), g.norm());
        if nd == 0.0 || ng == 0.0 {
            out.skipped.push(k);
            continue;
        }
        out.indices.push(k);
        out.norm_ratio.push(rho * ng / nd);
        out.cosine.push(-g.dot(&d) / (ng * nd));
    }
    out.std_norm_ratio = std_dev(&out.norm_ratio);
    out.std_cosine = std_dev(&out.cosine);
    Ok(out)
}

/// Analysis of `k = 1..N`; `g^0` is not tied to the recursion in the SDP, so
/// it is left out.
pub fn analyze_reconstruction(spec: &PepSpec, rec: &Reconstruction) -> Result<TrajectoryAnalysis> {
    analyze_pairs(&rec.x_star, &rec.points, &rec.gvals, 1..=spec.n, spec.rho)
}

/// Analysis of every iterate of a trace with a reference solution.
pub fn analyze_trace(trace: &Trace, rho: f64) -> Result<TrajectoryAnalysis> {
    let star = trace.reference.as_ref().ok_or(Error::MissingReference)?;
    analyze_pairs(star, &trace.x, &trace.f_x, 0..trace.x.len(), rho)
}

/// `rho / sqrt(N gamma (gamma - 2 rho))`, the constant value of both
/// analysis arrays on the rotation built for horizon `N`.
pub fn predicted_ratio(n: usize, gamma: f64, rho: f64) -> f64 {
    rho / (n as f64 * gamma * (gamma - 2.0 * rho)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PepResult {
    pub spec: PepSpec,
    /// Worst-case `||x^N - x^{N-1}||^2`.
    pub value: f64,
    pub units: String,
    pub solution: GramSolution,
    pub rank: usize,
    /// Trace penalty of the Lagrangian form, when the trace heuristic used it.
    pub penalty: Option<f64>,
    pub reconstructed: Option<Reconstruction>,
    pub analysis: Option<TrajectoryAnalysis>,
}

impl PepResult {
    fn assemble(spec: &PepSpec, solution: GramSolution, penalty: Option<f64>) -> Result<Self> {
        let rank = numerical_rank(&solution.gram, RANK_REL_TOL);
        let (reconstructed, analysis) = if solution.status == SolveStatus::Infeasible {
            (None, None)
        } else {
            let rec = reconstruct(spec, &solution.gram)?;
            let an = analyze_reconstruction(spec, &rec)?;
            (Some(rec), Some(an))
        };
        Ok(PepResult {
            spec: *spec,
            value: objective_matrix(spec).inner(&solution.gram),
            units: "sq_step".into(),
            solution,
            rank,
            penalty,
            reconstructed,
            analysis,
        })
    }

    /// Value converted to `||F(x^N)||^2`.
    pub fn value_sq_norm_f(&self) -> f64 {
        self.value / (self.spec.gamma * self.spec.gamma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn surface(solution: &GramSolution) -> Result<()> {
    match solution.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::MaxIter => Err(Error::Solver(format!(
            "no convergence after {} iterations (primal {:e}, dual {:e}, gap {:e})",
            solution.iterations, solution.primal_residual, solution.dual_residual, solution.gap
        ))),
        SolveStatus::Infeasible => Err(Error::Infeasible("the performance-estimation SDP is infeasible".into())),
    }
}

/// Solves the worst-case SDP; a solver that stops short is an error.
pub fn solve_pp_pep(spec: &PepSpec, opts: &SolverOptions) -> Result<PepResult> {
    let problem = build_pp_pep(spec)?;
    let solution = solve_with(&problem, opts)?;
    surface(&solution)?;
    PepResult::assemble(spec, solution, None)
}

/// Minimum-trace Gram matrix among those reaching `v_star`.
///
/// With `eps = None` the target is `v_star (1 - 1e-6)`. Fixing the objective
/// at a near-optimal level leaves the dual unbounded in the limit, which
/// stalls the splitting solver, so the target is reached through the
/// Lagrangian form instead: `max <M0, G> - tau Tr(G)` for `tau` shrinking
/// until the value meets the target. Its maximizer is the
/// minimum-trace matrix at the value it attains.
///
/// With `Some(eps)` the constraint `<M0, G> >= (1 - eps) v_star` is imposed
/// directly and the trace minimized.
///
/// An `Infeasible` status is returned as a result, not an error, since it is
/// the expected outcome of a `v_star` above the optimum.
pub fn trace_heuristic(spec: &PepSpec, v_star: f64, eps: Option<f64>, opts: &SolverOptions) -> Result<PepResult> {
    if !v_star.is_finite() {
        return Err(Error::NonFinite("v_star"));
    }
    let base = build_pp_pep(spec)?;
    match eps {
        None => penalized_trace(spec, base, v_star, opts),
        Some(e) => {
            if !(e.is_finite() && (0.0..=1.0).contains(&e)) {
                return Err(Error::InvalidParameter(format!("eps must lie in [0, 1], got {e}")));
            }
            let mut problem = SdpProblem::new(SymmetricMatrix::identity(spec.order()), Sense::Min);
            problem.inequalities = base.inequalities;
            problem.add_inequality(base.objective.scaled(-1.0), -(1.0 - e) * v_star);
            let solution = solve_with(&problem, opts)?;
            if solution.status == SolveStatus::MaxIter {
                surface(&solution)?;
            }
            PepResult::assemble(spec, solution, None)
        }
    }
}

/// Smallest penalty tried, relative to `||M0||_F`; below it the target is
/// declared out of reach.
const MIN_PENALTY: f64 = 1e-9;

fn penalized_trace(spec: &PepSpec, base: SdpProblem, v_star: f64, opts: &SolverOptions) -> Result<PepResult> {
    let scale = base.objective.frobenius_norm();
    let target = v_star * (1.0 - TRACE_DEFLATION);
    let id = SymmetricMatrix::identity(spec.order());
    let mut tau = 1e-2 * scale;
    let mut last = None;
    let mut warm = None;
    while tau >= MIN_PENALTY * scale {
        let mut problem = base.clone();
        problem.objective = base.objective.add(&id.scaled(-tau));
        // consecutive penalties share constraints, so each solve restarts from the last
        let (solution, state) = solve_warm(&problem, opts, warm.as_ref())?;
        warm = Some(state);
        surface(&solution)?;
        let value = base.objective.inner(&solution.gram);
        if value >= target {
            return PepResult::assemble(spec, solution, Some(tau));
        }
        // The value lost grows like tau^2; aim just inside the target,
        // shrinking by at least 10 and at most 1000 per step.
        let loss = (v_star - value) / v_star.abs().max(f64::MIN_POSITIVE);
        let step = (0.8 * (TRACE_DEFLATION / loss).sqrt()).clamp(1e-3, 0.1);
        tau *= if step.is_finite() { step } else { 0.1 };
        last = Some(solution);
    }
    let mut solution = last.expect("at least one penalty is tried");
    solution.status = SolveStatus::Infeasible;
    PepResult::assemble(spec, solution, None)
}

/// `gamma^2 alpha^2 (1 + 1/N)^{-(N+1)} R^2` with `alpha^2 = 1/(N gamma (gamma - 2 rho))`:
/// the squared step `||x^{N+1} - x^N||^2` of the rotation built for horizon `N`.
pub fn analytic_value(n: usize, gamma: f64, rho: f64, r: f64) -> f64 {
    let nf = n as f64;
    let alpha2 = 1.0 / (nf * gamma * (gamma - 2.0 * rho));
    gamma * gamma * alpha2 * (1.0 + 1.0 / nf).powf(-(nf + 1.0)) * r * r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticComparison {
    pub spec: PepSpec,
    pub pep_value: f64,
    /// Analytic value at the same `N`.
    pub analytic_value: f64,
    pub ratio: f64,
    /// Analytic value at `N - 1`, i.e. the rotation whose worst step is
    /// exactly the `N`-th; absent when `N - 1` is out of the construction's range.
    pub matched_value: Option<f64>,
    pub matched_ratio: Option<f64>,
    pub rank: usize,
    /// Set when `ratio < 1 - 1e-4`, which no correct solve can produce.
    pub flagged: bool,
    pub units: String,
}

pub fn compare_with_analytic(spec: &PepSpec, opts: &SolverOptions) -> Result<AnalyticComparison> {
    analytic_precondition(spec)?;
    let res = solve_pp_pep(spec, opts)?;
    compare_value(spec, res.value, res.rank)
}

/// Checks that the analytic construction exists at `spec.n`; returns its
/// lower limit on `N`.
pub fn analytic_precondition(spec: &PepSpec) -> Result<f64> {
    spec.validate()?;
    let min_n = if spec.rho > 0.0 { pp_worst_case_min_n(spec.rho, spec.gamma) } else { 1.0 };
    if (spec.n as f64) < min_n {
        return Err(Error::Regime(format!(
            "N >= max(rho^2/(gamma*(gamma-2*rho)), 1) = {min_n} is required for the analytic construction (N = {})",
            spec.n
        )));
    }
    Ok(min_n)
}

/// Compares an already computed worst-case value with the analytic one.
pub fn compare_value(spec: &PepSpec, pep_value: f64, rank: usize) -> Result<AnalyticComparison> {
    let min_n = analytic_precondition(spec)?;
    Ok(comparison_from(spec, pep_value, rank, min_n))
}

fn comparison_from(spec: &PepSpec, pep_value: f64, rank: usize, min_n: f64) -> AnalyticComparison {
    let analytic = analytic_value(spec.n, spec.gamma, spec.rho, spec.r);
    let matched = (spec.n >= 2 && (spec.n - 1) as f64 >= min_n)
        .then(|| analytic_value(spec.n - 1, spec.gamma, spec.rho, spec.r));
    let ratio = pep_value / analytic;
    AnalyticComparison {
        spec: *spec,
        pep_value,
        analytic_value: analytic,
        ratio,
        matched_value: matched,
        matched_ratio: matched.map(|m| pep_value / m),
        rank,
        flagged: ratio < 1.0 - 1e-4,
        units: "sq_step".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub rho: f64,
    pub pep_value: f64,
    pub analytic_value: f64,
    pub ratio: f64,
    pub rank: usize,
}

/// One sweep job: solve, optionally follow with the trace heuristic (whose
/// rank is then reported), and compare with the analytic value.
pub fn sweep_job(spec: &PepSpec, opts: &SolverOptions, heuristic: bool) -> Result<(SweepRow, PepResult)> {
    let mut res = solve_pp_pep(spec, opts)?;
    let value = res.value;
    if heuristic {
        let h = trace_heuristic(spec, res.value, None, opts)?;
        if h.solution.status != SolveStatus::Optimal {
            return Err(Error::Solver(format!("trace heuristic ended with status {}", h.solution.status)));
        }
        res = h;
    }
    let analytic = analytic_value(spec.n, spec.gamma, spec.rho, spec.r);
    let row = SweepRow {
        n: spec.n,
        gamma: spec.gamma,
        rho: spec.rho,
        pep_value: value,
        analytic_value: analytic,
        ratio: value / analytic,
        rank: res.rank,
    };
    Ok((row, res))
}

/// Solves each spec independently, in parallel on the current rayon pool,
/// keeping input order.
pub fn sweep(specs: &[PepSpec], opts: &SolverOptions, heuristic: bool) -> Vec<Result<SweepRow>> {
    specs.par_iter().map(|s| sweep_job(s, opts, heuristic).map(|(row, _)| row)).collect()
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["N", "gamma", "rho", "pep_value", "analytic_value", "ratio", "rank"])?;
    for r in rows {
        wr.write_record([
            r.n.to_string(),
            fmt_f64(r.gamma),
            fmt_f64(r.rho),
            fmt_f64(r.pep_value),
            fmt_f64(r.analytic_value),
            fmt_f64(r.ratio),
            r.rank.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{LinearOperator, Operator};
    use crate::solvers::{run_pp_with, RunOptions};

    fn spec(n: usize) -> PepSpec {
        PepSpec::new(n, 0.5, 0.1, 1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn assembly_shape() {
        let p = build_pp_pep(&spec(1)).unwrap();
        assert_eq!(p.order(), 4);
        assert_eq!(p.inequalities.len(), 3 + 1);
        assert!(p.equalities.is_empty());
        let mut expected = SymmetricMatrix::zeros(4);
        expected.set(3, 3, 0.25);
        assert_eq!(p.objective, expected);
        assert_eq!(build_pp_pep(&spec(8)).unwrap().inequalities.len(), 10 * 9 / 2 + 1);
    }

    #[test]
    fn star_pair_constraint() {
        // pair (*, 1) of N = 1: -<g1, x0 - gamma g1 - x*> - rho ||g1||^2
        let s = spec(1);
        let p = build_pp_pep(&s).unwrap();
        let m = &p.inequalities[1];
        assert_eq!(m.rhs, 0.0);
        assert!((m.matrix.get(3, 3) - (s.gamma - s.rho)).abs() < 1e-15);
        assert!((m.matrix.get(1, 3) + 0.5).abs() < 1e-15);
        assert!((m.matrix.get(0, 3) - 0.5).abs() < 1e-15);
        assert_eq!(m.matrix.get(2, 3), 0.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(PepSpec::new(3, 0.2, 0.1, 1.0), Err(Error::Regime(_))));
        assert!(PepSpec::new(0, 0.5, 0.1, 1.0).is_err());
        assert!(PepSpec::new(3, 0.5, 0.1, 0.0).is_err());
    }

    #[test]
    fn gram_encoding_matches_vectors() {
        let s = spec(4);
        let op = LinearOperator::pp_worst_case(s.rho, s.gamma, 4).unwrap();
        let opts = RunOptions::with_reference(Point::zeros(2));
        let x0 = Point::new(vec![0.6, -0.8]).unwrap();
        let t = run_pp_with(&op, &x0, s.gamma, s.n, &opts).unwrap();
        let g = gram_from_trace(&t).unwrap();
        let p = build_pp_pep(&s).unwrap();
        let step = t.x[s.n].distance_squared(&t.x[s.n - 1]);
        assert!((p.objective.inner(&g) - step).abs() < 1e-10);
        assert!((p.inequalities.last().unwrap().matrix.inner(&g) - 1.0).abs() < 1e-10);
        assert!(p.max_violation(&g) < 1e-10);
        let star = t.reference.clone().unwrap();
        let pts = |i: Option<usize>| match i {
            None => (star.clone(), Point::zeros(2)),
            Some(k) => (t.x[k].clone(), t.f_x[k].clone()),
        };
        let labels = point_labels(s.n);
        let mut c = 0;
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                let (xi, gi) = pts(labels[i]);
                let (xj, gj) = pts(labels[j]);
                let dg = &gi - &gj;
                let direct = -dg.dot(&(&xi - &xj)) - s.rho * dg.norm_squared();
                assert!((p.inequalities[c].matrix.inner(&g) - direct).abs() < 1e-10);
                c += 1;
            }
        }
    }

    #[test]
    fn frozen_values() {
        let opts = SolverOptions::default();
        for (n, v) in [(1, 1.5625), (3, 0.24691358024691365), (5, 0.13653333333333337)] {
            let r = solve_pp_pep(&spec(n), &opts).unwrap();
            assert!(rel(r.value, v) < 1e-5, "N={n}: {} vs {v}", r.value);
        }
    }

    #[test]
    fn matched_analytic_is_tight() {
        let r = compare_with_analytic(&spec(3), &SolverOptions::default()).unwrap();
        assert!(!r.flagged && r.ratio > 1.0);
        assert!((r.matched_ratio.unwrap() - 1.0).abs() < 1e-5, "{:?}", r);
    }

    #[test]
    fn trace_heuristic_controls() {
        let s = spec(3);
        let opts = SolverOptions::default();
        let zero = trace_heuristic(&s, 0.24691358024691365, Some(1.0), &opts).unwrap();
        assert!(zero.solution.gram.trace().abs() < 1e-6);
        let over = trace_heuristic(&s, 0.5, None, &opts).unwrap();
        assert_eq!(over.solution.status, SolveStatus::Infeasible);
        assert!(over.reconstructed.is_none());
    }

    #[test]
    fn trace_heuristic_is_planar() {
        let s = spec(5);
        let opts = SolverOptions::default();
        let r = solve_pp_pep(&s, &opts).unwrap();
        let h = trace_heuristic(&s, r.value, None, &opts).unwrap();
        assert_eq!(h.solution.status, SolveStatus::Optimal);
        assert!(h.rank <= r.rank);
        assert_eq!(h.rank, 2);
        let rec = h.reconstructed.as_ref().unwrap();
        assert!(rec.interpolation.ok);
        let an = h.analysis.as_ref().unwrap();
        assert!(an.std_norm_ratio < 1e-5 && an.std_cosine < 1e-5, "{an:?}");
        assert!(h.value >= r.value * (1.0 - 2e-6));
        assert!(rel(an.cosine[0], predicted_ratio(s.n - 1, s.gamma, s.rho)) < 1e-3);
    }

    #[test]
    fn analytic_trajectory_is_constant() {
        let (rho, gamma, n) = (0.1, 0.5, 40);
        let op = LinearOperator::pp_worst_case(rho, gamma, n).unwrap();
        let x0 = Point::new(vec![1.0, 0.0]).unwrap();
        let t = run_pp_with(&op, &x0, gamma, n + 1, &RunOptions::with_reference(Point::zeros(2))).unwrap();
        let an = analyze_trace(&t, rho).unwrap();
        let want = predicted_ratio(n, gamma, rho);
        assert!(an.std_norm_ratio < 1e-12 && an.std_cosine < 1e-12);
        assert!(rel(an.norm_ratio[0], want) < 1e-10 && rel(an.cosine[0], want) < 1e-10);
        let _ = op.dim();
    }

    #[test]
    fn stationary_trajectory_is_skipped() {
        let z = Point::zeros(2);
        let an = analyze_pairs(&z, &[z.clone(), z.clone()], &[z.clone(), z.clone()], 0..2, 0.1).unwrap();
        assert!(an.norm_ratio.is_empty());
        assert_eq!(an.skipped, vec![0, 1]);
    }

    #[test]
    fn sweep_csv_and_json() {
        let rows: Vec<SweepRow> =
            sweep(&[spec(2), spec(3)], &SolverOptions::default(), false).into_iter().collect::<Result<_>>().unwrap();
        assert_eq!(rows[0].n, 2);
        let with_h = sweep(&[spec(4)], &SolverOptions::default(), true).pop().unwrap().unwrap();
        assert_eq!(with_h.rank, 2);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,gamma,rho,pep_value,analytic_value,ratio,rank\n"));
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_sweep_csv(text.as_bytes()).unwrap(), rows);
        let res = solve_pp_pep(&spec(2), &SolverOptions::default()).unwrap();
        let back = PepResult::from_json(&res.to_json().unwrap()).unwrap();
        assert_eq!(back.value, res.value);
        let v: serde_json::Value = serde_json::from_str(&res.to_json().unwrap()).unwrap();
        assert_eq!(v["spec"]["N"], 2);
    }
}
