//! Small dense semidefinite programs.
//!
//! Problems are posed over a symmetric Gram variable `G`:
//!
//! ```text
//! max / min  <M0, G>
//! s.t.       <A_i, G> <= b_i,  <E_j, G> = d_j,  G PSD
//! ```
//!
//! The solver is an alternating-direction method on the dual of the standard
//! form `min <c, w> s.t. A w = b, w in K`, with `w = (svec(G), s)`, slack
//! variables `s >= 0` for the inequalities and `K = S_+ x R_+`. Each iteration
//! costs one eigendecomposition (the projection onto `K`) and two products
//! with the constraint matrix; `A A^T` is factored once.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// A real symmetric matrix stored as its packed upper triangle, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix { n, upper: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Symmetrizes `(m + m^T) / 2`; rejects non-square or non-finite input
    /// and asymmetry beyond `1e-12` relative.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidParameter(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!("matrix is not symmetric (max asymmetry {asym:e})")));
        }
        let n = m.nrows();
        let mut s = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Ok(s)
    }

    /// `u v^T + v u^T` scaled by `scale / 2`, i.e. the symmetric part of `scale * u v^T`.
    pub fn sym_outer(u: &DVector<f64>, v: &DVector<f64>, scale: f64) -> Self {
        let n = u.len();
        let mut s = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, 0.5 * scale * (u[i] * v[j] + v[i] * u[j]));
            }
        }
        s
    }

    pub fn order(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] += v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `Tr(self * other)`.
    pub fn inner(&self, other: &SymmetricMatrix) -> f64 {
        assert_eq!(self.n, other.n, "matrix orders differ");
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let w = if i == j { 1.0 } else { 2.0 };
                acc += w * self.get(i, j) * other.get(i, j);
            }
        }
        acc
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymmetricMatrix { n: self.n, upper: self.upper.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Self {
        assert_eq!(self.n, other.n, "matrix orders differ");
        SymmetricMatrix { n: self.n, upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_dense().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// `svec`: upper triangle with off-diagonal entries scaled by `sqrt(2)`,
    /// so that `<A, B> = svec(A) . svec(B)`.
    fn svec(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.upper.len());
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                out[k] = if i == j { self.get(i, j) } else { SQRT2 * self.get(i, j) };
                k += 1;
            }
        }
        out
    }

    fn from_svec(n: usize, v: &[f64]) -> Self {
        let mut s = Self::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                s.set(i, j, if i == j { v[k] } else { v[k] / SQRT2 });
                k += 1;
            }
        }
        s
    }
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix rows must all have length equal to the number of rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        SymmetricMatrix::from_dense(&DMatrix::from_row_slice(n, n, &flat)).map_err(D::Error::custom)
    }
}

/// Projection onto the PSD cone: negative eigenvalues are clipped to zero.
pub fn project_psd(m: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let dense = project_psd_dense(m.to_dense())?;
    SymmetricMatrix::from_dense(&dense)
}

fn project_psd_dense(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m);
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigendecomposition did not converge".into()))?;
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0);
        scaled.column_mut(k).scale_mut(s);
    }
    let p = scaled * q.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

/// `V` (r x n) with `V^T V ~ G`, keeping eigenvalues above `rel_tol * lambda_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub v: DMatrix<f64>,
    pub rank: usize,
    /// `||V^T V - G||_F`.
    pub error: f64,
}

pub fn low_rank_factor(g: &SymmetricMatrix, rel_tol: f64) -> Result<LowRankFactor> {
    let n = g.order();
    let dense = g.to_dense();
    let eig = SymmetricEigen::try_new(dense.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam_max = order.first().map(|&k| eig.eigenvalues[k]).unwrap_or(0.0);
    let keep: Vec<usize> = if lam_max > 0.0 {
        order.into_iter().filter(|&k| eig.eigenvalues[k] > rel_tol * lam_max).collect()
    } else {
        Vec::new()
    };
    let rank = keep.len();
    let mut v = DMatrix::zeros(rank, n);
    for (r, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for j in 0..n {
            v[(r, j)] = s * eig.eigenvectors[(j, k)];
        }
    }
    let error = (v.transpose() * &v - dense).norm();
    Ok(LowRankFactor { v, rank, error })
}

/// Number of eigenvalues above `rel_tol * lambda_max`.
pub fn numerical_rank(g: &SymmetricMatrix, rel_tol: f64) -> usize {
    let ev = g.eigenvalues();
    let max = ev.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    ev.iter().filter(|&&l| l > rel_tol * max).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub matrix: SymmetricMatrix,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub objective: SymmetricMatrix,
    pub sense: Sense,
    /// `<A_i, G> <= b_i`.
    pub inequalities: Vec<Constraint>,
    /// `<E_j, G> = d_j`.
    pub equalities: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new(objective: SymmetricMatrix, sense: Sense) -> Self {
        SdpProblem { objective, sense, inequalities: Vec::new(), equalities: Vec::new() }
    }

    pub fn order(&self) -> usize {
        self.objective.order()
    }

    pub fn add_inequality(&mut self, matrix: SymmetricMatrix, rhs: f64) {
        self.inequalities.push(Constraint { matrix, rhs });
    }

    pub fn add_equality(&mut self, matrix: SymmetricMatrix, rhs: f64) {
        self.equalities.push(Constraint { matrix, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.order();
        if n == 0 {
            return Err(Error::InvalidParameter("SDP of order 0".into()));
        }
        if !self.objective.is_finite() {
            return Err(Error::NonFinite("SDP objective"));
        }
        for c in self.inequalities.iter().chain(&self.equalities) {
            if c.matrix.order() != n {
                return Err(Error::DimensionMismatch { expected: n, found: c.matrix.order() });
            }
            if !c.matrix.is_finite() || !c.rhs.is_finite() {
                return Err(Error::NonFinite("SDP constraint"));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint by `g`, in absolute terms.
    pub fn max_violation(&self, g: &SymmetricMatrix) -> f64 {
        let ineq = self.inequalities.iter().map(|c| (c.matrix.inner(g) - c.rhs).max(0.0));
        let eq = self.equalities.iter().map(|c| (c.matrix.inner(g) - c.rhs).abs());
        ineq.chain(eq).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: SdpProblem = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSolution {
    pub gram: SymmetricMatrix,
    /// `<M0, G>` in the problem's own sense.
    pub value: f64,
    /// Dual objective in the problem's own sense; a bound on `value` up to
    /// the dual residual.
    pub dual_value: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `||A w - b|| / (1 + ||b||)` on the row-normalized constraints.
    pub primal_residual: f64,
    /// `||c - A^T y - z|| / (1 + ||c||)`.
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-7, max_iter: 200_000 }
    }
}

/// Standard form data after row normalization and scaling.
struct StandardForm {
    n: usize,
    p: usize,
    m_ineq: usize,
    /// Constraint rows over `(svec(G), s)`, unit Euclidean norm each.
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    /// Objective sign: `+1` for min, `-1` for max.
    sign: f64,
}

impl StandardForm {
    fn build(problem: &SdpProblem) -> Result<Self> {
        let n = problem.order();
        let p = n * (n + 1) / 2;
        let m_ineq = problem.inequalities.len();
        let m = m_ineq + problem.equalities.len();
        let cols = p + m_ineq;
        let mut a = DMatrix::zeros(m, cols);
        let mut b = DVector::zeros(m);
        for (i, c) in problem.inequalities.iter().chain(&problem.equalities).enumerate() {
            let row = c.matrix.svec();
            a.view_mut((i, 0), (1, p)).copy_from(&row.transpose());
            if i < m_ineq {
                a[(i, p + i)] = 1.0;
            }
            b[i] = c.rhs;
        }
        for i in 0..m {
            let norm = a.row(i).norm();
            if norm == 0.0 {
                if b[i].abs() > 0.0 && (i >= m_ineq || b[i] < 0.0) {
                    return Err(Error::Infeasible(format!("constraint {i} reads 0 = {} or 0 <= {}", b[i], b[i])));
                }
                continue;
            }
            a.row_mut(i).scale_mut(1.0 / norm);
            b[i] /= norm;
        }
        let sign = match problem.sense {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        };
        let mut c = DVector::zeros(cols);
        c.rows_mut(0, p).copy_from(&(problem.objective.svec() * sign));
        Ok(StandardForm { n, p, m_ineq, a, b, c, sign })
    }

    fn project_cone(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let g = SymmetricMatrix::from_svec(self.n, &v.as_slice()[..self.p]).to_dense();
        let proj = project_psd_dense(g)?;
        let mut out = DVector::zeros(v.len());
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                out[k] = if i == j { proj[(i, j)] } else { SQRT2 * proj[(i, j)] };
                k += 1;
            }
        }
        for i in 0..self.m_ineq {
            out[self.p + i] = v[self.p + i].max(0.0);
        }
        Ok(out)
    }
}

/// Solves with default options.
pub fn solve(problem: &SdpProblem) -> Result<GramSolution> {
    solve_with(problem, &SolverOptions::default())
}

/// Runs the splitting method until the primal residual, dual residual and
/// relative gap all fall below `opts.tol`.
pub fn solve_with(problem: &SdpProblem, opts: &SolverOptions) -> Result<GramSolution> {
    solve_warm(problem, opts, None).map(|(sol, _)| sol)
}

/// Iterate state of a finished solve, for restarting on a problem with the
/// same constraints and a nearby objective.
#[derive(Debug, Clone)]
pub struct WarmStart {
    w: DVector<f64>,
    z: DVector<f64>,
    mu: f64,
}

/// [`solve_with`], optionally started from the state of an earlier solve
/// with the same constraints.
pub fn solve_warm(
    problem: &SdpProblem,
    opts: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<(GramSolution, WarmStart)> {
    problem.validate()?;
    if !(opts.tol.is_finite() && opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("tolerance must be positive and max_iter at least 1".into()));
    }
    let sf = StandardForm::build(problem)?;
    let m = sf.a.nrows();
    let cols = sf.a.ncols();

    let b_scale = sf.b.norm().max(1e-300);
    let b_scale = if sf.b.norm() > 0.0 { b_scale } else { 1.0 };
    let c_scale = if sf.c.norm() > 0.0 { sf.c.norm() } else { 1.0 };
    let bs = &sf.b / b_scale;
    let cs = &sf.c / c_scale;

    let aat = &sf.a * sf.a.transpose();
    let reg = 1e-12 * aat.diagonal().max().max(1.0);
    let chol = match Cholesky::new(aat.clone()) {
        Some(c) => c,
        None => Cholesky::new(aat + DMatrix::identity(m, m) * reg)
            .ok_or_else(|| Error::Solver("constraint Gram matrix is not positive definite".into()))?,
    };

    let mut w = DVector::<f64>::zeros(cols);
    let mut z = DVector::<f64>::zeros(cols);
    let mut y = DVector::<f64>::zeros(m);
    let mut mu = 1.0_f64;
    if let Some(ws) = warm.filter(|ws| ws.w.len() == cols) {
        // stored unscaled; w is in units of b, z in units of c
        w = &ws.w / b_scale;
        z = &ws.z / c_scale;
        mu = ws.mu;
    }

    let check_every = 10;
    let inf_window = 500;
    let mut y_anchor = y.clone();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = opts.max_iter;
    let mut balance = 0i32;
    let mut res = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for it in 1..=opts.max_iter {
        // y-update
        let rhs = &bs * mu - &sf.a * (&w * mu - &cs + &z);
        y = chol.solve(&rhs);
        let aty = sf.a.tr_mul(&y);
        let v = &cs - &aty - &w * mu;
        let z_new = sf.project_cone(&v)?;
        let w_new = (&z_new - &v) / mu;

        if it % check_every == 0 || it == opts.max_iter {
            let pinf = (&sf.a * &w_new - &bs).norm() / (1.0 + bs.norm());
            let dinf = mu * (&w_new - &w).norm() / (1.0 + cs.norm());
            let pobj = cs.dot(&w_new);
            let dobj = bs.dot(&y);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            res = (pinf, dinf, gap);
            if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
                w = w_new;
                z = z_new;
                status = SolveStatus::Optimal;
                iterations = it;
                break;
            }
            // Penalty balancing: mu weighs the primal residual.
            if pinf > 5.0 * dinf {
                balance = balance.max(0) + 1;
            } else if dinf > 5.0 * pinf {
                balance = balance.min(0) - 1;
            } else {
                balance = 0;
            }
            if balance >= 5 {
                mu = (mu * 1.5).min(1e6);
                balance = 0;
            } else if balance <= -5 {
                mu = (mu / 1.5).max(1e-6);
                balance = 0;
            }
        }
        w = w_new;
        z = z_new;

        if it % inf_window == 0 {
            let dy = &y - &y_anchor;
            y_anchor = y.clone();
            if infeasibility_certificate(&sf, &bs, &dy)? {
                status = SolveStatus::Infeasible;
                iterations = it;
                break;
            }
        }
    }

    let x_part = (&w * b_scale).rows(0, sf.p).into_owned();
    let gram = SymmetricMatrix::from_svec(sf.n, x_part.as_slice());
    let value = problem.objective.inner(&gram);
    let dual_value = sf.sign * bs.dot(&y) * b_scale * c_scale;
    let state = WarmStart { w: &w * b_scale, z: &z * c_scale, mu };
    let solution = GramSolution {
        gram,
        value,
        dual_value,
        status,
        iterations,
        primal_residual: res.0,
        dual_residual: res.1,
        gap: res.2,
    };
    Ok((solution, state))
}

/// A dual ray `d` with `b^T d > 0` and `A^T d` in `-K` proves the primal
/// infeasible. Tested on the drift of `y` over a window.
fn infeasibility_certificate(sf: &StandardForm, bs: &DVector<f64>, dy: &DVector<f64>) -> Result<bool> {
    let norm = dy.norm();
    if norm < 1e-8 {
        return Ok(false);
    }
    let d = dy / norm;
    let bd = bs.dot(&d);
    if bd <= 1e-8 {
        return Ok(false);
    }
    let atd = sf.a.tr_mul(&d);
    // distance of A^T d from -K equals the norm of its projection onto K
    let violation = sf.project_cone(&atd)?.norm();
    Ok(violation <= 1e-6 * bd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn unit(n: usize, i: usize, j: usize) -> SymmetricMatrix {
        let mut m = SymmetricMatrix::zeros(n);
        m.set(i, j, if i == j { 1.0 } else { 0.5 });
        m
    }

    #[test]
    fn packed_storage() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let s = SymmetricMatrix::from_dense(&d).unwrap();
        assert_eq!(s.to_dense(), d);
        assert_eq!(s.get(2, 0), 3.0);
        assert_eq!(s.trace(), 11.0);
        assert!(close(s.inner(&s), d.component_mul(&d).sum(), 1e-15));
        let sv = s.svec();
        assert!(close(sv.dot(&sv), s.inner(&s), 1e-15));
        assert_eq!(SymmetricMatrix::from_svec(3, sv.as_slice()), s);
        assert!(SymmetricMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn psd_projection_examples() {
        let d = SymmetricMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0])).unwrap();
        let p = project_psd(&d).unwrap();
        assert!(close(p.get(0, 0), 1.0, 1e-15) && p.get(1, 1).abs() < 1e-15);

        let x = SymmetricMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let p = project_psd(&x).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            assert!(close(p.get(i, j), 0.5, 1e-14));
        }

        let psd = SymmetricMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let p = project_psd(&psd).unwrap();
        assert!(p.add(&psd.scaled(-1.0)).frobenius_norm() < 1e-12);
        let pp = project_psd(&p).unwrap();
        assert!(pp.add(&p.scaled(-1.0)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn low_rank_examples() {
        let ones = SymmetricMatrix::from_dense(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        let f = low_rank_factor(&ones, 1e-6).unwrap();
        assert_eq!(f.rank, 1);
        assert!(close(f.v[(0, 0)].abs(), 1.0, 1e-12) && close(f.v[(0, 1)], f.v[(0, 0)], 1e-12));
        let id = SymmetricMatrix::identity(3);
        assert_eq!(low_rank_factor(&id, 1e-6).unwrap().rank, 3);
        let zero = SymmetricMatrix::zeros(3);
        let f = low_rank_factor(&zero, 1e-6).unwrap();
        assert_eq!(f.rank, 0);
        assert_eq!(f.v.nrows(), 0);
    }

    #[test]
    fn scalar_problem() {
        let mut p = SdpProblem::new(SymmetricMatrix::identity(1), Sense::Max);
        p.add_inequality(SymmetricMatrix::identity(1), 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(close(s.value, 1.0, 1e-6), "{}", s.value);
    }

    #[test]
    fn diagonal_box() {
        let mut p = SdpProblem::new(SymmetricMatrix::identity(2), Sense::Max);
        p.add_inequality(unit(2, 0, 0), 1.0);
        p.add_inequality(unit(2, 1, 1), 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(close(s.value, 2.0, 1e-6), "{}", s.value);
        assert!(p.max_violation(&s.gram) <= 1e-6);
        assert!(s.gram.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn off_diagonal_needs_psd() {
        // max 2 G12 s.t. G11 <= 1, G22 <= 4: optimum 2 * sqrt(1 * 4) = 4 via PSD coupling.
        let mut obj = SymmetricMatrix::zeros(2);
        obj.set(0, 1, 1.0);
        let mut p = SdpProblem::new(obj, Sense::Max);
        p.add_inequality(unit(2, 0, 0), 1.0);
        p.add_inequality(unit(2, 1, 1), 4.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(close(s.value, 4.0, 1e-6), "{}", s.value);
        assert!(close(s.dual_value, 4.0, 1e-5), "{}", s.dual_value);
    }

    #[test]
    fn min_with_equality() {
        // min Tr(G) s.t. G12 = 1: optimum 2 at G = [[1,1],[1,1]].
        let mut p = SdpProblem::new(SymmetricMatrix::identity(2), Sense::Min);
        let mut e = SymmetricMatrix::zeros(2);
        e.set(0, 1, 0.5);
        p.add_equality(e, 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(close(s.value, 2.0, 1e-6), "{}", s.value);
        assert_eq!(numerical_rank(&s.gram, 1e-4), 1);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = SdpProblem::new(SymmetricMatrix::identity(1), Sense::Max);
        p.add_inequality(SymmetricMatrix::identity(1), 1.0);
        p.add_equality(SymmetricMatrix::identity(1), 2.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);

        // G PSD with G11 = -1 is infeasible through the cone alone.
        let mut p = SdpProblem::new(SymmetricMatrix::identity(2), Sense::Min);
        p.add_equality(unit(2, 0, 0), -1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn max_iter_status() {
        let mut obj = SymmetricMatrix::zeros(2);
        obj.set(0, 1, 1.0);
        let mut p = SdpProblem::new(obj, Sense::Max);
        p.add_inequality(unit(2, 0, 0), 1.0);
        p.add_inequality(unit(2, 1, 1), 4.0);
        let s = solve_with(&p, &SolverOptions { tol: 1e-12, max_iter: 3 }).unwrap();
        assert_eq!(s.status, SolveStatus::MaxIter);
        assert_eq!(s.iterations, 3);
    }

    #[test]
    fn deterministic() {
        let mut obj = SymmetricMatrix::zeros(3);
        obj.set(0, 2, 1.0);
        obj.set(1, 1, 0.3);
        let mut p = SdpProblem::new(obj, Sense::Max);
        for i in 0..3 {
            p.add_inequality(unit(3, i, i), 1.0 + i as f64);
        }
        assert_eq!(solve(&p).unwrap(), solve(&p).unwrap());
    }

    #[test]
    fn problem_json_round_trip() {
        let mut p = SdpProblem::new(SymmetricMatrix::identity(2), Sense::Max);
        p.add_inequality(unit(2, 0, 1), 1.0);
        let s = p.to_json().unwrap();
        assert_eq!(SdpProblem::from_json(&s).unwrap(), p);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["objective"][1][1], 1.0);
        assert_eq!(v["sense"], "max");
    }
}
