use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use comonotone_core::bounds::{
    check_trace, counterexample_certificates, eg_last_iterate_tightest, iteration_matrix, og_descent_matrix_certificate,
    pp_bound, spectral_radius, stepsize_admissible, BoundKind, BoundSpec,
};
use comonotone_core::interpolation::{check_interpolable, shift_to_monotone, InterpolationDataset};
use comonotone_core::operators::{LinearOperator, DEFAULT_CERTIFY_TOL};
use comonotone_core::pep::{compare_value, analytic_precondition, sweep_job, write_sweep_csv, PepResult, PepSpec, SweepRow};
use comonotone_core::sdp::SolverOptions;
use comonotone_core::solvers::{fmt_f64, residual_series};
use comonotone_core::{run as run_method, Error, Method, Operator, Point, Result, RunOptions, StepSizes, Trace};

use crate::opspec::{parse_number, parse_operator};
use crate::output::{write_atomic, write_text};
use crate::{BoundsArgs, CertifyTarget, CounterexampleArgs, InterpolateArgs, PepArgs, RunArgs, StepArgs};

/// Relative agreement required between a worst-case run and its closed form.
const CLOSED_FORM_TOL: f64 = 1e-9;

/// Steps used to observe growth on a divergence construction.
const GROWTH_STEPS: usize = 60;

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_point(s: &str) -> Result<Point> {
    let coords = s.split(',').map(parse_number).collect::<Result<Vec<_>>>()?;
    Point::new(coords)
}

fn resolve_steps(method: Method, s: &StepArgs) -> Result<StepSizes> {
    match (method, s.gamma, s.gamma1, s.gamma2) {
        (Method::Pp, Some(g), None, None) | (Method::Pp, None, Some(g), None) => StepSizes::single(g),
        (Method::Pp, ..) => Err(Error::Parse("pp takes a single stepsize: --gamma".into())),
        (_, Some(g), None, None) => StepSizes::single(g),
        (_, None, Some(g1), Some(g2)) => StepSizes::new(g1, g2),
        _ => Err(Error::Parse(format!("{method} takes --gamma, or both --gamma1 and --gamma2"))),
    }
}

fn kinds_for(method: Method) -> &'static [BoundKind] {
    match method {
        Method::Pp => &[BoundKind::BestIterate, BoundKind::LastIterate],
        Method::Eg => &[
            BoundKind::BestIterate,
            BoundKind::BestIterateTilde,
            BoundKind::LastIterate,
            BoundKind::LastIterateRefined,
        ],
        Method::Og => &[BoundKind::BestIterateTilde, BoundKind::LastIterate],
    }
}

fn write_trace_files(dir: &Path, trace: &Trace) -> Result<()> {
    write_text(&dir.join("trace.json"), &trace.to_json()?)?;
    write_atomic(&dir.join("residuals.csv"), |w| trace.residuals().write_csv(w))
}

pub fn run(a: RunArgs) -> Result<u8> {
    let method = Method::from(a.method);
    let parsed = parse_operator(&a.op)?;
    let op = parsed.op;
    let dim = op.dim();
    let x0 = match &a.x0 {
        Some(s) => parse_point(s)?,
        None => Point::unit(dim, 0),
    };
    x0.check_dim(dim)?;
    let reference = match &a.reference {
        Some(s) => parse_point(s)?,
        None => Point::zeros(dim),
    };
    reference.check_dim(dim)?;
    let steps = resolve_steps(method, &a.steps)?;
    let trace = run_method(method, &op, &x0, steps, a.n, &RunOptions::with_reference(reference.clone()))
        .inspect_err(|e| {
            if matches!(e, Error::SingularResolvent { .. }) {
                eprintln!("note: I + gamma*F is singular when -1/gamma is an eigenvalue of F; for neg-scaling:rho=r that is gamma = r");
            }
        })?;
    write_trace_files(&a.out, &trace)?;
    let mut files = vec!["trace.json".to_string(), "residuals.csv".to_string()];

    let (_, cert) = op.certify_comonotone(0.0, DEFAULT_CERTIFY_TOL)?;
    let rho = a.rho.unwrap_or(cert.tightest_rho);
    let l = a.l.unwrap_or_else(|| op.lipschitz_constant());
    let r = x0.distance_squared(&reference).sqrt();

    // A linear iteration with spectral radius above one blows up generic
    // starting points; the flag also requires growth along this trace.
    let radius = spectral_radius(&iteration_matrix(method, &op.effective_matrix(), steps)?);
    let res = residual_series(&trace);
    let dist = res.dist_to_ref.as_ref().expect("the run has a reference");
    let grew = dist.last().copied().unwrap_or(0.0) > dist[0];
    let diverged = trace.diverged || (radius > 1.0 + 1e-9 && grew);

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut violated = false;
    for &kind in kinds_for(method) {
        let spec = BoundSpec { method, kind, rho, l, r, gamma1: steps.gamma1, gamma2: steps.gamma2, n: a.n };
        let reason = if !rho.is_finite() {
            Some("the operator is not negatively comonotone for any finite rho".to_string())
        } else if r == 0.0 {
            Some("x0 coincides with the reference".to_string())
        } else {
            let v = spec.regime_violations();
            (!v.is_empty()).then(|| v.join("; "))
        };
        if let Some(reason) = reason {
            skipped.push(json!({ "kind": kind.as_str(), "reason": reason }));
            continue;
        }
        let rep = check_trace(&trace, &spec, Some(&reference))?;
        let stem = format!("bounds-{}", kind.as_str());
        write_text(&a.out.join(format!("{stem}.json")), &rep.to_json()?)?;
        write_atomic(&a.out.join(format!("{stem}.csv")), |w| rep.write_csv(w))?;
        files.push(format!("{stem}.json"));
        files.push(format!("{stem}.csv"));
        violated |= !rep.satisfied;
        reports.push(json!({
            "kind": kind.as_str(),
            "satisfied": rep.satisfied,
            "first_violation": rep.first_violation,
        }));
    }

    // The worst-case rotation meets the lower bound with equality after N + 1 steps.
    let mut closed_form = Value::Null;
    if let (Method::Pp, Some(wc)) = (method, parsed.worst_case) {
        if steps.gamma1 == wc.gamma && trace.len() == wc.n + 1 && !trace.diverged && r > 0.0 {
            let expected = pp_bound(BoundKind::LowerBound, wc.gamma, wc.rho, r, wc.n)?;
            let observed = res.sq_norm_f[wc.n + 1];
            let rel_error = (observed - expected).abs() / expected;
            let matches = rel_error <= CLOSED_FORM_TOL;
            violated |= !matches;
            closed_form = json!({
                "N": wc.n,
                "observed_sq_norm_F": observed,
                "expected_sq_norm_F": expected,
                "rel_error": rel_error,
                "matches": matches,
            });
        } else {
            skipped.push(json!({
                "kind": BoundKind::LowerBound.as_str(),
                "reason": format!("attained only with gamma = {} and N = {} steps", wc.gamma, wc.n + 1),
            }));
        }
    }

    let code = if diverged || violated { 3 } else { 0 };
    print_json(&json!({
        "method": method.as_str(),
        "operator": op.kind().as_str(),
        "dim": dim,
        "gamma1": steps.gamma1,
        "gamma2": steps.gamma2,
        "requested": a.n,
        "completed": trace.len(),
        "diverged": diverged,
        "failure": trace.failure,
        "spectral_radius": radius,
        "rho": rho,
        "L": l,
        "R": r,
        "final_sq_norm_F": res.sq_norm_f.last(),
        "bounds": reports,
        "skipped": skipped,
        "closed_form": closed_form,
        "out": a.out.display().to_string(),
        "files": files,
        "exit_code": code,
    }))?;
    Ok(code)
}

pub fn bounds(a: BoundsArgs) -> Result<u8> {
    let method = Method::from(a.method);
    if let Some(path) = &a.trace {
        return bounds_on_trace(&a, method, path);
    }
    let steps = resolve_steps(method, &a.steps)?;
    let Some(kind) = &a.kind else {
        let rep = stepsize_admissible(method, steps.gamma1, steps.gamma2, a.rho, a.l);
        print_json(&serde_json::to_value(&rep)?)?;
        return Ok(if rep.has_guarantee() { 0 } else { 2 });
    };
    let kind: BoundKind = kind.parse()?;
    let l = match (method, a.l) {
        (Method::Pp, l) => l.unwrap_or(f64::NAN),
        (_, Some(l)) => l,
        (_, None) => return Err(Error::Parse(format!("{method} bounds need --L"))),
    };
    let spec = BoundSpec { method, kind, rho: a.rho, l, r: a.r, gamma1: steps.gamma1, gamma2: steps.gamma2, n: a.n };
    let value = spec.evaluate()?;
    let mut out = json!({ "spec": spec, "value": value });
    // Both EG last-iterate forms exist; report the smaller when both apply.
    if method == Method::Eg
        && matches!(kind, BoundKind::LastIterate | BoundKind::LastIterateRefined)
        && steps.is_equal()
    {
        if let Ok(t) = eg_last_iterate_tightest(steps.gamma1, a.rho, l, a.r, a.n) {
            out["tightest_last_iterate"] = json!(t);
        }
    }
    print_json(&out)?;
    Ok(0)
}

fn bounds_on_trace(a: &BoundsArgs, method: Method, path: &Path) -> Result<u8> {
    let trace = Trace::from_json(&std::fs::read_to_string(path)?)?;
    let steps = match (a.steps.gamma, a.steps.gamma1, a.steps.gamma2) {
        (None, None, None) => trace.steps,
        _ => resolve_steps(method, &a.steps)?,
    };
    let kind: BoundKind = a
        .kind
        .as_deref()
        .ok_or_else(|| Error::Parse("--trace needs --kind".into()))?
        .parse()?;
    let l = match (method, a.l) {
        (_, Some(l)) => l,
        (Method::Pp, None) => 1.0,
        (_, None) => return Err(Error::Parse(format!("{method} bounds need --L"))),
    };
    let reference = match &a.reference {
        Some(s) => Some(parse_point(s)?),
        None => trace.reference.clone(),
    };
    let spec = BoundSpec { method, kind, rho: a.rho, l, r: a.r, gamma1: steps.gamma1, gamma2: steps.gamma2, n: trace.len() };
    let rep = check_trace(&trace, &spec, reference.as_ref())?;
    if let Some(dir) = &a.out {
        let stem = format!("bounds-{}", kind.as_str());
        write_text(&dir.join(format!("{stem}.json")), &rep.to_json()?)?;
        write_atomic(&dir.join(format!("{stem}.csv")), |w| rep.write_csv(w))?;
    }
    print_json(&json!({
        "kind": kind.as_str(),
        "in_regime": rep.in_regime,
        "regime_violations": rep.regime_violations,
        "satisfied": rep.satisfied,
        "first_violation": rep.first_violation,
        "rows": rep.rows.len(),
    }))?;
    Ok(if rep.satisfied { 0 } else { 3 })
}

/// `(||x^n||^2 / ||x^0||^2)^(1/n)` on the construction, after a run of
/// `GROWTH_STEPS` steps from the first unit vector.
fn observed_growth(method: Method, a: &CounterexampleArgs, rotation: bool) -> Result<f64> {
    let op = if rotation {
        LinearOperator::scaled_rotation(comonotone_core::operators::COUNTEREXAMPLE_ANGLE, a.l)?
    } else {
        LinearOperator::scaling(a.l, 2)?
    };
    let x0 = Point::unit(2, 0);
    let t = run_method(method, &op, &x0, StepSizes::new(a.gamma1, a.gamma2)?, GROWTH_STEPS, &RunOptions::default())?;
    let n = t.len();
    if n == 0 {
        return Ok(f64::NAN);
    }
    Ok((t.last().norm_squared() / x0.norm_squared()).powf(1.0 / n as f64))
}

pub fn certify(target: CertifyTarget) -> Result<u8> {
    let (pass, out) = match target {
        CertifyTarget::OgMatrix => {
            let c = og_descent_matrix_certificate();
            (c.holds, json!({ "target": "og-matrix", "certificate": c }))
        }
        CertifyTarget::EgCounterexample(a) => counterexample(Method::Eg, &a)?,
        CertifyTarget::OgCounterexample(a) => counterexample(Method::Og, &a)?,
        CertifyTarget::Comonotone { op, rho, tol } => {
            let parsed = parse_operator(&op)?;
            let (ok, cert) = parsed.op.certify_comonotone(rho, tol)?;
            (ok, json!({ "target": "comonotone", "operator": parsed.op.kind().as_str(), "certificate": cert }))
        }
    };
    let mut out = out;
    out["pass"] = json!(pass);
    print_json(&out)?;
    Ok(if pass { 0 } else { 3 })
}

fn counterexample(method: Method, a: &CounterexampleArgs) -> Result<(bool, Value)> {
    let c = counterexample_certificates(method, a.l, a.gamma1, a.gamma2)?;
    let rotation = c.construction == comonotone_core::bounds::Counterexample::Rotation;
    let growth = observed_growth(method, a, rotation)?;
    let target = format!("{}-counterexample", method.as_str());
    Ok((c.diverges, json!({ "target": target, "certificate": c, "observed_sq_growth": growth })))
}

pub fn interpolate(a: InterpolateArgs) -> Result<u8> {
    let ds = match (&a.data, &a.trace) {
        (Some(p), _) => InterpolationDataset::from_json(&std::fs::read_to_string(p)?)?,
        (None, Some(p)) => InterpolationDataset::from_trace(&Trace::from_json(&std::fs::read_to_string(p)?)?)?,
        (None, None) => return Err(Error::Parse("one of --data or --trace is required".into())),
    };
    let rep = check_interpolable(&ds, a.rho, a.tol)?;
    let mut out = json!({ "pairs": ds.len(), "report": rep });
    if let Some(path) = &a.shift_out {
        let shifted = shift_to_monotone(&ds, a.rho);
        write_text(path, &shifted.to_json()?)?;
        out["shifted_monotone"] = json!(check_interpolable(&shifted, 0.0, a.tol)?.ok);
    }
    print_json(&out)?;
    Ok(if rep.ok { 0 } else { 3 })
}

fn job_file_name(spec: &PepSpec) -> String {
    format!("pep_N{}_gamma{}_rho{}.json", spec.n, spec.gamma, spec.rho)
}

fn pep_summary(res: &PepResult, row: &SweepRow, compare: bool) -> Result<Value> {
    let mut v = json!({
        "spec": res.spec,
        "value": row.pep_value,
        "value_sq_norm_F": row.pep_value / (res.spec.gamma * res.spec.gamma),
        "units": "sq_step",
        "status": res.solution.status,
        "iterations": res.solution.iterations,
        "rank": res.rank,
        "penalty": res.penalty,
    });
    if let Some(an) = &res.analysis {
        v["std_norm_ratio"] = json!(an.std_norm_ratio);
        v["std_cosine"] = json!(an.std_cosine);
    }
    if compare {
        v["comparison"] = serde_json::to_value(compare_value(&res.spec, row.pep_value, res.rank)?)?;
    }
    Ok(v)
}

pub fn pep(a: PepArgs) -> Result<u8> {
    let mut specs = Vec::new();
    for &gamma in &a.gamma {
        for &n in &a.n {
            specs.push(PepSpec::new(n, gamma, a.rho, a.r)?);
        }
    }
    if a.compare_analytic {
        for s in &specs {
            analytic_precondition(s)?;
        }
    }
    let opts = SolverOptions { tol: a.tol, max_iter: a.max_iter };
    let job = |s: &PepSpec| -> Result<(SweepRow, PepResult)> {
        let (row, res) = sweep_job(s, &opts, a.trace_heuristic)?;
        if let Some(dir) = &a.json_dir {
            write_text(&dir.join(job_file_name(s)), &res.to_json()?)?;
        }
        Ok((row, res))
    };
    let results: Vec<Result<(SweepRow, PepResult)>> = match a.jobs {
        Some(0) => return Err(Error::InvalidParameter("--jobs must be at least 1".into())),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot start {j} workers: {e}")))?
            .install(|| specs.par_iter().map(job).collect()),
        None => specs.par_iter().map(job).collect(),
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    if let [(row, res)] = results.as_slice() {
        if let Some(path) = &a.out {
            write_text(path, &res.to_json()?)?;
        }
        print_json(&pep_summary(res, row, a.compare_analytic)?)?;
        return Ok(0);
    }
    let rows: Vec<SweepRow> = results.into_iter().map(|(row, _)| row).collect();
    match &a.out {
        Some(path) => {
            write_atomic(path, |w| write_sweep_csv(&rows, w))?;
            let n_scaled: Vec<String> = rows.iter().map(|r| fmt_f64(r.pep_value * r.n as f64)).collect();
            print_json(&json!({ "rows": rows.len(), "out": path.display().to_string(), "value_times_N": n_scaled }))?;
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(0)
}
