//! Interpolation by negatively comonotone operators.
//!
//! A finite set of pairs `(x^i, g^i)` extends to a maximal `rho`-negative
//! comonotone operator exactly when
//!
//! ```text
//! <g^i - g^j, x^i - x^j> >= -rho ||g^i - g^j||^2   for all i, j.
//! ```
//!
//! Replacing `x^i` by `x^i + rho g^i` turns this into plain monotonicity, which
//! is what [`shift_to_monotone`] does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Point;
use crate::solvers::Trace;

pub const DEFAULT_INTERPOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub x: Point,
    pub g: Point,
}

/// Pairs `(x, g)` of a common dimension. `star_index`, when set, marks a pair
/// with `g = 0` exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationDataset {
    dim: usize,
    pairs: Vec<Pair>,
    star_index: Option<usize>,
}

impl InterpolationDataset {
    pub fn new(pairs: Vec<Pair>, star_index: Option<usize>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidParameter("an interpolation dataset needs at least one pair".into()))?;
        let dim = first.x.dim();
        for p in &pairs {
            p.x.check_dim(dim)?;
            p.g.check_dim(dim)?;
        }
        if let Some(s) = star_index {
            let pair = pairs
                .get(s)
                .ok_or_else(|| Error::InvalidParameter(format!("star_index {s} out of range")))?;
            if pair.g.coords().iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidParameter(format!("pair {s} is marked as a solution but g != 0")));
            }
        }
        Ok(InterpolationDataset { dim, pairs, star_index })
    }

    /// Collects `(x^k, F(x^k))` and, for EG/OG, `(x~^k, F(x~^k))` from a trace.
    /// A reference solution, when present, is appended as the star pair.
    pub fn from_trace(trace: &Trace) -> Result<Self> {
        let mut pairs: Vec<Pair> = trace
            .x
            .iter()
            .zip(&trace.f_x)
            .chain(trace.x_tilde.iter().zip(&trace.f_x_tilde))
            .map(|(x, g)| Pair { x: x.clone(), g: g.clone() })
            .collect();
        let star = trace.reference.as_ref().map(|r| {
            pairs.push(Pair { x: r.clone(), g: Point::zeros(r.dim()) });
            pairs.len() - 1
        });
        Self::new(pairs, star)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn star_index(&self) -> Option<usize> {
        self.star_index
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Deserialize)]
struct DatasetRecord {
    dim: usize,
    pairs: Vec<Pair>,
    #[serde(default)]
    star_index: Option<usize>,
}

impl<'de> Deserialize<'de> for InterpolationDataset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let rec = DatasetRecord::deserialize(d)?;
        let ds = InterpolationDataset::new(rec.pairs, rec.star_index).map_err(D::Error::custom)?;
        if ds.dim != rec.dim {
            return Err(D::Error::custom(format!("declared dim {} but points have dim {}", rec.dim, ds.dim)));
        }
        Ok(ds)
    }
}

/// A pair `i < j` whose slack is below `-tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub i: usize,
    pub j: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub rho: f64,
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// Smallest slack over all pairs; `+inf` for a single pair.
    #[serde(with = "crate::operators::infinite_as_null")]
    pub min_slack: f64,
}

/// `<g_i - g_j, x_i - x_j> + rho ||g_i - g_j||^2`.
pub fn pair_slack(a: &Pair, b: &Pair, rho: f64) -> f64 {
    let dg = &a.g - &b.g;
    let dx = &a.x - &b.x;
    dg.dot(&dx) + rho * dg.norm_squared()
}

/// Checks every unordered pair; `ok` iff all slacks are `>= -tol`.
pub fn check_interpolable(ds: &InterpolationDataset, rho: f64, tol: f64) -> Result<InterpolationReport> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {rho}")));
    }
    let mut violations = Vec::new();
    let mut min_slack = f64::INFINITY;
    for (i, a) in ds.pairs.iter().enumerate() {
        for (j, b) in ds.pairs.iter().enumerate().skip(i + 1) {
            let slack = pair_slack(a, b, rho);
            min_slack = min_slack.min(slack);
            if !(slack >= -tol) {
                violations.push(Violation { i, j, slack });
            }
        }
    }
    Ok(InterpolationReport { rho, ok: violations.is_empty(), violations, min_slack })
}

/// `(x, g) -> (x + rho g, g)`.
pub fn shift_to_monotone(ds: &InterpolationDataset, rho: f64) -> InterpolationDataset {
    shift(ds, rho)
}

/// `(x, g) -> (x - rho g, g)`, the inverse of [`shift_to_monotone`].
pub fn shift_from_monotone(ds: &InterpolationDataset, rho: f64) -> InterpolationDataset {
    shift(ds, -rho)
}

fn shift(ds: &InterpolationDataset, rho: f64) -> InterpolationDataset {
    let pairs = ds
        .pairs
        .iter()
        .map(|p| Pair { x: &p.x + &(&p.g * rho), g: p.g.clone() })
        .collect();
    InterpolationDataset { dim: ds.dim, pairs, star_index: ds.star_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{LinearOperator, Operator};
    use crate::solvers::{run_eg_with, run_pp_with, RunOptions, StepSizes};

    fn p(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    fn two_point() -> InterpolationDataset {
        InterpolationDataset::new(
            vec![Pair { x: p(&[0.0, 0.0]), g: p(&[0.0, 0.0]) }, Pair { x: p(&[1.0, 0.0]), g: p(&[-2.0, 0.0]) }],
            Some(0),
        )
        .unwrap()
    }

    #[test]
    fn single_pair_threshold() {
        let ds = two_point();
        for (rho, ok) in [(0.0, false), (0.49, false), (0.5, true), (0.7, true)] {
            assert_eq!(check_interpolable(&ds, rho, DEFAULT_INTERPOLATION_TOL).unwrap().ok, ok, "rho={rho}");
        }
        let rep = check_interpolable(&ds, 0.25, DEFAULT_INTERPOLATION_TOL).unwrap();
        assert_eq!(rep.violations, vec![Violation { i: 0, j: 1, slack: -1.0 }]);
    }

    #[test]
    fn shifted_boundary_has_zero_inner_product() {
        let shifted = shift_to_monotone(&two_point(), 0.5);
        assert_eq!(pair_slack(&shifted.pairs[0], &shifted.pairs[1], 0.0), 0.0);
        assert!(check_interpolable(&shifted, 0.0, 0.0).unwrap().ok);
    }

    #[test]
    fn zero_shift_is_identity_and_shift_inverts() {
        let ds = two_point();
        assert_eq!(shift_to_monotone(&ds, 0.0), ds);
        let back = shift_from_monotone(&shift_to_monotone(&ds, 0.5), 0.5);
        assert_eq!(back, ds);
    }

    #[test]
    fn linear_operator_samples_interpolate() {
        let rho = 0.1;
        let op = LinearOperator::pp_worst_case(rho, 0.5, 6).unwrap();
        let pts = [[1.0, 0.0], [0.3, -2.0], [-1.5, 0.7], [4.0, 4.0]];
        let pairs = pts
            .iter()
            .map(|c| {
                let x = p(c);
                let g = op.apply(&x).unwrap();
                Pair { x, g }
            })
            .collect();
        let ds = InterpolationDataset::new(pairs, None).unwrap();
        assert!(check_interpolable(&ds, rho, DEFAULT_INTERPOLATION_TOL).unwrap().ok);
        assert!(!check_interpolable(&ds, 0.5 * rho, DEFAULT_INTERPOLATION_TOL).unwrap().ok);
    }

    #[test]
    fn traces_yield_interpolable_datasets() {
        let rho = 0.1;
        let op = LinearOperator::pp_worst_case(rho, 0.5, 6).unwrap();
        let opts = RunOptions::with_reference(Point::zeros(2));
        let t = run_pp_with(&op, &p(&[1.0, 0.0]), 0.5, 6, &opts).unwrap();
        let ds = InterpolationDataset::from_trace(&t).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.star_index(), Some(7));
        assert!(check_interpolable(&ds, rho, DEFAULT_INTERPOLATION_TOL).unwrap().ok);

        let t = run_eg_with(&op, &p(&[1.0, 0.0]), StepSizes::new(0.4, 0.2).unwrap(), 6, &opts).unwrap();
        let ds = InterpolationDataset::from_trace(&t).unwrap();
        assert_eq!(ds.len(), 7 + 6 + 1);
        assert!(check_interpolable(&ds, rho, DEFAULT_INTERPOLATION_TOL).unwrap().ok);
    }

    #[test]
    fn dataset_validation() {
        assert!(InterpolationDataset::new(vec![], None).is_err());
        let bad = vec![Pair { x: p(&[0.0]), g: p(&[1.0, 2.0]) }];
        assert!(InterpolationDataset::new(bad, None).is_err());
        let nonzero_star = vec![Pair { x: p(&[0.0]), g: p(&[1.0]) }];
        assert!(InterpolationDataset::new(nonzero_star, Some(0)).is_err());
        assert!(InterpolationDataset::new(vec![Pair { x: p(&[0.0]), g: p(&[0.0]) }], Some(3)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = two_point();
        let s = ds.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["dim"], 2);
        assert_eq!(v["star_index"], 0);
        assert_eq!(v["pairs"][1]["g"][0], -2.0);
        assert_eq!(InterpolationDataset::from_json(&s).unwrap(), ds);
        let s = r#"{"dim": 3, "pairs": [{"x": [0.0], "g": [0.0]}], "star_index": null}"#;
        assert!(InterpolationDataset::from_json(s).is_err());
    }

    #[test]
    fn monotone_reduction() {
        let ds = InterpolationDataset::new(
            vec![Pair { x: p(&[0.0]), g: p(&[0.0]) }, Pair { x: p(&[1.0]), g: p(&[3.0]) }, Pair { x: p(&[2.0]), g: p(&[3.5]) }],
            None,
        )
        .unwrap();
        assert!(check_interpolable(&ds, 0.0, 0.0).unwrap().ok);
    }
}
