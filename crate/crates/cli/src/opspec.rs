//! Operator mini-specs: `name:key=value,...`.
//!
//! | name            | keys                          |
//! |-----------------|-------------------------------|
//! | `pp-worst-case` | `rho`, `gamma`, `N`           |
//! | `neg-scaling`   | `rho`, `dim` (2)              |
//! | `rotation`      | `theta` (radians), `L` (1)    |
//! | `scaling`       | `L`, `dim` (2)                |
//! | `identity`      | `dim` (2)                     |
//! | `linear-file`   | `path` (operator JSON)        |
//!
//! Numbers may be written as multiples of pi: `pi`, `-pi/2`, `2pi/3`, `2*pi/3`.

use std::collections::BTreeMap;

use comonotone_core::operators::LinearOperator;
use comonotone_core::{Error, Result};

/// A parsed operator with the parameters of the worst-case construction,
/// when that is what was asked for.
pub struct ParsedOperator {
    pub op: LinearOperator,
    pub worst_case: Option<WorstCase>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub rho: f64,
    pub gamma: f64,
    pub n: usize,
}

pub fn parse_number(s: &str) -> Result<f64> {
    let t = s.trim();
    let bad = || Error::Parse(format!("cannot read '{s}' as a number"));
    let Some(at) = t.find("pi") else {
        return t.parse::<f64>().map_err(|_| bad());
    };
    let coef = t[..at].trim_end_matches('*');
    let coef = match coef {
        "" | "+" => 1.0,
        "-" => -1.0,
        c => c.parse::<f64>().map_err(|_| bad())?,
    };
    let rest = &t[at + 2..];
    let denom = match rest {
        "" => 1.0,
        r => r.strip_prefix('/').ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?,
    };
    let v = coef * std::f64::consts::PI / denom;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

struct Params<'a> {
    name: &'a str,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Params<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn num(&mut self, key: &str) -> Result<f64> {
        let v = self.take(key).ok_or_else(|| Error::Parse(format!("operator '{}' needs {key}=...", self.name)))?;
        parse_number(v)
    }

    fn num_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            Some(v) => parse_number(v),
            None => Ok(default),
        }
    }

    fn count(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match (self.take(key), default) {
            (Some(v), _) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("{key} must be a nonnegative integer, got '{v}'"))),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(Error::Parse(format!("operator '{}' needs {key}=...", self.name))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::Parse(format!("operator '{}' has no parameter '{k}'", self.name))),
            None => Ok(()),
        }
    }
}

pub fn parse_operator(spec: &str) -> Result<ParsedOperator> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n.trim(), r),
        None => (spec.trim(), ""),
    };
    let mut map = BTreeMap::new();
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got '{item}'")))?;
        if map.insert(k.trim(), v.trim()).is_some() {
            return Err(Error::Parse(format!("parameter '{}' given twice", k.trim())));
        }
    }
    let mut p = Params { name, map };
    let mut worst_case = None;
    let op = match name {
        "pp-worst-case" => {
            let (rho, gamma, n) = (p.num("rho")?, p.num("gamma")?, p.count("N", None)?);
            worst_case = Some(WorstCase { rho, gamma, n });
            LinearOperator::pp_worst_case(rho, gamma, n)?
        }
        "neg-scaling" => {
            let rho = p.num("rho")?;
            LinearOperator::negative_scaling(rho, p.count("dim", Some(2))?)?
        }
        "rotation" => {
            let theta = p.num("theta")?;
            LinearOperator::scaled_rotation(theta, p.num_or("L", 1.0)?)?
        }
        "scaling" => {
            let l = p.num("L")?;
            LinearOperator::scaling(l, p.count("dim", Some(2))?)?
        }
        "identity" => LinearOperator::identity(p.count("dim", Some(2))?)?,
        "linear-file" => {
            let path = p.take("path").ok_or_else(|| Error::Parse("operator 'linear-file' needs path=...".into()))?;
            LinearOperator::from_json(&std::fs::read_to_string(path)?)?
        }
        other => {
            return Err(Error::Parse(format!(
                "unknown operator '{other}' (expected pp-worst-case, neg-scaling, rotation, scaling, identity or linear-file)"
            )))
        }
    };
    p.finish()?;
    Ok(ParsedOperator { op, worst_case })
}
