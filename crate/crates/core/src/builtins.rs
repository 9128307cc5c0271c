//! Small closed-form systems used for calibration, testing, and the oracle
//! suite. Each ships with a known zero at its base parameter level.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{DomainSpec, ParameterizedSystem, Point};

pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    pub system: ParameterizedSystem,
    pub start: Point,
}

fn scalar_system(
    f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    df_du: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    df_dl: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    domain: DomainSpec,
) -> ParameterizedSystem {
    ParameterizedSystem::new(
        1,
        Arc::new(move |l, u: &DVector<f64>| Ok(DVector::from_column_slice(&[f(l, u[0])]))),
        Arc::new(move |l, u: &DVector<f64>| {
            Ok(DMatrix::from_column_slice(1, 1, &[df_du(l, u[0])]))
        }),
        Arc::new(move |l, u: &DVector<f64>| Ok(DVector::from_column_slice(&[df_dl(l, u[0])]))),
        domain,
    )
}

/// F(lambda, u) = u^2 + lambda^2 - 1. The zero set is the unit circle; the
/// base slice at lambda = 0 carries zeros at u = +1 and u = -1 with opposite
/// indices.
pub fn circle() -> Builtin {
    let domain = DomainSpec::unbounded(1e3, 0.0, [-3.0, 3.0]).expect("valid default domain");
    Builtin {
        name: "circle",
        description: "u^2 + lambda^2 - 1: closed loop with folds at lambda = +/-1",
        system: scalar_system(
            |l, u| u * u + l * l - 1.0,
            |_, u| 2.0 * u,
            |l, _| 2.0 * l,
            domain,
        ),
        start: Point::new(0.0, DVector::from_column_slice(&[1.0])).expect("finite"),
    }
}

/// F(lambda, u) = u^2 - lambda. A quadratic fold at (0, 0); the default base
/// level sits at lambda = 1 where the slice has the two zeros u = +/-1.
pub fn fold() -> Builtin {
    let domain = DomainSpec::unbounded(1e3, 1.0, [-5.0, 5.0]).expect("valid default domain");
    Builtin {
        name: "fold",
        description: "u^2 - lambda: quadratic fold at the origin",
        system: scalar_system(|l, u| u * u - l, |_, u| 2.0 * u, |_, _| -1.0, domain),
        start: Point::new(1.0, DVector::from_column_slice(&[1.0])).expect("finite"),
    }
}

/// F(lambda, u) = lambda u - u^3. The trivial line u = 0 crosses the
/// parabola u^2 = lambda at the origin, where the total Jacobian is
/// rank-deficient.
pub fn pitchfork() -> Builtin {
    let domain = DomainSpec::unbounded(1e3, -1.0, [-3.0, 3.0]).expect("valid default domain");
    Builtin {
        name: "pitchfork",
        description: "lambda u - u^3: branch point at the origin",
        system: scalar_system(
            |l, u| l * u - u * u * u,
            |l, u| l - 3.0 * u * u,
            |_, u| u,
            domain,
        ),
        start: Point::new(-1.0, DVector::from_column_slice(&[0.0])).expect("finite"),
    }
}

/// F(lambda, u) = u - lambda. A straight unbounded branch.
pub fn line() -> Builtin {
    let domain = DomainSpec::unbounded(1e3, 0.0, [-10.0, 10.0]).expect("valid default domain");
    Builtin {
        name: "line",
        description: "u - lambda: single unbounded branch",
        system: scalar_system(|l, u| u - l, |_, _| 1.0, |_, _| -1.0, domain),
        start: Point::new(0.0, DVector::from_column_slice(&[0.0])).expect("finite"),
    }
}

pub const NAMES: [&str; 4] = ["circle", "fold", "pitchfork", "line"];

pub fn by_name(name: &str) -> Result<Builtin> {
    match name {
        "circle" => Ok(circle()),
        "fold" => Ok(fold()),
        "pitchfork" => Ok(pitchfork()),
        "line" => Ok(line()),
        other => Err(Error::Config(format!(
            "unknown builtin '{other}'; available: {}",
            NAMES.join(", ")
        ))),
    }
}

pub fn all() -> Vec<Builtin> {
    NAMES.iter().map(|n| by_name(n).expect("known name")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_are_zeros() {
        for b in all() {
            let res = b.system.residual_norm(&b.start).unwrap();
            assert!(res <= 1e-14, "{} start residual {res}", b.name);
        }
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(by_name("saddle").is_err());
    }
}
