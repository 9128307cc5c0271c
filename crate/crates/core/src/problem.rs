//! The abstract parameterized nonlinear system, its domain, and the
//! orientation convention shared by all other modules.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric;
use crate::oracles;

/// Relative tolerance for agreement between analytic and finite-difference
/// derivatives.
pub const CONSISTENCY_TOL: f64 = 1e-5;

/// A pair (lambda, u): the continuation parameter and the discretized state.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub lambda: f64,
    pub u: DVector<f64>,
}

impl Point {
    pub fn new(lambda: f64, u: DVector<f64>) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                message: format!("non-finite value {lambda}"),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "u",
                message: "state vector has non-finite entries".into(),
            });
        }
        Ok(Self { lambda, u })
    }

    pub fn n_state(&self) -> usize {
        self.u.len()
    }

    /// Augmented coordinates [lambda, u_1, ..., u_n].
    pub fn aug(&self) -> DVector<f64> {
        let mut a = DVector::zeros(self.u.len() + 1);
        a[0] = self.lambda;
        a.rows_mut(1, self.u.len()).copy_from(&self.u);
        a
    }

    pub fn from_aug(aug: &DVector<f64>) -> Self {
        Self {
            lambda: aug[0],
            u: aug.rows(1, aug.len() - 1).into_owned(),
        }
    }

    /// Euclidean distance in augmented (lambda, u) coordinates.
    pub fn dist(&self, other: &Point) -> f64 {
        (self.aug() - other.aug()).norm()
    }

    pub fn aug_norm(&self) -> f64 {
        self.aug().norm()
    }
}

pub type MarginFn = dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync;
pub type VectorFieldFn = dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
pub type JacobianFn = dyn Fn(f64, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;

/// Open domain of admissible points plus the run window and blow-up cap.
///
/// A point is inside the domain iff `margin(lambda, u) > 0`. The margin value
/// also drives the boundary-approach event: margins below
/// `boundary_threshold` terminate a trace.
#[derive(Clone)]
pub struct DomainSpec {
    margin: Arc<MarginFn>,
    pub norm_cap: f64,
    pub base_lambda: f64,
    pub lambda_window: [f64; 2],
    pub boundary_threshold: f64,
}

impl DomainSpec {
    pub fn new(
        margin: Arc<MarginFn>,
        norm_cap: f64,
        base_lambda: f64,
        lambda_window: [f64; 2],
    ) -> Result<Self> {
        if !(norm_cap > 0.0) {
            return Err(Error::InvalidParameter {
                name: "norm_cap",
                message: format!("must be positive, got {norm_cap}"),
            });
        }
        if !(lambda_window[0] < lambda_window[1]) {
            return Err(Error::InvalidParameter {
                name: "lambda_window",
                message: format!("window [{}, {}] is empty", lambda_window[0], lambda_window[1]),
            });
        }
        if base_lambda < lambda_window[0] || base_lambda > lambda_window[1] {
            return Err(Error::InvalidParameter {
                name: "base_lambda",
                message: format!(
                    "base level {base_lambda} outside window [{}, {}]",
                    lambda_window[0], lambda_window[1]
                ),
            });
        }
        Ok(Self {
            margin,
            norm_cap,
            base_lambda,
            lambda_window,
            boundary_threshold: 1e-3,
        })
    }

    /// Domain with no finite boundary (margin identically 1).
    pub fn unbounded(norm_cap: f64, base_lambda: f64, lambda_window: [f64; 2]) -> Result<Self> {
        Self::new(Arc::new(|_, _| 1.0), norm_cap, base_lambda, lambda_window)
    }

    pub fn with_boundary_threshold(mut self, threshold: f64) -> Self {
        self.boundary_threshold = threshold;
        self
    }

    pub fn margin(&self, lambda: f64, u: &DVector<f64>) -> f64 {
        (self.margin)(lambda, u)
    }
}

/// Membership test: strictly positive margin means inside the open domain.
pub fn inside_domain(domain: &DomainSpec, point: &Point) -> (bool, f64) {
    let m = domain.margin(point.lambda, &point.u);
    (m > 0.0, m)
}

/// A discretized map F(lambda, u) with analytic Jacobians and a domain.
///
/// All evaluator closures must be re-entrant; the system is immutable after
/// construction and cheap to clone (shared function handles).
#[derive(Clone)]
pub struct ParameterizedSystem {
    n_state: usize,
    residual: Arc<VectorFieldFn>,
    jac_u: Arc<JacobianFn>,
    jac_lambda: Arc<VectorFieldFn>,
    pub domain: DomainSpec,
}

impl ParameterizedSystem {
    pub fn new(
        n_state: usize,
        residual: Arc<VectorFieldFn>,
        jac_u: Arc<JacobianFn>,
        jac_lambda: Arc<VectorFieldFn>,
        domain: DomainSpec,
    ) -> Self {
        Self {
            n_state,
            residual,
            jac_u,
            jac_lambda,
            domain,
        }
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn residual(&self, lambda: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let r = (self.residual)(lambda, u)?;
        if r.len() != self.n_state {
            return Err(Error::Eval(format!(
                "residual length {} does not match state dimension {}",
                r.len(),
                self.n_state
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eval(format!(
                "residual has non-finite entries at lambda = {lambda}"
            )));
        }
        Ok(r)
    }

    pub fn jac_u(&self, lambda: f64, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = (self.jac_u)(lambda, u)?;
        if j.nrows() != self.n_state || j.ncols() != self.n_state {
            return Err(Error::Eval(format!(
                "state Jacobian is {}x{}, expected {n}x{n}",
                j.nrows(),
                j.ncols(),
                n = self.n_state
            )));
        }
        Ok(j)
    }

    pub fn jac_lambda(&self, lambda: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
        let j = (self.jac_lambda)(lambda, u)?;
        if j.len() != self.n_state {
            return Err(Error::Eval(format!(
                "parameter Jacobian length {} does not match state dimension {}",
                j.len(),
                self.n_state
            )));
        }
        Ok(j)
    }

    pub fn residual_norm(&self, point: &Point) -> Result<f64> {
        Ok(self.residual(point.lambda, &point.u)?.norm())
    }

    /// The n x (n+1) total Jacobian [dF/dlambda | dF/du].
    pub fn total_jacobian(&self, lambda: f64, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jl = self.jac_lambda(lambda, u)?;
        let ju = self.jac_u(lambda, u)?;
        let mut total = DMatrix::zeros(self.n_state, self.n_state + 1);
        total.column_mut(0).copy_from(&jl);
        total.columns_mut(1, self.n_state).copy_from(&ju);
        Ok(total)
    }
}

/// Orientation convention shared by every module: the sign of det D_uF.
///
/// It is defined exactly at regular points (smallest singular value above
/// `1e-8` times the largest) and takes values in {-1, +1}.
pub struct Orientation;

impl Orientation {
    pub const CONVENTION: &'static str = "sign-of-determinant";

    pub fn epsilon(system: &ParameterizedSystem, point: &Point) -> Result<i32> {
        let j = system.jac_u(point.lambda, &point.u)?;
        match numeric::det_sign_unchecked(&j) {
            0 => Err(Error::SingularJacobian {
                lambda: point.lambda,
            }),
            s => Ok(s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub jac_u_rel_err: f64,
    pub jac_lambda_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks the analytic Jacobians against central finite differences of the
/// residual at one in-domain point.
pub fn validate_consistency(
    system: &ParameterizedSystem,
    point: &Point,
    h_fd: f64,
) -> Result<ConsistencyReport> {
    if !(h_fd > 0.0) {
        return Err(Error::InvalidParameter {
            name: "h_fd",
            message: format!("step must be positive, got {h_fd}"),
        });
    }
    let (inside, margin) = inside_domain(&system.domain, point);
    if !inside {
        return Err(Error::OutsideDomain { margin });
    }
    system.residual(point.lambda, &point.u)?;

    let analytic_u = system.jac_u(point.lambda, &point.u)?;
    let fd_u = oracles::fd_jacobian(system, point, h_fd)?;
    let scale_u = analytic_u.amax().max(1.0);
    let jac_u_rel_err = (&analytic_u - &fd_u).amax() / scale_u;

    let analytic_l = system.jac_lambda(point.lambda, &point.u)?;
    let fd_l = oracles::fd_jac_lambda(system, point, h_fd)?;
    let scale_l = analytic_l.amax().max(1.0);
    let jac_lambda_rel_err = (&analytic_l - &fd_l).amax() / scale_l;

    Ok(ConsistencyReport {
        jac_u_rel_err,
        jac_lambda_rel_err,
        tolerance: CONSISTENCY_TOL,
        pass: jac_u_rel_err <= CONSISTENCY_TOL && jac_lambda_rel_err <= CONSISTENCY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;

    fn pt(lambda: f64, u: &[f64]) -> Point {
        Point::new(lambda, DVector::from_column_slice(u)).unwrap()
    }

    /// F(lambda, u) = A u - lambda b with constant A, b.
    fn linear_system(a: DMatrix<f64>, b: DVector<f64>) -> ParameterizedSystem {
        let n = b.len();
        let a1 = a.clone();
        let a2 = a.clone();
        let b1 = b.clone();
        let b2 = b.clone();
        ParameterizedSystem::new(
            n,
            Arc::new(move |l, u| Ok(&a1 * u - l * &b1)),
            Arc::new(move |_, _| Ok(a2.clone())),
            Arc::new(move |_, _| Ok(-b2.clone())),
            DomainSpec::unbounded(1e6, 0.0, [-10.0, 10.0]).unwrap(),
        )
    }

    #[test]
    fn point_validation() {
        assert!(Point::new(f64::NAN, DVector::zeros(2)).is_err());
        assert!(Point::new(0.0, DVector::from_column_slice(&[1.0, f64::INFINITY])).is_err());
        let p = pt(0.5, &[1.0, 2.0]);
        assert_eq!(p.n_state(), 2);
        let back = Point::from_aug(&p.aug());
        assert_eq!(back, p);
    }

    #[test]
    fn consistency_exact_for_linear_maps() {
        let a = DMatrix::from_column_slice(2, 2, &[2.0, 0.5, -1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, -2.0]);
        let sys = linear_system(a, b);
        let report = validate_consistency(&sys, &pt(0.3, &[0.7, -0.2]), 1e-6).unwrap();
        assert!(report.jac_u_rel_err <= 1e-10, "{report:?}");
        assert!(report.jac_lambda_rel_err <= 1e-10, "{report:?}");
        assert!(report.pass);
    }

    #[test]
    fn consistency_scalar_polynomial() {
        // F(lambda, u) = u^2 - lambda at (1, 1): D_u F = 2u.
        let b = builtins::fold();
        let report = validate_consistency(&b.system, &pt(1.0, &[1.0]), 1e-6).unwrap();
        assert!(report.jac_u_rel_err <= 1e-9, "{report:?}");
        assert!(report.pass);
    }

    #[test]
    fn consistency_random_points_builtin_systems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for b in builtins::all() {
            for _ in 0..100 {
                let lambda = rng.random_range(-0.8..0.8);
                let u = DVector::from_fn(b.system.n_state(), |_, _| rng.random_range(-1.5..1.5));
                let p = Point::new(lambda, u).unwrap();
                let report = validate_consistency(&b.system, &p, 1e-6).unwrap();
                assert!(report.pass, "{} failed at {p:?}: {report:?}", b.name);
            }
        }
    }

    #[test]
    fn orientation_is_sign_of_determinant() {
        let b = builtins::fold();
        assert_eq!(Orientation::epsilon(&b.system, &pt(1.0, &[1.0])).unwrap(), 1);
        assert_eq!(
            Orientation::epsilon(&b.system, &pt(1.0, &[-1.0])).unwrap(),
            -1
        );
        assert!(Orientation::epsilon(&b.system, &pt(0.0, &[0.0])).is_err());
    }

    #[test]
    fn values_transfer_between_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Point>();
        assert_send_sync::<DomainSpec>();
        assert_send_sync::<ParameterizedSystem>();
    }

    #[test]
    fn domain_membership_reports_margin() {
        let d = DomainSpec::new(
            Arc::new(|l, u: &DVector<f64>| 1.0 - l * u.amax().powi(2) - 0.1),
            100.0,
            0.0,
            [-5.0, 5.0],
        )
        .unwrap();
        let (inside, m) = inside_domain(&d, &pt(0.0, &[0.0]));
        assert!(inside);
        assert!((m - 0.9).abs() < 1e-15);
        let (inside, m) = inside_domain(&d, &pt(2.0, &[std::f64::consts::FRAC_1_SQRT_2]));
        assert!(!inside);
        assert!((m - (-0.1)).abs() < 1e-12);
    }
}
