//! Independent brute-force implementations used to validate the main-path
//! computations at desk scale: finite-difference Jacobians, a shooting solver
//! for the 1-D quasilinear boundary value problem, and sign-count /
//! winding-number degrees in one and two dimensions.
//!
//! Nothing here is performance-tuned; none of it runs on the hot path.

use nalgebra::{DMatrix, DVector};

use crate::degree::{BoxRegion, SliceMap};
use crate::error::{Error, Result};
use crate::problem::{ParameterizedSystem, Point};

/// Central-difference state Jacobian, column by column, with per-column step
/// `h_fd * (1 + |u_j|)`.
pub fn fd_jacobian(
    system: &ParameterizedSystem,
    point: &Point,
    h_fd: f64,
) -> Result<DMatrix<f64>> {
    let n = system.n_state();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = h_fd * (1.0 + point.u[j].abs());
        let mut up = point.u.clone();
        let mut dn = point.u.clone();
        up[j] += step;
        dn[j] -= step;
        let fp = system.residual(point.lambda, &up)?;
        let fm = system.residual(point.lambda, &dn)?;
        jac.column_mut(j).copy_from(&((fp - fm) / (2.0 * step)));
    }
    Ok(jac)
}

/// Central-difference parameter derivative with step `h_fd * (1 + |lambda|)`.
pub fn fd_jac_lambda(
    system: &ParameterizedSystem,
    point: &Point,
    h_fd: f64,
) -> Result<DVector<f64>> {
    let step = h_fd * (1.0 + point.lambda.abs());
    let fp = system.residual(point.lambda + step, &point.u)?;
    let fm = system.residual(point.lambda - step, &point.u)?;
    Ok((fp - fm) / (2.0 * step))
}

/// One-sided (forward) difference Jacobian; used to cross-check the central
/// one in tests.
pub fn fd_jacobian_forward(
    system: &ParameterizedSystem,
    point: &Point,
    h_fd: f64,
) -> Result<DMatrix<f64>> {
    let n = system.n_state();
    let f0 = system.residual(point.lambda, &point.u)?;
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = h_fd * (1.0 + point.u[j].abs());
        let mut up = point.u.clone();
        up[j] += step;
        let fp = system.residual(point.lambda, &up)?;
        jac.column_mut(j).copy_from(&((fp - &f0) / step));
    }
    Ok(jac)
}

/// Configuration of the shooting solver.
#[derive(Debug, Clone)]
pub struct ShootingConfig {
    /// Fixed step of the 4th-order integrator.
    pub ode_step: f64,
    /// Bisection tolerance on the terminal boundary value.
    pub bisect_tol: f64,
    /// Search interval for the initial slope.
    pub slope_bracket: (f64, f64),
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            ode_step: 1e-5,
            bisect_tol: 1e-10,
            slope_bracket: (1e-3, 60.0),
        }
    }
}

/// Continuous solution produced by the shooting solver, sampled on the fine
/// integration grid.
#[derive(Debug, Clone)]
pub struct ShootingSolution {
    xs: Vec<f64>,
    us: Vec<f64>,
    pub initial_slope: f64,
}

impl ShootingSolution {
    /// Linear interpolation on the fine grid; the grid is so fine that the
    /// interpolation error is far below the discretization errors measured
    /// against it.
    pub fn sample(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.us[0];
        }
        if x >= self.xs[n - 1] {
            return self.us[n - 1];
        }
        let h = self.xs[1] - self.xs[0];
        let k = ((x - self.xs[0]) / h).floor() as usize;
        let k = k.min(n - 2);
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.us[k] * (1.0 - t) + self.us[k + 1] * t
    }

    pub fn sample_nodes(&self, nodes: &[f64]) -> DVector<f64> {
        DVector::from_iterator(nodes.len(), nodes.iter().map(|x| self.sample(*x)))
    }
}

fn odd_pow(u: f64, q: f64) -> f64 {
    u.signum() * u.abs().powf(q)
}

/// One RK4 shot of u'' = (1 - lambda u'^2)^{3/2} (u^q - mu u) from
/// u(0) = 0, u'(0) = s. Returns (terminal u(1), min over interior, trace)
/// or an error when the flux argument leaves the admissible range.
fn shoot(
    mu: f64,
    q: f64,
    lambda: f64,
    s: f64,
    ode_step: f64,
    keep_trace: bool,
) -> Result<(f64, f64, Option<(Vec<f64>, Vec<f64>)>)> {
    let n_steps = (1.0 / ode_step).round().max(8.0) as usize;
    let h = 1.0 / n_steps as f64;
    let rhs = |u: f64, v: f64| -> Result<f64> {
        let w = 1.0 - lambda * v * v;
        if w <= 0.0 {
            return Err(Error::Eval(format!(
                "flux argument 1 - lambda u'^2 = {w:.3e} <= 0 mid-shot at lambda = {lambda}"
            )));
        }
        Ok(w.powf(1.5) * (odd_pow(u, q) - mu * u))
    };
    let mut u = 0.0f64;
    let mut v = s;
    let mut min_u = f64::INFINITY;
    let mut trace = if keep_trace {
        Some((Vec::with_capacity(n_steps + 1), Vec::with_capacity(n_steps + 1)))
    } else {
        None
    };
    if let Some((xs, us)) = trace.as_mut() {
        xs.push(0.0);
        us.push(0.0);
    }
    for k in 0..n_steps {
        let k1u = v;
        let k1v = rhs(u, v)?;
        let k2u = v + 0.5 * h * k1v;
        let k2v = rhs(u + 0.5 * h * k1u, v + 0.5 * h * k1v)?;
        let k3u = v + 0.5 * h * k2v;
        let k3v = rhs(u + 0.5 * h * k2u, v + 0.5 * h * k2v)?;
        let k4u = v + h * k3v;
        let k4v = rhs(u + h * k3u, v + h * k3v)?;
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::Eval("shot diverged to non-finite values".into()));
        }
        if k + 1 < n_steps {
            min_u = min_u.min(u);
        }
        if let Some((xs, us)) = trace.as_mut() {
            xs.push((k + 1) as f64 * h);
            us.push(u);
        }
    }
    Ok((u, min_u, trace))
}

/// Solves the two-point problem by bisecting the initial slope until the
/// terminal value vanishes, keeping only solutions positive on the interior.
pub fn shooting_solve(
    mu: f64,
    q: f64,
    lambda: f64,
    cfg: &ShootingConfig,
) -> Result<ShootingSolution> {
    let (lo, hi) = cfg.slope_bracket;
    if !(lo < hi) {
        return Err(Error::Bracket(format!("empty slope bracket ({lo}, {hi})")));
    }
    // Coarse scan for terminal sign changes, then bisect each interval and
    // keep the first slope whose solution stays positive inside (0, 1).
    const SCAN: usize = 64;
    let mut grid = Vec::with_capacity(SCAN + 1);
    for k in 0..=SCAN {
        let s = lo + (hi - lo) * k as f64 / SCAN as f64;
        let term = shoot(mu, q, lambda, s, cfg.ode_step, false)
            .map(|(t, _, _)| t)
            .ok();
        grid.push((s, term));
    }
    let mut found_sign_change = false;
    for w in grid.windows(2) {
        let (sa, ta) = (w[0].0, w[0].1);
        let (sb, tb) = (w[1].0, w[1].1);
        let (Some(ta), Some(tb)) = (ta, tb) else {
            continue;
        };
        if ta == 0.0 || ta * tb >= 0.0 {
            continue;
        }
        found_sign_change = true;
        let (mut sa, mut ta, mut sb) = (sa, ta, sb);
        for _ in 0..200 {
            let sm = 0.5 * (sa + sb);
            let (tm, _, _) = shoot(mu, q, lambda, sm, cfg.ode_step, false)?;
            if tm.abs() <= cfg.bisect_tol {
                break;
            }
            if ta * tm < 0.0 {
                sb = sm;
            } else {
                sa = sm;
                ta = tm;
            }
            if (sb - sa).abs() < 1e-15 * (1.0 + sa.abs()) {
                break;
            }
        }
        let s = 0.5 * (sa + sb);
        let (term, min_u, trace) = shoot(mu, q, lambda, s, cfg.ode_step, true)?;
        if term.abs() > 1e3 * cfg.bisect_tol.max(1e-12) {
            continue;
        }
        if min_u <= 0.0 {
            continue;
        }
        let (xs, us) = trace.expect("trace requested");
        return Ok(ShootingSolution {
            xs,
            us,
            initial_slope: s,
        });
    }
    if found_sign_change {
        Err(Error::Bracket(
            "terminal sign changes found, but no shot stayed positive on (0, 1)".into(),
        ))
    } else {
        Err(Error::Bracket(
            "no terminal sign change in the slope bracket".into(),
        ))
    }
}

/// Brute-force degree of a slice map over a 1-D or 2-D box.
///
/// 1-D: counts sign changes on a fine grid weighted by slope sign.
/// 2-D: winding number of the map along the boundary polygon by angle
/// accumulation.
pub fn brute_force_degree(map: &dyn SliceMap, region: &BoxRegion, grid_n: usize) -> Result<i64> {
    match map.dim() {
        1 => brute_force_degree_1d(
            &|u| {
                map.eval(&DVector::from_column_slice(&[u]))
                    .map(|v| v[0])
                    .unwrap_or(f64::NAN)
            },
            region.lo()[0],
            region.hi()[0],
            grid_n,
        ),
        2 => brute_force_degree_2d(
            &|u, v| {
                map.eval(&DVector::from_column_slice(&[u, v]))
                    .map(|w| (w[0], w[1]))
                    .unwrap_or((f64::NAN, f64::NAN))
            },
            region,
            grid_n,
        ),
        d => Err(Error::InvalidParameter {
            name: "dimension",
            message: format!("brute-force degree supports 1 or 2 dimensions, got {d}"),
        }),
    }
}

pub fn brute_force_degree_1d(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    grid_n: usize,
) -> Result<i64> {
    if !(a < b) || grid_n < 2 {
        return Err(Error::InvalidParameter {
            name: "grid",
            message: "need a < b and at least 2 grid points".into(),
        });
    }
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 || fb == 0.0 || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::BoundaryZero {
            location: vec![if fa == 0.0 { a } else { b }],
        });
    }
    let mut deg = 0i64;
    let mut prev = fa;
    for k in 1..=grid_n {
        let x = a + (b - a) * k as f64 / grid_n as f64;
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::Eval(format!("non-finite value at {x}")));
        }
        if prev < 0.0 && v > 0.0 {
            deg += 1;
        } else if prev > 0.0 && v < 0.0 {
            deg -= 1;
        } else if v == 0.0 {
            // Landed exactly on a zero: nudge the sample.
            let v2 = f(x + 0.25 * (b - a) / grid_n as f64);
            if prev < 0.0 && v2 > 0.0 {
                deg += 1;
            } else if prev > 0.0 && v2 < 0.0 {
                deg -= 1;
            }
            prev = v2;
            continue;
        }
        prev = v;
    }
    Ok(deg)
}

pub fn brute_force_degree_2d(
    f: &dyn Fn(f64, f64) -> (f64, f64),
    region: &BoxRegion,
    grid_n: usize,
) -> Result<i64> {
    if region.dim() != 2 {
        return Err(Error::InvalidParameter {
            name: "region",
            message: "winding-number degree needs a 2-D box".into(),
        });
    }
    let (x0, y0) = (region.lo()[0], region.lo()[1]);
    let (x1, y1) = (region.hi()[0], region.hi()[1]);
    // Counter-clockwise boundary polygon with grid_n segments per side.
    let mut corners = Vec::with_capacity(4 * grid_n);
    for k in 0..grid_n {
        let t = k as f64 / grid_n as f64;
        corners.push((x0 + t * (x1 - x0), y0));
    }
    for k in 0..grid_n {
        let t = k as f64 / grid_n as f64;
        corners.push((x1, y0 + t * (y1 - y0)));
    }
    for k in 0..grid_n {
        let t = k as f64 / grid_n as f64;
        corners.push((x1 - t * (x1 - x0), y1));
    }
    for k in 0..grid_n {
        let t = k as f64 / grid_n as f64;
        corners.push((x0, y1 - t * (y1 - y0)));
    }
    let mut total = 0.0f64;
    let first = f(corners[0].0, corners[0].1);
    let mut prev = first.1.atan2(first.0);
    if !prev.is_finite() || (first.0 == 0.0 && first.1 == 0.0) {
        return Err(Error::BoundaryZero {
            location: vec![corners[0].0, corners[0].1],
        });
    }
    for k in 1..=corners.len() {
        let (x, y) = corners[k % corners.len()];
        let (fx, fy) = f(x, y);
        if fx == 0.0 && fy == 0.0 {
            return Err(Error::BoundaryZero {
                location: vec![x, y],
            });
        }
        let angle = fy.atan2(fx);
        if !angle.is_finite() {
            return Err(Error::Eval(format!("non-finite map value at ({x}, {y})")));
        }
        let mut d = angle - prev;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        if d.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::Refine(format!(
                "angle step {d:.3} exceeds pi/2 on a boundary segment; refine grid_n"
            )));
        }
        total += d;
        prev = angle;
    }
    let winding = total / (2.0 * std::f64::consts::PI);
    let rounded = winding.round();
    if (winding - rounded).abs() > 1e-3 {
        return Err(Error::Refine(format!(
            "accumulated winding {winding:.6} is not close to an integer"
        )));
    }
    Ok(rounded as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::FnSlice;

    #[test]
    fn degree_1d_cubic() {
        // u^3 - u on (-2, 2): zeros -1, 0, 1 with slopes +, -, +.
        let f = |u: f64| u * u * u - u;
        assert_eq!(brute_force_degree_1d(&f, -2.0, 2.0, 10_000).unwrap(), 1);
    }

    #[test]
    fn degree_2d_complex_square() {
        // (u^2 - v^2 - 1, 2uv) is z^2 - 1; two simple zeros, winding 2.
        let f = |u: f64, v: f64| (u * u - v * v - 1.0, 2.0 * u * v);
        let region = BoxRegion::new(
            DVector::from_column_slice(&[-2.0, -2.0]),
            DVector::from_column_slice(&[2.0, 2.0]),
        )
        .unwrap();
        assert_eq!(brute_force_degree_2d(&f, &region, 10_000).unwrap(), 2);
    }

    #[test]
    fn degree_2d_identity() {
        let f = |u: f64, v: f64| (u, v);
        let region = BoxRegion::new(
            DVector::from_column_slice(&[-1.0, -1.0]),
            DVector::from_column_slice(&[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(brute_force_degree_2d(&f, &region, 2_000).unwrap(), 1);
    }

    #[test]
    fn degree_dispatch_rejects_high_dimension() {
        let map = FnSlice::new(
            3,
            |u: &DVector<f64>| Ok(u.clone()),
            |u: &DVector<f64>| Ok(DMatrix::identity(u.len(), u.len())),
        );
        let region = BoxRegion::new(DVector::from_element(3, -1.0), DVector::from_element(3, 1.0))
            .unwrap();
        assert!(brute_force_degree(&map, &region, 100).is_err());
    }

    #[test]
    fn shooting_positive_solution_symmetric() {
        let cfg = ShootingConfig {
            ode_step: 1e-4, // coarser than default keeps this unit test quick
            ..ShootingConfig::default()
        };
        let sol = shooting_solve(12.0, 2.0, 0.0, &cfg).unwrap();
        // Autonomous equation with symmetric boundary conditions: the
        // positive solution is symmetric about x = 1/2.
        let mut asym = 0.0f64;
        for k in 1..50 {
            let x = k as f64 / 100.0;
            asym = asym.max((sol.sample(x) - sol.sample(1.0 - x)).abs());
        }
        assert!(asym <= 1e-6, "asymmetry {asym:.3e}");
        assert!(sol.sample(0.5) > 0.0);
    }

    #[test]
    fn shooting_subcritical_mu_has_no_positive_solution() {
        let cfg = ShootingConfig {
            ode_step: 1e-4,
            ..ShootingConfig::default()
        };
        // mu = 9 sits below the principal eigenvalue pi^2.
        match shooting_solve(9.0, 2.0, 0.0, &cfg) {
            Err(Error::Bracket(_)) => {}
            other => panic!("expected bracket error, got {other:?}"),
        }
    }
}
