//! Handling of rank-deficient zeros: finite-dimensional Lyapunov-Schmidt
//! reduction, local half-branch enumeration on a polar patch, Puiseux
//! exponent fitting, and branch switching for the continuation engine.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric;
use crate::problem::{ParameterizedSystem, Point};

/// Default rank tolerance for the kernel split (relative to the largest
/// singular value).
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Default inner-Newton tolerance for the implicit complement map.
pub const DEFAULT_PSI_TOL: f64 = 1e-12;

/// Default trust radius (in scaled local coordinates) of the reduction.
pub const DEFAULT_TRUST_RADIUS: f64 = 1e-1;

/// Kernel/cokernel split of the state Jacobian at a zero.
#[derive(Debug, Clone)]
pub struct KernelInfo {
    pub dim: usize,
    /// Orthonormal basis of the kernel of D_uF (columns).
    pub kernel: DMatrix<f64>,
    /// Orthonormal basis of a complement of the range of D_uF (columns).
    pub cokernel: DMatrix<f64>,
    /// Orthonormal basis of the orthogonal complement of the kernel.
    pub complement: DMatrix<f64>,
    /// Orthonormal basis of the range of D_uF.
    pub range: DMatrix<f64>,
}

/// Jacobian scale in a small neighborhood of the point. A purely relative
/// rank test cannot flag, say, a 1x1 Jacobian [1e-13]; the singular
/// directions have to be judged against how large the operator is nearby.
fn local_jacobian_scale(system: &ParameterizedSystem, point: &Point, smax_here: f64) -> f64 {
    let d = 1e-3 * (1.0 + point.lambda.abs() + point.u.amax());
    let mut scale = smax_here;
    let mut probe = |lambda: f64, u: &nalgebra::DVector<f64>| {
        if let Ok(j) = system.jac_u(lambda, u) {
            let (_, s) = numeric::sval_extrema(&j);
            scale = scale.max(s);
        }
    };
    probe(point.lambda + d, &point.u);
    probe(point.lambda - d, &point.u);
    for k in 0..point.u.len().min(3) {
        let mut up = point.u.clone();
        up[k] += d;
        probe(point.lambda, &up);
    }
    scale
}

/// Splits state space along the singular directions of the state Jacobian.
/// `dim == 0` means the point is regular and should not have been routed
/// here.
pub fn kernel_analysis(
    system: &ParameterizedSystem,
    point: &Point,
    rank_tol: f64,
) -> Result<KernelInfo> {
    let res = system.residual_norm(point)?;
    if res > crate::degree::ZERO_RES_TOL {
        return Err(Error::NotAZero {
            residual: res,
            tol: crate::degree::ZERO_RES_TOL,
        });
    }
    let m = system.n_state();
    let jac = system.jac_u(point.lambda, &point.u)?;
    let svd = jac.svd(true, true);
    let sv = &svd.singular_values;
    let u_mat = svd.u.as_ref().expect("u requested");
    let v_mat = svd.v_t.as_ref().expect("v_t requested").transpose();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| sv[*b].partial_cmp(&sv[*a]).expect("finite singular values"));
    let smax = local_jacobian_scale(system, point, sv[order[0]]);
    let small: Vec<usize> = order
        .iter()
        .cloned()
        .filter(|i| smax <= 0.0 || sv[*i] <= rank_tol * smax)
        .collect();
    let large: Vec<usize> = order
        .iter()
        .cloned()
        .filter(|i| !(smax <= 0.0 || sv[*i] <= rank_tol * smax))
        .collect();

    let pick = |mat: &DMatrix<f64>, idx: &[usize]| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out.column_mut(k).copy_from(&mat.column(i));
        }
        numeric::normalize_column_signs(&mut out);
        out
    };

    Ok(KernelInfo {
        dim: small.len(),
        kernel: pick(&v_mat, &small),
        cokernel: pick(u_mat, &small),
        complement: pick(&v_mat, &large),
        range: pick(u_mat, &large),
    })
}

/// The reduced problem at a singular zero: bases, projections, the implicit
/// complement map psi (computed on demand by an inner Newton solve), and the
/// reduced map G on kernel coordinates.
#[derive(Clone)]
pub struct ReducedProblem {
    system: ParameterizedSystem,
    pub singular_point: Point,
    pub kernel_dim: usize,
    pub kernel_basis: DMatrix<f64>,
    pub cokernel_basis: DMatrix<f64>,
    complement_basis: DMatrix<f64>,
    range_basis: DMatrix<f64>,
    pub projector_p: DMatrix<f64>,
    pub projector_q: DMatrix<f64>,
    pub psi_tolerance: f64,
    pub trust_radius: f64,
}

/// Builds the reduction at a rank-deficient zero.
pub fn ls_reduce(system: &ParameterizedSystem, point: &Point) -> Result<ReducedProblem> {
    let point = polish_zero(system, point)?;
    let info = kernel_analysis(system, &point, DEFAULT_RANK_TOL)?;
    if info.dim == 0 {
        return Err(Error::ReductionFailed(
            "the state Jacobian is regular here; nothing to reduce".into(),
        ));
    }
    let m = system.n_state();
    let projector_p = &info.kernel * info.kernel.transpose();
    let projector_q = DMatrix::identity(m, m) - &info.cokernel * info.cokernel.transpose();

    // The complement restriction of the projected Jacobian must be regular,
    // otherwise the degeneracy is of higher order than this reduction
    // supports.
    if m > info.dim {
        let jac = system.jac_u(point.lambda, &point.u)?;
        let restricted = info.range.transpose() * &jac * &info.complement;
        if numeric::det_sign_unchecked(&restricted) == 0 {
            return Err(Error::ReductionFailed(
                "the complement restriction of the projected Jacobian is singular".into(),
            ));
        }
    }

    Ok(ReducedProblem {
        system: system.clone(),
        singular_point: point,
        kernel_dim: info.dim,
        kernel_basis: info.kernel,
        cokernel_basis: info.cokernel,
        complement_basis: info.complement,
        range_basis: info.range,
        projector_p,
        projector_q,
        psi_tolerance: DEFAULT_PSI_TOL,
        trust_radius: DEFAULT_TRUST_RADIUS,
    })
}

/// Gauss-Newton polish with a truncated pseudo-inverse; tightens a zero that
/// was located to corrector tolerance down toward the inner-solve tolerance.
fn polish_zero(system: &ParameterizedSystem, point: &Point) -> Result<Point> {
    let mut p = point.clone();
    for _ in 0..10 {
        let res = system.residual(p.lambda, &p.u)?;
        if res.norm() <= DEFAULT_PSI_TOL {
            break;
        }
        let jac = system.jac_u(p.lambda, &p.u)?;
        let svd = jac.svd(true, true);
        let Ok(delta) = svd.solve(&(-&res), numeric::RANK_RATIO_TOL) else {
            break;
        };
        let cand = Point::new(p.lambda, &p.u + delta)?;
        let better = system.residual(cand.lambda, &cand.u)?.norm() < res.norm();
        if !better {
            break;
        }
        p = cand;
    }
    Ok(p)
}

impl ReducedProblem {
    pub fn system(&self) -> &ParameterizedSystem {
        &self.system
    }

    /// Patch radius in raw local coordinates.
    pub fn raw_radius(&self) -> f64 {
        let scale = 1.0f64
            .max(self.singular_point.lambda.abs())
            .max(self.singular_point.u.amax());
        self.trust_radius * scale
    }

    /// The implicit complement map: solves the range projection of
    /// F(lambda, u1 + K z + Y w) = 0 for w by Newton from w = 0, and returns
    /// the full-space complement component Y w.
    pub fn psi(&self, lambda: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.system.n_state();
        let n = self.kernel_dim;
        if z.len() != n {
            return Err(Error::InvalidParameter {
                name: "z",
                message: format!("expected {n} kernel coordinates, got {}", z.len()),
            });
        }
        let base = &self.singular_point.u + &self.kernel_basis * z;
        if m == n {
            return Ok(DVector::zeros(m));
        }
        let mut w = DVector::<f64>::zeros(m - n);
        for _ in 0..30 {
            let u = &base + &self.complement_basis * &w;
            let res_full = self
                .system
                .residual(lambda, &u)
                .map_err(|e| Error::TrustRegion(e.to_string()))?;
            let res = self.range_basis.transpose() * &res_full;
            if res.norm() <= self.psi_tolerance {
                return Ok(&self.complement_basis * &w);
            }
            let jac_full = self
                .system
                .jac_u(lambda, &u)
                .map_err(|e| Error::TrustRegion(e.to_string()))?;
            let jac = self.range_basis.transpose() * &jac_full * &self.complement_basis;
            let Some(delta) = numeric::solve_dense(&jac, &(-&res)) else {
                return Err(Error::TrustRegion(
                    "inner Jacobian became singular".into(),
                ));
            };
            w += delta;
        }
        Err(Error::TrustRegion(format!(
            "inner Newton did not reach {:.1e}",
            self.psi_tolerance
        )))
    }

    /// The reduced map G(lambda, z): cokernel coordinates of the residual on
    /// the graph of psi.
    pub fn eval_reduced(&self, lambda: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.psi(lambda, z)?;
        let u = &self.singular_point.u + &self.kernel_basis * z + y;
        let res = self
            .system
            .residual(lambda, &u)
            .map_err(|e| Error::TrustRegion(e.to_string()))?;
        Ok(self.cokernel_basis.transpose() * res)
    }

    /// Full-space point for reduced coordinates (lambda, z).
    pub fn lift(&self, lambda: f64, z: &DVector<f64>) -> Result<Point> {
        let y = self.psi(lambda, z)?;
        let u = &self.singular_point.u + &self.kernel_basis * z + y;
        Point::new(lambda, u)
    }

    /// Reduced coordinates of a full-space point: (lambda, K^T (u - u1)).
    pub fn project(&self, point: &Point) -> (f64, DVector<f64>) {
        (
            point.lambda,
            self.kernel_basis.transpose() * (&point.u - &self.singular_point.u),
        )
    }
}

/// One local solution half-branch emanating from the singular point,
/// sampled from the innermost ring outward to the patch boundary.
#[derive(Debug, Clone)]
pub struct HalfBranch {
    /// Samples in reduced coordinates (lambda, z); kernel dimension 1 only.
    pub reduced: Vec<(f64, f64)>,
    /// The same samples lifted to full space.
    pub points: Vec<Point>,
}

impl HalfBranch {
    /// Direction of the innermost sample in the reduced (dlambda, z) plane.
    fn inner_angle(&self, lambda1: f64) -> f64 {
        let (l, z) = self.reduced[0];
        z.atan2(l - lambda1)
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let mut d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    if d > std::f64::consts::PI {
        d = 2.0 * std::f64::consts::PI - d;
    }
    d
}

/// Extracts the zero set of the reduced map on a polar patch around the
/// singular point: `grid` rings, `grid` angular samples per ring, zeros per
/// ring refined by bisection in the angle, chained across rings into
/// half-branches that end on the patch boundary.
pub fn enumerate_branches(
    red: &ReducedProblem,
    radius: f64,
    grid: usize,
) -> Result<Vec<HalfBranch>> {
    if red.kernel_dim != 1 {
        return Err(Error::UnsupportedKernelDim {
            dim: red.kernel_dim,
        });
    }
    if grid < 8 || !(radius > 0.0) {
        return Err(Error::InvalidParameter {
            name: "patch",
            message: "need grid >= 8 and a positive radius".into(),
        });
    }
    let lambda1 = red.singular_point.lambda;
    let g_at = |rho: f64, theta: f64| -> Result<f64> {
        let z = DVector::from_column_slice(&[rho * theta.sin()]);
        Ok(red.eval_reduced(lambda1 + rho * theta.cos(), &z)?[0])
    };

    let n_theta = grid.max(16);
    let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let mut rings: Vec<(f64, Vec<f64>)> = Vec::with_capacity(grid);
    for k in 1..=grid {
        let rho = radius * k as f64 / grid as f64;
        let mut vals = Vec::with_capacity(n_theta);
        for j in 0..n_theta {
            vals.push(g_at(rho, j as f64 * dtheta)?);
        }
        let mut zeros = Vec::new();
        for j in 0..n_theta {
            let a = vals[j];
            let b = vals[(j + 1) % n_theta];
            let ta = j as f64 * dtheta;
            if a == 0.0 {
                zeros.push(ta);
                continue;
            }
            if a * b < 0.0 {
                // Bisection in the angle.
                let (mut lo, mut hi) = (ta, ta + dtheta);
                let mut va = a;
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    let vm = g_at(rho, mid)?;
                    if vm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if va * vm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        va = vm;
                    }
                }
                zeros.push(0.5 * (lo + hi));
            }
        }
        rings.push((rho, zeros));
    }

    if rings.iter().all(|(_, z)| z.is_empty()) {
        return Err(Error::IsolatedPoint);
    }
    let outer = rings.last().expect("grid >= 8");
    if outer.1.is_empty() {
        return Err(Error::Refine(
            "zeros exist on inner rings but none reach the patch boundary".into(),
        ));
    }

    // Chain every boundary zero inward by angular proximity.
    let tol_ang = (3.0 * dtheta).max(0.25);
    let mut halves = Vec::new();
    for &theta_out in &outer.1 {
        let mut chain: Vec<(f64, f64)> = vec![(outer.0, theta_out)];
        let mut theta = theta_out;
        for (rho, zeros) in rings.iter().rev().skip(1) {
            let Some((best, dist)) = zeros
                .iter()
                .map(|t| (*t, angular_distance(*t, theta)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite angles"))
            else {
                break;
            };
            if dist > tol_ang {
                break;
            }
            chain.push((*rho, best));
            theta = best;
        }
        chain.reverse(); // innermost first
        let mut reduced = Vec::with_capacity(chain.len());
        let mut points = Vec::with_capacity(chain.len());
        for (rho, th) in chain {
            let lambda = lambda1 + rho * th.cos();
            let z = rho * th.sin();
            reduced.push((lambda, z));
            points.push(red.lift(lambda, &DVector::from_column_slice(&[z]))?);
        }
        halves.push(HalfBranch { reduced, points });
    }
    // Deterministic order by boundary angle.
    halves.sort_by(|a, b| {
        let ta = a.reduced.last().expect("non-empty");
        let tb = b.reduced.last().expect("non-empty");
        let aa = ta.1.atan2(ta.0 - lambda1);
        let ab = tb.1.atan2(tb.0 - lambda1);
        aa.partial_cmp(&ab).expect("finite angles")
    });
    Ok(halves)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFlag {
    Ok,
    /// lambda is (numerically) constant along the branch; the inverse
    /// relation was fitted instead.
    Vertical,
    /// The state does not move away from the singular state; no exponent.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct PuiseuxFit {
    /// Estimated exponent of ||u - u1|| against |lambda - lambda1| (1/ell
    /// for a branch of order ell), or of the inverse relation when flagged
    /// vertical.
    pub exponent: Option<f64>,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub flag: FitFlag,
}

/// Least-squares slope of log ||u - u1|| against log |lambda - lambda1|
/// along one half-branch.
pub fn puiseux_exponent(points: &[Point], singular_point: &Point) -> Result<PuiseuxFit> {
    let du: Vec<f64> = points
        .iter()
        .map(|p| (&p.u - &singular_point.u).norm())
        .collect();
    let dl: Vec<f64> = points
        .iter()
        .map(|p| (p.lambda - singular_point.lambda).abs())
        .collect();
    let u_scale = 1.0 + singular_point.u.amax();
    let l_scale = 1.0 + singular_point.lambda.abs();

    if du.iter().all(|d| *d <= 1e-13 * u_scale) {
        return Ok(PuiseuxFit {
            exponent: None,
            residual: 0.0,
            flag: FitFlag::Degenerate,
        });
    }
    let fit = |xs: &[f64], ys: &[f64]| -> Result<(f64, f64)> {
        let pairs: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .map(|(x, y)| (x.ln(), y.ln()))
            .collect();
        if pairs.len() < 8 {
            return Err(Error::Precondition(format!(
                "need at least 8 usable points for the exponent fit, got {}",
                pairs.len()
            )));
        }
        let span = pairs
            .iter()
            .map(|(x, _)| *x)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |acc, v| {
                (acc.0.min(v), acc.1.max(v))
            });
        if (span.1 - span.0) / std::f64::consts::LN_10 < 2.0 {
            return Err(Error::Precondition(
                "branch samples span fewer than two decades of the fit variable".into(),
            ));
        }
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
        let my = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var = 0.0;
        for (x, y) in &pairs {
            cov += (x - mx) * (y - my);
            var += (x - mx) * (x - mx);
        }
        let slope = cov / var;
        let intercept = my - slope * mx;
        let mut rss = 0.0;
        for (x, y) in &pairs {
            let e = y - (slope * x + intercept);
            rss += e * e;
        }
        Ok((slope, (rss / n).sqrt()))
    };

    if dl.iter().all(|d| *d <= 1e-13 * l_scale) {
        // Vertical branch: fit |lambda - lambda1| against ||u - u1||.
        let (slope, residual) = fit(&du, &dl).unwrap_or((f64::NAN, f64::NAN));
        return Ok(PuiseuxFit {
            exponent: if slope.is_finite() { Some(slope) } else { None },
            residual: if residual.is_finite() { residual } else { 0.0 },
            flag: FitFlag::Vertical,
        });
    }

    let (slope, residual) = fit(&dl, &du)?;
    Ok(PuiseuxFit {
        exponent: Some(slope),
        residual,
        flag: FitFlag::Ok,
    })
}

/// Restart data produced by a branch switch at a singular point.
#[derive(Debug, Clone)]
pub struct Restart {
    pub point: Point,
    pub tangent: DVector<f64>,
    pub incoming: usize,
    pub outgoing: usize,
    /// Half-branches that were neither the incoming one nor the selected
    /// continuation.
    pub alternatives: Vec<usize>,
    pub half_branch_count: usize,
}

/// Identifies the incoming half-branch from the tangent the trace arrived
/// with, selects the paired continuation through the singular point, and
/// returns a lifted restart point one patch radius out.
///
/// Pairing: with exactly two half-branches the other one; otherwise the
/// unique half-branch whose inner direction is antipodal to the incoming one
/// (the computable surrogate for lying on the same local solution curve).
/// Anything ambiguous is an error listing the candidates.
pub fn switch_branch(red: &ReducedProblem, incoming_tangent: &DVector<f64>) -> Result<Restart> {
    let halves = enumerate_branches(red, red.raw_radius(), 48)?;
    if halves.len() < 2 {
        return Err(Error::ReductionFailed(format!(
            "found {} half-branch(es); a switch needs at least two",
            halves.len()
        )));
    }
    let sp_aug = red.singular_point.aug();
    let mut incoming = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (i, hb) in halves.iter().enumerate() {
        let inner = hb.points.first().expect("non-empty half-branch");
        let mut dir = inner.aug() - &sp_aug;
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;
        let score = -dir.dot(incoming_tangent);
        if score > best {
            best = score;
            incoming = i;
        }
    }

    let lambda1 = red.singular_point.lambda;
    let outgoing = if halves.len() == 2 {
        1 - incoming
    } else {
        let target = halves[incoming].inner_angle(lambda1) + std::f64::consts::PI;
        let tol = 0.35;
        let mut candidates: Vec<(usize, f64)> = halves
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != incoming)
            .map(|(i, hb)| (i, angular_distance(hb.inner_angle(lambda1), target)))
            .collect();
        candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"));
        let matching: Vec<usize> = candidates
            .iter()
            .filter(|(_, d)| *d <= tol)
            .map(|(i, _)| *i)
            .collect();
        match matching.len() {
            1 => matching[0],
            _ => {
                return Err(Error::AmbiguousPairing {
                    candidates: candidates.iter().map(|(i, _)| *i).collect(),
                })
            }
        }
    };

    let pts = &halves[outgoing].points;
    if pts.len() < 2 {
        return Err(Error::ReductionFailed(
            "outgoing half-branch has too few samples for a restart tangent".into(),
        ));
    }
    let p_out = pts.last().expect("non-empty").clone();
    let p_in = pts[pts.len() - 2].clone();
    let mut t = p_out.aug() - p_in.aug();
    let norm = t.norm();
    if norm == 0.0 {
        return Err(Error::ReductionFailed("degenerate restart tangent".into()));
    }
    t /= norm;

    let alternatives: Vec<usize> = (0..halves.len())
        .filter(|i| *i != incoming && *i != outgoing)
        .collect();
    Ok(Restart {
        point: p_out,
        tangent: t,
        incoming,
        outgoing,
        alternatives,
        half_branch_count: halves.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::problem::DomainSpec;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn pt(lambda: f64, u: &[f64]) -> Point {
        Point::new(lambda, DVector::from_column_slice(u)).unwrap()
    }

    /// F(lambda, (u, v)) = (u^2 - lambda, v): a fold embedded in two state
    /// dimensions; eliminating v reproduces z^2 - lambda.
    fn embedded_fold() -> ParameterizedSystem {
        ParameterizedSystem::new(
            2,
            Arc::new(|l, u: &DVector<f64>| {
                Ok(DVector::from_column_slice(&[u[0] * u[0] - l, u[1]]))
            }),
            Arc::new(|_, u: &DVector<f64>| {
                Ok(DMatrix::from_row_slice(2, 2, &[2.0 * u[0], 0.0, 0.0, 1.0]))
            }),
            Arc::new(|_, _: &DVector<f64>| Ok(DVector::from_column_slice(&[-1.0, 0.0]))),
            DomainSpec::unbounded(1e3, 0.0, [-5.0, 5.0]).unwrap(),
        )
    }

    #[test]
    fn kernel_analysis_fold_origin() {
        let b = builtins::fold();
        let info = kernel_analysis(&b.system, &pt(0.0, &[0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(info.dim, 1);
        assert!((info.kernel[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((info.cokernel[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_analysis_regular_point() {
        let b = builtins::fold();
        let info = kernel_analysis(&b.system, &pt(1.0, &[1.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(info.dim, 0);
    }

    #[test]
    fn kernel_analysis_pitchfork_origin() {
        let b = builtins::pitchfork();
        let info = kernel_analysis(&b.system, &pt(0.0, &[0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(info.dim, 1);
    }

    #[test]
    fn kernel_analysis_rejects_non_zero() {
        let b = builtins::fold();
        assert!(matches!(
            kernel_analysis(&b.system, &pt(0.0, &[0.5]), DEFAULT_RANK_TOL),
            Err(Error::NotAZero { .. })
        ));
    }

    #[test]
    fn reduce_fold_is_identity_reduction() {
        // One state dimension: nothing to eliminate, G(lambda, z) must be
        // z^2 - lambda to machine precision across the trust region.
        let b = builtins::fold();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        assert_eq!(red.kernel_dim, 1);
        let mut worst = 0.0f64;
        for i in 0..21 {
            for j in 0..21 {
                let l = -0.1 + 0.2 * i as f64 / 20.0;
                let z = -0.1 + 0.2 * j as f64 / 20.0;
                let g = red.eval_reduced(l, &DVector::from_column_slice(&[z])).unwrap();
                worst = worst.max((g[0] - (z * z - l)).abs());
            }
        }
        assert!(worst <= 1e-9, "max |G - (z^2 - lambda)| = {worst:.3e}");
        let g = red
            .eval_reduced(0.01, &DVector::from_column_slice(&[0.1]))
            .unwrap();
        assert!(g[0].abs() <= 1e-14);
    }

    #[test]
    fn reduce_embedded_fold_matches_elimination() {
        let sys = embedded_fold();
        let red = ls_reduce(&sys, &pt(0.0, &[0.0, 0.0])).unwrap();
        assert_eq!(red.kernel_dim, 1);

        // Projections are idempotent and split the right subspaces.
        let p2 = &red.projector_p * &red.projector_p;
        let q2 = &red.projector_q * &red.projector_q;
        assert!((&p2 - &red.projector_p).amax() <= 1e-10);
        assert!((&q2 - &red.projector_q).amax() <= 1e-10);
        let jac = sys.jac_u(0.0, &DVector::zeros(2)).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        let annihilator = (&eye - &red.projector_q) * &jac;
        for w in [
            DVector::from_column_slice(&[1.0, 0.3]),
            DVector::from_column_slice(&[-0.7, 2.0]),
        ] {
            assert!((&annihilator * &w).norm() <= 1e-8);
        }

        // Reduced values against direct elimination (v = 0).
        let g = red
            .eval_reduced(0.04, &DVector::from_column_slice(&[0.2]))
            .unwrap();
        assert!(g[0].abs() <= 1e-12);
        let g = red
            .eval_reduced(0.04, &DVector::from_column_slice(&[0.1]))
            .unwrap();
        assert!((g[0] - (-0.03)).abs() <= 1e-12);

        // Singularity is inherited: G(lambda1, 0) = 0 and D_z G ~ 0.
        let g0 = red.eval_reduced(0.0, &DVector::zeros(1)).unwrap();
        assert!(g0[0].abs() <= red.psi_tolerance);
        let h = 1e-7;
        let gp = red.eval_reduced(0.0, &DVector::from_column_slice(&[h])).unwrap();
        let gm = red.eval_reduced(0.0, &DVector::from_column_slice(&[-h])).unwrap();
        let dz = (gp[0] - gm[0]) / (2.0 * h);
        assert!(dz.abs() <= 1e-6);
    }

    #[test]
    fn lift_round_trip() {
        let sys = embedded_fold();
        let red = ls_reduce(&sys, &pt(0.0, &[0.0, 0.0])).unwrap();
        // (lambda1, 0) maps to the singular point itself.
        let back = red.lift(0.0, &DVector::zeros(1)).unwrap();
        assert!(back.dist(&red.singular_point) <= 1e-12);
        // Zeros of G lift to zeros of F; projection inverts the lift.
        for z in [-0.2f64, -0.05, 0.05, 0.2] {
            let lambda = z * z;
            let lifted = red.lift(lambda, &DVector::from_column_slice(&[z])).unwrap();
            assert!((lifted.u[0] - z).abs() <= 1e-12);
            assert!(lifted.u[1].abs() <= red.psi_tolerance);
            let res = sys.residual(lifted.lambda, &lifted.u).unwrap().norm();
            assert!(res <= 10.0 * red.psi_tolerance);
            let (pl, pz) = red.project(&lifted);
            assert!((pl - lambda).abs() <= 1e-12);
            assert!((pz[0] - z).abs() <= 1e-10);
        }
    }

    #[test]
    fn enumerate_fold_two_half_branches() {
        let b = builtins::fold();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        let halves = enumerate_branches(&red, 0.1, 64).unwrap();
        assert_eq!(halves.len(), 2);
        for hb in &halves {
            assert!(hb.reduced.iter().all(|(l, _)| *l > 0.0));
            assert!(hb.points.len() >= 8);
        }
        // The two half-branches carry opposite kernel coordinates.
        let s0 = halves[0].reduced.last().unwrap().1.signum();
        let s1 = halves[1].reduced.last().unwrap().1.signum();
        assert_eq!(s0 * s1, -1.0);
    }

    #[test]
    fn enumerate_pitchfork_four_half_branches() {
        let b = builtins::pitchfork();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        let halves = enumerate_branches(&red, 0.1, 64).unwrap();
        assert_eq!(halves.len(), 4);
        assert_eq!(halves.len() % 2, 0);

        // Independent count: sign changes of G around the patch boundary.
        // Samples are offset by half a step so none lands exactly on a zero
        // of G (the trivial line crosses the boundary at angle 0).
        let mut crossings = 0usize;
        let n = 4000usize;
        let g_at = |j: usize| {
            let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
            let l = 0.1 * th.cos();
            let z = 0.1 * th.sin();
            red.eval_reduced(l, &DVector::from_column_slice(&[z])).unwrap()[0]
        };
        let mut prev = g_at(0);
        for j in 1..=n {
            let g = g_at(j % n);
            if prev * g < 0.0 {
                crossings += 1;
            }
            if g != 0.0 {
                prev = g;
            }
        }
        assert_eq!(crossings, halves.len());
    }

    #[test]
    fn enumerate_rejects_isolated_zero() {
        // F = lambda^2 + u^2 at the origin in a modified system: the zero is
        // isolated, so the local patch has no solution rays.
        let sys = ParameterizedSystem::new(
            1,
            Arc::new(|l: f64, u: &DVector<f64>| {
                Ok(DVector::from_column_slice(&[l * l + u[0] * u[0]]))
            }),
            Arc::new(|_, u: &DVector<f64>| Ok(DMatrix::from_column_slice(1, 1, &[2.0 * u[0]]))),
            Arc::new(|l: f64, _: &DVector<f64>| Ok(DVector::from_column_slice(&[2.0 * l]))),
            DomainSpec::unbounded(1e3, 0.0, [-5.0, 5.0]).unwrap(),
        );
        let red = ls_reduce(&sys, &pt(0.0, &[0.0])).unwrap();
        assert!(matches!(
            enumerate_branches(&red, 0.1, 32),
            Err(Error::IsolatedPoint)
        ));
    }

    #[test]
    fn puiseux_fold_square_root_scaling() {
        let b = builtins::fold();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        let halves = enumerate_branches(&red, 0.1, 64).unwrap();
        for hb in &halves {
            let fit = puiseux_exponent(&hb.points, &red.singular_point).unwrap();
            assert_eq!(fit.flag, FitFlag::Ok);
            let e = fit.exponent.unwrap();
            assert!((e - 0.5).abs() <= 0.01, "exponent {e}");
        }
    }

    #[test]
    fn puiseux_exact_parabola_samples() {
        // lambda = u^2 sampled exactly.
        let singular = pt(0.0, &[0.0]);
        let points: Vec<Point> = (1..=40)
            .map(|k| {
                let z = 1e-3 * (1.15f64).powi(k);
                pt(z * z, &[z])
            })
            .collect();
        let fit = puiseux_exponent(&points, &singular).unwrap();
        assert!((fit.exponent.unwrap() - 0.5).abs() <= 1e-6);
        assert!(fit.residual <= 1e-9);
    }

    #[test]
    fn puiseux_flags_trivial_line() {
        // u identically at the singular state while lambda moves.
        let singular = pt(0.0, &[0.0]);
        let points: Vec<Point> = (1..=20).map(|k| pt(k as f64 * 1e-3, &[0.0])).collect();
        let fit = puiseux_exponent(&points, &singular).unwrap();
        assert_eq!(fit.flag, FitFlag::Degenerate);
        assert!(fit.exponent.is_none());
    }

    #[test]
    fn puiseux_flags_vertical_branch() {
        // lambda pinned at the singular level while the state moves.
        let singular = pt(0.0, &[0.0]);
        let points: Vec<Point> = (1..=20).map(|k| pt(0.0, &[k as f64 * 1e-3])).collect();
        let fit = puiseux_exponent(&points, &singular).unwrap();
        assert_eq!(fit.flag, FitFlag::Vertical);
    }

    #[test]
    fn puiseux_rejects_short_branches() {
        let singular = pt(0.0, &[0.0]);
        let points: Vec<Point> = (1..=4).map(|k| pt(k as f64 * 1e-3, &[1e-3])).collect();
        assert!(puiseux_exponent(&points, &singular).is_err());
    }

    #[test]
    fn switch_fold_pairs_opposite_sheets() {
        let b = builtins::fold();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        // Entering along z = +sqrt(lambda), i.e. moving toward the fold with
        // decreasing z.
        let incoming = DVector::from_column_slice(&[0.0, -1.0]);
        let restart = switch_branch(&red, &incoming).unwrap();
        assert_eq!(restart.half_branch_count, 2);
        assert!(restart.point.u[0] < 0.0, "restart on z = -sqrt(lambda)");
        assert!(restart.alternatives.is_empty());
        // The restart tangent points away from the singular point.
        assert!(restart.tangent[1] < 0.0);
    }

    #[test]
    fn switch_circle_fold_descends() {
        let b = builtins::circle();
        let red = ls_reduce(&b.system, &pt(1.0, &[0.0])).unwrap();
        // Arriving at (1, 0) along the upper arc: tangent points down.
        let incoming = DVector::from_column_slice(&[0.0, -1.0]);
        let restart = switch_branch(&red, &incoming).unwrap();
        assert!(restart.point.u[0] < 0.0, "u keeps decreasing");
        assert!(restart.point.lambda < 1.0);
    }

    #[test]
    fn switch_reports_ambiguous_pairing() {
        // F = u (u - 0.2 lambda)(u + 0.2 lambda): three solution lines cross
        // at the origin, two of them within the angular tolerance of the
        // incoming line's antipode.
        let sys = ParameterizedSystem::new(
            1,
            Arc::new(|l: f64, u: &DVector<f64>| {
                Ok(DVector::from_column_slice(&[
                    u[0] * (u[0] - 0.2 * l) * (u[0] + 0.2 * l),
                ]))
            }),
            Arc::new(|l: f64, u: &DVector<f64>| {
                Ok(DMatrix::from_column_slice(
                    1,
                    1,
                    &[3.0 * u[0] * u[0] - 0.04 * l * l],
                ))
            }),
            Arc::new(|l: f64, u: &DVector<f64>| {
                Ok(DVector::from_column_slice(&[-0.08 * l * u[0]]))
            }),
            DomainSpec::unbounded(1e3, 0.0, [-5.0, 5.0]).unwrap(),
        );
        let red = ls_reduce(&sys, &pt(0.0, &[0.0])).unwrap();
        let halves = enumerate_branches(&red, red.raw_radius(), 64).unwrap();
        assert_eq!(halves.len(), 6);
        // Entering along u = 0 from lambda < 0.
        let incoming = DVector::from_column_slice(&[1.0, 0.0]);
        match switch_branch(&red, &incoming) {
            Err(Error::AmbiguousPairing { candidates }) => {
                assert!(candidates.len() >= 2);
            }
            other => panic!("expected ambiguous pairing, got {other:?}"),
        }
    }

    #[test]
    fn switch_pitchfork_prefers_same_contour_line() {
        let b = builtins::pitchfork();
        let red = ls_reduce(&b.system, &pt(0.0, &[0.0])).unwrap();
        // Entering along u = 0 from lambda < 0.
        let incoming = DVector::from_column_slice(&[1.0, 0.0]);
        let restart = switch_branch(&red, &incoming).unwrap();
        assert_eq!(restart.half_branch_count, 4);
        assert!(restart.point.lambda > 0.0);
        assert!(restart.point.u[0].abs() <= 1e-9, "stays on the trivial line");
        assert_eq!(restart.alternatives.len(), 2, "parabola pair listed");
    }
}
