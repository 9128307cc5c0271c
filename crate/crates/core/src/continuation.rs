//! Pseudo-arclength predictor-corrector tracing of unilateral solution
//! branches, with event detection (fold, singular point, boundary approach,
//! blow-up, base-slice return) and classification by the global alternatives.

use nalgebra::{DMatrix, DVector};

use crate::degree::{SliceCrossing, ZERO_RES_TOL};
use crate::error::{Error, Result};
use crate::numeric;
use crate::problem::{inside_domain, DomainSpec, ParameterizedSystem, Point};
use crate::singular;

/// Tolerance on |lambda - lambda0| for a refined base-slice return.
pub const BASE_RETURN_TOL: f64 = 1e-10;

const BISECT_MAX: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }

    pub fn sign(&self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Step-size control and corrector settings for one trace.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub grow: f64,
    pub shrink: f64,
    /// Consecutive successful steps before the step size grows.
    pub grow_after: usize,
    pub max_steps: usize,
    /// Minimum distance from the start state for a base-slice return.
    pub return_separation: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            h_init: 0.02,
            h_min: 1e-7,
            h_max: 0.1,
            newton_tol: 1e-10,
            newton_max_iter: 12,
            grow: 1.5,
            shrink: 0.5,
            grow_after: 2,
            max_steps: 5000,
            return_separation: 1e-3,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max && self.h_min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "step control",
                message: format!(
                    "need 0 < h_min <= h_init <= h_max, got {} / {} / {}",
                    self.h_min, self.h_init, self.h_max
                ),
            });
        }
        if !(self.grow > 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter {
                name: "step control",
                message: "need grow > 1 and shrink in (0, 1)".into(),
            });
        }
        if self.newton_tol <= 0.0 || self.newton_max_iter == 0 || self.max_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "step control",
                message: "tolerances and iteration budgets must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fold,
    Singular,
    BoundaryApproach,
    Blowup,
    BaseReturn,
    StepFailure,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Fold => "FOLD",
            EventKind::Singular => "SINGULAR",
            EventKind::BoundaryApproach => "BOUNDARY_APPROACH",
            EventKind::Blowup => "BLOWUP",
            EventKind::BaseReturn => "BASE_RETURN",
            EventKind::StepFailure => "STEP_FAILURE",
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventData {
    Fold {
        det_before: i32,
        det_after: i32,
    },
    Singular {
        kernel_dim: usize,
        /// Index of the outgoing half-branch chosen at a switch, plus the
        /// rejected candidates.
        outgoing: Option<usize>,
        alternatives: Vec<usize>,
    },
    BoundaryApproach {
        margin: f64,
    },
    Blowup {
        norm: f64,
    },
    BaseReturn {
        separation: f64,
    },
    StepFailure {
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub kind: EventKind,
    /// Index of the accepted point at which the event was charged.
    pub step: usize,
    /// Refined event location (between accepted points for folds and
    /// base-slice returns).
    pub location: Point,
    pub data: EventData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Unbounded,
    Boundary,
    BaseReturn,
    WindowExhausted,
    Stalled,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Unbounded => "UNBOUNDED",
            Classification::Boundary => "BOUNDARY",
            Classification::BaseReturn => "BASE_RETURN",
            Classification::WindowExhausted => "WINDOW_EXHAUSTED",
            Classification::Stalled => "STALLED",
        }
    }
}

/// Why the trace stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Event(EventKind),
    WindowEdge,
    BudgetExhausted,
    Stalled(String),
}

#[derive(Debug, Clone)]
pub struct Evidence {
    pub terminal_event: Option<EventKind>,
    pub reason: String,
    pub final_lambda: f64,
    pub final_aug_norm: f64,
    pub final_margin: f64,
    pub min_margin: f64,
    pub steps: usize,
    pub crossing_count: usize,
}

/// An ordered, event-annotated branch of accepted solution points.
#[derive(Debug, Clone)]
pub struct Branch {
    pub side: Side,
    pub points: Vec<Point>,
    /// Unit tangents in (lambda, u) space aligned with `points`.
    pub tangents: Vec<DVector<f64>>,
    pub det_signs: Vec<i32>,
    pub margins: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub events: Vec<Event>,
    /// Base-slice crossings collected along the branch (start included).
    pub crossings: Vec<SliceCrossing>,
    pub termination: Termination,
    pub classification: Classification,
    pub evidence: Evidence,
}

/// Unit kernel vector of the total Jacobian [dF/dlambda | dF/du].
///
/// With a previous tangent the result is oriented to keep a positive inner
/// product with it; without one the lambda component is made non-negative
/// (callers seed the branch side by flipping).
pub fn tangent(
    system: &ParameterizedSystem,
    point: &Point,
    previous: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = system.n_state();
    let total = system.total_jacobian(point.lambda, &point.u)?;
    let jmax = total.amax().max(1.0);

    let mut borders: Vec<DVector<f64>> = Vec::new();
    if let Some(prev) = previous {
        borders.push(prev.clone());
    }
    let mut e0 = DVector::zeros(n + 1);
    e0[0] = 1.0;
    borders.push(e0);
    for k in [1usize, n] {
        let mut e = DVector::zeros(n + 1);
        e[k.min(n)] = 1.0;
        borders.push(e);
    }

    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    for border in &borders {
        let mut bordered = DMatrix::zeros(n + 1, n + 1);
        bordered.view_mut((0, 0), (n, n + 1)).copy_from(&total);
        bordered.row_mut(n).copy_from(&border.transpose());
        let Some(sol) = numeric::solve_dense(&bordered, &rhs) else {
            continue;
        };
        let norm = sol.norm();
        if norm < 1e-12 {
            continue;
        }
        let t = sol / norm;
        if (&total * &t).norm() > 1e-7 * jmax {
            continue;
        }
        let mut t = t;
        match previous {
            Some(prev) => {
                if t.dot(prev) < 0.0 {
                    t = -t;
                }
            }
            None => {
                if t[0] < 0.0 {
                    t = -t;
                } else if t[0] == 0.0 {
                    // No lambda component: canonicalize by the dominant entry.
                    let mut k = 0;
                    let mut best = -1.0;
                    for (i, v) in t.iter().enumerate() {
                        if v.abs() > best {
                            best = v.abs();
                            k = i;
                        }
                    }
                    if t[k] < 0.0 {
                        t = -t;
                    }
                }
            }
        }
        return Ok(t);
    }

    // Every bordered solve failed: decide between a rank-deficient total
    // Jacobian (kernel dimension >= 2) and a pathological border choice.
    let sv = total.singular_values();
    let svals: Vec<f64> = sv.iter().cloned().collect();
    if numeric::rank_from_svals(&svals, numeric::RANK_RATIO_TOL) < n {
        Err(Error::RankDeficient {
            lambda: point.lambda,
        })
    } else {
        Err(Error::Precondition(
            "tangent solve failed with every bordering direction".into(),
        ))
    }
}

/// Outcome of one pseudo-arclength corrector solve.
#[derive(Debug, Clone)]
pub enum CorrectOutcome {
    Converged(Point),
    /// Newton converged to a zero, but the zero lies outside the domain.
    /// Carries the bracketing data for a boundary-crossing refinement.
    OutOfDomain { exit: Point, margin: f64 },
    Diverged { residual: f64 },
}

/// Newton iteration on the augmented system
/// { F(lambda, u) = 0, <(lambda, u) - predicted, tangent> = 0 }.
pub fn correct(
    system: &ParameterizedSystem,
    predicted: &Point,
    tangent_dir: &DVector<f64>,
    ctl: &StepControl,
) -> Result<CorrectOutcome> {
    let n = system.n_state();
    let pred_aug = predicted.aug();
    let mut cur = pred_aug.clone();
    let mut last_res = f64::INFINITY;

    for _ in 0..=ctl.newton_max_iter {
        let u = cur.rows(1, n).into_owned();
        let lambda = cur[0];
        let res = match system.residual(lambda, &u) {
            Ok(r) => r,
            Err(Error::Eval(_)) | Err(Error::OutsideDomain { .. }) => {
                return Ok(CorrectOutcome::Diverged {
                    residual: f64::INFINITY,
                })
            }
            Err(e) => return Err(e),
        };
        let res_norm = res.norm();
        last_res = res_norm;
        if res_norm <= ctl.newton_tol {
            let point = Point::new(lambda, u)?;
            let margin = system.domain.margin(point.lambda, &point.u);
            if margin > 0.0 {
                return Ok(CorrectOutcome::Converged(point));
            }
            return Ok(CorrectOutcome::OutOfDomain {
                exit: point,
                margin,
            });
        }

        let total = match system.total_jacobian(lambda, &u) {
            Ok(j) => j,
            Err(Error::Eval(_)) => {
                return Ok(CorrectOutcome::Diverged {
                    residual: res_norm,
                })
            }
            Err(e) => return Err(e),
        };
        let mut bordered = DMatrix::zeros(n + 1, n + 1);
        bordered.view_mut((0, 0), (n, n + 1)).copy_from(&total);
        bordered.row_mut(n).copy_from(&tangent_dir.transpose());
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -res[i];
        }
        rhs[n] = -tangent_dir.dot(&(&cur - &pred_aug));
        let Some(delta) = numeric::solve_dense(&bordered, &rhs) else {
            return Ok(CorrectOutcome::Diverged {
                residual: res_norm,
            });
        };

        // Damped update: halve until the residual decreases.
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..7 {
            let cand = &cur + step * &delta;
            let cu = cand.rows(1, n).into_owned();
            if let Ok(r) = system.residual(cand[0], &cu) {
                let nrm = r.norm();
                if nrm < res_norm || nrm <= ctl.newton_tol {
                    cur = cand;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(CorrectOutcome::Diverged {
                residual: res_norm,
            });
        }
    }
    // Final convergence check after the last update.
    let u = cur.rows(1, n).into_owned();
    if let Ok(r) = system.residual(cur[0], &u) {
        if r.norm() <= ctl.newton_tol {
            let point = Point::new(cur[0], u)?;
            let margin = system.domain.margin(point.lambda, &point.u);
            return Ok(if margin > 0.0 {
                CorrectOutcome::Converged(point)
            } else {
                CorrectOutcome::OutOfDomain {
                    exit: point,
                    margin,
                }
            });
        }
        last_res = r.norm();
    }
    Ok(CorrectOutcome::Diverged { residual: last_res })
}

/// Corrected curve point at fraction `s` of the secant between two accepted
/// zeros. Returns the converged zero together with its margin, inside the
/// domain or not.
fn corrected_at(
    system: &ParameterizedSystem,
    prev: &Point,
    next: &Point,
    ctl: &StepControl,
    s: f64,
) -> Result<Option<(Point, f64)>> {
    let pa = prev.aug();
    let na = next.aug();
    let mut dir = &na - &pa;
    let len = dir.norm();
    if len == 0.0 {
        return Ok(Some((
            prev.clone(),
            system.domain.margin(prev.lambda, &prev.u),
        )));
    }
    dir /= len;
    let pred = Point::from_aug(&(&pa + s * (&na - &pa)));
    match correct(system, &pred, &dir, ctl)? {
        CorrectOutcome::Converged(p) => {
            let m = system.domain.margin(p.lambda, &p.u);
            Ok(Some((p, m)))
        }
        CorrectOutcome::OutOfDomain { exit, margin } => Ok(Some((exit, margin))),
        CorrectOutcome::Diverged { .. } => Ok(None),
    }
}

/// Bisection along the corrected curve for the base-slice crossing, to
/// |lambda - lambda0| <= `BASE_RETURN_TOL`.
fn refine_base_return(
    system: &ParameterizedSystem,
    prev: &Point,
    next: &Point,
    lambda0: f64,
    ctl: &StepControl,
) -> Result<Point> {
    let ga = prev.lambda - lambda0;
    let gb = next.lambda - lambda0;
    if gb == 0.0 {
        return Ok(next.clone());
    }
    if ga * gb > 0.0 {
        return Err(Error::Refine("no base-level crossing in the segment".into()));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut sign_lo = ga.signum();
    let mut best: Option<Point> = None;
    for _ in 0..BISECT_MAX {
        let s = 0.5 * (lo + hi);
        let Some((p, _)) = corrected_at(system, prev, next, ctl, s)? else {
            return Err(Error::Refine("corrector diverged during bisection".into()));
        };
        let g = p.lambda - lambda0;
        if g.abs() <= BASE_RETURN_TOL {
            return Ok(p);
        }
        if g.signum() == sign_lo {
            lo = s;
        } else {
            hi = s;
        }
        sign_lo = if lo == s { g.signum() } else { sign_lo };
        best = Some(p);
    }
    let p = best.ok_or_else(|| Error::Refine("empty bisection".into()))?;
    if (p.lambda - lambda0).abs() <= 10.0 * BASE_RETURN_TOL {
        Ok(p)
    } else {
        Err(Error::Refine(format!(
            "base-return bisection stalled at |lambda - lambda0| = {:.3e}",
            (p.lambda - lambda0).abs()
        )))
    }
}

/// Bisection along the corrected curve for the determinant-sign flip.
/// Returns the refined location.
fn refine_det_flip(
    system: &ParameterizedSystem,
    prev: &Point,
    next: &Point,
    det_prev: i32,
    ctl: &StepControl,
) -> Result<Point> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let dist = prev.dist(next).max(1e-300);
    let mut loc = Point::from_aug(&(0.5 * (prev.aug() + next.aug())));
    for _ in 0..BISECT_MAX {
        let s = 0.5 * (lo + hi);
        let Some((p, _)) = corrected_at(system, prev, next, ctl, s)? else {
            return Err(Error::Refine("corrector diverged during bisection".into()));
        };
        let jac = system.jac_u(p.lambda, &p.u)?;
        let d = numeric::det_sign_unchecked(&jac);
        loc = p;
        if d == 0 {
            // Landed inside the singular-value threshold band.
            return Ok(loc);
        }
        if d == det_prev {
            lo = s;
        } else {
            hi = s;
        }
        if (hi - lo) * dist <= 1e-13 * (1.0 + loc.aug_norm()) {
            break;
        }
    }
    Ok(loc)
}

/// Bisection along the corrected curve between an inside point and an
/// outside zero, returning an in-domain point with margin at most
/// `threshold`.
fn refine_boundary(
    system: &ParameterizedSystem,
    inside: &Point,
    outside: &Point,
    threshold: f64,
    ctl: &StepControl,
) -> Result<Point> {
    let m_in = system.domain.margin(inside.lambda, &inside.u);
    if m_in <= threshold && m_in > 0.0 {
        return Ok(inside.clone());
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(Point, f64)> = None;
    for _ in 0..BISECT_MAX {
        let s = 0.5 * (lo + hi);
        let Some((p, m)) = corrected_at(system, inside, outside, ctl, s)? else {
            // Corrector trouble this deep usually means the boundary zone
            // itself is hostile; fall back to the best inside point so far.
            break;
        };
        if m > 0.0 {
            lo = s;
            best = Some((p.clone(), m));
            if m <= threshold {
                return Ok(p);
            }
        } else {
            hi = s;
        }
    }
    match best {
        Some((p, m)) if m <= threshold => Ok(p),
        _ => Err(Error::Refine(
            "boundary bisection did not reach the margin threshold".into(),
        )),
    }
}

/// Context for event detection along one accepted segment.
pub struct EventContext<'a> {
    pub start: &'a Point,
    pub ctl: &'a StepControl,
    /// Index the detected events will be charged to.
    pub step: usize,
    pub det_prev: Option<i32>,
    pub det_next: Option<i32>,
}

fn slice_kernel_dim(system: &ParameterizedSystem, point: &Point) -> Result<usize> {
    // Judged against the nearby Jacobian scale, not just this matrix.
    Ok(singular::kernel_analysis(system, point, numeric::RANK_RATIO_TOL)?.dim)
}

/// True when the total Jacobian at `at` is rank-deficient, judged against
/// the scale of the flanking regular points.
fn total_rank_deficient(
    system: &ParameterizedSystem,
    at: &Point,
    flanks: &[&Point],
) -> Result<bool> {
    let j = system.total_jacobian(at.lambda, &at.u)?;
    let (smin, mut smax) = numeric::sval_extrema(&j);
    for f in flanks {
        let jf = system.total_jacobian(f.lambda, &f.u)?;
        let (_, s) = numeric::sval_extrema(&jf);
        smax = smax.max(s);
    }
    Ok(smax <= 0.0 || smin <= numeric::RANK_RATIO_TOL * smax)
}

/// Scans one accepted segment (prev -> next) for events. Fold and base-return
/// locations are refined by bisection on the corrected curve; boundary and
/// blow-up checks apply to the accepted endpoint.
pub fn detect_events(
    system: &ParameterizedSystem,
    prev: &Point,
    next: &Point,
    ctx: &EventContext<'_>,
) -> Result<Vec<Event>> {
    let domain = &system.domain;
    let mut events = Vec::new();

    let det_at = |p: &Point| -> Result<i32> {
        let j = system.jac_u(p.lambda, &p.u)?;
        Ok(numeric::det_sign_unchecked(&j))
    };
    let det_prev = match ctx.det_prev {
        Some(d) => d,
        None => det_at(prev)?,
    };
    let det_next = match ctx.det_next {
        Some(d) => d,
        None => det_at(next)?,
    };

    if det_prev == 0 || det_next == 0 {
        // An accepted point sits inside the singular band itself.
        let loc = if det_prev == 0 { prev } else { next };
        events.push(Event {
            kind: EventKind::Singular,
            step: ctx.step,
            location: loc.clone(),
            data: EventData::Singular {
                kernel_dim: slice_kernel_dim(system, loc)?,
                outgoing: None,
                alternatives: Vec::new(),
            },
        });
    } else if det_prev != det_next {
        let loc = refine_det_flip(system, prev, next, det_prev, ctx.ctl)?;
        if total_rank_deficient(system, &loc, &[prev, next])? {
            events.push(Event {
                kind: EventKind::Singular,
                step: ctx.step,
                location: loc.clone(),
                data: EventData::Singular {
                    kernel_dim: slice_kernel_dim(system, &loc)?,
                    outgoing: None,
                    alternatives: Vec::new(),
                },
            });
        } else {
            events.push(Event {
                kind: EventKind::Fold,
                step: ctx.step,
                location: loc,
                data: EventData::Fold {
                    det_before: det_prev,
                    det_after: det_next,
                },
            });
        }
    }

    // Base-slice return: lambda - lambda0 changes sign across (prev, next].
    let a = prev.lambda - domain.base_lambda;
    let b = next.lambda - domain.base_lambda;
    if (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0) || (b == 0.0 && a != 0.0) {
        let crossing = refine_base_return(system, prev, next, domain.base_lambda, ctx.ctl)?;
        let separation = (&crossing.u - &ctx.start.u).norm();
        if separation > ctx.ctl.return_separation {
            events.push(Event {
                kind: EventKind::BaseReturn,
                step: ctx.step,
                location: crossing,
                data: EventData::BaseReturn { separation },
            });
        }
    }

    let margin_next = domain.margin(next.lambda, &next.u);
    if margin_next < domain.boundary_threshold {
        events.push(Event {
            kind: EventKind::BoundaryApproach,
            step: ctx.step,
            location: next.clone(),
            data: EventData::BoundaryApproach {
                margin: margin_next,
            },
        });
    }

    let norm_next = next.aug_norm();
    if norm_next > domain.norm_cap {
        events.push(Event {
            kind: EventKind::Blowup,
            step: ctx.step,
            location: next.clone(),
            data: EventData::Blowup { norm: norm_next },
        });
    }

    Ok(events)
}

struct TraceState {
    points: Vec<Point>,
    tangents: Vec<DVector<f64>>,
    det_signs: Vec<i32>,
    margins: Vec<f64>,
    residual_norms: Vec<f64>,
    events: Vec<Event>,
    crossings: Vec<SliceCrossing>,
}

impl TraceState {
    fn accept(
        &mut self,
        system: &ParameterizedSystem,
        p: Point,
        t: DVector<f64>,
        det: Option<i32>,
    ) -> Result<()> {
        let det = match det {
            Some(d) => d,
            None => {
                let jac = system.jac_u(p.lambda, &p.u)?;
                numeric::det_sign_unchecked(&jac)
            }
        };
        self.det_signs.push(det);
        self.margins.push(system.domain.margin(p.lambda, &p.u));
        self.residual_norms.push(system.residual_norm(&p)?);
        self.points.push(p);
        self.tangents.push(t);
        Ok(())
    }
}

/// Traces one unilateral branch from a regular zero at the base parameter
/// level. The predictor steps along the tangent, the corrector projects back
/// onto the zero set perpendicular to it, and the step size adapts to
/// corrector behavior. Folds are passed through; rank-deficient zeros are
/// handed to the singular module for a branch switch.
pub fn trace(
    system: &ParameterizedSystem,
    start: &Point,
    side: Side,
    ctl: &StepControl,
) -> Result<Branch> {
    ctl.validate()?;
    let domain = system.domain.clone();

    let (is_inside, margin0) = inside_domain(&domain, start);
    if !is_inside {
        return Err(Error::OutsideDomain { margin: margin0 });
    }
    let res0 = system.residual_norm(start)?;
    if res0 > ZERO_RES_TOL {
        return Err(Error::NotAZero {
            residual: res0,
            tol: ZERO_RES_TOL,
        });
    }
    if (start.lambda - domain.base_lambda).abs() > 1e-9 * (1.0 + domain.base_lambda.abs()) {
        return Err(Error::Precondition(format!(
            "start lambda {} is not the base level {}",
            start.lambda, domain.base_lambda
        )));
    }
    let jac0 = system.jac_u(start.lambda, &start.u)?;
    let det0 = numeric::det_sign_unchecked(&jac0);
    if det0 == 0 {
        return Err(Error::SingularJacobian {
            lambda: start.lambda,
        });
    }

    let mut t0 = tangent(system, start, None)?;
    if t0[0].abs() < 1e-12 {
        return Err(Error::Precondition(
            "seed tangent has no lambda component; cannot honor the requested side".into(),
        ));
    }
    if t0[0] * side.sign() < 0.0 {
        t0 = -t0;
    }

    let mut st = TraceState {
        points: vec![start.clone()],
        tangents: vec![t0],
        det_signs: vec![det0],
        margins: vec![margin0],
        residual_norms: vec![res0],
        events: Vec::new(),
        crossings: vec![SliceCrossing::at(
            system,
            domain.base_lambda,
            start.u.clone(),
        )?],
    };

    let mut h = ctl.h_init;
    let mut consecutive_ok = 0usize;
    let mut termination: Option<Termination> = None;

    'steps: for _ in 0..ctl.max_steps {
        let prev = st.points.last().expect("non-empty").clone();
        let t_prev = st.tangents.last().expect("non-empty").clone();
        let det_prev = *st.det_signs.last().expect("non-empty");

        let predicted = Point::from_aug(&(prev.aug() + h * &t_prev));
        match correct(system, &predicted, &t_prev, ctl)? {
            CorrectOutcome::Converged(next) => {
                let step_index = st.points.len();
                let jac_next = system.jac_u(next.lambda, &next.u)?;
                let det_next = numeric::det_sign_unchecked(&jac_next);
                let ctx = EventContext {
                    start,
                    ctl,
                    step: step_index,
                    det_prev: Some(det_prev),
                    det_next: Some(det_next),
                };
                let events = detect_events(system, &prev, &next, &ctx)?;

                // A rank-deficient zero reroutes the trace through the
                // reduced problem; the naive continuation point is dropped.
                if let Some(ev) = events
                    .iter()
                    .find(|e| e.kind == EventKind::Singular)
                    .cloned()
                {
                    match handle_singular(system, &ev, &t_prev, ctl) {
                        Ok((restart, restart_tangent, outgoing, alternatives)) => {
                            let mut ev = ev;
                            if let EventData::Singular {
                                outgoing: o,
                                alternatives: a,
                                ..
                            } = &mut ev.data
                            {
                                *o = Some(outgoing);
                                *a = alternatives;
                            }
                            st.events.push(ev);
                            st.accept(system, restart, restart_tangent, None)?;
                            h = ctl.h_init;
                            consecutive_ok = 0;
                            continue 'steps;
                        }
                        Err(e) => {
                            st.events.push(Event {
                                kind: EventKind::StepFailure,
                                step: step_index,
                                location: ev.location.clone(),
                                data: EventData::StepFailure {
                                    reason: format!("singular-point handling failed: {e}"),
                                },
                            });
                            termination =
                                Some(Termination::Stalled(format!("singular point: {e}")));
                            break 'steps;
                        }
                    }
                }

                let t_next = match tangent(system, &next, Some(&t_prev)) {
                    Ok(t) => t,
                    Err(Error::RankDeficient { .. }) => {
                        // The accepted point itself is rank-deficient.
                        termination = Some(Termination::Stalled(
                            "rank-deficient total Jacobian at an accepted point".into(),
                        ));
                        break 'steps;
                    }
                    Err(e) => return Err(e),
                };

                // Loop closure through the start: a base-level crossing that
                // failed the separation test.
                let a = prev.lambda - domain.base_lambda;
                let b = next.lambda - domain.base_lambda;
                let crossed = (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0);
                let has_return = events.iter().any(|e| e.kind == EventKind::BaseReturn);
                if crossed && !has_return {
                    st.accept(system, next, t_next, Some(det_next))?;
                    termination = Some(Termination::Stalled(
                        "branch closed back onto the start state".into(),
                    ));
                    break 'steps;
                }

                st.accept(system, next.clone(), t_next, Some(det_next))?;
                let mut terminal: Option<Termination> = None;
                for ev in events {
                    match ev.kind {
                        EventKind::Fold => st.events.push(ev),
                        EventKind::BaseReturn => {
                            st.crossings.push(SliceCrossing::at(
                                system,
                                domain.base_lambda,
                                ev.location.u.clone(),
                            )?);
                            st.events.push(ev);
                            if terminal.is_none() {
                                terminal = Some(Termination::Event(EventKind::BaseReturn));
                            }
                        }
                        EventKind::BoundaryApproach => {
                            st.events.push(ev);
                            if terminal.is_none() {
                                terminal = Some(Termination::Event(EventKind::BoundaryApproach));
                            }
                        }
                        EventKind::Blowup => {
                            st.events.push(ev);
                            if terminal.is_none() {
                                terminal = Some(Termination::Event(EventKind::Blowup));
                            }
                        }
                        EventKind::Singular | EventKind::StepFailure => unreachable!(),
                    }
                }
                if let Some(t) = terminal {
                    termination = Some(t);
                    break 'steps;
                }
                if next.lambda < domain.lambda_window[0] || next.lambda > domain.lambda_window[1] {
                    termination = Some(Termination::WindowEdge);
                    break 'steps;
                }

                consecutive_ok += 1;
                if consecutive_ok >= ctl.grow_after {
                    h = (h * ctl.grow).min(ctl.h_max);
                }
            }
            CorrectOutcome::OutOfDomain { exit, margin: _ } => {
                match refine_boundary(system, &prev, &exit, domain.boundary_threshold, ctl) {
                    Ok(bpt) => {
                        let step_index = st.points.len();
                        let margin = domain.margin(bpt.lambda, &bpt.u);
                        let t_b = tangent(system, &bpt, Some(&t_prev)).unwrap_or(t_prev.clone());
                        st.accept(system, bpt.clone(), t_b, None)?;
                        st.events.push(Event {
                            kind: EventKind::BoundaryApproach,
                            step: step_index,
                            location: bpt,
                            data: EventData::BoundaryApproach { margin },
                        });
                        termination = Some(Termination::Event(EventKind::BoundaryApproach));
                        break 'steps;
                    }
                    Err(_) => {
                        consecutive_ok = 0;
                        h *= ctl.shrink;
                        if h < ctl.h_min {
                            st.events.push(Event {
                                kind: EventKind::StepFailure,
                                step: st.points.len() - 1,
                                location: prev.clone(),
                                data: EventData::StepFailure {
                                    reason: "step size underflow at the domain boundary".into(),
                                },
                            });
                            termination = Some(Termination::Stalled(
                                "step size fell below h_min near the domain boundary".into(),
                            ));
                            break 'steps;
                        }
                    }
                }
            }
            CorrectOutcome::Diverged { residual } => {
                consecutive_ok = 0;
                h *= ctl.shrink;
                if h < ctl.h_min {
                    st.events.push(Event {
                        kind: EventKind::StepFailure,
                        step: st.points.len() - 1,
                        location: prev.clone(),
                        data: EventData::StepFailure {
                            reason: format!(
                                "corrector diverged (residual {residual:.3e}) and the step size underflowed"
                            ),
                        },
                    });
                    termination = Some(Termination::Stalled(
                        "step size fell below h_min".into(),
                    ));
                    break 'steps;
                }
            }
        }
    }

    let termination = termination.unwrap_or(Termination::BudgetExhausted);
    let mut branch = Branch {
        side,
        points: st.points,
        tangents: st.tangents,
        det_signs: st.det_signs,
        margins: st.margins,
        residual_norms: st.residual_norms,
        events: st.events,
        crossings: st.crossings,
        termination,
        classification: Classification::Stalled,
        evidence: Evidence {
            terminal_event: None,
            reason: String::new(),
            final_lambda: 0.0,
            final_aug_norm: 0.0,
            final_margin: 0.0,
            min_margin: 0.0,
            steps: 0,
            crossing_count: 0,
        },
    };
    let (classification, evidence) = classify(&branch, &domain);
    branch.classification = classification;
    branch.evidence = evidence;
    Ok(branch)
}

fn handle_singular(
    system: &ParameterizedSystem,
    ev: &Event,
    incoming_tangent: &DVector<f64>,
    ctl: &StepControl,
) -> Result<(Point, DVector<f64>, usize, Vec<usize>)> {
    let red = singular::ls_reduce(system, &ev.location)?;
    let restart = singular::switch_branch(&red, incoming_tangent)?;
    // Polish the lifted restart point back to corrector tolerance.
    let polished = match correct(system, &restart.point, &restart.tangent, ctl)? {
        CorrectOutcome::Converged(p) => p,
        CorrectOutcome::OutOfDomain { margin, .. } => {
            return Err(Error::Refine(format!(
                "restart point left the domain (margin {margin:.3e})"
            )))
        }
        CorrectOutcome::Diverged { residual } => {
            return Err(Error::Refine(format!(
                "restart polish diverged (residual {residual:.3e})"
            )))
        }
    };
    let t = tangent(system, &polished, Some(&restart.tangent))?;
    Ok((polished, t, restart.outgoing, restart.alternatives.clone()))
}

/// Maps the terminal state of a traced branch onto a global-alternative
/// label and assembles the evidence bundle.
pub fn classify(branch: &Branch, domain: &DomainSpec) -> (Classification, Evidence) {
    let last = branch.points.last().expect("branch has at least the start");
    let (classification, terminal_event, reason) = match &branch.termination {
        Termination::Event(EventKind::Blowup) => (
            Classification::Unbounded,
            Some(EventKind::Blowup),
            format!(
                "augmented norm exceeded the cap {:.3e}; reported as unbounded on the evidence of the run",
                domain.norm_cap
            ),
        ),
        Termination::Event(EventKind::BoundaryApproach) => (
            Classification::Boundary,
            Some(EventKind::BoundaryApproach),
            format!(
                "domain margin fell below the boundary threshold {:.3e}",
                domain.boundary_threshold
            ),
        ),
        Termination::Event(EventKind::BaseReturn) => (
            Classification::BaseReturn,
            Some(EventKind::BaseReturn),
            "branch returned to the base parameter level at a different state".into(),
        ),
        Termination::Event(k) => (
            Classification::Stalled,
            Some(*k),
            format!("trace ended on a non-terminal event {}", k.as_str()),
        ),
        Termination::WindowEdge => (
            Classification::WindowExhausted,
            None,
            "lambda window edge reached with no terminal event; alternative undetermined within the window"
                .into(),
        ),
        Termination::BudgetExhausted => (
            Classification::Stalled,
            None,
            "step budget exhausted; trace inconclusive".into(),
        ),
        Termination::Stalled(msg) => (Classification::Stalled, None, msg.clone()),
    };
    let min_margin = branch
        .margins
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let evidence = Evidence {
        terminal_event,
        reason,
        final_lambda: last.lambda,
        final_aug_norm: last.aug_norm(),
        final_margin: *branch.margins.last().expect("non-empty"),
        min_margin,
        steps: branch.points.len() - 1,
        crossing_count: branch.crossings.len(),
    };
    (classification, evidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use nalgebra::DVector;

    fn pt(lambda: f64, u: &[f64]) -> Point {
        Point::new(lambda, DVector::from_column_slice(u)).unwrap()
    }

    fn ctl() -> StepControl {
        StepControl {
            h_init: 0.05,
            ..StepControl::default()
        }
    }

    fn assert_branch_invariants(b: &Branch, ctl: &StepControl) {
        for (i, r) in b.residual_norms.iter().enumerate() {
            assert!(*r <= ctl.newton_tol * 1.001, "point {i} residual {r:.3e}");
        }
        for m in &b.margins {
            assert!(*m > 0.0);
        }
        for w in b.tangents.windows(2) {
            assert!(w[0].dot(&w[1]) > 0.0, "tangent direction reversed");
        }
        for (i, w) in b.points.windows(2).enumerate() {
            let d = w[0].dist(&w[1]);
            assert!(
                d >= 0.05 * ctl.h_min && d <= 2.0 * ctl.h_max,
                "step {i} spacing {d:.3e} outside [{:.1e}, {:.1e}]",
                0.05 * ctl.h_min,
                2.0 * ctl.h_max
            );
        }
        // Local injectivity surrogate over sliding windows of 20 points.
        for w in b.points.windows(20) {
            for i in 0..w.len() {
                for j in i + 1..w.len() {
                    assert!(w[i].dist(&w[j]) > 0.05 * ctl.h_min);
                }
            }
        }
        // Determinant signs flip only across recorded fold/singular events.
        for (i, d) in b.det_signs.windows(2).enumerate() {
            if d[0] != d[1] {
                let has_event = b.events.iter().any(|e| {
                    e.step == i + 1
                        && matches!(e.kind, EventKind::Fold | EventKind::Singular)
                });
                assert!(has_event, "unexplained det-sign flip at step {}", i + 1);
            }
        }
    }

    #[test]
    fn tangent_fold_explicit_kernel() {
        // Total Jacobian (-1, 2u) at (1, 1): kernel along (2, 1)/sqrt(5).
        let b = builtins::fold();
        let t = tangent(&b.system, &pt(1.0, &[1.0]), None).unwrap();
        let s5 = 5.0f64.sqrt();
        assert!((t[0] - 2.0 / s5).abs() < 1e-12);
        assert!((t[1] - 1.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn tangent_linear_system_matches_derivative() {
        use std::sync::Arc;
        use crate::problem::{DomainSpec, ParameterizedSystem};
        use nalgebra::DMatrix;
        // F = A u - lambda b: u(lambda) = lambda A^{-1} b, tangent
        // proportional to (1, A^{-1} b).
        let a = DMatrix::from_column_slice(2, 2, &[3.0, 1.0, -1.0, 2.0]);
        let bvec = DVector::from_column_slice(&[1.0, 1.0]);
        let a1 = a.clone();
        let a2 = a.clone();
        let b1 = bvec.clone();
        let b2 = bvec.clone();
        let sys = ParameterizedSystem::new(
            2,
            Arc::new(move |l, u: &DVector<f64>| Ok(&a1 * u - l * &b1)),
            Arc::new(move |_, _: &DVector<f64>| Ok(a2.clone())),
            Arc::new(move |_, _: &DVector<f64>| Ok(-b2.clone())),
            DomainSpec::unbounded(1e6, 0.0, [-10.0, 10.0]).unwrap(),
        );
        let t = tangent(&sys, &pt(0.0, &[0.0, 0.0]), None).unwrap();
        let du = a.lu().solve(&bvec).unwrap();
        let mut expect = DVector::zeros(3);
        expect[0] = 1.0;
        expect.rows_mut(1, 2).copy_from(&du);
        expect /= expect.norm();
        assert!((t - expect).norm() < 1e-10);
    }

    #[test]
    fn tangent_secant_cross_check_on_circle() {
        // Compare with the secant through two corrected points at
        // lambda = +/- 1e-4.
        let b = builtins::circle();
        let t = tangent(&b.system, &pt(0.5, &[0.75f64.sqrt()]), None).unwrap();
        let up = pt(0.5 + 1e-4, &[(1.0f64 - (0.5f64 + 1e-4).powi(2)).sqrt()]);
        let dn = pt(0.5 - 1e-4, &[(1.0f64 - (0.5f64 - 1e-4).powi(2)).sqrt()]);
        let mut secant = up.aug() - dn.aug();
        secant /= secant.norm();
        assert!((t - secant).norm() < 1e-6);
    }

    #[test]
    fn correct_returns_exact_zero_unchanged() {
        let b = builtins::circle();
        let t = DVector::from_column_slice(&[1.0, 0.0]);
        match correct(&b.system, &pt(0.0, &[1.0]), &t, &ctl()).unwrap() {
            CorrectOutcome::Converged(p) => {
                assert_eq!(p.lambda, 0.0);
                assert_eq!(p.u[0], 1.0);
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn correct_projects_predictor_onto_circle() {
        let b = builtins::circle();
        let t = DVector::from_column_slice(&[1.0, 0.0]);
        let predicted = pt(0.1, &[1.0]);
        match correct(&b.system, &predicted, &t, &ctl()).unwrap() {
            CorrectOutcome::Converged(p) => {
                let res = (p.u[0] * p.u[0] + p.lambda * p.lambda - 1.0).abs();
                assert!(res <= 1e-10);
                // Constraint plane: lambda pinned at the prediction.
                assert!((p.lambda - 0.1).abs() < 1e-12);
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn correct_passes_fold_with_lambda_free() {
        // Tangent along the state axis: the corrector adjusts lambda, which
        // is exactly what naive lambda-stepping cannot do at a fold.
        let b = builtins::fold();
        let t = DVector::from_column_slice(&[0.0, 1.0]);
        let predicted = pt(0.0, &[0.05]);
        match correct(&b.system, &predicted, &t, &ctl()).unwrap() {
            CorrectOutcome::Converged(p) => {
                assert!((p.u[0] - 0.05).abs() < 1e-12);
                assert!((p.lambda - 0.0025).abs() < 1e-10);
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn detect_fold_on_fold_example() {
        let b = builtins::fold();
        let c = ctl();
        let prev = pt(0.0025, &[0.05]);
        let next = pt(0.0025, &[-0.05]);
        let ctx = EventContext {
            start: &pt(1.0, &[1.0]),
            ctl: &c,
            step: 1,
            det_prev: None,
            det_next: None,
        };
        let events = detect_events(&b.system, &prev, &next, &ctx).unwrap();
        let fold = events
            .iter()
            .find(|e| e.kind == EventKind::Fold)
            .expect("fold event");
        assert!(fold.location.lambda.abs() < 1e-6);
        assert!(fold.location.u[0].abs() < 1e-6);
        match fold.data {
            EventData::Fold {
                det_before,
                det_after,
            } => {
                assert_eq!((det_before, det_after), (1, -1));
            }
            _ => panic!("wrong payload"),
        }
    }

    #[test]
    fn detect_base_return_on_circle() {
        let b = builtins::circle();
        let c = ctl();
        let u_of = |l: f64| -(1.0f64 - l * l).sqrt();
        let prev = pt(0.05, &[u_of(0.05)]);
        let next = pt(-0.05, &[u_of(-0.05)]);
        let start = pt(0.0, &[1.0]);
        let ctx = EventContext {
            start: &start,
            ctl: &c,
            step: 7,
            det_prev: None,
            det_next: None,
        };
        let events = detect_events(&b.system, &prev, &next, &ctx).unwrap();
        let ret = events
            .iter()
            .find(|e| e.kind == EventKind::BaseReturn)
            .expect("base return");
        assert!((ret.location.lambda).abs() <= 1e-10);
        assert!((ret.location.u[0] + 1.0).abs() <= 1e-8);
    }

    #[test]
    fn trace_circle_both_sides_base_return() {
        let b = builtins::circle();
        let c = ctl();
        for side in [Side::Plus, Side::Minus] {
            let branch = trace(&b.system, &b.start, side, &c).unwrap();
            assert_eq!(branch.classification, Classification::BaseReturn);
            assert_branch_invariants(&branch, &c);
            // Exactly one fold on each half of the circle.
            let folds: Vec<_> = branch
                .events
                .iter()
                .filter(|e| e.kind == EventKind::Fold)
                .collect();
            assert_eq!(folds.len(), 1, "{side:?}");
            let expect_fold_lambda = side.sign();
            assert!((folds[0].location.lambda - expect_fold_lambda).abs() < 1e-6);
            assert!(folds[0].location.u[0].abs() < 1e-6);
            // Visited points stay on the unit circle.
            for p in &branch.points {
                let r = (p.lambda * p.lambda + p.u[0] * p.u[0] - 1.0).abs();
                assert!(r <= 1e-8);
            }
            // Balance over the base slice.
            assert_eq!(branch.crossings.len(), 2);
            let report = crate::degree::degree_balance(&branch.crossings).unwrap();
            assert_eq!(report.index_sum, 0);
            assert_eq!(report.nonzero_crossings, 2);
            assert!(report.balanced);
            let u1 = &branch.crossings[1].u;
            assert!((u1[0] + 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn trace_fold_minus_side_returns() {
        let b = builtins::fold();
        let c = ctl();
        let branch = trace(&b.system, &b.start, Side::Minus, &c).unwrap();
        assert_eq!(branch.classification, Classification::BaseReturn);
        assert_branch_invariants(&branch, &c);
        let fold = branch
            .events
            .iter()
            .find(|e| e.kind == EventKind::Fold)
            .expect("fold event");
        assert!(fold.location.lambda.abs() < 1e-6);
        assert!(fold.location.u[0].abs() < 1e-6);
        let u1 = &branch.crossings[1].u;
        assert!((u1[0] + 1.0).abs() <= 1e-6);
        let report = crate::degree::degree_balance(&branch.crossings).unwrap();
        assert!(report.balanced);
    }

    #[test]
    fn trace_fold_plus_side_exhausts_window() {
        let b = builtins::fold();
        let branch = trace(&b.system, &b.start, Side::Plus, &ctl()).unwrap();
        assert_eq!(branch.classification, Classification::WindowExhausted);
        assert!(branch.points.last().unwrap().lambda >= 5.0 - 0.2);
    }

    #[test]
    fn trace_line_blows_up() {
        use crate::problem::DomainSpec;
        use std::sync::Arc;
        let b = builtins::line();
        // Rebuild with the cap at 5 on the window [0, 10].
        let domain = DomainSpec::unbounded(5.0, 0.0, [0.0, 10.0]).unwrap();
        let sys = crate::problem::ParameterizedSystem::new(
            1,
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.residual(l, u))
            },
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.jac_u(l, u))
            },
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.jac_lambda(l, u))
            },
            domain,
        );
        let branch = trace(&sys, &b.start, Side::Plus, &ctl()).unwrap();
        assert_eq!(branch.classification, Classification::Unbounded);
        assert!(branch.points.last().unwrap().aug_norm() > 5.0);
    }

    #[test]
    fn trace_rejects_bad_starts() {
        let b = builtins::circle();
        // Not a zero.
        let bad = pt(0.0, &[0.5]);
        assert!(matches!(
            trace(&b.system, &bad, Side::Plus, &ctl()),
            Err(Error::NotAZero { .. })
        ));
        // Off the base level.
        let off = pt(0.6, &[0.8]);
        assert!(matches!(
            trace(&b.system, &off, Side::Plus, &ctl()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn trace_rejects_singular_start() {
        use crate::problem::DomainSpec;
        use std::sync::Arc;
        // Fold system re-based at lambda = 0 so the start (0, 0) sits at the
        // singular point.
        let b = builtins::fold();
        let domain = DomainSpec::unbounded(1e3, 0.0, [-5.0, 5.0]).unwrap();
        let sys = crate::problem::ParameterizedSystem::new(
            1,
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.residual(l, u))
            },
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.jac_u(l, u))
            },
            {
                let s = b.system.clone();
                Arc::new(move |l, u: &DVector<f64>| s.jac_lambda(l, u))
            },
            domain,
        );
        assert!(matches!(
            trace(&sys, &pt(0.0, &[0.0]), Side::Plus, &ctl()),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn trace_pitchfork_switches_through_branch_point() {
        let b = builtins::pitchfork();
        let c = StepControl {
            h_init: 0.05,
            h_max: 0.08,
            ..StepControl::default()
        };
        let branch = trace(&b.system, &b.start, Side::Plus, &c).unwrap();
        let singular = branch
            .events
            .iter()
            .find(|e| e.kind == EventKind::Singular)
            .expect("singular event at the origin");
        assert!(singular.location.lambda.abs() < 1e-5);
        match &singular.data {
            EventData::Singular {
                kernel_dim,
                outgoing,
                alternatives,
            } => {
                assert_eq!(*kernel_dim, 1);
                assert!(outgoing.is_some());
                assert_eq!(alternatives.len(), 2, "parabola pair listed");
            }
            _ => panic!("wrong payload"),
        }
        // Continues along the trivial line past the branch point up to the
        // window edge.
        assert_eq!(branch.classification, Classification::WindowExhausted);
        for p in &branch.points {
            assert!(p.u[0].abs() <= 1e-6, "left the trivial line: {p:?}");
        }
        assert!(branch.points.last().unwrap().lambda > 2.5);
    }

    #[test]
    fn independent_sides_trace_concurrently() {
        let b = builtins::circle();
        let sys_plus = b.system.clone();
        let sys_minus = b.system.clone();
        let start_plus = b.start.clone();
        let start_minus = b.start.clone();
        let c = ctl();
        let c2 = c.clone();
        let plus = std::thread::spawn(move || trace(&sys_plus, &start_plus, Side::Plus, &c));
        let minus = std::thread::spawn(move || trace(&sys_minus, &start_minus, Side::Minus, &c2));
        let bp = plus.join().unwrap().unwrap();
        let bm = minus.join().unwrap().unwrap();
        assert_eq!(bp.classification, Classification::BaseReturn);
        assert_eq!(bm.classification, Classification::BaseReturn);
    }

    #[test]
    fn trace_halved_step_reproduces_events() {
        let b = builtins::circle();
        let coarse = ctl();
        let fine = StepControl {
            h_init: coarse.h_init / 2.0,
            ..coarse.clone()
        };
        let b1 = trace(&b.system, &b.start, Side::Plus, &coarse).unwrap();
        let b2 = trace(&b.system, &b.start, Side::Plus, &fine).unwrap();
        assert_eq!(b1.classification, b2.classification);
        let f1 = b1.events.iter().find(|e| e.kind == EventKind::Fold).unwrap();
        let f2 = b2.events.iter().find(|e| e.kind == EventKind::Fold).unwrap();
        assert!(f1.location.dist(&f2.location) <= 1e-4);
        let r1 = b1.events.iter().find(|e| e.kind == EventKind::BaseReturn).unwrap();
        let r2 = b2.events.iter().find(|e| e.kind == EventKind::BaseReturn).unwrap();
        assert!(r1.location.dist(&r2.location) <= 1e-4);
    }
}
