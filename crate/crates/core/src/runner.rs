//! Batch orchestration for the CLI: builds the configured problem, runs the
//! requested traces, writes the output files, and drives the oracle
//! verification suite.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::builtins;
use crate::config::{ProblemKind, RunConfig, SideChoice};
use crate::continuation::{trace, Branch, Classification, Side};
use crate::degree::{box_degree, degree_balance, BoxRegion, FnSlice, FrozenSlice};
use crate::error::{Error, Result};
use crate::mcbvp::MeshProblem;
use crate::oracles::{self, ShootingConfig};
use crate::problem::{DomainSpec, ParameterizedSystem, Point};
use crate::report::{self, BalanceRecord, VerifyCheck, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub struct ProblemSetup {
    pub name: String,
    pub system: ParameterizedSystem,
    pub start: Point,
    pub mesh: Option<Arc<MeshProblem>>,
}

/// Instantiates the configured problem with the run's window, cap, and base
/// level, and produces the start solution.
pub fn build_problem(config: &RunConfig) -> Result<ProblemSetup> {
    let window = [config.lambda_min, config.lambda_max];
    match &config.problem {
        ProblemKind::Mcbvp => {
            let mesh = Arc::new(MeshProblem::new(config.m, config.mu, config.q, config.delta)?);
            let system = mesh.system(config.norm_cap, window, config.boundary_threshold)?;
            if let Some(base) = config.base_lambda {
                if base != 0.0 {
                    return Err(Error::Config(
                        "the discretized boundary value problem starts at lambda = 0".into(),
                    ));
                }
            }
            let u0 = mesh.base_solution()?;
            let start = Point::new(0.0, u0)?;
            Ok(ProblemSetup {
                name: "mcbvp".into(),
                system,
                start,
                mesh: Some(mesh),
            })
        }
        ProblemKind::Builtin(name) => {
            let b = builtins::by_name(name)?;
            let base = config.base_lambda.unwrap_or(b.system.domain.base_lambda);
            // Rebuild the domain with the run's window and cap around the
            // builtin's margin (always the whole space).
            let domain = DomainSpec::unbounded(config.norm_cap, base, window)?
                .with_boundary_threshold(config.boundary_threshold);
            let system = ParameterizedSystem::new(
                b.system.n_state(),
                system_residual(&b.system),
                system_jac_u(&b.system),
                system_jac_lambda(&b.system),
                domain,
            );
            let start = if base == b.start.lambda {
                b.start.clone()
            } else {
                return Err(Error::Config(format!(
                    "builtin '{name}' starts at lambda = {}; base_lambda = {base} has no known zero",
                    b.start.lambda
                )));
            };
            Ok(ProblemSetup {
                name: format!("builtin:{name}"),
                system,
                start,
                mesh: None,
            })
        }
    }
}

// Re-wrap a system's evaluators so a fresh domain can be attached.
fn system_residual(sys: &ParameterizedSystem) -> Arc<crate::problem::VectorFieldFn> {
    let s = sys.clone();
    Arc::new(move |l, u| s.residual(l, u))
}

fn system_jac_u(sys: &ParameterizedSystem) -> Arc<crate::problem::JacobianFn> {
    let s = sys.clone();
    Arc::new(move |l, u| s.jac_u(l, u))
}

fn system_jac_lambda(sys: &ParameterizedSystem) -> Arc<crate::problem::VectorFieldFn> {
    let s = sys.clone();
    Arc::new(move |l, u| s.jac_lambda(l, u))
}

fn sides_of(choice: SideChoice) -> Vec<Side> {
    match choice {
        SideChoice::Plus => vec![Side::Plus],
        SideChoice::Minus => vec![Side::Minus],
        SideChoice::Both => vec![Side::Plus, Side::Minus],
    }
}

/// Runs the configured traces and writes every output file. Returns the
/// process exit code.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<i32> {
    config.validate().map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir)?;
    let setup = build_problem(config)?;
    let ctl = config.step_control();

    let mut branches: Vec<Branch> = Vec::new();
    for side in sides_of(config.side) {
        let branch = trace(&setup.system, &setup.start, side, &ctl)?;
        report::write_branch_files(out_dir, &branch, setup.mesh.as_deref())?;
        branches.push(branch);
    }
    let refs: Vec<&Branch> = branches.iter().collect();
    let grad_monitors: Vec<Option<report::GradMonitorRecord>> = branches
        .iter()
        .map(|b| {
            setup.mesh.as_ref().map(|mesh| {
                let (values, flagged) = crate::mcbvp::grad_blowup_monitor(
                    mesh,
                    &b.points,
                    config.grad_blowup_threshold,
                );
                report::GradMonitorRecord {
                    max_grad_inf_norm: values.iter().cloned().fold(0.0, f64::max),
                    threshold: config.grad_blowup_threshold,
                    flagged,
                }
            })
        })
        .collect();
    report::write_events(out_dir, &refs)?;
    report::write_classification(out_dir, &refs, &grad_monitors)?;
    report::write_summary(out_dir, &refs)?;

    let mut balance_entries = Vec::new();
    for b in &branches {
        if b.classification == Classification::BaseReturn {
            let rep = degree_balance(&b.crossings)?;
            balance_entries.push((
                b.side.as_str().to_string(),
                BalanceRecord::new(b, &rep),
            ));
        }
    }
    if !balance_entries.is_empty() {
        report::write_balance(out_dir, &balance_entries)?;
    }

    if config.verify {
        let code = verify(config, out_dir)?;
        if code != EXIT_OK {
            return Ok(code);
        }
    }

    if branches
        .iter()
        .any(|b| b.classification == Classification::Stalled)
    {
        Ok(EXIT_STALLED)
    } else {
        Ok(EXIT_OK)
    }
}

/// Oracle verification suite: finite-difference Jacobian agreement at random
/// in-domain points, the shooting cross-check at lambda = 0 for the
/// discretized boundary value problem, and brute-force degree agreement.
/// Writes `verify.json`; any failing check maps to exit code 4.
pub fn verify(config: &RunConfig, out_dir: &Path) -> Result<i32> {
    config.validate().map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir)?;
    let setup = build_problem(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut checks = Vec::new();

    checks.push(fd_agreement_check(&setup, &mut rng)?);
    if let Some(mesh) = &setup.mesh {
        checks.push(shooting_check(mesh, &setup.start)?);
    }
    if setup.system.n_state() == 1 {
        checks.push(slice_degree_check(&setup)?);
    }
    checks.push(random_polynomial_degree_check(&mut rng)?);

    let all_pass = checks.iter().all(|c| c.pass);
    report::write_verify(out_dir, &VerifyReport { checks, all_pass })?;
    Ok(if all_pass { EXIT_OK } else { EXIT_VERIFY })
}

fn fd_agreement_check(setup: &ProblemSetup, rng: &mut ChaCha8Rng) -> Result<VerifyCheck> {
    let n = setup.system.n_state();
    let mut worst = 0.0f64;
    let mut tested = 0usize;
    let mut attempts = 0usize;
    while tested < 100 && attempts < 10_000 {
        attempts += 1;
        let (lambda, u) = if setup.mesh.is_some() {
            // Random in-domain states near the base branch scale.
            let amp: f64 = rng.random_range(0.0..1.0);
            let lambda = rng.random_range(-0.5..0.02);
            let u = &setup.start.u * amp
                + DVector::from_fn(n, |_, _| rng.random_range(-0.05..0.05));
            (lambda, u)
        } else {
            (
                rng.random_range(-0.8..0.8),
                DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5)),
            )
        };
        let point = match Point::new(lambda, u) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if setup.system.domain.margin(point.lambda, &point.u) <= 0.0 {
            continue;
        }
        let report = match crate::problem::validate_consistency(&setup.system, &point, 1e-6) {
            Ok(r) => r,
            Err(_) => continue,
        };
        worst = worst.max(report.jac_u_rel_err).max(report.jac_lambda_rel_err);
        tested += 1;
    }
    Ok(VerifyCheck {
        name: "fd_jacobian_agreement".into(),
        pass: tested == 100 && worst <= 1e-6,
        measured_error: worst,
        threshold: 1e-6,
        details: format!("max relative error over {tested} random in-domain points"),
    })
}

fn shooting_check(mesh: &Arc<MeshProblem>, start: &Point) -> Result<VerifyCheck> {
    let bracket_hi = 10.0 * mesh.mu.powf(1.0 / (mesh.q_exp - 1.0));
    let cfg = ShootingConfig {
        slope_bracket: (1e-3, bracket_hi),
        ..ShootingConfig::default()
    };
    let sol = oracles::shooting_solve(mesh.mu, mesh.q_exp, 0.0, &cfg)?;
    let reference = sol.sample_nodes(&mesh.x);
    let gap = (&start.u - &reference).amax();
    let threshold = 10.0 * mesh.h * mesh.h;
    Ok(VerifyCheck {
        name: "shooting_cross_check".into(),
        pass: gap <= threshold,
        measured_error: gap,
        threshold,
        details: format!(
            "sup-norm gap between the base solve (m = {}) and the shooting solution",
            mesh.m
        ),
    })
}

fn slice_degree_check(setup: &ProblemSetup) -> Result<VerifyCheck> {
    let lambda0 = setup.system.domain.base_lambda;
    let region = BoxRegion::interval(-2.0, 2.0)?;
    let slice = FrozenSlice {
        system: &setup.system,
        lambda0,
    };
    let fast = box_degree(&slice, &region, 24)?;
    let brute = oracles::brute_force_degree(&slice, &region, 20_000)?;
    Ok(VerifyCheck {
        name: "slice_degree_agreement".into(),
        pass: fast == brute,
        measured_error: (fast - brute).abs() as f64,
        threshold: 0.0,
        details: format!(
            "box degree {fast} vs brute-force degree {brute} on the base slice"
        ),
    })
}

/// Random polynomial slices in 1-D and 2-D; multistart degree against the
/// sign-count / winding oracle.
fn random_polynomial_degree_check(rng: &mut ChaCha8Rng) -> Result<VerifyCheck> {
    let mut mismatches = 0usize;
    let mut tested = 0usize;
    while tested < 10 {
        match random_poly_case(rng, tested % 2 == 0)? {
            Some((fast, brute)) => {
                tested += 1;
                if fast != brute {
                    mismatches += 1;
                }
            }
            None => continue,
        }
    }
    Ok(VerifyCheck {
        name: "random_polynomial_degree_agreement".into(),
        pass: mismatches == 0,
        measured_error: mismatches as f64,
        threshold: 0.0,
        details: format!("{tested} random polynomial slices in 1-D/2-D"),
    })
}

/// One random admissible polynomial degree comparison; `None` when the
/// sampled case is inadmissible (boundary or degenerate zeros).
pub fn random_poly_case(rng: &mut ChaCha8Rng, two_d: bool) -> Result<Option<(i64, i64)>> {
    if !two_d {
        let deg = rng.random_range(1..=5usize);
        let roots: Vec<f64> = (0..deg).map(|_| rng.random_range(-1.6..1.6)).collect();
        let scale = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let roots_f = roots.clone();
        let f = move |u: f64| scale * roots_f.iter().map(|r| u - r).product::<f64>();
        let roots_j = roots.clone();
        let fj = move |u: f64| {
            let mut sum = 0.0;
            for skip in 0..roots_j.len() {
                let mut prod = scale;
                for (k, r) in roots_j.iter().enumerate() {
                    if k != skip {
                        prod *= u - r;
                    }
                }
                sum += prod;
            }
            sum
        };
        // Reject near-degenerate root clusters.
        let mut sorted = roots.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        if sorted.windows(2).any(|w| (w[1] - w[0]).abs() < 5e-2) {
            return Ok(None);
        }
        let map = FnSlice::new(
            1,
            move |u: &DVector<f64>| Ok(DVector::from_column_slice(&[f(u[0])])),
            move |u: &DVector<f64>| Ok(nalgebra::DMatrix::from_column_slice(1, 1, &[fj(u[0])])),
        );
        let region = BoxRegion::interval(-2.0, 2.0)?;
        let fast = match box_degree(&map, &region, 48) {
            Ok(d) => d,
            Err(Error::BoundaryZero { .. }) | Err(Error::DegenerateZero { .. }) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let brute = oracles::brute_force_degree(&map, &region, 20_000)?;
        Ok(Some((fast, brute)))
    } else {
        // Complex polynomial prod (z - z_k) viewed over R^2: winding equals
        // the number of roots in the box.
        let deg = rng.random_range(1..=3usize);
        let roots: Vec<(f64, f64)> = (0..deg)
            .map(|_| (rng.random_range(-1.4..1.4), rng.random_range(-1.4..1.4)))
            .collect();
        if roots
            .iter()
            .enumerate()
            .any(|(i, a)| roots[..i].iter().any(|b| {
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                d < 1e-1
            }))
        {
            return Ok(None);
        }
        let roots_f = roots.clone();
        let eval_c = move |u: f64, v: f64| {
            let (mut re, mut im) = (1.0f64, 0.0f64);
            for (a, b) in &roots_f {
                let (zr, zi) = (u - a, v - b);
                let nr = re * zr - im * zi;
                let ni = re * zi + im * zr;
                re = nr;
                im = ni;
            }
            (re, im)
        };
        let eval_c2 = eval_c.clone();
        let map = FnSlice::new(
            2,
            move |u: &DVector<f64>| {
                let (re, im) = eval_c(u[0], u[1]);
                Ok(DVector::from_column_slice(&[re, im]))
            },
            move |u: &DVector<f64>| {
                // Cauchy-Riemann structure: numerical derivative of the
                // complex product.
                let h = 1e-7 * (1.0 + u.amax());
                let (re_p, im_p) = eval_c2(u[0] + h, u[1]);
                let (re_m, im_m) = eval_c2(u[0] - h, u[1]);
                let dre = (re_p - re_m) / (2.0 * h);
                let dim = (im_p - im_m) / (2.0 * h);
                Ok(nalgebra::DMatrix::from_row_slice(
                    2,
                    2,
                    &[dre, -dim, dim, dre],
                ))
            },
        );
        let region = BoxRegion::new(
            DVector::from_column_slice(&[-2.0, -2.0]),
            DVector::from_column_slice(&[2.0, 2.0]),
        )?;
        let fast = match box_degree(&map, &region, 20) {
            Ok(d) => d,
            Err(Error::BoundaryZero { .. }) | Err(Error::DegenerateZero { .. }) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let brute = match oracles::brute_force_degree(&map, &region, 4_000) {
            Ok(d) => d,
            Err(Error::BoundaryZero { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some((fast, brute)))
    }
}
