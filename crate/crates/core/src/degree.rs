//! Determinant signs, parity of matrix paths, local indices, box degrees on
//! parameter slices, and the degree-balance check for base-slice crossings.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric;
use crate::problem::{ParameterizedSystem, Point};

/// Residual tolerance below which a point is accepted as a zero of the map.
pub const ZERO_RES_TOL: f64 = 1e-8;

/// Pairwise distance (relative to the box diameter) below which two converged
/// zeros are identified.
pub const DEDUP_REL_RADIUS: f64 = 1e-6;

/// Clearance from the box boundary below which a zero is inadmissible.
pub const BOUNDARY_CLEARANCE: f64 = 1e-8;

/// A converged zero counts as degenerate when the smallest singular value of
/// its Jacobian drops below this fraction of the slice's Jacobian scale.
pub const DEGENERATE_REL_TOL: f64 = 1e-4;

/// Sign of the determinant of a square matrix: +1, -1, or 0 when the matrix
/// is numerically rank-deficient (smallest singular value at most 1e-8 times
/// the largest).
pub fn det_sign(m: &DMatrix<f64>) -> Result<i32> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("matrix has non-finite entries".into()));
    }
    Ok(numeric::det_sign_unchecked(m))
}

/// A sampled continuous path of square matrices over an interval.
#[derive(Debug, Clone)]
pub struct MatrixPath {
    samples: Vec<(f64, DMatrix<f64>)>,
}

impl MatrixPath {
    pub fn new(samples: Vec<(f64, DMatrix<f64>)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "samples",
                message: "a path needs at least 2 samples".into(),
            });
        }
        let n = samples[0].1.nrows();
        for (t, m) in &samples {
            if m.nrows() != m.ncols() || m.nrows() != n {
                return Err(Error::NotSquare {
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Eval(format!("non-finite path sample at t = {t}")));
            }
        }
        for w in samples.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::InvalidParameter {
                    name: "samples",
                    message: "sample parameters must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn from_fn(
        f: impl Fn(f64) -> DMatrix<f64>,
        a: f64,
        b: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let n_samples = n_samples.max(2);
        let samples = (0..n_samples)
            .map(|k| {
                let t = a + (b - a) * k as f64 / (n_samples - 1) as f64;
                (t, f(t))
            })
            .collect();
        Self::new(samples)
    }

    pub fn first(&self) -> &(f64, DMatrix<f64>) {
        self.samples.first().expect("non-empty by construction")
    }

    pub fn last(&self) -> &(f64, DMatrix<f64>) {
        self.samples.last().expect("non-empty by construction")
    }

    pub fn samples(&self) -> &[(f64, DMatrix<f64>)] {
        &self.samples
    }

    /// Joins two paths at a common interior sample.
    pub fn concat(a: &MatrixPath, b: &MatrixPath) -> Result<MatrixPath> {
        let (ta, _) = *a.last();
        let (tb, _) = *b.first();
        if (ta - tb).abs() > 1e-12 * (1.0 + ta.abs()) {
            return Err(Error::InvalidParameter {
                name: "paths",
                message: format!("junction mismatch: {ta} vs {tb}"),
            });
        }
        let mut samples = a.samples.clone();
        samples.extend(b.samples.iter().skip(1).cloned());
        MatrixPath::new(samples)
    }
}

/// Parity of an admissible matrix path: the product of the determinant signs
/// at its endpoints. Errors when an endpoint is singular.
pub fn parity(path: &MatrixPath) -> Result<i32> {
    let (ta, ma) = path.first();
    let (tb, mb) = path.last();
    let sa = det_sign(ma)?;
    if sa == 0 {
        return Err(Error::SingularEndpoint { t: *ta });
    }
    let sb = det_sign(mb)?;
    if sb == 0 {
        return Err(Error::SingularEndpoint { t: *tb });
    }
    Ok(sa * sb)
}

/// Oriented index of a regular zero: the determinant sign of the state
/// Jacobian there. Errors when the point is not a zero or the Jacobian is
/// singular (the caller must route singular points elsewhere).
pub fn local_index(system: &ParameterizedSystem, point: &Point) -> Result<i32> {
    let res = system.residual_norm(point)?;
    if res > ZERO_RES_TOL {
        return Err(Error::NotAZero {
            residual: res,
            tol: ZERO_RES_TOL,
        });
    }
    let jac = system.jac_u(point.lambda, &point.u)?;
    match numeric::det_sign_unchecked(&jac) {
        0 => Err(Error::SingularJacobian {
            lambda: point.lambda,
        }),
        s => Ok(s),
    }
}

/// Axis-aligned box in state space.
#[derive(Debug, Clone)]
pub struct BoxRegion {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxRegion {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidParameter {
                name: "box",
                message: "corner dimensions mismatch or empty".into(),
            });
        }
        for i in 0..lo.len() {
            if !(lo[i] < hi[i]) {
                return Err(Error::InvalidParameter {
                    name: "box",
                    message: format!("lo[{i}] = {} is not below hi[{i}] = {}", lo[i], hi[i]),
                });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(&[a]),
            DVector::from_column_slice(&[b]),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn diameter(&self) -> f64 {
        (&self.hi - &self.lo).norm()
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| u[i] > self.lo[i] && u[i] < self.hi[i])
    }

    /// Distance from `u` to the nearest face (negative outside).
    pub fn boundary_clearance(&self, u: &DVector<f64>) -> f64 {
        let mut c = f64::INFINITY;
        for i in 0..self.dim() {
            c = c.min(u[i] - self.lo[i]).min(self.hi[i] - u[i]);
        }
        c
    }

    /// Interior lattice of `per_axis` seeds per coordinate.
    fn seeds(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        let per_axis = per_axis.max(2);
        let count = per_axis.pow(d as u32);
        let mut out = Vec::with_capacity(count);
        for c in 0..count {
            let mut rem = c;
            let mut u = DVector::zeros(d);
            for i in 0..d {
                let pos = rem % per_axis;
                rem /= per_axis;
                let t = (pos as f64 + 0.5) / per_axis as f64;
                u[i] = self.lo[i] + t * (self.hi[i] - self.lo[i]);
            }
            out.push(u);
        }
        out
    }

    /// Lattice samples of every face of the box.
    fn boundary_samples(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        let per_axis = per_axis.max(2);
        let mut out = Vec::new();
        for face_dim in 0..d {
            for &face_val in &[self.lo[face_dim], self.hi[face_dim]] {
                let free: Vec<usize> = (0..d).filter(|i| *i != face_dim).collect();
                let count = per_axis.pow(free.len() as u32);
                for c in 0..count {
                    let mut rem = c;
                    let mut u = DVector::zeros(d);
                    u[face_dim] = face_val;
                    for &i in &free {
                        let pos = rem % per_axis;
                        rem /= per_axis;
                        let t = pos as f64 / (per_axis - 1) as f64;
                        u[i] = self.lo[i] + t * (self.hi[i] - self.lo[i]);
                    }
                    out.push(u);
                }
            }
        }
        out
    }
}

/// A square map on state space, typically a frozen parameter slice of a
/// parameterized system.
pub trait SliceMap: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn jac(&self, u: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// The slice map u -> F(lambda0, u).
pub struct FrozenSlice<'a> {
    pub system: &'a ParameterizedSystem,
    pub lambda0: f64,
}

impl SliceMap for FrozenSlice<'_> {
    fn dim(&self) -> usize {
        self.system.n_state()
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.system.residual(self.lambda0, u)
    }

    fn jac(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.system.jac_u(self.lambda0, u)
    }
}

/// Slice map backed by plain closures; used by tests and the oracle suite.
pub struct FnSlice<F, J> {
    dim: usize,
    f: F,
    j: J,
}

impl<F, J> FnSlice<F, J>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Sync,
{
    pub fn new(dim: usize, f: F, j: J) -> Self {
        Self { dim, f, j }
    }
}

impl<F, J> SliceMap for FnSlice<F, J>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(u)
    }

    fn jac(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        (self.j)(u)
    }
}

fn newton_zero(map: &dyn SliceMap, seed: &DVector<f64>) -> Option<DVector<f64>> {
    let mut u = seed.clone();
    let mut res = map.eval(&u).ok()?;
    let mut res_norm = res.norm();
    for _ in 0..60 {
        if res_norm <= 1e-12 {
            return Some(u);
        }
        let jac = map.jac(&u).ok()?;
        let delta = numeric::solve_dense(&jac, &(-&res))?;
        // Damped update: halve until the residual decreases.
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..8 {
            let candidate = &u + step * &delta;
            if let Ok(r) = map.eval(&candidate) {
                let n = r.norm();
                if n < res_norm || n <= 1e-12 {
                    u = candidate;
                    res = r;
                    res_norm = n;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if res_norm <= 1e-11 {
        Some(u)
    } else {
        None
    }
}

/// Degree of a slice map over a box by multistart Newton and index summation.
///
/// Seeds a lattice, polishes every converged zero, deduplicates, checks for
/// boundary or degenerate zeros, and returns the sum of determinant signs.
pub fn box_degree(map: &dyn SliceMap, region: &BoxRegion, seeds_per_axis: usize) -> Result<i64> {
    if region.dim() != map.dim() {
        return Err(Error::InvalidParameter {
            name: "box",
            message: format!(
                "box dimension {} does not match map dimension {}",
                region.dim(),
                map.dim()
            ),
        });
    }
    // Admissibility: no zero of the map on the box boundary. The boundary
    // sweep also collects the Jacobian scale of the slice, which the
    // degenerate-zero check is judged against (a multiple zero collapses the
    // Jacobian relative to that scale; an intrinsic singular-value ratio
    // cannot see this in dimension 1).
    let mut jac_scale = 0.0f64;
    for b in region.boundary_samples(seeds_per_axis.max(8)) {
        let v = map.eval(&b)?;
        if v.norm() <= ZERO_RES_TOL {
            return Err(Error::BoundaryZero {
                location: b.iter().cloned().collect(),
            });
        }
        if let Ok(j) = map.jac(&b) {
            let (_, smax) = numeric::sval_extrema(&j);
            jac_scale = jac_scale.max(smax);
        }
    }

    let dedup_radius = DEDUP_REL_RADIUS * region.diameter();
    let mut zeros: Vec<DVector<f64>> = Vec::new();
    for seed in region.seeds(seeds_per_axis) {
        let Some(z) = newton_zero(map, &seed) else {
            continue;
        };
        if !region.contains(&z) {
            continue;
        }
        if region.boundary_clearance(&z) <= BOUNDARY_CLEARANCE {
            return Err(Error::BoundaryZero {
                location: z.iter().cloned().collect(),
            });
        }
        if zeros.iter().all(|w| (w - &z).norm() > dedup_radius) {
            zeros.push(z);
        }
    }
    // Deterministic summation order.
    zeros.sort_by(|a, b| {
        for i in 0..a.len() {
            match a[i].partial_cmp(&b[i]) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut degree = 0i64;
    for z in &zeros {
        let jac = map.jac(z)?;
        let (smin, _) = numeric::sval_extrema(&jac);
        if smin <= DEGENERATE_REL_TOL * jac_scale {
            return Err(Error::DegenerateZero {
                location: z.iter().cloned().collect(),
            });
        }
        match numeric::det_sign_unchecked(&jac) {
            0 => {
                return Err(Error::DegenerateZero {
                    location: z.iter().cloned().collect(),
                })
            }
            s => degree += s as i64,
        }
    }
    Ok(degree)
}

/// Box degree of the frozen slice of a parameterized system at `lambda0`.
pub fn box_degree_slice(
    system: &ParameterizedSystem,
    lambda0: f64,
    region: &BoxRegion,
    seeds_per_axis: usize,
) -> Result<i64> {
    box_degree(&FrozenSlice { system, lambda0 }, region, seeds_per_axis)
}

/// A zero of the frozen slice map together with its local index.
#[derive(Debug, Clone)]
pub struct SliceCrossing {
    pub u: DVector<f64>,
    pub index: i32,
    pub lambda0: f64,
}

impl SliceCrossing {
    /// Validates the residual and computes the local index at (lambda0, u).
    pub fn at(system: &ParameterizedSystem, lambda0: f64, u: DVector<f64>) -> Result<Self> {
        let point = Point::new(lambda0, u)?;
        let index = local_index(system, &point)?;
        Ok(Self {
            u: point.u,
            index,
            lambda0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub index_sum: i64,
    pub nonzero_crossings: usize,
    /// True iff the index sum is zero and at least two crossings carry a
    /// nonzero index (with an even count).
    pub balanced: bool,
}

/// Sums the local indices of a family of crossings on one base slice.
/// An empty list is the vacuous case: sum 0, not balanced.
pub fn degree_balance(crossings: &[SliceCrossing]) -> Result<BalanceReport> {
    if let Some(first) = crossings.first() {
        for c in crossings {
            if (c.lambda0 - first.lambda0).abs() > 1e-9 * (1.0 + first.lambda0.abs()) {
                return Err(Error::Precondition(format!(
                    "crossings live on different slices: {} vs {}",
                    first.lambda0, c.lambda0
                )));
            }
        }
    }
    let index_sum: i64 = crossings.iter().map(|c| c.index as i64).sum();
    let nonzero = crossings.iter().filter(|c| c.index != 0).count();
    Ok(BalanceReport {
        index_sum,
        nonzero_crossings: nonzero,
        balanced: index_sum == 0 && nonzero >= 2 && nonzero % 2 == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::oracles;

    #[test]
    fn det_sign_identity_and_diag() {
        assert_eq!(det_sign(&DMatrix::identity(3, 3)).unwrap(), 1);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        assert_eq!(det_sign(&d).unwrap(), -1);
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(det_sign(&rect).is_err());
    }

    #[test]
    fn parity_diag_one_t() {
        // L(t) = diag(1, t) on [-1, 1]: det changes sign, parity -1.
        let path = MatrixPath::from_fn(
            |t| DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, t])),
            -1.0,
            1.0,
            21,
        )
        .unwrap();
        assert_eq!(parity(&path).unwrap(), -1);
    }

    #[test]
    fn parity_constant_path() {
        let m = DMatrix::from_column_slice(2, 2, &[2.0, 1.0, 0.0, -3.0]);
        let path = MatrixPath::from_fn(|_| m.clone(), 0.0, 1.0, 5).unwrap();
        assert_eq!(parity(&path).unwrap(), 1);
    }

    #[test]
    fn parity_rejects_singular_endpoint() {
        let path = MatrixPath::from_fn(
            |t| DMatrix::from_diagonal(&DVector::from_column_slice(&[t, 1.0])),
            0.0,
            1.0,
            5,
        )
        .unwrap();
        assert!(matches!(
            parity(&path),
            Err(Error::SingularEndpoint { .. })
        ));
    }

    #[test]
    fn local_index_circle_poles() {
        let b = builtins::circle();
        let top = Point::new(0.0, DVector::from_column_slice(&[1.0])).unwrap();
        let bottom = Point::new(0.0, DVector::from_column_slice(&[-1.0])).unwrap();
        assert_eq!(local_index(&b.system, &top).unwrap(), 1);
        assert_eq!(local_index(&b.system, &bottom).unwrap(), -1);
        let off = Point::new(0.0, DVector::from_column_slice(&[0.5])).unwrap();
        assert!(matches!(
            local_index(&b.system, &off),
            Err(Error::NotAZero { .. })
        ));
    }

    #[test]
    fn box_degree_normalization_identity() {
        let map = FnSlice::new(
            1,
            |u: &DVector<f64>| Ok(u.clone()),
            |_: &DVector<f64>| Ok(DMatrix::identity(1, 1)),
        );
        let region = BoxRegion::interval(-1.0, 1.0).unwrap();
        assert_eq!(box_degree(&map, &region, 8).unwrap(), 1);
    }

    #[test]
    fn box_degree_two_opposite_zeros() {
        let map = FnSlice::new(
            1,
            |u: &DVector<f64>| Ok(DVector::from_column_slice(&[u[0] * u[0] - 1.0])),
            |u: &DVector<f64>| Ok(DMatrix::from_column_slice(1, 1, &[2.0 * u[0]])),
        );
        let region = BoxRegion::interval(-2.0, 2.0).unwrap();
        assert_eq!(box_degree(&map, &region, 16).unwrap(), 0);
    }

    #[test]
    fn box_degree_circle_slice_matches_brute_force() {
        let b = builtins::circle();
        let region = BoxRegion::interval(-2.0, 2.0).unwrap();
        let fast = box_degree_slice(&b.system, 0.0, &region, 16).unwrap();
        let slice = FrozenSlice {
            system: &b.system,
            lambda0: 0.0,
        };
        let brute = oracles::brute_force_degree(&slice, &region, 10_000).unwrap();
        assert_eq!(fast, 0);
        assert_eq!(fast, brute);
    }

    #[test]
    fn box_degree_flags_boundary_zero() {
        let map = FnSlice::new(
            1,
            |u: &DVector<f64>| Ok(DVector::from_column_slice(&[u[0] - 1.0])),
            |_: &DVector<f64>| Ok(DMatrix::identity(1, 1)),
        );
        let region = BoxRegion::interval(-1.0, 1.0).unwrap();
        assert!(matches!(
            box_degree(&map, &region, 8),
            Err(Error::BoundaryZero { .. })
        ));
    }

    #[test]
    fn box_degree_flags_degenerate_zero() {
        let map = FnSlice::new(
            1,
            |u: &DVector<f64>| Ok(DVector::from_column_slice(&[u[0] * u[0]])),
            |u: &DVector<f64>| Ok(DMatrix::from_column_slice(1, 1, &[2.0 * u[0]])),
        );
        let region = BoxRegion::interval(-1.3, 1.7).unwrap();
        assert!(matches!(
            box_degree(&map, &region, 9),
            Err(Error::DegenerateZero { .. })
        ));
    }

    #[test]
    fn balance_report_cases() {
        let b = builtins::circle();
        let up = SliceCrossing::at(&b.system, 0.0, DVector::from_column_slice(&[1.0])).unwrap();
        let dn = SliceCrossing::at(&b.system, 0.0, DVector::from_column_slice(&[-1.0])).unwrap();
        let r = degree_balance(&[up.clone(), dn]).unwrap();
        assert_eq!(r.index_sum, 0);
        assert_eq!(r.nonzero_crossings, 2);
        assert!(r.balanced);

        let single = degree_balance(&[up]).unwrap();
        assert_eq!(single.index_sum, 1);
        assert!(!single.balanced);

        let empty = degree_balance(&[]).unwrap();
        assert_eq!(empty.index_sum, 0);
        assert!(!empty.balanced);
    }

    #[test]
    fn parity_multiplicative_under_concatenation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut done = 0;
        while done < 100 {
            let n = rng.random_range(1..4usize);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let bm = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let f = |t: f64| &a + t * &bm + (t * t) * &c;
            let p1 = MatrixPath::from_fn(f, -1.0, 0.3, 15).unwrap();
            let p2 = MatrixPath::from_fn(f, 0.3, 1.1, 15).unwrap();
            let whole = MatrixPath::concat(&p1, &p2).unwrap();
            let (Ok(s1), Ok(s2), Ok(sw)) = (parity(&p1), parity(&p2), parity(&whole)) else {
                continue; // singular endpoint or junction: not admissible, resample
            };
            assert_eq!(s1 * s2, sw);
            done += 1;
        }
    }
}
