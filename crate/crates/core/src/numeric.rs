//! Shared dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Regularity threshold: a square matrix counts as singular when its smallest
/// singular value is at most `RANK_RATIO_TOL` times its largest one.
pub(crate) const RANK_RATIO_TOL: f64 = 1e-8;

pub(crate) fn sval_extrema(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.singular_values();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    if !lo.is_finite() {
        lo = 0.0;
    }
    (lo, hi)
}

/// Sign of the determinant, with 0 for numerically rank-deficient input
/// (smallest singular value at most `RANK_RATIO_TOL` times the largest).
/// The sign comes from the LU pivots so the magnitude never overflows. The
/// singular-value check only runs when the LU diagonal ratio suggests the
/// matrix may sit near the singular band; the gate threshold is three
/// decades above the band.
pub(crate) fn det_sign_unchecked(m: &DMatrix<f64>) -> i32 {
    let n = m.nrows();
    if n == 0 {
        return 1;
    }
    let lu = m.clone().lu();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1 } else { 1 };
    let u = lu.u();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 {
            return 0;
        }
        if d < 0.0 {
            sign = -sign;
        }
        dmin = dmin.min(d.abs());
        dmax = dmax.max(d.abs());
    }
    if dmax <= 0.0 || dmin <= 1e-5 * dmax {
        let (smin, smax) = sval_extrema(m);
        if smax <= 0.0 || smin <= RANK_RATIO_TOL * smax {
            return 0;
        }
    }
    sign
}

/// Number of singular values above `ratio_tol * max`.
pub(crate) fn rank_from_svals(sv: &[f64], ratio_tol: f64) -> usize {
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > ratio_tol * smax).count()
}

/// Flips column signs so the dominant entry of each column is positive.
/// Makes singular-vector bases deterministic across runs.
pub(crate) fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut k = 0usize;
        let mut best = -1.0f64;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best {
                best = a;
                k = i;
            }
        }
        if m[(k, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

pub(crate) fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let sol = a.clone().lu().solve(b)?;
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_sign_basic() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(det_sign_unchecked(&id), 1);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(det_sign_unchecked(&m), -1);
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(det_sign_unchecked(&z), 0);
    }

    #[test]
    fn det_sign_large_scale_no_overflow() {
        // Entries around 1e4 on a 200x200 diagonal would overflow a naive
        // determinant; the pivot-sign product must not.
        let n = 200;
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 4.0e4 } else { 0.0 });
        assert_eq!(det_sign_unchecked(&m), 1);
    }

    #[test]
    fn column_sign_normalization() {
        let mut m = DMatrix::from_column_slice(2, 2, &[-2.0, 1.0, 0.5, 3.0]);
        normalize_column_signs(&mut m);
        assert!(m[(0, 0)] > 0.0);
        assert!(m[(1, 1)] > 0.0);
    }
}
