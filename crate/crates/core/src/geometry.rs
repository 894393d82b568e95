//! Grassmannian metrics and orthonormal-basis constructions.
//!
//! Subspaces are represented by `n x d` basis matrices. Metrics depend only on
//! the column span, never on the particular basis.

use nalgebra::{DMatrix, SymmetricEigen, QR};

use crate::{Error, Real, Result};

/// Relative pivot threshold below which a basis counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Residual norm a padding candidate must keep after orthogonalization.
pub const UPLIFT_TOLERANCE: f64 = 1e-8;

/// `||X^T X - I||_F`.
pub fn orthonormality_defect<T: Real>(x: &DMatrix<T>) -> T {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g.norm()
}

/// Thin QR with the diagonal of R forced positive.
///
/// The sign convention makes the result unique, so orthonormal input comes
/// back unchanged up to round-off and repeated application is idempotent.
pub fn orthonormalize<T: Real>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (n, d) = x.shape();
    if d == 0 {
        return Ok(x.clone());
    }
    if d > n {
        return Err(Error::dims("orthonormalize", format!("at most {n} columns"), d));
    }
    let qr = QR::new(x.clone());
    let r = qr.r();
    let mut q = qr.q();
    let (mut smallest, mut largest) = (f64::INFINITY, 0.0f64);
    for i in 0..d {
        let rii = r[(i, i)].to_f64_lossy().abs();
        smallest = smallest.min(rii);
        largest = largest.max(rii);
    }
    if !(largest > 0.0) || smallest < RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }
    for i in 0..d {
        if r[(i, i)] < T::zero() {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q)
}

/// Symmetric orthonormalization `X (X^T X)^{-1/2}`: the orthonormal matrix
/// nearest to `X` in Frobenius norm (the orthogonal polar factor).
pub fn polar_orthonormalize<T: Real>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    let d = x.ncols();
    if d == 1 {
        let norm = x.norm();
        if !(norm > T::zero()) {
            return Err(Error::RankDeficient {
                smallest: 0.0,
                largest: 0.0,
            });
        }
        return Ok(x / norm);
    }
    let gram = x.tr_mul(x);
    Ok(x * inverse_sqrt_psd(gram)?)
}

/// `G^{-1/2}` for a symmetric positive definite `G`.
pub(crate) fn inverse_sqrt_psd<T: Real>(gram: DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(gram);
    let largest = eig.eigenvalues.iter().fold(T::zero(), |m, &v| m.max(v));
    let smallest = eig.eigenvalues.iter().fold(largest, |m, &v| m.min(v));
    // pivots of G are squared singular values of X
    if !(largest > T::zero()) || smallest < T::lit(RANK_TOLERANCE * RANK_TOLERANCE) * largest {
        return Err(Error::RankDeficient {
            smallest: smallest.max(T::zero()).sqrt().to_f64_lossy(),
            largest: largest.sqrt().to_f64_lossy(),
        });
    }
    let scale = eig.eigenvalues.map(|v| T::one() / v.sqrt());
    let vecs = &eig.eigenvectors;
    Ok(vecs * DMatrix::from_diagonal(&scale) * vecs.transpose())
}

/// Principal angles between two subspaces, ascending, each in `[0, pi/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles<T> {
    pub angles: Vec<T>,
}

impl<T: Real> PrincipalAngles<T> {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn grassmann_distance(&self) -> T {
        self.angles
            .iter()
            .fold(T::zero(), |acc, &a| acc + a * a)
            .sqrt()
    }
}

/// Principal angles between `span(u)` and `span(v)`.
///
/// Cosines are singular values of `U^T V` for orthonormalized bases; sines are
/// singular values of `(I - U U^T) V`. Small angles are taken from the sines
/// and large ones from the cosines, which keeps both ends accurate.
pub fn principal_angles<T: Real>(u: &DMatrix<T>, v: &DMatrix<T>) -> Result<PrincipalAngles<T>> {
    if u.nrows() != v.nrows() {
        return Err(Error::dims("principal_angles", u.nrows(), v.nrows()));
    }
    let ub = orthonormalize(u)?;
    let vb = orthonormalize(v)?;
    let k = ub.ncols().min(vb.ncols());
    if k == 0 {
        return Ok(PrincipalAngles { angles: Vec::new() });
    }
    let c = ub.tr_mul(&vb);
    let mut cosines: Vec<T> = c.singular_values().iter().copied().collect();
    cosines.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    if let Some(&top) = cosines.first() {
        if top > T::one() + T::lit(1e-8) {
            log::warn!("cosine {top} exceeds 1 beyond round-off; clipping");
        }
    }
    let residual = &vb - &ub * &c;
    let mut sines: Vec<T> = residual.singular_values().iter().copied().collect();
    sines.sort_by(|a, b| a.partial_cmp(b).expect("finite singular values"));

    let half = T::lit(0.5);
    let mut angles: Vec<T> = (0..k)
        .map(|i| {
            let cos = cosines[i].min(T::one()).max(T::zero());
            let sin = sines[i].min(T::one()).max(T::zero());
            if cos * cos > half {
                sin.asin()
            } else {
                cos.acos()
            }
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    Ok(PrincipalAngles { angles })
}

/// Geodesic distance `sqrt(sum theta_i^2)` on the Grassmannian.
pub fn grassmann_distance<T: Real>(u: &DMatrix<T>, v: &DMatrix<T>) -> Result<T> {
    Ok(principal_angles(u, v)?.grassmann_distance())
}

/// Signed per-feature cosines `diag(U^T v_hat)`, with the columns of `v`
/// scaled to unit length.
pub fn cosine_diagonals<T: Real>(u: &DMatrix<T>, v: &DMatrix<T>) -> Result<Vec<T>> {
    if u.nrows() != v.nrows() {
        return Err(Error::dims("cosine_diagonals", u.nrows(), v.nrows()));
    }
    let k = u.ncols().min(v.ncols());
    (0..k)
        .map(|i| {
            let vi = v.column(i);
            let norm = vi.norm();
            if !(norm > T::zero()) {
                return Err(Error::ZeroColumn { column: i });
            }
            Ok(u.column(i).dot(&vi) / norm)
        })
        .collect()
}

/// Mean squared residual `||x - B B^T x||^2` over the rows of `samples`.
pub fn reconstruction_error<T: Real>(basis: &DMatrix<T>, samples: &DMatrix<T>) -> Result<T> {
    if basis.nrows() != samples.ncols() {
        return Err(Error::dims("reconstruction_error", basis.nrows(), samples.ncols()));
    }
    if samples.nrows() == 0 {
        return Err(Error::Empty("reconstruction_error samples"));
    }
    let defect = orthonormality_defect(basis);
    if defect > T::lit(1e-6) {
        return Err(Error::NotOrthonormal {
            deviation: defect.to_f64_lossy(),
        });
    }
    // rows of `residual` are x - B B^T x
    let coeffs = samples * basis;
    let residual = samples - coeffs * basis.transpose();
    let total = residual.row_iter().fold(T::zero(), |acc, r| acc + r.norm_squared());
    Ok(total / T::from_usize_lossy(samples.nrows()))
}

/// Embeds an orthonormal `n x r` basis into rank `p` by appending coordinate
/// vectors, highest index first, orthogonalized against the current columns.
///
/// The first `r` columns of the result are `x` itself.
pub fn uplift<T: Real>(x: &DMatrix<T>, target_rank: usize) -> Result<DMatrix<T>> {
    let (n, r) = x.shape();
    if r > target_rank || target_rank > n {
        return Err(Error::param(
            "target_rank",
            format!("need {r} <= target_rank <= {n}, got {target_rank}"),
        ));
    }
    let defect = orthonormality_defect(x);
    if defect > T::lit(1e-8) {
        return Err(Error::NotOrthonormal {
            deviation: defect.to_f64_lossy(),
        });
    }
    let mut out = DMatrix::zeros(n, target_rank);
    out.columns_mut(0, r).copy_from(x);
    let mut filled = r;
    for idx in (0..n).rev() {
        if filled == target_rank {
            break;
        }
        let current = out.columns(0, filled);
        let mut cand = nalgebra::DVector::zeros(n);
        cand[idx] = T::one();
        // e_i - B (B^T e_i), where B^T e_i is row i of B
        let coeffs = current.row(idx).transpose();
        cand -= current * &coeffs;
        if cand.norm() < T::lit(UPLIFT_TOLERANCE) {
            continue;
        }
        let again = current.tr_mul(&cand);
        cand -= current * again;
        let norm = cand.norm();
        out.column_mut(filled).copy_from(&(cand / norm));
        filled += 1;
    }
    if filled < target_rank {
        return Err(Error::UpliftFailed {
            needed: target_rank - r,
            found: filled - r,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, stream};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn e(n: usize, i: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, 1);
        m[(i, 0)] = 1.0;
        m
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let x = orthonormalize(&gaussian_matrix::<f64, _>(9, 3, &mut stream(1, 0))).unwrap();
        let y = orthonormalize(&x).unwrap();
        assert!((&x - &y).abs().max() < 1e-14);
    }

    #[test]
    fn scaling_does_not_change_output() {
        let x = gaussian_matrix::<f64, _>(8, 3, &mut stream(2, 0));
        let a = orthonormalize(&x).unwrap();
        let b = orthonormalize(&(&x * 7.0)).unwrap();
        assert!((&a - &b).abs().max() < 1e-13);
    }

    #[test]
    fn projector_matches_normal_equations() {
        let x = gaussian_matrix::<f64, _>(6, 3, &mut stream(3, 0));
        let q = orthonormalize(&x).unwrap();
        assert!(orthonormality_defect(&q) < 1e-12);
        let gram_inv = x.tr_mul(&x).try_inverse().unwrap();
        let p_ref = &x * gram_inv * x.transpose();
        let p = &q * q.transpose();
        assert!((p - p_ref).norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let mut x = gaussian_matrix::<f64, _>(5, 2, &mut stream(4, 0));
        let c0 = x.column(0).clone_owned();
        x.column_mut(1).copy_from(&(c0 * 2.0));
        assert!(matches!(orthonormalize(&x), Err(Error::RankDeficient { .. })));
        assert!(matches!(polar_orthonormalize(&x), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn polar_factor_is_orthonormal_and_spans_input() {
        let x = gaussian_matrix::<f64, _>(10, 3, &mut stream(5, 0));
        let w = polar_orthonormalize(&x).unwrap();
        assert!(orthonormality_defect(&w) < 1e-13);
        assert!(grassmann_distance(&x, &w).unwrap() < 1e-7);
        // symmetric factor: W^T X is symmetric positive definite
        let s = w.tr_mul(&x);
        assert!((&s - s.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn angles_of_identical_and_orthogonal_lines() {
        let u = e(2, 0);
        assert_abs_diff_eq!(grassmann_distance(&u, &u).unwrap(), 0.0, epsilon = 1e-15);
        let angles = principal_angles(&u, &e(2, 1)).unwrap();
        assert_eq!(angles.len(), 1);
        assert_abs_diff_eq!(angles.angles[0], FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn tiny_angles_are_resolved() {
        let mut v = DMatrix::zeros(3, 1);
        v[(0, 0)] = 1.0;
        v[(1, 0)] = 1e-9;
        let d = grassmann_distance(&e(3, 0), &v).unwrap();
        assert!((d - 1e-9).abs() < 1e-18, "{d}");
    }

    #[test]
    fn unequal_ranks_return_min_angles() {
        let x = gaussian_matrix::<f64, _>(7, 3, &mut stream(6, 0));
        let y = x.columns(0, 2).clone_owned();
        let angles = principal_angles(&x, &y).unwrap();
        assert_eq!(angles.len(), 2);
        assert!(angles.angles.iter().all(|&a| a < 1e-7));
        let angles = principal_angles(&y, &x).unwrap();
        assert_eq!(angles.len(), 2);
    }

    #[test]
    fn cosine_diagonals_cases() {
        let u = orthonormalize(&gaussian_matrix::<f64, _>(6, 2, &mut stream(7, 0))).unwrap();
        for c in cosine_diagonals(&u, &u).unwrap() {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-14);
        }
        for c in cosine_diagonals(&u, &(-&u)).unwrap() {
            assert_abs_diff_eq!(c, -1.0, epsilon = 1e-14);
        }
        let mut scaled = u.clone();
        scaled.column_mut(0).scale_mut(2.0);
        scaled.column_mut(1).scale_mut(3.0);
        for c in cosine_diagonals(&u, &scaled).unwrap() {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-14);
        }
        let mut zero = u.clone();
        zero.column_mut(1).fill(0.0);
        assert!(matches!(cosine_diagonals(&u, &zero), Err(Error::ZeroColumn { column: 1 })));
    }

    #[test]
    fn reconstruction_error_cases() {
        let b = e(2, 0);
        let samples = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        assert_abs_diff_eq!(reconstruction_error(&b, &samples).unwrap(), 9.0, epsilon = 1e-15);

        let basis = orthonormalize(&gaussian_matrix::<f64, _>(5, 2, &mut stream(8, 0))).unwrap();
        let coeffs = gaussian_matrix::<f64, _>(20, 2, &mut stream(9, 0));
        let inside = &coeffs * basis.transpose();
        let scale = inside.norm_squared() / 20.0;
        assert!(reconstruction_error(&basis, &inside).unwrap() <= 1e-20 * scale.max(1.0) * 1e4);

        let bad = &basis * 2.0;
        assert!(matches!(reconstruction_error(&bad, &inside), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn uplift_pads_with_trailing_coordinates() {
        let x = e(4, 0);
        let up = uplift(&x, 2).unwrap();
        assert_eq!(up.column(0), x.column(0));
        assert_eq!(up.column(1), e(4, 3).column(0));
        assert_eq!(uplift(&x, 1).unwrap(), x);
        assert!(uplift(&x, 5).is_err());
    }

    #[test]
    fn uplift_skips_coordinates_inside_the_span() {
        // x spans e_4 (last coordinate), so e_4 must be skipped
        let x = e(4, 3);
        let up = uplift(&x, 3).unwrap();
        assert!(orthonormality_defect(&up) < 1e-12);
        assert_eq!(up.column(1), e(4, 2).column(0));
        assert_eq!(up.column(2), e(4, 1).column(0));
    }
}
