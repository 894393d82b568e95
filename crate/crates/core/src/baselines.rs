//! Classical online subspace learners: Oja's method and full-data GROUSE.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{orthonormality_defect, orthonormalize};
use crate::{Error, Real, Result};

/// Below this norm a GROUSE residual or projection counts as zero.
pub const GROUSE_NORM_GUARD: f64 = 1e-14;

/// Orthonormal `n x d` estimate and its update count.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState<T: Real> {
    pub basis: DMatrix<T>,
    pub step: u64,
}

impl<T: Real> BaselineState<T> {
    /// Accepts an orthonormal basis (within `1e-8`).
    pub fn new(basis: DMatrix<T>) -> Result<Self> {
        let defect = orthonormality_defect(&basis);
        if !(defect < T::lit(1e-8)) {
            return Err(Error::NotOrthonormal {
                deviation: defect.to_f64_lossy(),
            });
        }
        Ok(Self { basis, step: 0 })
    }

    /// Orthonormalizes an arbitrary full-rank starting matrix.
    pub fn from_matrix(x: &DMatrix<T>) -> Result<Self> {
        Ok(Self {
            basis: orthonormalize(x)?,
            step: 0,
        })
    }

    fn check(&self, y: &DVector<T>) -> Result<()> {
        if y.len() != self.basis.nrows() {
            return Err(Error::dims("baseline sample length", self.basis.nrows(), y.len()));
        }
        Ok(())
    }
}

/// `X <- QR(X + tau y y^T X)` with positive-diagonal `R`.
pub fn oja_step<T: Real>(state: &mut BaselineState<T>, y: &DVector<T>, tau: T) -> Result<()> {
    state.check(y)?;
    let coeffs = state.basis.tr_mul(y);
    let mut moved = state.basis.clone();
    moved.ger(tau, y, &coeffs, T::one());
    state.basis = orthonormalize(&moved)?;
    state.step += 1;
    Ok(())
}

/// Rank-one geodesic step toward `y` on the Grassmannian.
///
/// With `w = X^T y`, `p = X w`, `r = y - p` and `theta = tau |r| |p|`:
/// `X <- X + ((cos theta - 1) p/|p| + sin theta r/|r|) w^T/|w|`.
pub fn grouse_step<T: Real>(state: &mut BaselineState<T>, y: &DVector<T>, tau: T) -> Result<()> {
    state.check(y)?;
    let x = &mut state.basis;
    let w = x.tr_mul(y);
    let p = &*x * &w;
    let r = y - &p;
    let (p_norm, r_norm, w_norm) = (p.norm(), r.norm(), w.norm());
    let guard = T::lit(GROUSE_NORM_GUARD);
    state.step += 1;
    if p_norm < guard || r_norm < guard || w_norm < guard {
        return Ok(());
    }
    let theta = tau * r_norm * p_norm;
    let (sin, cos) = theta.sin_cos();
    let dir = p * ((cos - T::one()) / p_norm) + r * (sin / r_norm);
    x.ger(T::one() / w_norm, &dir, &w, T::one());
    Ok(())
}
