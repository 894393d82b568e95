//! Spiked covariance data model and the microscopic / macroscopic states of
//! GAN training.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::geometry::{orthonormality_defect, orthonormalize};
use crate::rng::{fill_gaussian, gaussian_matrix};
use crate::{Error, Real, Result};

/// `y = U c + sqrt(eta) a` with `c ~ N(0, Lambda)` and `a ~ N(0, I_n)`.
///
/// `Lambda` is diagonal and stored through its square root.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel<T: Real> {
    basis: DMatrix<T>,
    signal_cov_sqrt: DVector<T>,
    noise_level: T,
}

impl<T: Real> SpikedModel<T> {
    pub fn new(basis: DMatrix<T>, signal_cov_sqrt: DVector<T>, noise_level: T) -> Result<Self> {
        if basis.ncols() != signal_cov_sqrt.len() {
            return Err(Error::dims("SpikedModel", basis.ncols(), signal_cov_sqrt.len()));
        }
        if signal_cov_sqrt.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::param("signal_cov_sqrt", "entries must be non-negative"));
        }
        if !(noise_level >= T::zero()) {
            return Err(Error::param("noise_level", "must be non-negative"));
        }
        let defect = orthonormality_defect(&basis);
        if defect > T::lit(1e-10) {
            return Err(Error::NotOrthonormal {
                deviation: defect.to_f64_lossy(),
            });
        }
        Ok(Self {
            basis,
            signal_cov_sqrt,
            noise_level,
        })
    }

    /// Builds the model from the diagonal of `Lambda` itself.
    pub fn from_covariance(basis: DMatrix<T>, signal_cov: &DVector<T>, noise_level: T) -> Result<Self> {
        if signal_cov.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::param("signal_cov", "entries must be non-negative"));
        }
        Self::new(basis, signal_cov.map(|v| v.sqrt()), noise_level)
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn signal_cov_sqrt(&self) -> &DVector<T> {
        &self.signal_cov_sqrt
    }

    /// Diagonal of `Lambda`.
    pub fn signal_cov(&self) -> DVector<T> {
        self.signal_cov_sqrt.map(|v| v * v)
    }

    pub fn noise_level(&self) -> T {
        self.noise_level
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Draws one sample and its latent vector `c`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<T>, DVector<T>) {
        let mut y = DVector::zeros(self.ambient_dim());
        let mut c = DVector::zeros(self.rank());
        self.sample_into(&mut y, &mut c, rng);
        (y, c)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, y: &mut DVector<T>, latent: &mut DVector<T>, rng: &mut R) {
        spiked_sample_into(&self.basis, &self.signal_cov_sqrt, self.noise_level, y, latent, rng);
    }

    /// Deterministic part of sampling: `c = Lambda^{1/2} g`,
    /// `y = U c + sqrt(eta) a`.
    pub fn compose(&self, g: &DVector<T>, a: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let c = g.component_mul(&self.signal_cov_sqrt);
        let y = &self.basis * &c + a * self.noise_level.sqrt();
        (y, c)
    }
}

/// Sampling shared by the true model and the generator. The basis is not
/// required to be orthonormal here; the generator's `V` generally is not.
///
/// Draw order: the `d` latent normals first, then the `n` noise normals.
pub fn spiked_sample_into<T: Real, R: Rng + ?Sized>(
    basis: &DMatrix<T>,
    cov_sqrt: &DVector<T>,
    noise_level: T,
    y: &mut DVector<T>,
    latent: &mut DVector<T>,
    rng: &mut R,
) {
    fill_gaussian(latent.as_mut_slice(), rng);
    latent.component_mul_assign(cov_sqrt);
    fill_gaussian(y.as_mut_slice(), rng);
    let sigma = noise_level.sqrt();
    if sigma != T::one() {
        *y *= sigma;
    }
    y.gemv(T::one(), basis, latent, T::one());
}

/// `[U, V_k, W_k]`: true basis, generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroState<T: Real> {
    pub true_basis: DMatrix<T>,
    pub generator: DMatrix<T>,
    pub discriminator: DMatrix<T>,
}

impl<T: Real> MicroState<T> {
    pub fn new(true_basis: DMatrix<T>, generator: DMatrix<T>, discriminator: DMatrix<T>) -> Result<Self> {
        let n = true_basis.nrows();
        if generator.nrows() != n {
            return Err(Error::dims("MicroState generator rows", n, generator.nrows()));
        }
        if discriminator.nrows() != n {
            return Err(Error::dims("MicroState discriminator rows", n, discriminator.nrows()));
        }
        Ok(Self {
            true_basis,
            generator,
            discriminator,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.true_basis.nrows()
    }
}

/// Overlaps `P = U^T V`, `Q = U^T W`, `R = V^T W`, `S = V^T V`, `Z = W^T W`.
///
/// The same struct carries time derivatives of these blocks in the ODE code.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState<T: Real> {
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub s: DMatrix<T>,
    pub z: DMatrix<T>,
}

impl<T: Real> MacroState<T> {
    pub fn new(p: DMatrix<T>, q: DMatrix<T>, r: DMatrix<T>, s: DMatrix<T>, z: DMatrix<T>) -> Result<Self> {
        let (d, gp) = p.shape();
        let gq = q.ncols();
        let checks = [
            ("Q", q.shape(), (d, gq)),
            ("R", r.shape(), (gp, gq)),
            ("S", s.shape(), (gp, gp)),
            ("Z", z.shape(), (gq, gq)),
        ];
        for (name, found, expected) in checks {
            if found != expected {
                return Err(Error::DimensionMismatch {
                    context: "MacroState",
                    expected: format!("{name} of shape {expected:?}"),
                    found: format!("{found:?}"),
                });
            }
        }
        Ok(Self { p, q, r, s, z })
    }

    pub fn zeros(d: usize, p: usize, q: usize) -> Self {
        Self {
            p: DMatrix::zeros(d, p),
            q: DMatrix::zeros(d, q),
            r: DMatrix::zeros(p, q),
            s: DMatrix::zeros(p, p),
            z: DMatrix::zeros(q, q),
        }
    }

    /// Diagonal initialization: `P = Q = init I`, `R = P^T Q`, `S = Z = I`.
    pub fn diagonal(d: usize, init: T) -> Self {
        let p = DMatrix::identity(d, d) * init;
        let r = p.tr_mul(&p);
        Self {
            q: p.clone(),
            p,
            r,
            s: DMatrix::identity(d, d),
            z: DMatrix::identity(d, d),
        }
    }

    /// `(d, p, q)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.p.nrows(), self.p.ncols(), self.q.ncols())
    }

    /// The Gram matrix `M = X^T X` of `[U, V, W]` (with `U^T U = I`).
    pub fn assemble(&self) -> DMatrix<T> {
        let (d, p, q) = self.dims();
        let m = d + p + q;
        let mut out = DMatrix::zeros(m, m);
        out.view_mut((0, 0), (d, d)).fill_with_identity();
        out.view_mut((0, d), (d, p)).copy_from(&self.p);
        out.view_mut((0, d + p), (d, q)).copy_from(&self.q);
        out.view_mut((d, 0), (p, d)).copy_from(&self.p.transpose());
        out.view_mut((d, d), (p, p)).copy_from(&self.s);
        out.view_mut((d, d + p), (p, q)).copy_from(&self.r);
        out.view_mut((d + p, 0), (q, d)).copy_from(&self.q.transpose());
        out.view_mut((d + p, d), (q, p)).copy_from(&self.r.transpose());
        out.view_mut((d + p, d + p), (q, q)).copy_from(&self.z);
        out
    }

    fn blocks(&self) -> [&DMatrix<T>; 5] {
        [&self.p, &self.q, &self.r, &self.s, &self.z]
    }

    fn blocks_mut(&mut self) -> [&mut DMatrix<T>; 5] {
        [&mut self.p, &mut self.q, &mut self.r, &mut self.s, &mut self.z]
    }

    /// `self + h * other`, block by block.
    pub fn add_scaled(&self, other: &Self, h: T) -> Self {
        let mut out = self.clone();
        out.add_scaled_mut(other, h);
        out
    }

    pub fn add_scaled_mut(&mut self, other: &Self, h: T) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.zip_apply(b, |x, y| *x += h * y);
        }
    }

    /// Frobenius norm of the stacked blocks `(P, Q, R, S, Z)`.
    pub fn norm(&self) -> T {
        self.blocks()
            .iter()
            .fold(T::zero(), |acc, b| acc + b.norm_squared())
            .sqrt()
    }

    /// Frobenius distance between the stacked blocks of two states.
    pub fn distance(&self, other: &Self) -> T {
        self.blocks()
            .iter()
            .zip(other.blocks())
            .fold(T::zero(), |acc, (a, b)| acc + (*a - b).norm_squared())
            .sqrt()
    }

    /// Name of the first block holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        const NAMES: [&str; 5] = ["P", "Q", "R", "S", "Z"];
        self.blocks()
            .iter()
            .zip(NAMES)
            .find(|(b, _)| b.iter().any(|v| !v.is_finite_value()))
            .map(|(_, name)| name)
    }

    pub fn p_diagonal(&self) -> Vec<T> {
        let k = self.p.nrows().min(self.p.ncols());
        (0..k).map(|i| self.p[(i, i)]).collect()
    }

    pub fn q_diagonal(&self) -> Vec<T> {
        let k = self.q.nrows().min(self.q.ncols());
        (0..k).map(|i| self.q[(i, i)]).collect()
    }

    /// Leading `k x k` corner of every block.
    pub fn leading_block(&self, k: usize) -> Self {
        let corner = |m: &DMatrix<T>| m.view((0, 0), (k.min(m.nrows()), k.min(m.ncols()))).clone_owned();
        Self {
            p: corner(&self.p),
            q: corner(&self.q),
            r: corner(&self.r),
            s: corner(&self.s),
            z: corner(&self.z),
        }
    }

    /// Row-major values in CSV column order `P, Q, R, S, Z`.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for b in self.blocks() {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    out.push(b[(i, j)]);
                }
            }
        }
        out
    }

    /// Column labels matching [`MacroState::flatten`], 1-based.
    pub fn column_names(&self) -> Vec<String> {
        const NAMES: [&str; 5] = ["P", "Q", "R", "S", "Z"];
        let mut out = Vec::new();
        for (b, name) in self.blocks().iter().zip(NAMES) {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    out.push(format!("{name}_{}_{}", i + 1, j + 1));
                }
            }
        }
        out
    }
}

/// Computes all five overlap blocks of a microscopic state.
pub fn macro_state<T: Real>(x: &MicroState<T>) -> MacroState<T> {
    let (u, v, w) = (&x.true_basis, &x.generator, &x.discriminator);
    MacroState {
        p: u.tr_mul(v),
        q: u.tr_mul(w),
        r: v.tr_mul(w),
        s: v.tr_mul(v),
        z: w.tr_mul(w),
    }
}

/// Gaussian `n x d` matrix with entry variance `scale^2 / n`, so each column
/// has expected squared norm `scale^2`. With `orthonormal`, the columns are
/// orthonormalized and then scaled to norm `scale`.
pub fn scaled_random_init<T: Real, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    scale: T,
    orthonormal: bool,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    if !(scale >= T::zero()) {
        return Err(Error::param("scale", "must be non-negative"));
    }
    if scale == T::zero() {
        return Ok(DMatrix::zeros(n, d));
    }
    let g: DMatrix<T> = gaussian_matrix(n, d, rng);
    if orthonormal {
        Ok(orthonormalize(&g)? * scale)
    } else {
        Ok(g * (scale / T::from_usize_lossy(n).sqrt()))
    }
}

/// Upper-triangular `C` with `C^T C = M` for symmetric positive semidefinite
/// `M`. Zero pivots yield zero rows.
pub(crate) fn psd_cholesky_upper<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let k = m.nrows();
    let scale = (0..k).fold(T::zero(), |acc, i| acc.max(m[(i, i)].abs())).max(T::one());
    let tol = T::lit(1e-12) * scale;
    let mut c = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut pivot = m[(j, j)];
        for i in 0..j {
            pivot -= c[(i, j)] * c[(i, j)];
        }
        if pivot < -tol {
            return Err(Error::param("macro state", "Gram matrix is not positive semidefinite"));
        }
        if pivot <= tol {
            for col in (j + 1)..k {
                let mut rest = m[(j, col)];
                for i in 0..j {
                    rest -= c[(i, j)] * c[(i, col)];
                }
                if rest.abs() > T::lit(1e-8) * scale {
                    return Err(Error::param("macro state", "Gram matrix is not positive semidefinite"));
                }
            }
            continue;
        }
        let cjj = pivot.sqrt();
        c[(j, j)] = cjj;
        for col in (j + 1)..k {
            let mut rest = m[(j, col)];
            for i in 0..j {
                rest -= c[(i, j)] * c[(i, col)];
            }
            c[(j, col)] = rest / cjj;
        }
    }
    Ok(c)
}

/// Builds `[U, V, W]` in `R^n` whose overlaps equal `target` exactly (up to
/// round-off).
///
/// A random orthonormal frame `E` of width `d + p + q` is drawn; `U` is its
/// first `d` columns and `[U, V, W] = E C` with `C^T C` the Gram matrix of
/// `target`. The frame is delocalized, so the state is a typical
/// high-dimensional configuration with the prescribed overlaps.
pub fn realize_macro_state<T: Real, R: Rng + ?Sized>(
    target: &MacroState<T>,
    n: usize,
    rng: &mut R,
) -> Result<MicroState<T>> {
    let (d, p, q) = target.dims();
    let width = d + p + q;
    if n < width {
        return Err(Error::param("n", format!("need n >= d + p + q = {width}, got {n}")));
    }
    let gram = target.assemble();
    let c = psd_cholesky_upper(&gram)?;
    let frame = orthonormalize(&gaussian_matrix::<T, R>(n, width, rng))?;
    let x = frame * c;
    MicroState::new(
        x.columns(0, d).clone_owned(),
        x.columns(d, p).clone_owned(),
        x.columns(d + p, q).clone_owned(),
    )
}

/// Receives `(t, state)` pairs from training loops and integrators.
pub trait TrajectorySink<T: Real> {
    fn record(&mut self, t: T, state: &MacroState<T>);
}

/// In-memory trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory<T: Real> {
    pub points: Vec<(T, MacroState<T>)>,
}

impl<T: Real> Trajectory<T> {
    pub fn new() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<T> {
        self.points.iter().map(|(t, _)| *t).collect()
    }

    pub fn last(&self) -> Option<&(T, MacroState<T>)> {
        self.points.last()
    }
}

impl<T: Real> TrajectorySink<T> for Trajectory<T> {
    fn record(&mut self, t: T, state: &MacroState<T>) {
        self.points.push((t, state.clone()));
    }
}

/// Discards everything.
impl<T: Real> TrajectorySink<T> for () {
    fn record(&mut self, _t: T, _state: &MacroState<T>) {}
}
