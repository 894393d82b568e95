//! Two-player SGD for the linear GAN.
//!
//! The discriminator ascends and the generator descends
//!
//! ```text
//! L = 1/2 |W^T y|^2 - 1/2 |W^T y~|^2
//!     - lambda/2 sum logcosh(W^T W - I) + lambda/2 sum logcosh(V^T V - I)
//! ```
//!
//! with `y` a true sample and `y~ = V c~ + sqrt(eta_G) a~` a fake one. Both
//! players update from the same pre-step state. In the infinite-lambda limit
//! the discriminator is kept on the Stiefel manifold and the generator
//! penalty becomes the damping `V L`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::geometry::polar_orthonormalize;
use crate::model::{spiked_sample_into, MacroState, MicroState, SpikedModel, TrajectorySink};
use crate::ode::{rhs, OdeSystem};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization<T> {
    Finite(T),
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig<T: Real> {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub tau: T,
    pub tau_tilde: T,
    pub lambda: Regularization<T>,
    pub gen_noise: T,
    pub gen_cov_sqrt: DVector<T>,
}

impl<T: Real> GanConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let (n, d, p, q) = (self.n, self.d, self.p, self.q);
        if d == 0 || q == 0 {
            return Err(Error::param("d, q", "ranks must be at least 1"));
        }
        if d > p || q > p || p > n {
            return Err(Error::param(
                "p",
                format!("need d, q <= p <= n, got d = {d}, q = {q}, p = {p}, n = {n}"),
            ));
        }
        if !(self.tau >= T::zero()) || !(self.tau_tilde >= T::zero()) {
            return Err(Error::param("tau", "learning rates must be non-negative"));
        }
        if let Regularization::Finite(l) = self.lambda {
            if !(l > T::zero()) || !l.is_finite_value() {
                return Err(Error::param("lambda", "must be positive, or infinite"));
            }
        }
        if !(self.gen_noise >= T::zero()) {
            return Err(Error::param("gen_noise", "must be non-negative"));
        }
        if self.gen_cov_sqrt.len() != p {
            return Err(Error::dims("GanConfig gen_cov_sqrt", p, self.gen_cov_sqrt.len()));
        }
        if self.gen_cov_sqrt.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::param("gen_cov_sqrt", "entries must be non-negative"));
        }
        Ok(())
    }

    /// Diagonal of `Lambda~`.
    pub fn gen_cov(&self) -> DVector<T> {
        self.gen_cov_sqrt.map(|v| v * v)
    }

    /// The limiting ODE for this configuration against `true_model`.
    pub fn ode_system(&self, true_model: &SpikedModel<T>) -> Result<OdeSystem<T>> {
        OdeSystem::new(
            true_model.signal_cov(),
            self.gen_cov(),
            self.tau,
            self.tau_tilde,
            true_model.noise_level(),
            self.gen_noise,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanState<T: Real> {
    pub generator: DMatrix<T>,
    pub discriminator: DMatrix<T>,
    pub step: u64,
}

impl<T: Real> GanState<T> {
    pub fn new(generator: DMatrix<T>, discriminator: DMatrix<T>) -> Result<Self> {
        if generator.nrows() != discriminator.nrows() {
            return Err(Error::dims("GanState rows", generator.nrows(), discriminator.nrows()));
        }
        Ok(Self {
            generator,
            discriminator,
            step: 0,
        })
    }

    pub fn from_micro(x: &MicroState<T>) -> Self {
        Self {
            generator: x.generator.clone(),
            discriminator: x.discriminator.clone(),
            step: 0,
        }
    }

    fn check(&self, cfg: &GanConfig<T>) -> Result<()> {
        let n = cfg.n;
        if self.generator.shape() != (n, cfg.p) {
            return Err(Error::dims(
                "GanState generator",
                format!("{n}x{}", cfg.p),
                format!("{}x{}", self.generator.nrows(), self.generator.ncols()),
            ));
        }
        if self.discriminator.shape() != (n, cfg.q) {
            return Err(Error::dims(
                "GanState discriminator",
                format!("{n}x{}", cfg.q),
                format!("{}x{}", self.discriminator.nrows(), self.discriminator.ncols()),
            ));
        }
        Ok(())
    }

    /// Overlaps against the true basis `u`.
    pub fn macro_state(&self, u: &DMatrix<T>) -> MacroState<T> {
        let (v, w) = (&self.generator, &self.discriminator);
        MacroState {
            p: u.tr_mul(v),
            q: u.tr_mul(w),
            r: v.tr_mul(w),
            s: v.tr_mul(v),
            z: w.tr_mul(w),
        }
    }

    /// Draws a fake sample `y~` and its latent `c~` from the current generator.
    pub fn sample_fake<R: Rng + ?Sized>(&self, cfg: &GanConfig<T>, rng: &mut R) -> (DVector<T>, DVector<T>) {
        let mut y = DVector::zeros(self.generator.nrows());
        let mut c = DVector::zeros(self.generator.ncols());
        spiked_sample_into(&self.generator, &cfg.gen_cov_sqrt, cfg.gen_noise, &mut y, &mut c, rng);
        (y, c)
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        if self.generator.iter().any(|v| !v.is_finite_value()) {
            Some("generator")
        } else if self.discriminator.iter().any(|v| !v.is_finite_value()) {
            Some("discriminator")
        } else {
            None
        }
    }
}

/// `log cosh x`, stable for large `|x|`.
pub fn logcosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
}

fn penalty<T: Real>(x: &DMatrix<T>) -> T {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g.iter().fold(T::zero(), |acc, &v| acc + logcosh(v))
}

fn tanh_gram_defect<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g.map(|v| v.tanh())
}

/// Value of the minimax objective for one true and one fake sample.
///
/// The penalty sums `logcosh` over every entry of `X^T X - I`.
pub fn loss<T: Real>(y: &DVector<T>, y_fake: &DVector<T>, v: &DMatrix<T>, w: &DMatrix<T>, cfg: &GanConfig<T>) -> Result<T> {
    let lambda = match cfg.lambda {
        Regularization::Finite(l) => l,
        Regularization::Infinite => return Err(Error::InfiniteLambda),
    };
    check_sample_dims(y, y_fake, w.nrows())?;
    if v.nrows() != w.nrows() {
        return Err(Error::dims("loss generator rows", w.nrows(), v.nrows()));
    }
    let half = T::lit(0.5);
    let real = w.tr_mul(y).norm_squared();
    let fake = w.tr_mul(y_fake).norm_squared();
    Ok(half * (real - fake) - half * lambda * penalty(w) + half * lambda * penalty(v))
}

fn check_sample_dims<T: Real>(y: &DVector<T>, y_fake: &DVector<T>, n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::dims("true sample length", n, y.len()));
    }
    if y_fake.len() != n {
        return Err(Error::dims("fake sample length", n, y_fake.len()));
    }
    Ok(())
}

/// Gradients of [`loss`] with respect to `V` and `W` at finite `lambda`,
/// with `y~ = V c~ + noise` so that `V` enters through the fake sample.
pub fn gradients<T: Real>(
    y: &DVector<T>,
    y_fake: &DVector<T>,
    latent_fake: &DVector<T>,
    v: &DMatrix<T>,
    w: &DMatrix<T>,
    lambda: T,
) -> (DMatrix<T>, DMatrix<T>) {
    let wy = w.tr_mul(y);
    let wf = w.tr_mul(y_fake);
    let mut grad_w = y * wy.transpose() - y_fake * wf.transpose();
    grad_w -= w * tanh_gram_defect(w) * lambda;
    let mut grad_v = v * tanh_gram_defect(v) * lambda;
    grad_v -= (w * wf) * latent_fake.transpose();
    (grad_v, grad_w)
}

/// One simultaneous update of generator and discriminator.
pub fn sgd_step<T: Real>(
    state: &mut GanState<T>,
    y: &DVector<T>,
    y_fake: &DVector<T>,
    latent_fake: &DVector<T>,
    cfg: &GanConfig<T>,
) -> Result<()> {
    step_impl(state, y, y_fake, latent_fake, cfg, None)
}

/// Like [`sgd_step`], but only generator column `column` moves; the
/// discriminator updates as usual. Used by the sequential single-feature
/// schedule on real data.
pub fn sgd_step_single_column<T: Real>(
    state: &mut GanState<T>,
    y: &DVector<T>,
    y_fake: &DVector<T>,
    latent_fake: &DVector<T>,
    cfg: &GanConfig<T>,
    column: usize,
) -> Result<()> {
    if column >= cfg.p {
        return Err(Error::param("column", format!("{column} out of range for p = {}", cfg.p)));
    }
    step_impl(state, y, y_fake, latent_fake, cfg, Some(column))
}

fn step_impl<T: Real>(
    state: &mut GanState<T>,
    y: &DVector<T>,
    y_fake: &DVector<T>,
    latent_fake: &DVector<T>,
    cfg: &GanConfig<T>,
    column: Option<usize>,
) -> Result<()> {
    state.check(cfg)?;
    check_sample_dims(y, y_fake, cfg.n)?;
    if latent_fake.len() != cfg.p {
        return Err(Error::dims("fake latent length", cfg.p, latent_fake.len()));
    }
    let (dv, new_w) =
        update(&state.generator, &state.discriminator, y, y_fake, latent_fake, cfg).map_err(|e| match e {
            Error::TrainingDiverged { field, .. } => Error::TrainingDiverged {
                step: state.step + 1,
                field,
            },
            other => other,
        })?;
    match column {
        None => state.generator += dv,
        Some(j) => {
            let mut col = state.generator.column_mut(j);
            col += dv.column(j);
        }
    }
    state.discriminator = new_w;
    state.step += 1;
    Ok(())
}

/// Generator increment and new discriminator, both computed from `(v, w)`.
fn update<T: Real>(
    v: &DMatrix<T>,
    w: &DMatrix<T>,
    y: &DVector<T>,
    y_fake: &DVector<T>,
    latent_fake: &DVector<T>,
    cfg: &GanConfig<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let n = T::from_usize_lossy(cfg.n);
    let (a, b) = (cfg.tau / n, cfg.tau_tilde / n);
    match cfg.lambda {
        Regularization::Finite(lambda) => {
            let (grad_v, grad_w) = gradients(y, y_fake, latent_fake, v, w, lambda);
            Ok((grad_v * (-b), w + grad_w * a))
        }
        Regularization::Infinite => {
            let wy = w.tr_mul(y);
            let wf = w.tr_mul(y_fake);
            let r = v.tr_mul(w);
            let gen_cov = cfg.gen_cov();

            let mut dv = DMatrix::zeros(v.nrows(), v.ncols());
            for j in 0..v.ncols() {
                let l = -r.row(j).norm_squared() * gen_cov[j];
                dv.column_mut(j).axpy(l * b, &v.column(j), T::zero());
            }
            let wwf = w * &wf;
            dv.ger(b, &wwf, latent_fake, T::one());

            let mut moved = w.clone();
            moved.ger(a, y, &wy, T::one());
            moved.ger(-a, y_fake, &wf, T::one());
            // a non-finite or collapsed discriminator means the run blew up
            let diverged = Error::TrainingDiverged {
                step: 0,
                field: "discriminator",
            };
            if moved.iter().any(|v| !v.is_finite_value()) {
                return Err(diverged);
            }
            match polar_orthonormalize(&moved) {
                Ok(w) => Ok((dv, w)),
                Err(Error::RankDeficient { .. }) => Err(diverged),
                Err(e) => Err(e),
            }
        }
    }
}

/// Runs `steps` updates, drawing one true sample from `true_model` and then
/// one fake sample from the current generator per step, both from `rng`.
///
/// Records `(k / n, overlaps)` at the starting step, every `record_every`
/// steps and after the last step; nothing is recorded when `steps == 0`.
#[allow(clippy::too_many_arguments)]
pub fn train<T: Real, S: TrajectorySink<T> + ?Sized, R: Rng + ?Sized>(
    state: &mut GanState<T>,
    true_model: &SpikedModel<T>,
    cfg: &GanConfig<T>,
    steps: u64,
    record_every: u64,
    recorder: &mut S,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    state.check(cfg)?;
    if true_model.ambient_dim() != cfg.n {
        return Err(Error::dims("true model dimension", cfg.n, true_model.ambient_dim()));
    }
    if record_every == 0 {
        return Err(Error::param("record_every", "must be at least 1"));
    }
    if steps == 0 {
        return Ok(());
    }
    let u = true_model.basis();
    let n = T::from_usize_lossy(cfg.n);
    let time = |k: u64| T::lit(k as f64) / n;
    let start = state.step;
    recorder.record(time(start), &state.macro_state(u));

    let mut y = DVector::zeros(cfg.n);
    let mut c = DVector::zeros(true_model.rank());
    let mut y_fake = DVector::zeros(cfg.n);
    let mut c_fake = DVector::zeros(cfg.p);
    for k in 1..=steps {
        true_model.sample_into(&mut y, &mut c, rng);
        spiked_sample_into(&state.generator, &cfg.gen_cov_sqrt, cfg.gen_noise, &mut y_fake, &mut c_fake, rng);
        step_impl(state, &y, &y_fake, &c_fake, cfg, None)?;
        if k % record_every == 0 || k == steps {
            if let Some(field) = state.first_non_finite() {
                return Err(Error::TrainingDiverged { step: state.step, field });
            }
            recorder.record(time(state.step), &state.macro_state(u));
        }
    }
    Ok(())
}

/// Monte-Carlo estimate of the one-step expected increments of `V` and `Q`
/// next to their analytic leading-order values.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport<T: Real> {
    pub empirical_v: DMatrix<T>,
    pub empirical_q: DMatrix<T>,
    pub analytic_v: DMatrix<T>,
    pub analytic_q: DMatrix<T>,
    /// Standard errors of the empirical means, entrywise.
    pub stderr_v: DMatrix<T>,
    pub stderr_q: DMatrix<T>,
    pub max_abs_error: T,
    pub mc_samples: usize,
}

impl<T: Real> DriftReport<T> {
    pub fn max_abs_error_v(&self) -> T {
        (&self.empirical_v - &self.analytic_v).amax()
    }

    pub fn max_abs_error_q(&self) -> T {
        (&self.empirical_q - &self.analytic_q).amax()
    }

    /// Largest `|empirical - analytic| / stderr` over both blocks.
    pub fn max_standardized_error(&self) -> T {
        let z = |e: &DMatrix<T>, a: &DMatrix<T>, s: &DMatrix<T>| {
            e.iter()
                .zip(a.iter())
                .zip(s.iter())
                .filter(|(_, &s)| s > T::zero())
                .fold(T::zero(), |m, ((&e, &a), &s)| m.max((e - a).abs() / s))
        };
        z(&self.empirical_v, &self.analytic_v, &self.stderr_v).max(z(&self.empirical_q, &self.analytic_q, &self.stderr_q))
    }

    pub fn rms_error_v(&self) -> T {
        rms(&(&self.empirical_v - &self.analytic_v))
    }

    pub fn rms_error_q(&self) -> T {
        rms(&(&self.empirical_q - &self.analytic_q))
    }
}

fn rms<T: Real>(m: &DMatrix<T>) -> T {
    (m.norm_squared() / T::from_usize_lossy(m.len().max(1))).sqrt()
}

/// Analytic expected increments `(E dV, E dQ)` in the infinite-lambda limit:
/// `E dV = tau~/n (W R^T Lambda~ + V L)` and `E dQ = 1/n` times the ODE
/// right-hand side for `Q`.
pub fn analytic_drift<T: Real>(
    state: &GanState<T>,
    true_model: &SpikedModel<T>,
    cfg: &GanConfig<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if cfg.lambda != Regularization::Infinite {
        return Err(Error::FiniteLambda);
    }
    state.check(cfg)?;
    let n = T::from_usize_lossy(cfg.n);
    let m = state.macro_state(true_model.basis());
    let gen_cov = cfg.gen_cov();
    let (v, w) = (&state.generator, &state.discriminator);
    let mut rt_lg = m.r.transpose();
    for (j, &g) in gen_cov.iter().enumerate() {
        rt_lg.column_mut(j).scale_mut(g);
    }
    let mut dv = w * rt_lg;
    for j in 0..v.ncols() {
        let l = -m.r.row(j).norm_squared() * gen_cov[j];
        dv.column_mut(j).axpy(l, &v.column(j), T::one());
    }
    let dq = rhs(&m, &cfg.ode_system(true_model)?)?.q;
    Ok((dv * (cfg.tau_tilde / n), dq / n))
}

/// Compares Monte-Carlo averages of one-step increments over `mc_samples`
/// fresh `(y, y~)` pairs against [`analytic_drift`].
pub fn drift_check<T: Real, R: Rng + ?Sized>(
    state: &GanState<T>,
    true_model: &SpikedModel<T>,
    cfg: &GanConfig<T>,
    mc_samples: usize,
    rng: &mut R,
) -> Result<DriftReport<T>> {
    cfg.validate()?;
    let (analytic_v, analytic_q) = analytic_drift(state, true_model, cfg)?;
    if mc_samples < 2 {
        return Err(Error::param("mc_samples", "need at least 2 samples"));
    }
    let u = true_model.basis();
    let (v, w) = (&state.generator, &state.discriminator);
    let q0 = u.tr_mul(w);

    let mut sum_v = DMatrix::zeros(v.nrows(), v.ncols());
    let mut sq_v = DMatrix::zeros(v.nrows(), v.ncols());
    let mut sum_q = DMatrix::zeros(q0.nrows(), q0.ncols());
    let mut sq_q = DMatrix::zeros(q0.nrows(), q0.ncols());
    let mut y = DVector::zeros(cfg.n);
    let mut c = DVector::zeros(true_model.rank());
    let mut y_fake = DVector::zeros(cfg.n);
    let mut c_fake = DVector::zeros(cfg.p);
    for _ in 0..mc_samples {
        true_model.sample_into(&mut y, &mut c, rng);
        spiked_sample_into(v, &cfg.gen_cov_sqrt, cfg.gen_noise, &mut y_fake, &mut c_fake, rng);
        let (dv, new_w) = update(v, w, &y, &y_fake, &c_fake, cfg)?;
        let dq = u.tr_mul(&new_w) - &q0;
        sum_v += &dv;
        sq_v.zip_apply(&dv, |s, x| *s += x * x);
        sum_q += &dq;
        sq_q.zip_apply(&dq, |s, x| *s += x * x);
    }
    let m = T::from_usize_lossy(mc_samples);
    let stats = |sum: DMatrix<T>, sq: DMatrix<T>| {
        let mean = sum / m;
        let mut se = sq / m;
        se.zip_apply(&mean, |s, mu| {
            let var = (*s - mu * mu).max(T::zero()) * m / (m - T::one());
            *s = (var / m).sqrt();
        });
        (mean, se)
    };
    let (empirical_v, stderr_v) = stats(sum_v, sq_v);
    let (empirical_q, stderr_q) = stats(sum_q, sq_q);
    let max_abs_error = (&empirical_v - &analytic_v).amax().max((&empirical_q - &analytic_q).amax());
    Ok(DriftReport {
        empirical_v,
        empirical_q,
        analytic_v,
        analytic_q,
        stderr_v,
        stderr_q,
        max_abs_error,
        mc_samples,
    })
}
