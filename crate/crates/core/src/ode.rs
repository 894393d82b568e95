//! Deterministic ODE followed by the macroscopic overlaps in the
//! high-dimensional limit, with `t = k / n`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::model::{MacroState, TrajectorySink};
use crate::{Error, Real, Result};

/// Parameters of the limiting ODE. Covariances are diagonals of `Lambda`
/// (true model, length `d`) and `Lambda~` (generator, length `p`).
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystem<T: Real> {
    pub signal_cov: DVector<T>,
    pub gen_cov: DVector<T>,
    pub tau: T,
    pub tau_tilde: T,
    pub eta_t: T,
    pub eta_g: T,
}

impl<T: Real> OdeSystem<T> {
    pub fn new(
        signal_cov: DVector<T>,
        gen_cov: DVector<T>,
        tau: T,
        tau_tilde: T,
        eta_t: T,
        eta_g: T,
    ) -> Result<Self> {
        let sys = Self {
            signal_cov,
            gen_cov,
            tau,
            tau_tilde,
            eta_t,
            eta_g,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_cov.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::param("signal_cov", "entries must be non-negative"));
        }
        if self.gen_cov.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::param("gen_cov", "entries must be non-negative"));
        }
        if !(self.tau >= T::zero()) || !(self.tau_tilde >= T::zero()) {
            return Err(Error::param("tau", "learning rates must be non-negative"));
        }
        if !(self.eta_t >= T::zero()) || !(self.eta_g >= T::zero()) {
            return Err(Error::param("eta", "noise levels must be non-negative"));
        }
        Ok(())
    }

    fn check_dims(&self, state: &MacroState<T>) -> Result<()> {
        let (d, p, _) = state.dims();
        if self.signal_cov.len() != d {
            return Err(Error::dims("OdeSystem signal_cov", d, self.signal_cov.len()));
        }
        if self.gen_cov.len() != p {
            return Err(Error::dims("OdeSystem gen_cov", p, self.gen_cov.len()));
        }
        Ok(())
    }
}

/// Drift corrections: `L` (diagonal, stored as a vector) and `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeCoefficients<T: Real> {
    pub l: DVector<T>,
    pub h: DMatrix<T>,
}

/// `diag(v) * m`
fn scale_rows<T: Real>(m: &DMatrix<T>, v: &DVector<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (i, &s) in v.iter().enumerate() {
        out.row_mut(i).scale_mut(s);
    }
    out
}

/// `m * diag(v)`
fn scale_cols<T: Real>(m: &DMatrix<T>, v: &DVector<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (j, &s) in v.iter().enumerate() {
        out.column_mut(j).scale_mut(s);
    }
    out
}

/// `L = -diag(R R^T Lambda~)` and
/// `H = (1 - tau eta_G / 2) R^T Lambda~ R - (1 + tau eta_T / 2) Q^T Lambda Q
///      - tau (eta_G^2 + eta_T^2) / 2 I`.
pub fn coefficients<T: Real>(state: &MacroState<T>, sys: &OdeSystem<T>) -> Result<OdeCoefficients<T>> {
    sys.check_dims(state)?;
    Ok(coefficients_unchecked(state, sys))
}

fn coefficients_unchecked<T: Real>(state: &MacroState<T>, sys: &OdeSystem<T>) -> OdeCoefficients<T> {
    let half = T::lit(0.5);
    let (r, q) = (&state.r, &state.q);
    let l = DVector::from_fn(r.nrows(), |i, _| -r.row(i).norm_squared() * sys.gen_cov[i]);
    let rlr = r.tr_mul(&scale_rows(r, &sys.gen_cov));
    let qlq = q.tr_mul(&scale_rows(q, &sys.signal_cov));
    let noise = sys.tau * (sys.eta_g * sys.eta_g + sys.eta_t * sys.eta_t) * half;
    let mut h = rlr * (T::one() - sys.tau * sys.eta_g * half) - qlq * (T::one() + sys.tau * sys.eta_t * half);
    for i in 0..h.nrows() {
        h[(i, i)] -= noise;
    }
    OdeCoefficients { l, h }
}

/// Time derivative of every overlap block. `dZ` is identically zero.
pub fn rhs<T: Real>(state: &MacroState<T>, sys: &OdeSystem<T>) -> Result<MacroState<T>> {
    sys.check_dims(state)?;
    Ok(rhs_unchecked(state, sys))
}

fn rhs_unchecked<T: Real>(state: &MacroState<T>, sys: &OdeSystem<T>) -> MacroState<T> {
    let OdeCoefficients { l, h } = coefficients_unchecked(state, sys);
    let (lam, lamg) = (&sys.signal_cov, &sys.gen_cov);
    let MacroState { p, q, r, s, z } = state;
    let (tau, tt) = (sys.tau, sys.tau_tilde);

    // R^T Lambda~ and Lambda~ R
    let rt_lg = scale_cols(&r.transpose(), lamg);
    let lg_r = scale_rows(r, lamg);

    let dp = (q * &rt_lg + scale_cols(p, &l)) * tt;
    let dq = (scale_rows(q, lam) - p * &lg_r + q * &h) * tau;

    let pt_lq = p.tr_mul(&scale_rows(q, lam));
    let lg_plus_l = lamg + &l;
    let dr = (pt_lq - s * &lg_r + r * &h) * tau + scale_rows(r, &lg_plus_l) * tt;

    let rrt = r * r.transpose();
    let ds = (scale_cols(&rrt, lamg) + scale_rows(&rrt, lamg) + scale_cols(s, &l) + scale_rows(s, &l)) * tt;

    MacroState {
        p: dp,
        q: dq,
        r: dr,
        s: ds,
        z: DMatrix::zeros(z.nrows(), z.ncols()),
    }
}

fn rk4_step<T: Real>(x: &MacroState<T>, sys: &OdeSystem<T>, h: T) -> MacroState<T> {
    let half = T::lit(0.5);
    let k1 = rhs_unchecked(x, sys);
    let k2 = rhs_unchecked(&x.add_scaled(&k1, h * half), sys);
    let k3 = rhs_unchecked(&x.add_scaled(&k2, h * half), sys);
    let k4 = rhs_unchecked(&x.add_scaled(&k3, h), sys);
    let mut next = x.clone();
    let sixth = h / T::lit(6.0);
    next.add_scaled_mut(&k1, sixth);
    next.add_scaled_mut(&k2, sixth * T::lit(2.0));
    next.add_scaled_mut(&k3, sixth * T::lit(2.0));
    next.add_scaled_mut(&k4, sixth);
    // Z is conserved exactly, not just up to round-off
    next.z.copy_from(&x.z);
    next
}

/// Fixed-step RK4 from `t = 0` to `t_end`.
///
/// The grid is `t_k = k dt`; when `t_end` is not a multiple of `dt` the last
/// step is shortened to land on `t_end`. The initial state, every
/// `record_every`-th grid point and the final state are recorded. Returns the
/// final state.
pub fn integrate<T: Real, S: TrajectorySink<T> + ?Sized>(
    m0: &MacroState<T>,
    sys: &OdeSystem<T>,
    t_end: T,
    dt: T,
    record_every: usize,
    recorder: &mut S,
) -> Result<MacroState<T>> {
    sys.validate()?;
    sys.check_dims(m0)?;
    if !(dt > T::zero()) || !dt.is_finite_value() {
        return Err(Error::param("dt", "must be positive and finite"));
    }
    if !(t_end >= T::zero()) || !t_end.is_finite_value() {
        return Err(Error::param("t_end", "must be non-negative and finite"));
    }
    if record_every == 0 {
        return Err(Error::param("record_every", "must be at least 1"));
    }
    if let Some(field) = m0.first_non_finite() {
        return Err(Error::Diverged { t: 0.0, field });
    }

    let ratio = (t_end / dt).to_f64_lossy();
    let nearest = ratio.round();
    // a ratio within round-off of an integer has no partial step
    let (full, partial) = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        (nearest as usize, false)
    } else {
        (ratio.floor() as usize, true)
    };

    let mut x = m0.clone();
    recorder.record(T::zero(), &x);
    for k in 1..=full {
        x = rk4_step(&x, sys, dt);
        let t = dt * T::from_usize_lossy(k);
        if let Some(field) = x.first_non_finite() {
            return Err(Error::Diverged {
                t: t.to_f64_lossy(),
                field,
            });
        }
        if k % record_every == 0 || (k == full && !partial) {
            recorder.record(t, &x);
        }
    }
    if partial {
        let t_last = dt * T::from_usize_lossy(full);
        x = rk4_step(&x, sys, t_end - t_last);
        if let Some(field) = x.first_non_finite() {
            return Err(Error::Diverged {
                t: t_end.to_f64_lossy(),
                field,
            });
        }
        recorder.record(t_end, &x);
    }
    Ok(x)
}

/// Qualitative outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Converged,
    Oscillating,
    Collapsed,
    NotLearning,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Converged => "converged",
            Regime::Oscillating => "oscillating",
            Regime::Collapsed => "collapsed",
            Regime::NotLearning => "not-learning",
        })
    }
}

pub const MIN_REGIME_SAMPLES: usize = 100;
pub const NOT_LEARNING_LEVEL: f64 = 0.15;
pub const OSCILLATION_PEAK_TO_PEAK: f64 = 0.1;
pub const COLLAPSE_FRACTION: f64 = 0.5;

/// Labels a trajectory from the statistics of `|diag(P)|` over its last 20%.
///
/// Checked in order: not-learning (tail mean of the smallest diagonal entry
/// below 0.15), oscillating (tail peak-to-peak of any entry above 0.1),
/// collapsed (any entry ends below half of its running maximum), converged.
pub fn classify_regime<T: Real>(states: &[(T, MacroState<T>)]) -> Result<Regime> {
    if states.len() < MIN_REGIME_SAMPLES {
        return Err(Error::TrajectoryTooShort {
            len: states.len(),
            min: MIN_REGIME_SAMPLES,
        });
    }
    let diags: Vec<Vec<f64>> = states
        .iter()
        .map(|(_, m)| m.p_diagonal().into_iter().map(|v| v.to_f64_lossy().abs()).collect())
        .collect();
    let k = diags[0].len();
    if k == 0 {
        return Ok(Regime::NotLearning);
    }
    let tail_start = states.len() - states.len() / 5;
    let tail = &diags[tail_start..];

    let tail_min_mean = tail
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / tail.len() as f64;
    if !(tail_min_mean >= NOT_LEARNING_LEVEL) {
        return Ok(Regime::NotLearning);
    }

    for i in 0..k {
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| (lo.min(row[i]), hi.max(row[i])));
        if hi - lo > OSCILLATION_PEAK_TO_PEAK {
            return Ok(Regime::Oscillating);
        }
    }

    let last = diags.last().expect("length checked above");
    for i in 0..k {
        let peak = diags.iter().map(|row| row[i]).fold(0.0, f64::max);
        if last[i] < COLLAPSE_FRACTION * peak {
            return Ok(Regime::Collapsed);
        }
    }
    Ok(Regime::Converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Trajectory;

    fn scalar_state(p: f64, q: f64, r: f64, s: f64) -> MacroState<f64> {
        let m = |v| DMatrix::from_element(1, 1, v);
        MacroState::new(m(p), m(q), m(r), m(s), m(1.0)).unwrap()
    }

    fn unit_system(eta: f64) -> OdeSystem<f64> {
        let one = DVector::from_element(1, 1.0);
        OdeSystem::new(one.clone(), one, 1.0, 1.0, eta, eta).unwrap()
    }

    #[test]
    fn scalar_rhs_hand_values() {
        // L = -0.25, H = 0.25 - 0.25 = 0
        let d = rhs(&scalar_state(0.5, 0.5, 0.5, 0.5), &unit_system(0.0)).unwrap();
        assert!((d.p[(0, 0)] - 0.125).abs() < 1e-15);
        assert!((d.q[(0, 0)] - 0.25).abs() < 1e-15);
        // 0.25 - 0.25 + 0 + (1 - 0.25) 0.5
        assert!((d.r[(0, 0)] - 0.375).abs() < 1e-15);
        // 2 * 0.25 + 2 * 0.5 * (-0.25)
        assert!((d.s[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(d.z[(0, 0)], 0.0);
    }

    #[test]
    fn coefficients_with_noise() {
        let c = coefficients(&scalar_state(0.0, 0.5, 0.5, 1.0), &unit_system(2.0)).unwrap();
        assert!((c.l[0] + 0.25).abs() < 1e-15);
        // (1 - 1) 0.25 - (1 + 1) 0.25 - 4
        assert!((c.h[(0, 0)] + 4.5).abs() < 1e-15);
    }

    #[test]
    fn zero_state_is_fixed() {
        let zero = MacroState::<f64>::zeros(2, 2, 2);
        let sys = OdeSystem::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            0.2,
            0.04,
            2.0,
            2.0,
        )
        .unwrap();
        let d = rhs(&zero, &sys).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = unit_system(1.0);
        assert!(rhs(&MacroState::<f64>::zeros(2, 2, 2), &sys).is_err());
    }

    #[test]
    fn rectangular_shapes() {
        let mut m = MacroState::<f64>::zeros(2, 3, 1);
        m.p.fill(0.1);
        m.q.fill(0.2);
        m.r.fill(0.05);
        m.s.fill_with_identity();
        m.z.fill_with_identity();
        let sys = OdeSystem::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![1.0, 2.0, 0.5]),
            0.2,
            0.04,
            1.0,
            1.0,
        )
        .unwrap();
        let d = rhs(&m, &sys).unwrap();
        assert_eq!(d.dims(), (2, 3, 1));
        assert_eq!(coefficients(&m, &sys).unwrap().h.shape(), (1, 1));
    }

    #[test]
    fn partial_last_step_lands_on_t_end() {
        let mut traj = Trajectory::new();
        let m0 = scalar_state(0.1, 0.1, 0.01, 1.0);
        integrate(&m0, &unit_system(0.5), 0.25, 0.1, 1, &mut traj).unwrap();
        let t = traj.times();
        assert_eq!(t.len(), 4);
        assert_eq!(*t.last().unwrap(), 0.25);
    }

    #[test]
    fn inexact_ratio_has_no_extra_step() {
        let mut traj = Trajectory::new();
        let m0 = scalar_state(0.1, 0.1, 0.01, 1.0);
        integrate(&m0, &unit_system(0.5), 0.3, 0.1, 1, &mut traj).unwrap();
        assert_eq!(traj.len(), 4);
    }

    #[test]
    fn zero_time_records_only_the_start() {
        let mut traj = Trajectory::new();
        let m0 = scalar_state(0.1, 0.1, 0.01, 1.0);
        let end = integrate(&m0, &unit_system(0.5), 0.0, 0.1, 1, &mut traj).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(end, m0);
    }

    #[test]
    fn divergence_is_reported() {
        // strongly damped Q mode with an unstable explicit step size
        let m0 = scalar_state(0.1, 0.1, 0.01, 1.0);
        let err = integrate(&m0, &unit_system(100.0), 1000.0, 1.0, 1, &mut ()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn invalid_step_rejected() {
        let m0 = scalar_state(0.1, 0.1, 0.01, 1.0);
        assert!(integrate(&m0, &unit_system(0.5), 1.0, 0.0, 1, &mut ()).is_err());
        assert!(integrate(&m0, &unit_system(0.5), -1.0, 0.1, 1, &mut ()).is_err());
    }

    fn constant_trajectory(values: impl Fn(usize) -> f64, len: usize) -> Vec<(f64, MacroState<f64>)> {
        (0..len)
            .map(|k| (k as f64, scalar_state(values(k), 0.0, 0.0, 1.0)))
            .collect()
    }

    #[test]
    fn regime_labels() {
        assert_eq!(classify_regime(&constant_trajectory(|_| 0.0, 200)).unwrap(), Regime::NotLearning);
        assert_eq!(classify_regime(&constant_trajectory(|_| 0.8, 200)).unwrap(), Regime::Converged);
        let osc = constant_trajectory(|k| 0.6 + 0.2 * (k as f64 * 0.3).sin(), 200);
        assert_eq!(classify_regime(&osc).unwrap(), Regime::Oscillating);
        let collapse = constant_trajectory(|k| if k < 50 { 0.9 } else { 0.3 }, 200);
        assert_eq!(classify_regime(&collapse).unwrap(), Regime::Collapsed);
    }

    #[test]
    fn short_trajectory_rejected() {
        assert!(matches!(
            classify_regime(&constant_trajectory(|_| 0.5, 99)),
            Err(Error::TrajectoryTooShort { len: 99, min: 100 })
        ));
    }
}
