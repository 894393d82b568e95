//! Experiment computations, independent of file output.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::baselines::{grouse_step, oja_step, BaselineState};
use crate::gan::{train, GanConfig, GanState};
use crate::geometry::{grassmann_distance, orthonormalize, uplift};
use crate::harness::config::{ExperimentConfig, ExperimentKind, InitPattern};
use crate::model::{psd_cholesky_upper, realize_macro_state, MacroState, SpikedModel, Trajectory};
use crate::ode::{integrate, OdeSystem};
use crate::rng::{gaussian_matrix, stream, streams};
use crate::{Error, Result};

/// Limiting ODE for ranks `(d, p)` taken from `cfg`.
pub fn ode_system(cfg: &ExperimentConfig) -> Result<OdeSystem<f64>> {
    OdeSystem::new(
        DVector::from_vec(cfg.signal_cov.clone()),
        DVector::from_vec(cfg.gen_cov.clone()),
        cfg.tau,
        cfg.tau_tilde,
        cfg.eta_t,
        cfg.eta_g,
    )
}

fn fill_block(rows: usize, cols: usize, init: f64, pattern: InitPattern) -> DMatrix<f64> {
    match pattern {
        InitPattern::Diagonal => DMatrix::from_fn(rows, cols, |i, j| if i == j { init } else { 0.0 }),
        InitPattern::Uniform => DMatrix::from_element(rows, cols, init),
    }
}

/// Initial overlaps with discriminator rank `q`.
///
/// `P_0`, `Q_0` come from explicit blocks when given (and shaped for `q`),
/// otherwise from `init` and the pattern; `S_0` defaults to `I`,
/// `R_0 = P_0^T Q_0` and `Z_0 = I`. Rejects targets whose Gram matrix is not
/// positive semidefinite.
pub fn initial_state(cfg: &ExperimentConfig, q: usize) -> Result<MacroState<f64>> {
    let (d, p) = (cfg.d, cfg.p);
    let block = |given: &Option<Vec<f64>>, rows: usize, cols: usize| match given {
        Some(v) if v.len() == rows * cols => DMatrix::from_row_slice(rows, cols, v),
        _ => fill_block(rows, cols, cfg.init, cfg.init_pattern),
    };
    let p0 = block(&cfg.init_p, d, p);
    let q0 = if q == cfg.q {
        block(&cfg.init_q, d, q)
    } else {
        fill_block(d, q, cfg.init, cfg.init_pattern)
    };
    let s0 = match &cfg.init_s {
        Some(v) => DMatrix::from_row_slice(p, p, v),
        None => DMatrix::identity(p, p),
    };
    let r0 = p0.tr_mul(&q0);
    let state = MacroState::new(p0, q0, r0, s0, DMatrix::identity(q, q))?;
    psd_cholesky_upper(&state.assemble()).map_err(|_| Error::Config {
        key: "init".into(),
        reason: "initial overlaps do not form a valid (positive semidefinite) state".into(),
    })?;
    Ok(state)
}

/// ODE trajectory from `m0` on the configured grid.
pub fn ode_trajectory(cfg: &ExperimentConfig, m0: &MacroState<f64>) -> Result<Trajectory<f64>> {
    let mut traj = Trajectory::new();
    integrate(m0, &ode_system(cfg)?, cfg.t_end, cfg.dt, cfg.record_ode_steps(), &mut traj)?;
    Ok(traj)
}

pub fn gan_config(cfg: &ExperimentConfig, n: usize, q: usize) -> GanConfig<f64> {
    GanConfig {
        n,
        d: cfg.d,
        p: cfg.p,
        q,
        tau: cfg.tau,
        tau_tilde: cfg.tau_tilde,
        lambda: cfg.lambda,
        gen_noise: cfg.eta_g,
        gen_cov_sqrt: DVector::from_iterator(cfg.p, cfg.gen_cov.iter().map(|v| v.sqrt())),
    }
}

/// Final state and trajectory of one SGD run.
#[derive(Debug, Clone)]
pub struct EmpiricalRun {
    pub seed: u64,
    pub n: usize,
    pub trajectory: Trajectory<f64>,
    pub state: GanState<f64>,
    pub true_basis: DMatrix<f64>,
}

/// SGD in dimension `n` from a microscopic state realizing
/// [`initial_state`] exactly, for `t_end * n` steps.
pub fn empirical_run(cfg: &ExperimentConfig, n: usize, q: usize, seed: u64) -> Result<EmpiricalRun> {
    let wrap = |e: Error| Error::Seed {
        seed,
        source: Box::new(e),
    };
    let target = initial_state(cfg, q)?;
    let micro = realize_macro_state(&target, n, &mut stream(seed, streams::INIT)).map_err(wrap)?;
    let model = SpikedModel::from_covariance(
        micro.true_basis.clone(),
        &DVector::from_vec(cfg.signal_cov.clone()),
        cfg.eta_t,
    )
    .map_err(wrap)?;
    let gcfg = gan_config(cfg, n, q);
    let mut state = GanState::from_micro(&micro);
    let mut trajectory = Trajectory::new();
    let steps = (cfg.t_end * n as f64).round() as u64;
    let mut rng = stream(seed, streams::TRUE_SAMPLES);
    train(&mut state, &model, &gcfg, steps, cfg.record_steps(n), &mut trajectory, &mut rng).map_err(wrap)?;
    Ok(EmpiricalRun {
        seed,
        n,
        trajectory,
        state,
        true_basis: micro.true_basis,
    })
}

/// `sup_t ||M_a(t) - M_b(t)||_F` over a shared time grid.
pub fn sup_deviation(a: &Trajectory<f64>, b: &Trajectory<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("trajectory grids", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut sup = 0.0f64;
    for ((ta, ma), (tb, mb)) in a.points.iter().zip(&b.points) {
        if (ta - tb).abs() > 1e-9 * ta.abs().max(1.0) {
            return Err(Error::param("trajectory grids", format!("times differ: {ta} vs {tb}")));
        }
        sup = sup.max(ma.distance(mb));
    }
    Ok(sup)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `(seed, deviation)`, sorted by seed.
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub slope: f64,
    pub ode: Trajectory<f64>,
    pub runs: Vec<EmpiricalRun>,
}

impl CompareReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean < w[0].mean)
    }
}

/// SGD against the ODE for every size and seed.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    for &n in &cfg.sizes {
        let steps = cfg.record_every * n as f64;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config {
                key: "record_every".into(),
                reason: format!("record_every * n must be an integer for n = {n}"),
            });
        }
    }
    let ratio = cfg.record_every / cfg.dt;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Config {
            key: "record_every".into(),
            reason: "must be a multiple of dt".into(),
        });
    }
    let m0 = initial_state(cfg, cfg.q)?;
    let ode = ode_trajectory(cfg, &m0)?;
    let jobs: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let runs: Vec<EmpiricalRun> = jobs
        .par_iter()
        .map(|&(n, seed)| empirical_run(cfg, n, cfg.q, seed))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let mut per_seed: Vec<(u64, f64)> = runs
            .iter()
            .filter(|r| r.n == n)
            .map(|r| Ok((r.seed, sup_deviation(&r.trajectory, &ode)?)))
            .collect::<Result<_>>()?;
        per_seed.sort_by_key(|(s, _)| *s);
        let devs: Vec<f64> = per_seed.iter().map(|(_, d)| *d).collect();
        let (mean, std) = mean_std(&devs);
        rows.push(CompareRow { n, mean, std, per_seed });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    Ok(CompareReport {
        slope: log_log_slope(&xs, &ys),
        rows,
        ode,
        runs,
    })
}

/// Smallest `|P_ii|` of a state.
pub fn min_diag(m: &MacroState<f64>) -> f64 {
    m.p_diagonal().into_iter().map(f64::abs).fold(f64::INFINITY, f64::min)
}

/// Mean of [`min_diag`] over the last 20% of a trajectory.
pub fn steady_min_diag(traj: &Trajectory<f64>) -> f64 {
    let tail = &traj.points[traj.len() - (traj.len() / 5).max(1)..];
    tail.iter().map(|(_, m)| min_diag(m)).sum::<f64>() / tail.len() as f64
}

/// First recorded time at which every `|P_ii|` reaches `threshold`.
pub fn time_to_threshold(traj: &Trajectory<f64>, threshold: f64) -> Option<f64> {
    traj.points.iter().find(|(_, m)| min_diag(m) >= threshold).map(|(t, _)| *t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffdiagRow {
    pub init: f64,
    pub multi_steady: f64,
    pub single_steady: f64,
    pub multi_time: Option<f64>,
    pub single_time: Option<f64>,
    /// Means over seeds of the empirical steady states, when requested.
    pub multi_empirical: Option<f64>,
    pub single_empirical: Option<f64>,
}

impl OffdiagRow {
    pub fn gap(&self) -> f64 {
        self.multi_steady - self.single_steady
    }
}

#[derive(Debug, Clone)]
pub struct OffdiagReport {
    pub rows: Vec<OffdiagRow>,
    /// `(init, multi, single)` ODE trajectories.
    pub trajectories: Vec<(f64, Trajectory<f64>, Trajectory<f64>)>,
}

/// Multi-feature (`q = d`) against single-feature (`q = 1`) learning for each
/// initialization scale, on the same time budget.
pub fn offdiag_study(cfg: &ExperimentConfig) -> Result<OffdiagReport> {
    let mut rows = Vec::new();
    let mut trajectories = Vec::new();
    for &init in &cfg.inits {
        let mut c = cfg.clone();
        c.init = init;
        c.init_p = None;
        c.init_q = None;
        let multi = ode_trajectory(&c, &initial_state(&c, c.d)?)?;
        let single = ode_trajectory(&c, &initial_state(&c, 1)?)?;
        let empirical = |q: usize| -> Result<Option<f64>> {
            if !cfg.offdiag_empirical {
                return Ok(None);
            }
            let steady: Vec<f64> = cfg
                .seeds
                .par_iter()
                .map(|&s| empirical_run(&c, cfg.n, q, s).map(|r| steady_min_diag(&r.trajectory)))
                .collect::<Result<_>>()?;
            Ok(Some(mean_std(&steady).0))
        };
        rows.push(OffdiagRow {
            init,
            multi_steady: steady_min_diag(&multi),
            single_steady: steady_min_diag(&single),
            multi_time: time_to_threshold(&multi, cfg.similarity_threshold),
            single_time: time_to_threshold(&single, cfg.similarity_threshold),
            multi_empirical: empirical(c.d)?,
            single_empirical: empirical(1)?,
        });
        trajectories.push((init, multi, single));
    }
    Ok(OffdiagReport { rows, trajectories })
}

#[derive(Debug, Clone)]
pub struct UpliftReport {
    pub plain: Trajectory<f64>,
    pub uplifted: Trajectory<f64>,
    /// Largest entrywise gap between the leading `d x d` blocks.
    pub max_block_deviation: f64,
    /// Smallest eigenvalue of the assembled uplifted Gram matrix over time.
    pub min_eigenvalue: f64,
}

/// Uplifts `U` and `W` to rank `p`, integrates the square ODE with
/// `Lambda` padded by zeros, and compares its leading block to the plain
/// `d = p = q` run.
///
/// The microscopic state places generator and discriminator columns on
/// coordinate directions matched to the uplift padding, so a diagonal
/// initialization stays aligned with the padded basis.
pub fn uplift_demo(cfg: &ExperimentConfig) -> Result<UpliftReport> {
    let (d, p, q) = (cfg.d, cfg.p, cfg.q);
    if !(d <= q && q <= p) {
        return Err(Error::Config {
            key: "q".into(),
            reason: format!("uplift needs d <= q <= p, got d = {d}, q = {q}, p = {p}"),
        });
    }
    let n = cfg.n;
    if n < 3 * p + q {
        return Err(Error::Config {
            key: "n".into(),
            reason: format!("uplift demo needs n >= 3p + q = {}", 3 * p + q),
        });
    }
    let init = cfg.init;
    if !(init.abs() <= 1.0) {
        return Err(Error::Config {
            key: "init".into(),
            reason: "uplift demo needs |init| <= 1".into(),
        });
    }
    let rest = (1.0 - init * init).sqrt();
    let sigma = |i: usize| if i < d { i } else { n - 1 - (i - d) };
    let u = DMatrix::from_fn(n, d, |r, c| if r == c { 1.0 } else { 0.0 });
    let mut w = DMatrix::zeros(n, q);
    for j in 0..q {
        w[(sigma(j), j)] += init;
        w[(p + j, j)] += rest;
    }
    let mut v = DMatrix::zeros(n, p);
    for i in 0..p {
        v[(sigma(i), i)] += init;
        v[(p + q + i, i)] += rest;
    }
    let u_bar = uplift(&u, p)?;
    let w_bar = uplift(&w, p)?;
    let m0 = MacroState {
        p: u_bar.tr_mul(&v),
        q: u_bar.tr_mul(&w_bar),
        r: v.tr_mul(&w_bar),
        s: v.tr_mul(&v),
        z: w_bar.tr_mul(&w_bar),
    };
    let mut padded_signal = cfg.signal_cov.clone();
    padded_signal.resize(p, 0.0);
    let sys = OdeSystem::new(
        DVector::from_vec(padded_signal),
        DVector::from_vec(cfg.gen_cov.clone()),
        cfg.tau,
        cfg.tau_tilde,
        cfg.eta_t,
        cfg.eta_g,
    )?;
    let mut uplifted = Trajectory::new();
    integrate(&m0, &sys, cfg.t_end, cfg.dt, cfg.record_ode_steps(), &mut uplifted)?;

    let mut plain_cfg = cfg.clone();
    plain_cfg.p = d;
    plain_cfg.q = d;
    plain_cfg.gen_cov.truncate(d);
    plain_cfg.init_pattern = InitPattern::Diagonal;
    plain_cfg.init_p = None;
    plain_cfg.init_q = None;
    plain_cfg.init_s = None;
    let plain_m0 = MacroState::diagonal(d, init);
    let plain = ode_trajectory(&plain_cfg, &plain_m0)?;

    let mut max_block_deviation = 0.0f64;
    for ((_, a), (_, b)) in uplifted.points.iter().zip(&plain.points) {
        let lead = a.leading_block(d);
        for (x, y) in [(&lead.p, &b.p), (&lead.q, &b.q), (&lead.r, &b.r), (&lead.s, &b.s)] {
            max_block_deviation = max_block_deviation.max((x - y).amax());
        }
    }
    let min_eigenvalue = uplifted
        .points
        .iter()
        .map(|(_, m)| SymmetricEigen::new(m.assemble()).eigenvalues.min())
        .fold(f64::INFINITY, f64::min);
    Ok(UpliftReport {
        plain,
        uplifted,
        max_block_deviation,
        min_eigenvalue,
    })
}

/// Grassmann distance curve `(t, distance)` and final basis of Oja or GROUSE
/// on a spiked stream.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub seed: u64,
    pub curve: Vec<(f64, f64)>,
    pub basis: DMatrix<f64>,
}

pub fn baseline_run(cfg: &ExperimentConfig, seed: u64) -> Result<BaselineRun> {
    let wrap = |e: Error| Error::Seed {
        seed,
        source: Box::new(e),
    };
    let n = cfg.n;
    let mut init_rng = stream(seed, streams::INIT);
    let u = orthonormalize(&gaussian_matrix(n, cfg.d, &mut init_rng)).map_err(wrap)?;
    let model = SpikedModel::from_covariance(u.clone(), &DVector::from_vec(cfg.signal_cov.clone()), cfg.eta_t)
        .map_err(wrap)?;
    let mut state = BaselineState::from_matrix(&gaussian_matrix(n, cfg.d, &mut init_rng)).map_err(wrap)?;
    let steps = (cfg.t_end * n as f64).round() as u64;
    let every = cfg.record_steps(n);
    let tau = cfg.baseline_tau();
    let mut rng = stream(seed, streams::TRUE_SAMPLES);
    let mut curve = vec![(0.0, grassmann_distance(&u, &state.basis)?)];
    let mut y = DVector::zeros(n);
    let mut c = DVector::zeros(cfg.d);
    for k in 1..=steps {
        model.sample_into(&mut y, &mut c, &mut rng);
        match cfg.kind {
            ExperimentKind::Grouse => grouse_step(&mut state, &y, tau),
            _ => oja_step(&mut state, &y, tau),
        }
        .map_err(wrap)?;
        if k % every == 0 || k == steps {
            curve.push((k as f64 / n as f64, grassmann_distance(&u, &state.basis)?));
        }
    }
    Ok(BaselineRun {
        seed,
        curve,
        basis: state.basis,
    })
}
