//! Subspace learning on a fixed dataset, scored against its principal
//! subspace.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::baselines::{grouse_step, oja_step, BaselineState};
use crate::data::{center, load_csv_matrix, load_idx_images, pca, DatasetMatrix};
use crate::gan::{sgd_step, sgd_step_single_column, GanConfig, GanState};
use crate::geometry::{grassmann_distance, orthonormalize};
use crate::harness::config::{DatasetFormat, ExperimentConfig};
use crate::model::{scaled_random_init, SpikedModel};
use crate::rng::{gaussian_matrix, stream, streams, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Learner {
    GanMulti,
    GanSingle,
    Oja,
    Grouse,
}

impl Learner {
    pub const ALL: [Learner; 4] = [Learner::GanMulti, Learner::GanSingle, Learner::Oja, Learner::Grouse];

    pub fn as_str(self) -> &'static str {
        match self {
            Learner::GanMulti => "gan_multi",
            Learner::GanSingle => "gan_single",
            Learner::Oja => "oja",
            Learner::Grouse => "grouse",
        }
    }

    pub fn epochs(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Learner::GanMulti => cfg.epochs_multi,
            Learner::GanSingle => cfg.epochs_single,
            Learner::Oja | Learner::Grouse => cfg.epochs_baseline,
        }
    }
}

/// Loads the configured dataset, or draws exact rank-`k` samples
/// `y = U c` with `c ~ N(0, Lambda)` when the format is synthetic.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetMatrix<f64>> {
    match cfg.dataset_format {
        DatasetFormat::Idx => load_idx_images(dataset_path(cfg)?),
        DatasetFormat::Csv => load_csv_matrix(dataset_path(cfg)?),
        DatasetFormat::Synthetic => {
            if cfg.signal_cov.len() != cfg.k {
                return Err(Error::Config {
                    key: "d".into(),
                    reason: format!("synthetic data needs d = k = {}", cfg.k),
                });
            }
            let mut rng = stream(seed, streams::MONTE_CARLO);
            let u = orthonormalize(&gaussian_matrix(cfg.n, cfg.k, &mut rng))?;
            let model = SpikedModel::from_covariance(u, &DVector::from_vec(cfg.signal_cov.clone()), 0.0)?;
            let mut data = DMatrix::zeros(cfg.n, cfg.synthetic_samples);
            for mut col in data.column_iter_mut() {
                col.copy_from(&model.sample(&mut rng).0);
            }
            Ok(DatasetMatrix::from_columns(data))
        }
    }
}

fn dataset_path(cfg: &ExperimentConfig) -> Result<&std::path::Path> {
    cfg.dataset.as_deref().ok_or_else(|| Error::Config {
        key: "dataset".into(),
        reason: "required for idx and csv formats".into(),
    })
}

/// `(samples seen, Grassmann distance)` curve and final basis of one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerRun {
    pub learner: Learner,
    pub curve: Vec<(usize, f64)>,
    /// `n x k` orthonormal basis of the learned subspace.
    pub basis: DMatrix<f64>,
    /// Generator columns trained by the single-feature schedule, in order.
    pub switches: Vec<(usize, usize)>,
}

impl LearnerRun {
    pub fn final_distance(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |&(_, d)| d)
    }
}

#[derive(Debug, Clone)]
pub struct RealDataReport {
    pub seed: u64,
    pub reference: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub image_shape: Option<(usize, usize)>,
    pub runs: Vec<LearnerRun>,
}

impl RealDataReport {
    pub fn run(&self, learner: Learner) -> Option<&LearnerRun> {
        self.runs.iter().find(|r| r.learner == learner)
    }
}

/// Sample order for each epoch, one shuffle per epoch from the seed.
fn epoch_orders(samples: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, streams::SHUFFLE);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..samples).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Left singular vectors of `v`.
fn column_space(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = v.ncols();
    let svd = v.clone().svd(true, false);
    let u = svd.u.ok_or(Error::RankDeficient {
        smallest: 0.0,
        largest: 0.0,
    })?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Ok(DMatrix::from_fn(v.nrows(), k, |r, c| u[(r, order[c])]))
}

struct Stepper<'a> {
    learner: Learner,
    cfg: &'a ExperimentConfig,
    gan_cfg: GanConfig<f64>,
    gan: Option<GanState<f64>>,
    baseline: Option<BaselineState<f64>>,
    fake_rng: Stream,
    y_fake: DVector<f64>,
    c_fake: DVector<f64>,
    column: usize,
    window_start: Option<f64>,
    window_sum: f64,
    since_switch: usize,
    switches: Vec<(usize, usize)>,
}

impl Stepper<'_> {
    fn step(&mut self, y: &DVector<f64>, seen: usize) -> Result<()> {
        if let Some(st) = self.gan.as_mut() {
            crate::model::spiked_sample_into(
                &st.generator,
                &self.gan_cfg.gen_cov_sqrt,
                self.gan_cfg.gen_noise,
                &mut self.y_fake,
                &mut self.c_fake,
                &mut self.fake_rng,
            );
            if self.learner == Learner::GanSingle {
                sgd_step_single_column(st, y, &self.y_fake, &self.c_fake, &self.gan_cfg, self.column)?;
            } else {
                sgd_step(st, y, &self.y_fake, &self.c_fake, &self.gan_cfg)?;
            }
            if st.generator.iter().chain(st.discriminator.iter()).any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    step: st.step,
                    field: "generator",
                });
            }
            if self.learner == Learner::GanSingle {
                self.advance_schedule(seen);
            }
        }
        if let Some(st) = self.baseline.as_mut() {
            match self.learner {
                Learner::Grouse => grouse_step(st, y, self.cfg.grouse_tau)?,
                _ => oja_step(st, y, self.cfg.oja_tau)?,
            }
        }
        Ok(())
    }

    /// Moves to the next generator column once the window mean of
    /// `|w^T v_j| / |v_j|` changes by less than the tolerance between two
    /// consecutive windows.
    fn advance_schedule(&mut self, seen: usize) {
        let st = self.gan.as_ref().expect("gan learner");
        let v = st.generator.column(self.column);
        let norm = v.norm();
        if norm > 0.0 {
            self.window_sum += st.discriminator.column(0).dot(&v).abs() / norm;
        }
        self.since_switch += 1;
        if !self.since_switch.is_multiple_of(self.cfg.plateau_window) {
            return;
        }
        let mean = self.window_sum / self.cfg.plateau_window as f64;
        self.window_sum = 0.0;
        match self.window_start {
            Some(prev) if (mean - prev).abs() < self.cfg.plateau_tol => {
                self.column = (self.column + 1) % self.gan_cfg.p;
                self.switches.push((seen, self.column));
                self.window_start = None;
                self.since_switch = 0;
            }
            _ => self.window_start = Some(mean),
        }
    }

    fn basis(&self) -> Result<DMatrix<f64>> {
        match (&self.gan, &self.baseline) {
            (Some(g), _) => column_space(&g.generator),
            (None, Some(b)) => Ok(b.basis.clone()),
            (None, None) => unreachable!("stepper holds one learner"),
        }
    }
}

/// Trains one learner over the shuffled stream, scoring against
/// `reference` every `eval_every` samples and at the end.
pub fn run_learner(
    learner: Learner,
    cfg: &ExperimentConfig,
    samples: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    orders: &[Vec<usize>],
    seed: u64,
) -> Result<LearnerRun> {
    let (n, k) = (samples.nrows(), reference.ncols());
    let q = if learner == Learner::GanSingle { 1 } else { k };
    let gan_cfg = GanConfig {
        n,
        d: k,
        p: k,
        q,
        tau: cfg.tau,
        tau_tilde: cfg.tau_tilde,
        lambda: cfg.lambda,
        gen_noise: cfg.eta_g,
        gen_cov_sqrt: DVector::from_iterator(k, cfg.gen_cov.iter().map(|v| v.sqrt()).cycle().take(k)),
    };
    let mut init_rng = stream(seed, streams::INIT);
    let (gan, baseline) = match learner {
        Learner::GanMulti | Learner::GanSingle => {
            gan_cfg.validate()?;
            let v = scaled_random_init(n, k, 1.0, true, &mut init_rng)?;
            let w = scaled_random_init(n, q, 1.0, true, &mut init_rng)?;
            (Some(GanState::new(v, w)?), None)
        }
        Learner::Oja | Learner::Grouse => {
            (None, Some(BaselineState::from_matrix(&gaussian_matrix(n, k, &mut init_rng))?))
        }
    };
    let mut stepper = Stepper {
        learner,
        cfg,
        gan_cfg,
        gan,
        baseline,
        fake_rng: stream(seed, streams::FAKE_SAMPLES),
        y_fake: DVector::zeros(n),
        c_fake: DVector::zeros(k),
        column: 0,
        window_start: None,
        window_sum: 0.0,
        since_switch: 0,
        switches: Vec::new(),
    };
    let mut curve = vec![(0, grassmann_distance(reference, &stepper.basis()?)?)];
    let mut seen = 0;
    let mut y = DVector::zeros(n);
    for order in orders.iter().take(learner.epochs(cfg)) {
        for &i in order {
            y.copy_from(&samples.column(i));
            stepper.step(&y, seen)?;
            seen += 1;
            if seen % cfg.eval_every == 0 {
                curve.push((seen, grassmann_distance(reference, &stepper.basis()?)?));
            }
        }
    }
    if curve.last().map(|&(s, _)| s) != Some(seen) {
        curve.push((seen, grassmann_distance(reference, &stepper.basis()?)?));
    }
    Ok(LearnerRun {
        learner,
        curve,
        basis: stepper.basis()?,
        switches: stepper.switches,
    })
}

/// Loads the data, computes the principal-subspace reference and trains
/// every learner on the same shuffled stream.
pub fn real_data(cfg: &ExperimentConfig, seed: u64) -> Result<RealDataReport> {
    let wrap = |e: Error| match e {
        Error::Config { .. } | Error::Io { .. } | Error::Idx { .. } | Error::Csv { .. } => e,
        other => Error::Seed {
            seed,
            source: Box::new(other),
        },
    };
    let raw = load_dataset(cfg, seed).map_err(wrap)?;
    let image_shape = raw.image_shape();
    let centered = center(&raw);
    let pca = pca(&centered, cfg.k)?;
    let samples = if cfg.center_stream {
        centered.columns().clone()
    } else {
        raw.columns().clone()
    };
    let epochs = Learner::ALL.iter().map(|l| l.epochs(cfg)).max().unwrap_or(0);
    let orders = epoch_orders(samples.ncols(), epochs, seed);
    let runs = Learner::ALL
        .iter()
        .map(|&l| run_learner(l, cfg, &samples, &pca.basis, &orders, seed).map_err(wrap))
        .collect::<Result<Vec<_>>>()?;
    Ok(RealDataReport {
        seed,
        reference: pca.basis,
        eigenvalues: pca.eigenvalues,
        image_shape,
        runs,
    })
}
