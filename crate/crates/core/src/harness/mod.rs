//! Experiment harness: configuration, runs, and output files.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod plot;
pub mod real_data;

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::format_csv_matrix;
use crate::gan::{drift_check, GanState, Regularization};
use crate::model::{realize_macro_state, MacroState, SpikedModel, Trajectory};
use crate::ode::classify_regime;
use crate::rng::{stream, streams, RNG_ALGORITHM};
use crate::{Error, Result};

pub use config::{ExperimentConfig, ExperimentKind, RawConfig};
pub use manifest::{OutputDir, RunManifest};

use experiments::{min_diag, mean_std};
use plot::{emit_feature_grid, emit_plot, PlotStyle, Series};

/// Environment variable capping the number of seeds run in parallel.
pub const THREADS_ENV: &str = "SUBSPACE_LAB_THREADS";

/// Trajectory as CSV: header `t,P_1_1,...`, one recorded state per row.
pub fn trajectory_csv(traj: &Trajectory<f64>) -> Result<String> {
    let first = &traj.points.first().ok_or(Error::Empty("trajectory"))?.1;
    let mut out = String::from("t,");
    out.push_str(&first.column_names().join(","));
    out.push('\n');
    for (t, m) in &traj.points {
        out.push_str(&t.to_string());
        for v in m.flatten() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

fn pairs_csv<X: ToString>(header: &str, rows: &[(X, f64)]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in rows {
        out.push_str(&format!("{},{}\n", x.to_string(), y));
    }
    out
}

fn basis_csv(basis: &DMatrix<f64>) -> String {
    let header: Vec<String> = (1..=basis.ncols()).map(|j| format!("b_{j}")).collect();
    format_csv_matrix(basis, Some(&header))
}

/// `|P_ii|` curves of a trajectory.
fn diagonal_series(traj: &Trajectory<f64>, prefix: &str) -> Vec<Series> {
    let Some((_, first)) = traj.points.first() else {
        return Vec::new();
    };
    let k = first.p.nrows().min(first.p.ncols());
    (0..k)
        .map(|i| {
            Series::new(
                format!("{prefix}P_{0}{0}", i + 1),
                traj.points.iter().map(|(t, m)| (*t, m.p[(i, i)].abs())).collect(),
            )
        })
        .collect()
}

fn style(title: &str, x_label: &str, y_label: &str) -> PlotStyle {
    PlotStyle {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        ..PlotStyle::default()
    }
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| Error::Config {
            key: THREADS_ENV.into(),
            reason: format!("`{v}` is not a positive integer"),
        })?;
        builder = builder.num_threads(threads);
    }
    builder.build().map_err(|e| Error::Config {
        key: THREADS_ENV.into(),
        reason: e.to_string(),
    })
}

/// Runs one experiment and writes its outputs and manifest under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    let pool = thread_pool()?;
    let mut dir = OutputDir::create(out)?;
    let mut manifest = RunManifest::new();
    manifest.push("experiment", cfg.kind);
    manifest.push("version", concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")));
    manifest.push("rng", RNG_ALGORITHM);
    manifest.push(
        "seeds",
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    manifest.push("threads", pool.current_num_threads());
    for (k, v) in cfg.echo() {
        manifest.push(format!("config.{k}"), v);
    }
    pool.install(|| match cfg.kind {
        ExperimentKind::Ode => run_ode(cfg, &mut dir, &mut manifest),
        ExperimentKind::Gan => run_gan(cfg, &mut dir, &mut manifest),
        ExperimentKind::Oja | ExperimentKind::Grouse => run_baseline(cfg, &mut dir, &mut manifest),
        ExperimentKind::Compare => run_compare(cfg, &mut dir, &mut manifest),
        ExperimentKind::Offdiag => run_offdiag(cfg, &mut dir, &mut manifest),
        ExperimentKind::RealData => run_real_data(cfg, &mut dir, &mut manifest),
        ExperimentKind::Uplift => run_uplift(cfg, &mut dir, &mut manifest),
    })?;
    manifest.push_duration(started.elapsed());
    dir.finish(manifest.clone())?;
    Ok(manifest)
}

fn run_ode(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    if cfg.p != cfg.d || cfg.q != cfg.d {
        log::warn!(
            "rectangular ranks (d = {}, p = {}, q = {}); the limit is derived for d = p = q, uplift first for a faithful prediction",
            cfg.d,
            cfg.p,
            cfg.q
        );
    }
    let m0 = experiments::initial_state(cfg, cfg.q)?;
    let traj = experiments::ode_trajectory(cfg, &m0)?;
    dir.write("trajectory.csv", trajectory_csv(&traj)?.as_bytes())?;
    dir.write(
        "diagonals.svg",
        emit_plot(&diagonal_series(&traj, ""), &style("ODE overlaps", "t", "|P_ii|"))?.as_bytes(),
    )?;
    if let Ok(regime) = classify_regime(&traj.points) {
        manifest.push("result.regime", regime);
    }
    if let Some((_, last)) = traj.last() {
        manifest.push("result.final_min_diag_p", min_diag(last));
    }
    Ok(())
}

fn run_gan(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let runs: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&s| experiments::empirical_run(cfg, cfg.n, cfg.q, s))
        .collect::<Result<_>>()?;
    let m0 = experiments::initial_state(cfg, cfg.q)?;
    let mut ode_cfg = cfg.clone();
    ode_cfg.dt = ode_cfg.dt.min(cfg.record_every);
    let ode = experiments::ode_trajectory(&ode_cfg, &m0).ok();
    let mut series = Vec::new();
    for run in &runs {
        let s = run.seed;
        dir.write(&format!("trajectory_seed{s}.csv"), trajectory_csv(&run.trajectory)?.as_bytes())?;
        dir.write(&format!("generator_seed{s}.csv"), basis_csv(&run.state.generator).as_bytes())?;
        dir.write(&format!("discriminator_seed{s}.csv"), basis_csv(&run.state.discriminator).as_bytes())?;
        if let Some((_, last)) = run.trajectory.last() {
            manifest.push(format!("result.seed{s}.final_min_diag_p"), min_diag(last));
        }
        series.extend(diagonal_series(&run.trajectory, &format!("seed {s} ")));
    }
    if let Some(ode) = &ode {
        dir.write("ode.csv", trajectory_csv(ode)?.as_bytes())?;
        series.extend(diagonal_series(ode, "ODE "));
    }
    dir.write("diagonals.svg", emit_plot(&series, &style("GAN training", "t", "|P_ii|"))?.as_bytes())?;

    if cfg.lambda == Regularization::Infinite {
        let seed = cfg.seeds[0];
        let target = experiments::initial_state(cfg, cfg.q)?;
        let micro = realize_macro_state(&target, cfg.n, &mut stream(seed, streams::INIT))?;
        let model = SpikedModel::from_covariance(
            micro.true_basis.clone(),
            &nalgebra::DVector::from_vec(cfg.signal_cov.clone()),
            cfg.eta_t,
        )?;
        let report = drift_check(
            &GanState::from_micro(&micro),
            &model,
            &experiments::gan_config(cfg, cfg.n, cfg.q),
            cfg.mc_samples,
            &mut stream(seed, streams::MONTE_CARLO),
        )?;
        manifest.push("result.drift_max_standardized_error", report.max_standardized_error());
        manifest.push("result.drift_mc_samples", report.mc_samples);
    }
    Ok(())
}

fn run_baseline(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let runs: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&s| experiments::baseline_run(cfg, s))
        .collect::<Result<_>>()?;
    let mut series = Vec::new();
    for run in &runs {
        let s = run.seed;
        dir.write(&format!("distance_seed{s}.csv"), pairs_csv("t,distance", &run.curve).as_bytes())?;
        dir.write(&format!("basis_seed{s}.csv"), basis_csv(&run.basis).as_bytes())?;
        if let Some(&(_, d)) = run.curve.last() {
            manifest.push(format!("result.seed{s}.final_distance"), d);
        }
        series.push(Series::new(format!("seed {s}"), run.curve.clone()));
    }
    let title = format!("{} on a spiked stream", cfg.kind);
    dir.write("distance.svg", emit_plot(&series, &style(&title, "t", "Grassmann distance"))?.as_bytes())?;
    Ok(())
}

fn run_compare(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let report = experiments::compare(cfg)?;
    let mut table = String::from("n,mean,std\n");
    let mut per_seed = String::from("n,seed,deviation\n");
    for row in &report.rows {
        table.push_str(&format!("{},{},{}\n", row.n, row.mean, row.std));
        for (s, d) in &row.per_seed {
            per_seed.push_str(&format!("{},{},{}\n", row.n, s, d));
        }
    }
    dir.write("deviation.csv", table.as_bytes())?;
    dir.write("deviation_per_seed.csv", per_seed.as_bytes())?;
    dir.write("ode.csv", trajectory_csv(&report.ode)?.as_bytes())?;
    let mut series = diagonal_series(&report.ode, "ODE ");
    for run in &report.runs {
        dir.write(
            &format!("trajectory_n{}_seed{}.csv", run.n, run.seed),
            trajectory_csv(&run.trajectory)?.as_bytes(),
        )?;
        if run.seed == cfg.seeds[0] {
            series.extend(diagonal_series(&run.trajectory, &format!("n={} ", run.n)));
        }
    }
    dir.write("overlay.svg", emit_plot(&series, &style("SGD against the ODE", "t", "|P_ii|"))?.as_bytes())?;
    let scaling = Series::new("mean sup deviation", report.rows.iter().map(|r| (r.n as f64, r.mean)).collect());
    let mut log_style = style("Deviation from the ODE", "n", "sup_t |M - M_ode|");
    log_style.log_x = true;
    log_style.log_y = true;
    dir.write("deviation.svg", emit_plot(&[scaling], &log_style)?.as_bytes())?;
    manifest.push("result.slope", report.slope);
    manifest.push("result.strictly_decreasing", report.strictly_decreasing());
    Ok(())
}

fn run_offdiag(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let report = experiments::offdiag_study(cfg)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
    let mut table = String::from(
        "init,multi_steady,single_steady,gap,multi_time,single_time,multi_empirical,single_empirical\n",
    );
    for r in &report.rows {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.init,
            r.multi_steady,
            r.single_steady,
            r.gap(),
            opt(r.multi_time),
            opt(r.single_time),
            opt(r.multi_empirical),
            opt(r.single_empirical)
        ));
    }
    dir.write("offdiag.csv", table.as_bytes())?;
    let mut series = Vec::new();
    for (i, (init, multi, single)) in report.trajectories.iter().enumerate() {
        dir.write(&format!("multi_{i}.csv"), trajectory_csv(multi)?.as_bytes())?;
        dir.write(&format!("single_{i}.csv"), trajectory_csv(single)?.as_bytes())?;
        let min_curve = |t: &Trajectory<f64>| t.points.iter().map(|(t, m)| (*t, min_diag(m))).collect();
        series.push(Series::new(format!("multi {init}"), min_curve(multi)));
        series.push(Series::new(format!("single {init}"), min_curve(single)));
    }
    dir.write(
        "min_diagonal.svg",
        emit_plot(&series, &style("Multi- against single-feature discriminator", "t", "min |P_ii|"))?.as_bytes(),
    )?;
    let gaps: Vec<f64> = report.rows.iter().map(|r| r.gap()).collect();
    manifest.push("result.min_gap", gaps.iter().copied().fold(f64::INFINITY, f64::min));
    Ok(())
}

fn run_real_data(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let reports: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&s| real_data::real_data(cfg, s))
        .collect::<Result<_>>()?;
    let mut finals: Vec<(real_data::Learner, Vec<f64>)> =
        real_data::Learner::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for rep in &reports {
        let s = rep.seed;
        dir.write(&format!("basis_pca_seed{s}.csv"), basis_csv(&rep.reference).as_bytes())?;
        let mut series = Vec::new();
        for run in &rep.runs {
            let name = run.learner.as_str();
            dir.write(&format!("distance_{name}_seed{s}.csv"), pairs_csv("samples,distance", &run.curve).as_bytes())?;
            dir.write(&format!("basis_{name}_seed{s}.csv"), basis_csv(&run.basis).as_bytes())?;
            if let Some((rows, cols)) = rep.image_shape {
                let grid = emit_feature_grid(&run.basis, rows, cols, 8)?;
                dir.write(&format!("features_{name}_seed{s}.svg"), grid.as_bytes())?;
            }
            manifest.push(format!("result.seed{s}.{name}.final_distance"), run.final_distance());
            if let Some(entry) = finals.iter_mut().find(|(l, _)| *l == run.learner) {
                entry.1.push(run.final_distance());
            }
            let points = run.curve.iter().map(|&(k, d)| (k as f64, d)).collect();
            series.push(Series::new(name, points));
        }
        dir.write(
            &format!("distance_seed{s}.svg"),
            emit_plot(&series, &style("Distance to the principal subspace", "samples", "Grassmann distance"))?
                .as_bytes(),
        )?;
    }
    for (l, values) in finals {
        let (mean, std) = mean_std(&values);
        manifest.push(format!("result.{}.mean_final_distance", l.as_str()), mean);
        manifest.push(format!("result.{}.std_final_distance", l.as_str()), std);
    }
    Ok(())
}

fn run_uplift(cfg: &ExperimentConfig, dir: &mut OutputDir, manifest: &mut RunManifest) -> Result<()> {
    let report = experiments::uplift_demo(cfg)?;
    dir.write("uplifted.csv", trajectory_csv(&report.uplifted)?.as_bytes())?;
    dir.write("plain.csv", trajectory_csv(&report.plain)?.as_bytes())?;
    let lead: Trajectory<f64> = Trajectory {
        points: report
            .uplifted
            .points
            .iter()
            .map(|(t, m)| (*t, m.leading_block(cfg.d)))
            .collect::<Vec<(f64, MacroState<f64>)>>(),
    };
    dir.write("leading_block.csv", trajectory_csv(&lead)?.as_bytes())?;
    let mut series = diagonal_series(&lead, "uplifted ");
    series.extend(diagonal_series(&report.plain, "plain "));
    dir.write("diagonals.svg", emit_plot(&series, &style("Uplifted against plain", "t", "|P_ii|"))?.as_bytes())?;
    manifest.push("result.max_block_deviation", report.max_block_deviation);
    manifest.push("result.min_eigenvalue", report.min_eigenvalue);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_csv_round_trips() {
        let mut traj = Trajectory::new();
        traj.points.push((0.0, MacroState::diagonal(2, 0.1)));
        traj.points.push((0.5, MacroState::diagonal(2, 0.25)));
        let text = trajectory_csv(&traj).unwrap();
        assert!(text.starts_with("t,P_1_1,P_1_2,P_2_1,P_2_2,Q_1_1,"));
        let parsed = crate::data::parse_csv_matrix::<f64>(&text).unwrap().to_rows();
        assert_eq!(parsed.shape(), (2, 1 + 5 * 4));
        assert_eq!(parsed[(1, 0)], 0.5);
        assert_eq!(parsed[(1, 1)], 0.25);
        assert!(trajectory_csv(&Trajectory::new()).is_err());
    }

    #[test]
    fn ode_run_writes_manifest_and_files() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_raw(ExperimentKind::Ode, &RawConfig::parse("t_end = 2").unwrap()).unwrap();
        let m = run(&cfg, tmp.path()).unwrap();
        assert!(m.entries.iter().any(|(k, _)| k == "rng"));
        let files = manifest::verify_manifest(tmp.path()).unwrap();
        assert_eq!(files, vec!["trajectory.csv", "diagonals.svg"]);
    }
}
