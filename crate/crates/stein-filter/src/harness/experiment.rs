//! The experiment driver: simulates ground truth, runs every configured
//! backend on the same observations over `M` independent runs, computes the
//! exact reference posterior, and aggregates metric curves.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::filter::{
    sir_step, stein_sequential_step, stein_window_step, FilterState,
};
use crate::metrics::{self, MetricsError, RunRecord};
use crate::model::{ModelError, StateSpaceModel};
use crate::reference::{benes_posterior, BenesParams, KalmanBucy, KalmanState, ReferenceError};
use crate::rng::{lane_filter, lane_view, substream, LANE_SIMULATION};

use super::config::{ConfigError, ExperimentConfig, FilterSpec, ModelConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("reference error: {0}")]
    Reference(#[from] ReferenceError),
    #[error("metrics error: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("figure {figure} needs series {series}, which no configured backend produced")]
    MissingSeries { figure: String, series: String },
    #[error("figure {0} needs density snapshots, but none were configured")]
    NoSnapshots(String),
}

/// Outcome of one backend within one run.
#[derive(Clone, Debug)]
pub struct BackendRun {
    pub series: String,
    pub outcome: Result<RunRecord, String>,
    /// KDE on the output grid at each snapshot step (successful runs only).
    pub kde: Vec<Vec<f64>>,
    /// L1 distance of the KDE to the exact density per snapshot.
    pub l1: Vec<f64>,
}

/// All outputs of one Monte Carlo run.
#[derive(Clone, Debug)]
pub struct SingleRun {
    pub run_index: usize,
    pub reference_means: Vec<DVector<f64>>,
    pub reference_covariances: Vec<DMatrix<f64>>,
    /// Exact posterior density on the grid at each snapshot step.
    pub exact_densities: Vec<Vec<f64>>,
    pub backends: Vec<BackendRun>,
}

/// One row of `summary.csv` / `timings.csv`.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub backend: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

/// A density snapshot averaged over runs: `series` holds `(name, density)`
/// with the exact reference last.
#[derive(Clone, Debug)]
pub struct DensitySnapshot {
    pub time: f64,
    pub step: usize,
    pub grid: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
}

/// Aggregated results of one experiment.
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub series: Vec<String>,
    pub steps: usize,
    pub dt: f64,
    pub snapshot_steps: Vec<usize>,
    pub runs: Vec<SingleRun>,
    /// Per-series mean-square-error curves over successful runs.
    pub mse_mean: Vec<(String, Vec<f64>)>,
    pub mse_cov: Vec<(String, Vec<f64>)>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<SummaryRow>,
    pub densities: Vec<DensitySnapshot>,
    pub failed_runs: usize,
}

impl ExperimentResults {
    pub fn mse_mean_for(&self, series: &str) -> Option<&[f64]> {
        self.mse_mean
            .iter()
            .find(|(s, _)| s == series)
            .map(|(_, v)| v.as_slice())
    }

    pub fn mse_cov_for(&self, series: &str) -> Option<&[f64]> {
        self.mse_cov
            .iter()
            .find(|(s, _)| s == series)
            .map(|(_, v)| v.as_slice())
    }

    pub fn summary_value(&self, backend: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.backend == backend && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Exact per-step posterior (mean, variance) plus snapshot densities for one
/// observation path.
struct ReferencePath {
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    densities: Vec<Vec<f64>>,
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn reference_path(
    config: &ExperimentConfig,
    observations: &[Vec<f64>],
    snapshot_steps: &[usize],
    grid: &[f64],
) -> Result<ReferencePath, HarnessError> {
    let dt = config.model.dt();
    let increments: Vec<f64> = observations.iter().map(|z| z[0] * dt).collect();
    let mut means = Vec::with_capacity(observations.len());
    let mut covariances = Vec::with_capacity(observations.len());
    let mut densities = Vec::with_capacity(snapshot_steps.len());

    match config.model {
        ModelConfig::LinearGaussian {
            drift,
            diffusion,
            obs_gain,
            obs_diffusion,
            init_mean,
            init_var,
            ..
        } => {
            let kb = KalmanBucy {
                drift,
                obs_gain,
                process_noise_var: diffusion * diffusion,
                obs_noise_var: obs_diffusion * obs_diffusion,
            };
            let mut state = KalmanState {
                mean: init_mean,
                variance: init_var,
                time: 0.0,
            };
            for (t, dy) in increments.iter().enumerate() {
                state = kb.step(state, *dy, dt)?;
                means.push(DVector::from_element(1, state.mean));
                covariances.push(DMatrix::from_element(1, 1, state.variance));
                if snapshot_steps.contains(&(t + 1)) {
                    densities.push(
                        grid.iter()
                            .map(|&x| normal_pdf(x, state.mean, state.variance))
                            .collect(),
                    );
                }
            }
        }
        ModelConfig::Benes {
            mu,
            sigma_b,
            h1,
            h2,
            x0,
            ..
        } => {
            let params = BenesParams {
                mu,
                sigma_b,
                h1,
                h2,
                x0,
            };
            for t in 0..increments.len() {
                let post = benes_posterior(&increments[..=t], dt, &params)?;
                means.push(DVector::from_element(1, post.mean()));
                covariances.push(DMatrix::from_element(1, 1, post.variance()));
                if snapshot_steps.contains(&(t + 1)) {
                    densities.push(grid.iter().map(|&x| post.mixture_density(x)).collect());
                }
            }
        }
    }
    Ok(ReferencePath {
        means,
        covariances,
        densities,
    })
}

fn backend_state(spec: &FilterSpec) -> FilterState {
    match spec {
        FilterSpec::Sir { n, ess_threshold } => FilterState::new_sir(*n, *ess_threshold),
        FilterSpec::SteinSeq { n, .. } => FilterState::new_stein_sequential(*n),
        FilterSpec::SteinWindow { n, window, .. } => FilterState::new_stein_window(*n, *window),
    }
    .expect("validated config")
}

fn advance<R: Rng + ?Sized>(
    spec: &FilterSpec,
    state: FilterState,
    model: &StateSpaceModel,
    z: &[f64],
    rng: &mut R,
) -> Result<FilterState, crate::filter::FilterError> {
    match spec {
        FilterSpec::Sir { .. } => sir_step(state, model, z, rng),
        FilterSpec::SteinSeq { svgd, .. } => {
            stein_sequential_step(state, model, z, &svgd.to_config(), rng)
        }
        FilterSpec::SteinWindow { svgd, .. } => {
            stein_window_step(state, model, z, &svgd.to_config(), rng)
        }
    }
}

/// Executes run `m` of the experiment. Outputs depend only on
/// `config` and `base_seed + m`, never on other runs.
pub fn run_single(
    config: &ExperimentConfig,
    model: &StateSpaceModel,
    m: usize,
) -> Result<SingleRun, HarnessError> {
    let steps = config.steps();
    let dt = config.model.dt();
    let run_seed = config.base_seed.wrapping_add(m as u64);
    let grid = config.output.grid.points_vec();
    let snapshot_steps = snapshot_steps(config);

    let mut sim_rng = substream(run_seed, LANE_SIMULATION, 0);
    let (_states, observations) = model.simulate(steps, &mut sim_rng)?;

    let reference = reference_path(config, &observations, &snapshot_steps, &grid)?;
    let series = config.series_names();

    let mut backends = Vec::with_capacity(config.filters.len());
    for (b, spec) in config.filters.iter().enumerate() {
        let mut state = backend_state(spec);
        let mut means = Vec::with_capacity(steps);
        let mut covariances = Vec::with_capacity(steps);
        let mut wall = Vec::with_capacity(steps);
        let mut ess: Vec<f64> = Vec::new();
        let mut kde_snaps: Vec<Vec<f64>> = Vec::new();
        let mut l1: Vec<f64> = Vec::new();
        let mut failure: Option<String> = None;

        for (t, z) in observations.iter().enumerate() {
            let step = t as u64 + 1;
            let mut step_rng = substream(run_seed, lane_filter(b), step);
            let started = Instant::now();
            state = match advance(spec, state, model, z, &mut step_rng) {
                Ok(s) => s,
                Err(e) => {
                    failure = Some(format!("step {}: {e}", t + 1));
                    break;
                }
            };
            wall.push(started.elapsed().as_secs_f64());

            let mut view_rng = substream(run_seed, lane_view(b), step);
            let ensemble = state
                .posterior_ensemble(&mut view_rng)
                .expect("initialized after step");
            let (mean, cov) = metrics::empirical_moments(&ensemble)?;
            means.push(mean);
            covariances.push(cov);
            if let Some(e) = state.ess() {
                ess.push(e);
            }
            if snapshot_steps.contains(&(t + 1)) {
                let snap_idx = kde_snaps.len();
                let density =
                    metrics::kde(&ensemble, &grid, config.output.kde_bandwidth)?;
                let dist = metrics::l1_density_distance(
                    &density,
                    &reference.densities[snap_idx],
                    &grid,
                )?;
                kde_snaps.push(density);
                l1.push(dist);
            }
        }

        let outcome = match failure {
            Some(msg) => Err(msg),
            None => Ok(RunRecord {
                backend: series[b].clone(),
                means,
                covariances,
                reference_means: reference.means.clone(),
                reference_covariances: reference.covariances.clone(),
                step_wall_secs: wall,
                ess: if ess.is_empty() { None } else { Some(ess) },
            }),
        };
        backends.push(BackendRun {
            series: series[b].clone(),
            outcome,
            kde: kde_snaps,
            l1,
        });
        let _ = dt;
    }

    Ok(SingleRun {
        run_index: m,
        reference_means: reference.means,
        reference_covariances: reference.covariances,
        exact_densities: reference.densities,
        backends,
    })
}

fn snapshot_steps(config: &ExperimentConfig) -> Vec<usize> {
    let dt = config.model.dt();
    let steps = config.steps();
    config
        .output
        .kde_times
        .iter()
        .map(|&t| ((t / dt).round() as usize).clamp(1, steps))
        .collect()
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the full experiment: `runs` independent Monte Carlo runs (in
/// parallel with the `parallel` feature), each simulating its own
/// truth/observation path and driving every configured backend on the same
/// observations. Deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults, HarnessError> {
    config.validate()?;
    let model = config.model.build()?;
    let series = config.series_names();
    let steps = config.steps();
    let dt = config.model.dt();
    let snapshots = snapshot_steps(config);

    let indices: Vec<usize> = (0..config.runs).collect();
    #[cfg(feature = "parallel")]
    let runs: Result<Vec<SingleRun>, HarnessError> = indices
        .par_iter()
        .map(|&m| run_single(config, &model, m))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let runs: Result<Vec<SingleRun>, HarnessError> = indices
        .iter()
        .map(|&m| run_single(config, &model, m))
        .collect();
    let runs = runs?;

    // Aggregate per-backend curves and summary rows over successful runs.
    let mut mse_mean = Vec::new();
    let mut mse_cov = Vec::new();
    let mut summary = Vec::new();
    let mut timings = Vec::new();
    let mut failed_runs = 0usize;

    for (b, name) in series.iter().enumerate() {
        let records: Vec<RunRecord> = runs
            .iter()
            .filter_map(|r| r.backends[b].outcome.as_ref().ok().cloned())
            .collect();
        let failures = runs.len() - records.len();
        failed_runs += failures;

        if !records.is_empty() {
            let (mu_curve, cov_curve) = metrics::mse_curves(&records)?;
            mse_mean.push((name.clone(), mu_curve));
            mse_cov.push((name.clone(), cov_curve));

            let per_run_mu: Vec<f64> = records
                .iter()
                .map(|r| {
                    r.means
                        .iter()
                        .zip(&r.reference_means)
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum::<f64>()
                        / steps as f64
                })
                .collect();
            let per_run_cov: Vec<f64> = records
                .iter()
                .map(|r| {
                    r.covariances
                        .iter()
                        .zip(&r.reference_covariances)
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum::<f64>()
                        / steps as f64
                })
                .collect();
            let (v, se) = mean_and_stderr(&per_run_mu);
            summary.push(SummaryRow {
                backend: name.clone(),
                metric: "mse_mean_time_avg".into(),
                value: v,
                stderr: se,
            });
            let (v, se) = mean_and_stderr(&per_run_cov);
            summary.push(SummaryRow {
                backend: name.clone(),
                metric: "mse_cov_time_avg".into(),
                value: v,
                stderr: se,
            });

            for (s, &step) in snapshots.iter().enumerate() {
                let l1s: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.backends[b].outcome.is_ok())
                    .map(|r| r.backends[b].l1[s])
                    .collect();
                let (v, se) = mean_and_stderr(&l1s);
                summary.push(SummaryRow {
                    backend: name.clone(),
                    metric: format!("l1_density_t{}", step as f64 * dt),
                    value: v,
                    stderr: se,
                });
            }

            let per_run_ms: Vec<f64> = records
                .iter()
                .map(|r| {
                    1e3 * r.step_wall_secs.iter().sum::<f64>()
                        / r.step_wall_secs.len().max(1) as f64
                })
                .collect();
            let (v, se) = mean_and_stderr(&per_run_ms);
            timings.push(SummaryRow {
                backend: name.clone(),
                metric: "wall_ms_per_step".into(),
                value: v,
                stderr: se,
            });
        }

        summary.push(SummaryRow {
            backend: name.clone(),
            metric: "failed_runs".into(),
            value: failures as f64,
            stderr: 0.0,
        });
    }

    // Density snapshots averaged over runs, exact reference last.
    let grid = config.output.grid.points_vec();
    let mut densities = Vec::with_capacity(snapshots.len());
    for (s, &step) in snapshots.iter().enumerate() {
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        for (b, name) in series.iter().enumerate() {
            let mut acc = vec![0.0; grid.len()];
            let mut count = 0usize;
            for r in &runs {
                if r.backends[b].outcome.is_ok() {
                    for (a, v) in acc.iter_mut().zip(&r.backends[b].kde[s]) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                for a in acc.iter_mut() {
                    *a /= count as f64;
                }
                rows.push((name.clone(), acc));
            }
        }
        let mut exact = vec![0.0; grid.len()];
        for r in &runs {
            for (a, v) in exact.iter_mut().zip(&r.exact_densities[s]) {
                *a += v;
            }
        }
        for a in exact.iter_mut() {
            *a /= runs.len() as f64;
        }
        rows.push(("exact".into(), exact));
        densities.push(DensitySnapshot {
            time: step as f64 * dt,
            step,
            grid: grid.clone(),
            series: rows,
        });
    }

    Ok(ExperimentResults {
        config: config.clone(),
        series,
        steps,
        dt,
        snapshot_steps: snapshots,
        runs,
        mse_mean,
        mse_cov,
        summary,
        timings,
        densities,
        failed_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            horizon = 0.04
            runs = 1
            base_seed = 11

            [model]
            name = "linear-gaussian"

            [output]
            kde_times = [0.04]

            [[filters]]
            backend = "sir"
            n = 4

            [[filters]]
            backend = "stein-seq"
            n = 4
            svgd = { iterations = 1, step_size = 0.01 }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn smoke_experiment_runs() {
        let cfg = smoke_config();
        let results = run_experiment(&cfg).unwrap();
        assert_eq!(results.steps, 2);
        assert_eq!(results.series, vec!["sir", "stein_T1"]);
        assert_eq!(results.failed_runs, 0);
        for (_, curve) in &results.mse_mean {
            assert_eq!(curve.len(), 2);
        }
        assert_eq!(results.densities.len(), 1);
        // exact density integrates to ~1 on the default grid
        let snap = &results.densities[0];
        let exact = &snap.series.last().unwrap().1;
        let mut integral = 0.0;
        for k in 0..snap.grid.len() - 1 {
            integral += 0.5 * (exact[k] + exact[k + 1]) * (snap.grid[k + 1] - snap.grid[k]);
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn run_isolation_only_depends_on_run_seed() {
        let cfg = smoke_config();
        let model = cfg.model.build().unwrap();
        let full = run_experiment(&cfg).unwrap();
        let lone = run_single(&cfg, &model, 0).unwrap();
        let a = full.runs[0].backends[0].outcome.as_ref().unwrap();
        let b = lone.backends[0].outcome.as_ref().unwrap();
        assert_eq!(a.means, b.means);
        assert_eq!(a.covariances, b.covariances);

        // Shifting base_seed by 1 reproduces run m+1 as run m.
        let mut shifted = cfg.clone();
        shifted.base_seed += 1;
        shifted.runs = 1;
        let mut two = cfg.clone();
        two.runs = 2;
        let two = run_experiment(&two).unwrap();
        let shifted = run_experiment(&shifted).unwrap();
        let a = two.runs[1].backends[1].outcome.as_ref().unwrap();
        let b = shifted.runs[0].backends[1].outcome.as_ref().unwrap();
        assert_eq!(a.means, b.means);
    }
}
