//! Plot-ready CSV emission.
//!
//! All files are long-format CSV with fixed headers:
//!
//! * `mse_mean.csv`, `mse_cov.csv` — `time,series,value`
//! * `density_t<time>.csv` — `x,series,density`
//! * `summary.csv`, `timings.csv` — `backend,metric,value,stderr`
//! * `runs/run_<m>.csv` — `time,series,mean,cov,ess`
//!
//! Everything except `timings.csv` is byte-deterministic for a fixed config
//! (wall-clock timings inherently are not, which is why they live in their
//! own file).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ModelConfig;
use super::experiment::{DensitySnapshot, ExperimentResults, HarnessError};

/// The figure a CSV bundle reproduces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Mean and covariance m.s.e. curves for the linear-Gaussian model.
    LinearMse,
    /// Posterior density snapshots for the Benes model.
    BenesDensity,
    /// Mean m.s.e. curve for the Benes model.
    BenesMse,
}

impl Figure {
    fn name(&self) -> &'static str {
        match self {
            Figure::LinearMse => "linear-mse",
            Figure::BenesDensity => "benes-density",
            Figure::BenesMse => "benes-mse",
        }
    }
}

fn mse_csv(results: &ExperimentResults, curves: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("time,series,value\n");
    for (series, curve) in curves {
        for (t, v) in curve.iter().enumerate() {
            let time = (t + 1) as f64 * results.dt;
            let _ = writeln!(out, "{time},{series},{v}");
        }
    }
    out
}

fn density_csv(snapshot: &DensitySnapshot) -> String {
    let mut out = String::from("x,series,density\n");
    for (series, density) in &snapshot.series {
        for (x, d) in snapshot.grid.iter().zip(density) {
            let _ = writeln!(out, "{x},{series},{d}");
        }
    }
    out
}

fn density_file_name(snapshot: &DensitySnapshot) -> String {
    format!("density_t{}.csv", snapshot.time)
}

fn rows_csv(rows: &[super::experiment::SummaryRow]) -> String {
    let mut out = String::from("backend,metric,value,stderr\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.backend, r.metric, r.value, r.stderr);
    }
    out
}

fn check_series_present(results: &ExperimentResults, figure: Figure) -> Result<(), HarnessError> {
    for name in &results.series {
        if !results.mse_mean.iter().any(|(s, _)| s == name) {
            return Err(HarnessError::MissingSeries {
                figure: figure.name().to_string(),
                series: name.clone(),
            });
        }
    }
    Ok(())
}

/// Builds the `(file name, contents)` CSV bundle for one figure.
pub fn emit_figure_data(
    results: &ExperimentResults,
    figure: Figure,
) -> Result<Vec<(String, String)>, HarnessError> {
    check_series_present(results, figure)?;
    match figure {
        Figure::LinearMse => Ok(vec![
            ("mse_mean.csv".to_string(), mse_csv(results, &results.mse_mean)),
            ("mse_cov.csv".to_string(), mse_csv(results, &results.mse_cov)),
        ]),
        Figure::BenesMse => Ok(vec![(
            "mse_mean.csv".to_string(),
            mse_csv(results, &results.mse_mean),
        )]),
        Figure::BenesDensity => {
            if results.densities.is_empty() {
                return Err(HarnessError::NoSnapshots(figure.name().to_string()));
            }
            Ok(results
                .densities
                .iter()
                .map(|snap| (density_file_name(snap), density_csv(snap)))
                .collect())
        }
    }
}

fn per_run_csv(results: &ExperimentResults, m: usize) -> String {
    let run = &results.runs[m];
    let mut out = String::from("time,series,mean,cov,ess\n");
    for backend in &run.backends {
        if let Ok(record) = &backend.outcome {
            for t in 0..record.means.len() {
                let time = (t + 1) as f64 * results.dt;
                let ess = record
                    .ess
                    .as_ref()
                    .map(|e| e[t].to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{time},{},{},{},{ess}",
                    backend.series,
                    record.means[t][0],
                    record.covariances[t][(0, 0)]
                );
            }
        }
    }
    for t in 0..run.reference_means.len() {
        let time = (t + 1) as f64 * results.dt;
        let _ = writeln!(
            out,
            "{time},exact,{},{},",
            run.reference_means[t][0],
            run.reference_covariances[t][(0, 0)]
        );
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the full CSV bundle of an experiment into `config.output.dir` and
/// returns the written paths: figure CSVs for the configured model,
/// `summary.csv`, `timings.csv`, and one per-run state file.
pub fn write_outputs(results: &ExperimentResults) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = results.config.output.dir.clone();
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|source| HarnessError::Io {
        path: runs_dir.clone(),
        source,
    })?;

    let mut files: Vec<(String, String)> = match results.config.model {
        ModelConfig::LinearGaussian { .. } => emit_figure_data(results, Figure::LinearMse)?,
        ModelConfig::Benes { .. } => {
            let mut f = emit_figure_data(results, Figure::BenesMse)?;
            if !results.densities.is_empty() {
                f.extend(emit_figure_data(results, Figure::BenesDensity)?);
            }
            f
        }
    };
    // Density snapshots are also useful outside the Benes figure.
    if matches!(results.config.model, ModelConfig::LinearGaussian { .. })
        && !results.densities.is_empty()
    {
        files.extend(
            results
                .densities
                .iter()
                .map(|snap| (density_file_name(snap), density_csv(snap))),
        );
    }
    files.push(("summary.csv".to_string(), rows_csv(&results.summary)));
    files.push(("timings.csv".to_string(), rows_csv(&results.timings)));

    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        write(&path, &contents)?;
        written.push(path);
    }
    for m in 0..results.runs.len() {
        let path = runs_dir.join(format!("run_{m:03}.csv"));
        write(&path, &per_run_csv(results, m))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::experiment::run_experiment;

    fn benes_results(kde: bool) -> ExperimentResults {
        let toml = format!(
            r#"
            horizon = 0.06
            runs = 2
            base_seed = 5

            [model]
            name = "benes"
            init_var = 0.04

            [output]
            kde_times = [{}]

            [[filters]]
            backend = "sir"
            n = 8

            [[filters]]
            backend = "stein-window"
            n = 32
            window = 2
            svgd = {{ iterations = 2, step_size = 0.005 }}
            "#,
            if kde { "0.06" } else { "" }
        );
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        run_experiment(&cfg).unwrap()
    }

    #[test]
    fn figure_schemas_are_exact() {
        let results = benes_results(true);
        let files = emit_figure_data(&results, Figure::BenesMse).unwrap();
        assert_eq!(files[0].0, "mse_mean.csv");
        let mut lines = files[0].1.lines();
        assert_eq!(lines.next(), Some("time,series,value"));
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 3);
        assert!(first.starts_with("0.02,sir,"));

        let density = emit_figure_data(&results, Figure::BenesDensity).unwrap();
        assert_eq!(density[0].0, "density_t0.06.csv");
        let mut lines = density[0].1.lines();
        assert_eq!(lines.next(), Some("x,series,density"));
        assert_eq!(lines.next().unwrap().split(',').count(), 3);
        // exact series present
        assert!(density[0].1.contains(",exact,"));
    }

    #[test]
    fn benes_density_requires_snapshots() {
        let results = benes_results(false);
        assert!(matches!(
            emit_figure_data(&results, Figure::BenesDensity),
            Err(HarnessError::NoSnapshots(_))
        ));
    }

    #[test]
    fn exact_density_series_integrates_to_one() {
        let results = benes_results(true);
        for snap in &results.densities {
            let (name, exact) = snap.series.last().unwrap();
            assert_eq!(name, "exact");
            let mut integral = 0.0;
            for k in 0..snap.grid.len() - 1 {
                integral += 0.5 * (exact[k] + exact[k + 1]) * (snap.grid[k + 1] - snap.grid[k]);
            }
            assert!((integral - 1.0).abs() < 1e-4, "integral = {integral}");
        }
    }

    #[test]
    fn outputs_land_on_disk() {
        let results = benes_results(true);
        let tmp = tempfile::tempdir().unwrap();
        let mut results = results;
        results.config.output.dir = tmp.path().to_path_buf();
        let written = write_outputs(&results).unwrap();
        assert!(written.iter().any(|p| p.ends_with("mse_mean.csv")));
        assert!(written.iter().any(|p| p.ends_with("summary.csv")));
        assert!(written.iter().any(|p| p.ends_with("timings.csv")));
        assert!(written.iter().any(|p| p.ends_with("runs/run_000.csv")));
        assert!(written.iter().any(|p| p.ends_with("runs/run_001.csv")));
        for p in &written {
            assert!(p.exists());
        }
        // per-run schema
        let run_csv =
            std::fs::read_to_string(tmp.path().join("runs/run_000.csv")).unwrap();
        assert!(run_csv.starts_with("time,series,mean,cov,ess\n"));
        assert!(run_csv.contains(",exact,"));
    }
}
