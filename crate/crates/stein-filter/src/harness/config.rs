//! Experiment configuration: a TOML file with CLI overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{benes_spec, discretize, linear_gaussian_spec, ModelError, StateSpaceModel};
use crate::svgd::{BandwidthPolicy, KernelConfig, StepSchedule, SvgdConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown model name {0:?} (expected \"linear-gaussian\" or \"benes\")")]
    UnknownModel(String),
    #[error("model construction failed: {0}")]
    Model(#[from] ModelError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Model selection plus its continuous-time parameters and Euler step.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// `dx = drift x dt + diffusion dW`, `dy = obs_gain x dt + obs_diffusion dV`.
    LinearGaussian {
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_linear_drift")]
        drift: f64,
        #[serde(default = "default_one")]
        diffusion: f64,
        #[serde(default = "default_obs_gain")]
        obs_gain: f64,
        #[serde(default = "default_obs_diffusion")]
        obs_diffusion: f64,
        #[serde(default = "default_one")]
        init_mean: f64,
        #[serde(default = "default_one")]
        init_var: f64,
    },
    /// `dx = mu sigma_b tanh((mu/sigma_b) x) dt + sigma_b dW`,
    /// `dy = (h1 x + h1 h2) dt + dV`, started near the point `x0`.
    Benes {
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "default_benes_mu")]
        mu: f64,
        #[serde(default = "default_benes_sigma")]
        sigma_b: f64,
        #[serde(default = "default_benes_h1")]
        h1: f64,
        #[serde(default)]
        h2: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default = "default_benes_init_var")]
        init_var: f64,
    },
}

fn default_dt() -> f64 {
    0.02
}
fn default_linear_drift() -> f64 {
    -0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_obs_gain() -> f64 {
    3.0
}
fn default_obs_diffusion() -> f64 {
    0.5
}
fn default_benes_mu() -> f64 {
    0.1
}
fn default_benes_sigma() -> f64 {
    0.3
}
fn default_benes_h1() -> f64 {
    5.0
}
fn default_benes_init_var() -> f64 {
    1e-4
}

impl ModelConfig {
    pub fn linear_default() -> Self {
        ModelConfig::LinearGaussian {
            dt: default_dt(),
            drift: default_linear_drift(),
            diffusion: 1.0,
            obs_gain: default_obs_gain(),
            obs_diffusion: default_obs_diffusion(),
            init_mean: 1.0,
            init_var: 1.0,
        }
    }

    pub fn benes_default() -> Self {
        ModelConfig::Benes {
            dt: default_dt(),
            mu: default_benes_mu(),
            sigma_b: default_benes_sigma(),
            h1: default_benes_h1(),
            h2: 0.0,
            x0: 0.0,
            init_var: default_benes_init_var(),
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ConfigError> {
        match name {
            "linear-gaussian" => Ok(Self::linear_default()),
            "benes" => Ok(Self::benes_default()),
            other => Err(ConfigError::UnknownModel(other.to_string())),
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            ModelConfig::LinearGaussian { dt, .. } | ModelConfig::Benes { dt, .. } => *dt,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::LinearGaussian { .. } => "linear-gaussian",
            ModelConfig::Benes { .. } => "benes",
        }
    }

    pub fn build(&self) -> Result<StateSpaceModel, ConfigError> {
        let spec = match *self {
            ModelConfig::LinearGaussian {
                dt,
                drift,
                diffusion,
                obs_gain,
                obs_diffusion,
                init_mean,
                init_var,
            } => linear_gaussian_spec(
                drift,
                diffusion,
                obs_gain,
                obs_diffusion,
                init_mean,
                init_var,
                dt,
            ),
            ModelConfig::Benes {
                dt,
                mu,
                sigma_b,
                h1,
                h2,
                x0,
                init_var,
            } => benes_spec(mu, sigma_b, h1, h2, x0, init_var, dt),
        };
        Ok(discretize(spec)?)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let dt = self.dt();
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("model.dt must be positive, got {dt}")));
        }
        match *self {
            ModelConfig::LinearGaussian {
                diffusion,
                obs_diffusion,
                init_var,
                ..
            } => {
                if diffusion == 0.0 {
                    return Err(invalid("model.diffusion must be non-zero"));
                }
                if obs_diffusion == 0.0 {
                    return Err(invalid("model.obs_diffusion must be non-zero"));
                }
                if !(init_var > 0.0) {
                    return Err(invalid("model.init_var must be positive"));
                }
            }
            ModelConfig::Benes {
                sigma_b,
                h1,
                init_var,
                ..
            } => {
                if !(sigma_b > 0.0) {
                    return Err(invalid("model.sigma_b must be positive"));
                }
                if h1 == 0.0 {
                    return Err(invalid("model.h1 must be non-zero"));
                }
                if !(init_var > 0.0) {
                    return Err(invalid("model.init_var must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Kernel bandwidth: the string `"median"` or a fixed positive number.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Fixed(f64),
    Named(NamedBandwidth),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum NamedBandwidth {
    Median,
}

impl Default for BandwidthSetting {
    fn default() -> Self {
        BandwidthSetting::Named(NamedBandwidth::Median)
    }
}

/// Step-size schedule name.
#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleSetting {
    #[default]
    Constant,
    Adagrad,
}

/// Inner-loop settings of the Stein backends.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct SvgdSettings {
    pub iterations: usize,
    pub step_size: f64,
    pub bandwidth: BandwidthSetting,
    pub schedule: ScheduleSetting,
}

impl Default for SvgdSettings {
    fn default() -> Self {
        Self {
            iterations: 100,
            step_size: 0.01,
            bandwidth: BandwidthSetting::default(),
            schedule: ScheduleSetting::default(),
        }
    }
}

impl SvgdSettings {
    pub fn to_config(self) -> SvgdConfig {
        let bandwidth = match self.bandwidth {
            BandwidthSetting::Fixed(h) => BandwidthPolicy::Fixed(h),
            BandwidthSetting::Named(NamedBandwidth::Median) => BandwidthPolicy::MedianHeuristic,
        };
        let schedule = match self.schedule {
            ScheduleSetting::Constant => StepSchedule::Constant(self.step_size),
            ScheduleSetting::Adagrad => StepSchedule::AdaGrad {
                step: self.step_size,
                fudge: 1e-6,
            },
        };
        SvgdConfig {
            iterations: self.iterations,
            schedule,
            kernel: KernelConfig { bandwidth },
        }
    }

    fn validate(&self, ctx: &str) -> Result<(), ConfigError> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid(format!("{ctx}: svgd.step_size must be positive")));
        }
        if let BandwidthSetting::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(invalid(format!("{ctx}: svgd.bandwidth must be positive")));
            }
        }
        Ok(())
    }
}

fn default_ess_threshold() -> f64 {
    0.5
}

/// One configured filter backend.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum FilterSpec {
    Sir {
        n: usize,
        #[serde(default = "default_ess_threshold")]
        ess_threshold: f64,
    },
    SteinSeq {
        n: usize,
        #[serde(default)]
        svgd: SvgdSettings,
    },
    SteinWindow {
        n: usize,
        window: usize,
        #[serde(default)]
        svgd: SvgdSettings,
    },
}

impl FilterSpec {
    pub fn n(&self) -> usize {
        match self {
            FilterSpec::Sir { n, .. }
            | FilterSpec::SteinSeq { n, .. }
            | FilterSpec::SteinWindow { n, .. } => *n,
        }
    }

    /// Series name used in every CSV: `sir`, `stein_T1` (sequential) or
    /// `stein_T<w>` (window of length `w`).
    pub fn series_name(&self) -> String {
        match self {
            FilterSpec::Sir { .. } => "sir".to_string(),
            FilterSpec::SteinSeq { .. } => "stein_T1".to_string(),
            FilterSpec::SteinWindow { window, .. } => format!("stein_T{window}"),
        }
    }

    fn validate(&self, idx: usize) -> Result<(), ConfigError> {
        let ctx = format!("filters[{idx}]");
        if self.n() < 2 {
            return Err(invalid(format!("{ctx}: n must be at least 2")));
        }
        match self {
            FilterSpec::Sir { ess_threshold, .. } => {
                if !(*ess_threshold > 0.0 && *ess_threshold <= 1.0) {
                    return Err(invalid(format!("{ctx}: ess_threshold must lie in (0, 1]")));
                }
            }
            FilterSpec::SteinSeq { svgd, .. } => svgd.validate(&ctx)?,
            FilterSpec::SteinWindow { window, svgd, .. } => {
                if *window == 0 {
                    return Err(invalid(format!("{ctx}: window must be at least 1")));
                }
                svgd.validate(&ctx)?;
            }
        }
        Ok(())
    }
}

/// Density-snapshot grid.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min: -2.5,
            max: 2.5,
            points: 501,
        }
    }
}

impl GridConfig {
    pub fn points_vec(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.min + k as f64 * step).collect()
    }
}

/// Output directory, density snapshot times and KDE settings.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub kde_times: Vec<f64>,
    pub grid: GridConfig,
    pub kde_bandwidth: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            kde_times: Vec::new(),
            grid: GridConfig::default(),
            kde_bandwidth: 0.1,
        }
    }
}

/// A full experiment description.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// Total simulated time; the step count is `horizon / model.dt`.
    pub horizon: f64,
    /// Number of independent Monte Carlo runs.
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    pub filters: Vec<FilterSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    0
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Number of filter steps implied by horizon and dt.
    pub fn steps(&self) -> usize {
        (self.horizon / self.model.dt()).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("horizon must be positive"));
        }
        if self.steps() < 1 {
            return Err(invalid("horizon must cover at least one step of model.dt"));
        }
        if self.runs < 1 {
            return Err(invalid("runs must be at least 1"));
        }
        if self.filters.is_empty() {
            return Err(invalid("at least one filter backend must be configured"));
        }
        for (idx, f) in self.filters.iter().enumerate() {
            f.validate(idx)?;
        }
        if !(self.output.kde_bandwidth > 0.0) {
            return Err(invalid("output.kde_bandwidth must be positive"));
        }
        if self.output.grid.points < 2 {
            return Err(invalid("output.grid.points must be at least 2"));
        }
        if !(self.output.grid.min < self.output.grid.max) {
            return Err(invalid("output.grid.min must be below output.grid.max"));
        }
        for &t in &self.output.kde_times {
            if !(t > 0.0) || t > self.horizon + 1e-12 {
                return Err(invalid(format!(
                    "output.kde_times entries must lie in (0, horizon], got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Applies the full-scale preset: 500 particles, 100 descent iterations
    /// at base step 0.01, and 50 runs.
    pub fn apply_paper_preset(&mut self) {
        self.runs = 50;
        for f in self.filters.iter_mut() {
            match f {
                FilterSpec::Sir { n, .. } => *n = 500,
                FilterSpec::SteinSeq { n, svgd } | FilterSpec::SteinWindow { n, svgd, .. } => {
                    *n = 500;
                    svgd.iterations = 100;
                    svgd.step_size = 0.01;
                }
            }
        }
    }

    /// Unique series names, in filter order (duplicates get a numeric
    /// suffix).
    pub fn series_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            let base = f.series_name();
            let mut name = base.clone();
            let mut k = 2;
            while names.contains(&name) {
                name = format!("{base}_{k}");
                k += 1;
            }
            names.push(name);
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        horizon = 0.1
        runs = 2

        [model]
        name = "linear-gaussian"

        [[filters]]
        backend = "sir"
        n = 16

        [[filters]]
        backend = "stein-seq"
        n = 16

        [[filters]]
        backend = "stein-window"
        n = 16
        window = 3
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.steps(), 5);
        assert_eq!(cfg.base_seed, 0);
        assert_eq!(
            cfg.series_names(),
            vec!["sir".to_string(), "stein_T1".to_string(), "stein_T3".to_string()]
        );
        assert_eq!(cfg.model.dt(), 0.02);
        cfg.model.build().unwrap();
    }

    #[test]
    fn svgd_settings_parse_fixed_and_named_bandwidth() {
        let toml = r#"
            horizon = 0.1
            runs = 1

            [model]
            name = "benes"

            [[filters]]
            backend = "stein-seq"
            n = 8
            svgd = { iterations = 20, step_size = 0.05, bandwidth = 0.7, schedule = "adagrad" }
        "#;
        let cfg = ExperimentConfig::from_toml_str(toml).unwrap();
        let FilterSpec::SteinSeq { svgd, .. } = &cfg.filters[0] else {
            panic!("wrong variant");
        };
        assert_eq!(svgd.bandwidth, BandwidthSetting::Fixed(0.7));
        assert_eq!(svgd.schedule, ScheduleSetting::Adagrad);
        let sc = svgd.to_config();
        assert_eq!(sc.iterations, 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            ("horizon = 0.1", "missing fields"),
            (
                "horizon = -1\nruns = 1\n[model]\nname = \"benes\"\n[[filters]]\nbackend = \"sir\"\nn = 8",
                "negative horizon",
            ),
            (
                "horizon = 0.1\nruns = 0\n[model]\nname = \"benes\"\n[[filters]]\nbackend = \"sir\"\nn = 8",
                "zero runs",
            ),
            (
                "horizon = 0.1\nruns = 1\n[model]\nname = \"benes\"\n",
                "no filters",
            ),
            (
                "horizon = 0.1\nruns = 1\n[model]\nname = \"nope\"\n[[filters]]\nbackend = \"sir\"\nn = 8",
                "unknown model",
            ),
            (
                "horizon = 0.1\nruns = 1\n[model]\nname = \"benes\"\n[[filters]]\nbackend = \"sir\"\nn = 1",
                "n too small",
            ),
            (
                "horizon = 0.1\nruns = 1\n[model]\nname = \"benes\"\n[[filters]]\nbackend = \"stein-window\"\nn = 8\nwindow = 0",
                "zero window",
            ),
        ];
        for (text, what) in cases {
            assert!(
                ExperimentConfig::from_toml_str(text).is_err(),
                "{what} should be rejected"
            );
        }
    }

    #[test]
    fn model_name_roundtrip() {
        assert!(ModelConfig::from_name("linear-gaussian").is_ok());
        assert!(ModelConfig::from_name("benes").is_ok());
        assert!(matches!(
            ModelConfig::from_name("brownian"),
            Err(ConfigError::UnknownModel(_))
        ));
    }

    #[test]
    fn paper_preset_rescales() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.apply_paper_preset();
        assert_eq!(cfg.runs, 50);
        assert!(cfg.filters.iter().all(|f| f.n() == 500));
    }
}
