//! Stein variational gradient descent: the Gaussian kernel, the empirical
//! update direction, and the fixed-iteration descent loop.
//!
//! The update direction for particle `i` is
//!
//! ```text
//! phi(x_i) = (1/n) sum_j [ k(x_j, x_i) grad log q(x_j) + grad_{x_j} k(x_j, x_i) ]
//! ```
//!
//! with the Gaussian kernel `k(x, x') = exp(-||x - x'||^2 / h)` (note the
//! plain `1/h` scaling). With the `parallel` feature the target gradients and
//! the per-particle rows are computed on the rayon pool; each row keeps its
//! inner sum in a fixed sequential order, so serial and parallel execution
//! produce bit-identical ensembles.

use rand::Rng;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Particle norms beyond this abort the descent as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SvgdError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("target dimension {target} does not match ensemble dimension {ensemble}")]
    DimensionMismatch { target: usize, ensemble: usize },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("fixed kernel bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("target returned a non-finite gradient at particle {particle}")]
    NonFiniteGradient { particle: usize },
    #[error("descent diverged at iteration {iteration}: particle norm exceeded {limit:e}")]
    Diverged { iteration: usize, limit: f64 },
}

/// An unnormalized log-density with gradient: the input contract of the
/// descent loop. `log_density` is optional and only needed by diagnostics
/// and finite-difference checks.
pub trait LogDensityTarget: Sync {
    fn dim(&self) -> usize;
    fn grad_log_density(&self, x: &[f64]) -> Vec<f64>;
    fn log_density(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `n` equally weighted points in `R^dim`, stored row-major. Equal weighting
/// is implicit: the type carries no weight field.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl ParticleEnsemble {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; n * dim],
            n,
            dim,
        }
    }

    /// Builds an ensemble from a flat row-major buffer of length `n * dim`.
    pub fn from_flat(data: Vec<f64>, n: usize, dim: usize) -> Self {
        assert_eq!(data.len(), n * dim, "flat buffer has wrong length");
        Self { data, n, dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { data, n, dim }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples `n` points from `sample`, consuming draws in index order.
    pub fn sample_with<R: Rng + ?Sized>(
        n: usize,
        dim: usize,
        rng: &mut R,
        mut sample: impl FnMut(&mut R) -> Vec<f64>,
    ) -> Self {
        let mut out = Self::zeros(n, dim);
        for i in 0..n {
            let x = sample(rng);
            out.row_mut(i).copy_from_slice(&x);
        }
        out
    }
}

/// Kernel bandwidth selection. The median heuristic resolves
/// `h = med^2 / ln(n + 1)` from the median pairwise Euclidean distance and
/// falls back to `h = 1` (with a warning) when all particles coincide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    MedianHeuristic,
}

/// Configuration of the (Gaussian) kernel. The Gaussian family is the only
/// built-in: `k(x, x') = exp(-||x - x'||^2 / h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: BandwidthPolicy,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthPolicy::MedianHeuristic,
        }
    }
}

impl KernelConfig {
    pub fn fixed(h: f64) -> Self {
        Self {
            bandwidth: BandwidthPolicy::Fixed(h),
        }
    }

    fn validate(&self) -> Result<(), SvgdError> {
        if let BandwidthPolicy::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(SvgdError::NonPositiveBandwidth(h));
            }
        }
        Ok(())
    }
}

/// Decay rate of the squared-direction accumulator in the AdaGrad schedule.
pub const ADAGRAD_MOMENTUM: f64 = 0.9;

/// Step-size schedule of the descent loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// AdaGrad with momentum, the schedule of the reference descent
    /// implementations: per coordinate,
    /// `hist <- 0.9 hist + 0.1 phi^2` (initialized to `phi^2`), then
    /// `x += step * phi / (fudge + sqrt(hist))`.
    AdaGrad { step: f64, fudge: f64 },
}

impl StepSchedule {
    fn base_step(&self) -> f64 {
        match *self {
            StepSchedule::Constant(e) => e,
            StepSchedule::AdaGrad { step, .. } => step,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgdConfig {
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub kernel: KernelConfig,
}

impl SvgdConfig {
    /// Constant step size with the median-heuristic kernel.
    pub fn constant(iterations: usize, step: f64) -> Self {
        Self {
            iterations,
            schedule: StepSchedule::Constant(step),
            kernel: KernelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SvgdError> {
        let step = self.schedule.base_step();
        if !(step > 0.0) || !step.is_finite() {
            return Err(SvgdError::NonPositiveStep(step));
        }
        self.kernel.validate()
    }
}

/// Kernel matrix, kernel gradients and the resolved bandwidth for one
/// ensemble. `values` is `n x n` row-major; `grads[(j*n + i)*dim + m]` holds
/// the `m`-th component of `grad_{x_j} k(x_j, x_i)`.
pub struct KernelEval {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub bandwidth: f64,
}

/// Pairwise squared distances, row-major and exactly symmetric.
fn squared_distances(ens: &ParticleEnsemble) -> Vec<f64> {
    let n = ens.n();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        let xi = ens.row(i);
        for j in (i + 1)..n {
            let xj = ens.row(j);
            let mut s = 0.0;
            for m in 0..ens.dim() {
                let diff = xi[m] - xj[m];
                s += diff * diff;
            }
            d2[i * n + j] = s;
            d2[j * n + i] = s;
        }
    }
    d2
}

/// Resolves the kernel bandwidth for an ensemble with pairwise squared
/// distances `d2`.
fn resolve_bandwidth(d2: &[f64], n: usize, config: &KernelConfig) -> f64 {
    match config.bandwidth {
        BandwidthPolicy::Fixed(h) => h,
        BandwidthPolicy::MedianHeuristic => {
            if n < 2 {
                return 1.0;
            }
            let mut dists: Vec<f64> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| d2[i * n + j].sqrt())
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("non-finite particle distance"));
            let med = if dists.len() % 2 == 1 {
                dists[dists.len() / 2]
            } else {
                0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
            };
            if med == 0.0 {
                log::warn!("median pairwise distance is zero; falling back to bandwidth 1");
                return 1.0;
            }
            med * med / ((n as f64 + 1.0).ln())
        }
    }
}

/// Evaluates the Gaussian kernel matrix, its gradients with respect to the
/// first argument, and the resolved bandwidth.
pub fn kernel_matrix(
    ensemble: &ParticleEnsemble,
    config: &KernelConfig,
) -> Result<KernelEval, SvgdError> {
    let n = ensemble.n();
    if n == 0 {
        return Err(SvgdError::EmptyEnsemble);
    }
    config.validate()?;
    let dim = ensemble.dim();
    let d2 = squared_distances(ensemble);
    let h = resolve_bandwidth(&d2, n, config);
    let values: Vec<f64> = d2.iter().map(|&s| (-s / h).exp()).collect();
    let mut grads = vec![0.0; n * n * dim];
    for j in 0..n {
        let xj = ensemble.row(j);
        for i in 0..n {
            let k = values[j * n + i];
            let xi = ensemble.row(i);
            let base = (j * n + i) * dim;
            for m in 0..dim {
                grads[base + m] = -(2.0 / h) * (xj[m] - xi[m]) * k;
            }
        }
    }
    Ok(KernelEval {
        values,
        grads,
        bandwidth: h,
    })
}

/// Evaluates `grad log q` at every particle; errors carry the particle index
/// when the target returns a non-finite component.
fn target_grads<T: LogDensityTarget + ?Sized>(
    ens: &ParticleEnsemble,
    target: &T,
    parallel: bool,
) -> Result<Vec<f64>, SvgdError> {
    let dim = ens.dim();
    let eval = |j: usize, chunk: &mut [f64]| -> Result<(), SvgdError> {
        let g = target.grad_log_density(ens.row(j));
        debug_assert_eq!(g.len(), dim);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SvgdError::NonFiniteGradient { particle: j });
        }
        chunk.copy_from_slice(&g);
        Ok(())
    };
    let mut grads = vec![0.0; ens.n() * dim];
    #[cfg(feature = "parallel")]
    if parallel {
        grads
            .par_chunks_mut(dim)
            .enumerate()
            .try_for_each(|(j, chunk)| eval(j, chunk))?;
        return Ok(grads);
    }
    let _ = parallel;
    for (j, chunk) in grads.chunks_mut(dim).enumerate() {
        eval(j, chunk)?;
    }
    Ok(grads)
}

/// Accumulates the direction row for particle `i`. The sum over `j` runs in
/// ascending index order so results do not depend on the execution schedule.
fn direction_row(
    ens: &ParticleEnsemble,
    grads: &[f64],
    kvals: &[f64],
    h: f64,
    i: usize,
    out: &mut [f64],
) {
    let n = ens.n();
    let dim = ens.dim();
    let xi = ens.row(i);
    out.fill(0.0);
    for j in 0..n {
        let k = kvals[i * n + j]; // symmetric: equals k(x_j, x_i)
        let gj = &grads[j * dim..(j + 1) * dim];
        let xj = ens.row(j);
        let c = -(2.0 / h) * k;
        for m in 0..dim {
            out[m] += k * gj[m] + c * (xj[m] - xi[m]);
        }
    }
    let inv_n = 1.0 / n as f64;
    for v in out.iter_mut() {
        *v *= inv_n;
    }
}

fn direction_core<T: LogDensityTarget + ?Sized>(
    ens: &ParticleEnsemble,
    target: &T,
    kernel: &KernelConfig,
    parallel: bool,
    out: &mut [f64],
) -> Result<f64, SvgdError> {
    let n = ens.n();
    if n == 0 {
        return Err(SvgdError::EmptyEnsemble);
    }
    if target.dim() != ens.dim() {
        return Err(SvgdError::DimensionMismatch {
            target: target.dim(),
            ensemble: ens.dim(),
        });
    }
    kernel.validate()?;
    let dim = ens.dim();
    let grads = target_grads(ens, target, parallel)?;
    let d2 = squared_distances(ens);
    let h = resolve_bandwidth(&d2, n, kernel);
    let kvals: Vec<f64> = d2.iter().map(|&s| (-s / h).exp()).collect();

    #[cfg(feature = "parallel")]
    if parallel {
        out.par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, row)| direction_row(ens, &grads, &kvals, h, i, row));
        return Ok(h);
    }
    for (i, row) in out.chunks_mut(dim).enumerate() {
        direction_row(ens, &grads, &kvals, h, i, row);
    }
    Ok(h)
}

/// The empirical update direction: row `i` holds `phi(x_i)` as a flat
/// row-major `n x dim` buffer. Runs on the rayon pool when the `parallel`
/// feature is enabled.
pub fn update_direction<T: LogDensityTarget + ?Sized>(
    ensemble: &ParticleEnsemble,
    target: &T,
    kernel: &KernelConfig,
) -> Result<Vec<f64>, SvgdError> {
    let mut out = vec![0.0; ensemble.n() * ensemble.dim()];
    direction_core(ensemble, target, kernel, cfg!(feature = "parallel"), &mut out)?;
    Ok(out)
}

/// Sequential reference path for [`update_direction`]; kept unconditionally
/// for the fallback build and for benchmarking against the parallel path.
/// Produces bit-identical output.
pub fn update_direction_serial<T: LogDensityTarget + ?Sized>(
    ensemble: &ParticleEnsemble,
    target: &T,
    kernel: &KernelConfig,
) -> Result<Vec<f64>, SvgdError> {
    let mut out = vec![0.0; ensemble.n() * ensemble.dim()];
    direction_core(ensemble, target, kernel, false, &mut out)?;
    Ok(out)
}

/// Runs `config.iterations` descent steps
/// `x_i <- x_i + eps_l * phi(x_i)` and returns the final ensemble.
///
/// `rng` is accepted for interface uniformity with stochastic samplers but
/// unused: the descent is deterministic given the initial ensemble. The loop
/// aborts with [`SvgdError::Diverged`] when any particle norm exceeds
/// [`DIVERGENCE_LIMIT`] or stops being finite.
pub fn run<T: LogDensityTarget + ?Sized, R: Rng + ?Sized>(
    initial: ParticleEnsemble,
    target: &T,
    config: &SvgdConfig,
    _rng: &mut R,
) -> Result<ParticleEnsemble, SvgdError> {
    config.validate()?;
    if initial.n() == 0 {
        return Err(SvgdError::EmptyEnsemble);
    }
    if target.dim() != initial.dim() {
        return Err(SvgdError::DimensionMismatch {
            target: target.dim(),
            ensemble: initial.dim(),
        });
    }
    let n = initial.n();
    let dim = initial.dim();
    let mut ens = initial;
    let mut direction = vec![0.0; n * dim];
    let mut adagrad_hist = match config.schedule {
        StepSchedule::AdaGrad { .. } => vec![0.0; n * dim],
        StepSchedule::Constant(_) => Vec::new(),
    };

    for iteration in 0..config.iterations {
        direction_core(
            &ens,
            target,
            &config.kernel,
            cfg!(feature = "parallel"),
            &mut direction,
        )?;
        match config.schedule {
            StepSchedule::Constant(eps) => {
                for i in 0..n {
                    let row = ens.row_mut(i);
                    let dir = &direction[i * dim..(i + 1) * dim];
                    for m in 0..dim {
                        row[m] += eps * dir[m];
                    }
                }
            }
            StepSchedule::AdaGrad { step, fudge } => {
                for i in 0..n {
                    let row = ens.row_mut(i);
                    for m in 0..dim {
                        let idx = i * dim + m;
                        let g = direction[idx];
                        adagrad_hist[idx] = if iteration == 0 {
                            g * g
                        } else {
                            ADAGRAD_MOMENTUM * adagrad_hist[idx]
                                + (1.0 - ADAGRAD_MOMENTUM) * g * g
                        };
                        row[m] += step * g / (fudge + adagrad_hist[idx].sqrt());
                    }
                }
            }
        }
        for i in 0..n {
            let norm_sq: f64 = ens.row(i).iter().map(|v| v * v).sum();
            if !norm_sq.is_finite() || norm_sq > DIVERGENCE_LIMIT * DIVERGENCE_LIMIT {
                return Err(SvgdError::Diverged {
                    iteration,
                    limit: DIVERGENCE_LIMIT,
                });
            }
        }
    }
    Ok(ens)
}
