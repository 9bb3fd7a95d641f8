//! Discrete-time state-space models with Gaussian transition and observation
//! noise, and the Euler discretization that produces them from
//! continuous-time dynamics.
//!
//! The transition family is Gaussian with a (possibly nonlinear) drift and a
//! constant covariance: every filtering target in [`crate::filter`] needs the
//! closed-form transition density and its gradients, and both built-in models
//! are of this form.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// A deterministic map `R^m -> R^k` supplied as a closure.
pub type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// A Jacobian accessor: returns the `k x m` Jacobian of the associated map.
pub type JacobianFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("{name} must be symmetric positive definite")]
    NotPositiveDefinite { name: &'static str },
    #[error("simulation needs at least one step")]
    NoSteps,
}

/// A zero-mean Gaussian with precomputed Cholesky factor, precision matrix
/// and log-normalization constant. All densities and gradients in the crate
/// route through this so transition, observation and initial distributions
/// share one numerical path.
#[derive(Clone, Debug)]
pub(crate) struct GaussianCore {
    dim: usize,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianCore {
    pub(crate) fn new(cov: DMatrix<f64>, name: &'static str) -> Result<Self, ModelError> {
        let dim = cov.nrows();
        if dim == 0 || !cov.is_square() {
            return Err(ModelError::NotPositiveDefinite { name });
        }
        let chol: Cholesky<f64, Dyn> =
            Cholesky::new(cov.clone()).ok_or(ModelError::NotPositiveDefinite { name })?;
        let chol_lower = chol.l();
        let log_det: f64 = chol_lower.diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let precision = chol.inverse();
        let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            dim,
            cov,
            chol_lower,
            precision,
            log_norm,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `log N(diff; 0, cov)` including the normalization constant.
    pub(crate) fn log_density_diff(&self, diff: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.quad_form(diff)
    }

    /// `diff^T P diff` with the precomputed precision `P`.
    pub(crate) fn quad_form(&self, diff: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += self.precision[(r, c)] * diff[c];
            }
            q += diff[r] * acc;
        }
        q
    }

    /// `out += scale * (-P diff)`, the gradient of the log-density at
    /// `x = mean + diff` scaled by `scale`.
    pub(crate) fn add_scaled_grad(&self, diff: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.dim;
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += self.precision[(r, c)] * diff[c];
            }
            out[r] -= scale * acc;
        }
    }

    /// Draws `L xi` with `xi` standard normal; components are consumed from
    /// `rng` in index order.
    pub(crate) fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; d];
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..=r {
                acc += self.chol_lower[(r, c)] * xi[c];
            }
            out[r] = acc;
        }
        out
    }
}

/// Gaussian Markov transition `x' ~ N(f(x), Q)` with drift `f` and constant
/// covariance `Q`.
pub struct GaussianTransitionModel {
    drift: VectorFn,
    drift_jacobian: JacobianFn,
    noise: GaussianCore,
}

impl GaussianTransitionModel {
    pub fn new(
        drift: VectorFn,
        drift_jacobian: JacobianFn,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let noise = GaussianCore::new(noise_cov, "transition noise covariance")?;
        Ok(Self {
            drift,
            drift_jacobian,
            noise,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise.cov
    }

    pub(crate) fn noise(&self) -> &GaussianCore {
        &self.noise
    }

    /// One-step mean `f(x)`.
    pub fn mean(&self, x_prev: &[f64]) -> Vec<f64> {
        (self.drift)(x_prev)
    }

    /// Jacobian of the one-step mean at `x`.
    pub fn mean_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.drift_jacobian)(x)
    }

    pub fn log_density(&self, x_next: &[f64], x_prev: &[f64]) -> f64 {
        let mean = self.mean(x_prev);
        let diff: Vec<f64> = x_next.iter().zip(&mean).map(|(a, b)| a - b).collect();
        self.noise.log_density_diff(&diff)
    }

    /// `grad_{x'} log p(x'|x) = -Q^{-1}(x' - f(x))`.
    pub fn grad_next(&self, x_next: &[f64], x_prev: &[f64]) -> Vec<f64> {
        let mean = self.mean(x_prev);
        let diff: Vec<f64> = x_next.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; self.state_dim()];
        self.noise.add_scaled_grad(&diff, 1.0, &mut out);
        out
    }

    /// `grad_{x} log p(x'|x) = J_f(x)^T Q^{-1}(x' - f(x))`.
    pub fn grad_prev(&self, x_next: &[f64], x_prev: &[f64]) -> Vec<f64> {
        let d = self.state_dim();
        let mean = self.mean(x_prev);
        let diff: Vec<f64> = x_next.iter().zip(&mean).map(|(a, b)| a - b).collect();
        // s = Q^{-1} diff
        let mut s = vec![0.0; d];
        self.noise.add_scaled_grad(&diff, -1.0, &mut s);
        let jac = self.mean_jacobian(x_prev);
        let mut out = vec![0.0; d];
        for c in 0..d {
            let mut acc = 0.0;
            for r in 0..d {
                acc += jac[(r, c)] * s[r];
            }
            out[c] = acc;
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, x_prev: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = self.mean(x_prev);
        let offset = self.noise.sample_offset(rng);
        for (o, v) in out.iter_mut().zip(offset) {
            *o += v;
        }
        out
    }
}

/// Gaussian observation `z ~ N(h(x), R)` with observation map `h` and
/// constant noise covariance `R`.
pub struct GaussianObservationModel {
    obs_map: VectorFn,
    obs_jacobian: JacobianFn,
    noise: GaussianCore,
}

impl GaussianObservationModel {
    pub fn new(
        obs_map: VectorFn,
        obs_jacobian: JacobianFn,
        noise_cov: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let noise = GaussianCore::new(noise_cov, "observation noise covariance")?;
        Ok(Self {
            obs_map,
            obs_jacobian,
            noise,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise.cov
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        (self.obs_map)(x)
    }

    pub fn log_likelihood(&self, z: &[f64], x: &[f64]) -> f64 {
        let mean = self.mean(x);
        let diff: Vec<f64> = z.iter().zip(&mean).map(|(a, b)| a - b).collect();
        self.noise.log_density_diff(&diff)
    }

    /// `grad_x log p(z|x) = J_h(x)^T R^{-1} (z - h(x))`, length `state_dim`.
    pub fn grad_state(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let l = self.obs_dim();
        let mean = self.mean(x);
        let diff: Vec<f64> = z.iter().zip(&mean).map(|(a, b)| a - b).collect();
        // s = R^{-1}(z - h(x))
        let mut s = vec![0.0; l];
        self.noise.add_scaled_grad(&diff, -1.0, &mut s);
        let jac = (self.obs_jacobian)(x); // l x d
        let d = jac.ncols();
        let mut out = vec![0.0; d];
        for c in 0..d {
            let mut acc = 0.0;
            for r in 0..l {
                acc += jac[(r, c)] * s[r];
            }
            out[c] = acc;
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = self.mean(x);
        let offset = self.noise.sample_offset(rng);
        for (o, v) in out.iter_mut().zip(offset) {
            *o += v;
        }
        out
    }
}

/// Gaussian initial distribution `x_1 ~ N(mean, cov)`.
pub struct InitialDistribution {
    mean: Vec<f64>,
    noise: GaussianCore,
}

impl InitialDistribution {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, ModelError> {
        if cov.nrows() != mean.len() {
            return Err(ModelError::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let noise = GaussianCore::new(cov, "initial covariance")?;
        Ok(Self { mean, noise })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        self.noise.cov()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.noise.log_density_diff(&diff)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; self.dim()];
        self.noise.add_scaled_grad(&diff, 1.0, &mut out);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = self.mean.clone();
        let offset = self.noise.sample_offset(rng);
        for (o, v) in out.iter_mut().zip(offset) {
            *o += v;
        }
        out
    }
}

/// A complete discrete-time state-space model: initial distribution, Markov
/// transition and observation likelihood.
pub struct StateSpaceModel {
    state_dim: usize,
    obs_dim: usize,
    initial: InitialDistribution,
    transition: GaussianTransitionModel,
    observation: GaussianObservationModel,
}

impl StateSpaceModel {
    pub fn new(
        initial: InitialDistribution,
        transition: GaussianTransitionModel,
        observation: GaussianObservationModel,
    ) -> Result<Self, ModelError> {
        let state_dim = transition.state_dim();
        if initial.dim() != state_dim {
            return Err(ModelError::DimensionMismatch {
                expected: state_dim,
                got: initial.dim(),
            });
        }
        let obs_dim = observation.obs_dim();
        Ok(Self {
            state_dim,
            obs_dim,
            initial,
            transition,
            observation,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn initial(&self) -> &InitialDistribution {
        &self.initial
    }

    pub fn transition(&self) -> &GaussianTransitionModel {
        &self.transition
    }

    pub fn observation(&self) -> &GaussianObservationModel {
        &self.observation
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.state_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `log p(x_next | x_prev)`.
    pub fn log_transition(&self, x_next: &[f64], x_prev: &[f64]) -> Result<f64, ModelError> {
        self.check_state(x_next)?;
        self.check_state(x_prev)?;
        Ok(self.transition.log_density(x_next, x_prev))
    }

    /// Gradient of `log p(x_next | x_prev)` with respect to `x_next`.
    pub fn grad_log_transition(
        &self,
        x_next: &[f64],
        x_prev: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        self.check_state(x_next)?;
        self.check_state(x_prev)?;
        Ok(self.transition.grad_next(x_next, x_prev))
    }

    /// `log p(z | x)`.
    pub fn log_likelihood(&self, z: &[f64], x: &[f64]) -> Result<f64, ModelError> {
        if z.len() != self.obs_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.obs_dim,
                got: z.len(),
            });
        }
        self.check_state(x)?;
        Ok(self.observation.log_likelihood(z, x))
    }

    /// Gradient of `log p(z | x)` with respect to the state `x`.
    pub fn grad_log_likelihood(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if z.len() != self.obs_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.obs_dim,
                got: z.len(),
            });
        }
        self.check_state(x)?;
        Ok(self.observation.grad_state(z, x))
    }

    /// Samples one state/observation trajectory: `x_1 ~ p(x_1)`,
    /// `x_{t+1} ~ p(.|x_t)`, `z_t ~ p(.|x_t)`. Draws alternate state then
    /// observation, so a fixed seed reproduces the trajectory exactly.
    #[allow(clippy::type_complexity)]
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        steps: usize,
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ModelError> {
        if steps == 0 {
            return Err(ModelError::NoSteps);
        }
        let mut states = Vec::with_capacity(steps);
        let mut observations = Vec::with_capacity(steps);
        let mut x = self.initial.sample(rng);
        for t in 0..steps {
            observations.push(self.observation.sample(&x, rng));
            states.push(x.clone());
            if t + 1 < steps {
                x = self.transition.sample(&x, rng);
            }
        }
        Ok((states, observations))
    }
}

/// A continuous-time model
/// `dx = a(x) dt + sigma dW`, `dy = h_c(x) dt + sigma_V dV`,
/// together with the Euler step size used to discretize it.
pub struct ContinuousModelSpec {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub sde_drift: VectorFn,
    pub sde_drift_jacobian: JacobianFn,
    pub sde_diffusion: DMatrix<f64>,
    pub obs_drift: VectorFn,
    pub obs_jacobian: JacobianFn,
    pub obs_diffusion: DMatrix<f64>,
    pub dt: f64,
    pub initial_mean: Vec<f64>,
    pub initial_cov: DMatrix<f64>,
}

/// Euler-discretizes a continuous-time model:
/// `f(x) = x + a(x) dt`, `Q = sigma sigma^T dt`, and, with the observation
/// read as `z_t := (y_{t+dt} - y_t)/dt`, `R_eff = sigma_V sigma_V^T / dt`.
pub fn discretize(spec: ContinuousModelSpec) -> Result<StateSpaceModel, ModelError> {
    let ContinuousModelSpec {
        state_dim,
        obs_dim: _,
        sde_drift,
        sde_drift_jacobian,
        sde_diffusion,
        obs_drift,
        obs_jacobian,
        obs_diffusion,
        dt,
        initial_mean,
        initial_cov,
    } = spec;
    if dt <= 0.0 || !dt.is_finite() {
        return Err(ModelError::NonPositiveDt(dt));
    }

    let q = &sde_diffusion * sde_diffusion.transpose() * dt;
    let r_eff = &obs_diffusion * obs_diffusion.transpose() / dt;

    let drift: VectorFn = Box::new(move |x: &[f64]| {
        let a = (sde_drift)(x);
        x.iter().zip(a).map(|(xi, ai)| xi + ai * dt).collect()
    });
    let d = state_dim;
    let drift_jacobian: JacobianFn = Box::new(move |x: &[f64]| {
        let ja = (sde_drift_jacobian)(x);
        DMatrix::identity(d, d) + ja * dt
    });

    let transition = GaussianTransitionModel::new(drift, drift_jacobian, q)?;
    let observation = GaussianObservationModel::new(obs_drift, obs_jacobian, r_eff)?;
    let initial = InitialDistribution::new(initial_mean, initial_cov)?;
    StateSpaceModel::new(initial, transition, observation)
}

/// Scalar linear-Gaussian model
/// `dx = drift * x dt + diffusion dW`, `dy = obs_gain * x dt + obs_diffusion dV`.
pub fn linear_gaussian_spec(
    drift: f64,
    diffusion: f64,
    obs_gain: f64,
    obs_diffusion: f64,
    initial_mean: f64,
    initial_var: f64,
    dt: f64,
) -> ContinuousModelSpec {
    ContinuousModelSpec {
        state_dim: 1,
        obs_dim: 1,
        sde_drift: Box::new(move |x: &[f64]| vec![drift * x[0]]),
        sde_drift_jacobian: Box::new(move |_: &[f64]| DMatrix::from_element(1, 1, drift)),
        sde_diffusion: DMatrix::from_element(1, 1, diffusion),
        obs_drift: Box::new(move |x: &[f64]| vec![obs_gain * x[0]]),
        obs_jacobian: Box::new(move |_: &[f64]| DMatrix::from_element(1, 1, obs_gain)),
        obs_diffusion: DMatrix::from_element(1, 1, obs_diffusion),
        dt,
        initial_mean: vec![initial_mean],
        initial_cov: DMatrix::from_element(1, 1, initial_var),
    }
}

/// Scalar Benes model
/// `dx = mu * sigma_b * tanh((mu/sigma_b) x) dt + sigma_b dW`,
/// `dy = (h1 x + h1 h2) dt + dV`.
///
/// The initial state of the exactly solvable problem is the point `x0`; it is
/// widened here to a Gaussian of variance `initial_var` so that the prior is
/// differentiable.
pub fn benes_spec(
    mu: f64,
    sigma_b: f64,
    h1: f64,
    h2: f64,
    x0: f64,
    initial_var: f64,
    dt: f64,
) -> ContinuousModelSpec {
    let ratio = mu / sigma_b;
    ContinuousModelSpec {
        state_dim: 1,
        obs_dim: 1,
        sde_drift: Box::new(move |x: &[f64]| vec![mu * sigma_b * (ratio * x[0]).tanh()]),
        sde_drift_jacobian: Box::new(move |x: &[f64]| {
            let c = (ratio * x[0]).cosh();
            DMatrix::from_element(1, 1, mu * mu / (c * c))
        }),
        sde_diffusion: DMatrix::from_element(1, 1, sigma_b),
        obs_drift: Box::new(move |x: &[f64]| vec![h1 * x[0] + h1 * h2]),
        obs_jacobian: Box::new(move |_: &[f64]| DMatrix::from_element(1, 1, h1)),
        obs_diffusion: DMatrix::from_element(1, 1, 1.0),
        dt,
        initial_mean: vec![x0],
        initial_cov: DMatrix::from_element(1, 1, initial_var),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;

    fn paper_linear() -> StateSpaceModel {
        discretize(linear_gaussian_spec(-0.5, 1.0, 3.0, 0.5, 1.0, 1.0, 0.02)).unwrap()
    }

    fn paper_benes() -> StateSpaceModel {
        discretize(benes_spec(0.1, 0.3, 5.0, 0.0, 0.0, 1e-4, 0.02)).unwrap()
    }

    /// Central finite difference of a scalar function of a state vector.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(got: &[f64], fd: &[f64], rel: f64) {
        let err: f64 = got
            .iter()
            .zip(fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        assert!(
            err <= rel * scale,
            "gradient mismatch: got {got:?}, fd {fd:?}"
        );
    }

    #[test]
    fn discretize_linear_constants() {
        let m = paper_linear();
        // f(x) = 0.99 x, Q = 0.02, R_eff = 0.25/0.02 = 12.5
        assert_relative_eq!(m.transition().mean(&[1.0])[0], 0.99, epsilon = 1e-15);
        assert_relative_eq!(m.transition().mean(&[-2.0])[0], -1.98, epsilon = 1e-15);
        assert_relative_eq!(m.transition().noise_cov()[(0, 0)], 0.02, epsilon = 1e-15);
        assert_relative_eq!(m.observation().noise_cov()[(0, 0)], 12.5, epsilon = 1e-12);
        assert_relative_eq!(m.observation().mean(&[2.0])[0], 6.0, epsilon = 1e-15);
    }

    #[test]
    fn discretize_driftless_unit_step() {
        let spec = ContinuousModelSpec {
            state_dim: 2,
            obs_dim: 1,
            sde_drift: Box::new(|_| vec![0.0, 0.0]),
            sde_drift_jacobian: Box::new(|_| DMatrix::zeros(2, 2)),
            sde_diffusion: DMatrix::identity(2, 2),
            obs_drift: Box::new(|x: &[f64]| vec![x[0]]),
            obs_jacobian: Box::new(|_| DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
            obs_diffusion: DMatrix::identity(1, 1),
            dt: 1.0,
            initial_mean: vec![0.0, 0.0],
            initial_cov: DMatrix::identity(2, 2),
        };
        let m = discretize(spec).unwrap();
        let f = m.transition().mean(&[0.3, -0.7]);
        assert_eq!(f, vec![0.3, -0.7]);
        assert_eq!(m.transition().noise_cov(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn discretize_benes_constants() {
        let m = paper_benes();
        // f(x) = x + 0.03 tanh(x/3) * 0.02, Q = 0.09 * 0.02, R_eff = 1/0.02
        let x = 1.7f64;
        let expect = x + 0.1 * 0.3 * (0.1 / 0.3 * x).tanh() * 0.02;
        assert_relative_eq!(m.transition().mean(&[x])[0], expect, epsilon = 1e-15);
        assert_relative_eq!(m.transition().noise_cov()[(0, 0)], 0.0018, epsilon = 1e-15);
        assert_relative_eq!(m.observation().noise_cov()[(0, 0)], 50.0, epsilon = 1e-12);
    }

    #[test]
    fn discretize_rejects_bad_inputs() {
        let bad_dt = discretize(linear_gaussian_spec(-0.5, 1.0, 3.0, 0.5, 1.0, 1.0, 0.0));
        assert!(matches!(bad_dt, Err(ModelError::NonPositiveDt(_))));
        let singular = discretize(linear_gaussian_spec(-0.5, 0.0, 3.0, 0.5, 1.0, 1.0, 0.02));
        assert!(matches!(
            singular,
            Err(ModelError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn discretize_is_deterministic() {
        let a = paper_linear();
        let b = paper_linear();
        assert_eq!(a.transition().noise_cov(), b.transition().noise_cov());
        assert_eq!(a.observation().noise_cov(), b.observation().noise_cov());
        assert_eq!(a.transition().mean(&[0.37]), b.transition().mean(&[0.37]));
    }

    #[test]
    fn simulate_deterministic_limit() {
        // Near-zero noise: the trajectory collapses onto x_t = 0.99^(t-1).
        let spec = linear_gaussian_spec(-0.5, 1e-6, 3.0, 1e-6, 1.0, 1e-24, 0.02);
        let m = discretize(spec).unwrap();
        let (states, _) = m.simulate(30, &mut substream(1, 0, 0)).unwrap();
        for (t, x) in states.iter().enumerate() {
            assert!((x[0] - 0.99f64.powi(t as i32)).abs() < 1e-6);
        }
    }

    #[test]
    fn simulate_transition_variance() {
        let m = paper_linear();
        let mut rng = substream(2, 0, 0);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| m.transition().sample(&[0.0], &mut rng)[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.02).abs() < 0.05 * 0.02, "var = {var}");
        assert!(mean.abs() < 0.05 * 0.02f64.sqrt());
    }

    #[test]
    fn simulate_is_reproducible() {
        let m = paper_linear();
        let (sa, za) = m.simulate(50, &mut substream(3, 0, 0)).unwrap();
        let (sb, zb) = m.simulate(50, &mut substream(3, 0, 0)).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(za, zb);
        assert_eq!(sa.len(), 50);
        assert_eq!(za.len(), 50);
    }

    #[test]
    fn simulate_rejects_zero_steps() {
        let m = paper_linear();
        assert!(matches!(
            m.simulate(0, &mut substream(0, 0, 0)),
            Err(ModelError::NoSteps)
        ));
    }

    #[test]
    fn grad_log_transition_closed_form() {
        let m = paper_linear();
        // x_next = f(x_prev) is the mode: zero gradient.
        let g = m.grad_log_transition(&[0.99], &[1.0]).unwrap();
        assert!(g[0].abs() < 1e-12);
        // Hand value: -(1 - 0.99)/0.02 = -0.5.
        let g = m.grad_log_transition(&[1.0], &[1.0]).unwrap();
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-10);
    }

    #[test]
    fn grad_log_transition_dimension_mismatch() {
        let m = paper_linear();
        assert!(m.grad_log_transition(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (name, m) in [("linear", paper_linear()), ("benes", paper_benes())] {
            let mut rng = substream(4, 0, 0);
            for _ in 0..100 {
                let x: f64 = rng.random_range(-2.0..2.0);
                let xp: f64 = rng.random_range(-2.0..2.0);
                let z: f64 = rng.random_range(-6.0..6.0);

                let g = m.transition().grad_next(&[x], &[xp]);
                let fd = fd_grad(|v| m.transition().log_density(v, &[xp]), &[x], 1e-5);
                assert_grad_close(&g, &fd, 1e-5);

                let g = m.transition().grad_prev(&[x], &[xp]);
                let fd = fd_grad(|v| m.transition().log_density(&[x], v), &[xp], 1e-5);
                assert_grad_close(&g, &fd, 1e-5);

                let g = m.observation().grad_state(&[z], &[x]);
                let fd = fd_grad(|v| m.observation().log_likelihood(&[z], v), &[x], 1e-5);
                assert_grad_close(&g, &fd, 1e-5);

                let g = m.initial().grad(&[x]);
                let fd = fd_grad(|v| m.initial().log_density(v), &[x], 1e-5);
                assert_grad_close(&g, &fd, 1e-5);
                let _ = name;
            }
        }
    }

    #[test]
    fn sampler_matches_density_on_grid() {
        // Histogram of transition samples against exp(log_transition).
        let m = paper_linear();
        let mut rng = substream(5, 0, 0);
        let n = 100_000;
        let x_prev = [0.5];
        let mean = m.transition().mean(&x_prev)[0];
        let std = 0.02f64.sqrt();
        let bins = 40;
        let lo = mean - 4.0 * std;
        let width = 8.0 * std / bins as f64;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let x = m.transition().sample(&x_prev, &mut rng)[0];
            let b = ((x - lo) / width).floor();
            if (0.0..bins as f64).contains(&b) {
                counts[b as usize] += 1;
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            let center = lo + (k as f64 + 0.5) * width;
            let p = m.log_transition(&[center], &x_prev).unwrap().exp() * width;
            let freq = c as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 5.0 * se + 2e-4,
                "bin {k}: freq {freq}, p {p}"
            );
        }
    }

    #[test]
    fn multivariate_sampler_moments() {
        // 2-D correlated covariance exercises the Cholesky path.
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let core = GaussianCore::new(cov.clone(), "test").unwrap();
        let mut rng = substream(6, 0, 0);
        let n = 20_000;
        let mut sum = [0.0; 2];
        let mut sum_sq = [[0.0; 2]; 2];
        for _ in 0..n {
            let v = core.sample_offset(&mut rng);
            for i in 0..2 {
                sum[i] += v[i];
                for j in 0..2 {
                    sum_sq[i][j] += v[i] * v[j];
                }
            }
        }
        for i in 0..2 {
            assert!(sum[i].abs() / (n as f64) < 0.02);
            for j in 0..2 {
                let emp = sum_sq[i][j] / n as f64;
                assert!((emp - cov[(i, j)]).abs() < 0.05 * cov[(i, i)].max(cov[(j, j)]));
            }
        }
    }
}
