//! Exact posteriors for validation: the Kalman-Bucy filter for the scalar
//! linear model (Euler-integrated on the experiment grid), the exact
//! discrete-time Kalman filter used as a correctness oracle, and the Benes
//! two-Gaussian-mixture posterior.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("posterior variance collapsed to {variance} at time {time}; reduce dt")]
    VarianceCollapsed { variance: f64, time: f64 },
    #[error("the Benes posterior needs at least one observation increment")]
    EmptyObservationPath,
}

/// Scalar Kalman-Bucy filter for
/// `dx = drift * x dt + sqrt(process_noise_var) dW`,
/// `dy = obs_gain * x dt + sqrt(obs_noise_var) dV`,
/// integrated with explicit Euler on the same grid as the discretized
/// filters.
#[derive(Clone, Copy, Debug)]
pub struct KalmanBucy {
    pub drift: f64,
    pub obs_gain: f64,
    pub process_noise_var: f64,
    pub obs_noise_var: f64,
}

/// Posterior mean/variance of the Kalman-Bucy filter at `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: f64,
    pub variance: f64,
    pub time: f64,
}

impl KalmanBucy {
    /// Right-hand side of the Riccati equation
    /// `dSigma/dt = 2 a Sigma + sigma^2 - Sigma^2 h^2 / r`.
    pub fn riccati_rhs(&self, variance: f64) -> f64 {
        2.0 * self.drift * variance + self.process_noise_var
            - variance * variance * self.obs_gain * self.obs_gain / self.obs_noise_var
    }

    /// Kalman gain `K = Sigma h / r`.
    pub fn gain(&self, variance: f64) -> f64 {
        variance * self.obs_gain / self.obs_noise_var
    }

    /// Positive root of the Riccati right-hand side: the stationary
    /// posterior variance.
    pub fn stationary_variance(&self) -> f64 {
        let a = self.drift;
        let c = self.obs_gain * self.obs_gain / self.obs_noise_var;
        (a + (a * a + c * self.process_noise_var).sqrt()) / c
    }

    /// One Euler step driven by the observation increment `dy`.
    /// The gain uses the pre-update variance.
    pub fn step(&self, state: KalmanState, dy: f64, dt: f64) -> Result<KalmanState, ReferenceError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(ReferenceError::NonPositiveDt(dt));
        }
        let gain = self.gain(state.variance);
        let mean = state.mean
            + self.drift * state.mean * dt
            + gain * (dy - self.obs_gain * state.mean * dt);
        let variance = state.variance + self.riccati_rhs(state.variance) * dt;
        let time = state.time + dt;
        if variance <= 0.0 {
            return Err(ReferenceError::VarianceCollapsed { variance, time });
        }
        Ok(KalmanState {
            mean,
            variance,
            time,
        })
    }
}

/// Exact discrete-time Kalman filter for the Euler-discretized scalar
/// linear-Gaussian model `x' = transition * x + w`, `z = obs_gain * x + v`.
/// This is the true posterior the particle filters approximate, so it serves
/// as the correctness oracle in filter tests (the Euler-integrated
/// [`KalmanBucy`] carries an O(dt) transient error against it).
#[derive(Clone, Copy, Debug)]
pub struct DiscreteKalman {
    pub transition: f64,
    pub process_var: f64,
    pub obs_gain: f64,
    pub obs_var: f64,
}

impl DiscreteKalman {
    /// Prediction through the dynamics.
    pub fn predict(&self, mean: f64, var: f64) -> (f64, f64) {
        (
            self.transition * mean,
            self.transition * self.transition * var + self.process_var,
        )
    }

    /// Bayes update of a Gaussian prior with one observation.
    pub fn correct(&self, mean: f64, var: f64, z: f64) -> (f64, f64) {
        let s = self.obs_gain * self.obs_gain * var + self.obs_var;
        let k = var * self.obs_gain / s;
        (
            mean + k * (z - self.obs_gain * mean),
            (1.0 - k * self.obs_gain) * var,
        )
    }

    /// Predict-correct step.
    pub fn step(&self, mean: f64, var: f64, z: f64) -> (f64, f64) {
        let (m, v) = self.predict(mean, var);
        self.correct(m, v, z)
    }
}

/// Parameters of the Benes filtering problem
/// `dx = mu sigma_b tanh((mu/sigma_b) x) dt + sigma_b dW`,
/// `dy = (h1 x + h1 h2) dt + dV`, started from the point `x0`.
#[derive(Clone, Copy, Debug)]
pub struct BenesParams {
    pub mu: f64,
    pub sigma_b: f64,
    pub h1: f64,
    pub h2: f64,
    pub x0: f64,
}

/// The Benes posterior at a fixed time: the two-component Gaussian mixture
/// `c N(a - b, sigma_sq) + (1 - c) N(a + b, sigma_sq)`.
#[derive(Clone, Copy, Debug)]
pub struct BenesPosterior {
    pub a: f64,
    pub b: f64,
    pub sigma_sq: f64,
    pub c: f64,
    /// The weighted stochastic integral of the observation path that feeds
    /// `a`. (Displayed squared in some write-ups, but it enters `a` linearly
    /// and can be negative, so it is kept as the plain integral here.)
    pub psi: f64,
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

impl BenesPosterior {
    /// Mixture density at `x`.
    pub fn mixture_density(&self, x: f64) -> f64 {
        self.c * normal_pdf(x, self.a - self.b, self.sigma_sq)
            + (1.0 - self.c) * normal_pdf(x, self.a + self.b, self.sigma_sq)
    }

    /// Posterior mean `a + b (1 - 2c)`.
    pub fn mean(&self) -> f64 {
        self.a + self.b * (1.0 - 2.0 * self.c)
    }

    /// Posterior variance `sigma_sq + 4 c (1 - c) b^2`.
    pub fn variance(&self) -> f64 {
        self.sigma_sq + 4.0 * self.c * (1.0 - self.c) * self.b * self.b
    }
}

/// Evaluates the Benes posterior at time `t = obs_increments.len() * dt`.
///
/// `obs_increments` are the increments `dy` of the observation path on the
/// same grid the filters consume; the stochastic integral in `psi` uses a
/// left-point Riemann sum over them.
pub fn benes_posterior(
    obs_increments: &[f64],
    dt: f64,
    params: &BenesParams,
) -> Result<BenesPosterior, ReferenceError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(ReferenceError::NonPositiveDt(dt));
    }
    if obs_increments.is_empty() {
        return Err(ReferenceError::EmptyObservationPath);
    }
    let kappa = params.h1 * params.sigma_b;
    let t = obs_increments.len() as f64 * dt;
    let kt = kappa * t;

    let sinh_kt = kt.sinh();
    let psi: f64 = obs_increments
        .iter()
        .enumerate()
        .map(|(k, dy)| (kappa * (k as f64) * dt).sinh() / sinh_kt * dy)
        .sum();

    let tanh_kt = kt.tanh();
    let a = params.sigma_b * psi * tanh_kt + (params.h2 + params.x0) / kt.cosh() - params.h2;
    let b = params.mu / params.h1 * tanh_kt;
    let sigma_sq = params.sigma_b / params.h1 * tanh_kt;
    let c = 1.0 / (1.0 + (2.0 * a * b / params.sigma_b / tanh_kt).exp());

    Ok(BenesPosterior {
        a,
        b,
        sigma_sq,
        c,
        psi,
    })
}
