//! Filtering backends over a shared step interface: a sequential importance
//! resampling (SIR) particle filter, a sequential Stein filter, and a
//! sliding-window Stein filter, plus construction of the unnormalized
//! posterior targets the Stein variants descend.
//!
//! Every backend consumes one observation per step. The Stein backends keep
//! all particles equally weighted: each step initializes from the dynamics
//! proposal `x ~ p(. | x_t^i)` and replaces importance weighting with an SVGD
//! run against the step's posterior target.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::model::StateSpaceModel;
use crate::svgd::{self, LogDensityTarget, ParticleEnsemble, SvgdConfig, SvgdError};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("state holds a {found} backend, but a {expected} state was required")]
    BackendMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("observation has dimension {got}, model expects {expected}")]
    ObservationDim { expected: usize, got: usize },
    #[error("ensemble must contain at least one particle")]
    EmptyEnsemble,
    #[error("weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("ESS threshold must lie in (0, 1], got {0}")]
    InvalidEssThreshold(f64),
    #[error("window length must be at least 1")]
    InvalidWindow,
    #[error("a target needs at least one observation")]
    NoObservations,
    #[error("trajectory dimension {dim} is not a multiple of the state dimension {state_dim}")]
    RaggedTrajectory { dim: usize, state_dim: usize },
    #[error("filter not initialized: no posterior before the first step")]
    NotInitialized,
    #[error("svgd failed at filter step {step}: {source}")]
    Svgd {
        step: usize,
        #[source]
        source: SvgdError,
    },
}

/// Particles plus normalized importance weights (SIR only).
#[derive(Clone, Debug)]
pub struct WeightedEnsemble {
    particles: ParticleEnsemble,
    weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Builds a weighted ensemble from non-negative raw weights, normalizing
    /// them to sum to one.
    pub fn new(particles: ParticleEnsemble, weights: Vec<f64>) -> Result<Self, FilterError> {
        if particles.n() == 0 {
            return Err(FilterError::EmptyEnsemble);
        }
        if weights.len() != particles.n() {
            return Err(FilterError::InvalidWeights);
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FilterError::InvalidWeights);
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: ParticleEnsemble) -> Result<Self, FilterError> {
        let n = particles.n();
        if n == 0 {
            return Err(FilterError::EmptyEnsemble);
        }
        let w = 1.0 / n as f64;
        Ok(Self {
            particles,
            weights: vec![w; n],
        })
    }

    pub fn particles(&self) -> &ParticleEnsemble {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.particles.n()
    }

    /// Effective sample size `1 / sum w_i^2`, in `[1, n]`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Draws `n` samples through the cumulative weights with one uniform offset
/// `u ~ U[0, 1/n)` and stride `1/n`; the output carries exactly uniform
/// weights.
pub fn resample_systematic<R: Rng + ?Sized>(
    ensemble: &WeightedEnsemble,
    rng: &mut R,
) -> WeightedEnsemble {
    let n = ensemble.n();
    let dim = ensemble.particles.dim();
    let u: f64 = rng.random::<f64>() / n as f64;
    let mut out = ParticleEnsemble::zeros(n, dim);
    let mut cum = ensemble.weights[0];
    let mut i = 0;
    for k in 0..n {
        let point = u + k as f64 / n as f64;
        while cum <= point && i + 1 < n {
            i += 1;
            cum += ensemble.weights[i];
        }
        out.row_mut(k).copy_from_slice(ensemble.particles.row(i));
    }
    WeightedEnsemble {
        particles: out,
        weights: vec![1.0 / n as f64; n],
    }
}

/// `n` trajectories of `window` state blocks each, stored as an
/// `n x (window * state_dim)` ensemble with blocks ordered oldest to newest.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    particles: ParticleEnsemble,
    state_dim: usize,
    window: usize,
}

impl TrajectoryEnsemble {
    pub fn from_states(states: &ParticleEnsemble) -> Self {
        Self {
            particles: states.clone(),
            state_dim: states.dim(),
            window: 1,
        }
    }

    pub fn from_ensemble(
        particles: ParticleEnsemble,
        state_dim: usize,
    ) -> Result<Self, FilterError> {
        if state_dim == 0 || particles.dim() % state_dim != 0 || particles.dim() == 0 {
            return Err(FilterError::RaggedTrajectory {
                dim: particles.dim(),
                state_dim,
            });
        }
        let window = particles.dim() / state_dim;
        Ok(Self {
            particles,
            state_dim,
            window,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n(&self) -> usize {
        self.particles.n()
    }

    pub fn as_ensemble(&self) -> &ParticleEnsemble {
        &self.particles
    }

    /// Copies block `k` (0 = oldest) into a standalone state ensemble.
    pub fn block(&self, k: usize) -> ParticleEnsemble {
        assert!(k < self.window);
        let d = self.state_dim;
        let mut out = ParticleEnsemble::zeros(self.n(), d);
        for i in 0..self.n() {
            let row = self.particles.row(i);
            out.row_mut(i).copy_from_slice(&row[k * d..(k + 1) * d]);
        }
        out
    }

    pub fn newest_block(&self) -> ParticleEnsemble {
        self.block(self.window - 1)
    }

    pub fn oldest_block(&self) -> ParticleEnsemble {
        self.block(0)
    }

    /// Appends a new newest block, keeping all stored blocks.
    pub fn extend(&self, new_block: &ParticleEnsemble) -> Self {
        self.rebuild(0, new_block)
    }

    /// Drops the oldest block and appends a new newest block; the window
    /// length is unchanged.
    pub fn slide(&self, new_block: &ParticleEnsemble) -> Self {
        self.rebuild(1, new_block)
    }

    fn rebuild(&self, keep_from: usize, new_block: &ParticleEnsemble) -> Self {
        assert_eq!(new_block.n(), self.n());
        assert_eq!(new_block.dim(), self.state_dim);
        let d = self.state_dim;
        let kept = self.window - keep_from;
        let mut out = ParticleEnsemble::zeros(self.n(), (kept + 1) * d);
        for i in 0..self.n() {
            let row = self.particles.row(i);
            let dst = out.row_mut(i);
            dst[..kept * d].copy_from_slice(&row[keep_from * d..]);
            dst[kept * d..].copy_from_slice(new_block.row(i));
        }
        Self {
            particles: out,
            state_dim: d,
            window: kept + 1,
        }
    }
}

/// What ties down the first block of a chain target.
enum ChainAnchor {
    /// The model prior `p(x_1)`.
    Prior,
    /// The equally weighted transition mixture `(1/n) sum_i p(x | x_t^i)`;
    /// stores the propagated centers `f(x_t^i)` flat, `n x d`.
    Mixture { centers: Vec<f64>, n: usize },
}

/// Unnormalized log-posterior over a chain of `blocks` state blocks:
/// anchor on the first block, transition factors between consecutive blocks,
/// and one observation likelihood per block. With a single block and a
/// mixture anchor this is exactly the sequential one-step posterior target.
pub struct ChainTarget<'a> {
    model: &'a StateSpaceModel,
    anchor: ChainAnchor,
    observations: Vec<Vec<f64>>,
    blocks: usize,
}

impl<'a> ChainTarget<'a> {
    fn new(
        model: &'a StateSpaceModel,
        anchor: ChainAnchor,
        observations: Vec<Vec<f64>>,
    ) -> Result<Self, FilterError> {
        if observations.is_empty() {
            return Err(FilterError::NoObservations);
        }
        for z in &observations {
            if z.len() != model.obs_dim() {
                return Err(FilterError::ObservationDim {
                    expected: model.obs_dim(),
                    got: z.len(),
                });
            }
        }
        let blocks = observations.len();
        Ok(Self {
            model,
            anchor,
            observations,
            blocks,
        })
    }

    /// Softmax-weighted mixture gradient at `x`:
    /// `sum_i s_i(x) grad log p(x | x_t^i)` with
    /// `s_i = softmax_i(log p(x | x_t^i))`, evaluated with a max shift.
    /// Returns the mixture log-density `log[(1/n) sum_i p(x|x_t^i)]`.
    fn mixture_grad(&self, centers: &[f64], n: usize, x: &[f64], out: &mut [f64]) -> f64 {
        let noise = self.model.transition().noise();
        let d = self.model.state_dim();
        let mut logs = vec![0.0; n];
        let mut diff = vec![0.0; d];
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let c = &centers[i * d..(i + 1) * d];
            for m in 0..d {
                diff[m] = x[m] - c[m];
            }
            let l = noise.log_density_diff(&diff);
            logs[i] = l;
            if l > max {
                max = l;
            }
        }
        let mut total = 0.0;
        let mut weights = logs;
        for w in weights.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        for i in 0..n {
            let c = &centers[i * d..(i + 1) * d];
            for m in 0..d {
                diff[m] = x[m] - c[m];
            }
            noise.add_scaled_grad(&diff, weights[i] / total, out);
        }
        max + (total / n as f64).ln()
    }
}

impl LogDensityTarget for ChainTarget<'_> {
    fn dim(&self) -> usize {
        self.blocks * self.model.state_dim()
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let d = self.model.state_dim();
        let w = self.blocks;
        debug_assert_eq!(x.len(), w * d);
        let mut g = vec![0.0; w * d];

        // Anchor on the first block.
        match &self.anchor {
            ChainAnchor::Prior => {
                let pg = self.model.initial().grad(&x[..d]);
                g[..d].copy_from_slice(&pg);
            }
            ChainAnchor::Mixture { centers, n } => {
                self.mixture_grad(centers, *n, &x[..d], &mut g[..d]);
            }
        }

        // Transition factors p(x_{k} | x_{k-1}) within the chain: each factor
        // contributes to the incoming block k and the outgoing block k-1.
        let transition = self.model.transition();
        for k in 1..w {
            let prev = &x[(k - 1) * d..k * d];
            let cur = &x[k * d..(k + 1) * d];
            let inc = transition.grad_next(cur, prev);
            for m in 0..d {
                g[k * d + m] += inc[m];
            }
            let out_g = transition.grad_prev(cur, prev);
            for m in 0..d {
                g[(k - 1) * d + m] += out_g[m];
            }
        }

        // One observation likelihood per block.
        let observation = self.model.observation();
        for k in 0..w {
            let lg = observation.grad_state(&self.observations[k], &x[k * d..(k + 1) * d]);
            for m in 0..d {
                g[k * d + m] += lg[m];
            }
        }
        g
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        let d = self.model.state_dim();
        let w = self.blocks;
        let mut logq = match &self.anchor {
            ChainAnchor::Prior => self.model.initial().log_density(&x[..d]),
            ChainAnchor::Mixture { centers, n } => {
                let mut scratch = vec![0.0; d];
                self.mixture_grad(centers, *n, &x[..d], &mut scratch)
            }
        };
        for k in 1..w {
            logq += self
                .model
                .transition()
                .log_density(&x[k * d..(k + 1) * d], &x[(k - 1) * d..k * d]);
        }
        for k in 0..w {
            logq += self
                .model
                .observation()
                .log_likelihood(&self.observations[k], &x[k * d..(k + 1) * d]);
        }
        Some(logq)
    }
}

fn mixture_anchor(prev: &ParticleEnsemble, model: &StateSpaceModel) -> ChainAnchor {
    let d = model.state_dim();
    let mut centers = vec![0.0; prev.n() * d];
    for i in 0..prev.n() {
        let f = model.transition().mean(prev.row(i));
        centers[i * d..(i + 1) * d].copy_from_slice(&f);
    }
    ChainAnchor::Mixture {
        centers,
        n: prev.n(),
    }
}

/// One-step posterior target
/// `log q(x) = log[(1/n) sum_i p(x | x_t^i)] + log p(z | x)`.
pub fn sequential_target<'a>(
    prev: &ParticleEnsemble,
    model: &'a StateSpaceModel,
    z: &[f64],
) -> Result<ChainTarget<'a>, FilterError> {
    if prev.n() == 0 {
        return Err(FilterError::EmptyEnsemble);
    }
    ChainTarget::new(model, mixture_anchor(prev, model), vec![z.to_vec()])
}

/// Trajectory posterior target over `observations.len()` blocks.
///
/// * `anchor = None`: warm-up phase. The first block carries the model prior,
///   so the target is the full chain
///   `p(x_1) prod p(x_k|x_{k-1}) prod p(z_k|x_k)` over `x_{1..=t+1}`.
/// * `anchor = Some(prev)`: steady phase. The first block carries the
///   equally weighted transition mixture from `prev` (the oldest retained
///   block of the previous window); the constant mixture weights `1/n` stand
///   in for the equally weighted posterior factor of the previous window.
pub fn window_target<'a>(
    anchor: Option<&ParticleEnsemble>,
    model: &'a StateSpaceModel,
    observations: &[Vec<f64>],
) -> Result<ChainTarget<'a>, FilterError> {
    let anchor = match anchor {
        Some(prev) => {
            if prev.n() == 0 {
                return Err(FilterError::EmptyEnsemble);
            }
            mixture_anchor(prev, model)
        }
        None => ChainAnchor::Prior,
    };
    ChainTarget::new(model, anchor, observations.to_vec())
}

/// Backend-specific filter state.
#[derive(Clone, Debug)]
enum BackendState {
    Sir {
        ensemble: Option<WeightedEnsemble>,
        n: usize,
        ess_threshold: f64,
        degeneracy_events: u32,
    },
    SteinSequential {
        ensemble: Option<ParticleEnsemble>,
        n: usize,
    },
    SteinWindow {
        trajectories: Option<TrajectoryEnsemble>,
        n: usize,
        window: usize,
        recent_obs: VecDeque<Vec<f64>>,
    },
}

impl BackendState {
    fn name(&self) -> &'static str {
        match self {
            BackendState::Sir { .. } => "sir",
            BackendState::SteinSequential { .. } => "stein-sequential",
            BackendState::SteinWindow { .. } => "stein-window",
        }
    }
}

/// Filter state: a backend plus the number of observations consumed so far.
/// `time_index() == 0` means the filter has not seen an observation yet; the
/// first step of every backend handles its own initialization.
#[derive(Clone, Debug)]
pub struct FilterState {
    time_index: usize,
    backend: BackendState,
}

impl FilterState {
    pub fn new_sir(n: usize, ess_threshold: f64) -> Result<Self, FilterError> {
        if n == 0 {
            return Err(FilterError::EmptyEnsemble);
        }
        if !(ess_threshold > 0.0 && ess_threshold <= 1.0) {
            return Err(FilterError::InvalidEssThreshold(ess_threshold));
        }
        Ok(Self {
            time_index: 0,
            backend: BackendState::Sir {
                ensemble: None,
                n,
                ess_threshold,
                degeneracy_events: 0,
            },
        })
    }

    pub fn new_stein_sequential(n: usize) -> Result<Self, FilterError> {
        if n == 0 {
            return Err(FilterError::EmptyEnsemble);
        }
        Ok(Self {
            time_index: 0,
            backend: BackendState::SteinSequential { ensemble: None, n },
        })
    }

    pub fn new_stein_window(n: usize, window: usize) -> Result<Self, FilterError> {
        if n == 0 {
            return Err(FilterError::EmptyEnsemble);
        }
        if window == 0 {
            return Err(FilterError::InvalidWindow);
        }
        Ok(Self {
            time_index: 0,
            backend: BackendState::SteinWindow {
                trajectories: None,
                n,
                window,
                recent_obs: VecDeque::new(),
            },
        })
    }

    /// Resumes a SIR filter from an explicit weighted ensemble.
    pub fn with_sir_state(
        ensemble: WeightedEnsemble,
        ess_threshold: f64,
        time_index: usize,
    ) -> Result<Self, FilterError> {
        if !(ess_threshold > 0.0 && ess_threshold <= 1.0) {
            return Err(FilterError::InvalidEssThreshold(ess_threshold));
        }
        let n = ensemble.n();
        Ok(Self {
            time_index,
            backend: BackendState::Sir {
                ensemble: Some(ensemble),
                n,
                ess_threshold,
                degeneracy_events: 0,
            },
        })
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    /// Equally weighted state samples of the current posterior. The SIR
    /// backend resamples systematically on demand for this view; its stored
    /// weights are untouched. Stein backends ignore `rng`.
    pub fn posterior_ensemble<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<ParticleEnsemble, FilterError> {
        match &self.backend {
            BackendState::Sir { ensemble, .. } => {
                let we = ensemble.as_ref().ok_or(FilterError::NotInitialized)?;
                Ok(resample_systematic(we, rng).particles)
            }
            BackendState::SteinSequential { ensemble, .. } => {
                Ok(ensemble.clone().ok_or(FilterError::NotInitialized)?)
            }
            BackendState::SteinWindow { trajectories, .. } => Ok(trajectories
                .as_ref()
                .ok_or(FilterError::NotInitialized)?
                .newest_block()),
        }
    }

    /// The weighted ensemble of a SIR backend, when initialized.
    pub fn weighted_ensemble(&self) -> Option<&WeightedEnsemble> {
        match &self.backend {
            BackendState::Sir { ensemble, .. } => ensemble.as_ref(),
            _ => None,
        }
    }

    /// Effective sample size (SIR only).
    pub fn ess(&self) -> Option<f64> {
        self.weighted_ensemble().map(WeightedEnsemble::ess)
    }

    /// Number of total-weight-underflow resets seen so far (SIR only).
    pub fn degeneracy_events(&self) -> u32 {
        match &self.backend {
            BackendState::Sir {
                degeneracy_events, ..
            } => *degeneracy_events,
            _ => 0,
        }
    }

    /// Current trajectory window length (sliding-window backend only).
    pub fn window_len(&self) -> Option<usize> {
        match &self.backend {
            BackendState::SteinWindow { trajectories, .. } => {
                trajectories.as_ref().map(TrajectoryEnsemble::window)
            }
            _ => None,
        }
    }

    fn expect_backend(&self, expected: &'static str) -> Result<(), FilterError> {
        if self.backend.name() != expected {
            return Err(FilterError::BackendMismatch {
                expected,
                found: self.backend.name(),
            });
        }
        Ok(())
    }
}

fn check_obs(model: &StateSpaceModel, z: &[f64]) -> Result<(), FilterError> {
    if z.len() != model.obs_dim() {
        return Err(FilterError::ObservationDim {
            expected: model.obs_dim(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Propagates every particle through the transition sampler in index order.
fn propagate<R: Rng + ?Sized>(
    ens: &ParticleEnsemble,
    model: &StateSpaceModel,
    rng: &mut R,
) -> ParticleEnsemble {
    let mut out = ParticleEnsemble::zeros(ens.n(), ens.dim());
    for i in 0..ens.n() {
        let x = model.transition().sample(ens.row(i), rng);
        out.row_mut(i).copy_from_slice(&x);
    }
    out
}

/// Normalizes log-weights with a max shift. Returns `None` (degeneracy) when
/// no weight is finite.
fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return None;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    Some(w)
}

/// One SIR step: propagate through the dynamics, reweight by the observation
/// likelihood (in log space), renormalize, and resample systematically when
/// `ESS < ess_threshold * n`. A total weight underflow resets to uniform
/// weights and is counted as a degeneracy event.
pub fn sir_step<R: Rng + ?Sized>(
    state: FilterState,
    model: &StateSpaceModel,
    z: &[f64],
    rng: &mut R,
) -> Result<FilterState, FilterError> {
    state.expect_backend("sir")?;
    check_obs(model, z)?;
    let time_index = state.time_index;
    let BackendState::Sir {
        ensemble,
        n,
        ess_threshold,
        mut degeneracy_events,
    } = state.backend
    else {
        unreachable!()
    };

    let (particles, prior_log_w): (ParticleEnsemble, Vec<f64>) = match ensemble {
        None => {
            let d = model.state_dim();
            let init = ParticleEnsemble::sample_with(n, d, rng, |r| model.initial().sample(r));
            (init, vec![0.0; n])
        }
        Some(we) => {
            let moved = propagate(we.particles(), model, rng);
            let log_w = we.weights().iter().map(|w| w.ln()).collect();
            (moved, log_w)
        }
    };

    let log_w: Vec<f64> = (0..n)
        .map(|i| prior_log_w[i] + model.observation().log_likelihood(z, particles.row(i)))
        .collect();

    let weights = match normalize_log_weights(&log_w) {
        Some(w) => w,
        None => {
            degeneracy_events += 1;
            log::warn!(
                "sir: all observation likelihoods vanished at step {}; resetting to uniform weights",
                time_index + 1
            );
            vec![1.0 / n as f64; n]
        }
    };

    let mut we = WeightedEnsemble { particles, weights };
    if we.ess() < ess_threshold * n as f64 {
        we = resample_systematic(&we, rng);
    }

    Ok(FilterState {
        time_index: time_index + 1,
        backend: BackendState::Sir {
            ensemble: Some(we),
            n,
            ess_threshold,
            degeneracy_events,
        },
    })
}

/// Target of the very first Stein step: `log p(z_1|x) + log p(x_1)`.
struct InitialPosteriorTarget<'a> {
    model: &'a StateSpaceModel,
    z: Vec<f64>,
}

impl LogDensityTarget for InitialPosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.model.initial().grad(x);
        let lg = self.model.observation().grad_state(&self.z, x);
        for (a, b) in g.iter_mut().zip(lg) {
            *a += b;
        }
        g
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(
            self.model.initial().log_density(x)
                + self.model.observation().log_likelihood(&self.z, x),
        )
    }
}

/// Shared first step of the Stein backends: sample the prior and run SVGD
/// against `p(z_1|x) p(x_1)`.
fn stein_init_ensemble<R: Rng + ?Sized>(
    model: &StateSpaceModel,
    z1: &[f64],
    n: usize,
    config: &SvgdConfig,
    rng: &mut R,
) -> Result<ParticleEnsemble, FilterError> {
    let d = model.state_dim();
    let init = ParticleEnsemble::sample_with(n, d, rng, |r| model.initial().sample(r));
    let target = InitialPosteriorTarget {
        model,
        z: z1.to_vec(),
    };
    svgd::run(init, &target, config, rng).map_err(|source| FilterError::Svgd { step: 1, source })
}

/// First step of a Stein filter as a standalone operation: returns a
/// sequential backend state at `time_index == 1`.
pub fn stein_initial_step<R: Rng + ?Sized>(
    model: &StateSpaceModel,
    z1: &[f64],
    n: usize,
    config: &SvgdConfig,
    rng: &mut R,
) -> Result<FilterState, FilterError> {
    if n == 0 {
        return Err(FilterError::EmptyEnsemble);
    }
    check_obs(model, z1)?;
    let ensemble = stein_init_ensemble(model, z1, n, config, rng)?;
    Ok(FilterState {
        time_index: 1,
        backend: BackendState::SteinSequential {
            ensemble: Some(ensemble),
            n,
        },
    })
}

/// One sequential Stein step: initialize from the dynamics proposal
/// `x ~ p(.|x_t^i)` and run SVGD against the one-step posterior target.
pub fn stein_sequential_step<R: Rng + ?Sized>(
    state: FilterState,
    model: &StateSpaceModel,
    z: &[f64],
    config: &SvgdConfig,
    rng: &mut R,
) -> Result<FilterState, FilterError> {
    state.expect_backend("stein-sequential")?;
    check_obs(model, z)?;
    let time_index = state.time_index;
    let BackendState::SteinSequential { ensemble, n } = state.backend else {
        unreachable!()
    };

    let new_ensemble = match ensemble {
        None => stein_init_ensemble(model, z, n, config, rng)?,
        Some(prev) => {
            let proposals = propagate(&prev, model, rng);
            let target = sequential_target(&prev, model, z)?;
            svgd::run(proposals, &target, config, rng).map_err(|source| FilterError::Svgd {
                step: time_index + 1,
                source,
            })?
        }
    };

    Ok(FilterState {
        time_index: time_index + 1,
        backend: BackendState::SteinSequential {
            ensemble: Some(new_ensemble),
            n,
        },
    })
}

/// One sliding-window Stein step.
///
/// * `t = 0`: identical to the sequential first step.
/// * `1 <= t < T` (warm-up): extend each stored trajectory with a dynamics
///   proposal and run SVGD on the full prior-anchored chain over
///   `x_{1..=t+1}`; trajectories grow by one block.
/// * `t >= T` (steady): extend with a dynamics proposal, slide the window
///   (dropping the oldest stored block, which becomes the mixture anchor),
///   and run SVGD over the `T` newest blocks.
///
/// The posterior view is always the newest block.
pub fn stein_window_step<R: Rng + ?Sized>(
    state: FilterState,
    model: &StateSpaceModel,
    z: &[f64],
    config: &SvgdConfig,
    rng: &mut R,
) -> Result<FilterState, FilterError> {
    state.expect_backend("stein-window")?;
    check_obs(model, z)?;
    let time_index = state.time_index;
    let BackendState::SteinWindow {
        trajectories,
        n,
        window,
        mut recent_obs,
    } = state.backend
    else {
        unreachable!()
    };

    let step = time_index + 1;
    let new_traj = match trajectories {
        None => {
            let ensemble = stein_init_ensemble(model, z, n, config, rng)?;
            TrajectoryEnsemble::from_states(&ensemble)
        }
        Some(traj) => {
            let newest = traj.newest_block();
            let proposals = propagate(&newest, model, rng);
            let warmup = time_index < window;
            let (init, anchor) = if warmup {
                (traj.extend(&proposals), None)
            } else {
                (traj.slide(&proposals), Some(traj.oldest_block()))
            };
            let mut observations: Vec<Vec<f64>> = recent_obs.iter().cloned().collect();
            observations.push(z.to_vec());
            let target = window_target(anchor.as_ref(), model, &observations)?;
            let out = svgd::run(init.as_ensemble().clone(), &target, config, rng)
                .map_err(|source| FilterError::Svgd { step, source })?;
            TrajectoryEnsemble::from_ensemble(out, model.state_dim())?
        }
    };

    recent_obs.push_back(z.to_vec());
    while recent_obs.len() > window.saturating_sub(1) {
        recent_obs.pop_front();
    }

    Ok(FilterState {
        time_index: step,
        backend: BackendState::SteinWindow {
            trajectories: Some(new_traj),
            n,
            window,
            recent_obs,
        },
    })
}
