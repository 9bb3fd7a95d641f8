//! Evaluation: empirical moments, mean-square-error curves against exact
//! references, effective sample size, kernel density estimation, and an L1
//! density distance.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::svgd::ParticleEnsemble;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {needed} particles, got {got}")]
    TooFewParticles { needed: usize, got: usize },
    #[error("evaluation grid is empty")]
    EmptyGrid,
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("weights must be normalized to sum 1 (sum = {0})")]
    UnnormalizedWeights(f64),
    #[error("kernel density estimation expects one-dimensional particles, got dim {0}")]
    NotOneDimensional(usize),
    #[error("no run records supplied")]
    NoRecords,
}

/// Per-step outputs of one filter backend over one run, together with the
/// matching reference posterior.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub backend: String,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub reference_means: Vec<DVector<f64>>,
    pub reference_covariances: Vec<DMatrix<f64>>,
    pub step_wall_secs: Vec<f64>,
    /// Effective sample size per step (SIR only).
    pub ess: Option<Vec<f64>>,
}

impl RunRecord {
    pub fn steps(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let n = self.means.len();
        for len in [
            self.covariances.len(),
            self.reference_means.len(),
            self.reference_covariances.len(),
            self.step_wall_secs.len(),
        ] {
            if len != n {
                return Err(MetricsError::LengthMismatch { left: n, right: len });
            }
        }
        if let Some(ess) = &self.ess {
            if ess.len() != n {
                return Err(MetricsError::LengthMismatch {
                    left: n,
                    right: ess.len(),
                });
            }
        }
        Ok(())
    }
}

/// Empirical mean and unbiased (`1/(n-1)`) covariance of an ensemble.
pub fn empirical_moments(
    ensemble: &ParticleEnsemble,
) -> Result<(DVector<f64>, DMatrix<f64>), MetricsError> {
    let n = ensemble.n();
    if n < 2 {
        return Err(MetricsError::TooFewParticles { needed: 2, got: n });
    }
    let d = ensemble.dim();
    let mut mean = DVector::zeros(d);
    for row in ensemble.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in ensemble.rows() {
        for r in 0..d {
            let dr = row[r] - mean[r];
            for c in 0..d {
                cov[(r, c)] += dr * (row[c] - mean[c]);
            }
        }
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// Mean-square-error curves over `M` runs:
/// `mse_t = (1/M) sum_m ||estimate_{t,m} - reference_{t,m}||^2`,
/// with the squared Euclidean norm for means and the squared Frobenius norm
/// for covariances. Each record is compared against its own reference.
pub fn mse_curves(records: &[RunRecord]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let steps = records[0].steps();
    for r in records {
        r.validate()?;
        if r.steps() != steps {
            return Err(MetricsError::LengthMismatch {
                left: steps,
                right: r.steps(),
            });
        }
    }
    let m = records.len() as f64;
    let mut mse_mean = vec![0.0; steps];
    let mut mse_cov = vec![0.0; steps];
    for r in records {
        for t in 0..steps {
            mse_mean[t] += (&r.means[t] - &r.reference_means[t]).norm_squared() / m;
            mse_cov[t] +=
                (&r.covariances[t] - &r.reference_covariances[t]).norm_squared() / m;
        }
    }
    Ok((mse_mean, mse_cov))
}

/// Gaussian kernel density estimate of a one-dimensional ensemble on `grid`:
/// `(1/n) sum_i N(x; x_i, bandwidth^2)`.
pub fn kde(
    ensemble: &ParticleEnsemble,
    grid: &[f64],
    bandwidth: f64,
) -> Result<Vec<f64>, MetricsError> {
    if ensemble.dim() != 1 {
        return Err(MetricsError::NotOneDimensional(ensemble.dim()));
    }
    if ensemble.n() == 0 {
        return Err(MetricsError::TooFewParticles {
            needed: 1,
            got: 0,
        });
    }
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(MetricsError::NonPositiveBandwidth(bandwidth));
    }
    let norm = 1.0 / (ensemble.n() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let inv_two_bw_sq = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(grid
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for p in ensemble.rows() {
                let d = x - p[0];
                acc += (-d * d * inv_two_bw_sq).exp();
            }
            acc * norm
        })
        .collect())
}

/// Trapezoid integral of `|a - b|` over a (possibly non-uniform) grid.
/// Bounded by 2 for normalized densities. Warns when the grid is very
/// coarse.
pub fn l1_density_distance(
    density_a: &[f64],
    density_b: &[f64],
    grid: &[f64],
) -> Result<f64, MetricsError> {
    if density_a.len() != grid.len() {
        return Err(MetricsError::LengthMismatch {
            left: density_a.len(),
            right: grid.len(),
        });
    }
    if density_b.len() != grid.len() {
        return Err(MetricsError::LengthMismatch {
            left: density_b.len(),
            right: grid.len(),
        });
    }
    if grid.len() < 2 {
        return Err(MetricsError::EmptyGrid);
    }
    if grid.len() < 10 {
        log::warn!(
            "l1_density_distance: grid has only {} points; result may be inaccurate",
            grid.len()
        );
    }
    let mut integral = 0.0;
    for k in 0..grid.len() - 1 {
        let fa = (density_a[k] - density_b[k]).abs();
        let fb = (density_a[k + 1] - density_b[k + 1]).abs();
        integral += 0.5 * (fa + fb) * (grid[k + 1] - grid[k]);
    }
    Ok(integral)
}

/// Effective sample size `1 / sum w_i^2` of normalized importance weights.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64, MetricsError> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MetricsError::UnnormalizedWeights(sum));
    }
    Ok(1.0 / weights.iter().map(|w| w * w).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn record(values: Vec<f64>, reference: Vec<f64>) -> RunRecord {
        let steps = values.len();
        RunRecord {
            backend: "test".into(),
            means: values.iter().map(|&v| DVector::from_element(1, v)).collect(),
            covariances: (0..steps).map(|_| DMatrix::from_element(1, 1, 0.0)).collect(),
            reference_means: reference
                .iter()
                .map(|&v| DVector::from_element(1, v))
                .collect(),
            reference_covariances: (0..steps)
                .map(|_| DMatrix::from_element(1, 1, 0.0))
                .collect(),
            step_wall_secs: vec![0.0; steps],
            ess: None,
        }
    }

    #[test]
    fn moments_degenerate_cloud_has_zero_covariance() {
        let ens = ParticleEnsemble::from_rows(&vec![vec![1.5, 2.0]; 4]);
        let (mean, cov) = empirical_moments(&ens).unwrap();
        assert_eq!(mean.as_slice(), &[1.5, 2.0]);
        assert_eq!(cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn moments_hand_values() {
        let ens = ParticleEnsemble::from_rows(&[vec![0.0], vec![2.0]]);
        let (mean, cov) = empirical_moments(&ens).unwrap();
        assert_relative_eq!(mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(cov[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_law_of_large_numbers() {
        let mut rng = substream(30, 0, 0);
        let n = 100_000;
        let ens = ParticleEnsemble::sample_with(n, 1, &mut rng, |r| {
            vec![r.sample::<f64, _>(StandardNormal)]
        });
        let (mean, cov) = empirical_moments(&ens).unwrap();
        assert!(mean[0].abs() < 0.02);
        assert!((cov[(0, 0)] - 1.0).abs() < 0.02);
    }

    #[test]
    fn moments_reject_single_particle() {
        let ens = ParticleEnsemble::from_rows(&[vec![1.0]]);
        assert!(matches!(
            empirical_moments(&ens),
            Err(MetricsError::TooFewParticles { .. })
        ));
    }

    #[test]
    fn mse_zero_for_perfect_estimator() {
        let records = vec![
            record(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]),
            record(vec![-1.0, 0.5, 0.0], vec![-1.0, 0.5, 0.0]),
        ];
        let (mu, cov) = mse_curves(&records).unwrap();
        assert_eq!(mu, vec![0.0; 3]);
        assert_eq!(cov, vec![0.0; 3]);
    }

    #[test]
    fn mse_symmetric_errors() {
        let records = vec![
            record(vec![1.0 + 0.3], vec![1.0]),
            record(vec![1.0 - 0.3], vec![1.0]),
        ];
        let (mu, _) = mse_curves(&records).unwrap();
        assert_relative_eq!(mu[0], 0.09, epsilon = 1e-15);
    }

    #[test]
    fn mse_constant_offset() {
        let reference = vec![0.3, -0.2, 1.1, 0.0];
        let estimates: Vec<f64> = reference.iter().map(|v| v + 0.1).collect();
        let records = vec![record(estimates, reference)];
        let (mu, _) = mse_curves(&records).unwrap();
        for v in mu {
            assert_relative_eq!(v, 0.01, epsilon = 1e-12);
        }
    }

    #[test]
    fn mse_rejects_mismatched_lengths() {
        let records = vec![record(vec![1.0], vec![1.0]), record(vec![1.0, 2.0], vec![1.0, 2.0])];
        assert!(mse_curves(&records).is_err());
    }

    #[test]
    fn kde_single_particle_peak() {
        let ens = ParticleEnsemble::from_rows(&[vec![0.7]]);
        let bw = 0.1;
        let vals = kde(&ens, &[0.7], bw).unwrap();
        assert_relative_eq!(
            vals[0],
            1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = substream(31, 0, 0);
        let ens = ParticleEnsemble::sample_with(200, 1, &mut rng, |r| {
            vec![r.sample::<f64, _>(StandardNormal)]
        });
        let grid: Vec<f64> = (0..=4000).map(|k| -10.0 + k as f64 * 0.005).collect();
        let vals = kde(&ens, &grid, 0.1).unwrap();
        let mut integral = 0.0;
        for k in 0..grid.len() - 1 {
            integral += 0.5 * (vals[k] + vals[k + 1]) * (grid[k + 1] - grid[k]);
        }
        assert!((integral - 1.0).abs() < 1e-4, "integral = {integral}");
    }

    #[test]
    fn kde_bimodal_peaks_match() {
        let ens = ParticleEnsemble::from_rows(&[vec![-3.0], vec![3.0]]);
        let vals = kde(&ens, &[-3.0, 3.0], 0.1).unwrap();
        assert_relative_eq!(vals[0], vals[1], epsilon = 1e-12);
    }

    #[test]
    fn kde_rejects_bad_inputs() {
        let ens = ParticleEnsemble::from_rows(&[vec![0.0]]);
        assert!(matches!(kde(&ens, &[], 0.1), Err(MetricsError::EmptyGrid)));
        assert!(matches!(
            kde(&ens, &[0.0], 0.0),
            Err(MetricsError::NonPositiveBandwidth(_))
        ));
        let ens2 = ParticleEnsemble::from_rows(&[vec![0.0, 1.0]]);
        assert!(matches!(
            kde(&ens2, &[0.0], 0.1),
            Err(MetricsError::NotOneDimensional(2))
        ));
    }

    #[test]
    fn l1_distance_identical_and_disjoint() {
        let grid: Vec<f64> = (0..=1000).map(|k| -10.0 + k as f64 * 0.02).collect();
        let a = kde(
            &ParticleEnsemble::from_rows(&[vec![-5.0]]),
            &grid,
            0.2,
        )
        .unwrap();
        let b = kde(&ParticleEnsemble::from_rows(&[vec![5.0]]), &grid, 0.2).unwrap();
        assert_eq!(l1_density_distance(&a, &a, &grid).unwrap(), 0.0);
        let d = l1_density_distance(&a, &b, &grid).unwrap();
        assert!((d - 2.0).abs() < 1e-4, "distance = {d}");
    }

    #[test]
    fn l1_distance_matches_fine_grid_oracle() {
        // N(0,1) vs N(0.1,1): L1 distance via a much finer quadrature.
        let pdf = |x: f64, m: f64| {
            (-0.5 * (x - m) * (x - m)).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let coarse: Vec<f64> = (0..=2000).map(|k| -8.0 + k as f64 * 0.008).collect();
        let a: Vec<f64> = coarse.iter().map(|&x| pdf(x, 0.0)).collect();
        let b: Vec<f64> = coarse.iter().map(|&x| pdf(x, 0.1)).collect();
        let got = l1_density_distance(&a, &b, &coarse).unwrap();

        let fine: Vec<f64> = (0..=200_000).map(|k| -8.0 + k as f64 * 8e-5).collect();
        let fa: Vec<f64> = fine.iter().map(|&x| pdf(x, 0.0)).collect();
        let fb: Vec<f64> = fine.iter().map(|&x| pdf(x, 0.1)).collect();
        let oracle = l1_density_distance(&fa, &fb, &fine).unwrap();
        assert!((got - oracle).abs() < 1e-4, "got {got}, oracle {oracle}");
    }

    #[test]
    fn ess_hand_values() {
        let n = 64;
        let uniform = vec![1.0 / n as f64; n];
        assert_relative_eq!(
            effective_sample_size(&uniform).unwrap(),
            n as f64,
            epsilon = 1e-9
        );
        let mut point = vec![0.0; 8];
        point[3] = 1.0;
        assert_relative_eq!(effective_sample_size(&point).unwrap(), 1.0, epsilon = 1e-12);
        let w = vec![0.5, 0.25, 0.25];
        assert_relative_eq!(
            effective_sample_size(&w).unwrap(),
            8.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ess_rejects_unnormalized() {
        assert!(matches!(
            effective_sample_size(&[0.5, 0.2]),
            Err(MetricsError::UnnormalizedWeights(_))
        ));
    }

    proptest! {
        #[test]
        fn ess_invariant_under_permutation(raw in proptest::collection::vec(0.01f64..1.0, 2..20)) {
            let sum: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let mut rev = w.clone();
            rev.reverse();
            let a = effective_sample_size(&w).unwrap();
            let b = effective_sample_size(&rev).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn ess_decreases_under_mean_preserving_spread(
            raw in proptest::collection::vec(0.05f64..1.0, 3..12),
            frac in 0.1f64..0.9,
        ) {
            let sum: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let before = effective_sample_size(&w).unwrap();
            // Move mass from the smaller of a pair to the larger.
            let (lo, hi) = if w[0] <= w[1] { (0, 1) } else { (1, 0) };
            let delta = frac * w[lo];
            w[hi] += delta;
            w[lo] -= delta;
            let after = effective_sample_size(&w).unwrap();
            prop_assert!(after < before, "{after} !< {before}");
        }

        #[test]
        fn mse_permutation_invariant(
            vals in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let reference = vec![0.1, -0.4];
            let r1 = record(vals[0..2].to_vec(), reference.clone());
            let r2 = record(vals[2..4].to_vec(), reference);
            let (a, _) = mse_curves(&[r1.clone(), r2.clone()]).unwrap();
            let (b, _) = mse_curves(&[r2, r1]).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
