use stein_filter::rng::substream;
use stein_filter::svgd::{self, KernelConfig, LogDensityTarget, ParticleEnsemble, SvgdConfig};
use rand::Rng;
use rand_distr::StandardNormal;

struct StdNormal;
impl LogDensityTarget for StdNormal {
    fn dim(&self) -> usize { 1 }
    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> { vec![-x[0]] }
    fn log_density(&self, x: &[f64]) -> Option<f64> { Some(-0.5 * x[0] * x[0]) }
}

fn main() {
    let mut rng = substream(4, 90, 0);
    let mut ens = ParticleEnsemble::sample_with(100, 1, &mut rng, |r| {
        vec![5.0 + r.sample::<f64, _>(StandardNormal)]
    });
    let cfg = SvgdConfig::constant(1, 0.05);
    for l in 0..=500 {
        if l % 50 == 0 {
            let n = ens.n() as f64;
            let mean = ens.rows().map(|r| r[0]).sum::<f64>() / n;
            let var = ens.rows().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let k = svgd::kernel_matrix(&ens, &KernelConfig::default()).unwrap();
            let kbar: f64 = k.values.iter().sum::<f64>() / (n * n);
            println!("iter {l:4}  mean {mean:+.4}  var {var:.4}  h {:.4}  kbar {kbar:.4}", k.bandwidth);
        }
        ens = svgd::run(ens, &StdNormal, &cfg, &mut rng).unwrap();
    }
}
