use stein_filter::filter::{stein_sequential_step, stein_window_step, FilterState};
use stein_filter::model::{benes_spec, discretize};
use stein_filter::rng::substream;
use stein_filter::svgd::{KernelConfig, StepSchedule, SvgdConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let window: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let init_var: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let adaptive: bool = args.get(4).map(|s| s == "adagrad").unwrap_or(false);
    let model = discretize(benes_spec(0.1, 0.3, 5.0, 0.0, 0.0, init_var, 0.02)).unwrap();
    let cfg = SvgdConfig {
        iterations: 100,
        schedule: if adaptive {
            StepSchedule::AdaGrad { step: 0.01, fudge: 1e-6 }
        } else {
            StepSchedule::Constant(0.01)
        },
        kernel: KernelConfig::default(),
    };
    let mut sim = substream(100, 0, 0);
    let (states, obs) = model.simulate(50, &mut sim).unwrap();

    let mut seq = FilterState::new_stein_sequential(n).unwrap();
    let mut win = FilterState::new_stein_window(n, window).unwrap();
    for (t, z) in obs.iter().enumerate() {
        let step = t as u64 + 1;
        match stein_sequential_step(seq.clone(), &model, z, &cfg, &mut substream(101, 1, step)) {
            Ok(s) => seq = s,
            Err(e) => { println!("SEQ FAILED at step {step}: {e}"); break; }
        }
        match stein_window_step(win.clone(), &model, z, &cfg, &mut substream(101, 3, step)) {
            Ok(s) => win = s,
            Err(e) => { println!("WIN FAILED at step {step}: {e}"); break; }
        }
        if t % 10 == 9 || t == 0 {
            let es = seq.posterior_ensemble(&mut substream(0,0,0)).unwrap();
            let ew = win.posterior_ensemble(&mut substream(0,0,0)).unwrap();
            let ms = es.rows().map(|r| r[0]).sum::<f64>() / n as f64;
            let mw = ew.rows().map(|r| r[0]).sum::<f64>() / n as f64;
            let vs = es.rows().map(|r| (r[0]-ms)*(r[0]-ms)).sum::<f64>() / (n as f64-1.0);
            let vw = ew.rows().map(|r| (r[0]-mw)*(r[0]-mw)).sum::<f64>() / (n as f64-1.0);
            println!("step {:2}  truth {:+.3}  seq {:+.4} (v {:.4})  win {:+.4} (v {:.4})",
                t+1, states[t][0], ms, vs, mw, vw);
        }
    }
}
