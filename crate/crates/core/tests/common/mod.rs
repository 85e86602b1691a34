#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccm::losses::Targets;
use rccm::model::{Mode, ModelConfig, Network, ParamStore};
use rccm::training::{record_batch_loss, Objective};
use rccm_autograd::Tensor;

/// Random images in `[0, 1]` with a blob-shaped mask per sample and
/// cycling class labels.
pub fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> (Tensor<f64>, Targets) {
    let (_, h, w) = cfg.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = Tensor::new(&[n, 1, h, w], (0..n * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let mut pixels = Vec::with_capacity(n * h * w);
    for i in 0..n {
        let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let r = rng.random_range(1.5..(h.min(w) as f64 / 2.0).max(2.0));
        for y in 0..h {
            for x in 0..w {
                pixels.push(((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r || (y * w + x == i)) as u32);
            }
        }
    }
    let classes = (0..n).map(|i| (i % 3) as u32).collect();
    (images, Targets { pixels, classes })
}

pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Relative error with a floor, so entries whose true gradient is zero are
/// judged on absolute error.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of the total loss over every parameter scalar.
/// The CCM weights are held at their base-point values, matching the
/// analytic gradient, which treats them as constants.
pub fn gradcheck(cfg: &ModelConfig, objective: &Objective, n: usize, h: f64, floor: f64) -> GradcheckReport {
    let (net, store) = Network::new::<f64>(cfg).unwrap();
    let (images, targets) = random_batch(cfg, n, 17);
    let base = record_batch_loss(&net, &store, &images, &targets, objective, Mode::Train, true, None).unwrap();
    let weights = base.weights.clone();
    let grads = base.session.graph.backward(base.loss.total).unwrap();
    let analytic: Vec<Tensor<f64>> = store
        .params()
        .iter()
        .zip(base.session.param_vars())
        .map(|(p, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    drop(base);

    let loss_at = |s: &ParamStore<f64>| -> f64 {
        let b = record_batch_loss(&net, s, &images, &targets, objective, Mode::Train, false, Some(&weights)).unwrap();
        b.loss.breakdown(&b.session.graph).total
    };
    let mut probe = store.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (pi, g) in analytic.iter().enumerate() {
        for k in 0..g.numel() {
            let orig = probe.params()[pi].value.data()[k];
            probe.params_mut()[pi].value.data_mut()[k] = orig + h;
            let up = loss_at(&probe);
            probe.params_mut()[pi].value.data_mut()[k] = orig - h;
            let down = loss_at(&probe);
            probe.params_mut()[pi].value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(g.data()[k], numeric, floor);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{}[{k}] analytic {} numeric {numeric}", store.params()[pi].name, g.data()[k]);
            }
            report.checked += 1;
        }
    }
    report
}
