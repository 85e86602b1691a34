//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned here.
//!
//! The synthetic training criterion trains a depth-5 network on 1000
//! phantoms and takes several minutes on one core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::oracles::{oracle_distances, random_mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rccm::ccm::{self, CcmConfig, ClassPrediction};
use rccm::losses::{self, record_entropy_cls, LossConfig};
use rccm::metrics::{confusion_and_scores, dice, f1_score, surface_distances, Averaging};
use rccm::model::{image_batch, ForwardOutputs, FusionOptions, Mode, ModelConfig, Network, Param};
use rccm::rcm::{self, RcmConfig, SoftmaxAxis};
use rccm::synthdata::{generate_dataset, split_dataset, DatasetSplit, PhantomConfig, PlaqueClass};
use rccm::training::{self, predict_batch, record_batch_loss, Adam, AdamConfig, Checkpoint, Objective, TrainConfig, Trainer};
use rccm_autograd::{Graph, Tensor};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
/// Denominator floor for relative error; see the gradient tests.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const RCM_TOL: f64 = 1e-6;
const EXACT_TOL: f64 = 1e-12;
const MIN_ORACLE_PAIRS: usize = 10_000;
const ENTROPY_TARGET: f64 = 0.99;
const ENTROPY_STEPS: usize = 200;
const TARGET_DSC: f64 = 85.0;
const TARGET_ACC: f64 = 0.80;
const MAX_EPOCHS: usize = 50;
const TRAIN_BUDGET: Duration = Duration::from_secs(30 * 60);
const LATENCY_BUDGET: Duration = Duration::from_millis(200);

type Check = Result<String, String>;

fn ensure(ok: bool, detail: impl Into<String>) -> Check {
    let d = detail.into();
    if ok {
        Ok(d)
    } else {
        Err(d)
    }
}

fn objective(use_rcm: bool, use_ccm: bool, loss: LossConfig) -> Objective {
    Objective {
        fusion: FusionOptions {
            use_rcm,
            rcm: RcmConfig::default(),
        },
        use_ccm,
        ccm: CcmConfig::default(),
        loss,
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn gradients() -> Check {
    let start = Instant::now();
    let obj = objective(true, true, LossConfig::default());
    let r = common::gradcheck(&ModelConfig::tiny(2, 2, 8, 12), &obj, 2, GRAD_STEP, GRAD_FLOOR);
    let elapsed = start.elapsed();
    ensure(
        r.max_rel_err <= GRAD_REL_TOL && elapsed < GRAD_BUDGET,
        format!(
            "max rel err {:.2e} over {} scalars in {:.2}s (worst {})",
            r.max_rel_err,
            r.checked,
            elapsed.as_secs_f64(),
            r.worst
        ),
    )
}

fn rcm_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut sum_err, mut shift_err) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let seg = [0; 4].map(|_| random(&[1 + trial % 2, 2, 8, 12], &mut rng, 6.0));
        let target = [(2, 3), (4, 6), (8, 12)][trial % 3];
        let p = rcm::region_probability_maps(&seg, target, SoftmaxAxis::Levels).map_err(|e| e.to_string())?;
        let c = rng.random_range(-20.0..20.0);
        let q = rcm::region_probability_maps(&seg.clone().map(|t| t.map(|v| v + c)), target, SoftmaxAxis::Levels)
            .map_err(|e| e.to_string())?;
        for k in 0..p.maps[0].numel() {
            let sum: f64 = p.maps.iter().map(|m| m.data()[k]).sum();
            sum_err = sum_err.max((sum - 1.0).abs());
            for l in 0..4 {
                shift_err = shift_err.max((p.maps[l].data()[k] - q.maps[l].data()[k]).abs());
            }
        }
    }
    ensure(
        sum_err <= RCM_TOL && shift_err <= RCM_TOL,
        format!("1000 logit sets: max |Σp−1| {sum_err:.1e}, max shift change {shift_err:.1e}"),
    )
}

fn ccm_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identity_err = 0.0f64;
    for _ in 0..1000 {
        let raw: [f64; 3] = [0; 3].map(|_| rng.random_range(0.01..1.0));
        let s: f64 = raw.iter().sum();
        let g = ClassPrediction::new(raw.map(|v| v / s)).map_err(|e| e.to_string())?;
        for class in PlaqueClass::ALL {
            let w = ccm::sample_weight(&class.one_hot(), &g, 1e-7).map_err(|e| e.to_string())?;
            identity_err = identity_err.max((w.omega + g.g[class.index()].ln()).abs());
        }
    }
    let mut monotone = true;
    let mut last = f64::INFINITY;
    for i in 1..=1000 {
        let gc = i as f64 / 1001.0;
        let rest = (1.0 - gc) / 2.0;
        let w = ccm::sample_weight(&[0.0, 1.0, 0.0], &ClassPrediction::new([rest, gc, rest]).unwrap(), 1e-7).unwrap();
        monotone &= w.omega < last;
        last = w.omega;
    }

    // no gradient reaches the classifier through the weights
    let cfg = ModelConfig::tiny(3, 2, 8, 12);
    let (net, store) = Network::new::<f64>(&cfg).map_err(|e| e.to_string())?;
    let (images, targets) = common::random_batch(&cfg, 3, 4);
    let seg_only = LossConfig {
        lambda: 0.0,
        entropy_weight_cls: 0.0,
        ..LossConfig::default()
    };
    let obj = objective(true, true, seg_only);
    let base = record_batch_loss(&net, &store, &images, &targets, &obj, Mode::Train, true, None).map_err(|e| e.to_string())?;
    let grads = base.session.graph.backward(base.loss.total).map_err(|e| e.to_string())?;
    let mut leaked = 0.0f64;
    let mut classifier_scalars = 0;
    for (p, &v) in store.params().iter().zip(base.session.param_vars()) {
        if p.name.starts_with("classifier") {
            classifier_scalars += p.value.numel();
            if let Some(g) = grads.get(v) {
                leaked = leaked.max(g.data().iter().fold(0.0, |m, x| m.max(x.abs())));
            }
        }
    }
    ensure(
        identity_err <= EXACT_TOL && monotone && leaked == 0.0 && classifier_scalars > 0,
        format!(
            "identity err {identity_err:.1e}, strictly decreasing: {monotone}, max classifier grad via ω {leaked:.1e} over {classifier_scalars} scalars"
        ),
    )
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pairs, mut mismatches, mut hd_below) = (0usize, 0usize, 0usize);
    for h in 1..=16 {
        for w in 1..=16 {
            for _ in 0..40 {
                let a = random_mask(&mut rng, h, w);
                let m = random_mask(&mut rng, h, w);
                let spacing = [0.1, 0.25, 1.0][pairs % 3];
                let d = surface_distances(&a, &m, spacing).map_err(|e| e.to_string())?;
                let (oa, oh) = oracle_distances(&a, &m, spacing);
                mismatches += (d.assd != oa || d.hausdorff != oh) as usize;
                hd_below += (d.hausdorff < d.assd) as usize;
                let (na, nm) = (a.count(), m.count());
                let inter = a.data.iter().zip(&m.data).filter(|(x, y)| **x != 0 && **y != 0).count();
                let want = 200.0 * inter as f64 / (na + nm) as f64;
                mismatches += (dice(&a, &m).map_err(|e| e.to_string())? != want) as usize;
                pairs += 1;
            }
        }
    }
    ensure(
        pairs >= MIN_ORACLE_PAIRS && mismatches == 0 && hd_below == 0,
        format!("{pairs} pairs up to 16x16: {mismatches} mismatches, {hd_below} with HD < ASSD"),
    )
}

fn classification_stats() -> Check {
    // uniform truth, constant prediction
    let truth: Vec<PlaqueClass> = (0..30).map(|i| PlaqueClass::ALL[i % 3]).collect();
    let constant = vec![PlaqueClass::Hypoechoic; 30];
    let k0 = confusion_and_scores(&truth, &constant, Averaging::Macro).map_err(|e| e.to_string())?.kappa;
    let k1 = confusion_and_scores(&truth, &truth, Averaging::Macro).map_err(|e| e.to_string())?.kappa;
    let mut f1_err = 0.0f64;
    for i in 0..=20 {
        for j in 0..=20 {
            let (p, r) = (i as f64 / 20.0, j as f64 / 20.0);
            let want = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            f1_err = f1_err.max((f1_score(p, r) - want).abs());
        }
    }
    ensure(
        k0.abs() <= EXACT_TOL && (k1 - 1.0).abs() <= EXACT_TOL && f1_err <= EXACT_TOL,
        format!("constant-predictor kappa {k0:.1e}, perfect kappa {k1}, F1 grid err {f1_err:.1e}"),
    )
}

fn random_outputs(rng: &mut ChaCha8Rng, n: usize) -> (ForwardOutputs<f64>, Tensor<f64>, Tensor<f64>) {
    let seg = [0; 4].map(|_| random(&[n, 2, 6, 5], rng, 3.0));
    let cls = random(&[n, 3], rng, 3.0);
    let mut z = Tensor::zeros(&[n, 2, 6, 5]);
    for i in 0..n {
        for p in 0..30 {
            let c = rng.random_range(0..2);
            z.data_mut()[(i * 2 + c) * 30 + p] = 1.0;
        }
    }
    let mut y = Tensor::zeros(&[n, 3]);
    for i in 0..n {
        y.data_mut()[i * 3 + rng.random_range(0..3)] = 1.0;
    }
    let out = ForwardOutputs {
        seg_logits: seg,
        cls_logits: cls,
    };
    (out, z, y)
}

fn term_isolation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut seg_err, mut cls_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (out, z, y) = random_outputs(&mut rng, 3);
        let omega: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
        let no_cls = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let b = losses::total_loss(&out, &z, &y, &omega, &no_cls).map_err(|e| e.to_string())?;
        seg_err = seg_err.max((b.total - b.l_seg).abs());
        let lambda = rng.random_range(0.1..3.0);
        let ce_only = LossConfig {
            lambda,
            entropy_weight_seg: 0.0,
            entropy_weight_cls: 0.0,
            ..LossConfig::default()
        };
        let b = losses::total_loss(&out, &z, &y, &[0.0; 3], &ce_only).map_err(|e| e.to_string())?;
        let ce = losses::ce_cls(&out.cls_logits, &y).map_err(|e| e.to_string())?;
        cls_err = cls_err.max((b.total - lambda * ce).abs());
    }
    ensure(
        seg_err <= EXACT_TOL && cls_err <= EXACT_TOL,
        format!("λ=0: |total−l_seg| {seg_err:.1e}; ω=0, no entropy: |total−λ·ce| {cls_err:.1e}"),
    )
}

fn entropy_minimization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let features = random(&[16, 8], &mut rng, 1.0);
    let mut params = vec![
        Param {
            name: "w".into(),
            value: random(&[3, 8], &mut rng, 0.1),
        },
        Param {
            name: "b".into(),
            value: Tensor::zeros(&[3]),
        },
    ];
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &params);
    let mut least = 0.0;
    for _ in 0..ENTROPY_STEPS {
        let mut g = Graph::new();
        let x = g.constant(features.clone());
        let w = g.leaf(params[0].value.clone());
        let b = g.leaf(params[1].value.clone());
        let logits = g.linear(x, w, b).map_err(|e| e.to_string())?;
        let h = record_entropy_cls(&mut g, logits, 1e-7).map_err(|e| e.to_string())?;
        let preds = training::class_predictions(g.value(logits)).map_err(|e| e.to_string())?;
        least = preds.iter().map(|p| p.g.iter().copied().fold(0.0, f64::max)).fold(1.0, f64::min);
        let mut grads = g.backward(h).map_err(|e| e.to_string())?;
        let gs = vec![grads.take(w), grads.take(b)];
        adam.update(&mut params, &gs).map_err(|e| e.to_string())?;
    }
    ensure(
        least >= ENTROPY_TARGET,
        format!("least confident of 16 samples at max prob {least:.4} after {ENTROPY_STEPS} steps"),
    )
}

fn synthetic_training() -> Check {
    let start = Instant::now();
    let all = generate_dataset(&PhantomConfig { seed: 42, ..PhantomConfig::default() }, [238, 476, 286]).map_err(|e| e.to_string())?;
    let split = split_dataset(&all, [0.6, 0.2, 0.2], 0).map_err(|e| e.to_string())?;
    if split.sizes() != [600, 200, 200] {
        return Err(format!("split sizes {:?}", split.sizes()));
    }
    let mut cfg = TrainConfig {
        epochs: 10,
        eval_every: 0,
        ..TrainConfig::default()
    };
    cfg.model.base_channels = 4;
    cfg.ccm.normalize_mean_one = true;
    if cfg.epochs > MAX_EPOCHS {
        return Err(format!("{} epochs exceeds {MAX_EPOCHS}", cfg.epochs));
    }
    let out = training::train(&split, &cfg).map_err(|e| e.to_string())?;
    let report = training::evaluate(&out.checkpoint, &split.test).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        report.dsc.mean >= TARGET_DSC && report.acc >= TARGET_ACC && elapsed < TRAIN_BUDGET,
        format!(
            "{} epochs, test DSC {:.2}%, ACC {:.3}, kappa {:.3}, {:.0}s",
            cfg.epochs,
            report.dsc.mean,
            report.acc,
            report.kappa,
            elapsed.as_secs_f64()
        ),
    )
}

fn small_split(seed: u64) -> Result<DatasetSplit, String> {
    let cfg = PhantomConfig {
        image_height: 32,
        image_width: 48,
        pixel_spacing: 0.3,
        seed,
        ..PhantomConfig::default()
    };
    let samples = generate_dataset(&cfg, [6, 12, 7]).map_err(|e| e.to_string())?;
    split_dataset(&samples, [0.6, 0.2, 0.2], 1).map_err(|e| e.to_string())
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 5,
        model: ModelConfig::tiny(3, 4, 32, 48),
        eval_every: 1,
        ..TrainConfig::default()
    }
}

fn ablation() -> Check {
    let split = small_split(21)?;
    let table = training::ablate(&split, &small_config(), &[1, 2, 3], training::worker_threads(), |_| {})
        .map_err(|e| e.to_string())?;
    let csv = table.to_csv().map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    let shape_ok = lines.len() == 5 && lines.iter().all(|l| l.split(',').count() == 9);
    ensure(
        table.runs.len() == 12 && table.rows.len() == 4 && shape_ok,
        format!(
            "{} runs, {}x{} table; +CCM+RCM best DSC: {}, best ACC: {}",
            table.runs.len(),
            table.rows.len(),
            table.rows.first().map_or(0, |r| r.metrics.len()),
            table.both_best_dsc,
            table.both_best_acc
        ),
    )
}

fn determinism() -> Check {
    let split = small_split(22)?;
    let run = || -> Result<(Vec<u8>, String, String), String> {
        let out = training::train(&split, &small_config()).map_err(|e| e.to_string())?;
        let report = training::evaluate(&out.checkpoint, &split.test).map_err(|e| e.to_string())?;
        let record: Vec<String> = out.record.epochs.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        Ok((
            out.checkpoint.to_bytes().map_err(|e| e.to_string())?,
            report.to_json().map_err(|e| e.to_string())?,
            record.join("\n"),
        ))
    };
    let (a, b) = (run()?, run()?);
    ensure(
        a == b,
        format!(
            "checkpoint {} bytes identical: {}, report identical: {}, epoch record identical: {}",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn latency() -> Check {
    let cfg = TrainConfig::default();
    let bytes = Trainer::new(&cfg).map_err(|e| e.to_string())?.checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let sample = generate_dataset(&PhantomConfig::default(), [1, 0, 0]).map_err(|e| e.to_string())?.remove(0);
    let mut times = Vec::new();
    for _ in 0..6 {
        let start = Instant::now();
        let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let net = ckpt.network().map_err(|e| e.to_string())?;
        let images = image_batch::<f32>(&[&sample]).map_err(|e| e.to_string())?;
        predict_batch(&net, &ckpt.params, &images, &ckpt.config.fusion(), ckpt.config.prediction).map_err(|e| e.to_string())?;
        times.push(start.elapsed());
    }
    // the first call pays for page faults on fresh buffers
    let warm = &mut times[1..];
    warm.sort();
    let median = warm[warm.len() / 2];
    ensure(
        median < LATENCY_BUDGET,
        format!(
            "96x144, depth 5, base 16: median {:.1} ms, cold {:.1} ms (load + inference)",
            median.as_secs_f64() * 1e3,
            times[0].as_secs_f64() * 1e3
        ),
    )
}

fn main() {
    rccm::alloc::retain_freed_memory();
    let criteria: [(&str, fn() -> Check); 11] = [
        ("gradient correctness", gradients),
        ("RCM normalization", rcm_normalization),
        ("CCM algebra", ccm_algebra),
        ("metric oracles", metric_oracles),
        ("classification statistics", classification_stats),
        ("term isolation", term_isolation),
        ("entropy minimization", entropy_minimization),
        ("synthetic training target", synthetic_training),
        ("ablation harness", ablation),
        ("determinism", determinism),
        ("inference latency", latency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
