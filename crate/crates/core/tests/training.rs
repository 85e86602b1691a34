use rccm::error::Error;
use rccm::model::{FusionOptions, Mode, ModelConfig};
use rccm::rcm::RcmConfig;
use rccm::synthdata::{generate_dataset, split_dataset, DatasetSplit, PhantomConfig, Sample};
use rccm::training::*;
use rccm_autograd::Tensor;

fn phantoms(counts: [usize; 3], seed: u64) -> Vec<Sample> {
    let cfg = PhantomConfig {
        image_height: 32,
        image_width: 48,
        pixel_spacing: 0.3,
        seed,
        ..PhantomConfig::default()
    };
    generate_dataset(&cfg, counts).unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 3,
        model: ModelConfig::tiny(3, 4, 32, 48),
        eval_every: 0,
        ..TrainConfig::default()
    }
}

fn split(samples: Vec<Sample>) -> DatasetSplit {
    split_dataset(&samples, [0.6, 0.2, 0.2], 1).unwrap()
}

fn train_only(samples: Vec<Sample>) -> DatasetSplit {
    DatasetSplit {
        train: samples,
        val: Vec::new(),
        test: Vec::new(),
        split_seed: 0,
    }
}

#[test]
fn smoke_run_reduces_loss() {
    let data = train_only(phantoms([3, 4, 3], 1));
    let out = train(&data, &tiny_config(20)).unwrap();
    let e = &out.record.epochs;
    assert_eq!(e.len(), 20);
    assert!(e.iter().enumerate().all(|(i, r)| r.epoch == i + 1));
    assert!(e.last().unwrap().train.total < e[0].train.total, "{:?} -> {:?}", e[0].train, e.last().unwrap().train);
    assert!(out.checkpoint.params.all_finite());
}

#[test]
fn moving_average_of_step_losses_decreases() {
    let data = phantoms([2, 2, 2], 4);
    let mut cfg = tiny_config(1);
    cfg.batch_size = 6;
    let mut trainer = Trainer::new(&cfg).unwrap();
    let batch: Vec<&Sample> = data.iter().collect();
    let losses: Vec<f64> = (0..60).map(|_| trainer.train_step(&batch).unwrap().total).collect();
    let avg: Vec<f64> = losses.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    assert!(avg.last().unwrap() < &avg[0], "{:?}", (avg[0], avg.last()));
}

#[test]
fn identical_runs_are_bit_identical() {
    let data = split(phantoms([4, 6, 5], 2));
    let mut cfg = tiny_config(3);
    cfg.eval_every = 1;
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.record.epochs, b.record.epochs);
    assert!(a.record.epochs.iter().all(|e| e.val.is_some()));
    let ra = evaluate(&a.checkpoint, &data.test).unwrap();
    let rb = evaluate(&b.checkpoint, &data.test).unwrap();
    assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
    assert_eq!(ra, evaluate(&a.checkpoint, &data.test).unwrap());

    let other = TrainConfig { seed: 4, ..cfg };
    let c = train(&data, &other).unwrap();
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = train_only(phantoms([3, 3, 3], 5));
    let full = train(&data, &tiny_config(10)).unwrap();

    let first = train(&data, &tiny_config(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    first.checkpoint.save(&path).unwrap();
    let mut ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt, first.checkpoint);
    ckpt.config.epochs = 10;
    let mut trainer = Trainer::from_checkpoint(ckpt).unwrap();
    let rest = trainer.fit(&data, |_, _| {}).unwrap();
    assert_eq!(rest.iter().map(|r| r.epoch).collect::<Vec<_>>(), (6..=10).collect::<Vec<_>>());

    let resumed: Vec<f64> = first.record.epochs.iter().chain(&rest).map(|r| r.train.total).collect();
    for (a, b) in full.record.epochs.iter().map(|r| r.train.total).zip(&resumed) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
    assert_eq!(trainer.params(), &full.checkpoint.params);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let data = train_only(phantoms([2, 2, 2], 6));
    let out = train(&data, &tiny_config(2)).unwrap();
    let ckpt = &out.checkpoint;
    let loaded = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let net = loaded.network().unwrap();
    let probe: Tensor<f32> = rccm::model::image_batch(&data.train.iter().collect::<Vec<_>>()).unwrap();
    let fusion = FusionOptions::with_rcm(RcmConfig::default());
    assert_eq!(
        net.infer(&loaded.params, &probe, &fusion, Mode::Eval).unwrap(),
        ckpt.network().unwrap().infer(&ckpt.params, &probe, &fusion, Mode::Eval).unwrap()
    );

    let mut bytes = ckpt.to_bytes().unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(&err, Error::Checkpoint(m) if m.contains("version")), "{err}");
    assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    let good = ckpt.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&good[..good.len() - 4]).is_err());
}

#[test]
fn evaluate_rejects_empty_and_mismatched_input() {
    let data = train_only(phantoms([2, 2, 2], 7));
    let out = train(&data, &tiny_config(1)).unwrap();
    assert!(evaluate(&out.checkpoint, &[]).is_err());
    let big = generate_dataset(&PhantomConfig::default(), [1, 0, 0]).unwrap();
    assert!(evaluate(&out.checkpoint, &big).is_err());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let data = train_only(phantoms([1, 2, 1], 8));
    let cfg = tiny_config(1);
    let mut ckpt = Trainer::new(&cfg).unwrap().checkpoint();
    ckpt.params.params_mut()[0].value.data_mut()[0] = f32::NAN;
    let mut trainer = Trainer::from_checkpoint(ckpt).unwrap();
    match trainer.run_epoch(&data.train) {
        Err(Error::NonFiniteLoss { epoch, batch_ids }) => {
            assert_eq!(epoch, 1);
            assert_eq!(batch_ids.len(), 4);
            assert!(batch_ids.iter().all(|id| data.train.iter().any(|s| &s.id == id)));
        }
        other => panic!("expected a non-finite loss error, got {:?}", other.err()),
    }
}

#[test]
fn base_configuration_trains() {
    let data = train_only(phantoms([2, 2, 2], 9));
    let mut cfg = tiny_config(2);
    cfg.ablation = AblationFlags {
        use_rcm: false,
        use_ccm: false,
    };
    let out = train(&data, &cfg).unwrap();
    assert!(out.record.epochs.iter().all(|e| e.train.is_finite()));
}

#[test]
fn overfits_a_tiny_set() {
    let data = train_only(phantoms([2, 2, 2], 10));
    let mut cfg = tiny_config(150);
    cfg.batch_size = 6;
    cfg.optimizer.lr = 3e-3;
    let out = train(&data, &cfg).unwrap();
    let report = evaluate(&out.checkpoint, &data.train).unwrap();
    assert!(report.dsc.mean > 95.0, "DSC {}", report.dsc.mean);
    assert_eq!(report.acc, 1.0);
}

#[test]
fn ablation_table_has_four_rows() {
    let data = split(phantoms([3, 4, 3], 11));
    let cfg = tiny_config(1);
    let t1 = ablate(&data, &cfg, &[1, 2], 1, |_| {}).unwrap();
    let t4 = ablate(&data, &cfg, &[1, 2], 4, |_| {}).unwrap();
    assert_eq!(t1.to_csv().unwrap(), t4.to_csv().unwrap());
    assert_eq!(t1.runs.len(), 8);
    assert_eq!(t1.rows.len(), 4);
    assert!(t1.rows.iter().all(|r| r.metrics.len() == 8 && r.metrics[0].n == 2));
    let single = ablate(&data, &cfg, &[5], 2, |_| {}).unwrap();
    assert!(single.rows.iter().all(|r| r.metrics.iter().all(|m| m.sd == 0.0 || m.sd.is_nan())));
    assert!(ablate(&data, &cfg, &[], 1, |_| {}).is_err());
}
