use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint::{write_atomic, Checkpoint};
use super::config::TrainConfig;
use super::step::{predict_batch, record_batch_loss, Objective};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, Targets};
use crate::metrics::{EvaluatedSample, MeanSd, MetricsReport};
use crate::model::{image_batch, Mode, Network, ParamStore};
use crate::synthdata::{DatasetSplit, Sample};

/// Headline validation numbers recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub dsc: MeanSd,
    pub assd_mm: Option<MeanSd>,
    pub hd_mm: Option<MeanSd>,
    pub d_pa_mm2: MeanSd,
    pub acc: f64,
    pub precision_macro: f64,
    pub f1_macro: f64,
    pub kappa: f64,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            dsc: r.dsc,
            assd_mm: r.assd_mm,
            hd_mm: r.hd_mm,
            d_pa_mm2: r.d_pa_mm2,
            acc: r.acc,
            precision_macro: r.precision_macro,
            f1_macro: r.f1_macro,
            kappa: r.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Batch means of the loss terms.
    pub train: LossBreakdown,
    pub val: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// Not serialized, so run artifacts stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            epochs: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    /// `config.echo.json` (seed, hash and config) and `record.jsonl` (one
    /// epoch per line).
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = serde_json::json!({
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
        });
        let echo = serde_json::to_string_pretty(&echo).map_err(|e| Error::Serde(e.to_string()))? + "\n";
        write_atomic(&dir.join("config.echo.json"), echo.as_bytes())?;
        let mut lines = String::new();
        for e in &self.epochs {
            lines += &serde_json::to_string(e).map_err(|e| Error::Serde(e.to_string()))?;
            lines.push('\n');
        }
        write_atomic(&dir.join("record.jsonl"), lines.as_bytes())
    }

    /// Reads `record.jsonl` lines back.
    pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Serde(format!("{}: {e}", path.display()))))
            .collect()
    }
}

/// Training state: network wiring, weights, optimizer and epoch counter.
pub struct Trainer {
    config: TrainConfig,
    network: Network,
    params: ParamStore<f32>,
    optimizer: Adam<f32>,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (network, params) = Network::new::<f32>(&config.model)?;
        let optimizer = Adam::new(config.optimizer, params.params());
        Ok(Self {
            config: config.clone(),
            network,
            params,
            optimizer,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let network = ckpt.network()?;
        Ok(Self {
            config: ckpt.config,
            network,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    /// Forward, loss, backward and one optimizer update on a batch.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<LossBreakdown> {
        let images = image_batch::<f32>(batch)?;
        let masks: Vec<_> = batch.iter().map(|s| &s.mask).collect();
        let labels: Vec<_> = batch.iter().map(|s| s.class_label).collect();
        let targets = Targets::from_samples(&masks, &labels)?;
        let objective = Objective::from_config(&self.config);
        let non_finite = || Error::NonFiniteLoss {
            epoch: self.epoch + 1,
            batch_ids: batch.iter().map(|s| s.id.clone()).collect(),
        };
        let mut step = record_batch_loss(
            &self.network,
            &self.params,
            &images,
            &targets,
            &objective,
            Mode::Train,
            true,
            None,
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => non_finite(),
            other => other,
        })?;
        let breakdown = step.loss.breakdown(&step.session.graph);
        if !breakdown.is_finite() {
            return Err(non_finite());
        }
        let mut grads = step.session.graph.backward(step.loss.total)?;
        let grads: Vec<_> = step.session.param_vars().iter().map(|&v| grads.take(v)).collect();
        let stats = step.session.take_stats();
        drop(step);
        self.optimizer.update(self.params.params_mut(), &grads)?;
        self.params.apply_batch_stats(&stats);
        Ok(breakdown)
    }

    /// One pass over `train` in a seeded order; returns the batch means.
    pub fn run_epoch(&mut self, train: &[Sample]) -> Result<LossBreakdown> {
        if train.is_empty() {
            return Err(Error::Invalid("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            losses.push(self.train_step(&batch)?);
        }
        self.epoch += 1;
        Ok(LossBreakdown::mean(&losses))
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn fit(&mut self, split: &DatasetSplit, mut on_epoch: impl FnMut(&EpochRecord, &Trainer)) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let train = self.run_epoch(&split.train)?;
            let every = self.config.eval_every;
            let val = if every > 0 && self.epoch % every == 0 && !split.val.is_empty() {
                Some(MetricsSummary::from(&self.evaluate(&split.val)?))
            } else {
                None
            };
            let record = EpochRecord {
                epoch: self.epoch,
                train,
                val,
            };
            if let (Some(dir), true) = (&self.config.checkpoint_dir, self.config.checkpoint_every > 0) {
                if self.epoch % self.config.checkpoint_every == 0 {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    self.checkpoint().save(&dir.join(format!("ckpt_epoch{:04}", self.epoch)))?;
                }
            }
            on_epoch(&record, self);
            records.push(record);
        }
        Ok(records)
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<MetricsReport> {
        evaluate_model(&self.network, &self.params, &self.config, samples)
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Trains a fresh model on `split.train` for `cfg.epochs` epochs.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(split, cfg, |_, _| {})
}

pub fn train_with(split: &DatasetSplit, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord, &Trainer)) -> Result<TrainOutcome> {
    crate::alloc::retain_freed_memory();
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg)?;
    let mut record = RunRecord::new(cfg);
    record.epochs = trainer.fit(split, on_epoch)?;
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        record,
        checkpoint: trainer.checkpoint(),
    })
}

/// Predictions on `samples` scored against their annotations.
pub fn evaluate(checkpoint: &Checkpoint, samples: &[Sample]) -> Result<MetricsReport> {
    evaluate_model(&checkpoint.network()?, &checkpoint.params, &checkpoint.config, samples)
}

pub fn evaluate_model(network: &Network, params: &ParamStore<f32>, cfg: &TrainConfig, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty sample list".into()));
    }
    let (_, h, w) = cfg.model.input_shape;
    if let Some(s) = samples.iter().find(|s| (s.height(), s.width()) != (h, w)) {
        return Err(Error::Invalid(format!(
            "sample {} is {}x{} but the model expects {h}x{w}",
            s.id,
            s.height(),
            s.width()
        )));
    }
    let fusion = cfg.fusion();
    let mut evaluated = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let preds = predict_batch(network, params, &image_batch::<f32>(&refs)?, &fusion, cfg.prediction)?;
        for (s, p) in chunk.iter().zip(preds) {
            evaluated.push(EvaluatedSample {
                id: s.id.clone(),
                spacing: s.pixel_spacing,
                truth_mask: s.mask.clone(),
                pred_mask: p.mask,
                truth_class: s.class_label,
                pred_class: p.class,
            });
        }
    }
    MetricsReport::build(&evaluated)
}
