//! Four-way comparison of the optional modules across seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, TrainConfig};
use super::trainer::{evaluate, train};
use crate::error::{Error, Result};
use crate::metrics::{MeanSd, MetricsReport};
use crate::synthdata::DatasetSplit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Base,
    Ccm,
    Rcm,
    CcmRcm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Ccm, Variant::Rcm, Variant::CcmRcm];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::Ccm => "+CCM",
            Variant::Rcm => "+RCM",
            Variant::CcmRcm => "+CCM+RCM",
        }
    }

    pub fn flags(self) -> AblationFlags {
        AblationFlags {
            use_ccm: matches!(self, Variant::Ccm | Variant::CcmRcm),
            use_rcm: matches!(self, Variant::Rcm | Variant::CcmRcm),
        }
    }
}

/// Column names of the table, segmentation metrics first.
pub const METRIC_COLUMNS: [&str; 8] = ["DSC", "ASSD", "HD", "dPA", "ACC", "Precision", "F1", "Kappa"];

/// Test-set headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub variant: Variant,
    pub seed: u64,
    /// In [`METRIC_COLUMNS`] order; distances are NaN when every
    /// prediction was empty.
    pub values: [f64; 8],
}

impl RunScores {
    pub fn from_report(variant: Variant, seed: u64, r: &MetricsReport) -> Self {
        let dist = |m: Option<MeanSd>| m.map_or(f64::NAN, |m| m.mean);
        Self {
            variant,
            seed,
            values: [
                r.dsc.mean,
                dist(r.assd_mm),
                dist(r.hd_mm),
                r.d_pa_mm2.mean,
                r.acc,
                r.precision_macro,
                r.f1_macro,
                r.kappa,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean±SD across seeds, in [`METRIC_COLUMNS`] order.
    pub metrics: Vec<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunScores>,
    /// Whether the row with both modules has the highest mean DSC / ACC.
    /// Informational only.
    pub both_best_dsc: bool,
    pub both_best_acc: bool,
}

impl AblationTable {
    pub fn from_runs(seeds: &[u64], runs: Vec<RunScores>) -> Self {
        let rows: Vec<AblationRow> = Variant::ALL
            .iter()
            .map(|&variant| {
                let metrics = (0..METRIC_COLUMNS.len())
                    .map(|k| {
                        let vals: Vec<f64> = runs.iter().filter(|r| r.variant == variant).map(|r| r.values[k]).collect();
                        MeanSd::of(&vals).unwrap_or(MeanSd {
                            mean: f64::NAN,
                            sd: f64::NAN,
                            n: 0,
                        })
                    })
                    .collect();
                AblationRow { variant, metrics }
            })
            .collect();
        let best = |k: usize| {
            let both = rows[3].metrics[k].mean;
            rows[..3].iter().all(|r| both >= r.metrics[k].mean || r.metrics[k].mean.is_nan())
        };
        Self {
            seeds: seeds.to_vec(),
            both_best_dsc: best(0),
            both_best_acc: best(4),
            rows,
            runs,
        }
    }

    /// One row per variant, each metric as `mean±sd`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["variant"];
        header.extend(METRIC_COLUMNS);
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for row in &self.rows {
            let mut rec = vec![row.variant.label().to_string()];
            rec.extend(row.metrics.iter().map(|m| format!("{m:.4}")));
            w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Worker count: `RCCM_THREADS` when set to a positive integer, else the
/// machine's available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("RCCM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Trains every variant for every seed and scores each on `split.test`.
/// Runs are independent, so they are spread over `threads` workers; the
/// result does not depend on the thread count.
pub fn ablate(
    split: &DatasetSplit,
    base: &TrainConfig,
    seeds: &[u64],
    threads: usize,
    on_run: impl Fn(&RunScores) + Sync,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if split.test.is_empty() {
        return Err(Error::Invalid("ablation needs a nonempty test split".into()));
    }
    let jobs: Vec<(Variant, u64)> = seeds.iter().flat_map(|&s| Variant::ALL.map(|v| (v, s))).collect();
    let results: Mutex<Vec<Option<Result<RunScores>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = jobs.get(i) else { break };
                let out = run_one(split, base, variant, seed);
                if let Ok(r) = &out {
                    on_run(r);
                }
                results.lock().expect("no poisoned workers")[i] = Some(out);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable::from_runs(seeds, runs))
}

fn run_one(split: &DatasetSplit, base: &TrainConfig, variant: Variant, seed: u64) -> Result<RunScores> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.model.rng_seed = seed;
    cfg.ablation = variant.flags();
    cfg.eval_every = 0;
    cfg.checkpoint_dir = None;
    let out = train(split, &cfg)?;
    let report = evaluate(&out.checkpoint, &split.test)?;
    Ok(RunScores::from_report(variant, seed, &report))
}
