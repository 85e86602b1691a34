use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rccm::error::{Error, Result};
use rccm::grid::Image;
use rccm::metrics::MetricsReport;
use rccm::model::image_batch;
use rccm::pgm;

use crate::plots;
use rccm::synthdata::{generate_dataset, load_dataset, save_dataset, split_dataset, DatasetSplit, PhantomConfig, Sample};
use rccm::training::{self, predict_batch, worker_threads, Checkpoint, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

pub type Outcome = Result<(Vec<PathBuf>, String)>;

const CHECKPOINT_FILE: &str = "ckpt_final";
const DATASET_FILE: &str = "dataset.json";
const REPORT_FILE: &str = "report.json";
const PER_SAMPLE_FILE: &str = "per_sample.csv";

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse '{p}'")))
        .collect()
}

fn parse_counts(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = parse_list(s)?;
    v.try_into().map_err(|_| "expected three comma-separated counts".to_string())
}

fn log(start: &Instant, msg: impl AsRef<str>) {
    eprintln!("[{:>8.1}s] {}", start.elapsed().as_secs_f64(), msg.as_ref());
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Samples per class: hyperechoic,hypoechoic,mixed.
    #[arg(long, value_parser = parse_counts, default_value = "238,476,286")]
    counts: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phantom settings as TOML or JSON; `--seed` overrides its seed.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn generate_data(a: GenerateArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => toml_or_json::<PhantomConfig>(p)?,
        None => PhantomConfig::default(),
    };
    cfg.seed = a.seed;
    let samples = generate_dataset(&cfg, a.counts)?;
    let written = save_dataset(&samples, &a.out)?;
    let summary = format!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok((written, summary))
}

fn toml_or_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Where a run's data came from, so later commands can rebuild its split.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetRef {
    data_dir: PathBuf,
    split_sizes: [usize; 3],
}

fn load_split(data: &Path, cfg: &TrainConfig) -> Result<DatasetSplit> {
    let samples = load_dataset(data)?;
    split_dataset(&samples, cfg.data.split_ratios, cfg.data.split_seed)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_path(p),
        None => Ok(TrainConfig::default()),
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory with manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// TOML or JSON training configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the configured number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn train(a: TrainArgs) -> Outcome {
    let start = Instant::now();
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(e) = a.epochs {
                ckpt.config.epochs = e;
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            Trainer::new(&cfg)?
        }
    };
    let cfg = trainer.config().clone();
    cfg.validate()?;
    let split = load_split(&a.data, &cfg)?;
    log(&start, format!("split sizes {:?}, {} parameters", split.sizes(), trainer.params().num_scalars()));
    create_dir(&a.out)?;

    let mut record = training::RunRecord::new(&cfg);
    if a.resume.is_some() {
        let previous = a.out.join("record.jsonl");
        if previous.is_file() {
            record.epochs = training::RunRecord::read_epochs(&previous)?;
            record.epochs.retain(|e| e.epoch <= trainer.epoch());
        }
    }
    let new = trainer.fit(&split, |r, _| {
        let val = r
            .val
            .as_ref()
            .map(|v| format!(" val DSC {:.2} ACC {:.3}", v.dsc.mean, v.acc))
            .unwrap_or_default();
        log(&start, format!("epoch {:>3} loss {:.4}{val}", r.epoch, r.train.total));
    })?;
    record.epochs.extend(new);
    record.write_to_dir(&a.out)?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&ckpt_path)?;
    let dataset = DatasetRef {
        data_dir: a.data.clone(),
        split_sizes: split.sizes(),
    };
    write_file(&a.out.join(DATASET_FILE), serde_json::to_string_pretty(&dataset).expect("serializes") + "\n")?;
    let last = record.epochs.last().map_or(f64::NAN, |e| e.train.total);
    Ok((
        vec![
            a.out.join("config.echo.json"),
            a.out.join("record.jsonl"),
            ckpt_path,
            a.out.join(DATASET_FILE),
        ],
        format!("trained {} epochs, final loss {last:.4}", trainer.epoch()),
    ))
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Dataset directory; defaults to the one the run was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let ckpt = Checkpoint::load(&a.run.join(CHECKPOINT_FILE))?;
    let data = match a.data {
        Some(d) => d,
        None => {
            let text = read_file(&a.run.join(DATASET_FILE))?;
            let r: DatasetRef = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
            r.data_dir
        }
    };
    let split = load_split(&data, &ckpt.config)?;
    let samples: &[Sample] = match a.split {
        SplitName::Train => &split.train,
        SplitName::Val => &split.val,
        SplitName::Test => &split.test,
    };
    let report = training::evaluate(&ckpt, samples)?;
    let out = a.out.unwrap_or(a.run);
    create_dir(&out)?;
    let (json, csv) = (out.join(REPORT_FILE), out.join(PER_SAMPLE_FILE));
    report.write_json(&json)?;
    report.write_per_sample_csv(&csv)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok((vec![json, csv], summarize(&report)))
}

fn summarize(r: &MetricsReport) -> String {
    let dist = |m: Option<rccm::metrics::MeanSd>| m.map_or("n/a".to_string(), |m| format!("{m:.3}"));
    format!(
        "n={} DSC {:.2} ASSD {} HD {} dPA {:.3} ACC {:.4} P {:.4} F1 {:.4} kappa {:.4}",
        r.n_samples,
        r.dsc,
        dist(r.assd_mm),
        dist(r.hd_mm),
        r.d_pa_mm2,
        r.acc,
        r.precision_macro,
        r.f1_macro,
        r.kappa
    )
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint file, or a run directory containing one.
    #[arg(long)]
    checkpoint: PathBuf,
    /// 8-bit binary PGM image.
    #[arg(long)]
    image: PathBuf,
}

fn mask_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    image.with_file_name(format!("{stem}.mask.pgm"))
}

pub fn predict(a: PredictArgs) -> Outcome {
    let start = Instant::now();
    let path = if a.checkpoint.is_dir() {
        a.checkpoint.join(CHECKPOINT_FILE)
    } else {
        a.checkpoint
    };
    let ckpt = Checkpoint::load(&path)?;
    let network = ckpt.network()?;
    let (w, h, bytes) = pgm::read(&a.image)?;
    let image = Image::new(h, w, bytes.iter().map(|&b| pgm::from_byte(b)).collect())?;
    let (_, mh, mw) = ckpt.config.model.input_shape;
    if (h, w) != (mh, mw) {
        return Err(Error::Invalid(format!("image is {h}x{w} but the model expects {mh}x{mw}")));
    }
    let sample = Sample {
        id: "input".into(),
        mask: rccm::grid::Mask::empty(h, w),
        image,
        class_label: rccm::synthdata::PlaqueClass::Hyperechoic,
        pixel_spacing: 1.0,
    };
    let loaded = start.elapsed();
    let infer_start = Instant::now();
    let pred = predict_batch(&network, &ckpt.params, &image_batch::<f32>(&[&sample])?, &ckpt.config.fusion(), ckpt.config.prediction)?
        .pop()
        .expect("one prediction per image");
    let infer = infer_start.elapsed();
    let out = mask_path(&a.image);
    let mask_bytes: Vec<u8> = pred.mask.data.iter().map(|&v| v * 255).collect();
    pgm::write(&out, w, h, &mask_bytes)?;
    let probs = pred.probs.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(",");
    let line = format!("class={} probs={probs}", pred.class);
    println!("{line}");
    eprintln!(
        "load {:.1} ms, inference {:.1} ms",
        loaded.as_secs_f64() * 1e3,
        infer.as_secs_f64() * 1e3
    );
    Ok((vec![out], line))
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds; each trains all four variants.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Table CSV path; a JSON file with every run sits next to it.
    #[arg(long)]
    out: PathBuf,
}

pub fn ablate(a: AblateArgs) -> Outcome {
    let start = Instant::now();
    let cfg = load_config(a.config.as_deref())?;
    let split = load_split(&a.data, &cfg)?;
    let seeds = a.seeds;
    let threads = worker_threads();
    log(&start, format!("{} runs on {threads} threads", 4 * seeds.len()));
    let table = training::ablate(&split, &cfg, &seeds, threads, |r| {
        log(&start, format!("{} seed {} DSC {:.2} ACC {:.3}", r.variant.label(), r.seed, r.values[0], r.values[4]));
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&a.out, table.to_csv()?)?;
    let json_path = a.out.with_extension("json");
    write_file(&json_path, serde_json::to_string_pretty(&table).map_err(|e| Error::Serde(e.to_string()))? + "\n")?;
    let summary = format!(
        "{} runs; +CCM+RCM best DSC: {}, best ACC: {}",
        table.runs.len(),
        table.both_best_dsc,
        table.both_best_acc
    );
    Ok((vec![a.out, json_path], summary))
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory (or any directory) holding report.json.
    #[arg(long)]
    run: PathBuf,
    /// Draw the area correlation and Bland-Altman plots as PNG.
    #[arg(long)]
    plots: bool,
}

pub fn report(a: ReportArgs) -> Outcome {
    let report = MetricsReport::read_json(&a.run.join(REPORT_FILE))?;
    let mut artifacts = Vec::new();
    if a.plots {
        let alg: Vec<f64> = report.per_sample.iter().map(|s| s.pa_alg_mm2).collect();
        let man: Vec<f64> = report.per_sample.iter().map(|s| s.pa_man_mm2).collect();
        let scatter = a.run.join("area_correlation.png");
        plots::correlation(&man, &alg, &scatter)?;
        let ba = a.run.join("bland_altman.png");
        plots::bland_altman(&alg, &man, &report.bland_altman, &ba)?;
        artifacts.extend([scatter, ba]);
    }
    let pcc = report
        .pcc
        .map_or("PCC n/a".to_string(), |c| format!("PCC {:.4} (p={})", c.r, c.p_value.map_or("n/a".into(), |p| format!("{p:.3e}"))));
    let ba = report.bland_altman;
    println!("{}", summarize(&report));
    println!("{pcc}; Bland-Altman bias {:.4} mm², limits [{:.4}, {:.4}]", ba.bias, ba.lo, ba.hi);
    Ok((artifacts, format!("{}; {pcc}", summarize(&report))))
}
