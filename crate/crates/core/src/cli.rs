use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use woundnet::autodiff::{check_gradients, GradCheckOptions};
use woundnet::data::{
    generate_synthetic_dataset, split_by_patient, DatasetManifest, ImageCache, ImageFormat, SplitSpec, SynthConfig,
};
use woundnet::model::{
    weighted_bce_loss, Checkpoint, ClassWeights, EpochLog, Mode, ModelConfig, StorageDtype, TrainConfig, WoundModel,
    TASK_NAMES,
};
use woundnet::service::{serve, Predictor, ServeConfig};
use woundnet::stats::{compare_raters, evaluate_model, ProbabilityTable, RaterRecord};
use woundnet::NdArray;

/// Marks errors caused by bad invocation (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "woundnet", version, about = "Multi-task wound image classifier")]
pub struct Cli {
    /// Seed for every random stream; overrides seeds in --config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with optional `synth`, `split`, `model`, `train` and `serve` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic wound dataset.
    Synth(SynthArgs),
    /// Split a dataset by patient and train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Compare model answers with human raters by kappa difference.
    Compare(CompareArgs),
    /// Finite-difference gradient check of the full model.
    Gradcheck(GradcheckArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub patients: Option<usize>,
    /// Exact total image count.
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Signature strength in (0, 1].
    #[arg(long)]
    pub strength: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Ppm,
    Png,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory (containing manifest.csv) or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Patient fractions as train,val,test.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// Backbone stage widths, e.g. 16,32,64,128.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DtypeArg {
    F64,
    F32,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Per-task thresholds overriding the checkpoint's.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Probabilities CSV written by `eval`.
    #[arg(long)]
    pub probs: PathBuf,
    /// One answer CSV per rater.
    #[arg(long, num_args = 1.., required = true)]
    pub raters: Vec<PathBuf>,
    /// Manifest with ground-truth labels.
    #[arg(long)]
    pub truth: PathBuf,
    /// Checkpoint whose stored thresholds binarize the probabilities.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', conflicts_with = "model")]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2000)]
    pub n_boot: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub input_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,8")]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Coordinates sampled per parameter (all when omitted).
    #[arg(long)]
    pub max_coords: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long)]
    pub body_limit: Option<usize>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub serve: ServeConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.split.seed = seed;
        cfg.train.seed = seed;
    }
    match &cli.command {
        Command::Synth(a) => synth(&cli, cfg, a),
        Command::Train(a) => train(&cli, cfg, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Compare(a) => compare(&cli, a),
        Command::Gradcheck(a) => gradcheck(&cli, a),
        Command::Serve(a) => serve_cmd(cfg, a),
    }
}

fn synth(cli: &Cli, mut cfg: FileConfig, a: &SynthArgs) -> Result<()> {
    let s = &mut cfg.synth;
    if let Some(p) = a.patients {
        s.patients = p;
    }
    if a.images.is_some() {
        s.total_images = a.images;
    }
    if let Some(f) = a.format {
        s.format = match f {
            FormatArg::Ppm => ImageFormat::Ppm,
            FormatArg::Png => ImageFormat::Png,
        };
    }
    if let Some(st) = a.strength {
        s.strength = st;
    }
    s.validate().map_err(|e| usage(e.to_string()))?;
    let out = out_dir(cli)?;
    let (manifest, prov) = generate_synthetic_dataset(s, &out)?;
    tracing::info!(images = manifest.len(), patients = prov.patients, positives = ?prov.positive_counts, "synthetic dataset written");
    println!(
        "{} images from {} patients written to {}",
        manifest.len(),
        prov.patients,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainLog<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    split: &'a SplitSpec,
    patients: [usize; 3],
    images: [usize; 3],
    class_weights: &'a ClassWeights,
    best_epoch: usize,
    epochs: &'a [EpochLog],
}

fn train(cli: &Cli, mut cfg: FileConfig, a: &TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.optimizer.lr = lr;
    }
    if a.no_augment {
        cfg.train.augment = None;
    }
    if let Some(f) = &a.split {
        if f.len() != 3 {
            return Err(usage(format!("--split takes 3 fractions, got {}", f.len())));
        }
        cfg.split.train = f[0];
        cfg.split.val = f[1];
        cfg.split.test = f[2];
    }
    if let Some(c) = &a.channels {
        cfg.model.stage_channels = c.clone();
    }
    if let Some(s) = a.input_size {
        cfg.model.input_size = s;
    }
    cfg.model.validate().map_err(|e| usage(e.to_string()))?;
    cfg.split.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.train.epochs == 0 || cfg.train.batch_size == 0 {
        return Err(usage("epochs and batch size must be positive"));
    }

    let out = out_dir(cli)?;
    let manifest = DatasetManifest::load(manifest_path(&a.data))?;
    let splits = split_by_patient(&manifest, &cfg.split)?;
    let split_dir = out.join("splits");
    std::fs::create_dir_all(&split_dir)?;
    for (name, m) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        m.save(split_dir.join(format!("{name}.csv")), true)?;
    }
    tracing::info!(
        train = splits.train.len(),
        val = splits.val.len(),
        test = splits.test.len(),
        "split by patient"
    );
    let size = cfg.model.input_size;
    let train_images = ImageCache::load(&splits.train, size)?;
    let val_images = ImageCache::load(&splits.val, size)?;
    let model = WoundModel::new(cfg.model.clone(), cfg.train.seed)?;
    tracing::info!(parameters = model.count_parameters(), "model initialised");
    let outcome = woundnet::model::train(model, &train_images, Some(&val_images), &cfg.train)?;

    let dtype = match a.dtype {
        DtypeArg::F64 => StorageDtype::F64,
        DtypeArg::F32 => StorageDtype::F32,
    };
    let checkpoint = Checkpoint::new(outcome.model);
    checkpoint.save(out.join("model.wmtc"), dtype)?;
    let log = TrainLog {
        model: &cfg.model,
        train: &cfg.train,
        split: &cfg.split,
        patients: [
            splits.train.patient_count(),
            splits.val.patient_count(),
            splits.test.patient_count(),
        ],
        images: [splits.train.len(), splits.val.len(), splits.test.len()],
        class_weights: &outcome.class_weights,
        best_epoch: outcome.best_epoch,
        epochs: &outcome.log,
    };
    write_json(&out.join("train_log.json"), &log)?;
    println!(
        "best epoch {} of {}; checkpoint {}",
        outcome.best_epoch,
        outcome.log.len(),
        out.join("model.wmtc").display()
    );
    Ok(())
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.len() != TASK_NAMES.len() {
        return Err(usage(format!(
            "expected {} thresholds, got {}",
            TASK_NAMES.len(),
            t.len()
        )));
    }
    if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(usage("thresholds must lie in [0, 1]"));
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    if let Some(t) = &a.thresholds {
        check_thresholds(t)?;
    }
    let out = out_dir(cli)?;
    let checkpoint = Checkpoint::load(&a.model)?;
    let manifest = DatasetManifest::load(manifest_path(&a.data))?;
    let images = ImageCache::load(&manifest, checkpoint.model.config().input_size)?;
    let ev = evaluate_model(&checkpoint, &images, a.thresholds.as_deref(), a.batch_size)?;
    ev.probabilities.save(out.join("test_probs.csv"))?;
    write_json(&out.join("metrics.json"), &ev.report)?;
    print!("{}", ev.report.to_text());
    Ok(())
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<()> {
    let thresholds = match (&a.thresholds, &a.model) {
        (Some(t), _) => {
            check_thresholds(t)?;
            t.clone()
        }
        (None, Some(m)) => Checkpoint::load(m)?.thresholds,
        (None, None) => vec![0.5; 5],
    };
    let out = out_dir(cli)?;
    let probs = ProbabilityTable::load(&a.probs)?;
    let truth = DatasetManifest::load(manifest_path(&a.truth))?;
    let raters = a.raters.iter().map(RaterRecord::load).collect::<Result<Vec<_>, _>>()?;
    let report = compare_raters(&probs, &raters, &truth, &thresholds, a.n_boot, cli.seed.unwrap_or(0))?;
    write_json(&out.join("comparison.json"), &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let seed = cli.seed.unwrap_or(0);
    let config = ModelConfig {
        input_size: a.input_size,
        stage_channels: a.channels.clone(),
        classifier_hidden: 8,
        ..ModelConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut model = WoundModel::new(config, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let s = a.input_size;
    let batch = NdArray::new([n, 3, s, s], (0..n * 3 * s * s).map(|_| rng.gen()).collect())?;
    let labels = NdArray::new([n, 5], (0..n * 5).map(|i| (i % 3 == 0) as u8 as f64).collect())?;
    let weights = ClassWeights::from_counts(&[3, 2, 4, 1, 2], 6, &model.config().task_names)?;
    let options = GradCheckOptions {
        epsilon: a.epsilon,
        max_coords: a.max_coords,
        seed,
    };
    let frozen = model.clone();
    let report = check_gradients(model.params_mut(), &options, |store, tape| {
        let out = frozen
            .forward_with(store, tape, &batch, Mode::Train)
            .map_err(|e| woundnet::TensorError::Contract(e.to_string()))?;
        weighted_bce_loss(tape, out.logits, &labels, &weights)
            .map_err(|e| woundnet::TensorError::Contract(e.to_string()))
    })?;
    let out = out_dir(cli)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    for p in &report.params {
        println!("{:<48} {:>6}/{:<6} {:.3e}", p.name, p.checked, p.total, p.max_rel_error);
    }
    let worst = report.max_error();
    println!("max relative error {worst:.3e} (tolerance {:.1e})", a.tolerance);
    if !(worst < a.tolerance) {
        bail!("gradient check failed: {worst:.3e} >= {:.1e}", a.tolerance);
    }
    Ok(())
}

fn serve_cmd(mut cfg: FileConfig, a: &ServeArgs) -> Result<()> {
    if let Some(l) = a.body_limit {
        cfg.serve.body_limit = l;
    }
    if a.cors_origin.is_some() {
        cfg.serve.cors_origin = a.cors_origin.clone();
    }
    let checkpoint = Checkpoint::load(&a.model)?;
    let predictor = Predictor::new(checkpoint);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(predictor, a.addr, cfg.serve))?;
    Ok(())
}
