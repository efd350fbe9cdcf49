use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fishseg::bench::{benchmark, BenchTarget, Comparison, Threads};
use fishseg::kv::KvMap;
use fishseg::metrics::fmt_metric;
use fishseg::model::{DEFAULT_THRESHOLD, INPUT_HEIGHT, INPUT_WIDTH};
use fishseg::optim::{RAdamConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR};
use fishseg::par;
use fishseg::quant::{InferenceModel, QuantMode, QuantizedModel, SSG8_MAGIC};
use fishseg::sonar::augment::AugmentConfig;
use fishseg::sonar::dataset::{gray_to_image, image_to_gray, mask_to_gray};
use fishseg::sonar::geometry::DEFAULT_APERTURE_DEG;
use fishseg::sonar::pgm::Gray8;
use fishseg::sonar::{load_dataset, SonarImage};
use fishseg::synth::{generate_corpus, SceneSpec};
use fishseg::train::{evaluate_model, evaluate_with, fit, split_dataset, EvalReport, TrainConfig, DEFAULT_EPOCHS, DEFAULT_TRAIN_FRACTION};
use fishseg::weights::{ModelWeights, SSEG_MAGIC};
use fishseg::{DType, Error, ErrorKind, ModelConfig, Result, SegmentationModel, Tensor};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_IO: u8 = 4;

const BEST_WEIGHTS: &str = "best.sseg";
const FINAL_WEIGHTS: &str = "final.sseg";
const TRAIN_LOG: &str = "train.log";

#[derive(Parser)]
#[command(name = "fishseg", version, about = "Fish segmentation for forward-looking sonar")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Number of scenes.
        #[arg(long)]
        n: Option<usize>,
        /// Scene spec as a key-value file (overrides the preset).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Herring)]
        preset: Preset,
    },
    /// Train a model and write weights plus a per-epoch log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Start from an existing weight file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write mask, probability and composite images for each input.
    Infer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        weights: PathBuf,
        /// PGM images, or directories of them.
        inputs: Vec<PathBuf>,
    },
    /// Report loss and segmentation metrics on a corpus.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        weights: PathBuf,
        /// Evaluate only the validation part of the split.
        #[arg(long)]
        validation: bool,
    },
    /// Fold batch norm and write a compact weight file.
    Quantize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        weights: PathBuf,
        /// Store 16-bit floats instead of 8-bit codes.
        #[arg(long)]
        f16: bool,
    },
    /// Time the 64-bit model against the compact runtime.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        weights: PathBuf,
        /// Timed frames per configuration.
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Herring,
    Wittling,
    Clutter,
    Empty,
}

/// Flags shared by every subcommand; each may also come from `--config`.
#[derive(Args, Default)]
struct RunArgs {
    /// Key-value config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Enable or disable augmentation (`true`/`false`).
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct RunConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    augment: bool,
    split: f64,
    threshold: f64,
    threads: usize,
}

const CONFIG_KEYS: [&str; 10] = [
    "data",
    "out",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "augment",
    "split",
    "threshold",
    "threads",
];

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                let kv = KvMap::parse(&text)?;
                if let Some(k) = kv.keys().find(|k| !CONFIG_KEYS.contains(k)) {
                    return Err(Error::Parameter(format!("unknown config key `{k}`")));
                }
                kv
            }
            None => KvMap::new(),
        };
        let cfg = RunConfig {
            data: self.data.clone().or(file.get("data")?),
            out: self.out.clone().or(file.get("out")?),
            seed: self.seed.or(file.get("seed")?).unwrap_or(0),
            epochs: self.epochs.or(file.get("epochs")?).unwrap_or(DEFAULT_EPOCHS),
            batch_size: self.batch_size.or(file.get("batch_size")?).unwrap_or(DEFAULT_BATCH_SIZE),
            lr: self.lr.or(file.get("lr")?).unwrap_or(DEFAULT_LR),
            augment: self.augment.or(file.get("augment")?).unwrap_or(true),
            split: self.split.or(file.get("split")?).unwrap_or(DEFAULT_TRAIN_FRACTION),
            threshold: self.threshold.or(file.get("threshold")?).unwrap_or(DEFAULT_THRESHOLD),
            threads: self.threads.or(file.get("threads")?).unwrap_or(0),
        };
        if cfg.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be finite and non-negative", cfg.lr)));
        }
        if !(cfg.split > 0.0 && cfg.split <= 1.0) {
            return Err(Error::Parameter(format!("split {} outside (0, 1]", cfg.split)));
        }
        if !(0.0..=1.0).contains(&cfg.threshold) {
            return Err(Error::Parameter(format!("threshold {} outside [0, 1]", cfg.threshold)));
        }
        Ok(cfg)
    }
}

impl RunConfig {
    fn data_dir(&self) -> Result<&Path> {
        let d = self.data.as_deref().ok_or_else(|| Error::Parameter("--data is required".into()))?;
        if !d.is_dir() {
            return Err(not_found(d, "dataset directory"));
        }
        Ok(d)
    }

    /// Output directory, created if its parent exists.
    fn out_dir(&self) -> Result<&Path> {
        let d = self.out.as_deref().ok_or_else(|| Error::Parameter("--out is required".into()))?;
        ensure_parent(d)?;
        fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.to_path_buf(),
            source: e,
        })?;
        Ok(d)
    }

    fn out_file(&self) -> Result<&Path> {
        let f = self.out.as_deref().ok_or_else(|| Error::Parameter("--out is required".into()))?;
        ensure_parent(f)?;
        Ok(f)
    }

    fn thread_limit(&self) -> Option<usize> {
        (self.threads > 0).then_some(self.threads)
    }
}

fn not_found(path: &Path, what: &str) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} does not exist")),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(not_found(p, "parent directory")),
        _ => Ok(()),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Float or compact weights, detected from the file magic.
enum LoadedModel {
    Float(ModelWeights),
    Quantized(QuantizedModel),
}

impl LoadedModel {
    fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        match bytes.get(..4) {
            Some(m) if m == SSEG_MAGIC => Ok(Self::Float(ModelWeights::from_bytes(&bytes)?)),
            Some(m) if m == SSG8_MAGIC => Ok(Self::Quantized(QuantizedModel::from_bytes(&bytes)?)),
            _ => Err(Error::Data(format!("{} is not a weight file", path.display()))),
        }
    }

    fn runtime(&self) -> Result<InferenceModel<f32>> {
        match self {
            Self::Float(w) => Ok(InferenceModel::from_model(&w.build_model::<f64>(INPUT_HEIGHT, INPUT_WIDTH)?)),
            Self::Quantized(q) => Ok(q.runtime().clone()),
        }
    }
}

fn preset_spec(preset: Preset, seed: u64) -> SceneSpec {
    match preset {
        Preset::Herring => SceneSpec::herring(seed),
        Preset::Wittling => SceneSpec::wittling(seed),
        Preset::Clutter => SceneSpec::clutter_only(seed),
        Preset::Empty => SceneSpec::empty(seed),
    }
}

fn cmd_synth(cfg: &RunConfig, n: Option<usize>, spec_file: Option<&Path>, preset: Preset) -> Result<()> {
    let n = n.ok_or_else(|| Error::Parameter("--n is required".into()))?;
    if n == 0 {
        return Err(Error::Parameter("--n must be positive".into()));
    }
    let mut spec = match spec_file {
        Some(p) => SceneSpec::from_kv(&KvMap::parse(&fs::read_to_string(p).map_err(io_err(p))?)?)?,
        None => preset_spec(preset, cfg.seed),
    };
    if spec_file.is_none() || cfg.seed != 0 {
        spec.seed = cfg.seed;
    }
    let out = cfg.out_dir()?;
    let summary = generate_corpus(&spec, n, out)?;
    println!(
        "wrote {} scenes ({} fish, {} fish pixels) to {}",
        summary.scenes,
        summary.fish,
        summary.fish_pixels,
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let data = load_dataset(cfg.data_dir()?)?;
    let out = cfg.out_dir()?;
    let (train, val) = split_dataset(&data, cfg.split)?;
    let first = &train[0].image;
    let model_cfg = ModelConfig {
        height: first.width(),
        width: first.height(),
        ..ModelConfig::default()
    };
    let mut model = SegmentationModel::<f32>::with_seed(model_cfg, cfg.seed)?;
    if let Some(p) = resume {
        model.load_weights(p)?;
    }
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: RAdamConfig::with_lr(cfg.lr),
        augment: cfg.augment.then(AugmentConfig::default),
        seed: cfg.seed,
        threshold: cfg.threshold,
    };
    let log_path = out.join(TRAIN_LOG);
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(io_err(&log_path))?);
    let outcome = fit(&mut model, train, val, &train_cfg, &mut log, |rec| {
        eprintln!("{}", rec.log_line());
    })?;
    log.flush().map_err(io_err(&log_path))?;
    model.save_weights(&out.join(FINAL_WEIGHTS))?;
    if let Some(best) = &outcome.best_state {
        let mut best_model = model.clone();
        best_model.load_state(best)?;
        best_model.save_weights(&out.join(BEST_WEIGHTS))?;
    } else {
        model.save_weights(&out.join(BEST_WEIGHTS))?;
    }
    match outcome.best_epoch {
        Some(e) => println!("best epoch {e}; weights in {}", out.display()),
        None => println!("no epochs run; initial weights in {}", out.display()),
    }
    Ok(())
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::Parameter("no input images given".into()));
    }
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "pgm"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(not_found(p, "input"));
        }
    }
    Ok(files)
}

fn probability_gray(p: &Tensor<f32>, width: usize, height: usize) -> Gray8 {
    let data = p.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Gray8 { width, height, data }
}

/// Image and mask side by side.
fn composite(image: &Gray8, mask: &Gray8) -> Gray8 {
    let mut data = image.data.clone();
    data.extend_from_slice(&mask.data);
    Gray8 {
        width: image.width + mask.width,
        height: image.height,
        data,
    }
}

fn cmd_infer(cfg: &RunConfig, weights: &Path, inputs: &[PathBuf]) -> Result<()> {
    let files = collect_inputs(inputs)?;
    let model = LoadedModel::load(weights)?.runtime()?;
    let out = cfg.out_dir()?;
    for f in &files {
        let gray = Gray8::load(f)?;
        let image = gray_to_image(&gray, DEFAULT_APERTURE_DEG)?;
        let probs = model.predict_image(&image)?;
        let mask = model.predict_mask(&image, cfg.threshold)?;
        let stem = f
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Parameter(format!("bad input name {}", f.display())))?;
        let mask_gray = mask_to_gray(&mask);
        mask_gray.save(&out.join(format!("{stem}_mask.pgm")))?;
        probability_gray(&probs, image.width(), image.height()).save(&out.join(format!("{stem}_prob.pgm")))?;
        composite(&image_to_gray(&image), &mask_gray).save(&out.join(format!("{stem}_composite.pgm")))?;
    }
    println!("wrote {} outputs to {}", 3 * files.len(), out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("samples {}", r.samples);
    println!("loss {:.6}", r.loss);
    for (label, c) in [("fan", &r.fan), ("full", &r.full)] {
        println!(
            "{label} accuracy {} precision {} recall {} f1 {} iou {}",
            fmt_metric(c.accuracy()),
            fmt_metric(c.precision()),
            fmt_metric(c.recall()),
            fmt_metric(c.f1()),
            fmt_metric(c.iou()),
        );
    }
}

fn cmd_eval(cfg: &RunConfig, weights: &Path, validation: bool) -> Result<()> {
    let data = load_dataset(cfg.data_dir()?)?;
    let set = if validation { split_dataset(&data, cfg.split)?.1 } else { &data[..] };
    if set.is_empty() {
        return Err(Error::Data("nothing to evaluate after the split".into()));
    }
    let w = set[0].image.width();
    let h = set[0].image.height();
    let report = match LoadedModel::load(weights)? {
        LoadedModel::Float(weights) => evaluate_model(&weights.build_model::<f32>(w, h)?, set, cfg.threshold)?,
        LoadedModel::Quantized(q) => evaluate_with(set, cfg.threshold, |x: &Tensor<f32>| q.runtime().predict(x))?,
    };
    print_report(&report);
    Ok(())
}

fn cmd_quantize(cfg: &RunConfig, weights: &Path, f16: bool) -> Result<()> {
    let out = cfg.out_file()?;
    let model = match LoadedModel::load(weights)? {
        LoadedModel::Float(w) => w.build_model::<f64>(INPUT_HEIGHT, INPUT_WIDTH)?,
        LoadedModel::Quantized(_) => return Err(Error::Data("weights are already quantized".into())),
    };
    let mode = if f16 { QuantMode::Float16 } else { QuantMode::Int8 };
    let q = QuantizedModel::from_model(&model, mode)?;
    q.save(out)?;
    let before = fs::metadata(weights).map_err(io_err(weights))?.len();
    let after = fs::metadata(out).map_err(io_err(out))?.len();
    println!(
        "{} -> {}: {before} -> {after} bytes (ratio {:.3})",
        weights.display(),
        out.display(),
        before as f64 / after as f64
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, weights: &Path, n: usize) -> Result<()> {
    let float = match LoadedModel::load(weights)? {
        LoadedModel::Float(w) => w.build_model::<f64>(INPUT_HEIGHT, INPUT_WIDTH)?,
        LoadedModel::Quantized(_) => return Err(Error::Parameter("bench needs the 64-bit weight file".into())),
    };
    let baseline_bytes = ModelWeights::from_model(&float, DType::F64)?.to_bytes().len() as u64;
    let q = QuantizedModel::from_model(&float, QuantMode::Int8)?;
    let quantized_bytes = q.to_bytes().len() as u64;
    let frames: Vec<SonarImage> = match &cfg.data {
        Some(_) => load_dataset(cfg.data_dir()?)?.into_iter().map(|s| s.image).collect(),
        None => {
            let spec = SceneSpec::herring(cfg.seed);
            fishseg::synth::generate_samples(&spec, 4)?.into_iter().map(|s| s.image).collect()
        }
    };
    let settings: &[Threads] = if cfg.threads == 1 { &[Threads::Single] } else { &[Threads::Single, Threads::All] };
    for &threads in settings {
        let cmp = Comparison {
            threads,
            baseline: benchmark(BenchTarget::Baseline(&float), &frames, n, threads)?,
            quantized: benchmark(BenchTarget::Quantized(&q), &frames, n, threads)?,
            baseline_bytes,
            quantized_bytes,
        };
        println!("{cmp}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let run_args = match &cli.command {
        Command::Synth { run, .. }
        | Command::Train { run, .. }
        | Command::Infer { run, .. }
        | Command::Eval { run, .. }
        | Command::Quantize { run, .. }
        | Command::Bench { run, .. } => run,
    };
    let cfg = run_args.resolve()?;
    if let Command::Bench { n, .. } = &cli.command {
        if *n < fishseg::bench::MIN_FRAMES {
            return Err(Error::Parameter(format!(
                "need at least {} timed frames, got {n}",
                fishseg::bench::MIN_FRAMES
            )));
        }
    }
    par::with_threads(cfg.thread_limit(), || match &cli.command {
        Command::Synth { n, spec, preset, .. } => cmd_synth(&cfg, *n, spec.as_deref(), *preset),
        Command::Train { resume, .. } => cmd_train(&cfg, resume.as_deref()),
        Command::Infer { weights, inputs, .. } => cmd_infer(&cfg, weights, inputs),
        Command::Eval { weights, validation, .. } => cmd_eval(&cfg, weights, *validation),
        Command::Quantize { weights, f16, .. } => cmd_quantize(&cfg, weights, *f16),
        Command::Bench { weights, n, .. } => cmd_bench(&cfg, weights, *n),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Io => EXIT_IO,
            })
        }
    }
}
