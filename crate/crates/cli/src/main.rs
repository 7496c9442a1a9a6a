//! `adnet`: train, evaluate and apply the segmentation network from the
//! command line.

mod overlay;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adnet_core::data::{
    generate_synthetic, load_config, load_dataset, load_image, load_mask, resize, save_gray_png, save_rgb_png,
    stack_samples, RunConfig, Sample, SyntheticSpec, IMAGE_DIR, MASK_DIR,
};
use adnet_core::engine::checkpoint::Checkpoint;
use adnet_core::eval::{evaluate, read_metric_column, wilcoxon_signed_rank, Metrics, Prediction};
use adnet_core::model::{forward_macs, parameter_count, shape_trace, AdNet};
use adnet_core::train::{Trainer, BEST_FILE, LAST_FILE, LOG_FILE};
use adnet_core::Tensor;
use clap::{Args, Parser, Subcommand};

/// Resolved configuration written into every run directory.
const CONFIG_ECHO: &str = "config.txt";
const METRICS_FILE: &str = "metrics.csv";
const ROC_FILE: &str = "roc.csv";
const ROC_PLOT: &str = "roc.svg";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adnet_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use adnet_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::ConfigParse { .. } | E::ConfigValue { .. } | E::Param(_)) => 1,
            CliError::Core(E::NonFinite { .. } | E::Degenerate(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "adnet", version, about = "Lesion segmentation with a dilated residual encoder/decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Dataset root containing `images/` and `masks/`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the synthetic generator from the configuration.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and the epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Run directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue the run stored in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint and write per-image metrics and the ROC curve.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Configuration; defaults to the manifest next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image and write probability, mask and overlay PNGs.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask drawn in red on the overlay.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the stage shapes, parameter count and multiply-accumulates.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Paired signed-rank test on one metric column of two metrics CSVs.
    Stats {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "jaccard")]
        column: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(e.exit_code())
        }
    }
}

/// The error and its sources joined on one line.
fn one_line(e: &CliError) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let text = s.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
        source = s.source();
    }
    msg.replace('\n', " ")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            source,
            out,
            resume,
        } => train(&config, &source, &out, resume),
        Command::Eval {
            checkpoint,
            source,
            config,
            out,
        } => eval(&checkpoint, &source, config.as_deref(), out.as_deref()),
        Command::Predict {
            checkpoint,
            image,
            out,
            mask,
            config,
        } => predict(&checkpoint, &image, &out, mask.as_deref(), config.as_deref()),
        Command::Inspect { config } => inspect(config.as_deref()),
        Command::Stats { a, b, column } => stats(&a, &b, &column),
    }
}

fn synthetic_samples(spec: &SyntheticSpec, size: usize) -> Result<Vec<Sample>> {
    let mut samples = generate_synthetic(spec)?;
    if spec.size != size {
        for s in &mut samples {
            s.image = resize(&s.image, size, size)?;
            s.mask = resize(&s.mask, size, size)?;
        }
    }
    Ok(samples)
}

fn dataset(root: &Path, size: usize) -> Result<Vec<Sample>> {
    let samples = load_dataset(&root.join(IMAGE_DIR), &root.join(MASK_DIR), size)?;
    if samples.is_empty() {
        return Err(adnet_core::Error::Data(format!("no images under {}", root.join(IMAGE_DIR).display())).into());
    }
    Ok(samples)
}

fn train(config: &Path, source: &Source, out: &Path, resume: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let size = cfg.model.input_size;
    let pool = match &source.data {
        Some(root) => dataset(root, size)?,
        None => synthetic_samples(&cfg.synthetic.spec, size)?,
    };
    let manifest = cfg.to_text();
    std::fs::create_dir_all(out).map_err(|e| adnet_core::Error::Data(format!("{}: {e}", out.display())))?;
    let echo = out.join(CONFIG_ECHO);
    std::fs::write(&echo, &manifest).map_err(|e| adnet_core::Error::Data(format!("{}: {e}", echo.display())))?;

    let model = AdNet::new(cfg.model.clone())?;
    let mut trainer = if resume {
        Trainer::resume_from_dir(model, cfg.loss.clone(), cfg.train.clone(), out, manifest)?
    } else {
        Trainer::new(model, cfg.loss.clone(), cfg.train.clone())?.with_output(out, manifest)?
    };
    let (train, val) = adnet_core::train::split_train_val(&pool, cfg.train.val_fraction, cfg.train.seed)?;
    println!(
        "training on {} images, validating on {}, {} parameters",
        train.len(),
        val.len(),
        trainer.model().params().numel()
    );
    let summary = trainer.fit_with(&train, &val, |r| {
        println!(
            "epoch {:>4}  lr {:.3e}  train {:.5}  val {:.5}  val_jaccard {:.4}  {} ms",
            r.epoch, r.lr, r.train.total, r.val.total, r.val_jaccard, r.wall_ms
        );
    })?;
    println!(
        "{} after {} epochs; best val loss {:.6} at epoch {}",
        summary.stop, summary.epochs, summary.best_val_loss, summary.best_epoch
    );
    println!(
        "wrote {}, {}, {} and {} in {}",
        CONFIG_ECHO,
        BEST_FILE,
        LAST_FILE,
        LOG_FILE,
        out.display()
    );
    Ok(())
}

/// The configuration at `explicit`, else the manifest saved beside `checkpoint`.
fn config_for(checkpoint: &Path, explicit: Option<&Path>) -> Result<RunConfig> {
    if let Some(path) = explicit {
        return Ok(load_config(path)?);
    }
    let mut side = checkpoint.as_os_str().to_owned();
    side.push(".txt");
    let side = PathBuf::from(side);
    if !side.exists() {
        return Err(CliError::Usage(format!(
            "{} not found; pass --config to describe the model",
            side.display()
        )));
    }
    Ok(load_config(&side)?)
}

fn load_model(checkpoint: &Path, cfg: &RunConfig) -> Result<AdNet> {
    let mut model = AdNet::new(cfg.model.clone())?;
    model.params_mut().load_checkpoint(&Checkpoint::load(checkpoint)?)?;
    Ok(model)
}

fn eval(checkpoint: &Path, source: &Source, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = config_for(checkpoint, config)?;
    let mut model = load_model(checkpoint, &cfg)?;
    let size = cfg.model.input_size;
    let samples = match &source.data {
        Some(root) => dataset(root, size)?,
        None => synthetic_samples(&cfg.synthetic.test_spec(), size)?,
    };
    let mut probs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.train.batch_size) {
        let (x, _) = stack_samples(chunk)?;
        let p = model.predict(&x)?;
        let per = p.numel() / chunk.len();
        probs.extend(p.data().chunks(per).map(<[f64]>::to_vec));
    }
    let items: Vec<Prediction> = samples
        .iter()
        .zip(&probs)
        .map(|(s, p)| Prediction {
            id: &s.id,
            prob: p,
            truth: s.mask.data(),
        })
        .collect();
    let report = evaluate(&items, cfg.train.threshold)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| adnet_core::Error::Data(format!("{}: {e}", dir.display())))?;
    report.write_csv(&dir.join(METRICS_FILE))?;
    report.write_roc_csv(&dir.join(ROC_FILE))?;
    report.write_roc_svg(&dir.join(ROC_PLOT))?;
    println!("{} images", samples.len());
    for (name, (mean, std)) in Metrics::NAMES
        .iter()
        .zip(report.mean.to_array().into_iter().zip(report.std.to_array()))
    {
        println!("{name:<12} {mean:.4} ± {std:.4}");
    }
    println!("{:<12} {:.4}", "auc", report.auc);
    println!("wrote {METRICS_FILE}, {ROC_FILE} and {ROC_PLOT} in {}", dir.display());
    Ok(())
}

fn predict(checkpoint: &Path, image: &Path, out: &Path, mask: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let cfg = config_for(checkpoint, config)?;
    let mut model = load_model(checkpoint, &cfg)?;
    let original = load_image(image)?;
    let (h, w) = (original.shape()[0], original.shape()[1]);
    let size = cfg.model.input_size;
    let x = resize(&original, size, size)?;
    let x = Tensor::stack(&[&x])?;
    let prob = model.predict(&x)?;
    let prob = Tensor::new(&[size, size, 1], prob.data().to_vec())?;
    let prob = resize(&prob, h, w)?;
    let binary = prob.map(|p| (p >= cfg.train.threshold) as u8 as f64);
    let truth = match mask {
        Some(path) => Some(resize(&load_mask(path)?, h, w)?),
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| adnet_core::Error::Data(format!("{}: {e}", out.display())))?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("prediction");
    let paths = [
        out.join(format!("{stem}_prob.png")),
        out.join(format!("{stem}_mask.png")),
        out.join(format!("{stem}_overlay.png")),
    ];
    save_gray_png(&paths[0], &prob)?;
    save_gray_png(&paths[1], &binary)?;
    save_rgb_png(&paths[2], &overlay::overlay(&original, truth.as_ref(), &binary))?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn inspect(config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    for entry in shape_trace(&cfg.model)? {
        let dims: Vec<String> = entry.shape.iter().map(|d| d.to_string()).collect();
        println!("{:<24} {}", entry.name, dims.join("×"));
    }
    let params = parameter_count(&cfg.model)?;
    println!("parameters {params} ({:.2}M)", params as f64 / 1e6);
    println!("forward MACs {:.3}G", forward_macs(&cfg.model)? as f64 / 1e9);
    Ok(())
}

fn stats(a: &Path, b: &Path, column: &str) -> Result<()> {
    let xs = read_metric_column(a, column)?;
    let ys: HashMap<String, f64> = read_metric_column(b, column)?.into_iter().collect();
    if ys.len() != xs.len() {
        return Err(adnet_core::Error::Data(format!(
            "{} has {} images, {} has {}",
            a.display(),
            xs.len(),
            b.display(),
            ys.len()
        ))
        .into());
    }
    let mut pa = Vec::with_capacity(xs.len());
    let mut pb = Vec::with_capacity(xs.len());
    for (id, x) in &xs {
        let y = ys
            .get(id)
            .ok_or_else(|| adnet_core::Error::Data(format!("image `{id}` is missing from {}", b.display())))?;
        pa.push(*x);
        pb.push(*y);
    }
    let w = wilcoxon_signed_rank(&pa, &pb)?;
    println!("pairs        {}", xs.len());
    println!("non-zero     {}", w.n);
    println!("W+           {}", w.w_plus);
    println!("W-           {}", w.w_minus);
    println!("statistic    {}", w.statistic);
    println!("p-value      {:.6} ({:?})", w.p_value, w.method);
    println!(
        "{} at the 5% level",
        if w.significant(0.05) { "significant" } else { "not significant" }
    );
    Ok(())
}
