//! Workflow implementations behind the subcommands, plus the run-directory
//! plumbing they share. Artifact files are deterministic for identical flags;
//! wall-clock timestamps appear only in `log.txt`.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use image::RgbImage;

use a4net::data::{generate_synthetic, preprocess_eval, Dataset, LabelRanges, SyntheticSpec};
use a4net::explain::{grad_cam, sidecar_toml, upsample, CamRequest, CamTarget};
use a4net::model::{A4Net, AttributeSet};
use a4net::tensor::Tensor;
use a4net::train::{
    evaluate, linear_probe, load_checkpoint, metrics_to_toml, run_ablation, save_checkpoint,
    LossKind, ProbeConfig,
};
use a4net::{Error, Result};

use crate::config::ConfigOverrides;

/// Run directory holding every artifact of one invocation. Relative paths are
/// rooted at `$A4NET_RUN_ROOT` when set.
pub struct RunDir {
    path: PathBuf,
    log: File,
}

impl RunDir {
    pub fn create(out: &Path) -> Result<RunDir> {
        let path = match std::env::var_os("A4NET_RUN_ROOT") {
            Some(root) if out.is_relative() => PathBuf::from(root).join(out),
            _ => out.to_path_buf(),
        };
        std::fs::create_dir_all(&path)?;
        let log = File::create(path.join("log.txt"))?;
        Ok(RunDir { path, log })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Timestamped line into `log.txt`, mirrored to stderr.
    pub fn log(&mut self, message: &str) {
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(self.log, "[{unix}] {message}");
        eprintln!("{message}");
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        Ok(std::fs::write(self.path.join(name), text)?)
    }
}

fn parse_attributes(flag: &Option<String>, fallback: AttributeSet) -> Result<AttributeSet> {
    match flag {
        Some(text) => AttributeSet::parse(text),
        None => Ok(fallback),
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthPreset {
    /// 64 px, 4 emotions, 5 scenes, 4 expressions
    Mini,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Class-layout preset the size flags start from
    #[arg(long, value_enum, default_value = "mini")]
    pub preset: SynthPreset,
    /// Number of images to render
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub emotion_classes: usize,
    #[arg(long, default_value_t = 5)]
    pub scene_classes: usize,
    #[arg(long, default_value_t = 4)]
    pub fe_classes: usize,
    /// Generator seed; identical seeds reproduce identical bytes
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Run directory for images/, manifest.tsv, synth.toml, log.txt
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let SynthPreset::Mini = args.preset;
    let spec = SyntheticSpec {
        num_samples: args.samples,
        image_size: args.size,
        emotion_classes: args.emotion_classes,
        scene_classes: args.scene_classes,
        fe_classes: args.fe_classes,
        seed: args.seed,
    };
    let mut dir = RunDir::create(&args.out)?;
    let started = Instant::now();
    generate_synthetic(&spec, dir.path())?;
    let echo = toml::to_string(&spec)
        .map_err(|e| Error::Format(format!("spec serialization: {e}")))?;
    dir.write("synth.toml", &echo)?;
    dir.log(&format!(
        "synth: {} images at {} px into {} ({:.1}s)",
        spec.num_samples,
        spec.image_size,
        dir.path().display(),
        started.elapsed().as_secs_f64()
    ));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Run directory for ckpt, metrics.toml, config.toml, log.txt
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let train_path = cfg.data.train_manifest.clone().ok_or_else(|| {
        Error::Config("training needs a manifest: pass --train-data or set [data] train_manifest".into())
    })?;
    let ranges = LabelRanges::from_model(&cfg.model);
    let train_set = Dataset::from_manifest(&train_path, &ranges)?;
    let val_set = cfg
        .data
        .eval_manifest
        .as_ref()
        .map(|p| Dataset::from_manifest(p, &ranges))
        .transpose()?;

    let mut dir = RunDir::create(&args.out)?;
    dir.write("config.toml", &cfg.to_toml()?)?;
    dir.log(&format!(
        "train: {} samples{}, batch {}, lr {}, {} epochs, seed {}",
        train_set.len(),
        val_set
            .as_ref()
            .map(|v| format!(" + {} validation", v.len()))
            .unwrap_or_default(),
        cfg.train.batch_size,
        cfg.train.learning_rate,
        cfg.train.epochs,
        cfg.train.seed
    ));

    let started = Instant::now();
    let mut model: A4Net<f32> = A4Net::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = a4net::train::train(&mut model, &train_set, val_set.as_ref(), &cfg.train)?;
    for (i, loss) in outcome.history.iter().enumerate() {
        let val = outcome
            .val_top1
            .get(i)
            .map(|v| format!(", val top1 {v:.4}"))
            .unwrap_or_default();
        dir.log(&format!("epoch {}: mean loss {loss:.6}{val}", i + 1));
    }
    save_checkpoint(&outcome.checkpoint, &dir.path().join("ckpt"))?;
    dir.log(&format!(
        "saved checkpoint from epoch {} ({:.1}s)",
        outcome.best_epoch,
        started.elapsed().as_secs_f64()
    ));

    // Metrics describe the saved checkpoint, so a later `eval` on the same
    // data reproduces them.
    let restored = outcome.checkpoint.restore()?;
    let eval_on = val_set.as_ref().unwrap_or(&train_set);
    let mut report = evaluate(&restored.model, eval_on, cfg.train.attribute_set)?;
    report.loss_history = outcome.history.clone();
    let text = metrics_to_toml(&report)?;
    dir.write("metrics.toml", &text)?;
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to evaluate; label ranges come from the checkpoint
    #[arg(long)]
    pub data: PathBuf,
    /// Active branches; defaults to the checkpoint's training set-up
    #[arg(long)]
    pub attributes: Option<String>,
    /// Optional run directory for metrics.toml and log.txt
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let checkpoint = load_checkpoint::<f32>(&args.checkpoint)?;
    let restored = checkpoint.restore()?;
    let active = parse_attributes(&args.attributes, checkpoint.train_cfg.attribute_set)?;
    let ranges = LabelRanges::from_model(&restored.model.cfg);
    let data = Dataset::from_manifest(&args.data, &ranges)?;
    let report = evaluate(&restored.model, &data, active)?;
    let text = metrics_to_toml(&report)?;
    if let Some(out) = &args.out {
        let mut dir = RunDir::create(out)?;
        dir.write("metrics.toml", &text)?;
        dir.log(&format!(
            "eval: {} samples, emotion top1 {:.4}",
            data.len(),
            report.emotion_top1
        ));
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProbeProtocol {
    /// 26-way multi-label head, batch 80, lr 0.002, 30 epochs
    Emotic,
    /// 8-way softmax head, batch 80, lr 0.003, 30 epochs
    Se30k8,
    /// 6-way softmax head, batch 2, lr 0.00007, 30 epochs
    UnbiasEmo,
}

#[derive(clap::Args, Debug)]
pub struct ProbeArgs {
    /// Checkpoint whose frozen features feed the probe
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest supplying features and emotion targets
    #[arg(long)]
    pub data: PathBuf,
    /// Published protocol supplying the head hyperparameters
    #[arg(long, value_enum)]
    pub protocol: Option<ProbeProtocol>,
    /// Probe head classes; defaults to the checkpoint's emotion classes
    #[arg(long)]
    pub target_classes: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Probe loss: softmax or binary (one-vs-rest)
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    /// Active branches during feature extraction
    #[arg(long)]
    pub attributes: Option<String>,
    /// Optional run directory for metrics.toml and log.txt
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_loss(text: &str) -> std::result::Result<LossKind, String> {
    match text {
        "softmax" => Ok(LossKind::SoftmaxCe),
        "binary" => Ok(LossKind::BinaryCe),
        other => Err(format!("unknown loss `{other}`; use softmax or binary")),
    }
}

pub fn probe(args: &ProbeArgs) -> Result<()> {
    let checkpoint = load_checkpoint::<f32>(&args.checkpoint)?;
    let restored = checkpoint.restore()?;
    let mut cfg = match args.protocol {
        Some(ProbeProtocol::Emotic) => ProbeConfig::emotic(),
        Some(ProbeProtocol::Se30k8) => ProbeConfig::se30k8(),
        Some(ProbeProtocol::UnbiasEmo) => ProbeConfig::unbias_emo(),
        None => ProbeConfig {
            target_classes: restored.model.cfg.emotion_classes,
            ..ProbeConfig::se30k8()
        },
    };
    if let Some(v) = args.target_classes {
        cfg.target_classes = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.loss {
        cfg.loss_kind = v;
    }
    let active = parse_attributes(&args.attributes, checkpoint.train_cfg.attribute_set)?;
    let ranges = LabelRanges::from_model(&restored.model.cfg);
    let data = Dataset::from_manifest(&args.data, &ranges)?;
    let report = linear_probe(&restored.model, &data, &cfg, active)?;
    let text = metrics_to_toml(&report)?;
    if let Some(out) = &args.out {
        let mut dir = RunDir::create(out)?;
        dir.write("metrics.toml", &text)?;
        dir.log(&format!(
            "probe: {} samples, {} classes, top1 {:.4}",
            data.len(),
            cfg.target_classes,
            report.emotion_top1
        ));
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Comma-separated attribute subsets, one training run each
    #[arg(long, default_value = "B,C,S,F,S+F,B+S+F,C+S+F,B+C+S+F")]
    pub subsets: String,
    /// Run directory for ablation.tsv, ablation.txt, config.toml, log.txt
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let subsets = args
        .subsets
        .split(',')
        .map(AttributeSet::parse)
        .collect::<Result<Vec<_>>>()?;
    let (Some(train_path), Some(eval_path)) =
        (cfg.data.train_manifest.clone(), cfg.data.eval_manifest.clone())
    else {
        return Err(Error::Config(
            "ablation needs --train-data and --eval-data (or both [data] manifests)".into(),
        ));
    };
    let ranges = LabelRanges::from_model(&cfg.model);
    let train_set = Dataset::from_manifest(&train_path, &ranges)?;
    let eval_set = Dataset::from_manifest(&eval_path, &ranges)?;

    let mut dir = RunDir::create(&args.out)?;
    dir.write("config.toml", &cfg.to_toml()?)?;
    dir.log(&format!(
        "ablate: {} subsets x {} epochs on {} samples",
        subsets.len(),
        cfg.train.epochs,
        train_set.len()
    ));
    let started = Instant::now();
    let table = run_ablation::<f32>(&cfg.model, &cfg.train, &subsets, &train_set, &eval_set)?;
    dir.write("ablation.tsv", &table.to_tsv())?;
    dir.write("ablation.txt", &format!("{table}\n"))?;
    dir.log(&format!("finished in {:.1}s", started.elapsed().as_secs_f64()));
    println!("{table}");
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(clap::Args, Debug)]
pub struct ExplainArgs {
    /// Checkpoint whose emotion head is explained
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image to explain (any size at or above the model input)
    #[arg(long)]
    pub image: PathBuf,
    /// Canonical layer name; defaults to the last stage-4 block
    #[arg(long)]
    pub layer: Option<String>,
    /// Emotion class to explain; defaults to the prediction
    #[arg(long = "class")]
    pub target_class: Option<usize>,
    /// Heatmap opacity in [0, 1]
    #[arg(long, default_value_t = 0.45)]
    pub alpha: f64,
    /// Active branches; defaults to the checkpoint's training set-up
    #[arg(long)]
    pub attributes: Option<String>,
    /// Run directory for overlay.png, cam.toml, log.txt
    #[arg(long)]
    pub out: PathBuf,
}

/// Channels-first [0, 1] tensor back to 8-bit pixels: the model's exact view,
/// so the overlay aligns with the heatmap.
fn tensor_to_image(t: &Tensor<f32>) -> RgbImage {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            (t[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let checkpoint = load_checkpoint::<f32>(&args.checkpoint)?;
    let restored = checkpoint.restore()?;
    let active = parse_attributes(&args.attributes, checkpoint.train_cfg.attribute_set)?;
    let source = image::open(&args.image)
        .map_err(|e| Error::Image(format!("{}: {e}", args.image.display())))?
        .to_rgb8();
    let size = restored.model.cfg.backbone.input_size;
    let x = preprocess_eval::<f32>(&source, size)?;
    let request = CamRequest {
        layer: args.layer.clone(),
        target: args
            .target_class
            .map(CamTarget::Class)
            .unwrap_or(CamTarget::Predicted),
    };
    let cam = grad_cam(&restored.model, &x, active, &request)?;
    let heat = upsample(&cam.heatmap, size, size);
    let view = tensor_to_image(&x);
    let mut dir = RunDir::create(&args.out)?;
    a4net::explain::save_overlay(&view, &heat, args.alpha, &dir.path().join("overlay.png"))?;
    let sidecar = sidecar_toml(&cam)?;
    dir.write("cam.toml", &sidecar)?;
    dir.log(&format!(
        "explain: layer {}, class {} (p {:.3})",
        cam.layer, cam.target, cam.probability
    ));
    print!("{sidecar}");
    Ok(())
}
