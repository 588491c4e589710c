//! Subcommand front end: `preprocess | pretrain | finetune | evaluate |
//! predict | gen-synthetic`. Every command accepts `--config <file>` with
//! flat `key=value` lines (flags override the file) and logs the fully
//! resolved configuration before running.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::dataset::{
    self, class_weights, gen_synthetic_dataset, load_manifest, stratified_split, AugmentSpec,
    Dataset, SyntheticSpec,
};
use crate::metrics::{accuracy, cohen_kappa, per_class_f1, ConfusionMatrix};
use crate::model::{
    self, build_model, evaluate, load_checkpoint, replace_head, save_checkpoint, train, Component,
    ExtractorKind, History, ModelConfig, TrainConfig,
};
use crate::preprocess::{hu_normalize, siz_resize, ResizeSpec, SplineOrder, DEFAULT_HU_WINDOW};
use crate::tensor::Tensor;
use crate::volume_io::{self, read_nifti_file, VoxelDomain, Volume};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} files failed:\n{details}")]
    Preprocess {
        failed: usize,
        total: usize,
        details: String,
    },
    #[error("CONFIG_MISMATCH: {0}")]
    ConfigMismatch(String),
}

#[derive(Parser)]
#[command(name = "viptt", version, about = "volumetric sequence classifier pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize and resize volumes listed in a manifest
    Preprocess(PreprocessArgs),
    /// Train a model from scratch with a frozen feature extractor
    Pretrain(PretrainArgs),
    /// Adapt a pretrained checkpoint to a new label set
    Finetune(FinetuneArgs),
    /// Score a checkpoint against a labelled manifest
    Evaluate(EvaluateArgs),
    /// Classify one preprocessed volume
    Predict(PredictArgs),
    /// Generate a synthetic motion-direction dataset
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Target depth (axial slice count)
    #[arg(long)]
    depth: Option<usize>,
    /// Target in-plane size (height and width)
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    window_lo: Option<f64>,
    #[arg(long)]
    window_hi: Option<f64>,
    /// Interpolation order: cubic or linear
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    lr_init: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    plateau_factor: Option<f64>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extractor topology: tiny or vgg16-shape
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    lstm_units: Option<usize>,
    #[arg(long)]
    dense_units: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// History CSV path (default: <out>.history.csv)
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to initialize from
    #[arg(long, conflicts_with = "no_init")]
    init: Option<PathBuf>,
    /// Train from scratch instead of a checkpoint
    #[arg(long)]
    no_init: bool,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Validation report path (default: <out>.report.txt, plus .csv)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Weight the loss by inverse class frequency over the training split
    #[arg(long)]
    class_weights: bool,
    /// Enable rotation augmentation
    #[arg(long)]
    augment: bool,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Preprocessed input volume (VPT1 or single-file volume)
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    /// Samples per class when --counts is not given
    #[arg(long)]
    per_class: Option<usize>,
    /// Comma-separated per-class sample counts, overriding --per-class
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Run with the given argv (including the program name); returns the
/// process exit code. Split out from `main` so tests can drive it.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// key=value config files
// ---------------------------------------------------------------------------

const KNOWN_KEYS: &[&str] = &[
    "lr_init",
    "batch_size",
    "plateau_factor",
    "plateau_patience",
    "early_stop_patience",
    "max_epochs",
    "seed",
    "classes",
    "extractor",
    "feature_dim",
    "lstm_units",
    "dense_units",
    "depth",
    "size",
    "window_lo",
    "window_hi",
    "order",
    "per_class",
    "counts",
    "noise",
];

struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    CliError::Config(format!("config line {}: expected key=value", i + 1))
                })?;
                let k = k.trim();
                if !KNOWN_KEYS.contains(&k) {
                    return Err(CliError::Config(format!("unknown config key {k:?}")));
                }
                map.insert(k.to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    /// Flag beats file beats default.
    fn resolve<V: std::str::FromStr + std::fmt::Display>(
        &self,
        flag: Option<V>,
        key: &str,
        default: V,
    ) -> Result<V, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Config(format!("bad value {raw:?} for config key {key}"))),
            None => Ok(default),
        }
    }
}

fn log_resolved(cmd: &str, pairs: &[(&str, String)]) {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("resolved-config [{cmd}] {}", body.join(" "));
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

fn parse_manifest_rows(manifest: &Path) -> Result<Vec<(PathBuf, String)>, CliError> {
    let text = std::fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines();
    match lines.next() {
        Some("path,label") => {}
        other => {
            return Err(CliError::Config(format!(
                "manifest must start with \"path,label\", found {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (path, label) = line.rsplit_once(',').ok_or_else(|| {
            CliError::Config(format!("manifest row {line:?} is not path,label"))
        })?;
        let p = PathBuf::from(path);
        let p = if p.is_absolute() { p } else { base.join(p) };
        rows.push((p, label.to_string()));
    }
    Ok(rows)
}

fn load_volume_any(path: &Path) -> Result<Volume, volume_io::VolumeIoError> {
    if path.extension().is_some_and(|e| e == "nii") {
        read_nifti_file(path)
    } else {
        let t = volume_io::read_tensor(path)?;
        Volume::from_tensor(&t, VoxelDomain::UnitNormalized)
    }
}

fn preprocess_one(
    path: &Path,
    spec: &ResizeSpec,
    window: (f64, f64),
) -> Result<Tensor, String> {
    let vol = load_volume_any(path).map_err(|e| e.to_string())?;
    let vol = match vol.domain() {
        VoxelDomain::Hounsfield => hu_normalize(&vol, window).map_err(|e| e.to_string())?,
        VoxelDomain::UnitNormalized => vol,
    };
    let vol = siz_resize(&vol, spec).map_err(|e| e.to_string())?;
    Ok(vol.to_tensor())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    let depth = file.resolve(a.depth, "depth", 70)?;
    let size = file.resolve(a.size, "size", 224)?;
    let window = (
        file.resolve(a.window_lo, "window_lo", DEFAULT_HU_WINDOW.0)?,
        file.resolve(a.window_hi, "window_hi", DEFAULT_HU_WINDOW.1)?,
    );
    let order_name = file.resolve(a.order, "order", "cubic".to_string())?;
    let order = match order_name.as_str() {
        "cubic" => SplineOrder::Cubic,
        "linear" => SplineOrder::Linear,
        other => return Err(CliError::Config(format!("unknown spline order {other:?}"))),
    };
    log_resolved(
        "preprocess",
        &[
            ("depth", depth.to_string()),
            ("size", size.to_string()),
            ("window_lo", window.0.to_string()),
            ("window_hi", window.1.to_string()),
            ("order", order_name.clone()),
        ],
    );
    let spec = ResizeSpec {
        target_dims: (depth, size, size),
        order,
    };
    let rows = parse_manifest_rows(&a.manifest)?;
    std::fs::create_dir_all(&a.out_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(
            std::env::var("VIPTT_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0),
        )
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    use rayon::prelude::*;
    let results: Vec<Result<PathBuf, String>> = pool.install(|| {
        rows.par_iter()
            .enumerate()
            .map(|(i, (path, _))| {
                let tensor = preprocess_one(path, &spec, window)
                    .map_err(|e| format!("row {} ({}): {e}", i + 1, path.display()))?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("row{}", i + 1));
                let out_path = a.out_dir.join(format!("{stem}.vpt"));
                volume_io::write_tensor(&out_path, &tensor)
                    .map_err(|e| format!("row {} ({}): {e}", i + 1, out_path.display()))?;
                Ok(out_path)
            })
            .collect()
    });

    let mut manifest = String::from("path,label\n");
    let mut errors = Vec::new();
    for (result, (_, label)) in results.iter().zip(&rows) {
        match result {
            Ok(out_path) => {
                let name = out_path.file_name().unwrap().to_string_lossy();
                manifest.push_str(&format!("{name},{label}\n"));
            }
            Err(e) => errors.push(e.clone()),
        }
    }
    std::fs::write(a.out_dir.join("manifest.csv"), manifest)?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Preprocess {
            failed: errors.len(),
            total: rows.len(),
            details: errors.join("\n"),
        })
    }
}

// ---------------------------------------------------------------------------
// training commands
// ---------------------------------------------------------------------------

fn resolve_train(flags: &TrainFlags, file: &FileConfig) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        lr_init: file.resolve(flags.lr_init, "lr_init", d.lr_init)?,
        batch_size: file.resolve(flags.batch_size, "batch_size", d.batch_size)?,
        plateau_factor: file.resolve(flags.plateau_factor, "plateau_factor", d.plateau_factor)?,
        plateau_patience: file.resolve(flags.plateau_patience, "plateau_patience", d.plateau_patience)?,
        early_stop_patience: file.resolve(
            flags.early_stop_patience,
            "early_stop_patience",
            d.early_stop_patience,
        )?,
        max_epochs: file.resolve(flags.max_epochs, "max_epochs", d.max_epochs)?,
        class_weights: None,
        augment: None,
        seed: file.resolve(flags.seed, "seed", d.seed)?,
    })
}

fn resolve_model(
    flags: &TrainFlags,
    file: &FileConfig,
    input_dims: (usize, usize, usize),
    num_classes: usize,
) -> Result<ModelConfig, CliError> {
    let kind = file.resolve(flags.extractor.clone(), "extractor", "tiny".to_string())?;
    let extractor = match kind.as_str() {
        "tiny" => ExtractorKind::Tiny {
            feature_dim: file.resolve(flags.feature_dim, "feature_dim", 64)?,
        },
        "vgg16-shape" | "vgg16_shape" => ExtractorKind::Vgg16Shape,
        other => return Err(CliError::Config(format!("unknown extractor {other:?}"))),
    };
    Ok(ModelConfig {
        input_dims,
        extractor,
        lstm_units: file.resolve(flags.lstm_units, "lstm_units", 256)?,
        dense_units: file.resolve(flags.dense_units, "dense_units", 1024)?,
        num_classes,
    })
}

fn sample_dims(ds: &Dataset) -> Result<(usize, usize, usize), CliError> {
    let first = ds
        .records
        .first()
        .ok_or(model::ModelError::EmptyDataset)?;
    let t = dataset::load_sample_tensor(&first.data_path)
        .map_err(dataset::DatasetError::Load)?;
    let d = t.dims();
    if d.len() != 3 {
        return Err(CliError::Config(format!(
            "sample {} has rank {} (want 3)",
            first.data_path.display(),
            d.len()
        )));
    }
    Ok((d[0], d[1], d[2]))
}

fn train_pairs(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("lr_init", cfg.lr_init.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("plateau_factor", cfg.plateau_factor.to_string()),
        ("plateau_patience", cfg.plateau_patience.to_string()),
        ("early_stop_patience", cfg.early_stop_patience.to_string()),
        ("max_epochs", cfg.max_epochs.to_string()),
        ("seed", cfg.seed.to_string()),
        (
            "class_weights",
            match &cfg.class_weights {
                Some(w) => format!("{w:?}"),
                None => "none".to_string(),
            },
        ),
        ("augment", cfg.augment.is_some().to_string()),
    ]
}

fn write_history(path: &Path, history: &History) -> Result<(), CliError> {
    let mut out = String::from("epoch,train_loss,val_loss,lr,val_kappa\n");
    for row in history {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.6}\n",
            row.epoch, row.train_loss, row.val_loss, row.lr, row.val_kappa
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Human-readable class names: the 5-way tuberculosis label set when K=5,
/// generic indices otherwise.
pub fn class_names(k: usize) -> Vec<String> {
    if k == 5 {
        ["Infiltrative", "Focal", "Tuberculoma", "Miliary", "Fibro-cavernous"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..k).map(|i| format!("class_{i}")).collect()
    }
}

fn write_report(path: &Path, cm: &ConfusionMatrix) -> Result<(), CliError> {
    let names = class_names(cm.num_classes());
    let acc = accuracy(cm);
    let kappa = cohen_kappa(cm).map(|r| r.kappa);
    let f1 = per_class_f1(cm);
    let mut text = String::new();
    text.push_str(&format!("samples {}\n", cm.total()));
    text.push_str(&format!("accuracy {:.6}\n", acc));
    match kappa {
        Ok(k) => text.push_str(&format!("kappa {k:.6}\n")),
        Err(_) => text.push_str("kappa undefined (degenerate marginals)\n"),
    }
    for (name, f) in names.iter().zip(&f1) {
        text.push_str(&format!("f1 {name} {f:.6}\n"));
    }
    std::fs::write(path, &text)?;

    let mut csv = String::from("metric,class,value\n");
    csv.push_str(&format!("accuracy,,{acc:.6}\n"));
    match kappa {
        Ok(k) => csv.push_str(&format!("kappa,,{k:.6}\n")),
        Err(_) => csv.push_str("kappa,,\n"),
    }
    for (name, f) in names.iter().zip(&f1) {
        csv.push_str(&format!("f1,{name},{f:.6}\n"));
    }
    std::fs::write(path.with_extension("csv"), csv)?;
    Ok(())
}

fn split_dataset(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    Ok(stratified_split(ds, 0.8, seed)?)
}

fn cmd_pretrain(a: PretrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.train.config.as_deref())?;
    let classes = file.resolve(a.classes, "classes", 10)?;
    let cfg = resolve_train(&a.train, &file)?;
    let ds = load_manifest(&a.manifest, Some(classes))?;
    let input_dims = sample_dims(&ds)?;
    let model_cfg = resolve_model(&a.train, &file, input_dims, classes)?;
    let mut pairs = train_pairs(&cfg);
    pairs.push(("classes", classes.to_string()));
    pairs.push(("input_dims", format!("{input_dims:?}")));
    log_resolved("pretrain", &pairs);

    let mut model = build_model(&model_cfg, cfg.seed)?;
    model.set_trainable(Component::Extractor, false);
    let (train_ds, val_ds) = split_dataset(&ds, cfg.seed)?;
    let history = train(&mut model, &train_ds, &val_ds, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    let history_path = a
        .history
        .unwrap_or_else(|| a.out.with_extension("history.csv"));
    write_history(&history_path, &history)?;
    eprintln!(
        "pretrain done: {} epochs, best val loss {:.6}",
        history.len(),
        history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min)
    );
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.train.config.as_deref())?;
    let classes = file.resolve(a.classes, "classes", 5)?;
    let mut cfg = resolve_train(&a.train, &file)?;
    let ds = load_manifest(&a.manifest, Some(classes))?;
    let input_dims = sample_dims(&ds)?;

    let mut model = if a.no_init {
        let model_cfg = resolve_model(&a.train, &file, input_dims, classes)?;
        build_model(&model_cfg, cfg.seed)?
    } else {
        let init = a.init.as_ref().ok_or_else(|| {
            CliError::Config("either --init <ckpt> or --no-init is required".into())
        })?;
        let mut m = load_checkpoint(init)?;
        if m.config.input_dims != input_dims {
            return Err(CliError::ConfigMismatch(format!(
                "checkpoint input dims {:?} vs manifest sample dims {:?}",
                m.config.input_dims, input_dims
            )));
        }
        replace_head(&mut m, classes, cfg.seed)?;
        m
    };
    for c in [
        Component::ChannelMapper,
        Component::Extractor,
        Component::Lstm,
        Component::Head,
    ] {
        model.set_trainable(c, true);
    }

    let (train_ds, val_ds) = split_dataset(&ds, cfg.seed)?;
    if a.class_weights {
        let w = class_weights(&train_ds.labels(), classes)?;
        eprintln!(
            "class weights: [{}]",
            w.iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        cfg.class_weights = Some(w);
    }
    if a.augment {
        cfg.augment = Some(AugmentSpec::default());
    }
    let mut pairs = train_pairs(&cfg);
    pairs.push(("classes", classes.to_string()));
    pairs.push(("init", if a.no_init { "scratch".into() } else { "checkpoint".into() }));
    log_resolved("finetune", &pairs);

    let history = train(&mut model, &train_ds, &val_ds, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    let history_path = a
        .history
        .unwrap_or_else(|| a.out.with_extension("history.csv"));
    write_history(&history_path, &history)?;
    let (val_loss, cm) = evaluate(&mut model, &val_ds, cfg.batch_size)?;
    let report_path = a
        .report
        .unwrap_or_else(|| a.out.with_extension("report.txt"));
    write_report(&report_path, &cm)?;
    eprintln!(
        "finetune done: {} epochs, val loss {:.6}, val accuracy {:.4}",
        history.len(),
        val_loss,
        accuracy(&cm)
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    drop(file);
    let mut model = load_checkpoint(&a.ckpt)?;
    let k = model.config.num_classes;
    let ds = load_manifest(&a.manifest, None)?;
    if ds.num_classes != k {
        return Err(CliError::ConfigMismatch(format!(
            "checkpoint head shape ({k} classes) vs manifest label set ({} classes)",
            ds.num_classes
        )));
    }
    let input_dims = sample_dims(&ds)?;
    if model.config.input_dims != input_dims {
        return Err(CliError::ConfigMismatch(format!(
            "checkpoint input dims {:?} vs manifest sample dims {input_dims:?}",
            model.config.input_dims
        )));
    }
    log_resolved(
        "evaluate",
        &[("classes", k.to_string()), ("input_dims", format!("{input_dims:?}"))],
    );
    let (loss, cm) = evaluate(&mut model, &ds, 2)?;
    write_report(&a.report, &cm)?;
    eprintln!("evaluate done: loss {loss:.6}, accuracy {:.4}", accuracy(&cm));
    Ok(())
}

/// Format the prediction line for one probability row.
pub fn format_prediction(probs: &[f64], names: &[String]) -> String {
    let mut best = 0;
    for j in 1..probs.len() {
        if probs[j] > probs[best] {
            best = j;
        }
    }
    let listed: Vec<String> = probs.iter().map(|p| format!("{p:.6}")).collect();
    format!("class={} probs=[{}]", names[best], listed.join(", "))
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    drop(file);
    let mut model = load_checkpoint(&a.ckpt)?;
    let t = dataset::load_sample_tensor(&a.input).map_err(dataset::DatasetError::Load)?;
    let d = t.dims().to_vec();
    let (md, mh, mw) = model.config.input_dims;
    if d != [md, mh, mw] {
        return Err(CliError::ConfigMismatch(format!(
            "checkpoint input dims {:?} vs input file dims ({})",
            model.config.input_dims,
            d.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let batch = t
        .reshape(&[1, d[0], d[1], d[2]])
        .expect("same length");
    let probs = model.forward(&batch, false).map_err(model::ModelError::from)?;
    let row: Vec<f64> = (0..model.config.num_classes)
        .map(|j| probs.at2(0, j))
        .collect();
    println!("{}", format_prediction(&row, &class_names(row.len())));
    Ok(())
}

fn cmd_gen_synthetic(a: GenSyntheticArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    let classes = file.resolve(a.classes, "classes", 10)?;
    let per_class = file.resolve(a.per_class, "per_class", 40)?;
    let depth = file.resolve(a.depth, "depth", 8)?;
    let size = file.resolve(a.size, "size", 32)?;
    let noise = file.resolve(a.noise, "noise", 0.1)?;
    let seed = file.resolve(a.seed, "seed", 0)?;
    let counts_raw = file.resolve(a.counts, "counts", String::new())?;
    let counts: Vec<usize> = if counts_raw.is_empty() {
        vec![per_class; classes]
    } else {
        counts_raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad count {s:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    if counts.len() != classes {
        return Err(CliError::Config(format!(
            "{} counts for {classes} classes",
            counts.len()
        )));
    }
    log_resolved(
        "gen-synthetic",
        &[
            ("classes", classes.to_string()),
            ("counts", format!("{counts:?}")),
            ("depth", depth.to_string()),
            ("size", size.to_string()),
            ("noise", noise.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    let spec = SyntheticSpec {
        num_classes: classes,
        counts,
        dims: (depth, size, size),
        noise,
    };
    let ds = gen_synthetic_dataset(&spec, seed, &a.out_dir)?;
    eprintln!("generated {} samples in {}", ds.len(), a.out_dir.display());
    Ok(())
}
