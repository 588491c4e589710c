//! The hybrid CNN-LSTM classifier: a 1x1 channel-mapping convolution, a
//! time-distributed per-slice feature extractor, an LSTM over the depth
//! axis, and a dense softmax head. Also houses the training loop
//! (plateau LR decay, early stopping, best-weight retention), head
//! replacement for transfer, and binary checkpointing.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataset::{make_batches, Batch, Dataset};
use crate::metrics::{cohen_kappa, confusion_matrix};
use crate::nn::{
    self, softmax, weighted_cross_entropy, Conv2d, Dense, GlobalAvgPool, Layer, Lstm, MaxPool2,
    NnError, Param, Relu,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::dataset::AugmentSpec;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset error: {0}")]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

/// Feature-extractor topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Two conv-relu-maxpool blocks plus global average pooling. The
    /// workhorse for desk-scale runs and tests.
    Tiny { feature_dim: usize },
    /// The full 13-convolution topology (conv part only), globally
    /// average-pooled to 512 features. Shape-faithful but randomly
    /// initialized; pretrained weights are out of scope.
    Vgg16Shape,
}

impl ExtractorKind {
    pub fn feature_dim(&self) -> usize {
        match self {
            ExtractorKind::Tiny { feature_dim } => *feature_dim,
            ExtractorKind::Vgg16Shape => 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dims: (usize, usize, usize),
    pub extractor: ExtractorKind,
    pub lstm_units: usize,
    pub dense_units: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Paper-scale defaults: 70x224x224 input, VGG-16-shaped extractor,
    /// 256 LSTM units, 1024-unit dense layer.
    pub fn full_scale(num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dims: (70, 224, 224),
            extractor: ExtractorKind::Vgg16Shape,
            lstm_units: 256,
            dense_units: 1024,
            num_classes,
        }
    }

    /// Reduced configuration for tests and synthetic studies.
    pub fn desk_scale(input_dims: (usize, usize, usize), num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dims,
            extractor: ExtractorKind::Tiny { feature_dim: 16 },
            lstm_units: 8,
            dense_units: 16,
            num_classes,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let (d, h, w) = self.input_dims;
        if d < 1 || h < 4 || w < 4 {
            return Err(ModelError::BadConfig(format!(
                "input dims {:?} too small (need D >= 1, H, W >= 4 for two pooling stages)",
                self.input_dims
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::BadConfig("need at least 2 classes".into()));
        }
        if self.extractor.feature_dim() == 0 || self.lstm_units == 0 || self.dense_units == 0 {
            return Err(ModelError::BadConfig("zero-width layer".into()));
        }
        Ok(())
    }
}

/// Freezable model components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    ChannelMapper,
    Extractor,
    Lstm,
    Head,
}

pub struct Model {
    pub config: ModelConfig,
    mapper: Conv2d,
    extractor: Vec<Box<dyn Layer>>,
    lstm: Lstm,
    head_dense: Dense,
    head_relu: Relu,
    head_out: Dense,
    // (batch, depth) of the last training forward, for backward reshapes
    fwd_shape: Option<(usize, usize)>,
}

fn tiny_extractor(feature_dim: usize, rng: &mut Rng) -> Vec<Box<dyn Layer>> {
    let c1 = (feature_dim / 2).max(4);
    vec![
        Box::new(Conv2d::new("extractor.conv1", 3, c1, 3, rng)) as Box<dyn Layer>,
        Box::new(Relu::new()),
        Box::new(MaxPool2::new()),
        Box::new(Conv2d::new("extractor.conv2", c1, feature_dim, 3, rng)),
        Box::new(Relu::new()),
        Box::new(MaxPool2::new()),
        Box::new(GlobalAvgPool::new()),
    ]
}

fn vgg16_shape_extractor(rng: &mut Rng) -> Vec<Box<dyn Layer>> {
    // 13 convolutions in 5 blocks: 64x2, 128x2, 256x3, 512x3, 512x3
    let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    let mut c_in = 3;
    let mut conv_idx = 0;
    for (width, reps) in blocks {
        for _ in 0..reps {
            conv_idx += 1;
            layers.push(Box::new(Conv2d::new(
                &format!("extractor.conv{conv_idx}"),
                c_in,
                width,
                3,
                rng,
            )));
            layers.push(Box::new(Relu::new()));
            c_in = width;
        }
        layers.push(Box::new(MaxPool2::new()));
    }
    layers.push(Box::new(GlobalAvgPool::new()));
    layers
}

/// Build a model with deterministic initialization from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mapper = Conv2d::new("mapper", 1, 3, 1, &mut rng);
    let extractor = match config.extractor {
        ExtractorKind::Tiny { feature_dim } => tiny_extractor(feature_dim, &mut rng),
        ExtractorKind::Vgg16Shape => vgg16_shape_extractor(&mut rng),
    };
    let feature_dim = config.extractor.feature_dim();
    let lstm = Lstm::new("lstm", feature_dim, config.lstm_units, &mut rng);
    let head_dense = Dense::new("head.fc", config.lstm_units, config.dense_units, &mut rng);
    let head_out = Dense::new("head.out", config.dense_units, config.num_classes, &mut rng);
    Ok(Model {
        config: config.clone(),
        mapper,
        extractor,
        lstm,
        head_dense,
        head_relu: Relu::new(),
        head_out,
        fwd_shape: None,
    })
}

impl Model {
    /// Per-frame feature sequence (B, D, feature_dim): channel mapper plus
    /// extractor only. Debug tap for inspecting time-distributed sharing.
    pub fn frame_features(&mut self, input: &Tensor, training: bool) -> Result<Tensor, ModelError> {
        let d = input.dims();
        if d.len() != 4 {
            return Err(NnError::ShapeMismatch {
                place: "model input",
                expected: vec![0, 0, 0, 0],
                got: d.to_vec(),
            }
            .into());
        }
        let (b, depth, h, w) = (d[0], d[1], d[2], d[3]);
        let frames = input.reshape(&[b * depth, 1, h, w]).expect("same length");
        let mut x = self.mapper.forward(&frames, training)?;
        for layer in self.extractor.iter_mut() {
            x = layer.forward(&x, training)?;
        }
        let feat = self.config.extractor.feature_dim();
        if x.dims() != [b * depth, feat] {
            return Err(NnError::ShapeMismatch {
                place: "extractor output",
                expected: vec![b * depth, feat],
                got: x.dims().to_vec(),
            }
            .into());
        }
        if training {
            self.fwd_shape = Some((b, depth));
        }
        Ok(x.reshape(&[b, depth, feat]).expect("same length"))
    }

    /// Full forward pass to class probabilities (rows sum to 1).
    pub fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor, ModelError> {
        let seq = self.frame_features(input, training)?;
        let h = self.lstm.forward(&seq, training)?;
        let a = self.head_dense.forward(&h, training)?;
        let a = self.head_relu.forward(&a, training)?;
        let logits = self.head_out.forward(&a, training)?;
        Ok(softmax(&logits))
    }

    /// Backward pass from the fused softmax-plus-cross-entropy logit
    /// gradient. Parameter gradients accumulate into each layer.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<(), ModelError> {
        let (b, depth) = self.fwd_shape.ok_or(NnError::BackwardBeforeForward)?;
        let g = self.head_out.backward(dlogits)?;
        let g = self.head_relu.backward(&g)?;
        let g = self.head_dense.backward(&g)?;
        let g = self.lstm.backward(&g)?;
        let feat = self.config.extractor.feature_dim();
        let mut g = g.reshape(&[b * depth, feat]).expect("same length");
        for layer in self.extractor.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        self.mapper.backward(&g)?;
        Ok(())
    }

    /// One SGD step over all trainable components; all gradients zeroed.
    pub fn sgd_step(&mut self, lr: f64) {
        let mut layers = self.layers_mut();
        nn::sgd_step(&mut layers, lr);
    }

    fn layers_mut(&mut self) -> Vec<&mut dyn Layer> {
        let mut v: Vec<&mut dyn Layer> = vec![&mut self.mapper];
        for l in self.extractor.iter_mut() {
            v.push(l.as_mut());
        }
        v.push(&mut self.lstm);
        v.push(&mut self.head_dense);
        v.push(&mut self.head_out);
        v
    }

    fn layers(&self) -> Vec<&dyn Layer> {
        let mut v: Vec<&dyn Layer> = vec![&self.mapper];
        for l in self.extractor.iter() {
            v.push(l.as_ref());
        }
        v.push(&self.lstm);
        v.push(&self.head_dense);
        v.push(&self.head_out);
        v
    }

    fn component_layers_mut(&mut self, component: Component) -> Vec<&mut dyn Layer> {
        match component {
            Component::ChannelMapper => vec![&mut self.mapper],
            Component::Extractor => self
                .extractor
                .iter_mut()
                .map(|l| &mut **l as &mut dyn Layer)
                .collect(),
            Component::Lstm => vec![&mut self.lstm],
            Component::Head => vec![&mut self.head_dense, &mut self.head_out],
        }
    }

    /// Freeze or unfreeze one component. Gradients still flow through
    /// frozen components to earlier trainable ones.
    pub fn set_trainable(&mut self, component: Component, flag: bool) {
        for layer in self.component_layers_mut(component) {
            layer.set_trainable(flag);
        }
    }

    /// All parameters in deterministic order.
    pub fn params(&self) -> Vec<&Param> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in self.layers_mut() {
            out.append(&mut layer.params_mut());
        }
        out
    }

    /// Copy of every parameter tensor, by name.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        let mut params = self.params_mut();
        assert_eq!(params.len(), snapshot.len(), "snapshot layout mismatch");
        for (p, (name, value)) in params.iter_mut().zip(snapshot) {
            assert_eq!(&p.name, name, "snapshot layout mismatch");
            p.value = value.clone();
        }
    }

    /// Predicted class per row (ties break toward the lowest index).
    pub fn predict(&mut self, input: &Tensor) -> Result<Vec<usize>, ModelError> {
        let probs = self.forward(input, false)?;
        let k = self.config.num_classes;
        Ok((0..probs.dims()[0])
            .map(|row| {
                let mut best = 0;
                for j in 1..k {
                    if probs.at2(row, j) > probs.at2(row, best) {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Replace the final softmax dense layer with a freshly initialized
/// `new_classes`-way layer; every other parameter is untouched.
pub fn replace_head(model: &mut Model, new_classes: usize, seed: u64) -> Result<(), ModelError> {
    if new_classes < 2 {
        return Err(ModelError::BadConfig("need at least 2 classes".into()));
    }
    let mut rng = Rng::new(seed);
    model.head_out = Dense::new("head.out", model.config.dense_units, new_classes, &mut rng);
    model.config.num_classes = new_classes;
    Ok(())
}

/// Training hyperparameters. Defaults follow the reference protocol:
/// SGD at 0.001 with batch size 2 and a 0.1 plateau factor.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub class_weights: Option<Vec<f64>>,
    pub augment: Option<AugmentSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 0.001,
            batch_size: 2,
            plateau_factor: 0.1,
            plateau_patience: 5,
            early_stop_patience: 10,
            max_epochs: 100,
            class_weights: None,
            augment: None,
            seed: 0,
        }
    }
}

/// Plateau LR decay plus early stopping, driven by validation loss.
/// Improvement means a drop of more than `min_delta` below the best seen.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    factor: f64,
    plateau_patience: usize,
    early_stop_patience: usize,
    min_delta: f64,
    best: f64,
    since_improve: usize,
}

/// Outcome of one validation observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerStep {
    pub improved: bool,
    pub lr: f64,
    pub stop: bool,
}

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> PlateauScheduler {
        PlateauScheduler {
            lr: cfg.lr_init,
            factor: cfg.plateau_factor,
            plateau_patience: cfg.plateau_patience,
            early_stop_patience: cfg.early_stop_patience,
            min_delta: 1e-6,
            best: f64::INFINITY,
            since_improve: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> SchedulerStep {
        let improved = val_loss < self.best - self.min_delta;
        if improved {
            self.best = val_loss;
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
            if self.since_improve % self.plateau_patience == 0 {
                self.lr *= self.factor;
            }
        }
        SchedulerStep {
            improved,
            lr: self.lr,
            stop: self.since_improve >= self.early_stop_patience,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub val_kappa: f64,
}

pub type History = Vec<EpochStats>;

// Record-order batches without shuffling or augmentation, for evaluation.
fn sequential_batches(ds: &Dataset, batch_size: usize) -> Result<Vec<Batch>, ModelError> {
    let mut batches = Vec::new();
    for chunk in (0..ds.len()).collect::<Vec<_>>().chunks(batch_size) {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut dims = None;
        for &i in chunk {
            let t = crate::dataset::load_sample_tensor(&ds.records[i].data_path)
                .map_err(crate::dataset::DatasetError::Load)?;
            dims.get_or_insert_with(|| t.dims().to_vec());
            data.extend_from_slice(t.data());
            labels.push(ds.records[i].label);
        }
        let d = dims.expect("nonempty chunk");
        let data = Tensor::from_vec(&[chunk.len(), d[0], d[1], d[2]], data)
            .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
        batches.push(Batch { data, labels });
    }
    Ok(batches)
}

/// Mean unweighted cross-entropy loss and prediction quality on a dataset.
pub fn evaluate(
    model: &mut Model,
    ds: &Dataset,
    batch_size: usize,
) -> Result<(f64, crate::metrics::ConfusionMatrix), ModelError> {
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let k = model.config.num_classes;
    if ds.num_classes != k {
        return Err(ModelError::ConfigMismatch(format!(
            "model has {k} classes, dataset has {}",
            ds.num_classes
        )));
    }
    let uniform = vec![1.0; k];
    let mut loss_sum = 0.0;
    let mut y_true = Vec::with_capacity(ds.len());
    let mut y_pred = Vec::with_capacity(ds.len());
    for batch in sequential_batches(ds, batch_size)? {
        let probs = model.forward(&batch.data, false)?;
        let (loss, _) = weighted_cross_entropy(&probs, &batch.labels, &uniform)?;
        loss_sum += loss * batch.labels.len() as f64;
        for (row, &label) in batch.labels.iter().enumerate() {
            let mut best = 0;
            for j in 1..k {
                if probs.at2(row, j) > probs.at2(row, best) {
                    best = j;
                }
            }
            y_true.push(label);
            y_pred.push(best);
        }
    }
    let cm = confusion_matrix(&y_true, &y_pred, k)
        .map_err(|e| ModelError::ConfigMismatch(e.to_string()))?;
    Ok((loss_sum / ds.len() as f64, cm))
}

/// Full training loop. On return the model carries the weights of the
/// best-validation-loss epoch; the history records every epoch seen.
pub fn train(
    model: &mut Model,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<History, ModelError> {
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let k = model.config.num_classes;
    let weights = match &cfg.class_weights {
        Some(w) => {
            if w.len() != k {
                return Err(ModelError::ConfigMismatch(format!(
                    "{} class weights for {k} classes",
                    w.len()
                )));
            }
            w.clone()
        }
        None => vec![1.0; k],
    };
    let mut scheduler = PlateauScheduler::new(cfg);
    let mut history = Vec::new();
    let mut best_snapshot = model.snapshot();
    let mut best_val = f64::INFINITY;
    for epoch in 0..cfg.max_epochs {
        let epoch_seed = Rng::derive(cfg.seed, epoch as u64);
        let lr = scheduler.lr;
        let mut train_loss_sum = 0.0;
        let mut n_samples = 0usize;
        for batch in make_batches(train_ds, cfg.batch_size, epoch_seed, cfg.augment.as_ref())? {
            let probs = model.forward(&batch.data, true)?;
            let (loss, dlogits) = weighted_cross_entropy(&probs, &batch.labels, &weights)?;
            model.backward(&dlogits)?;
            model.sgd_step(lr);
            train_loss_sum += loss * batch.labels.len() as f64;
            n_samples += batch.labels.len();
        }
        let (val_loss, cm) = evaluate(model, val_ds, cfg.batch_size)?;
        let val_kappa = cohen_kappa(&cm).map(|r| r.kappa).unwrap_or(0.0);
        history.push(EpochStats {
            epoch,
            train_loss: train_loss_sum / n_samples as f64,
            val_loss,
            lr,
            val_kappa,
        });
        let step = scheduler.observe(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_snapshot = model.snapshot();
        }
        if step.stop {
            break;
        }
    }
    model.restore(&best_snapshot);
    Ok(history)
}

// ---------------------------------------------------------------------------
// checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"VPTC";
const CKPT_VERSION: u32 = 1;

fn config_to_lines(config: &ModelConfig) -> String {
    let (d, h, w) = config.input_dims;
    let (kind, feat) = match config.extractor {
        ExtractorKind::Tiny { feature_dim } => ("tiny", feature_dim),
        ExtractorKind::Vgg16Shape => ("vgg16_shape", 512),
    };
    format!(
        "input_depth={d}\ninput_height={h}\ninput_width={w}\nextractor={kind}\n\
         feature_dim={feat}\nlstm_units={}\ndense_units={}\nnum_classes={}\n",
        config.lstm_units, config.dense_units, config.num_classes
    )
}

fn config_from_lines(text: &str) -> Result<ModelConfig, ModelError> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ModelError::MalformedCheckpoint(format!("bad config line {line:?}"))
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    let get_num = |key: &str| -> Result<usize, ModelError> {
        map.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::MalformedCheckpoint(format!("missing/bad key {key}")))
    };
    let extractor = match map.get("extractor").map(String::as_str) {
        Some("tiny") => ExtractorKind::Tiny {
            feature_dim: get_num("feature_dim")?,
        },
        Some("vgg16_shape") => ExtractorKind::Vgg16Shape,
        other => {
            return Err(ModelError::MalformedCheckpoint(format!(
                "unknown extractor {other:?}"
            )))
        }
    };
    Ok(ModelConfig {
        input_dims: (
            get_num("input_depth")?,
            get_num("input_height")?,
            get_num("input_width")?,
        ),
        extractor,
        lstm_units: get_num("lstm_units")?,
        dense_units: get_num("dense_units")?,
        num_classes: get_num("num_classes")?,
    })
}

/// Serialize the model: magic | version | length-prefixed config block |
/// tensor count | per tensor (length-prefixed name, rank u32, dims u64,
/// f64 little-endian payload). Round trips are bit-exact.
pub fn save_checkpoint<P: AsRef<Path>>(model: &Model, path: P) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let config = config_to_lines(&model.config);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    File::create(path)?.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::MalformedCheckpoint(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Model, ModelError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != CKPT_MAGIC {
        return Err(ModelError::MalformedCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CKPT_VERSION {
        return Err(ModelError::MalformedCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let config_len = c.u32()? as usize;
    let config_text = std::str::from_utf8(c.take(config_len)?)
        .map_err(|_| ModelError::MalformedCheckpoint("config block not UTF-8".into()))?;
    let config = config_from_lines(config_text)?;
    let mut model = build_model(&config, 0)?;
    let n_tensors = c.u32()? as usize;
    let mut stored: Vec<(String, Tensor)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| ModelError::MalformedCheckpoint("tensor name not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u64()? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = c.take(8 * n)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&dims, data)
            .map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?;
        stored.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(ModelError::MalformedCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let mut params = model.params_mut();
    if params.len() != stored.len() {
        return Err(ModelError::MalformedCheckpoint(format!(
            "expected {} tensors, found {}",
            params.len(),
            stored.len()
        )));
    }
    for (p, (name, t)) in params.iter_mut().zip(stored) {
        if p.name != name || p.value.dims() != t.dims() {
            return Err(ModelError::MalformedCheckpoint(format!(
                "tensor {name} does not match model layout ({})",
                p.name
            )));
        }
        p.value = t;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dims: (2, 8, 8),
            extractor: ExtractorKind::Tiny { feature_dim: 8 },
            lstm_units: 4,
            dense_units: 6,
            num_classes: 5,
        }
    }

    fn random_batch(config: &ModelConfig, batch: usize, seed: u64) -> Tensor {
        let (d, h, w) = config.input_dims;
        let mut rng = Rng::new(seed);
        let mut t = Tensor::zeros(&[batch, d, h, w]);
        for v in t.data_mut() {
            *v = rng.next_f64();
        }
        t
    }

    #[test]
    fn forward_rows_are_probabilities() {
        let config = tiny_config();
        let mut model = build_model(&config, 1).unwrap();
        let x = random_batch(&config, 2, 2);
        let p = model.forward(&x, false).unwrap();
        assert_eq!(p.dims(), &[2, 5]);
        for row in 0..2 {
            let s: f64 = (0..5).map(|j| p.at2(row, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for j in 0..5 {
                assert!(p.at2(row, j) > 0.0);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let config = tiny_config();
        let a = build_model(&config, 7).unwrap();
        let b = build_model(&config, 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
        }
        let c = build_model(&config, 8).unwrap();
        let differs = a
            .params()
            .iter()
            .zip(c.params())
            .any(|(pa, pc)| pa.value.data() != pc.value.data());
        assert!(differs);
    }

    #[test]
    fn bad_config_rejected() {
        let mut config = tiny_config();
        config.num_classes = 1;
        assert!(matches!(
            build_model(&config, 0),
            Err(ModelError::BadConfig(_))
        ));
    }

    #[test]
    fn time_distribution_shares_weights() {
        // equal frames at different time positions yield equal features
        let config = tiny_config();
        let mut model = build_model(&config, 3).unwrap();
        let (d, h, w) = config.input_dims;
        let mut rng = Rng::new(4);
        let frame: Vec<f64> = (0..h * w).map(|_| rng.next_f64()).collect();
        let mut x = Tensor::zeros(&[2, d, h, w]);
        // sample 0 frame 0 == sample 1 frame 1
        for (i, &v) in frame.iter().enumerate() {
            x.data_mut()[i] = v;
            let off = (1 * d + 1) * h * w;
            x.data_mut()[off + i] = v;
        }
        let feats = model.frame_features(&x, false).unwrap();
        let f = config.extractor.feature_dim();
        for j in 0..f {
            assert_eq!(feats.at3(0, 0, j), feats.at3(1, 1, j));
        }
    }

    #[test]
    fn equal_constant_volumes_give_identical_outputs() {
        let config = tiny_config();
        let mut model = build_model(&config, 5).unwrap();
        let (d, h, w) = config.input_dims;
        let x = Tensor::from_vec(&[2, d, h, w], vec![0.3; 2 * d * h * w]).unwrap();
        let p = model.forward(&x, false).unwrap();
        for j in 0..config.num_classes {
            assert_eq!(p.at2(0, j), p.at2(1, j));
        }
    }

    #[test]
    fn replace_head_preserves_body() {
        let config = tiny_config();
        let mut model = build_model(&config, 1).unwrap();
        let before: Vec<(String, Tensor)> = model.snapshot();
        replace_head(&mut model, 3, 99).unwrap();
        assert_eq!(model.config.num_classes, 3);
        let after = model.snapshot();
        for ((name_b, tb), (name_a, ta)) in before.iter().zip(&after) {
            assert_eq!(name_b, name_a);
            if !name_b.starts_with("head.out") {
                assert_eq!(tb.data(), ta.data(), "{name_b}");
            }
        }
        // same-K replacement still re-randomizes the head
        let head_before: Tensor = model
            .params()
            .iter()
            .find(|p| p.name == "head.out.w")
            .unwrap()
            .value
            .clone();
        replace_head(&mut model, 3, 100).unwrap();
        let head_after = model
            .params()
            .iter()
            .find(|p| p.name == "head.out.w")
            .unwrap()
            .value
            .clone();
        assert_ne!(head_before.data(), head_after.data());
        // forward still produces probabilities
        let x = random_batch(&model.config.clone(), 1, 6);
        let p = model.forward(&x, false).unwrap();
        let s: f64 = (0..3).map(|j| p.at2(0, j)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_extractor_stays_fixed_but_mapper_learns() {
        let config = tiny_config();
        let mut model = build_model(&config, 2).unwrap();
        model.set_trainable(Component::Extractor, false);
        let extractor_before: Vec<Tensor> = model
            .params()
            .iter()
            .filter(|p| p.name.starts_with("extractor"))
            .map(|p| p.value.clone())
            .collect();
        let mapper_before: Vec<Tensor> = model
            .params()
            .iter()
            .filter(|p| p.name.starts_with("mapper"))
            .map(|p| p.value.clone())
            .collect();
        let x = random_batch(&config, 2, 7);
        for step in 0..5 {
            let probs = model.forward(&x, true).unwrap();
            let (_, dlogits) =
                weighted_cross_entropy(&probs, &[0, 1], &vec![1.0; 5]).unwrap();
            model.backward(&dlogits).unwrap();
            // gradient flows through the frozen extractor to the mapper
            if step == 0 {
                let mapper_grad_norm: f64 = model
                    .params()
                    .iter()
                    .filter(|p| p.name.starts_with("mapper"))
                    .flat_map(|p| p.grad.data().iter())
                    .map(|v| v * v)
                    .sum();
                assert!(mapper_grad_norm > 0.0);
            }
            model.sgd_step(0.01);
        }
        let extractor_after: Vec<Tensor> = model
            .params()
            .iter()
            .filter(|p| p.name.starts_with("extractor"))
            .map(|p| p.value.clone())
            .collect();
        for (b, a) in extractor_before.iter().zip(&extractor_after) {
            assert_eq!(b.data(), a.data());
        }
        let mapper_after: Vec<Tensor> = model
            .params()
            .iter()
            .filter(|p| p.name.starts_with("mapper"))
            .map(|p| p.value.clone())
            .collect();
        let changed = mapper_before
            .iter()
            .zip(&mapper_after)
            .any(|(b, a)| b.data() != a.data());
        assert!(changed, "mapper should have been updated");
    }

    #[test]
    fn scheduler_follows_rigged_worsening_trace() {
        let cfg = TrainConfig::default(); // patience 5 / 10, factor 0.1
        let mut sched = PlateauScheduler::new(&cfg);
        let mut lrs = Vec::new();
        let mut stopped_at = None;
        for epoch in 0..30 {
            // monotone worsening validation loss
            let step = sched.observe(1.0 + epoch as f64 * 0.1);
            lrs.push(step.lr);
            if step.stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        // first observation improves over +inf; decay 5 non-improving
        // epochs later, stop after 10
        assert_eq!(stopped_at, Some(10));
        assert!((lrs[4] - 0.001).abs() < 1e-15);
        assert!((lrs[5] - 0.0001).abs() < 1e-15);
        assert!((lrs[9] - 0.0001).abs() < 1e-15);
        assert!((lrs[10] - 0.00001).abs() < 1e-15);
    }

    #[test]
    fn scheduler_resets_on_improvement() {
        let cfg = TrainConfig {
            plateau_patience: 2,
            early_stop_patience: 4,
            ..TrainConfig::default()
        };
        let mut sched = PlateauScheduler::new(&cfg);
        for &loss in &[1.0, 0.9, 0.95, 0.8] {
            let step = sched.observe(loss);
            assert!(!step.stop);
        }
        assert!((sched.lr - 0.001).abs() < 1e-15, "improvements reset decay");
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let mut model = build_model(&config, 11).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, config);
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
        let x = random_batch(&config, 2, 12);
        let pa = model.forward(&x, false).unwrap();
        let pb = loaded.forward(&x, false).unwrap();
        assert_eq!(pa.data(), pb.data());
    }

    #[test]
    fn checkpoint_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = build_model(&tiny_config(), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&cut),
            Err(ModelError::MalformedCheckpoint(_))
        ));
    }

    #[test]
    fn checkpoint_replace_head_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let model = build_model(&config, 13).unwrap();
        let original = model.snapshot();
        let p1 = dir.path().join("a.ckpt");
        save_checkpoint(&model, &p1).unwrap();
        let mut loaded = load_checkpoint(&p1).unwrap();
        replace_head(&mut loaded, 3, 14).unwrap();
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&loaded, &p2).unwrap();
        let reloaded = load_checkpoint(&p2).unwrap();
        for ((name, orig), p) in original.iter().zip(reloaded.params()) {
            assert_eq!(name, &p.name);
            if !name.starts_with("head.out") {
                assert_eq!(orig.data(), p.value.data(), "{name}");
            }
        }
    }
}
