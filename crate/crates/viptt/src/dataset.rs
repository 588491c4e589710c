//! Sample manifests, stratified splitting, class weights, deterministic
//! batching with rotation augmentation, and synthetic data generation.
//!
//! Everything here is reproducible from a single `u64` seed: the shuffle
//! order and all augmentation draws are fixed before any sample is loaded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::preprocess::{rotate_axial, AUGMENT_ANGLES_DEG};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::volume_io::{self, Volume, VolumeIoError, VoxelDomain};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("manifest row {row}: file not found: {path}")]
    MissingFile { row: usize, path: PathBuf },
    #[error("label {label} out of range for {k} classes (manifest row {row})")]
    LabelOutOfRange { row: usize, label: usize, k: usize },
    #[error("class {0} has {1} samples, need at least 2 to split")]
    ClassTooSmall(usize, usize),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Load(#[from] VolumeIoError),
}

/// One labeled sample: a path to its tensor data and a 0-based class id.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub data_path: PathBuf,
    pub label: usize,
}

/// An ordered set of labeled samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub num_classes: usize,
    /// (D, H, W) once known; manifests of unpreprocessed volumes leave
    /// this unset until the first sample is loaded.
    pub input_dims: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    fn per_class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, r) in self.records.iter().enumerate() {
            by_class[r.label].push(i);
        }
        by_class
    }
}

/// Load a `path,label` CSV manifest. Relative data paths are resolved
/// against the manifest's directory; every referenced file must exist.
/// The class count is `max label + 1` unless overridden.
pub fn load_manifest<P: AsRef<Path>>(
    path: P,
    num_classes: Option<usize>,
) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| DatasetError::MalformedManifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "path,label" => {}
        other => {
            return Err(DatasetError::MalformedManifest(format!(
                "expected header \"path,label\", got {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    let mut records = Vec::new();
    let mut max_label = 0usize;
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (p, l) = line.rsplit_once(',').ok_or_else(|| {
            DatasetError::MalformedManifest(format!("line {}: missing comma", lineno + 1))
        })?;
        let label: usize = l.trim().parse().map_err(|_| {
            DatasetError::MalformedManifest(format!(
                "line {}: label {:?} is not a non-negative integer",
                lineno + 1,
                l
            ))
        })?;
        let data_path = base.join(p.trim());
        if !data_path.is_file() {
            return Err(DatasetError::MissingFile {
                row: lineno + 1,
                path: data_path,
            });
        }
        max_label = max_label.max(label);
        records.push(SampleRecord { data_path, label });
    }
    let k = match num_classes {
        Some(k) => {
            if max_label >= k {
                let row = records.iter().position(|r| r.label >= k).unwrap() + 2;
                return Err(DatasetError::LabelOutOfRange {
                    row,
                    label: max_label,
                    k,
                });
            }
            k
        }
        None => max_label + 1,
    };
    Ok(Dataset {
        records,
        num_classes: k,
        input_dims: None,
    })
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class stratified split: for each class with `n_c` samples, exactly
/// `round(train_fraction * n_c)` go to the train side, chosen by a
/// deterministic per-class shuffle. Record order within each side follows
/// the original dataset order.
pub fn stratified_split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must be in (0, 1)"
    );
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (c, indices) in ds.per_class_indices().into_iter().enumerate() {
        if indices.len() < 2 {
            return Err(DatasetError::ClassTooSmall(c, indices.len()));
        }
        let mut shuffled = indices;
        let mut rng = Rng::new(Rng::derive(seed, c as u64));
        rng.shuffle(&mut shuffled);
        let n_train = round_half_up(train_fraction * shuffled.len() as f64)
            .clamp(1, shuffled.len() - 1);
        train_idx.extend_from_slice(&shuffled[..n_train]);
        val_idx.extend_from_slice(&shuffled[n_train..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| Dataset {
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
        num_classes: ds.num_classes,
        input_dims: ds.input_dims,
    };
    Ok((pick(&train_idx), pick(&val_idx)))
}

/// Balanced inverse-frequency weights: `w_c = N / (K * n_c)`, so that
/// `sum_c w_c * n_c = N`.
pub fn class_weights(labels: &[usize], k: usize) -> Result<Vec<f64>, DatasetError> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &nc)| {
            if nc == 0 {
                Err(DatasetError::EmptyClass(c))
            } else {
                Ok(n / (k as f64 * nc as f64))
            }
        })
        .collect()
}

/// Rotation-augmentation configuration for batching.
#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub angles_deg: Vec<f64>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            angles_deg: AUGMENT_ANGLES_DEG.to_vec(),
        }
    }
}

/// One loaded batch: samples stacked as (B, D, H, W) plus labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub data: Tensor,
    pub labels: Vec<usize>,
}

/// Load one sample tensor: VPT1 by default, NIfTI when the path ends in
/// `.nii` (raw Hounsfield values).
pub fn load_sample_tensor(path: &Path) -> Result<Tensor, VolumeIoError> {
    if path.extension().is_some_and(|e| e == "nii") {
        Ok(volume_io::read_nifti_file(path)?.to_tensor())
    } else {
        volume_io::read_tensor(path)
    }
}

/// One epoch of batches: record order shuffled from `seed`, an optional
/// rotation angle drawn per sample from the same generator, final partial
/// batch kept. Callers derive a fresh seed per epoch
/// (`Rng::derive(seed, epoch)`).
pub fn make_batches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    augment: Option<&AugmentSpec>,
) -> Result<Vec<Batch>, DatasetError> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut order);
    let angles: Vec<Option<f64>> = order
        .iter()
        .map(|_| augment.map(|a| *rng.choose(&a.angles_deg)))
        .collect();
    let mut batches = Vec::new();
    for (chunk, angle_chunk) in order.chunks(batch_size).zip(angles.chunks(batch_size)) {
        let mut samples = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for (&i, &angle) in chunk.iter().zip(angle_chunk) {
            let rec = &ds.records[i];
            let mut t = load_sample_tensor(&rec.data_path)?;
            if t.rank() != 3 {
                return Err(DatasetError::MalformedManifest(format!(
                    "{}: expected a rank-3 (D,H,W) sample, got rank {}",
                    rec.data_path.display(),
                    t.rank()
                )));
            }
            if let Some(a) = angle {
                if a != 0.0 {
                    let d = t.dims();
                    let vol = Volume::from_parts(
                        (d[0], d[1], d[2]),
                        t.data().to_vec(),
                        VoxelDomain::UnitNormalized,
                    );
                    t = rotate_axial(&vol, a).to_tensor();
                }
            }
            samples.push(t);
            labels.push(rec.label);
        }
        let d = samples[0].dims().to_vec();
        for s in &samples {
            if s.dims() != d {
                return Err(DatasetError::MalformedManifest(format!(
                    "inconsistent sample dims: {:?} vs {:?}",
                    s.dims(),
                    d
                )));
            }
        }
        let mut data = Vec::with_capacity(samples.len() * samples[0].len());
        for s in &samples {
            data.extend_from_slice(s.data());
        }
        let batch = Tensor::from_vec(&[samples.len(), d[0], d[1], d[2]], data)
            .expect("stacked dims consistent");
        batches.push(Batch {
            data: batch,
            labels,
        });
    }
    Ok(batches)
}

/// Parameters for synthetic sequence generation. Each class is a motion
/// direction for a Gaussian blob drifting across the depth axis: single
/// frames look alike (a blob somewhere), only the motion separates the
/// classes, so labels require temporal integration.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Samples per class; must have `num_classes` entries.
    pub counts: Vec<usize>,
    pub dims: (usize, usize, usize),
    /// Uniform background noise amplitude, in [0, 1).
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn balanced(num_classes: usize, per_class: usize, dims: (usize, usize, usize)) -> Self {
        SyntheticSpec {
            num_classes,
            counts: vec![per_class; num_classes],
            dims,
            noise: 0.1,
        }
    }
}

/// Motion velocity (vx, vy) in pixels per frame for a class. Directions
/// are the K-th roots of unity with class 0 moving along +x; consecutive
/// class ids take mirrored angle pairs (+a, -a, +2a, -2a, ...) so that the
/// hardest-to-separate directions (same x-profile, opposite y) fall on
/// adjacent labels.
pub fn class_velocity(class: usize, num_classes: usize, speed: f64) -> (f64, f64) {
    let step = if class % 2 == 0 {
        (class / 2) as f64
    } else {
        -(((class + 1) / 2) as f64)
    };
    let theta = std::f64::consts::TAU * step / num_classes as f64;
    (speed * theta.cos(), speed * theta.sin())
}

/// Render one synthetic sample as a (D, H, W) tensor with values in [0, 1].
pub fn synth_sample(
    dims: (usize, usize, usize),
    class: usize,
    num_classes: usize,
    noise: f64,
    rng: &mut Rng,
) -> Tensor {
    let (d, h, w) = dims;
    let speed = 0.4 * w.min(h) as f64 / d as f64 * 2.0; // ~80% of extent over the clip
    let (vx, vy) = class_velocity(class, num_classes, speed);
    let sigma0 = w.min(h) as f64 / 6.0;
    let jitter = w.min(h) as f64 / 8.0;
    // start so the trajectory stays centered, plus positional jitter
    let cx0 = (w - 1) as f64 / 2.0 - vx * (d - 1) as f64 / 2.0 + rng.uniform(-jitter, jitter);
    let cy0 = (h - 1) as f64 / 2.0 - vy * (d - 1) as f64 / 2.0 + rng.uniform(-jitter, jitter);
    let amp = rng.uniform(0.55, 0.65);
    let mut t = Tensor::zeros(&[d, h, w]);
    for k in 0..d {
        let cx = cx0 + vx * k as f64;
        let cy = cy0 + vy * k as f64;
        // Position-dependent rendering keeps the blob's location readable
        // from pooled frame statistics (an average-pooled CNN is nearly
        // translation invariant): brightness ramps with x, width with y.
        // A single frame still reveals only position, never the motion
        // direction that defines the class.
        let xn = (cx / (w - 1) as f64).clamp(0.0, 1.0);
        let yn = (cy / (h - 1) as f64).clamp(0.0, 1.0);
        let bright = 0.1 + 0.9 * xn;
        let sigma = sigma0 * (0.4 + 1.8 * yn);
        // global illumination tied to the blob position, as if it were a
        // moving light source
        let base = 0.4 * xn + 0.4 * yn;
        for i in 0..h {
            for j in 0..w {
                let dx = j as f64 - cx;
                let dy = i as f64 - cy;
                let blob =
                    amp * bright * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let bg = rng.uniform(0.0, noise);
                *t.at3_mut(k, i, j) = (base + blob + bg).min(1.0);
            }
        }
    }
    t
}

/// Generate a synthetic dataset on disk: one VPT1 file per sample plus a
/// `manifest.csv`. Deterministic from `seed` (bit-identical files on rerun).
pub fn gen_synthetic_dataset<P: AsRef<Path>>(
    spec: &SyntheticSpec,
    seed: u64,
    out_dir: P,
) -> Result<Dataset, DatasetError> {
    assert_eq!(
        spec.counts.len(),
        spec.num_classes,
        "counts must have one entry per class"
    );
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut manifest = String::from("path,label\n");
    let mut records = Vec::new();
    for (c, &count) in spec.counts.iter().enumerate() {
        for s in 0..count {
            let mut rng = Rng::new(Rng::derive(seed, (c * 1_000_003 + s) as u64));
            let tensor = synth_sample(spec.dims, c, spec.num_classes, spec.noise, &mut rng);
            let name = format!("class{c}_sample{s}.vpt");
            let path = out_dir.join(&name);
            volume_io::write_tensor(&path, &tensor)?;
            writeln!(manifest, "{name},{c}").expect("string write");
            records.push(SampleRecord {
                data_path: path,
                label: c,
            });
        }
    }
    fs::write(out_dir.join("manifest.csv"), manifest)?;
    Ok(Dataset {
        records,
        num_classes: spec.num_classes,
        input_dims: Some(spec.dims),
    })
}
