//! Dataset assembly, the mask-through regression loss, and the epoch loop
//! with early stopping.
//!
//! Audio features are the per-utterance-normalized compressed noisy
//! magnitude; visual features are region-pooled flow frames normalized with
//! training-set statistics. The loss is computed on unnormalized compressed
//! magnitudes so the mask keeps its physical meaning.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{
    compress, compute_iam, load_wav_mono, stft, AudioError, CompressedMag, Mask, SpecNorm,
    StftConfig,
};
use crate::event::{read_events, EventError};
use crate::features::{FeatureConfig, FeatureError, FeatureNorm};
use crate::flow::FlowConfig;
use crate::pipeline::{apply_feature_norm, visual_matrix_spanning, PipelineError};
use crate::net::{
    adam_step, backward, forward, init_params, AdamState, ForwardMode, ModelParams, NetConfig,
    NetError, SavedModel,
};
use crate::util::mix_seed;

pub const BINS: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One dataset sample: file paths relative to the manifest location.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SampleEntry {
    pub mix_wav: String,
    pub clean_wav: String,
    pub events: String,
    pub speaker_id: String,
    pub split: Split,
}

/// The dataset index: a JSON array of entries on disk, plus the directory
/// relative paths resolve against.
#[derive(Debug, Clone)]
pub struct SampleManifest {
    pub entries: Vec<SampleEntry>,
    base_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("manifest: {reason}")]
    MalformedManifest { reason: String },
    #[error("manifest references missing file {path}")]
    MissingFile { path: String },
    #[error("speaker {speaker} appears in more than one split")]
    SpeakerOverlap { speaker: String },
    #[error("no samples in {split:?} split")]
    EmptySplit { split: Split },
    #[error("events span {visual} slices but audio has {audio} frames; more than one slice over")]
    LengthMismatchBeyondOneFrame { audio: usize, visual: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("bad config: {reason}")]
    BadConfig { reason: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
}

impl From<PipelineError> for TrainError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::LengthMismatchBeyondOneFrame { audio, visual } => {
                TrainError::LengthMismatchBeyondOneFrame { audio, visual }
            }
            PipelineError::MissingEvents => {
                TrainError::BadConfig { reason: "missing event stream".into() }
            }
            PipelineError::Audio(e) => TrainError::Audio(e),
            PipelineError::Feature(e) => TrainError::Feature(e),
            PipelineError::Net(e) => TrainError::Net(e),
        }
    }
}

impl SampleManifest {
    pub fn new(entries: Vec<SampleEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self { entries, base_dir: base_dir.into() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<SampleEntry> = serde_json::from_str(&text)
            .map_err(|e| TrainError::MalformedManifest { reason: e.to_string() })?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Self { entries, base_dir })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let text = serde_json::to_string_pretty(&self.entries)
            .map_err(|e| TrainError::MalformedManifest { reason: e.to_string() })?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn split(&self, split: Split) -> Vec<&SampleEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Checks the manifest invariants: every referenced file exists and no
    /// speaker appears in two splits.
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut seen: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); 3];
        for e in &self.entries {
            for rel in [&e.mix_wav, &e.clean_wav, &e.events] {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(TrainError::MissingFile { path: p.display().to_string() });
                }
            }
            seen[e.split as usize].insert(&e.speaker_id);
        }
        for (i, a) in seen.iter().enumerate() {
            for b in seen.iter().skip(i + 1) {
                if let Some(sp) = a.intersection(b).next() {
                    return Err(TrainError::SpeakerOverlap { speaker: sp.to_string() });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub feature: FeatureConfig,
    pub stft: StftConfig,
    pub flow: FlowConfig,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 10,
            lr: 1e-3,
            seed: 0,
            feature: FeatureConfig::default(),
            stft: StftConfig::default(),
            flow: FlowConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Frequency bins per frame under this STFT setup.
    pub fn bins(&self) -> usize {
        self.stft.fft_size / 2 + 1
    }

    /// The network may consume the full audio-visual input or, for
    /// ablations, just the leading audio block.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::BadConfig {
                reason: "max_epochs and patience must be at least 1".into(),
            });
        }
        let bins = self.bins();
        let full = bins + self.feature.dim();
        if self.net.input_dim != full && self.net.input_dim != bins {
            return Err(TrainError::BadConfig {
                reason: format!(
                    "net input_dim {} matches neither audio-visual {} nor audio-only {}",
                    self.net.input_dim, full, bins
                ),
            });
        }
        Ok(())
    }
}

/// One fully prepared sample. `inputs` is the normalized T x (257+D)
/// feature matrix; the magnitudes stay unnormalized for the loss.
#[derive(Debug, Clone)]
pub struct AssembledSample {
    pub inputs: Array2<f64>,
    pub noisy_cmag: CompressedMag,
    pub clean_cmag: CompressedMag,
    pub iam: Mask,
    pub speaker_id: String,
}

struct RawSample {
    noisy_cmag: CompressedMag,
    clean_cmag: CompressedMag,
    visual: Array2<f64>,
    speaker_id: String,
    split: Split,
}

fn extract_raw(
    entry: &SampleEntry,
    base_dir: &Path,
    cfg: &TrainConfig,
) -> Result<RawSample, TrainError> {
    let mix = load_wav_mono(base_dir.join(&entry.mix_wav))?;
    let clean = load_wav_mono(base_dir.join(&entry.clean_wav))?;
    let noisy_cmag = compress(&stft(&mix, &cfg.stft)?, &cfg.stft);
    let clean_cmag = compress(&stft(&clean, &cfg.stft)?, &cfg.stft);

    let stream = read_events(base_dir.join(&entry.events))?;
    let visual = visual_matrix_spanning(&stream, &cfg.flow, &cfg.feature, noisy_cmag.nrows())?;
    Ok(RawSample {
        noisy_cmag,
        clean_cmag,
        visual,
        speaker_id: entry.speaker_id.clone(),
        split: entry.split,
    })
}

fn finalize(raw: RawSample, feature_norm: &FeatureNorm) -> Result<AssembledSample, TrainError> {
    let spec_norm = SpecNorm::fit(&[&raw.noisy_cmag], &raw.speaker_id)?;
    let audio = spec_norm.apply(&raw.noisy_cmag);
    let mut visual = raw.visual;
    apply_feature_norm(&mut visual, feature_norm);
    let inputs = concatenate(Axis(1), &[audio.view(), visual.view()])
        .expect("audio and visual share the frame axis");
    let iam = compute_iam(&raw.clean_cmag, &raw.noisy_cmag)?;
    Ok(AssembledSample {
        inputs,
        noisy_cmag: raw.noisy_cmag,
        clean_cmag: raw.clean_cmag,
        iam,
        speaker_id: raw.speaker_id,
    })
}

/// Builds one sample's network inputs and targets from its files.
///
/// The audio frame count sets the time axis: a stream whose events end
/// early pads with zero features, one that runs at most one slice long is
/// truncated, and anything further over is an error.
pub fn assemble_sample(
    entry: &SampleEntry,
    base_dir: &Path,
    cfg: &TrainConfig,
    feature_norm: &FeatureNorm,
) -> Result<AssembledSample, TrainError> {
    finalize(extract_raw(entry, base_dir, cfg)?, feature_norm)
}

/// All splits assembled, plus the training-set statistics that travel with
/// the model file.
pub struct PreparedDataset {
    pub train: Vec<AssembledSample>,
    pub val: Vec<AssembledSample>,
    pub test: Vec<AssembledSample>,
    pub feature_norm: FeatureNorm,
    pub spec_norm: SpecNorm,
}

/// Extracts every sample (in parallel), fits the visual normalization and
/// the training-domain spectral statistics on the train split, then
/// assembles all three splits.
pub fn prepare_dataset(
    manifest: &SampleManifest,
    cfg: &TrainConfig,
) -> Result<PreparedDataset, TrainError> {
    cfg.validate()?;
    manifest.validate()?;
    let raws: Vec<RawSample> = manifest
        .entries
        .par_iter()
        .map(|e| extract_raw(e, &manifest.base_dir, cfg))
        .collect::<Result<_, _>>()?;

    let train_frames: Vec<crate::features::FeatureFrame> = raws
        .iter()
        .filter(|r| r.split == Split::Train)
        .flat_map(|r| {
            r.visual.rows().into_iter().enumerate().map(|(i, row)| crate::features::FeatureFrame {
                slice_index: i,
                values: row.to_vec(),
            })
        })
        .collect();
    if train_frames.is_empty() {
        return Err(TrainError::EmptySplit { split: Split::Train });
    }
    let feature_norm = FeatureNorm::fit(&train_frames)?;
    let train_mags: Vec<&CompressedMag> = raws
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| &r.noisy_cmag)
        .collect();
    let spec_norm = SpecNorm::fit(&train_mags, "train")?;

    let mut out = PreparedDataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        feature_norm,
        spec_norm,
    };
    for raw in raws {
        let split = raw.split;
        let sample = finalize(raw, &out.feature_norm)?;
        match split {
            Split::Train => out.train.push(sample),
            Split::Val => out.val.push(sample),
            Split::Test => out.test.push(sample),
        }
    }
    Ok(out)
}

/// Mean squared error between the masked noisy magnitude and the clean
/// magnitude, with its gradient with respect to the mask.
pub fn loss_jmr(
    mask: &Array2<f64>,
    noisy_cmag: &CompressedMag,
    clean_cmag: &CompressedMag,
) -> Result<(f64, Array2<f64>), TrainError> {
    if mask.dim() != noisy_cmag.dim() {
        return Err(TrainError::ShapeMismatch { left: mask.dim(), right: noisy_cmag.dim() });
    }
    if noisy_cmag.dim() != clean_cmag.dim() {
        return Err(TrainError::ShapeMismatch { left: noisy_cmag.dim(), right: clean_cmag.dim() });
    }
    let n = (mask.nrows() * mask.ncols()) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(mask.dim());
    ndarray::Zip::from(&mut grad)
        .and(mask)
        .and(noisy_cmag)
        .and(clean_cmag)
        .for_each(|g, &m, &x, &c| {
            let r = m * x - c;
            loss += r * r;
            *g = 2.0 * r * x / n;
        });
    Ok((loss / n, grad))
}

/// History line for one completed epoch, serialized as JSON lines.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    pub model: SavedModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Network inputs for a sample under the configured input width: the full
/// audio-visual matrix, or just the leading audio block for ablations.
fn model_inputs(sample: &AssembledSample, input_dim: usize) -> Array2<f64> {
    if input_dim == sample.inputs.ncols() {
        sample.inputs.clone()
    } else {
        sample.inputs.slice(s![.., ..input_dim]).to_owned()
    }
}

fn mean_val_loss(params: &ModelParams, val: &[AssembledSample]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for sample in val {
        let inputs = model_inputs(sample, params.cfg.input_dim);
        let (mask, _) = forward(params, &inputs, ForwardMode::Eval)?;
        let (loss, _) = loss_jmr(&mask, &sample.noisy_cmag, &sample.clean_cmag)?;
        total += loss;
    }
    Ok(total / val.len() as f64)
}

/// Trains on an already-prepared dataset: one Adam step per sample over a
/// seeded shuffle each epoch, early stopping on mean validation loss, and
/// the best-validation parameters in the returned model.
pub fn train_prepared(
    data: &PreparedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit { split: Split::Train });
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit { split: Split::Val });
    }

    let mut params = init_params(&cfg.net);
    let mut adam = AdamState::new(&params.tensors);
    let mut best = params.tensors.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut history = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut train_loss = 0.0;
        for &i in &order {
            let sample = &data.train[i];
            let inputs = model_inputs(sample, cfg.net.input_dim);
            let (mask, cache) = forward(&params, &inputs, ForwardMode::Train { dropout_step: step })?;
            let cache = cache.expect("training mode always returns a cache");
            let (loss, grad_mask) = loss_jmr(&mask, &sample.noisy_cmag, &sample.clean_cmag)?;
            let (grads, _) = backward(&params, &cache, &grad_mask)?;
            adam_step(&mut params.tensors, &grads, &mut adam, cfg.lr)?;
            train_loss += loss;
            step += 1;
        }
        train_loss /= data.train.len() as f64;

        let val_loss = mean_val_loss(&params, &data.val)?;
        history.push(EpochStats { epoch, train_loss, val_loss });

        if val_loss < best_val {
            best_val = val_loss;
            best = params.tensors.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let model = SavedModel {
        params: ModelParams { cfg: cfg.net.clone(), tensors: best },
        feature_norm: data.feature_norm.clone(),
        spec_norm: data.spec_norm.clone(),
        stft: cfg.stft.clone(),
        flow: cfg.flow.clone(),
        feature: cfg.feature.clone(),
    };
    Ok(TrainOutcome { model, history, best_epoch })
}

/// Full pipeline: prepare the manifest's samples, then train.
pub fn train(manifest: &SampleManifest, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let data = prepare_dataset(manifest, cfg)?;
    train_prepared(&data, cfg)
}
