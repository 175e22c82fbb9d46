//! End-to-end separation: events to features, mixture to spectrogram,
//! network mask to reconstructed waveform.

use ndarray::{concatenate, Array2, Axis};

use crate::audio::{
    apply_mask_and_reconstruct, compress, stft, AudioError, SpecNorm, StftConfig, Waveform,
};
use crate::event::EventStream;
use crate::features::{
    extract_feature_frames, FeatureConfig, FeatureError, FeatureFrame, FeatureNorm,
};
use crate::flow::{compute_stream_flow, FlowConfig};
use crate::net::{forward, ForwardMode, NetError, SavedModel};

/// The three configs every feature-extraction pass needs, bundled so they
/// travel as one JSON document.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub flow: FlowConfig,
    pub feature: FeatureConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model consumes visual features but no event stream was given")]
    MissingEvents,
    #[error("events span {visual} slices but audio has {audio} frames; more than one slice over")]
    LengthMismatchBeyondOneFrame { audio: usize, visual: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Rounds the stream's extent up to a whole number of feature slices.
pub fn stream_duration_ms(last_t_us: Option<u64>, slice_ms: u64) -> u64 {
    match last_t_us {
        None => 0,
        Some(t) => (t / 1000 / slice_ms + 1) * slice_ms,
    }
}

/// Plane-fit flow plus region pooling over the stream's own duration. For
/// feature extraction in isolation, where no audio defines the horizon.
pub fn event_feature_frames(
    stream: &EventStream,
    flow_cfg: &FlowConfig,
    feature_cfg: &FeatureConfig,
) -> Result<Vec<FeatureFrame>, FeatureError> {
    let flows = compute_stream_flow(stream, flow_cfg);
    let duration_ms = stream_duration_ms(stream.last_t_us(), feature_cfg.slice_ms);
    extract_feature_frames(stream, &flows, feature_cfg, duration_ms)
}

/// Unnormalized visual features aligned to an audio clip of `t_frames`
/// frames, one frame per slice.
///
/// A stream that ends early — a still scene emits nothing — pads with empty
/// slices, which pool to zero features. A stream running at most one slice
/// past the audio is truncated; beyond that the recordings are considered
/// misaligned.
pub fn visual_matrix_spanning(
    stream: &EventStream,
    flow_cfg: &FlowConfig,
    feature_cfg: &FeatureConfig,
    t_frames: usize,
) -> Result<Array2<f64>, PipelineError> {
    let slice_ms = feature_cfg.slice_ms;
    let extent = (stream_duration_ms(stream.last_t_us(), slice_ms) / slice_ms) as usize;
    if extent > t_frames + 1 {
        return Err(PipelineError::LengthMismatchBeyondOneFrame {
            audio: t_frames,
            visual: extent,
        });
    }
    let flows = compute_stream_flow(stream, flow_cfg);
    let frames =
        extract_feature_frames(stream, &flows, feature_cfg, t_frames as u64 * slice_ms)?;
    let mut out = Array2::zeros((t_frames, feature_cfg.dim()));
    for (i, f) in frames.iter().enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&f.values[..]));
    }
    Ok(out)
}

/// In-place per-column z-scoring with fitted statistics.
pub(crate) fn apply_feature_norm(m: &mut Array2<f64>, norm: &FeatureNorm) {
    for mut row in m.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - norm.mean[j]) / norm.std[j];
        }
    }
}

/// Separates the target speaker from `mix` using a trained model.
///
/// The mixture is normalized with its own per-utterance statistics, visual
/// features with the training statistics stored in the model. A model whose
/// input width equals the spectrum alone runs audio-only and ignores
/// `events`. The output always spans the full input length.
pub fn separate(
    model: &SavedModel,
    mix: &Waveform,
    events: Option<&EventStream>,
) -> Result<Waveform, PipelineError> {
    let spec = stft(mix, &model.stft)?;
    let noisy_cmag = compress(&spec, &model.stft);
    let t_audio = noisy_cmag.nrows();
    let bins = noisy_cmag.ncols();
    let audio = SpecNorm::fit(&[&noisy_cmag], "utterance")?.apply(&noisy_cmag);

    let inputs = if model.params.cfg.input_dim == bins {
        audio
    } else {
        let stream = events.ok_or(PipelineError::MissingEvents)?;
        let mut visual = visual_matrix_spanning(stream, &model.flow, &model.feature, t_audio)?;
        apply_feature_norm(&mut visual, &model.feature_norm);
        concatenate(Axis(1), &[audio.view(), visual.view()])
            .expect("audio and visual share the frame axis")
    };

    let (mask, _) = forward(&model.params, &inputs, ForwardMode::Eval)?;
    Ok(apply_mask_and_reconstruct(&mask, &spec, &model.stft, mix.samples.len())?)
}
