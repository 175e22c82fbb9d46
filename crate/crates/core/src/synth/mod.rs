//! Synthetic paired data: harmonic audio mixtures whose target source is
//! amplitude-modulated by a smooth envelope, and event streams from a
//! simulated scene driven by that same envelope. Everything downstream can
//! be verified end to end without recordings or camera hardware.

mod audio;
mod dataset;
mod scene;

pub use audio::{envelope_1khz, synth_audio_pair, AudioSceneConfig, SynthAudio};
pub use dataset::{generate_dataset, generate_dataset_with, DatasetConfig};
pub use scene::{simulate_events, SceneConfig, ScenePattern};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("envelope has {got} samples, scene duration needs {want}")]
    EnvelopeLength { got: usize, want: usize },
    #[error("writing dataset")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Event(#[from] crate::event::EventError),
}
