pub mod audio;
pub mod event;
pub mod features;
pub mod flow;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod train;
mod util;

pub use audio::{ComplexSpectrogram, CompressedMag, Mask, SpecNorm, StftConfig, Waveform};
pub use event::{Event, EventSlice, EventStream, Polarity};
pub use features::{FeatureConfig, FeatureFrame, FeatureNorm};
pub use flow::{FlowConfig, FlowVector, PlaneFit, TimeSurface};
pub use metrics::EvalReport;
pub use net::{ModelParams, NetConfig, SavedModel};
pub use pipeline::PipelineConfig;
pub use synth::{AudioSceneConfig, SceneConfig};
pub use train::{SampleManifest, TrainConfig};
