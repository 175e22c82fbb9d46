//! Audio I/O, STFT analysis/synthesis, power-law compression, per-speaker
//! normalization, amplitude masks, and masked reconstruction.

mod mask;
mod stft;
mod wav;

pub use mask::{
    apply_mask_and_reconstruct, compress, compute_iam, uncompress_mag, SpecNorm,
};
pub use stft::{istft, stft};
pub use wav::{load_wav_mono, save_wav_mono};

use ndarray::Array2;
use num_complex::Complex64;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a known sample rate, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis/synthesis parameters. Defaults: 512 FFT, 25 ms periodic Hann,
/// 10 ms hop, magnitude compression exponent 0.3.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    pub compress_exp: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 512, win_length: 400, hop: 160, compress_exp: 0.3 }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// T x bins one-sided complex spectrogram, frame k centered at sample k*hop.
pub type ComplexSpectrogram = Array2<Complex64>;

/// T x bins nonnegative |X|^p.
pub type CompressedMag = Array2<f64>;

/// T x bins multiplicative mask in [0, MASK_CLIP], compressed domain.
pub type Mask = Array2<f64>;

pub const MASK_CLIP: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unsupported wav: {reason}")]
    UnsupportedWav { reason: String },
    #[error("malformed wav: {reason}")]
    MalformedWav { reason: String },
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("need at least 2 frames to fit statistics, got {got}")]
    EmptyInput { got: usize },
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
}
