//! Compressed-magnitude domain: power-law compression, per-speaker
//! normalization, the amplitude mask, and masked reconstruction.

use ndarray::Array2;
use num_complex::Complex64;

use super::{
    istft, AudioError, ComplexSpectrogram, CompressedMag, Mask, StftConfig, Waveform, MASK_CLIP,
};

pub fn compress(spec: &ComplexSpectrogram, cfg: &StftConfig) -> CompressedMag {
    spec.mapv(|c| c.norm().powf(cfg.compress_exp))
}

pub fn uncompress_mag(cm: &CompressedMag, cfg: &StftConfig) -> Array2<f64> {
    cm.mapv(|m| m.powf(1.0 / cfg.compress_exp))
}

/// Per-frequency-bin mean/std of compressed magnitudes, fitted over all
/// frames of a speaker's utterances. std is floored at 1e-8 so apply/invert
/// stay exact inverses.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpecNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub speaker_id: String,
}

impl SpecNorm {
    /// Two-pass population statistics over every frame of `mags`.
    pub fn fit(mags: &[&CompressedMag], speaker_id: &str) -> Result<Self, AudioError> {
        let frames: usize = mags.iter().map(|m| m.nrows()).sum();
        if frames < 2 {
            return Err(AudioError::EmptyInput { got: frames });
        }
        let bins = mags[0].ncols();
        for m in mags {
            if m.ncols() != bins {
                return Err(AudioError::ShapeMismatch {
                    left: (mags[0].nrows(), bins),
                    right: (m.nrows(), m.ncols()),
                });
            }
        }
        let mut mean = vec![0.0; bins];
        for m in mags {
            for row in m.rows() {
                for (b, &v) in row.iter().enumerate() {
                    mean[b] += v;
                }
            }
        }
        for v in &mut mean {
            *v /= frames as f64;
        }
        let mut var = vec![0.0; bins];
        for m in mags {
            for row in m.rows() {
                for (b, &v) in row.iter().enumerate() {
                    var[b] += (v - mean[b]) * (v - mean[b]);
                }
            }
        }
        let std = var
            .iter()
            .map(|&v| (v / frames as f64).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std, speaker_id: speaker_id.to_string() })
    }

    pub fn apply(&self, cm: &CompressedMag) -> Array2<f64> {
        let mut out = cm.clone();
        for mut row in out.rows_mut() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[b]) / self.std[b];
            }
        }
        out
    }

    pub fn invert(&self, normalized: &Array2<f64>) -> CompressedMag {
        let mut out = normalized.clone();
        for mut row in out.rows_mut() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[b] + self.mean[b];
            }
        }
        out
    }
}

/// IAM target: clean / max(noisy, 1e-8), clipped to [0, 10], both sides in
/// the compressed domain.
pub fn compute_iam(clean: &CompressedMag, noisy: &CompressedMag) -> Result<Mask, AudioError> {
    if clean.dim() != noisy.dim() {
        return Err(AudioError::ShapeMismatch { left: clean.dim(), right: noisy.dim() });
    }
    let mut mask = clean.clone();
    for (m, &n) in mask.iter_mut().zip(noisy.iter()) {
        *m = (*m / n.max(1e-8)).clamp(0.0, MASK_CLIP);
    }
    Ok(mask)
}

/// Masks the compressed noisy magnitude, expands back to linear, reattaches
/// the noisy phase, and inverts.
pub fn apply_mask_and_reconstruct(
    mask: &Mask,
    noisy_spec: &ComplexSpectrogram,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Waveform, AudioError> {
    if mask.dim() != noisy_spec.dim() {
        return Err(AudioError::ShapeMismatch { left: mask.dim(), right: noisy_spec.dim() });
    }
    let mut est = noisy_spec.clone();
    for (e, &m) in est.iter_mut().zip(mask.iter()) {
        let mag = e.norm();
        let phase = if mag > 0.0 { *e / mag } else { Complex64::new(1.0, 0.0) };
        let est_mag = (m * mag.powf(cfg.compress_exp)).powf(1.0 / cfg.compress_exp);
        *e = phase * est_mag;
    }
    Ok(istft(&est, cfg, out_len))
}
