//! STFT with reflective center padding and WOLA inverse.
//!
//! Frame k is centered at sample k*hop, so a 16 kHz signal whose length is a
//! multiple of the hop yields exactly one frame per 10 ms — the alignment the
//! visual slices rely on. Hann at hop 160 / window 400 is not constant
//! overlap-add, so the inverse divides by the summed squared window instead
//! of assuming COLA.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioError, ComplexSpectrogram, StftConfig, Waveform, SAMPLE_RATE};

/// Periodic Hann: w[n] = 0.5*(1 - cos(2*pi*n/len)).
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / len as f64).cos()))
        .collect()
}

/// Mirror index into [0, len) without repeating the edge sample.
fn reflect(idx: i64, len: usize) -> usize {
    let len = len as i64;
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len {
        i = period - i;
    }
    i as usize
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram, AudioError> {
    assert!(cfg.win_length <= cfg.fft_size && cfg.hop > 0);
    let len = w.samples.len();
    if len == 0 {
        return Err(AudioError::EmptyWaveform);
    }
    let pad = cfg.win_length / 2;
    let num_frames = len.div_ceil(cfg.hop);
    let window = hann_periodic(cfg.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);

    let mut spec = Array2::zeros((num_frames, cfg.num_bins()));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for k in 0..num_frames {
        let start = k as i64 * cfg.hop as i64 - pad as i64;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = if n < cfg.win_length {
                Complex64::new(w.samples[reflect(start + n as i64, len)] * window[n], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (b, &v) in buf.iter().take(cfg.num_bins()).enumerate() {
            spec[(k, b)] = v;
        }
    }
    Ok(spec)
}

/// Weighted overlap-add inverse with squared-window-sum normalization
/// (per-sample floor 1e-8). `out_len` trims back to the original length.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Waveform {
    let num_frames = spec.nrows();
    let bins = cfg.num_bins();
    assert_eq!(spec.ncols(), bins, "spectrogram bins disagree with config");
    let pad = cfg.win_length / 2;
    let window = hann_periodic(cfg.win_length);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size);

    let buf_len = if num_frames == 0 {
        0
    } else {
        (num_frames - 1) * cfg.hop + cfg.win_length
    };
    let mut acc = vec![0.0f64; buf_len];
    let mut wsum = vec![0.0f64; buf_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for k in 0..num_frames {
        for b in 0..bins {
            buf[b] = spec[(k, b)];
        }
        // Hermitian completion of the one-sided spectrum.
        for b in 1..bins - 1 {
            buf[cfg.fft_size - b] = spec[(k, b)].conj();
        }
        ifft.process(&mut buf);
        let base = k * cfg.hop;
        let scale = 1.0 / cfg.fft_size as f64;
        for n in 0..cfg.win_length {
            acc[base + n] += window[n] * buf[n].re * scale;
            wsum[base + n] += window[n] * window[n];
        }
    }

    let samples = (0..out_len)
        .map(|j| {
            let p = j + pad;
            if p < buf_len {
                acc[p] / wsum[p].max(1e-8)
            } else {
                0.0
            }
        })
        .collect();
    Waveform { samples, sample_rate: SAMPLE_RATE }
}
