//! Harmonic source synthesis with envelope amplitude modulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::util::mix_seed;

/// Scene-level audio controls. The two fundamental ranges are disjoint by
/// default so the sources occupy separable harmonic combs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioSceneConfig {
    pub duration_s: f64,
    /// Target fundamental is drawn uniformly from this range (Hz).
    pub f0_target: (f64, f64),
    /// Interferer fundamental range (Hz). Disjoint from `f0_target`.
    pub f0_interf: (f64, f64),
    /// Number of harmonics per source; harmonic h gets amplitude 1/h.
    pub harmonics: usize,
    /// Frequency band (Hz) of the random cosines composing each envelope.
    pub envelope_band: (f64, f64),
    /// Dead-zone threshold applied to the normalized envelope. 0 keeps the
    /// full [0, 1] sweep, values near 1 silence most of the utterance.
    pub envelope_bias: f64,
    /// Target-to-interferer ratio in the mixture, dB.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for AudioSceneConfig {
    fn default() -> Self {
        Self {
            duration_s: 3.0,
            f0_target: (100.0, 150.0),
            f0_interf: (700.0, 900.0),
            harmonics: 4,
            envelope_band: (1.0, 4.0),
            envelope_bias: 0.2,
            snr_db: 0.0,
            seed: 0,
        }
    }
}

/// One synthesized scene: the scaled stems, their exact sum, and the target
/// envelope that also drives the visual simulation.
#[derive(Debug, Clone)]
pub struct SynthAudio {
    pub clean: Waveform,
    pub interferer: Waveform,
    /// Sample-exact sum of `clean` and `interferer`.
    pub mixture: Waveform,
    /// Target activity envelope at 1 kHz, values in [0, 1].
    pub envelope: Vec<f64>,
    pub f0_target: f64,
    pub f0_interf: f64,
}

/// Smooth activity envelope at 1 kHz: a sum of four random low-frequency
/// cosines, min-max normalized to [0, 1], then pushed through a dead zone so
/// the source has genuinely silent stretches. `bias >= 1` yields all zeros.
pub fn envelope_1khz(n: usize, band: (f64, f64), bias: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let f = rng.random_range(band.0..band.1);
            let a = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (f, a, phase)
        })
        .collect();
    let mut z: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * 1e-3;
            comps
                .iter()
                .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t + p).cos())
                .sum()
        })
        .collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-12);
    let denom = (1.0 - bias).max(1e-12);
    for v in &mut z {
        *v = (((*v - lo) / range) - bias).max(0.0) / denom;
    }
    z
}

/// Linear interpolation of the 1 kHz envelope at time `t` seconds.
pub(super) fn envelope_at(env: &[f64], t: f64) -> f64 {
    let pos = t * 1000.0;
    let i = pos.floor() as usize;
    if i + 1 >= env.len() {
        return *env.last().unwrap_or(&0.0);
    }
    let frac = pos - i as f64;
    env[i] * (1.0 - frac) + env[i + 1] * frac
}

fn harmonic_source(n: usize, f0: f64, phases: &[f64], env: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let carrier: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, &p)| {
                    let k = (h + 1) as f64;
                    (std::f64::consts::TAU * k * f0 * t + p).sin() / k
                })
                .sum();
            carrier * envelope_at(env, t)
        })
        .collect()
}

/// Draws fundamentals and harmonic phases from `cfg.seed`, renders both
/// stems against the given envelopes, then applies SNR and peak scaling.
/// Split out so tests can force a specific envelope shape.
fn render_pair(cfg: &AudioSceneConfig, env_target: Vec<f64>, env_interf: Vec<f64>) -> SynthAudio {
    let n = (cfg.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f0_target = rng.random_range(cfg.f0_target.0..=cfg.f0_target.1);
    let f0_interf = rng.random_range(cfg.f0_interf.0..=cfg.f0_interf.1);
    let draw_phases = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..cfg.harmonics)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect()
    };
    let phases_t = draw_phases(&mut rng);
    let phases_i = draw_phases(&mut rng);

    let clean = harmonic_source(n, f0_target, &phases_t, &env_target);
    let mut interf = harmonic_source(n, f0_interf, &phases_i, &env_interf);

    let e_clean: f64 = clean.iter().map(|s| s * s).sum();
    let e_interf: f64 = interf.iter().map(|s| s * s).sum();
    let beta = if e_clean > 0.0 && e_interf > 0.0 {
        (e_clean / (e_interf * 10f64.powf(cfg.snr_db / 10.0))).sqrt()
    } else {
        1.0
    };
    for s in &mut interf {
        *s *= beta;
    }

    let peak = clean
        .iter()
        .zip(&interf)
        .fold(0.0f64, |m, (&c, &i)| m.max(c.abs()).max(i.abs()).max((c + i).abs()));
    let gamma = if peak > 0.0 { 0.9 / peak } else { 1.0 };

    let scale = |v: &[f64]| Waveform {
        samples: v.iter().map(|s| s * gamma).collect(),
        sample_rate: SAMPLE_RATE,
    };
    let clean = scale(&clean);
    let interferer = scale(&interf);
    // Summing after the shared scaling keeps the mixture bit-exact against
    // its stems.
    let mixture = Waveform {
        samples: clean.samples.iter().zip(&interferer.samples).map(|(c, i)| c + i).collect(),
        sample_rate: SAMPLE_RATE,
    };
    SynthAudio { clean, interferer, mixture, envelope: env_target, f0_target, f0_interf }
}

/// Synthesizes one target/interferer pair and their mixture.
///
/// The interferer is scaled so the stem energies realize `snr_db` exactly
/// (when both stems are non-silent), then everything is scaled together so
/// the loudest peak across the three signals is 0.9. The mixture is the
/// exact sum of the returned stems.
pub fn synth_audio_pair(cfg: &AudioSceneConfig) -> SynthAudio {
    let n_ms = (cfg.duration_s * 1000.0).round() as usize;
    let mut env_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let env_target = envelope_1khz(n_ms, cfg.envelope_band, cfg.envelope_bias, &mut env_rng);
    let env_interf = envelope_1khz(n_ms, cfg.envelope_band, cfg.envelope_bias, &mut env_rng);
    render_pair(cfg, env_target, env_interf)
}
