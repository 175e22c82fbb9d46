//! Event-camera simulation over simple parametric scenes.
//!
//! Per-pixel contrast-crossing model: the scene is rendered as log intensity
//! at `render_rate`, each pixel keeps a reference level, and every crossing
//! of reference ± C emits one event with its timestamp linearly interpolated
//! between render steps. The reference advances by exactly C per event, so
//! between steps a pixel's reference always sits within C of its last
//! rendered level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audio::envelope_at;
use crate::event::{Event, EventStream, Polarity};

/// Half-width of the elliptical ring profile, as a fraction of the radius.
const RING_W: f64 = 0.25;

/// What moves in the frame.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenePattern {
    /// Elliptical ring whose vertical aperture tracks the audio envelope,
    /// like a mouth opening and closing. Horizontal radius is fixed.
    EllipseMouth {
        cx: f64,
        cy: f64,
        rx: f64,
        /// Aperture at envelope 0.
        base_ry: f64,
        /// Extra aperture at envelope 1.
        gain_ry: f64,
        /// Peak log-intensity of the ring.
        amplitude: f64,
    },
    /// Vertical bright bar translating horizontally at constant speed,
    /// wrapping around the frame edges.
    TranslatingBar {
        velocity_px_s: f64,
        /// Half-width of the raised-cosine column profile, px.
        half_width: f64,
        amplitude: f64,
    },
}

impl ScenePattern {
    /// Mouth centered in the default 100x50 frame.
    pub fn default_mouth() -> Self {
        ScenePattern::EllipseMouth {
            cx: 50.0,
            cy: 25.0,
            rx: 18.0,
            base_ry: 4.0,
            gain_ry: 10.0,
            amplitude: 0.8,
        }
    }

    pub fn default_bar(velocity_px_s: f64) -> Self {
        ScenePattern::TranslatingBar { velocity_px_s, half_width: 4.0, amplitude: 0.8 }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    pub pattern: ScenePattern,
    /// Contrast threshold C, log-intensity units. Must be positive.
    pub contrast_threshold: f64,
    /// Scene render rate in Hz. Should comfortably exceed the fastest
    /// per-pixel intensity swing so no crossing spans multiple thresholds
    /// within one step.
    pub render_rate: f64,
    /// When nonzero, each event timestamp gets uniform jitter in
    /// [0, jitter) microseconds before the final sort. Off by default.
    pub timestamp_jitter_us: u64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 100,
            height: 50,
            pattern: ScenePattern::default_mouth(),
            contrast_threshold: 0.2,
            render_rate: 1000.0,
            timestamp_jitter_us: 0,
            seed: 0,
        }
    }
}

/// Trapezoid bump: full brightness on a wide plateau, linear skirts to zero
/// at |v| = 1. The plateau keeps most active pixels sweeping the entire
/// amplitude, so event counts scale like amplitude / threshold instead of
/// being dominated by grazing pixels.
const SKIRT: f64 = 0.35;

fn bump(v: f64) -> f64 {
    ((1.0 - v.abs()) / SKIRT).clamp(0.0, 1.0)
}

/// Wraps d into [-period/2, period/2).
fn wrap_centered(d: f64, period: f64) -> f64 {
    let r = d.rem_euclid(period);
    if r >= period / 2.0 { r - period } else { r }
}

fn log_intensity(pattern: &ScenePattern, width: f64, x: f64, y: f64, env: f64, t: f64) -> f64 {
    match *pattern {
        ScenePattern::EllipseMouth { cx, cy, rx, base_ry, gain_ry, amplitude } => {
            let ry = base_ry + gain_ry * env;
            let dx = (x - cx) / rx;
            let dy = (y - cy) / ry;
            let u = (dx * dx + dy * dy).sqrt();
            amplitude * bump((u - 1.0) / RING_W)
        }
        ScenePattern::TranslatingBar { velocity_px_s, half_width, amplitude } => {
            let x0 = (width / 2.0 + velocity_px_s * t).rem_euclid(width);
            amplitude * bump(wrap_centered(x - x0, width) / half_width)
        }
    }
}

/// Pixels the pattern can ever touch, as an inclusive (x0, x1, y0, y1) box.
fn active_box(cfg: &SceneConfig) -> (usize, usize, usize, usize) {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    match cfg.pattern {
        ScenePattern::EllipseMouth { cx, cy, rx, base_ry, gain_ry, .. } => {
            let ry_max = base_ry + gain_ry.max(0.0);
            let span_x = rx * (1.0 + RING_W) + 1.0;
            let span_y = ry_max * (1.0 + RING_W) + 1.0;
            let x0 = (cx - span_x).floor().max(0.0) as usize;
            let x1 = ((cx + span_x).ceil() as usize).min(w - 1);
            let y0 = (cy - span_y).floor().max(0.0) as usize;
            let y1 = ((cy + span_y).ceil() as usize).min(h - 1);
            (x0, x1, y0, y1)
        }
        // The bar wraps, so every column is eventually active.
        ScenePattern::TranslatingBar { .. } => (0, w - 1, 0, h - 1),
    }
}

/// Emits every threshold crossing between a pixel's previous and new level.
#[allow(clippy::too_many_arguments)]
fn drain_crossings(
    ref_l: &mut f64,
    l_prev: f64,
    l_new: f64,
    t_prev_us: f64,
    t_next_us: f64,
    c: f64,
    x: u16,
    y: u16,
    out: &mut Vec<Event>,
) {
    let dl = l_new - l_prev;
    loop {
        let polarity = if l_new - *ref_l >= c {
            *ref_l += c;
            Polarity::Pos
        } else if l_new - *ref_l <= -c {
            *ref_l -= c;
            Polarity::Neg
        } else {
            break;
        };
        let theta = if dl.abs() > 0.0 { ((*ref_l - l_prev) / dl).clamp(0.0, 1.0) } else { 1.0 };
        let t_us = (t_prev_us + theta * (t_next_us - t_prev_us)).round().max(0.0) as u64;
        out.push(Event { t_us, x, y, polarity });
    }
}

/// Simulates the event stream for `duration_s` seconds of the scene, with
/// the mouth aperture driven by `envelope` (1 kHz samples).
///
/// Timestamps are strictly inside [0, duration) and the stream is sorted by
/// (t_us, y, x). No events are emitted at the initial render step: each
/// pixel's reference starts at its first rendered level.
pub fn simulate_events(cfg: &SceneConfig, envelope: &[f64], duration_s: f64) -> EventStream {
    assert!(cfg.contrast_threshold > 0.0, "contrast threshold must be positive");
    assert!(cfg.render_rate > 0.0 && duration_s > 0.0);
    let n_ms = (duration_s * 1000.0).round() as usize;
    assert_eq!(envelope.len(), n_ms, "envelope must cover the full duration at 1 kHz");

    let (w, width_f) = (cfg.width as usize, cfg.width as f64);
    let (x0, x1, y0, y1) = active_box(cfg);
    let c = cfg.contrast_threshold;
    let duration_us = duration_s * 1e6;
    let n_steps = (duration_s * cfg.render_rate).round() as usize;

    let mut prev_l = vec![0.0f64; w * (cfg.height as usize)];
    let mut ref_l = vec![0.0f64; w * (cfg.height as usize)];
    let mut events = Vec::new();

    for k in 0..=n_steps {
        let t = k as f64 / cfg.render_rate;
        let t_us = (t * 1e6).min(duration_us - 1.0);
        let t_prev_us = ((k as f64 - 1.0) / cfg.render_rate * 1e6).max(0.0);
        let env = envelope_at(envelope, t);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let l = log_intensity(&cfg.pattern, width_f, x as f64, y as f64, env, t);
                let idx = y * w + x;
                if k == 0 {
                    prev_l[idx] = l;
                    ref_l[idx] = l;
                    continue;
                }
                drain_crossings(
                    &mut ref_l[idx],
                    prev_l[idx],
                    l,
                    t_prev_us,
                    t_us,
                    c,
                    x as u16,
                    y as u16,
                    &mut events,
                );
                prev_l[idx] = l;
            }
        }
    }

    if cfg.timestamp_jitter_us > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let limit = duration_us as u64 - 1;
        for e in &mut events {
            e.t_us = (e.t_us + rng.random_range(0..cfg.timestamp_jitter_us)).min(limit);
        }
    }
    events.sort_by_key(|e| (e.t_us, e.y, e.x));
    EventStream::new(cfg.width, cfg.height, events)
        .expect("simulated events are in bounds and sorted")
}
