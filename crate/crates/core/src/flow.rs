//! Per-event optical flow by local plane fitting on the time surface.
//!
//! The time surface holds, per pixel, the timestamp of the most recent event.
//! Around each new event a plane `t = a*x + b*y + c` is least-squares fitted
//! to the recent neighborhood timestamps; the spatial gradient `(a, b)` of
//! that plane encodes the local motion, and the event's velocity is the
//! inverse gradient `(a, b) / (a^2 + b^2)` in pixels per second.

use crate::event::{Event, EventStream};

/// Parameters of the local plane fit. The defaults are tuned for slow
/// motion on a 100x50 crop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Neighborhood half-width; the fit uses the (2N+1)^2 window.
    pub neighborhood_radius: u16,
    /// Only pixels whose last event is at most this old (relative to the
    /// current event) participate in the fit.
    pub time_window_us: u64,
    /// Points with a residual above this are dropped between refits.
    pub residual_threshold_us: f64,
    /// Maximum number of drop-and-refit rounds.
    pub max_refit_iters: u32,
    /// A fit with fewer surviving points than this is invalid.
    pub min_points: usize,
    /// Valid speed range in px/s; fits outside it yield an invalid flow.
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            neighborhood_radius: 3,
            time_window_us: 30_000,
            residual_threshold_us: 1_000.0,
            max_refit_iters: 3,
            min_points: 5,
            v_min: 1.0,
            v_max: 10_000.0,
        }
    }
}

/// Per-pixel map of the most recent event timestamp.
#[derive(Debug, Clone)]
pub struct TimeSurface {
    width: u16,
    height: u16,
    last_t_us: Vec<Option<u64>>,
}

impl TimeSurface {
    pub fn new(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            last_t_us: vec![None; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    /// Timestamp of the last event at `(x, y)`, if that pixel ever fired.
    pub fn last_t_us(&self, x: u16, y: u16) -> Option<u64> {
        debug_assert!(x < self.width && y < self.height);
        self.last_t_us[y as usize * self.width as usize + x as usize]
    }

    /// Records `e` as the most recent event at its pixel.
    ///
    /// Events must be applied in stream order; the surface never forgets a
    /// newer timestamp.
    pub fn update(&mut self, e: &Event) {
        let idx = e.y as usize * self.width as usize + e.x as usize;
        self.last_t_us[idx] = Some(e.t_us);
    }
}

/// Result of a local plane fit, gradients in seconds per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    /// dt/dx in s/px.
    pub a: f64,
    /// dt/dy in s/px.
    pub b: f64,
    /// Plane offset at (x, y) = (0, 0), in seconds.
    pub c: f64,
    /// Surviving points after outlier rejection.
    pub inliers: usize,
    /// Root-mean-square residual of the surviving points, in seconds.
    pub rms_residual: f64,
}

/// Per-event velocity estimate in pixels per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVector {
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl FlowVector {
    pub fn invalid() -> Self {
        Self { vx: 0.0, vy: 0.0, valid: false }
    }

    pub fn speed(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }
}

const US_TO_S: f64 = 1e-6;

/// Fits `t = a*x + b*y + c` to the recent neighborhood of `e`.
///
/// The surface must already contain `e`. Points further than
/// `time_window_us` in the past are excluded up front; the remaining points
/// are refitted with residual-based outlier rejection. Returns `None` when
/// fewer than `min_points` survive or the points are degenerate (for example
/// all in one pixel column).
pub fn fit_local_plane(surface: &TimeSurface, e: &Event, cfg: &FlowConfig) -> Option<PlaneFit> {
    let n = cfg.neighborhood_radius as i64;
    let t_min = e.t_us.saturating_sub(cfg.time_window_us);

    // Coordinates and times centered on the event keep the normal equations
    // well conditioned; only c depends on the frame of reference.
    let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for dy in -n..=n {
        let y = e.y as i64 + dy;
        if y < 0 || y >= surface.height() as i64 {
            continue;
        }
        for dx in -n..=n {
            let x = e.x as i64 + dx;
            if x < 0 || x >= surface.width() as i64 {
                continue;
            }
            if let Some(t) = surface.last_t_us(x as u16, y as u16) {
                if t >= t_min && t <= e.t_us {
                    let dt = t as f64 - e.t_us as f64;
                    pts.push((dx as f64, dy as f64, dt * US_TO_S));
                }
            }
        }
    }

    let threshold_s = cfg.residual_threshold_us * US_TO_S;
    let mut fit = solve_plane(&pts)?;
    for _ in 0..cfg.max_refit_iters {
        let before = pts.len();
        pts.retain(|&(x, y, t)| (t - (fit.0 * x + fit.1 * y + fit.2)).abs() <= threshold_s);
        if pts.len() == before {
            break;
        }
        if pts.len() < cfg.min_points {
            return None;
        }
        fit = solve_plane(&pts)?;
    }
    if pts.len() < cfg.min_points {
        return None;
    }

    let (a, b, c_local) = fit;
    let mut ss = 0.0;
    for &(x, y, t) in &pts {
        let r = t - (a * x + b * y + c_local);
        ss += r * r;
    }
    // Shift c back to absolute pixel coordinates and absolute time.
    let c = c_local + e.t_us as f64 * US_TO_S - a * e.x as f64 - b * e.y as f64;
    Some(PlaneFit {
        a,
        b,
        c,
        inliers: pts.len(),
        rms_residual: (ss / pts.len() as f64).sqrt(),
    })
}

/// Least-squares plane through `(x, y, t)` points via the 3x3 normal
/// equations. `None` when the system is singular (collinear points).
fn solve_plane(pts: &[(f64, f64, f64)]) -> Option<(f64, f64, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let (mut sxx, mut sxy, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sxt, mut syt, mut st) = (0.0, 0.0, 0.0);
    for &(x, y, t) in pts {
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sx += x;
        sy += y;
        sxt += x * t;
        syt += y * t;
        st += t;
    }
    let m = pts.len() as f64;
    // | sxx sxy sx |   | a |   | sxt |
    // | sxy syy sy | * | b | = | syt |
    // | sx  sy  m  |   | c |   | st  |
    let det = sxx * (syy * m - sy * sy) - sxy * (sxy * m - sy * sx) + sx * (sxy * sy - syy * sx);
    // Relative singularity test against the Hadamard bound of the diagonal.
    let scale = (sxx * syy * m).max(f64::MIN_POSITIVE);
    if det.abs() <= 1e-12 * scale {
        return None;
    }
    let a = (sxt * (syy * m - sy * sy) - sxy * (syt * m - sy * st) + sx * (syt * sy - syy * st))
        / det;
    let b = (sxx * (syt * m - sy * st) - sxt * (sxy * m - sy * sx) + sx * (sxy * st - syt * sx))
        / det;
    let c = (sxx * (syy * st - syt * sy) - sxy * (sxy * st - syt * sx) + sxt * (sxy * sy - syy * sx))
        / det;
    Some((a, b, c))
}

/// Velocity whose dot product with the plane gradient is exactly 1.
///
/// Marked invalid when the gradient vanishes or the implied speed falls
/// outside `[v_min, v_max]`.
pub fn compute_event_flow(fit: &PlaneFit, cfg: &FlowConfig) -> FlowVector {
    let g2 = fit.a * fit.a + fit.b * fit.b;
    if g2 <= 0.0 || !g2.is_finite() {
        return FlowVector::invalid();
    }
    let vx = fit.a / g2;
    let vy = fit.b / g2;
    let speed = 1.0 / g2.sqrt();
    FlowVector {
        vx,
        vy,
        valid: speed >= cfg.v_min && speed <= cfg.v_max,
    }
}

/// Runs the full per-event flow over a stream, index-aligned with
/// `stream.events()`. Events whose fit fails yield an invalid flow.
pub fn compute_stream_flow(stream: &EventStream, cfg: &FlowConfig) -> Vec<FlowVector> {
    let mut surface = TimeSurface::new(stream.width(), stream.height());
    let mut flows = Vec::with_capacity(stream.len());
    for e in stream.events() {
        surface.update(e);
        let flow = match fit_local_plane(&surface, e, cfg) {
            Some(fit) => compute_event_flow(&fit, cfg),
            None => FlowVector::invalid(),
        };
        flows.push(flow);
    }
    flows
}
