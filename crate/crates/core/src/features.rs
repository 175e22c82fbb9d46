//! Region-pooled visual features: per 10 ms slice, each g x g region of the
//! sensor contributes the mean optical-flow components of its valid events
//! and optionally the raw event count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::event::{slice_events, EventError, EventStream};
use crate::flow::FlowVector;

pub const FEA1_MAGIC: &[u8; 4] = b"FEA1";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub width: u16,
    pub height: u16,
    /// Region edge in pixels; must divide both width and height.
    pub region_size: u16,
    pub include_rate: bool,
    pub slice_ms: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { width: 100, height: 50, region_size: 10, include_rate: true, slice_ms: 10 }
    }
}

impl FeatureConfig {
    pub fn regions_x(&self) -> usize {
        (self.width / self.region_size) as usize
    }

    pub fn regions_y(&self) -> usize {
        (self.height / self.region_size) as usize
    }

    pub fn values_per_region(&self) -> usize {
        if self.include_rate { 3 } else { 2 }
    }

    /// Feature dimension D.
    pub fn dim(&self) -> usize {
        self.regions_x() * self.regions_y() * self.values_per_region()
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if self.region_size == 0
            || self.width % self.region_size != 0
            || self.height % self.region_size != 0
        {
            return Err(FeatureError::InvalidRegionSize {
                region_size: self.region_size,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// One slice's pooled features, laid out row-major over regions as
/// [r0_vx, r0_vy, (r0_rate), r1_vx, ...].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub slice_index: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("stream has {events} events but {flows} flow vectors")]
    MisalignedFlows { events: usize, flows: usize },
    #[error("region size {region_size} does not divide {width}x{height}")]
    InvalidRegionSize { region_size: u16, width: u16, height: u16 },
    #[error("stream is {got_w}x{got_h} but feature config expects {want_w}x{want_h}")]
    DimensionMismatch { got_w: u16, got_h: u16, want_w: u16, want_h: u16 },
    #[error("need at least 2 frames to fit statistics, got {got}")]
    EmptyInput { got: usize },
    #[error("bad magic: expected FEA1")]
    BadMagic,
    #[error("malformed feature file: {reason}")]
    Malformed { reason: String },
    #[error(transparent)]
    Slice(#[from] EventError),
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
}

/// Pools per-event flow into one frame per slice. `flows` must align
/// index-wise with `stream.events()`. Invalid flows still count toward the
/// event rate but not toward the velocity means; a region with no valid flow
/// contributes zero means.
pub fn extract_feature_frames(
    stream: &EventStream,
    flows: &[FlowVector],
    cfg: &FeatureConfig,
    duration_ms: u64,
) -> Result<Vec<FeatureFrame>, FeatureError> {
    cfg.validate()?;
    if stream.width() != cfg.width || stream.height() != cfg.height {
        return Err(FeatureError::DimensionMismatch {
            got_w: stream.width(),
            got_h: stream.height(),
            want_w: cfg.width,
            want_h: cfg.height,
        });
    }
    if flows.len() != stream.len() {
        return Err(FeatureError::MisalignedFlows { events: stream.len(), flows: flows.len() });
    }

    let (rx, per) = (cfg.regions_x(), cfg.values_per_region());
    let num_regions = rx * cfg.regions_y();
    let d = cfg.dim();
    let slices = slice_events(stream, cfg.slice_ms, duration_ms)?;
    let mut frames = Vec::with_capacity(slices.len());
    for slice in &slices {
        let mut sum_vx = vec![0.0f64; num_regions];
        let mut sum_vy = vec![0.0f64; num_regions];
        let mut valid = vec![0usize; num_regions];
        let mut count = vec![0usize; num_regions];
        for (e, flow) in slice
            .events
            .iter()
            .zip(&flows[slice.event_offset..slice.event_offset + slice.events.len()])
        {
            let r = (e.y / cfg.region_size) as usize * rx + (e.x / cfg.region_size) as usize;
            count[r] += 1;
            if flow.valid {
                valid[r] += 1;
                sum_vx[r] += flow.vx;
                sum_vy[r] += flow.vy;
            }
        }
        let mut values = vec![0.0f64; d];
        for r in 0..num_regions {
            if valid[r] > 0 {
                values[r * per] = sum_vx[r] / valid[r] as f64;
                values[r * per + 1] = sum_vy[r] / valid[r] as f64;
            }
            if cfg.include_rate {
                values[r * per + 2] = count[r] as f64;
            }
        }
        frames.push(FeatureFrame { slice_index: slice.index, values });
    }
    Ok(frames)
}

/// Per-dimension z-score statistics (population std). Dimensions whose raw
/// std falls below 1e-8 keep std 1 so they pass through mean-shifted rather
/// than exploding.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn fit(frames: &[FeatureFrame]) -> Result<Self, FeatureError> {
        if frames.len() < 2 {
            return Err(FeatureError::EmptyInput { got: frames.len() });
        }
        let d = frames[0].values.len();
        let n = frames.len() as f64;
        let mut mean = vec![0.0; d];
        for f in frames {
            for (m, &v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for f in frames {
            for (s, (&v, &m)) in var.iter_mut().zip(f.values.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s < 1e-8 { 1.0 } else { s }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frame: &FeatureFrame) -> FeatureFrame {
        FeatureFrame {
            slice_index: frame.slice_index,
            values: frame
                .values
                .iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect(),
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Fea1Header {
    dims: [usize; 2],
    slice_ms: u64,
    g: u16,
    include_rate: bool,
    width: u16,
    height: u16,
}

pub fn write_features(
    frames: &[FeatureFrame],
    cfg: &FeatureConfig,
    path: impl AsRef<Path>,
) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_features_to(frames, cfg, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_features_to(
    frames: &[FeatureFrame],
    cfg: &FeatureConfig,
    w: &mut impl Write,
) -> Result<(), FeatureError> {
    let d = cfg.dim();
    let header = Fea1Header {
        dims: [frames.len(), d],
        slice_ms: cfg.slice_ms,
        g: cfg.region_size,
        include_rate: cfg.include_rate,
        width: cfg.width,
        height: cfg.height,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(FEA1_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for f in frames {
        assert_eq!(f.values.len(), d, "frame dimension disagrees with config");
        for &v in &f.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features(
    path: impl AsRef<Path>,
) -> Result<(Vec<FeatureFrame>, FeatureConfig), FeatureError> {
    read_features_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_features_from(
    r: &mut impl Read,
) -> Result<(Vec<FeatureFrame>, FeatureConfig), FeatureError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FeatureError::Malformed { reason: "truncated magic".into() })?;
    if &magic != FEA1_MAGIC {
        return Err(FeatureError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| FeatureError::Malformed { reason: "truncated header length".into() })?;
    let json_len = u32::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)
        .map_err(|_| FeatureError::Malformed { reason: "truncated header".into() })?;
    let header: Fea1Header = serde_json::from_slice(&json)
        .map_err(|e| FeatureError::Malformed { reason: format!("header json: {e}") })?;

    let cfg = FeatureConfig {
        width: header.width,
        height: header.height,
        region_size: header.g,
        include_rate: header.include_rate,
        slice_ms: header.slice_ms,
    };
    cfg.validate()?;
    let [t, d] = header.dims;
    if d != cfg.dim() {
        return Err(FeatureError::Malformed {
            reason: format!("header says D={d} but config implies D={}", cfg.dim()),
        });
    }
    let mut payload = vec![0u8; t * d * 4];
    r.read_exact(&mut payload).map_err(|_| FeatureError::Malformed {
        reason: format!("payload shorter than {t}x{d} floats"),
    })?;
    let frames = (0..t)
        .map(|k| FeatureFrame {
            slice_index: k,
            values: payload[k * d * 4..(k + 1) * d * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        })
        .collect();
    Ok((frames, cfg))
}
