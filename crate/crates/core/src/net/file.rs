//! "MDL1" model files: magic, u32 LE JSON header length, JSON header, then
//! every tensor as little-endian f32 in manifest order. The header carries
//! the normalization statistics and the front-end configs, so a model file
//! is sufficient on its own to run separation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::params::tensor_manifest;
use super::{DirParams, LayerParams, ModelParams, NetConfig, NetError, NetTensors};
use crate::audio::{SpecNorm, StftConfig};
use crate::features::{FeatureConfig, FeatureNorm};
use crate::flow::FlowConfig;

pub const MDL1_MAGIC: &[u8; 4] = b"MDL1";

/// A trained model plus everything needed to reproduce its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub feature_norm: FeatureNorm,
    /// Training-set statistics; separation of unseen speakers falls back to
    /// per-utterance statistics, but these document the training domain.
    pub spec_norm: SpecNorm,
    pub stft: StftConfig,
    pub flow: FlowConfig,
    pub feature: FeatureConfig,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    net: NetConfig,
    manifest: Vec<ManifestEntry>,
    feature_norm: FeatureNorm,
    spec_norm: SpecNorm,
    stft: StftConfig,
    flow: FlowConfig,
    feature: FeatureConfig,
}

pub fn save_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    save_model_to(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_model_to(model: &SavedModel, w: &mut impl Write) -> Result<(), NetError> {
    let cfg = &model.params.cfg;
    let header = Header {
        net: *cfg,
        manifest: tensor_manifest(cfg)
            .into_iter()
            .map(|(name, shape)| ManifestEntry { name, shape })
            .collect(),
        feature_norm: model.feature_norm.clone(),
        spec_norm: model.spec_norm.clone(),
        stft: model.stft,
        flow: model.flow,
        feature: model.feature,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(MDL1_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for slice in model.params.tensors.flat() {
        for &v in slice {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel, NetError> {
    load_model_from(&mut BufReader::new(File::open(path)?))
}

pub fn load_model_from(r: &mut impl Read) -> Result<SavedModel, NetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NetError::Malformed { reason: "truncated magic".into() })?;
    if &magic != MDL1_MAGIC {
        return Err(NetError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| NetError::Malformed { reason: "truncated header length".into() })?;
    let mut json = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut json)
        .map_err(|_| NetError::Malformed { reason: "truncated header".into() })?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| NetError::Malformed { reason: format!("header json: {e}") })?;

    let cfg = header.net;
    cfg.validate()?;
    let expected = tensor_manifest(&cfg);
    if header.manifest.len() != expected.len() {
        return Err(NetError::ShapeMismatchVsHeader {
            context: format!(
                "manifest lists {} tensors, config implies {}",
                header.manifest.len(),
                expected.len()
            ),
        });
    }
    for (got, (name, shape)) in header.manifest.iter().zip(&expected) {
        if &got.name != name || &got.shape != shape {
            return Err(NetError::ShapeMismatchVsHeader {
                context: format!(
                    "tensor {} has shape {:?}, config implies {} {:?}",
                    got.name, got.shape, name, shape
                ),
            });
        }
    }

    let mut read_tensor = |shape: &[usize]| -> Result<Vec<f64>, NetError> {
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes).map_err(|_| NetError::ShapeMismatchVsHeader {
            context: format!("payload ends before tensor of shape {shape:?}"),
        })?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let in_dim = cfg.layer_input_dim(l);
        let mut dirs = Vec::new();
        for _ in 0..cfg.num_directions() {
            let w_ih = Array2::from_shape_vec(
                (4 * cfg.hidden, in_dim),
                read_tensor(&[4 * cfg.hidden, in_dim])?,
            )
            .expect("shape agrees");
            let w_hh = Array2::from_shape_vec(
                (4 * cfg.hidden, cfg.hidden),
                read_tensor(&[4 * cfg.hidden, cfg.hidden])?,
            )
            .expect("shape agrees");
            let bias = Array1::from_vec(read_tensor(&[4 * cfg.hidden])?);
            dirs.push(DirParams { w_ih, w_hh, bias });
        }
        layers.push(LayerParams { dirs });
    }
    let w_out = Array2::from_shape_vec(
        (cfg.output_dim, cfg.layer_output_dim()),
        read_tensor(&[cfg.output_dim, cfg.layer_output_dim()])?,
    )
    .expect("shape agrees");
    let b_out = Array1::from_vec(read_tensor(&[cfg.output_dim])?);

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NetError::ShapeMismatchVsHeader {
            context: "payload longer than the manifest".into(),
        });
    }

    Ok(SavedModel {
        params: ModelParams { cfg, tensors: NetTensors { layers, w_out, b_out } },
        feature_norm: header.feature_norm,
        spec_norm: header.spec_norm,
        stft: header.stft,
        flow: header.flow,
        feature: header.feature,
    })
}
