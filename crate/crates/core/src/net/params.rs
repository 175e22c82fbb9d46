//! Parameter containers, initialization, and canonical flat iteration.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetConfig;

/// One direction of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DirParams {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// [forward] or [forward, backward].
    pub dirs: Vec<DirParams>,
}

/// All learnable tensors. The same structure doubles as gradient and Adam
/// moment storage — shapes always mirror the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTensors {
    pub layers: Vec<LayerParams>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: NetConfig,
    pub tensors: NetTensors,
}

impl NetTensors {
    pub fn zeros(cfg: &NetConfig) -> Self {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let in_dim = cfg.layer_input_dim(l);
                LayerParams {
                    dirs: (0..cfg.num_directions())
                        .map(|_| DirParams {
                            w_ih: Array2::zeros((4 * cfg.hidden, in_dim)),
                            w_hh: Array2::zeros((4 * cfg.hidden, cfg.hidden)),
                            bias: Array1::zeros(4 * cfg.hidden),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            layers,
            w_out: Array2::zeros((cfg.output_dim, cfg.layer_output_dim())),
            b_out: Array1::zeros(cfg.output_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.flat_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Canonical tensor order as contiguous slices.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for d in &layer.dirs {
                out.push(d.w_ih.as_slice().expect("standard layout"));
                out.push(d.w_hh.as_slice().expect("standard layout"));
                out.push(d.bias.as_slice().expect("standard layout"));
            }
        }
        out.push(self.w_out.as_slice().expect("standard layout"));
        out.push(self.b_out.as_slice().expect("standard layout"));
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for d in &mut layer.dirs {
                out.push(d.w_ih.as_slice_mut().expect("standard layout"));
                out.push(d.w_hh.as_slice_mut().expect("standard layout"));
                out.push(d.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.w_out.as_slice_mut().expect("standard layout"));
        out.push(self.b_out.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Names and shapes in the same order as `flat()`; shared by the file format.
pub(super) fn tensor_manifest(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let dir_name = |d: usize| if d == 0 { "fwd" } else { "bwd" };
    for l in 0..cfg.num_layers {
        let in_dim = cfg.layer_input_dim(l);
        for d in 0..cfg.num_directions() {
            let stem = format!("layer{l}.{}", dir_name(d));
            out.push((format!("{stem}.w_ih"), vec![4 * cfg.hidden, in_dim]));
            out.push((format!("{stem}.w_hh"), vec![4 * cfg.hidden, cfg.hidden]));
            out.push((format!("{stem}.bias"), vec![4 * cfg.hidden]));
        }
    }
    out.push(("out.w".into(), vec![cfg.output_dim, cfg.layer_output_dim()]));
    out.push(("out.b".into(), vec![cfg.output_dim]));
    out
}

/// Weights ~ U(-k, k) with k = 1/sqrt(hidden); forget bias 1, other biases
/// 0. Fully determined by `cfg.seed`.
pub fn init_params(cfg: &NetConfig) -> ModelParams {
    cfg.validate().expect("valid net config");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = 1.0 / (cfg.hidden as f64).sqrt();
    let mut draw = |shape: (usize, usize)| {
        Array2::from_shape_fn(shape, |_| rng.random_range(-k..k))
    };

    let h = cfg.hidden;
    let layers = (0..cfg.num_layers)
        .map(|l| {
            let in_dim = cfg.layer_input_dim(l);
            LayerParams {
                dirs: (0..cfg.num_directions())
                    .map(|_| {
                        let w_ih = draw((4 * h, in_dim));
                        let w_hh = draw((4 * h, h));
                        let mut bias = Array1::zeros(4 * h);
                        bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
                        DirParams { w_ih, w_hh, bias }
                    })
                    .collect(),
            }
        })
        .collect();
    let w_out = draw((cfg.output_dim, cfg.layer_output_dim()));
    let tensors = NetTensors { layers, w_out, b_out: Array1::zeros(cfg.output_dim) };
    ModelParams { cfg: *cfg, tensors }
}
