//! Forward pass. The input-to-hidden transform for a whole sequence is one
//! matrix product; only the hidden-to-hidden part runs step by step.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, DirParams, ModelParams, NetError};
use crate::util::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    Eval,
    /// Training-mode forward: dropout is active and the cache is recorded.
    /// `dropout_step` indexes the optimizer step so masks are reproducible.
    Train { dropout_step: u64 },
}

/// Per-direction activations, rows indexed by absolute time.
#[derive(Debug, Clone)]
pub(super) struct DirGates {
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(super) struct LayerCache {
    /// What the layer actually consumed (after dropout).
    pub input: Array2<f64>,
    /// The inverted-dropout mask that produced `input`, if any.
    pub dropout_mask: Option<Array2<f64>>,
    pub dir_h: Vec<Array2<f64>>,
    pub dir_gates: Vec<DirGates>,
}

/// Everything backward needs; only a training-mode forward produces one.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(super) layers: Vec<LayerCache>,
    pub(super) final_input: Array2<f64>,
    pub(super) pre_act: Array2<f64>,
}

fn dropout_mask(shape: (usize, usize), rate: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate { 0.0 } else { keep_scale }
    })
}

fn run_dir(
    x: &Array2<f64>,
    p: &DirParams,
    reverse: bool,
    want_gates: bool,
) -> (Array2<f64>, Option<DirGates>) {
    let t_len = x.nrows();
    let h_dim = p.w_hh.ncols();
    let zin = x.dot(&p.w_ih.t()); // T x 4H
    let mut hs = Array2::zeros((t_len, h_dim));
    let mut gates = if want_gates {
        Some(DirGates {
            i: Array2::zeros((t_len, h_dim)),
            f: Array2::zeros((t_len, h_dim)),
            g: Array2::zeros((t_len, h_dim)),
            o: Array2::zeros((t_len, h_dim)),
            c: Array2::zeros((t_len, h_dim)),
            tanh_c: Array2::zeros((t_len, h_dim)),
        })
    } else {
        None
    };

    let bias = p.bias.as_slice().expect("standard layout");
    let whh = p.w_hh.as_slice().expect("standard layout");
    let mut h_prev = vec![0.0f64; h_dim];
    let mut c_prev = vec![0.0f64; h_dim];
    let mut z = vec![0.0f64; 4 * h_dim];
    let steps: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &steps {
        let zrow = zin.row(t);
        for (r, zv) in z.iter_mut().enumerate() {
            let row = &whh[r * h_dim..(r + 1) * h_dim];
            let rec: f64 = row.iter().zip(&h_prev).map(|(w, h)| w * h).sum();
            *zv = zrow[r] + bias[r] + rec;
        }
        for j in 0..h_dim {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[h_dim + j]);
            let gg = z[2 * h_dim + j].tanh();
            let og = sigmoid(z[3 * h_dim + j]);
            let cc = fg * c_prev[j] + ig * gg;
            let tc = cc.tanh();
            let hh = og * tc;
            hs[(t, j)] = hh;
            if let Some(gt) = gates.as_mut() {
                gt.i[(t, j)] = ig;
                gt.f[(t, j)] = fg;
                gt.g[(t, j)] = gg;
                gt.o[(t, j)] = og;
                gt.c[(t, j)] = cc;
                gt.tanh_c[(t, j)] = tc;
            }
            c_prev[j] = cc;
            h_prev[j] = hh;
        }
    }
    (hs, gates)
}

/// Runs the stack on a T x input_dim sequence. Output is the mask,
/// clamp(affine(top layer), 0, 10), shaped T x output_dim. A cache comes
/// back only in training mode.
pub fn forward(
    params: &ModelParams,
    inputs: &Array2<f64>,
    mode: ForwardMode,
) -> Result<(Array2<f64>, Option<ForwardCache>), NetError> {
    let cfg = &params.cfg;
    if inputs.ncols() != cfg.input_dim {
        return Err(NetError::InputDimMismatch { got: inputs.ncols(), want: cfg.input_dim });
    }
    if !inputs.iter().all(|v| v.is_finite()) {
        return Err(NetError::NonFiniteInput);
    }

    let want_cache = matches!(mode, ForwardMode::Train { .. });
    let t_len = inputs.nrows();
    let mut layer_in = inputs.to_owned();
    let mut layer_caches = Vec::new();
    for l in 0..cfg.num_layers {
        let mut mask = None;
        if l > 0 && cfg.dropout_rate > 0.0 {
            if let ForwardMode::Train { dropout_step } = mode {
                let seed = mix_seed(mix_seed(cfg.seed, dropout_step), l as u64);
                let m = dropout_mask(layer_in.dim(), cfg.dropout_rate, seed);
                layer_in *= &m;
                mask = Some(m);
            }
        }
        let mut dir_h = Vec::new();
        let mut dir_gates = Vec::new();
        for d in 0..cfg.num_directions() {
            let (hs, gates) =
                run_dir(&layer_in, &params.tensors.layers[l].dirs[d], d == 1, want_cache);
            dir_h.push(hs);
            if let Some(g) = gates {
                dir_gates.push(g);
            }
        }
        let mut out = Array2::zeros((t_len, cfg.layer_output_dim()));
        for (d, hs) in dir_h.iter().enumerate() {
            out.slice_mut(s![.., d * cfg.hidden..(d + 1) * cfg.hidden]).assign(hs);
        }
        if want_cache {
            layer_caches.push(LayerCache {
                input: std::mem::replace(&mut layer_in, out),
                dropout_mask: mask,
                dir_h,
                dir_gates,
            });
        } else {
            layer_in = out;
        }
    }

    let pre = layer_in.dot(&params.tensors.w_out.t()) + &params.tensors.b_out;
    let mask_out = pre.mapv(|a| a.clamp(0.0, 10.0));
    let cache = if want_cache {
        Some(ForwardCache { layers: layer_caches, final_input: layer_in, pre_act: pre })
    } else {
        None
    };
    Ok((mask_out, cache))
}
