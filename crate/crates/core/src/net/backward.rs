//! Exact reverse-mode gradients through clip, affine, dropout, and both
//! recurrence directions. Per-step work stays scalar; the big products
//! (weight gradients, input gradients) are batched over the whole sequence.

use ndarray::{s, Array2, ArrayView2};

use super::forward::{DirGates, ForwardCache};
use super::{DirParams, ModelParams, NetError, NetTensors};

/// dz rows are indexed by absolute time, like the cache.
fn backward_dir(
    p: &DirParams,
    gates: &DirGates,
    dh_up: ArrayView2<f64>,
    reverse: bool,
) -> Array2<f64> {
    let (t_len, h_dim) = dh_up.dim();
    let whh = p.w_hh.as_slice().expect("standard layout");
    let mut dz_all = Array2::zeros((t_len, 4 * h_dim));
    let mut dh_rec = vec![0.0f64; h_dim];
    let mut dc_carry = vec![0.0f64; h_dim];
    // Reverse of the processing order used in the forward pass.
    let steps: Vec<usize> = if reverse {
        (0..t_len).collect()
    } else {
        (0..t_len).rev().collect()
    };
    for &t in &steps {
        let c_prev_row = if reverse {
            if t + 1 < t_len { Some(t + 1) } else { None }
        } else {
            t.checked_sub(1)
        };
        {
            let mut dz = dz_all.row_mut(t);
            for j in 0..h_dim {
                let dh = dh_up[(t, j)] + dh_rec[j];
                let (i, f) = (gates.i[(t, j)], gates.f[(t, j)]);
                let (g, o) = (gates.g[(t, j)], gates.o[(t, j)]);
                let tc = gates.tanh_c[(t, j)];
                let dc = dh * o * (1.0 - tc * tc) + dc_carry[j];
                let c_prev = c_prev_row.map_or(0.0, |r| gates.c[(r, j)]);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h_dim + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * h_dim + j] = dc * i * (1.0 - g * g);
                dz[3 * h_dim + j] = dh * tc * o * (1.0 - o);
                dc_carry[j] = dc * f;
            }
        }
        let dz = dz_all.row(t);
        for v in &mut dh_rec {
            *v = 0.0;
        }
        for r in 0..4 * h_dim {
            let dzr = dz[r];
            if dzr != 0.0 {
                let row = &whh[r * h_dim..(r + 1) * h_dim];
                for (j, w) in row.iter().enumerate() {
                    dh_rec[j] += w * dzr;
                }
            }
        }
    }
    dz_all
}

/// h shifted so row t holds the hidden state that preceded step t in
/// processing order (zeros at the sequence start of that direction).
fn shifted_h(h: &Array2<f64>, reverse: bool) -> Array2<f64> {
    let (t_len, h_dim) = h.dim();
    let mut out = Array2::zeros((t_len, h_dim));
    if reverse {
        for t in 0..t_len.saturating_sub(1) {
            out.row_mut(t).assign(&h.row(t + 1));
        }
    } else {
        for t in 1..t_len {
            out.row_mut(t).assign(&h.row(t - 1));
        }
    }
    out
}

/// `dot` picks the output layout from its operands, so a transposed operand
/// can yield a column-major product; gradient tensors must stay
/// `as_slice`-able for the flat optimizer view.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Returns (parameter gradients, input gradients) for the forward pass that
/// produced `cache`, given dLoss/dMask.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_mask: &Array2<f64>,
) -> Result<(NetTensors, Array2<f64>), NetError> {
    let cfg = &params.cfg;
    if grad_mask.dim() != cache.pre_act.dim() {
        return Err(NetError::ShapeMismatch {
            context: format!(
                "upstream gradient {:?} vs network output {:?}",
                grad_mask.dim(),
                cache.pre_act.dim()
            ),
        });
    }

    let mut grads = NetTensors::zeros(cfg);
    // Through clip: pass inside (0, 10), zero outside.
    let mut d_pre = grad_mask.clone();
    for (d, &a) in d_pre.iter_mut().zip(cache.pre_act.iter()) {
        if a <= 0.0 || a >= 10.0 {
            *d = 0.0;
        }
    }
    grads.w_out = standard(d_pre.t().dot(&cache.final_input));
    grads.b_out = d_pre.sum_axis(ndarray::Axis(0));
    let mut d_cur = d_pre.dot(&params.tensors.w_out); // T x layer_output_dim

    for l in (0..cfg.num_layers).rev() {
        let lc = &cache.layers[l];
        let mut d_in = Array2::zeros(lc.input.dim());
        for d in 0..cfg.num_directions() {
            let p = &params.tensors.layers[l].dirs[d];
            let dh_up = d_cur.slice(s![.., d * cfg.hidden..(d + 1) * cfg.hidden]);
            let dz = backward_dir(p, &lc.dir_gates[d], dh_up, d == 1);
            let g = &mut grads.layers[l].dirs[d];
            g.w_ih = standard(dz.t().dot(&lc.input));
            g.w_hh = standard(dz.t().dot(&shifted_h(&lc.dir_h[d], d == 1)));
            g.bias = dz.sum_axis(ndarray::Axis(0));
            d_in += &dz.dot(&p.w_ih);
        }
        if let Some(m) = &lc.dropout_mask {
            d_in *= m;
        }
        d_cur = d_in;
    }
    Ok((grads, d_cur))
}
