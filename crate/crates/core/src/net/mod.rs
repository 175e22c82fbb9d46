//! Stacked bidirectional LSTM mask estimator with exact reverse-mode
//! gradients, written directly against ndarray — no autograd.
//!
//! Layout conventions, used everywhere including the model file:
//! - Gates pack as [input, forget, cell, output] along the 4H axis.
//! - `w_ih` is (4H x in), `w_hh` is (4H x H), bias is (4H).
//! - A bidirectional layer holds directions [forward, backward]; its output
//!   at time t is concat(h_fwd[t], h_bwd[t]).
//! - Tensor order for files and flat iteration: per layer, per direction,
//!   w_ih, w_hh, bias; then the output affine w, b.

mod adam;
mod backward;
mod file;
mod forward;
mod params;

pub use adam::{adam_step, AdamState};
pub use backward::backward;
pub use file::{load_model, load_model_from, save_model, save_model_to, SavedModel, MDL1_MAGIC};
pub use forward::{forward, ForwardCache, ForwardMode};
pub use params::{init_params, DirParams, LayerParams, ModelParams, NetTensors};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub num_layers: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub bidirectional: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            hidden: 250,
            input_dim: 257 + 150,
            output_dim: 257,
            dropout_rate: 0.2,
            bidirectional: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn num_directions(&self) -> usize {
        if self.bidirectional { 2 } else { 1 }
    }

    /// Width of a layer's output (and of later layers' inputs).
    pub fn layer_output_dim(&self) -> usize {
        self.hidden * self.num_directions()
    }

    /// Input width of layer `l`.
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 { self.input_dim } else { self.layer_output_dim() }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.num_layers == 0
            || self.hidden == 0
            || self.input_dim == 0
            || self.output_dim == 0
        {
            return Err(NetError::BadConfig { reason: "all dimensions must be >= 1".into() });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetError::BadConfig { reason: "dropout_rate must be in [0, 1)".into() });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("bad net config: {reason}")]
    BadConfig { reason: String },
    #[error("non-finite value in network input")]
    NonFiniteInput,
    #[error("input has {got} columns, net expects {want}")]
    InputDimMismatch { got: usize, want: usize },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("bad magic: expected MDL1")]
    BadMagic,
    #[error("tensor payload disagrees with header: {context}")]
    ShapeMismatchVsHeader { context: String },
    #[error("malformed model file: {reason}")]
    Malformed { reason: String },
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
