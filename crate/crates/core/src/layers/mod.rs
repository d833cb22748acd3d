//! Trainable building blocks: parameter storage and recurrent layers.

mod lstm;
mod params;

pub use lstm::{bilstm_layer, BiLstm, LstmCell, RecurrentState, FORGET_BIAS_INIT};
pub use params::{xavier_uniform, BoundParams, ParamId, ParamStore};
