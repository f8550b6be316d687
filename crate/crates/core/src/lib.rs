pub mod comm;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod radar_dsp;
pub mod radar_synth;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod tracker;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete scalar instantiations. Training and inference run in `f32`;
/// gradient checks and oracle comparisons use `f64`.
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type TxIdModel32 = models::TxIdModel<f32>;
pub type TxIdModel64 = models::TxIdModel<f64>;
pub type E2eModel32 = models::E2eModel<f32>;
pub type E2eModel64 = models::E2eModel<f64>;
