//! The CNN-LSTM tracking network: spatial encoder, temporal
//! encoder/decoder, split regression heads, losses, and checkpointing.
//! Forward and backward passes are written out by hand and verified against
//! central finite differences (see the per-layer tests and the whole-model
//! check in `tests/`).

pub mod checkpoint;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod params;
pub mod pose_lstm;
pub mod scalar;

pub use loss::{LossBreakdown, LossMode};
pub use model::{output_to_pose, sequence_slices, ModelConfig, TrackerModel, TrainStep};
pub use params::ParamSet;
pub use pose_lstm::{PoseLstm, PoseLstmConfig};
pub use scalar::Real;
