//! Minimal define-by-run autodiff engine and the U-Net denoiser built on it.

mod adam;
mod checkpoint;
mod denoiser;
mod graph;
mod scalar;
mod tensor;

pub use adam::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointFile, CHECKPOINT_MAGIC};
pub use denoiser::{
    build_denoiser, denoise_forward, init_denoiser, is_fusion_param, loss_and_grads, timestep_encoding, DenoiserConfig, DenoiserParams,
    TrainBatch,
};
pub use graph::{Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

