//! Trainable substrate: tensors, parameter store, recurrent encoder,
//! attention decoder, optimizer and checkpoints.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod gru;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{average_checkpoints, Checkpoint, Phase};
pub use decoder::{decoder_step, Decoder, DecoderConfig, DecoderState};
pub use encoder::{encode, encode_with_trace, EncoderConfig, EncoderTrace};
pub use model::{LossOptions, ModelBundle, ModelConfig, ModelKind, Target};
pub use optim::{adam_step, clip_gradients, AdamState};
pub use params::ParamStore;
pub use tensor::{Matrix, Tensor};
