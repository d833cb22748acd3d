pub mod alphabet;
pub mod autodiff;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use alphabet::{Alphabet, LabelSequence, BLANK};
pub use error::{CheckpointError, Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::Tensor;
