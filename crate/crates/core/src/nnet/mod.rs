//! CPU neural core: tensors, layers, the capsule CNN backbone, losses, SGD,
//! finite-difference gradient checking, pretext training and downstream
//! adaptation (linear probe, fine-tune, k-NN).

pub mod adapt;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod knn;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adapt::{adapt_fine_tune, adapt_linear_probe, AdaptConfig, Task};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use data::{Augment, Dataset, Targets};
pub use gradcheck::{grad_check_layer, grad_check_network, GradCheckReport};
pub use knn::{knn_probe, KnnIndex};
pub use layers::{set_data_parallel, squash, Layer, Mode, Param};
pub use loss::{angular_error_deg, cosine_gaze_loss, cross_entropy, GazeVector};
pub use model::{build_izenet, CapsuleSpec, Gradients, IzeNetConfig, Network, Trace};
pub use optim::Sgd;
pub use tensor::Tensor;
pub use train::{train_pretext, EpochRecord, Split, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by layer {layer} ({kind})")]
    NumericFault { layer: usize, kind: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gaze vector has zero norm")]
    DegenerateGaze,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnetError>;
