//! A small deterministic CNN stack: tensors, layers, SGD training, gradient
//! checking and `KCNN` weight files.

pub mod arch;
mod gradcheck;
mod io;
mod layers;
mod model;
mod real;
mod tensor;
mod train;

pub use gradcheck::{every_kind_model, grad_check, relative_error, GradCheckReport, KindReport, FD_STEP};
pub use io::{decode_weights, encode_weights, load_weights, save_weights};
pub(crate) use io::Reader;
pub use layers::{
    conv2d, dense, global_avg_pool, maxpool2d, relu, softmax, softmax_cross_entropy, LayerConfig,
};
pub use model::{gaussian_std, uniform_bound, Gradients, InitMode, LayerParams, Model};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{argmax, evaluate, fit, train_step, Evaluation, LabeledSet, RunRecord, Sgd, TrainConfig};
