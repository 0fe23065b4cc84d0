//! The event classifiers: presets, training, evaluation and persistence.

mod config;
mod eval;
mod gradcheck;
mod model;
mod model_io;
mod train;

pub use config::{
    format_chain, infer_shapes, preset_config, shape_chain, Dims, LayerSpec, NetworkConfig, Preset,
    NUM_CLASSES,
};
pub use eval::{evaluate, evaluate_with, EvalReport};
pub use gradcheck::{
    gradient_check, gradient_check_with, relative_error, GradCheckReport, WorstParam,
};
pub use model::{argmax_class, Gradients, Network, Trace};
pub use model_io::{load_model, read_model, save_model, write_model, CNNM_MAGIC, CNNM_VERSION};
pub use train::{train, train_until, train_with, EpochLog, SgdParams, TrainingLog, GRADIENT_CHUNK};
