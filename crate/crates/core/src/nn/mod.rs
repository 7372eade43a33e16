//! Convolutional direction-of-arrival regressor with hand-written
//! backpropagation and Adam.

mod adam;
mod checkpoint;
mod gradcheck;
mod net;
mod real;
mod spec;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{estimate_from_output, predict_doa, Checkpoint, Predictor, TrainMeta};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use net::{Network, GRAD_CHUNK};
pub use real::Real;
pub use spec::{Activation, ConvStage, NetworkSpec, ParamBlock, ParamLayout};
pub use train::{
    degrees_from_output, label_from_degrees, mirror_input, prepare_samples, rotate_phase, train, train_samples, EpochStats,
    Normalization, Preprocess, Sample, TrainConfig, TrainOutcome,
};
