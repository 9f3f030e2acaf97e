//! Self-supervised log-domain despeckling network.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;
pub mod unet;

pub use loss::{ft_loss, ft_loss_grad, ft_loss_report, LossReport};
pub use model::{despeckle, DenoiserModel, LogDenoiser};
pub use train::{
    change_compensated_target, train_step_a, train_step_b, train_step_c, validation_mse,
    AcquisitionStack, Supervision, TrainConfig, TrainLogRow, TrainOutcome, TrainStep,
    ValidationPair,
};
pub use unet::Architecture;
