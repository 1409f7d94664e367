//! Prior-fused training of the signed distance and radiance fields.

pub mod batch;
pub mod config;
pub mod loss;
pub mod trainer;

pub use batch::{build_epoch_plan, Counts, EpochPlan, TrainView, ViewPlan};
pub use config::{AblationFlags, TrainConfig};
pub use loss::{epoch_gradients, epoch_loss_value, TermValues};
pub use trainer::{choose_light_index, train, EpochLog, TrainResult, TRAIN_LOG_HEADER};
