//! Flow-matching objective, timestep schedules, training and sampling.

mod data;
mod flow;
mod optim;
mod sampler;
mod schedule;
mod trainer;

pub use data::{condition_latents, first_depth_frame, prepare_example, ray_features, TrainingExample};
pub use flow::{flow_match_targets, loss_overall, mse, FlowState, Losses};
pub use optim::{Adam, AdamConfig};
pub use sampler::{
    initial_noise, sample, sample_from, ConditionedModel, ConstantVelocity, SampleLatents, VelocityModel,
};
pub use schedule::{build_timestep_schedule, Stage, TimestepSchedule, LATE_END, MID_END};
pub use trainer::{
    batch_loss, begin_fusion_stage, draw_batch, evaluation_loss, log_to_csv, train_stage, BatchItem, LogRow,
    TrainConfig, TrainStage, TrainState, EVAL_TIMESTEPS, LOG_HEADER,
};
