//! DDPM noise schedules, forward noising, the training loop and the
//! ancestral sampler.
//!
//! Images live in `[0, 1]`; the network sees them rescaled to `[-1, 1]` and
//! sampler outputs are mapped back and clamped once at the end.

mod sample;
mod schedule;
mod train;

pub use sample::{sample, sample_requests, sample_seed, SampleOutput, SampleRequest, SAMPLE_CHUNK};
pub use schedule::{cosine_alpha_bar, forward_noise, make_schedule, NoiseSchedule, ScheduleKind, COSINE_OFFSET, MAX_BETA};
pub use train::{
    load_model, loss_csv, model_from_checkpoint, smoothed_losses, train, LossRecord, Stage, TrainExample, TrainRunConfig, TrainState,
    TrainingSet,
};

