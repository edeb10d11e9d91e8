//! Small text-conditioned diffusion model on pixel latents.

pub mod checkpoint;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod text;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{Model, ModelConfig};
pub use sampler::{cfg_combine, ddim_sample, SamplerConfig};
pub use schedule::{build_schedule, q_sample, NoiseSchedule};
pub use text::{Overrides, TokenTable, NULL_TOKEN};
pub use train::{train_base, BaseTrainConfig, LogRecord, LogSink};
