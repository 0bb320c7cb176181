//! Desk-scale diffusion testbed: noise schedule, a small conditional
//! denoiser with cross-attention, DDIM sampling and inversion, and the
//! editing loop that injects dilutional noise.

pub mod checkpoint;
pub mod ddim;
pub mod edit;
pub mod experiments;
pub mod model;
pub mod scene;
pub mod schedule;
pub mod train;

pub use ddim::{ddim_invert, ddim_sample, EpsPredictor};
pub use edit::{collect_attention, edit_video, EditOutcome};
pub use model::{ModelConfig, ToyDenoiser};
pub use scene::{gen_dataset, SceneSpec, ToyPrompt};
pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use train::{train, TrainConfig, TrainReport};
