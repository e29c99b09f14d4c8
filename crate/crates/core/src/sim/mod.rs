//! Kinematic simulator and episode runner.

mod episode;
mod generate;
mod world;

pub use episode::{run_episode, BacktrackEvent, EpisodeReport, Method, TrajectoryRow};
pub use generate::{
    generate_stacking_scenario, parallel_pickup, GenerateError, GeneratorSpec, BLOCK_HALF, GRASP_TOL, HOLD_TOL,
};
pub use world::{step_world, update_attachments, AppliedDisturbance, WorldState};
