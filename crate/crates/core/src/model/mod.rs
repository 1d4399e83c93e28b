//! Domain types and deterministic per-frame physics.

mod params;
mod physics;
mod state;
mod transition;

pub use params::{log_spaced, ModelParams};
pub use physics::{
    channel_capacity, discounted_frames, local_completion_frames, local_cost, local_drain_per_frame, local_power,
    segments_per_frame,
};
pub(crate) use physics::snapped_ceil;
pub use state::{Action, CompactState, DeviceId, EdgeEntry, FullState, LocalEntry, Task};
pub use transition::{advance_state, stage_cost_full, stage_cost_reduced, StepOutcome};
