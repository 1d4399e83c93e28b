//! Frame-based scheduling for a single-cell mobile-edge-computing system with
//! random device arrivals.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] : parameters, state types, per-frame physics, stage costs and
//!   the state transition.
//! * [`stochastic`] : seeded, stream-separated generators for arrivals and
//!   Rayleigh fading.
//! * [`markov`] : the discounted Markov reward chain that governs the
//!   steady period of the baseline policy, and its derivative in the
//!   receive-power level.
//! * [`valuefn`] : the closed-form value of the baseline policy for any
//!   compact state.
//! * [`policies`] : baseline, all-local, all-edge and the one-step improved
//!   scheduler.
//! * [`learning`] : online estimation of the arrival statistics and SGD on
//!   the receive-power level.
//! * [`sim`] : the frame-loop engine, trajectories and aggregate metrics.

pub mod error;
pub mod learning;
pub mod markov;
pub mod model;
pub mod policies;
pub mod sim;
pub mod stochastic;
pub mod valuefn;

pub use error::{Error, Result};
