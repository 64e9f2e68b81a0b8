//! Deterministic two-character interaction data.
//!
//! A leader walks a smooth planar curve, swings its arms and periodically
//! reaches toward its partner. The follower is the leader's mirror image
//! across a plane in front of the leader, delayed by a few frames, with the
//! reaching wrist pulled onto the leader's wrist.

mod dataset;
mod generator;

pub use dataset::{make_dataset, window_starts, windows_of_pair, Dataset, Window};
pub use generator::{
    generate_pair, SynthConfig, EPISODE_PERIOD, EPISODE_RAMP, FACING_DISTANCE, WRIST_CONTACT_OFFSET,
};
