//! Batched linear contextual bandits.
//!
//! The learner commits to a small number of batches. Within each batch it
//! plays a fixed policy; between batches it refits ridge estimates, drops
//! arms that are confidently suboptimal, and learns an exploration policy
//! offline from the contexts it has seen.

pub mod agent;
pub mod concentration;
pub mod design;
pub mod environment;
pub mod error;
pub mod exploration;
pub mod harness;
pub mod matrix;
pub mod schedule;

pub use error::{Error, Result};
