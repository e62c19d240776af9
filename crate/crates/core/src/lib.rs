//! Preference-conditioned controller for tree-structured multi-task networks.
//!
//! An N-stream anchor network supplies frozen base weights. An edge
//! hypernetwork maps a preference `(r, c)` to branching logits that select
//! one parent per node, and a weight hypernetwork maps the same preference
//! to normalization deltas that adapt the selected sub-network.

pub mod error;
pub mod metrics;
pub mod numkernel;
pub mod objectives;
pub mod benchsynth;
pub mod controller;
pub mod searchspace;
pub mod trainer;

pub use error::{Error, Result};
