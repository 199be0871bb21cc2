//! Decentralized flocking controllers learned by imitating a centralized
//! expert.
//!
//! The crate simulates teams of point-mass agents that communicate over a
//! proximity graph, implements delay-aware graph-convolutional and graph-
//! recurrent controllers with exact hand-written gradients, trains them
//! against optimal expert trajectories, and evaluates them in closed loop,
//! including zero-shot transfer to larger teams.

pub mod controllers;
pub mod error;
pub mod experiments;
pub mod flocking;
pub mod graph;
pub mod mat;
pub mod rng;
pub mod training;

mod chart;

pub use chart::render_line_chart;
pub use error::{Error, Result};
pub use mat::Mat;

/// Width of the local feature vector each agent observes.
pub const FEATURE_DIM: usize = 6;

/// Width of the action each agent takes (planar acceleration).
pub const ACTION_DIM: usize = 2;
