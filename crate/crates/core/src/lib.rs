//! Dual-modality 3D instance proposal fusion.
//!
//! A 3D pathway proposes instance masks directly on the point cloud. A 2D
//! pathway detects masks per camera frame, lifts them into the cloud with
//! depth and pose, and fuses them across frames in a memory bank.
//! [`integration`] combines both sets, merging, replacing or keeping
//! proposals depending on how they overlap.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod integration;
pub mod io;
pub mod mask;
pub mod pipeline;
pub mod projection;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
