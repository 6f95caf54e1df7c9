//! Multi-task test-time training with a task behavior synchronizer, at desk
//! scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`graph`]: dense arrays, static computation graphs and
//!   exact reverse-mode gradients with a finite-difference checker.
//! - [`model`]: shared encoder, task-specific projections, main decoders,
//!   latent masking and the synchronizer transformer.
//! - [`objectives`]: training and test-time losses, comparison baselines and
//!   the masked/unmasked bound checker.
//! - [`bench`]: procedural multi-task scenes with controllable domain shift.
//! - [`runner`]: source training, online adaptation and evaluation.
//! - [`sync`]: adaptation gain and task synchronization measures.
//! - [`io`]: configuration, trajectory CSV and SVG plots.
//! - [`pipeline`]: seeded run steps shared by the CLI, examples and tests.

pub mod bench;
pub mod graph;
pub mod io;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod runner;
pub mod sync;
pub mod tensor;

mod error;

pub use error::{Error, Result};
