//! stitchkit: modular actor-critic policies for planar arm tasks.
//!
//! The crate trains soft actor-critic policies whose task and robot halves
//! are separate networks joined through a fixed-width latent interface.
//! Interfaces can be aligned across independently trained policies with
//! anchor-based relative representations, which makes the halves swappable:
//! a task module trained with one robot can drive a robot module trained on
//! another task, zero-shot or after a short fine-tune. The analysis side
//! quantifies how well two interfaces agree and how much task information
//! survives into the robot module.

pub mod error;
pub mod util;

pub mod analysis;
pub mod anchors;
pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod policy;
pub mod rl;
pub mod stitch;

pub use error::{Error, Result};
