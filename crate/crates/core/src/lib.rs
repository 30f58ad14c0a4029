//! Text-motion retrieval: motions become joint-angle images, captions become
//! token sets, and the two are matched patch by token with MaxSim.
//!
//! Pipeline: [`kinematics`] turns joint positions into 29 joint-angle
//! features per frame; [`motion_image`] projects them into a 224×224 image
//! with one 16-row band per joint; [`encoders`] produce patch and token
//! embeddings; [`late_interaction`] scores them with MaxSim; [`training`]
//! fits the encoders with a symmetric contrastive loss plus masked language
//! modeling; [`index`] serves exact and compressed search and evaluation;
//! [`interaction_map`] explains a match as a joint × time grid.

pub mod encoders;
pub mod error;
pub mod fsutil;
pub mod index;
pub mod interaction_map;
pub mod kinematics;
pub mod late_interaction;
pub mod motion_image;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
