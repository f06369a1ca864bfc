//! Range-image LiDAR semantic segmentation.
//!
//! Point clouds are spherically projected into 5-channel range images
//! (x, y, z, range, remission), segmented by a compact residual encoder with
//! a parameter-free bilinear decoder, and the pixel predictions are carried
//! back to points, optionally cleaned by a range-gated KNN vote.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod projection;

pub use error::{Error, Result};
