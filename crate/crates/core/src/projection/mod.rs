//! Spherical projection of point clouds to range images and the way back.

mod knn;
mod spherical;

pub use knn::{knn_postprocess, KnnConfig};
pub use spherical::{
    spherical_project, unproject_labels, InputNormalization, Pixel, ProjectionConfig, RangeImage, CHANNEL_RANGE,
    CHANNEL_REMISSION, CHANNEL_X, CHANNEL_Y, CHANNEL_Z, EMPTY_PIXEL, NUM_CHANNELS,
};
