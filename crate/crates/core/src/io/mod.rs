//! Scan and label I/O, dataset layout, augmentation and the synthetic toy set.

mod augment;
mod cloud;
mod dataset;
mod labels;
pub mod toy;

pub use augment::{augment, derive_sample_seed, AugmentationConfig, DropoutAug, JitterAug, RotationAug};
pub use cloud::{decode_scan, encode_scan, load_scan, write_scan, PointCloud, SCAN_RECORD_BYTES};
pub use dataset::{load_sample, prediction_relpath, Dataset, DatasetKind, Sample, Split, SplitSpec};
pub use labels::{
    decode_raw_labels, load_labels, read_raw_labels, write_prediction_labels, write_raw_labels, ClassConfig,
    UnknownLabelPolicy, SEMANTIC_MASK, TOY_IGNORE_ID,
};
pub use toy::{generate_scan, make_toy_dataset, ToyConfig, ToyManifest};
