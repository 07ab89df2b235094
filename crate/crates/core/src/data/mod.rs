//! Dataset ingestion, supervision splitting, and the synthetic cross-view
//! generator.

mod image_buf;
mod load;
mod split;
mod synth;

pub use image_buf::{load_image, save_png, Image};
pub use load::{load_dataset, DataError, ImageInstance, LoadReport, LocationRecord};
pub use split::{
    read_split_manifest, split_supervision, write_split_manifest, SealedLabels, SplitManifest,
    SupervisionSplit, UnpairedImage, UnpairedPool,
};
pub use synth::{synth_generate, SyntheticSpec};
