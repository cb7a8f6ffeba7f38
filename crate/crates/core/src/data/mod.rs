//! Images, masks, dataset splits and preprocessing.

mod dataset;
mod image;
pub mod io;
mod resize;
mod volume;

pub use dataset::{
    load_dataset, write_dataset, CohortImage, DatasetLayout, DatasetSplit, LabeledPair, Manifest,
    ManifestEntry,
};
pub use image::{BinaryMask, Image};
pub(crate) use image::Fnv;
pub use io::GrayConversion;
pub use resize::{resize_bilinear, resize_nearest, resize_pair, CANVAS};
pub use volume::{slice_volume, Volume, MIN_SLICE_FOREGROUND};
