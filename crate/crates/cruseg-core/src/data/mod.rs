//! Dataset plumbing: image IO, ROI extraction and resizing, flip
//! augmentation, manifest-driven ingestion, and the synthetic corpus
//! generator.

mod augment;
mod image;
mod manifest;
mod pgm;
mod rawf32;
mod resize;
mod sample;
mod synth;

pub use augment::{augment, flip_image, flip_mask};
pub use image::GrayImage;
pub use manifest::{
    load_manifest, materialize, write_manifest, DatasetManifest, ManifestRecord,
    MaterializedDataset, MANIFEST_HEADER,
};
pub use pgm::{read_mask_pgm, read_pgm, write_mask_pgm, write_pgm};
pub use rawf32::{read_raw, write_raw};
pub use resize::{bicubic_resize, extract_and_resize};
pub use sample::{AugmentationTag, BBox, RoiSample, Split};
pub use synth::{synth_generate, SynthConfig};
