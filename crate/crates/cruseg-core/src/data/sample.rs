use std::fmt;
use std::str::FromStr;

use crate::data::image::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "split must be train or test, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentationTag {
    None,
    HFlip,
    VFlip,
    HvFlip,
}

impl AugmentationTag {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationTag::None => "none",
            AugmentationTag::HFlip => "hflip",
            AugmentationTag::VFlip => "vflip",
            AugmentationTag::HvFlip => "hvflip",
        }
    }
}

/// Rectangular crop in source-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        BBox { x0, y0, width, height }
    }

    pub fn validate_within(&self, image_width: usize, image_height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "box {}x{} at ({},{}) has an empty side",
                self.width, self.height, self.x0, self.y0
            )));
        }
        if self.x0 + self.width > image_width || self.y0 + self.height > image_height {
            return Err(Error::invalid(format!(
                "box {}x{} at ({},{}) leaves the {image_width}x{image_height} image",
                self.width, self.height, self.x0, self.y0
            )));
        }
        Ok(())
    }
}

/// One network-ready region of interest: a normalized square intensity
/// patch with its binary mask.
#[derive(Clone, Debug)]
pub struct RoiSample {
    pub id: String,
    pub split: Split,
    pub augmentation_tag: AugmentationTag,
    pub image: GrayImage,
    /// Row-major {0,1} labels, one per image pixel.
    pub mask: Vec<u8>,
}

impl RoiSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.image.width() * self.image.height();
        if self.mask.len() != n {
            return Err(Error::invalid(format!(
                "sample {}: mask has {} entries for {} pixels",
                self.id,
                self.mask.len(),
                n
            )));
        }
        if let Some(v) = self.image.pixels().iter().find(|v| **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!(
                "sample {}: image value {v} outside [0,1]",
                self.id
            )));
        }
        if let Some(v) = self.mask.iter().find(|v| **v > 1) {
            return Err(Error::invalid(format!(
                "sample {}: mask value {v} is not binary",
                self.id
            )));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.image.width()
    }

    /// Foreground pixel fraction.
    pub fn mask_area(&self) -> f64 {
        let fg: usize = self.mask.iter().map(|&v| v as usize).sum();
        fg as f64 / self.mask.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_parses_and_rejects() {
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("validation".parse::<Split>().is_err());
    }

    #[test]
    fn bbox_bounds_are_enforced() {
        assert!(BBox::new(0, 0, 40, 40).validate_within(40, 40).is_ok());
        assert!(BBox::new(1, 0, 40, 40).validate_within(40, 40).is_err());
        assert!(BBox::new(0, 0, 0, 4).validate_within(40, 40).is_err());
    }

    #[test]
    fn sample_invariants_are_enforced() {
        let good = RoiSample {
            id: "a".into(),
            split: Split::Train,
            augmentation_tag: AugmentationTag::None,
            image: GrayImage::filled(4, 4, 0.5),
            mask: vec![0; 16],
        };
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.mask[3] = 2;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.image.pixels_mut()[0] = 1.5;
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.mask.pop();
        assert!(bad.validate().is_err());
    }
}
