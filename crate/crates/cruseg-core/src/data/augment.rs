use crate::data::image::GrayImage;
use crate::data::sample::{AugmentationTag, RoiSample, Split};
use crate::error::{Error, Result};

pub fn flip_image(src: &GrayImage, horizontal: bool, vertical: bool) -> GrayImage {
    let (w, h) = (src.width(), src.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = if vertical { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if horizontal { w - 1 - x } else { x };
            out.push(src.get(sx, sy));
        }
    }
    GrayImage::new(w, h, out).expect("flip preserves pixel count")
}

pub fn flip_mask(mask: &[u8], width: usize, height: usize, horizontal: bool, vertical: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(mask.len());
    for y in 0..height {
        let sy = if vertical { height - 1 - y } else { y };
        for x in 0..width {
            let sx = if horizontal { width - 1 - x } else { x };
            out.push(mask[sy * width + sx]);
        }
    }
    out
}

/// The four training views of one sample: identity, horizontal flip,
/// vertical flip, and both. Test samples are evaluated as they are; asking
/// to augment one is a protocol error.
pub fn augment(sample: &RoiSample) -> Result<Vec<RoiSample>> {
    if sample.split != Split::Train {
        return Err(Error::invalid(format!(
            "augmentation is for the training split, sample {} is {}",
            sample.id, sample.split
        )));
    }
    let variants = [
        (AugmentationTag::None, false, false),
        (AugmentationTag::HFlip, true, false),
        (AugmentationTag::VFlip, false, true),
        (AugmentationTag::HvFlip, true, true),
    ];
    let (w, h) = (sample.image.width(), sample.image.height());
    Ok(variants
        .into_iter()
        .map(|(tag, fh, fv)| RoiSample {
            id: sample.id.clone(),
            split: sample.split,
            augmentation_tag: tag,
            image: flip_image(&sample.image, fh, fv),
            mask: flip_mask(&sample.mask, w, h, fh, fv),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::rng_from;

    fn sample() -> RoiSample {
        let mut rng = rng_from(5);
        RoiSample {
            id: "s".into(),
            split: Split::Train,
            augmentation_tag: AugmentationTag::None,
            image: GrayImage::new(6, 6, (0..36).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap(),
            mask: (0..36).map(|_| rng.gen_range(0..=1) as u8).collect(),
        }
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        assert_eq!(flip_image(&flip_image(&s.image, true, false), true, false), s.image);
        assert_eq!(flip_image(&flip_image(&s.image, false, true), false, true), s.image);
        assert_eq!(
            flip_mask(&flip_mask(&s.mask, 6, 6, true, true), 6, 6, true, true),
            s.mask
        );
    }

    #[test]
    fn both_flip_composes_from_single_flips() {
        let s = sample();
        let hv = flip_image(&s.image, true, true);
        let via = flip_image(&flip_image(&s.image, true, false), false, true);
        assert_eq!(hv, via);
    }

    #[test]
    fn augment_yields_four_consistent_views() {
        let s = sample();
        let views = augment(&s).unwrap();
        assert_eq!(views.len(), 4);
        let tags: Vec<&str> = views.iter().map(|v| v.augmentation_tag.as_str()).collect();
        assert_eq!(tags, ["none", "hflip", "vflip", "hvflip"]);
        assert_eq!(views[0].image, s.image);
        // image and mask move together: a flipped view flips both
        let h = &views[1];
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(h.image.get(x, y), s.image.get(5 - x, y));
                assert_eq!(h.mask[y * 6 + x], s.mask[y * 6 + 5 - x]);
            }
        }
        for v in &views {
            v.validate().unwrap();
        }
    }

    #[test]
    fn test_split_is_rejected() {
        let mut s = sample();
        s.split = Split::Test;
        let err = augment(&s).unwrap_err().to_string();
        assert!(err.contains("training split"), "{err}");
    }
}
