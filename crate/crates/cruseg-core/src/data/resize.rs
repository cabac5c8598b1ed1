//! Bicubic (Catmull-Rom) resampling and the crop-resize-normalize pipeline
//! that turns an annotated source image into a network-ready sample.

use crate::data::image::GrayImage;
use crate::data::sample::{AugmentationTag, BBox, RoiSample, Split};
use crate::error::{Error, Result};

// cubic convolution kernel with a = -0.5
fn cubic_weight(t: f64) -> f64 {
    let s = t.abs();
    if s < 1.0 {
        (1.5 * s - 2.5) * s * s + 1.0
    } else if s < 2.0 {
        ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0
    } else {
        0.0
    }
}

// per-output-pixel source taps and weights along one axis, edge-clamped,
// with pixel centers aligned between the two grids
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let u = (o as f64 + 0.5) * scale - 0.5;
            let base = u.floor();
            let f = u - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                idx[k] = (base - 1 + k as isize).clamp(0, in_len as isize - 1) as usize;
                w[k] = cubic_weight(f - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

pub fn bicubic_resize(src: &GrayImage, out_width: usize, out_height: usize) -> Result<GrayImage> {
    if out_width == 0 || out_height == 0 {
        return Err(Error::invalid(format!(
            "target size must be positive, got {out_width}x{out_height}"
        )));
    }
    let xt = axis_taps(src.width(), out_width);
    let yt = axis_taps(src.height(), out_height);
    let mut out = vec![0.0; out_width * out_height];
    for (oy, (yi, wy)) in yt.iter().enumerate() {
        for (ox, (xi, wx)) in xt.iter().enumerate() {
            let mut acc = 0.0;
            for dy in 0..4 {
                let mut row = 0.0;
                for dx in 0..4 {
                    row += wx[dx] * src.get(xi[dx], yi[dy]);
                }
                acc += wy[dy] * row;
            }
            out[oy * out_width + ox] = acc;
        }
    }
    GrayImage::new(out_width, out_height, out)
}

fn crop(src: &GrayImage, b: &BBox) -> GrayImage {
    let mut pixels = Vec::with_capacity(b.width * b.height);
    for y in b.y0..b.y0 + b.height {
        for x in b.x0..b.x0 + b.width {
            pixels.push(src.get(x, y));
        }
    }
    GrayImage::new(b.width, b.height, pixels).expect("crop dims match pixel count")
}

/// Crop both rasters to the box, resample to `target` square, threshold
/// the mask at half, and min-max normalize the intensities per ROI. A box
/// whose mask comes out empty is kept with a warning; detection quality is
/// the annotator's problem, not the loader's.
pub fn extract_and_resize(
    image: &GrayImage,
    mask: &[u8],
    bbox: &BBox,
    target: usize,
    id: &str,
    split: Split,
) -> Result<RoiSample> {
    if mask.len() != image.width() * image.height() {
        return Err(Error::invalid(format!(
            "{id}: mask has {} entries for a {}x{} image",
            mask.len(),
            image.width(),
            image.height()
        )));
    }
    bbox.validate_within(image.width(), image.height())
        .map_err(|e| Error::invalid(format!("{id}: {e}")))?;

    let image_crop = crop(image, bbox);
    let mask_float = GrayImage::new(
        image.width(),
        image.height(),
        mask.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect(),
    )?;
    let mask_crop = crop(&mask_float, bbox);

    let resized = bicubic_resize(&image_crop, target, target)?;
    let mask_resized = bicubic_resize(&mask_crop, target, target)?;
    let mask_out: Vec<u8> = mask_resized.pixels().iter().map(|&v| (v >= 0.5) as u8).collect();
    if mask_out.iter().all(|&v| v == 0) {
        log::warn!("{id}: mask is empty inside the box, keeping the sample");
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in resized.pixels() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // constant patches carry no contrast; they map to zero by convention
    let pixels: Vec<f64> = if hi > lo {
        resized.pixels().iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; target * target]
    };

    let sample = RoiSample {
        id: id.to_string(),
        split,
        augmentation_tag: AugmentationTag::None,
        image: GrayImage::new(target, target, pixels)?,
        mask: mask_out,
    };
    sample.validate()?;
    Ok(sample)
}
