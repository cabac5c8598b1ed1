//! Binary portable graymap (P5) reader and writer, 8- and 16-bit. Masks use
//! the 0/255 convention common to segmentation datasets.

use std::path::Path;

use crate::data::image::GrayImage;
use crate::error::{Error, Result};
use crate::fsio;

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fsio::read_bytes(path)?;
    let bad = |reason: String| Error::file_format(path, reason);

    let mut cursor = 0usize;
    let mut token = |cursor: &mut usize| -> Result<String> {
        // whitespace and # comments separate header tokens
        loop {
            while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
                *cursor += 1;
            }
            if *cursor < bytes.len() && bytes[*cursor] == b'#' {
                while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                    *cursor += 1;
                }
                continue;
            }
            break;
        }
        let start = *cursor;
        while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if start == *cursor {
            return Err(Error::file_format(path, "header ended early"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*cursor]).into_owned())
    };

    let magic = token(&mut cursor)?;
    if magic != "P5" {
        return Err(bad(format!("magic is {magic:?}, only binary P5 is supported")));
    }
    let width: usize = parse_dim(path, &token(&mut cursor)?)?;
    let height: usize = parse_dim(path, &token(&mut cursor)?)?;
    let maxval: u32 = parse_dim(path, &token(&mut cursor)?)? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from the payload
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(bad("missing separator before pixel data".to_string()));
    }
    cursor += 1;

    let n = width * height;
    let wide = maxval > 255;
    let want = n * if wide { 2 } else { 1 };
    let payload = &bytes[cursor..];
    if payload.len() != want {
        return Err(bad(format!(
            "pixel payload holds {} bytes, {width}x{height} at maxval {maxval} wants {want}",
            payload.len()
        )));
    }
    let scale = maxval as f64;
    let pixels: Vec<f64> = if wide {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
            .collect()
    } else {
        payload.iter().map(|&b| b as f64 / scale).collect()
    };
    if let Some(v) = pixels.iter().find(|v| **v > 1.0) {
        return Err(bad(format!("pixel value {v} exceeds maxval")));
    }
    GrayImage::new(width, height, pixels)
}

fn parse_dim(path: &Path, token: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::file_format(path, format!("bad header number {token:?}")))
}

/// Write intensities in [0,1] quantized to the given maxval. Values outside
/// [0,1] are clamped.
pub fn write_pgm(path: &Path, image: &GrayImage, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::invalid("pgm maxval must be positive"));
    }
    let header = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval);
    let mut bytes = header.into_bytes();
    let m = maxval as f64;
    if maxval > 255 {
        for v in image.pixels() {
            let q = (v.clamp(0.0, 1.0) * m).round() as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    } else {
        for v in image.pixels() {
            bytes.push((v.clamp(0.0, 1.0) * m).round() as u8);
        }
    }
    fsio::write_atomic(path, &bytes)
}

pub fn write_mask_pgm(path: &Path, mask: &[u8], width: usize, height: usize) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::invalid(format!(
            "mask has {} entries for {width}x{height}",
            mask.len()
        )));
    }
    let pixels = mask.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
    write_pgm(path, &GrayImage::new(width, height, pixels)?, 255)
}

/// Read a mask stored with 0/255 (or any) intensities; anything at or above
/// half scale counts as foreground.
pub fn read_mask_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img = read_pgm(path)?;
    let mask = img.pixels().iter().map(|&v| (v >= 0.5) as u8).collect();
    Ok((mask, img.width(), img.height()))
}
