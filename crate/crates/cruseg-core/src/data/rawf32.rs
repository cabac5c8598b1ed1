//! Flat raw rasters: little-endian f32 pixels with a `.dims` sidecar file
//! holding "width height". The escape hatch for sources that preprocessing
//! pipelines hand over as bare float dumps.

use std::path::{Path, PathBuf};

use crate::data::image::GrayImage;
use crate::error::{Error, Result};
use crate::fsio;

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".dims");
    path.with_file_name(name)
}

pub fn read_raw(path: &Path) -> Result<GrayImage> {
    let dims_path = sidecar(path);
    let dims_text = fsio::read_string(&dims_path)?;
    let parts: Vec<&str> = dims_text.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::file_format(
            &dims_path,
            format!("want \"width height\", got {dims_text:?}"),
        ));
    }
    let parse = |v: &str| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::file_format(&dims_path, format!("bad dimension {v:?}")))
    };
    let (width, height) = (parse(parts[0])?, parse(parts[1])?);

    let bytes = fsio::read_bytes(path)?;
    if bytes.len() != width * height * 4 {
        return Err(Error::file_format(
            path,
            format!(
                "payload holds {} bytes, {width}x{height} f32 wants {}",
                bytes.len(),
                width * height * 4
            ),
        ));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    GrayImage::new(width, height, pixels)
}

pub fn write_raw(path: &Path, image: &GrayImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.pixels().len() * 4);
    for v in image.pixels() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fsio::write_atomic(path, &bytes)?;
    let dims = format!("{} {}\n", image.width(), image.height());
    fsio::write_atomic(&sidecar(path), dims.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roi.raw");
        let img = GrayImage::new(3, 2, vec![0.0, 0.25, 977.5, -1.5, 1.0, 0.125]).unwrap();
        write_raw(&path, &img).unwrap();
        assert_eq!(read_raw(&path).unwrap(), img);
    }

    #[test]
    fn missing_sidecar_error_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orphan.raw");
        std::fs::write(&path, [0u8; 16]).unwrap();
        let err = read_raw(&path).unwrap_err().to_string();
        assert!(err.contains("orphan.raw.dims"), "{err}");
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.raw");
        std::fs::write(&path, [0u8; 9]).unwrap();
        std::fs::write(sidecar(&path), "2 2\n").unwrap();
        let err = read_raw(&path).unwrap_err().to_string();
        assert!(err.contains("16"), "{err}");
    }
}
