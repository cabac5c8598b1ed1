//! Tab-separated dataset manifests and their materialization into
//! augmented, network-ready sample streams.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::augment::augment;
use crate::data::image::GrayImage;
use crate::data::pgm::{read_mask_pgm, read_pgm};
use crate::data::rawf32::read_raw;
use crate::data::resize::extract_and_resize;
use crate::data::sample::{BBox, RoiSample, Split};
use crate::error::{Error, Result};
use crate::fsio;

pub const MANIFEST_HEADER: &str = "id\timage_path\tmask_path\tx0\ty0\tw\th\tsplit";

#[derive(Clone, Debug)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub mask_path: String,
    pub bbox: BBox,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    base_dir: PathBuf,
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    /// (train, test) record counts.
    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.records.iter().filter(|r| r.split == Split::Train).count();
        (train, self.records.len() - train)
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fsio::read_string(path)?;
    let bad = |line_no: usize, reason: String| {
        Error::file_format(path, format!("line {line_no}: {reason}"))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((_, first)) => {
            return Err(bad(1, format!("header must be {MANIFEST_HEADER:?}, got {first:?}")))
        }
        None => return Err(bad(1, "file is empty".to_string())),
    }

    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(bad(line_no, format!("want 8 tab-separated fields, got {}", fields.len())));
        }
        let num = |v: &str, what: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| bad(line_no, format!("bad {what} {v:?}")))
        };
        let record = ManifestRecord {
            id: fields[0].to_string(),
            image_path: fields[1].to_string(),
            mask_path: fields[2].to_string(),
            bbox: BBox::new(
                num(fields[3], "x0")?,
                num(fields[4], "y0")?,
                num(fields[5], "w")?,
                num(fields[6], "h")?,
            ),
            split: fields[7]
                .parse()
                .map_err(|e| bad(line_no, format!("{e}")))?,
        };
        if !ids.insert(record.id.clone()) {
            return Err(bad(line_no, format!("duplicate id {:?}", record.id)));
        }
        records.push(record);
    }
    let base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok(DatasetManifest { base_dir, records })
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in records {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id, r.image_path, r.mask_path, r.bbox.x0, r.bbox.y0, r.bbox.width, r.bbox.height, r.split
        )
        .expect("string write");
    }
    fsio::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Default)]
pub struct MaterializedDataset {
    /// Training stream: every record expanded to its four flip views, in
    /// manifest order.
    pub train: Vec<RoiSample>,
    /// Test stream: one sample per record, untouched.
    pub test: Vec<RoiSample>,
}

fn read_image_any(path: &Path) -> Result<GrayImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("raw") | Some("f32") => read_raw(path),
        _ => Err(Error::file_format(
            path,
            "unsupported image format, want .pgm, .raw or .f32",
        )),
    }
}

/// Load every record, crop and resize to `target`, and expand the training
/// split by the flip family.
pub fn materialize(manifest: &DatasetManifest, target: usize) -> Result<MaterializedDataset> {
    let mut out = MaterializedDataset::default();
    for r in manifest.records() {
        let image = read_image_any(&manifest.resolve(&r.image_path))?;
        let mask_path = manifest.resolve(&r.mask_path);
        let (mask, mw, mh) = read_mask_pgm(&mask_path)?;
        if (mw, mh) != (image.width(), image.height()) {
            return Err(Error::invalid(format!(
                "{}: mask is {mw}x{mh} but image is {}x{}",
                r.id,
                image.width(),
                image.height()
            )));
        }
        let sample = extract_and_resize(&image, &mask, &r.bbox, target, &r.id, r.split)?;
        match r.split {
            Split::Train => out.train.extend(augment(&sample)?),
            Split::Test => out.test.push(sample),
        }
    }
    Ok(out)
}
