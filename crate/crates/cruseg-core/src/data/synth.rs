//! Synthetic mass corpus: random smooth blobs (perturbed ellipses with
//! optional spiculation spikes) on a sloped background, with configurable
//! noise. Small enough to regenerate anywhere, rich enough to exercise the
//! whole pipeline.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image::GrayImage;
use crate::data::sample::{AugmentationTag, RoiSample, Split};
use crate::error::{Error, Result};
use crate::rng::{mix2, rng_from};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square side in pixels.
    pub size: usize,
    /// Background ramp range.
    pub background_low: f64,
    pub background_high: f64,
    /// Intensity added inside the blob.
    pub foreground_lift: f64,
    /// Level separating background from lifted interior in the noise-free
    /// case; must fall strictly between background_high and
    /// background_low + foreground_lift.
    pub mask_threshold: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
    /// Accepted mask area fraction range; draws outside are resampled.
    pub area_min: f64,
    pub area_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 40,
            background_low: 0.05,
            background_high: 0.35,
            foreground_lift: 0.45,
            mask_threshold: 0.425,
            noise_sigma: 0.04,
            area_min: 0.05,
            area_max: 0.60,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::config("synth.size", "must be at least 8 pixels"));
        }
        if !(0.0..=1.0).contains(&self.background_low)
            || !(0.0..=1.0).contains(&self.background_high)
            || self.background_low >= self.background_high
        {
            return Err(Error::config(
                "synth.background",
                format!(
                    "want 0 <= low < high <= 1, got [{}, {}]",
                    self.background_low, self.background_high
                ),
            ));
        }
        if self.foreground_lift <= 0.0 {
            return Err(Error::config("synth.foreground_lift", "must be positive"));
        }
        if self.mask_threshold <= self.background_high
            || self.mask_threshold >= self.background_low + self.foreground_lift
        {
            return Err(Error::config(
                "synth.mask_threshold",
                format!(
                    "{} does not separate background (max {}) from interior (min {})",
                    self.mask_threshold,
                    self.background_high,
                    self.background_low + self.foreground_lift
                ),
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::config("synth.noise_sigma", "must be finite and >= 0"));
        }
        if !(0.0 < self.area_min && self.area_min < self.area_max && self.area_max < 1.0) {
            return Err(Error::config(
                "synth.area",
                format!("want 0 < min < max < 1, got [{}, {}]", self.area_min, self.area_max),
            ));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    rot_cos: f64,
    rot_sin: f64,
    harmonics: Vec<(f64, f64, f64)>,
    spikes: Vec<(f64, f64, f64)>,
}

impl Blob {
    fn draw(rng: &mut impl Rng, size: f64) -> Blob {
        let cx = size / 2.0 + rng.gen_range(-0.1..0.1) * size;
        let cy = size / 2.0 + rng.gen_range(-0.1..0.1) * size;
        let rx = rng.gen_range(0.14..0.34) * size;
        let ry = rng.gen_range(0.14..0.34) * size;
        let rot = rng.gen_range(0.0..PI);
        let harmonics = (2..=6)
            .map(|k| (k as f64, rng.gen_range(-0.12..0.12), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let n_spikes = rng.gen_range(0..=3);
        let spikes = (0..n_spikes)
            .map(|_| {
                (
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.06..0.15),
                    rng.gen_range(0.25..0.55),
                )
            })
            .collect();
        Blob { cx, cy, rx, ry, rot_cos: rot.cos(), rot_sin: rot.sin(), harmonics, spikes }
    }

    // boundary radius multiplier at angle theta in the ellipse frame
    fn boundary(&self, theta: f64) -> f64 {
        let mut r = 1.0;
        for &(k, amp, phase) in &self.harmonics {
            r += amp * (k * theta + phase).sin();
        }
        for &(center, width, amp) in &self.spikes {
            let d = (theta - center).sin().atan2((theta - center).cos());
            r += amp * (-(d / width) * (d / width)).exp();
        }
        r.max(0.05)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * self.rot_cos + dy * self.rot_sin) / self.rx;
        let v = (-dx * self.rot_sin + dy * self.rot_cos) / self.ry;
        let rho = (u * u + v * v).sqrt();
        rho <= self.boundary(v.atan2(u))
    }

    fn rasterize(&self, size: usize) -> Vec<u8> {
        let mut mask = vec![0u8; size * size];
        for y in 0..size {
            for x in 0..size {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask[y * size + x] = 1;
                }
            }
        }
        mask
    }
}

/// Generate `count` samples. Each sample is drawn from a stream keyed by
/// (seed, index), so a corpus is reproducible and its prefix is stable when
/// the count grows. All samples come out tagged as training; the caller
/// assigns splits.
pub fn synth_generate(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<RoiSample>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    cfg.validate()?;
    let s = cfg.size;
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_from(mix2(seed, i as u64));

        let mut mask = Vec::new();
        let mut accepted = false;
        for _ in 0..10_000 {
            let blob = Blob::draw(&mut rng, s as f64);
            mask = blob.rasterize(s);
            let area = mask.iter().map(|&v| v as usize).sum::<usize>() as f64
                / (s * s) as f64;
            if area >= cfg.area_min && area <= cfg.area_max {
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::invalid(format!(
                "sample {i}: no blob met the area range in 10000 draws"
            )));
        }

        let ramp_angle = rng.gen_range(0.0..2.0 * PI);
        let (ca, sa) = (ramp_angle.cos(), ramp_angle.sin());
        let half = s as f64 / 2.0;
        let span = cfg.background_high - cfg.background_low;
        let mut pixels = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let proj = ((x as f64 + 0.5 - half) * ca + (y as f64 + 0.5 - half) * sa)
                    / (s as f64 * std::f64::consts::SQRT_2);
                let mut v = cfg.background_low + span * (0.5 + proj);
                if mask[y * s + x] == 1 {
                    v += cfg.foreground_lift;
                }
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                pixels.push(v.clamp(0.0, 1.0));
            }
        }

        let sample = RoiSample {
            id: format!("synth-{i:04}"),
            split: Split::Train,
            augmentation_tag: AugmentationTag::None,
            image: GrayImage::new(s, s, pixels)?,
            mask,
        };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}
