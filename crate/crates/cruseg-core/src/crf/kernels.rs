use std::sync::Arc;

use crate::autodiff::{SymMatrix, Tensor};
use crate::crf::params::CrfParams;
use crate::error::{Error, Result};

/// The two dense pairwise kernel matrices over all pixel pairs of one ROI.
///
/// `bilateral` is k1 = exp(-|p-q|^2 / (2 theta_alpha^2) - (I_p - I_q)^2 /
/// (2 theta_beta^2)); `spatial` is k2 = exp(-|p-q|^2 / (2 theta_gamma^2)).
/// Both are symmetric with unit diagonal; message passing excludes the
/// diagonal.
#[derive(Clone, Debug)]
pub struct PairwiseKernels {
    pub bilateral: Arc<SymMatrix>,
    pub spatial: Arc<SymMatrix>,
    pub height: usize,
    pub width: usize,
}

impl PairwiseKernels {
    /// Pixel count N; kernel matrices are N x N.
    pub fn n(&self) -> usize {
        self.height * self.width
    }

    /// Assemble from explicit matrices (oracle-scale tests hand-build these).
    pub fn from_matrices(
        bilateral: SymMatrix,
        spatial: SymMatrix,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if bilateral.n() != height * width || spatial.n() != height * width {
            return Err(Error::shape(
                "pairwise_kernels",
                format!(
                    "matrix sides {} / {} vs {} pixels",
                    bilateral.n(),
                    spatial.n(),
                    height * width
                ),
            ));
        }
        Ok(PairwiseKernels {
            bilateral: Arc::new(bilateral),
            spatial: Arc::new(spatial),
            height,
            width,
        })
    }

    /// Combined edge weight omega1*k1(p,q) + omega2*k2(p,q).
    pub fn combined(&self, p: usize, q: usize, params: &CrfParams) -> f64 {
        params.omega1 * self.bilateral.at(p, q) + params.omega2 * self.spatial.at(p, q)
    }
}

/// Precomputed image-independent kernel factors for one ROI geometry.
///
/// The spatial kernel and the spatial factor of the bilateral kernel depend
/// only on pixel coordinates and bandwidths, so a training loop reuses them
/// across every sample and step; only the intensity factor is evaluated per
/// image. [`build_kernels`] routes through this type, which keeps the cached
/// and uncached paths bit-identical.
pub struct KernelCache {
    height: usize,
    width: usize,
    inv_two_beta_sq: f64,
    /// exp(-|p-q|^2 / (2 theta_alpha^2)): bilateral spatial factor
    alpha_factor: Arc<SymMatrix>,
    /// the full spatial kernel k2
    spatial: Arc<SymMatrix>,
}

fn spatial_sq_dist(width: usize, p: usize, q: usize) -> f64 {
    let (py, px) = ((p / width) as f64, (p % width) as f64);
    let (qy, qx) = ((q / width) as f64, (q % width) as f64);
    let (dy, dx) = (py - qy, px - qx);
    dy * dy + dx * dx
}

impl KernelCache {
    pub fn new(height: usize, width: usize, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::shape("build_kernels", "empty image".to_string()));
        }
        let n = height * width;
        let inv_two_alpha_sq = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
        let inv_two_gamma_sq = 1.0 / (2.0 * params.theta_gamma * params.theta_gamma);
        let alpha_factor = SymMatrix::from_fn(n, |p, q| {
            if p == q {
                1.0
            } else {
                (-spatial_sq_dist(width, p, q) * inv_two_alpha_sq).exp()
            }
        });
        let spatial = SymMatrix::from_fn(n, |p, q| {
            if p == q {
                1.0
            } else {
                (-spatial_sq_dist(width, p, q) * inv_two_gamma_sq).exp()
            }
        });
        Ok(KernelCache {
            height,
            width,
            inv_two_beta_sq: 1.0 / (2.0 * params.theta_beta * params.theta_beta),
            alpha_factor: Arc::new(alpha_factor),
            spatial: Arc::new(spatial),
        })
    }

    /// Build the kernel pair for one ROI image (1x1xHxW, intensities in
    /// [0,1]). Only the bilateral intensity factor is computed here.
    pub fn kernels_for(&self, roi: &Tensor) -> Result<PairwiseKernels> {
        let s = roi.shape();
        if s.batch != 1 || s.channels != 1 || s.height != self.height || s.width != self.width {
            return Err(Error::shape(
                "build_kernels",
                format!(
                    "roi must be 1x1x{}x{}, got {s}",
                    self.height, self.width
                ),
            ));
        }
        if let Some((i, v)) = roi
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "roi intensity {v} at pixel ({}, {}) is outside [0,1]",
                i / self.width,
                i % self.width
            )));
        }
        let n = self.height * self.width;
        let intensity = roi.data();
        let alpha = Arc::clone(&self.alpha_factor);
        let inv2b = self.inv_two_beta_sq;
        let bilateral = SymMatrix::from_fn(n, |p, q| {
            if p == q {
                1.0
            } else {
                let di = intensity[p] - intensity[q];
                alpha.at(p, q) * (-di * di * inv2b).exp()
            }
        });
        Ok(PairwiseKernels {
            bilateral: Arc::new(bilateral),
            spatial: Arc::clone(&self.spatial),
            height: self.height,
            width: self.width,
        })
    }
}

/// Build both dense pairwise kernels for one ROI.
pub fn build_kernels(roi: &Tensor, params: &CrfParams) -> Result<PairwiseKernels> {
    let s = roi.shape();
    KernelCache::new(s.height, s.width, params)?.kernels_for(roi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;
    use crate::rng::rng_from;
    use rand::Rng;

    fn roi(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap()
    }

    #[test]
    fn coincident_pixels_have_kernel_value_one() {
        // a constant image makes intensity gaps zero; the diagonal is exact 1
        // and any off-diagonal value approaches 1 as distance shrinks
        let img = Tensor::filled(Shape::new(1, 1, 2, 2), 0.5);
        let k = build_kernels(&img, &CrfParams::default()).unwrap();
        for p in 0..4 {
            assert_eq!(k.bilateral.at(p, p), 1.0);
            assert_eq!(k.spatial.at(p, p), 1.0);
        }
        // neighbors of a constant image: bilateral reduces to its spatial factor
        let d = 1.0f64;
        let want = (-d / (2.0 * 8.0 * 8.0)).exp();
        assert!((k.bilateral.at(0, 1) - want).abs() < 1e-15);
    }

    #[test]
    fn infinite_intensity_bandwidth_reduces_bilateral_to_spatial_form() {
        let img = roi(5, 5, 3);
        let mut params = CrfParams::default();
        params.theta_beta = 1e12;
        params.theta_gamma = params.theta_alpha;
        let k = build_kernels(&img, &params).unwrap();
        // with theta_beta huge the intensity factor is ~1, so k1 ~ k2 built
        // with theta_alpha
        for p in 0..25 {
            for q in 0..25 {
                assert!(
                    (k.bilateral.at(p, q) - k.spatial.at(p, q)).abs() < 1e-9,
                    "({p},{q})"
                );
            }
        }
    }

    #[test]
    fn six_by_six_matches_double_loop_oracle() {
        let img = roi(6, 6, 7);
        let params = CrfParams::default();
        let k = build_kernels(&img, &params).unwrap();
        let w = 6usize;
        let data = img.data();
        for p in 0..36 {
            for q in 0..36 {
                let (py, px) = ((p / w) as f64, (p % w) as f64);
                let (qy, qx) = ((q / w) as f64, (q % w) as f64);
                let d2 = (py - qy).powi(2) + (px - qx).powi(2);
                let di2 = (data[p] - data[q]).powi(2);
                let k1 = (-d2 / (2.0 * params.theta_alpha.powi(2))
                    - di2 / (2.0 * params.theta_beta.powi(2)))
                .exp();
                let k2 = (-d2 / (2.0 * params.theta_gamma.powi(2))).exp();
                assert!(
                    (k.bilateral.at(p, q) - k1).abs() < 1e-12,
                    "bilateral ({p},{q}): {} vs {k1}",
                    k.bilateral.at(p, q)
                );
                assert!(
                    (k.spatial.at(p, q) - k2).abs() < 1e-12,
                    "spatial ({p},{q}): {} vs {k2}",
                    k.spatial.at(p, q)
                );
            }
        }
    }

    #[test]
    fn kernels_are_symmetric_with_unit_diagonal_and_bounded_entries() {
        let img = roi(7, 4, 11);
        let k = build_kernels(&img, &CrfParams::default()).unwrap();
        assert_eq!(k.bilateral.max_asymmetry(), 0.0);
        assert_eq!(k.spatial.max_asymmetry(), 0.0);
        for p in 0..k.n() {
            assert_eq!(k.bilateral.at(p, p), 1.0);
            for q in 0..k.n() {
                let v = k.bilateral.at(p, q);
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn cache_matches_direct_build_bitwise() {
        let params = CrfParams::default();
        let cache = KernelCache::new(6, 6, &params).unwrap();
        for seed in 0..4 {
            let img = roi(6, 6, seed);
            let a = cache.kernels_for(&img).unwrap();
            let b = build_kernels(&img, &params).unwrap();
            assert_eq!(a.bilateral.data(), b.bilateral.data());
            assert_eq!(a.spatial.data(), b.spatial.data());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut params = CrfParams::default();
        params.theta_alpha = -1.0;
        assert!(build_kernels(&roi(3, 3, 1), &params).is_err());

        let mut img = roi(3, 3, 2);
        img.data_mut()[4] = 1.5;
        let err = build_kernels(&img, &CrfParams::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("(1, 1)"), "{err}");
    }
}
