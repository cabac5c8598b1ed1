use crate::error::{Error, Result};

/// Parameters of the dense CRF layer.
///
/// `mu`, `omega1`, and `omega2` are learnable (they live in the parameter
/// set during training; this struct carries their current values). The
/// bandwidths are fixed hyperparameters and the iteration count is
/// structural.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// Label compatibility matrix, indexed mu[l][l'].
    pub mu: [[f64; 2]; 2],
    /// Weight of the bilateral (position + intensity) kernel.
    pub omega1: f64,
    /// Weight of the spatial-only kernel.
    pub omega2: f64,
    /// Spatial bandwidth of the bilateral kernel, in pixels.
    pub theta_alpha: f64,
    /// Intensity bandwidth of the bilateral kernel, for intensities in [0,1].
    pub theta_beta: f64,
    /// Bandwidth of the spatial kernel, in pixels.
    pub theta_gamma: f64,
    /// Number of mean-field iterations.
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            // Potts: no penalty for agreeing labels, unit penalty otherwise
            mu: [[0.0, 1.0], [1.0, 0.0]],
            omega1: 1.0,
            omega2: 1.0,
            theta_alpha: 8.0,
            theta_beta: 0.125,
            theta_gamma: 3.0,
            iterations: 5,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("crf.theta_alpha", self.theta_alpha),
            ("crf.theta_beta", self.theta_beta),
            ("crf.theta_gamma", self.theta_gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config {
                    field: match name {
                        "crf.theta_alpha" => "crf.theta_alpha",
                        "crf.theta_beta" => "crf.theta_beta",
                        _ => "crf.theta_gamma",
                    },
                    reason: format!("bandwidth must be strictly positive, got {v}"),
                });
            }
        }
        if self.iterations == 0 {
            return Err(Error::config("crf.iterations", "must be at least 1"));
        }
        for (name, v) in [("crf.omega1", self.omega1), ("crf.omega2", self.omega2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config {
                    field: if name == "crf.omega1" {
                        "crf.omega1"
                    } else {
                        "crf.omega2"
                    },
                    reason: format!("kernel weight must be non-negative, got {v}"),
                });
            }
        }
        if self.mu.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("crf.mu", "entries must be finite"));
        }
        Ok(())
    }

    /// The compatibility matrix flattened row-major, as stored in the
    /// parameter set (shape 2x2x1x1: a 1x1 channel-mixing convolution).
    pub fn mu_flat(&self) -> [f64; 4] {
        [self.mu[0][0], self.mu[0][1], self.mu[1][0], self.mu[1][1]]
    }
}
