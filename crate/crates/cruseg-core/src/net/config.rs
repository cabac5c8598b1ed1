use crate::crf::CrfParams;
use crate::error::{Error, Result};

/// Architecture description for [`crate::net::build_network`].
///
/// `base_channels` are the contracting-path feature widths; the expansive
/// path mirrors them. `lambda` weighs the CRF loss term against the plain
/// network loss and lives here because it is part of the trained artifact's
/// identity (it is echoed into saved weights).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub base_channels: [usize; 4],
    /// Main-path convolution size, 3 or 7.
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub residual_enabled: bool,
    /// Square ROI side length; three pooling levels need a multiple of 8.
    pub input_size: usize,
    /// Background and foreground; fixed at 2.
    pub num_classes: usize,
    /// Trade-off between network loss (0) and CRF loss (1).
    pub lambda: f64,
    pub crf: CrfParams,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_channels: [16, 32, 64, 128],
            kernel_size: 3,
            dropout_rate: 0.5,
            residual_enabled: true,
            input_size: 40,
            num_classes: 2,
            lambda: 0.67,
            crf: CrfParams::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels.iter().any(|c| *c == 0) {
            return Err(Error::config(
                "net.base_channels",
                format!("all four widths must be positive, got {:?}", self.base_channels),
            ));
        }
        if self.kernel_size != 3 && self.kernel_size != 7 {
            return Err(Error::config(
                "net.kernel_size",
                format!("must be 3 or 7, got {}", self.kernel_size),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(
                "net.dropout_rate",
                format!("must be in [0,1), got {}", self.dropout_rate),
            ));
        }
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::config(
                "net.input_size",
                format!(
                    "three pooling levels need a positive multiple of 8, got {}",
                    self.input_size
                ),
            ));
        }
        if self.num_classes != 2 {
            return Err(Error::config(
                "net.num_classes",
                format!("the model is binary, got {}", self.num_classes),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "net.lambda",
                format!("must be in [0,1], got {}", self.lambda),
            ));
        }
        self.crf.validate()
    }

    /// Same-size padding for the odd main-path kernel.
    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_follows_published_configuration() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.base_channels, [16, 32, 64, 128]);
        assert_eq!(c.input_size, 40);
        assert_eq!(c.dropout_rate, 0.5);
        assert_eq!(c.lambda, 0.67);
        assert_eq!(c.num_classes, 2);
    }

    #[test]
    fn rejections_name_the_offending_field() {
        let mut c = NetworkConfig::default();
        c.kernel_size = 5;
        assert!(c.validate().unwrap_err().to_string().contains("net.kernel_size"));

        let mut c = NetworkConfig::default();
        c.input_size = 44;
        assert!(c.validate().unwrap_err().to_string().contains("net.input_size"));

        let mut c = NetworkConfig::default();
        c.lambda = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("net.lambda"));

        let mut c = NetworkConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("net.dropout_rate"));

        let mut c = NetworkConfig::default();
        c.num_classes = 3;
        assert!(c.validate().unwrap_err().to_string().contains("net.num_classes"));

        let mut c = NetworkConfig::default();
        c.base_channels = [16, 0, 64, 128];
        assert!(c.validate().unwrap_err().to_string().contains("net.base_channels"));

        let mut c = NetworkConfig::default();
        c.crf.theta_beta = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seven_is_the_other_legal_kernel() {
        let mut c = NetworkConfig::default();
        c.kernel_size = 7;
        c.validate().unwrap();
        assert_eq!(c.padding(), 3);
    }
}
