use crate::error::{Error, Result};
use crate::net::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and positive"));
        }
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config {
                    field: if name == "adam_beta1" { "adam_beta1" } else { "adam_beta2" },
                    reason: format!("must be in [0,1), got {b}"),
                });
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be finite and positive"));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are aligned to the parameter
/// set's entry order, so the optimizer must always be fed the same set it
/// was created for.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Result<Adam> {
        cfg.validate()?;
        let m = params.iter().map(|(_, t)| vec![0.0; t.data().len()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.data().len()]).collect();
        Ok(Adam { cfg, step_count: 0, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update. `grads` must hold one gradient buffer per parameter
    /// entry, in entry order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "got {} gradient buffers for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let current = params.get(name).expect("aligned entry").data();
            if grads[i].len() != current.len() {
                return Err(Error::invalid(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    grads[i].len(),
                    current.len()
                )));
            }
            let mut next = current.to_vec();
            for (j, g) in grads[i].iter().enumerate() {
                let m = self.cfg.beta1 * self.m[i][j] + (1.0 - self.cfg.beta1) * g;
                let v = self.cfg.beta2 * self.v[i][j] + (1.0 - self.cfg.beta2) * g * g;
                self.m[i][j] = m;
                self.v[i][j] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                next[j] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            params.set_data(name, next)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Shape, Tensor};

    fn one_param(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        let n = values.len();
        p.insert("w", Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate_independent_of_gradient_scale() {
        // with bias correction, step 1 moves every coordinate by about
        // lr * sign(g) regardless of |g|
        for scale in [1e-4, 1.0, 1e4] {
            let mut params = one_param(vec![0.5, -0.25]);
            let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
            adam.step(&mut params, &[vec![scale, -scale]]).unwrap();
            let w = params.get("w").unwrap().data();
            assert!((w[0] - (0.5 - 1e-3)).abs() < 1e-6, "scale {scale}: {}", w[0]);
            assert!((w[1] - (-0.25 + 1e-3)).abs() < 1e-6, "scale {scale}: {}", w[1]);
        }
    }

    #[test]
    fn matches_a_hand_rolled_reference_over_several_steps() {
        let cfg = AdamConfig::default();
        let mut params = one_param(vec![1.0]);
        let mut adam = Adam::new(cfg, &params).unwrap();

        // quadratic objective 0.5*w^2, gradient w
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=25 {
            let g = params.get("w").unwrap().data()[0];
            adam.step(&mut params, &[vec![g]]).unwrap();

            let g_ref = w_ref;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g_ref;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g_ref * g_ref;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            w_ref -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);

            assert_eq!(params.get("w").unwrap().data()[0], w_ref, "step {t}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = one_param(vec![0.3, 0.7, -0.1]);
        let before = params.get("w").unwrap().data().to_vec();
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        for _ in 0..3 {
            adam.step(&mut params, &[vec![0.0; 3]]).unwrap();
        }
        assert_eq!(params.get("w").unwrap().data(), before);
    }

    #[test]
    fn misaligned_gradients_are_rejected() {
        let mut params = one_param(vec![0.0; 4]);
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        assert!(adam.step(&mut params, &[]).is_err());
        assert!(adam.step(&mut params, &[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn config_bounds_are_enforced() {
        assert!(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { eps: 0.0, ..AdamConfig::default() }.validate().is_err());
        AdamConfig::default().validate().unwrap();
    }
}
