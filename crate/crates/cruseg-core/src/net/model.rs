use rand::Rng;

use crate::autodiff::{ConvSpec, NodeId, Shape, Tape, Tensor};
use crate::crf::{CrfNodes, CrfParams};
use crate::error::{Error, Result};
use crate::net::config::NetworkConfig;
use crate::net::params::{ParamSet, RegisteredParams};
use crate::rng::{hash_str, mix2, rng_from};

/// The residual U-Net: a 4-level contracting path (levels 1-4), a 3-level
/// expansive path (levels 5-7) with skip concatenations 1-7, 2-6 and 3-5,
/// and a 1x1 two-class softmax head. The CRF's learnable parameters live in
/// the same parameter set so one optimizer update covers everything.
#[derive(Clone, Debug)]
pub struct CruNet {
    config: NetworkConfig,
    params: ParamSet,
}

/// Every parameter the architecture owns, in registration order, with its
/// shape. This single listing drives initialization, the weights file
/// layout, and structural validation of loaded parameter sets.
pub fn layer_manifest(config: &NetworkConfig) -> Vec<(String, Shape)> {
    let ch = config.base_channels;
    let k = config.kernel_size;
    let mut out = Vec::new();
    let mut conv = |name: String, out_c: usize, in_c: usize, ks: usize, bias: bool| {
        out.push((format!("{name}.w"), Shape::new(out_c, in_c, ks, ks)));
        if bias {
            out.push((format!("{name}.b"), Shape::new(1, out_c, 1, 1)));
        }
    };
    for level in 1..=4usize {
        let in_c = if level == 1 { 1 } else { ch[level - 2] };
        let out_c = ch[level - 1];
        conv(format!("down{level}.conv1"), out_c, in_c, k, true);
        conv(format!("down{level}.conv2"), out_c, out_c, k, true);
        if config.residual_enabled {
            conv(format!("down{level}.shortcut"), out_c, in_c, 1, false);
        }
    }
    for level in 5..=7usize {
        let d = 7 - level;
        let in_c = ch[d + 1];
        let out_c = ch[d];
        conv(format!("up{level}.conv1"), out_c, in_c, k, true);
        conv(format!("up{level}.conv2"), out_c, 2 * out_c, k, true);
        if config.residual_enabled {
            conv(format!("up{level}.shortcut"), out_c, in_c, 2, false);
        }
    }
    conv("head".to_string(), config.num_classes, ch[0], 1, true);
    out.push(("crf.mu".to_string(), Shape::new(2, 2, 1, 1)));
    out.push(("crf.omega1".to_string(), Shape::new(1, 1, 1, 1)));
    out.push(("crf.omega2".to_string(), Shape::new(1, 1, 1, 1)));
    out
}

/// Instantiate the architecture with a deterministic parameter draw.
///
/// Every tensor gets its own stream keyed by the parameter name, so two
/// configs sharing a layer draw identical values for it under the same seed
/// (the residual and plain variants differ only by the shortcut tensors).
/// Weights are uniform in +-sqrt(3/fan_in), biases start at zero, and the
/// CRF entries start at the configured compatibility and kernel weights.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<CruNet> {
    config.validate()?;
    let mut params = ParamSet::new();
    for (name, shape) in layer_manifest(config) {
        let value = match name.as_str() {
            "crf.mu" => Tensor::from_vec(shape, config.crf.mu_flat().to_vec())?,
            "crf.omega1" => Tensor::scalar(config.crf.omega1),
            "crf.omega2" => Tensor::scalar(config.crf.omega2),
            _ if name.ends_with(".b") => Tensor::zeros(shape),
            _ => {
                let fan_in = shape.channels * shape.height * shape.width;
                let bound = (3.0 / fan_in as f64).sqrt();
                let mut rng = rng_from(mix2(seed, hash_str(&name)));
                let data = (0..shape.numel())
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Tensor::from_vec(shape, data)?
            }
        };
        params.insert(&name, value)?;
    }
    Ok(CruNet { config: config.clone(), params })
}

impl CruNet {
    /// Assemble from an existing parameter set (the weights loader). The set
    /// must match the config's manifest name for name and shape for shape.
    pub fn from_parts(config: NetworkConfig, params: ParamSet) -> Result<CruNet> {
        config.validate()?;
        let manifest = layer_manifest(&config);
        if manifest.len() != params.len() {
            return Err(Error::invalid(format!(
                "parameter set has {} tensors, architecture wants {}",
                params.len(),
                manifest.len()
            )));
        }
        for ((want_name, want_shape), (got_name, got)) in manifest.iter().zip(params.iter()) {
            if want_name != got_name {
                return Err(Error::invalid(format!(
                    "parameter order mismatch: expected {want_name}, found {got_name}"
                )));
            }
            if got.shape() != *want_shape {
                return Err(Error::invalid(format!(
                    "parameter {want_name} has shape {}, architecture wants {want_shape}",
                    got.shape()
                )));
            }
        }
        Ok(CruNet { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Current CRF parameters: learned compatibility and kernel weights from
    /// the parameter set, bandwidths and iteration count from the config.
    pub fn crf_params(&self) -> CrfParams {
        let mut p = self.config.crf.clone();
        let mu = self.params.get("crf.mu").expect("manifest has crf.mu").data();
        p.mu = [[mu[0], mu[1]], [mu[2], mu[3]]];
        p.omega1 = self.params.get("crf.omega1").expect("manifest has crf.omega1").data()[0];
        p.omega2 = self.params.get("crf.omega2").expect("manifest has crf.omega2").data()[0];
        p
    }

    /// Handles for the CRF parameters within one registration.
    pub fn crf_nodes(&self, tape: &mut Tape, reg: &RegisteredParams) -> CrfNodes {
        CrfNodes {
            mu: reg.node("crf.mu"),
            omega1: reg.node("crf.omega1"),
            omega2: reg.node("crf.omega2"),
            zero_bias: CrfNodes::zero_bias_node(tape),
        }
    }

    /// One contracting block: conv-relu twice, dropout on the two deepest
    /// levels, pooling on every level but the first, plus the projected
    /// shortcut when residuals are enabled.
    pub fn residual_block_down(
        &self,
        tape: &mut Tape,
        x: NodeId,
        level: usize,
        reg: &RegisteredParams,
        training: bool,
        dropout_seed: u64,
    ) -> Result<NodeId> {
        if !(1..=4).contains(&level) {
            return Err(Error::invalid(format!(
                "contracting levels are 1 through 4, got {level}"
            )));
        }
        let ch = self.config.base_channels;
        let in_c = if level == 1 { 1 } else { ch[level - 2] };
        let out_c = ch[level - 1];
        let k = self.config.kernel_size;
        let pad = self.config.padding();

        let c1 = tape.conv2d(
            x,
            reg.node(&format!("down{level}.conv1.w")),
            reg.node(&format!("down{level}.conv1.b")),
            ConvSpec::new(in_c, out_c, k, 1, pad)?,
        )?;
        let a1 = tape.relu(c1);
        let c2 = tape.conv2d(
            a1,
            reg.node(&format!("down{level}.conv2.w")),
            reg.node(&format!("down{level}.conv2.b")),
            ConvSpec::new(out_c, out_c, k, 1, pad)?,
        )?;
        let mut h = tape.relu(c2);
        if level >= 3 {
            h = tape.dropout(
                h,
                self.config.dropout_rate,
                mix2(dropout_seed, level as u64),
                training,
            )?;
        }
        let main = if level == 1 { h } else { tape.maxpool2(h)? };
        if !self.config.residual_enabled {
            return Ok(main);
        }
        let zb = tape.constant(Tensor::zeros(Shape::new(1, out_c, 1, 1)));
        let sc = tape.conv2d(
            x,
            reg.node(&format!("down{level}.shortcut.w")),
            zb,
            ConvSpec::new(in_c, out_c, 1, 1, 0)?,
        )?;
        let sc = if level == 1 { sc } else { tape.maxpool2(sc)? };
        tape.add(main, sc)
    }

    /// One expansive block: upsample, conv-relu, concatenate the skip
    /// partner, conv-relu, plus an upsampled 2x2-projected shortcut. The 2x2
    /// projection pads right and bottom so spatial size is preserved.
    pub fn residual_block_up(
        &self,
        tape: &mut Tape,
        x: NodeId,
        skip: NodeId,
        level: usize,
        reg: &RegisteredParams,
    ) -> Result<NodeId> {
        if !(5..=7).contains(&level) {
            return Err(Error::invalid(format!(
                "expansive levels are 5 through 7, got {level}"
            )));
        }
        let ch = self.config.base_channels;
        let d = 7 - level;
        let in_c = ch[d + 1];
        let out_c = ch[d];
        let k = self.config.kernel_size;
        let pad = self.config.padding();

        let xs = tape.shape(x);
        let ss = tape.shape(skip);
        if ss.height != xs.height * 2 || ss.width != xs.width * 2 || ss.channels != out_c {
            return Err(Error::shape(
                "residual_block_up",
                format!("skip {ss} does not partner level-{level} input {xs}"),
            ));
        }
        let up = tape.upsample2(x);
        let c1 = tape.conv2d(
            up,
            reg.node(&format!("up{level}.conv1.w")),
            reg.node(&format!("up{level}.conv1.b")),
            ConvSpec::new(in_c, out_c, k, 1, pad)?,
        )?;
        let a1 = tape.relu(c1);
        let cat = tape.concat_channels(a1, skip)?;
        let c2 = tape.conv2d(
            cat,
            reg.node(&format!("up{level}.conv2.w")),
            reg.node(&format!("up{level}.conv2.b")),
            ConvSpec::new(2 * out_c, out_c, k, 1, pad)?,
        )?;
        let h = tape.relu(c2);
        if !self.config.residual_enabled {
            return Ok(h);
        }
        let padded = tape.zero_pad2d(up, [0, 1, 0, 1]);
        let zb = tape.constant(Tensor::zeros(Shape::new(1, out_c, 1, 1)));
        let sc = tape.conv2d(
            padded,
            reg.node(&format!("up{level}.shortcut.w")),
            zb,
            ConvSpec::new(in_c, out_c, 2, 1, 0)?,
        )?;
        tape.add(h, sc)
    }

    /// Record the whole network on the tape and return the per-pixel class
    /// probabilities. `trace`, when given, collects (block, output shape)
    /// pairs in execution order.
    pub fn unary_forward(
        &self,
        tape: &mut Tape,
        roi: NodeId,
        reg: &RegisteredParams,
        training: bool,
        dropout_seed: u64,
        mut trace: Option<&mut Vec<(String, Shape)>>,
    ) -> Result<NodeId> {
        let s = tape.shape(roi);
        let n = self.config.input_size;
        if s.batch != 1 || s.channels != 1 || s.height != n || s.width != n {
            return Err(Error::shape(
                "forward",
                format!("roi must be 1x1x{n}x{n}, got {s}"),
            ));
        }
        let mut note = |tape: &Tape, label: &str, id: NodeId| {
            if let Some(t) = trace.as_mut() {
                t.push((label.to_string(), tape.shape(id)));
            }
        };
        let d1 = self.residual_block_down(tape, roi, 1, reg, training, dropout_seed)?;
        note(tape, "down1", d1);
        let d2 = self.residual_block_down(tape, d1, 2, reg, training, dropout_seed)?;
        note(tape, "down2", d2);
        let d3 = self.residual_block_down(tape, d2, 3, reg, training, dropout_seed)?;
        note(tape, "down3", d3);
        let d4 = self.residual_block_down(tape, d3, 4, reg, training, dropout_seed)?;
        note(tape, "down4", d4);
        let u5 = self.residual_block_up(tape, d4, d3, 5, reg)?;
        note(tape, "up5", u5);
        let u6 = self.residual_block_up(tape, u5, d2, 6, reg)?;
        note(tape, "up6", u6);
        let u7 = self.residual_block_up(tape, u6, d1, 7, reg)?;
        note(tape, "up7", u7);
        let logits = tape.conv2d(
            u7,
            reg.node("head.w"),
            reg.node("head.b"),
            ConvSpec::new(self.config.base_channels[0], self.config.num_classes, 1, 1, 0)?,
        )?;
        let prob = tape.softmax_channels(logits)?;
        note(tape, "head", prob);
        Ok(prob)
    }

    /// Plain-value forward pass on a scratch tape.
    pub fn forward(&self, roi: &Tensor, training: bool) -> Result<Tensor> {
        self.forward_seeded(roi, training, 0)
    }

    /// Forward pass with an explicit dropout stream (the training loop keys
    /// this per step; evaluation mode never draws from it).
    pub fn forward_seeded(&self, roi: &Tensor, training: bool, dropout_seed: u64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let reg = self.params.register_all(&mut tape);
        let r = tape.constant(roi.clone());
        let prob = self.unary_forward(&mut tape, r, &reg, training, dropout_seed, None)?;
        Ok(tape.value(prob).clone())
    }
}

/// Categorical cross-entropy of a probability map against a binary mask,
/// summed over pixels, with log arguments floored at [`crate::LOG_EPS`].
pub fn unet_loss(prob_map: &Tensor, mask: &[u8]) -> Result<f64> {
    if let Some(v) = mask.iter().find(|v| **v > 1) {
        return Err(Error::invalid(format!(
            "mask entries must be 0 or 1, got {v}"
        )));
    }
    let mut tape = Tape::new();
    let p = tape.constant(prob_map.clone());
    let l = tape.masked_nll(p, mask)?;
    tape.value(l).scalar_value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::LOG_EPS;

    fn rand_roi(n: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        let data = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(Shape::new(1, 1, n, n), data).unwrap()
    }

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            base_channels: [2, 3, 4, 5],
            input_size: 8,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn default_config_shape_chain_matches_published_sizes() {
        let net = build_network(&NetworkConfig::default(), 7).unwrap();
        let mut tape = Tape::new();
        let reg = net.params().register_all(&mut tape);
        let roi = tape.constant(rand_roi(40, 1));
        let mut trace = Vec::new();
        let prob = net
            .unary_forward(&mut tape, roi, &reg, false, 0, Some(&mut trace))
            .unwrap();

        let down: Vec<(usize, usize)> = trace
            .iter()
            .filter(|(n, _)| n.starts_with("down"))
            .map(|(_, s)| (s.channels, s.height))
            .collect();
        assert_eq!(down, [(16, 40), (32, 20), (64, 10), (128, 5)]);

        let up: Vec<(usize, usize)> = trace
            .iter()
            .filter(|(n, _)| n.starts_with("up"))
            .map(|(_, s)| (s.channels, s.height))
            .collect();
        assert_eq!(up, [(64, 10), (32, 20), (16, 40)]);

        assert_eq!(tape.shape(prob), Shape::new(1, 2, 40, 40));
        let d = tape.value(prob).data();
        for p in 0..1600 {
            let sum = d[p] + d[1600 + p];
            assert!((sum - 1.0).abs() < 1e-6, "pixel {p} sums to {sum}");
        }
    }

    #[test]
    fn same_seed_builds_bit_identical_parameters() {
        let cfg = NetworkConfig::default();
        let a = build_network(&cfg, 42).unwrap();
        let b = build_network(&cfg, 42).unwrap();
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
        let c = build_network(&cfg, 43).unwrap();
        let differs = a
            .params()
            .iter()
            .zip(c.params().iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn kernel_size_seven_is_applied_to_every_main_conv() {
        let mut cfg = tiny_config();
        cfg.kernel_size = 7;
        let net = build_network(&cfg, 3).unwrap();
        for (name, t) in net.params().iter() {
            if name.contains("conv") && name.ends_with(".w") {
                assert_eq!(t.shape().height, 7, "{name}");
                assert_eq!(t.shape().width, 7, "{name}");
            }
        }
        let out = net.forward(&rand_roi(8, 2), false).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 2, 8, 8));
    }

    #[test]
    fn evaluation_forward_is_bit_deterministic() {
        let net = build_network(&tiny_config(), 9).unwrap();
        let roi = rand_roi(8, 10);
        let a = net.forward(&roi, false).unwrap();
        let b = net.forward(&roi, false).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn training_dropout_changes_with_seed_and_eval_ignores_it() {
        let net = build_network(&tiny_config(), 9).unwrap();
        let roi = rand_roi(8, 11);
        let a = net.forward_seeded(&roi, true, 1).unwrap();
        let b = net.forward_seeded(&roi, true, 1).unwrap();
        let c = net.forward_seeded(&roi, true, 2).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        let e1 = net.forward_seeded(&roi, false, 1).unwrap();
        let e2 = net.forward_seeded(&roi, false, 2).unwrap();
        assert_eq!(e1.data(), e2.data());
    }

    #[test]
    fn zeroed_shortcuts_match_the_residual_free_variant() {
        let mut residual_cfg = NetworkConfig::default();
        residual_cfg.residual_enabled = true;
        let mut net = build_network(&residual_cfg, 11).unwrap();
        let shortcut_names: Vec<String> = net
            .params()
            .iter()
            .filter(|(n, _)| n.contains("shortcut"))
            .map(|(n, _)| n.to_string())
            .collect();
        assert_eq!(shortcut_names.len(), 7);
        for name in &shortcut_names {
            let n = net.params().get(name).unwrap().shape().numel();
            net.params_mut().set_data(name, vec![0.0; n]).unwrap();
        }

        let mut plain_cfg = residual_cfg.clone();
        plain_cfg.residual_enabled = false;
        let plain = build_network(&plain_cfg, 11).unwrap();

        let roi = rand_roi(40, 12);
        let a = net.forward(&roi, false).unwrap();
        let b = plain.forward(&roi, false).unwrap();
        let worst = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-9, "max deviation {worst}");
    }

    #[test]
    fn zero_main_path_reduces_block_to_projected_shortcut() {
        let mut net = build_network(&NetworkConfig::default(), 3).unwrap();
        for part in ["conv1.w", "conv1.b", "conv2.w", "conv2.b"] {
            let name = format!("down2.{part}");
            let n = net.params().get(&name).unwrap().shape().numel();
            net.params_mut().set_data(&name, vec![0.0; n]).unwrap();
        }
        let mut tape = Tape::new();
        let reg = net.params().register_all(&mut tape);
        let mut rng = rng_from(14);
        let x = Tensor::from_vec(
            Shape::new(1, 16, 40, 40),
            (0..16 * 1600).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let xn = tape.constant(x.clone());
        let y = net
            .residual_block_down(&mut tape, xn, 2, &reg, false, 0)
            .unwrap();

        // independent route: 1x1 projection then pooling, nothing else
        let mut oracle = Tape::new();
        let xo = oracle.constant(x);
        let w = oracle.constant(net.params().get("down2.shortcut.w").unwrap().clone());
        let zb = oracle.constant(Tensor::zeros(Shape::new(1, 32, 1, 1)));
        let proj = oracle
            .conv2d(xo, w, zb, ConvSpec::new(16, 32, 1, 1, 0).unwrap())
            .unwrap();
        let want = oracle.maxpool2(proj).unwrap();
        for (g, w) in tape.value(y).data().iter().zip(oracle.value(want).data()) {
            assert!((g - w).abs() == 0.0, "{g} vs {w}");
        }
    }

    #[test]
    fn up_block_rejects_mismatched_skip_partner() {
        let net = build_network(&tiny_config(), 5).unwrap();
        let mut tape = Tape::new();
        let reg = net.params().register_all(&mut tape);
        let x = tape.constant(Tensor::zeros(Shape::new(1, 5, 1, 1)));
        let bad_skip = tape.constant(Tensor::zeros(Shape::new(1, 4, 4, 4)));
        let err = net
            .residual_block_up(&mut tape, x, bad_skip, 5, &reg)
            .unwrap_err()
            .to_string();
        assert!(err.contains("partner"), "{err}");
    }

    #[test]
    fn both_up_block_branches_carry_gradient_matching_finite_differences() {
        let net = build_network(&tiny_config(), 5).unwrap();
        let roi = rand_roi(8, 6);
        let mask: Vec<u8> = (0..64).map(|i| ((i / 8 + i % 8) % 2) as u8).collect();

        let loss_of = |net: &CruNet| -> f64 {
            let mut tape = Tape::new();
            let reg = net.params().register_all(&mut tape);
            let r = tape.constant(roi.clone());
            let prob = net.unary_forward(&mut tape, r, &reg, false, 0, None).unwrap();
            let l = tape.masked_nll(prob, &mask).unwrap();
            tape.value(l).scalar_value().unwrap()
        };

        let mut tape = Tape::new();
        let reg = net.params().register_all(&mut tape);
        let r = tape.constant(roi.clone());
        let prob = net.unary_forward(&mut tape, r, &reg, false, 0, None).unwrap();
        let l = tape.masked_nll(prob, &mask).unwrap();
        tape.backward(l).unwrap();

        for name in ["up6.conv1.w", "up6.shortcut.w"] {
            let analytic = tape.grad_or_zeros(reg.node(name));
            let peak = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak > 1e-9, "{name}: no gradient reaches this branch");
            for coord in [0usize, 3, 7] {
                let base = net.params().get(name).unwrap().data().to_vec();
                let step = 1e-4;
                let mut plus = net.params().clone();
                let mut v = base.clone();
                v[coord] += step;
                plus.set_data(name, v).unwrap();
                let mut minus = net.params().clone();
                let mut v = base.clone();
                v[coord] -= step;
                minus.set_data(name, v).unwrap();
                let net_plus = CruNet::from_parts(net.config().clone(), plus).unwrap();
                let net_minus = CruNet::from_parts(net.config().clone(), minus).unwrap();
                let fd = (loss_of(&net_plus) - loss_of(&net_minus)) / (2.0 * step);
                let denom = fd.abs().max(analytic[coord].abs()).max(1e-6);
                let rel = (fd - analytic[coord]).abs() / denom;
                assert!(rel < 1e-4, "{name}[{coord}]: fd {fd} vs {}", analytic[coord]);
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let count = |ch: [usize; 4], k: usize, residual: bool| -> usize {
            let kk = k * k;
            let mut n = 0;
            let ins = [1, ch[0], ch[1], ch[2]];
            for i in 0..4 {
                n += ch[i] * ins[i] * kk + ch[i]; // conv1
                n += ch[i] * ch[i] * kk + ch[i]; // conv2
                if residual {
                    n += ch[i] * ins[i]; // 1x1 projection
                }
            }
            for d in (0..3).rev() {
                let (in_c, out_c) = (ch[d + 1], ch[d]);
                n += out_c * in_c * kk + out_c;
                n += out_c * 2 * out_c * kk + out_c;
                if residual {
                    n += out_c * in_c * 4; // 2x2 projection
                }
            }
            n += 2 * ch[0] + 2; // head
            n + 4 + 1 + 1 // compatibility matrix and kernel weights
        };
        for (cfg_residual, k) in [(true, 3), (false, 3), (true, 7)] {
            let mut cfg = NetworkConfig::default();
            cfg.residual_enabled = cfg_residual;
            cfg.kernel_size = k;
            let net = build_network(&cfg, 1).unwrap();
            assert_eq!(
                net.params().total_elements(),
                count([16, 32, 64, 128], k, cfg_residual),
                "residual={cfg_residual} k={k}"
            );
        }
    }

    #[test]
    fn loss_closed_forms_and_per_pixel_oracle() {
        // uniform map: every pixel contributes ln 2
        let uniform = Tensor::filled(Shape::new(1, 2, 40, 40), 0.5);
        let mask = vec![0u8; 1600];
        let l = unet_loss(&uniform, &mask).unwrap();
        assert!((l - 1600.0 * (2.0f64).ln()).abs() < 1e-9);

        // one-hot truth: exactly zero
        let mut hot = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let mask = [0u8, 1, 1, 0];
        for (p, &m) in mask.iter().enumerate() {
            hot.data_mut()[m as usize * 4 + p] = 1.0;
        }
        assert_eq!(unet_loss(&hot, &mask).unwrap(), 0.0);

        // random map against a direct per-pixel sum
        let mut rng = rng_from(20);
        let mut probs = vec![0.0; 2 * 9];
        for p in 0..9 {
            let a: f64 = rng.gen_range(0.05..0.95);
            probs[p] = a;
            probs[9 + p] = 1.0 - a;
        }
        let map = Tensor::from_vec(Shape::new(1, 2, 3, 3), probs.clone()).unwrap();
        let mask: Vec<u8> = (0..9).map(|i| (i % 2) as u8).collect();
        let want: f64 = mask
            .iter()
            .enumerate()
            .map(|(p, &m)| -probs[m as usize * 9 + p].max(LOG_EPS).ln())
            .sum();
        assert!((unet_loss(&map, &mask).unwrap() - want).abs() < 1e-9);

        // labels outside {0,1} are not a mask
        assert!(unet_loss(&uniform, &vec![2u8; 1600]).is_err());
    }

    #[test]
    fn crf_parameters_reflect_learned_values() {
        let mut net = build_network(&tiny_config(), 8).unwrap();
        assert_eq!(net.crf_params().mu, [[0.0, 1.0], [1.0, 0.0]]);
        net.params_mut()
            .set_data("crf.mu", vec![0.1, 0.9, 0.8, 0.2])
            .unwrap();
        net.params_mut().set_data("crf.omega1", vec![0.5]).unwrap();
        let p = net.crf_params();
        assert_eq!(p.mu, [[0.1, 0.9], [0.8, 0.2]]);
        assert_eq!(p.omega1, 0.5);
        assert_eq!(p.theta_alpha, 8.0);
    }

    #[test]
    fn from_parts_rejects_structural_mismatches() {
        let cfg = tiny_config();
        let net = build_network(&cfg, 2).unwrap();

        let mut missing = ParamSet::new();
        for (name, t) in net.params().iter().skip(1) {
            missing.insert(name, t.clone()).unwrap();
        }
        assert!(CruNet::from_parts(cfg.clone(), missing).is_err());

        let mut reshaped = ParamSet::new();
        for (name, t) in net.params().iter() {
            if name == "head.w" {
                reshaped
                    .insert(name, Tensor::zeros(Shape::new(3, 2, 1, 1)))
                    .unwrap();
            } else {
                reshaped.insert(name, t.clone()).unwrap();
            }
        }
        let err = CruNet::from_parts(cfg, reshaped).unwrap_err().to_string();
        assert!(err.contains("head.w"), "{err}");
    }
}
