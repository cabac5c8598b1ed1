use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::crf::{refine_on_tape, total_loss_node, KernelCache};
use crate::data::RoiSample;
use crate::error::{Error, Result};
use crate::fsio;
use crate::net::{CruNet, NetworkConfig, ParamSet};
use crate::rng::{mix2, mix3, rng_from};
use crate::tape_mod::Tape;
use crate::train::adam::{Adam, AdamConfig};

/// The architecture/objective variants compared in the evaluation tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Residual network, composite objective.
    Cru,
    /// Same objective without the shortcut projections.
    CruNoR,
    /// Plain U-Net: no shortcuts and lambda pinned to 0.
    Unet,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cru => "cru",
            Variant::CruNoR => "cru_no_r",
            Variant::Unet => "unet",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cru" => Ok(Variant::Cru),
            "cru_no_r" => Ok(Variant::CruNoR),
            "unet" => Ok(Variant::Unet),
            other => Err(Error::invalid(format!(
                "variant must be cru, cru_no_r or unet, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda: f64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            batch_size: 1,
            seed: 0,
            lambda: 0.67,
            variant: Variant::Cru,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam_config().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("must be in [0,1], got {}", self.lambda),
            ));
        }
        Ok(())
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Fold the variant choice into a network config: the objective's lambda
/// always comes from the training config, and the two shortcut-free
/// variants disable the residual projections (unet also drops the CRF term
/// from the objective).
pub fn network_for_variant(base: &NetworkConfig, cfg: &TrainConfig) -> NetworkConfig {
    let mut out = base.clone();
    out.lambda = cfg.lambda;
    match cfg.variant {
        Variant::Cru => {}
        Variant::CruNoR => out.residual_enabled = false,
        Variant::Unet => {
            out.residual_enabled = false;
            out.lambda = 0.0;
        }
    }
    out
}

/// Per-epoch means of the two loss terms and the composite objective over
/// the epoch's samples. `g` is NaN when lambda is 0 and the refinement term
/// is never evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub f: f64,
    pub g: f64,
    pub loss: f64,
}

pub fn write_loss_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut text = String::from("epoch,f,g,loss\n");
    for e in log {
        writeln!(text, "{},{:.9},{:.9},{:.9}", e.epoch, e.f, e.g, e.loss).expect("string write");
    }
    fsio::write_atomic(path, text.as_bytes())
}

pub struct TrainOutcome {
    pub net: CruNet,
    pub log: Vec<EpochLog>,
}

struct StepResult {
    f: f64,
    g: Option<f64>,
    loss: f64,
    grads: Vec<Vec<f64>>,
}

// one sample's losses and parameter gradients at the current weights
fn step_loss(
    net: &CruNet,
    sample: &RoiSample,
    cache: &KernelCache,
    dropout_seed: u64,
) -> Result<StepResult> {
    let lambda = net.config().lambda;
    let mut tape = Tape::new();
    let reg = net.params().register_all(&mut tape);
    let roi_tensor = sample.image.to_tensor();
    let roi = tape.constant(roi_tensor.clone());
    let prob = net.unary_forward(&mut tape, roi, &reg, true, dropout_seed, None)?;
    let f = tape.masked_nll(prob, &sample.mask)?;
    let (g, loss) = if lambda > 0.0 {
        let kernels = cache.kernels_for(&roi_tensor)?;
        let nodes = net.crf_nodes(&mut tape, &reg);
        let refined = refine_on_tape(&mut tape, prob, &kernels, &nodes, net.config().crf.iterations)?;
        let g = tape.masked_nll(refined, &sample.mask)?;
        (Some(g), total_loss_node(&mut tape, f, g, lambda)?)
    } else {
        // exact endpoint: the objective IS f, so the refinement term and
        // its backward sweep are skipped entirely
        (None, f)
    };
    let f_val = tape.value(f).scalar_value()?;
    let g_val = g.map(|id| tape.value(id).scalar_value()).transpose()?;
    let loss_val = tape.value(loss).scalar_value()?;
    tape.backward(loss)?;
    let grads = reg.iter().map(|(_, id)| tape.grad_or_zeros(id)).collect();
    Ok(StepResult { f: f_val, g: g_val, loss: loss_val, grads })
}

// mean-field messages assume nonnegative kernel weights; project after each
// update so any snapshot of the parameters validates as a CrfParams
pub(crate) fn clamp_kernel_weights(params: &mut ParamSet) -> Result<()> {
    for name in ["crf.omega1", "crf.omega2"] {
        if let Some(t) = params.get(name) {
            if t.data()[0] < 0.0 {
                params.set_data(name, vec![0.0])?;
            }
        }
    }
    Ok(())
}

/// Adam training over the composite objective. Deterministic given the
/// config: sample order reshuffles per epoch from the seed, and dropout
/// draws are keyed by (seed, epoch, sample index).
pub fn train(mut net: CruNet, data: &[RoiSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let size = net.config().input_size;
    for s in data {
        s.validate()?;
        if s.image.width() != size || s.image.height() != size {
            return Err(Error::shape(
                "train",
                format!(
                    "sample {} is {}x{}, the network wants {size}x{size}",
                    s.id,
                    s.image.width(),
                    s.image.height()
                ),
            ));
        }
    }
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || data.is_empty() {
        return Ok(TrainOutcome { net, log });
    }
    let cache = KernelCache::new(size, size, &net.config().crf)?;
    let mut adam = Adam::new(cfg.adam_config(), net.params())?;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_from(mix2(cfg.seed, epoch as u64)));

        let (mut f_sum, mut g_sum, mut loss_sum) = (0.0, 0.0, 0.0);
        let mut g_seen = false;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = net
                .params()
                .iter()
                .map(|(_, t)| vec![0.0; t.data().len()])
                .collect();
            for &si in chunk {
                let sample = &data[si];
                let r = step_loss(
                    &net,
                    sample,
                    &cache,
                    mix3(cfg.seed, epoch as u64, si as u64),
                )?;
                if !r.loss.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite loss {} at epoch {epoch}, sample {}",
                        r.loss, sample.id
                    )));
                }
                for (a, g) in acc.iter_mut().zip(&r.grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                f_sum += r.f;
                loss_sum += r.loss;
                if let Some(g) = r.g {
                    g_sum += g;
                    g_seen = true;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for a in &mut acc {
                for x in a.iter_mut() {
                    *x *= inv;
                }
            }
            adam.step(net.params_mut(), &acc)?;
            clamp_kernel_weights(net.params_mut())?;
        }

        let n = data.len() as f64;
        log.push(EpochLog {
            epoch,
            f: f_sum / n,
            g: if g_seen { g_sum / n } else { f64::NAN },
            loss: loss_sum / n,
        });
    }
    Ok(TrainOutcome { net, log })
}
