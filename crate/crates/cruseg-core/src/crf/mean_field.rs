use std::sync::Arc;

use crate::autodiff::{ConvSpec, NodeId, Shape, Tape, Tensor};
use crate::crf::kernels::{build_kernels, PairwiseKernels};
use crate::crf::params::CrfParams;
use crate::error::{Error, Result};

/// Per-pixel label marginals of the binary CRF: a (1,2,H,W) tensor where
/// every pixel holds a distribution over {background, foreground}.
#[derive(Clone)]
pub struct MeanFieldState {
    marginals: Tensor,
}

impl MeanFieldState {
    /// Wrap marginals, verifying each pixel is a probability distribution.
    pub fn new(marginals: Tensor) -> Result<Self> {
        let s = marginals.shape();
        if s.batch != 1 || s.channels != 2 {
            return Err(Error::shape(
                "mean_field_state",
                format!("marginals must be 1x2xHxW, got {s}"),
            ));
        }
        let n = s.spatial();
        let d = marginals.data();
        for p in 0..n {
            let (a, b) = (d[p], d[n + p]);
            if !(a.is_finite() && b.is_finite())
                || a < -1e-9
                || b < -1e-9
                || (a + b - 1.0).abs() > 1e-6
            {
                return Err(Error::invalid(format!(
                    "pixel {p} marginals ({a}, {b}) do not form a distribution"
                )));
            }
        }
        Ok(MeanFieldState { marginals })
    }

    pub fn marginals(&self) -> &Tensor {
        &self.marginals
    }

    pub fn into_marginals(self) -> Tensor {
        self.marginals
    }

    /// Foreground (channel 1) probabilities, one per pixel in row-major order.
    pub fn foreground(&self) -> &[f64] {
        let n = self.marginals.shape().spatial();
        &self.marginals.data()[n..2 * n]
    }
}

/// Tape nodes for the learnable CRF parameters used by one refinement pass.
///
/// `zero_bias` exists because the compatibility transform is a bias-free
/// 1x1 convolution; a constant zero node keeps gradients away from it.
pub struct CrfNodes {
    /// (2,2,1,1) compatibility weights, row a = output label
    pub mu: NodeId,
    /// appearance kernel weight, single element
    pub omega1: NodeId,
    /// smoothness kernel weight, single element
    pub omega2: NodeId,
    /// constant (1,2,1,1) zeros
    pub zero_bias: NodeId,
}

impl CrfNodes {
    /// Non-trainable nodes holding the given parameter values. Training code
    /// builds the struct from registered parameter nodes instead.
    pub fn from_params(tape: &mut Tape, params: &CrfParams) -> Self {
        let mu = tape.constant(
            Tensor::from_vec(Shape::new(2, 2, 1, 1), params.mu_flat().to_vec())
                .expect("mu is 2x2"),
        );
        let omega1 = tape.constant(Tensor::scalar(params.omega1));
        let omega2 = tape.constant(Tensor::scalar(params.omega2));
        CrfNodes {
            mu,
            omega1,
            omega2,
            zero_bias: Self::zero_bias_node(tape),
        }
    }

    pub fn zero_bias_node(tape: &mut Tape) -> NodeId {
        tape.constant(Tensor::zeros(Shape::new(1, 2, 1, 1)))
    }
}

/// One parallel mean-field update, recorded on the tape.
///
/// For every pixel p and label a:
///   message(b,p)  = sum over q != p of (w1*k1(p,q) + w2*k2(p,q)) * Q(b,q)
///   compat(a,p)   = sum over b of mu[a][b] * message(b,p)
///   Q'(.,p)       = softmax over a of (unary_logp(a,p) - compat(a,p))
pub fn step_on_tape(
    tape: &mut Tape,
    unary_logp: NodeId,
    q: NodeId,
    kernels: &PairwiseKernels,
    nodes: &CrfNodes,
) -> Result<NodeId> {
    let qs = tape.shape(q);
    let us = tape.shape(unary_logp);
    if qs != us {
        return Err(Error::shape(
            "mean_field_step",
            format!("unary log-probs {us} vs marginals {qs}"),
        ));
    }
    if qs.height != kernels.height || qs.width != kernels.width {
        return Err(Error::shape(
            "mean_field_step",
            format!(
                "marginals {qs} vs kernels for {}x{}",
                kernels.height, kernels.width
            ),
        ));
    }
    let m1 = tape.offdiag_matvec(q, Arc::clone(&kernels.bilateral))?;
    let m2 = tape.offdiag_matvec(q, Arc::clone(&kernels.spatial))?;
    let w1 = tape.mul_scalar(m1, nodes.omega1)?;
    let w2 = tape.mul_scalar(m2, nodes.omega2)?;
    let msg = tape.add(w1, w2)?;
    let compat = tape.conv2d(msg, nodes.mu, nodes.zero_bias, ConvSpec::new(2, 2, 1, 1, 0)?)?;
    let logits = tape.sub(unary_logp, compat)?;
    tape.softmax_channels(logits)
}

/// Unrolled refinement: Q0 is the unary distribution itself and every
/// iteration replays the same unary log-probabilities.
pub fn refine_on_tape(
    tape: &mut Tape,
    unary_prob: NodeId,
    kernels: &PairwiseKernels,
    nodes: &CrfNodes,
    iterations: usize,
) -> Result<NodeId> {
    let ulog = tape.log_clamped(unary_prob);
    let mut q = unary_prob;
    for _ in 0..iterations {
        q = step_on_tape(tape, ulog, q, kernels, nodes)?;
    }
    Ok(q)
}

/// One mean-field update on plain values (a scratch tape underneath).
pub fn mean_field_step(
    unary_logp: &Tensor,
    q: &MeanFieldState,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<MeanFieldState> {
    params.validate()?;
    let mut tape = Tape::new();
    let u = tape.constant(unary_logp.clone());
    let qn = tape.constant(q.marginals().clone());
    let nodes = CrfNodes::from_params(&mut tape, params);
    let out = step_on_tape(&mut tape, u, qn, kernels, &nodes)?;
    MeanFieldState::new(tape.value(out).clone())
}

/// Run the configured number of iterations on plain values.
pub fn crf_refine(
    unary_prob: &Tensor,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<MeanFieldState> {
    params.validate()?;
    let mut tape = Tape::new();
    let u = tape.constant(unary_prob.clone());
    let nodes = CrfNodes::from_params(&mut tape, params);
    let out = refine_on_tape(&mut tape, u, kernels, &nodes, params.iterations)?;
    MeanFieldState::new(tape.value(out).clone())
}

/// Full inference for one sample: kernels from the ROI image, then
/// refinement of the unary distribution.
pub fn crf_forward(
    unary_prob: &Tensor,
    roi: &Tensor,
    params: &CrfParams,
) -> Result<MeanFieldState> {
    let kernels = build_kernels(roi, params)?;
    crf_refine(unary_prob, &kernels, params)
}

/// Cross-entropy of the refined marginals against the label mask.
pub fn crf_loss(
    unary_prob: &Tensor,
    kernels: &PairwiseKernels,
    params: &CrfParams,
    mask: &[u8],
) -> Result<f64> {
    params.validate()?;
    let mut tape = Tape::new();
    let u = tape.constant(unary_prob.clone());
    let nodes = CrfNodes::from_params(&mut tape, params);
    let q = refine_on_tape(&mut tape, u, kernels, &nodes, params.iterations)?;
    let loss = tape.masked_nll(q, mask)?;
    tape.value(loss).scalar_value()
}

/// Composite objective (1 - lambda)*f + lambda*g.
///
/// Both endpoints are exact: lambda 0 returns f and lambda 1 returns g bit
/// for bit, because multiplying a finite number by 1 and adding 0 are exact
/// in IEEE arithmetic.
pub fn total_loss(f: f64, g: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * f + lambda * g
}

/// On-tape version of [`total_loss`] with the same endpoint exactness.
pub fn total_loss_node(tape: &mut Tape, f: NodeId, g: NodeId, lambda: f64) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(
            "lambda",
            format!("must be in [0,1], got {lambda}"),
        ));
    }
    let sf = tape.scale(f, 1.0 - lambda);
    let sg = tape.scale(g, lambda);
    tape.add(sf, sg)
}

/// Mean-field free energy E_Q[S] + H(Q) of the factorized distribution `q`
/// under the Gibbs score
///   S(y) = sum_p u(y_p, p) - sum_{p<q} mu[y_p][y_q] * w(p, q)
/// with w = omega1*k1 + omega2*k2. For any valid marginals this is a lower
/// bound on [`crate::crf::exact_log_partition`] of the same instance.
pub fn mean_field_lower_bound(
    unary_logp: &Tensor,
    q: &MeanFieldState,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<f64> {
    let s = q.marginals().shape();
    if unary_logp.shape() != s {
        return Err(Error::shape(
            "mean_field_lower_bound",
            format!("unary {} vs marginals {s}", unary_logp.shape()),
        ));
    }
    let n = s.spatial();
    if kernels.n() != n {
        return Err(Error::shape(
            "mean_field_lower_bound",
            format!("kernels side {} vs {n} pixels", kernels.n()),
        ));
    }
    let qd = q.marginals().data();
    let ud = unary_logp.data();

    // unary expectation plus entropy; x*ln(x) tends to 0 with x
    let mut bound = 0.0;
    for p in 0..n {
        for a in 0..2 {
            let qv = qd[a * n + p];
            bound += qv * ud[a * n + p];
            if qv > 0.0 {
                bound -= qv * qv.ln();
            }
        }
    }
    // pairwise expectation over unordered pairs
    for p in 0..n {
        for r in (p + 1)..n {
            let w = params.omega1 * kernels.bilateral.at(p, r)
                + params.omega2 * kernels.spatial.at(p, r);
            for a in 0..2 {
                for b in 0..2 {
                    bound -= qd[a * n + p] * params.mu[a][b] * qd[b * n + r] * w;
                }
            }
        }
    }
    Ok(bound)
}
