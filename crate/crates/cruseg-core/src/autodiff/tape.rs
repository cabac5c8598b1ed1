use std::sync::Arc;

use rand::Rng;

use crate::autodiff::linalg::{matmul, matmul_nt, matmul_tn, SymMatrix};
use crate::autodiff::tensor::{ConvSpec, Shape, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::LOG_EPS;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    MulScalar(NodeId, NodeId),
    Relu(NodeId),
    SoftmaxCh(NodeId),
    LogClamped(NodeId),
    SumAll(NodeId),
    DotConst(NodeId, Arc<Vec<f64>>),
    // Negative log-likelihood of per-pixel labels under channel distributions.
    Nll {
        probs: NodeId,
        mask: Arc<Vec<u8>>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        spec: ConvSpec,
        // im2col buffer from the forward pass, reused by backward.
        col: Arc<Vec<f64>>,
    },
    MaxPool2 {
        x: NodeId,
        // flat input index of each window max
        argmax: Arc<Vec<u32>>,
    },
    Upsample2(NodeId),
    Dropout {
        x: NodeId,
        // per-element multipliers: 0 or 1/(1-rate)
        mask: Arc<Vec<f64>>,
    },
    // pads are [top, bottom, left, right]
    ZeroPad(NodeId, [usize; 4]),
    ConcatCh(NodeId, NodeId),
    // Per-channel diagonal-excluded symmetric matvec over flattened pixels.
    OffDiagMatvec {
        q: NodeId,
        m: Arc<SymMatrix>,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::Relu(..) => "relu",
            Op::SoftmaxCh(..) => "softmax",
            Op::LogClamped(..) => "log",
            Op::SumAll(..) => "sum",
            Op::DotConst(..) => "dot",
            Op::Nll { .. } => "nll",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Upsample2(..) => "upsample2",
            Op::Dropout { .. } => "dropout",
            Op::ZeroPad(..) => "zero_pad",
            Op::ConcatCh(..) => "concat",
            Op::OffDiagMatvec { .. } => "offdiag_matvec",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Write-once arena of tensor operations supporting one reverse sweep.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse iteration visits each node exactly once with its
/// output gradient fully accumulated.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(String, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf that does not need gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Record a leaf that accumulates gradients during backward.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if one flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Like `grad`, but a disconnected node yields zeros (a parameter the
    /// loss never touched has zero gradient, not an error).
    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<f64> {
        match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shape(id).numel()],
        }
    }

    /// Scale every backward contribution produced by ops of `kind` — a test
    /// hook for verifying that gradient checking catches a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: &str, scale: f64) {
        self.fault = Some((kind.to_string(), scale));
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_unary(&mut self, value: Tensor, op: Op, input: NodeId) -> NodeId {
        let rg = self.req(input);
        self.push(value, op, rg)
    }

    // ---- pointwise and reduction ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("sub", format!("{sa} vs {sb}")));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= v;
        }
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        self.push_unary(out, Op::Scale(x, c), x)
    }

    /// Multiply every element of `x` by the single value in `s`.
    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s).numel() != 1 {
            return Err(Error::shape(
                "mul_scalar",
                format!("scale operand must have 1 element, got {}", self.shape(s)),
            ));
        }
        let sv = self.value(s).data()[0];
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= sv;
        }
        let rg = self.req(x) || self.req(s);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push_unary(out, Op::Relu(x), x)
    }

    /// ln(max(x, LOG_EPS)) elementwise.
    pub fn log_clamped(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o = o.max(LOG_EPS).ln();
        }
        self.push_unary(out, Op::LogClamped(x), x)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push_unary(Tensor::scalar(s), Op::SumAll(x), x)
    }

    /// Dot product with a fixed coefficient vector, yielding a scalar.
    pub fn dot_const(&mut self, x: NodeId, coeffs: Vec<f64>) -> Result<NodeId> {
        let n = self.shape(x).numel();
        if coeffs.len() != n {
            return Err(Error::shape(
                "dot",
                format!("coefficient length {} vs {} elements", coeffs.len(), n),
            ));
        }
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(&coeffs)
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push_unary(Tensor::scalar(s), Op::DotConst(x, Arc::new(coeffs)), x))
    }

    // ---- structured ops ----

    /// Numerically stable per-pixel softmax across the channel axis.
    pub fn softmax_channels(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.channels < 2 {
            return Err(Error::shape(
                "softmax",
                format!("needs at least 2 channels, got {}", s.channels),
            ));
        }
        let mut out = self.value(x).clone();
        softmax_channels_in_place(out.data_mut(), s);
        Ok(self.push_unary(out, Op::SoftmaxCh(x), x))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let xs = self.shape(x);
        if xs.channels != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {} channels, spec.in_channels is {}",
                    xs.channels, spec.in_channels
                ),
            ));
        }
        if self.shape(w) != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weights are {}, spec wants {}",
                    self.shape(w),
                    spec.weight_shape()
                ),
            ));
        }
        if self.shape(b) != spec.bias_shape() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias is {}, spec wants {}",
                    self.shape(b),
                    spec.bias_shape()
                ),
            ));
        }
        let oh = spec.out_extent(xs.height)?;
        let ow = spec.out_extent(xs.width)?;
        let os = Shape::new(xs.batch, spec.out_channels, oh, ow);

        let r = spec.in_channels * spec.kernel_size * spec.kernel_size;
        let p = oh * ow;
        let mut col = vec![0.0; xs.batch * r * p];
        let mut out = Tensor::zeros(os);
        for batch in 0..xs.batch {
            let colb = &mut col[batch * r * p..(batch + 1) * r * p];
            im2col(self.nodes[x.0].value.data(), xs, batch, spec, oh, ow, colb);
            let ob =
                &mut out.data_mut()[batch * spec.out_channels * p..(batch + 1) * spec.out_channels * p];
            matmul(spec.out_channels, r, p, self.nodes[w.0].value.data(), colb, ob);
        }
        // bias per output channel
        let bias = self.nodes[b.0].value.data().to_vec();
        for batch in 0..xs.batch {
            for (o, bv) in bias.iter().enumerate() {
                let base = (batch * spec.out_channels + o) * p;
                for v in &mut out.data_mut()[base..base + p] {
                    *v += bv;
                }
            }
        }
        let rg = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                spec,
                col: Arc::new(col),
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first maximum in
    /// row-major window order so gradient routing is deterministic.
    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.height % 2 != 0 || s.width % 2 != 0 {
            return Err(Error::shape(
                "maxpool2",
                format!("spatial size {}x{} is not even", s.height, s.width),
            ));
        }
        let os = Shape::new(s.batch, s.channels, s.height / 2, s.width / 2);
        let mut out = Tensor::zeros(os);
        let mut argmax = vec![0u32; os.numel()];
        let xd = self.nodes[x.0].value.data();
        let mut oi = 0;
        for b in 0..s.batch {
            for c in 0..s.channels {
                for oy in 0..os.height {
                    for ox in 0..os.width {
                        let mut best_idx = s.index(b, c, 2 * oy, 2 * ox);
                        let mut best = xd[best_idx];
                        for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                            let idx = s.index(b, c, 2 * oy + dy, 2 * ox + dx);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                        out.data_mut()[oi] = best;
                        argmax[oi] = best_idx as u32;
                        oi += 1;
                    }
                }
            }
        }
        Ok(self.push_unary(
            out,
            Op::MaxPool2 {
                x,
                argmax: Arc::new(argmax),
            },
            x,
        ))
    }

    /// Nearest-neighbor 2x upsampling: each pixel becomes a 2x2 block.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        let os = Shape::new(s.batch, s.channels, s.height * 2, s.width * 2);
        let mut out = Tensor::zeros(os);
        let xd = self.nodes[x.0].value.data();
        for b in 0..s.batch {
            for c in 0..s.channels {
                for y in 0..os.height {
                    let src_row = (b * s.channels + c) * s.spatial() + (y / 2) * s.width;
                    let dst_row = (b * s.channels + c) * os.spatial() + y * os.width;
                    for x_ in 0..os.width {
                        out.data_mut()[dst_row + x_] = xd[src_row + x_ / 2];
                    }
                }
            }
        }
        self.push_unary(out, Op::Upsample2(x), x)
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1-rate); evaluation
    /// mode (and rate 0) is the identity. The mask depends only on `seed`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64, training: bool) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(
                "dropout rate",
                format!("must be in [0,1), got {rate}"),
            ));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let n = self.shape(x).numel();
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = rng_from(seed);
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push_unary(
            out,
            Op::Dropout {
                x,
                mask: Arc::new(mask),
            },
            x,
        ))
    }

    /// Zero-pad the spatial axes; `pads` are [top, bottom, left, right].
    pub fn zero_pad2d(&mut self, x: NodeId, pads: [usize; 4]) -> NodeId {
        let s = self.shape(x);
        let [t, b_, l, r] = pads;
        let os = Shape::new(s.batch, s.channels, s.height + t + b_, s.width + l + r);
        let mut out = Tensor::zeros(os);
        let xd = self.nodes[x.0].value.data();
        for b in 0..s.batch {
            for c in 0..s.channels {
                for y in 0..s.height {
                    let src = (b * s.channels + c) * s.spatial() + y * s.width;
                    let dst = (b * os.channels + c) * os.spatial() + (y + t) * os.width + l;
                    out.data_mut()[dst..dst + s.width].copy_from_slice(&xd[src..src + s.width]);
                }
            }
        }
        self.push_unary(out, Op::ZeroPad(x, pads), x)
    }

    /// Concatenate along the channel axis: `a`'s channels first.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width {
            return Err(Error::shape(
                "concat",
                format!("incompatible shapes {sa} vs {sb}"),
            ));
        }
        let os = Shape::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
        let mut out = Tensor::zeros(os);
        let (ad, bd) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let sp = sa.spatial();
        for batch in 0..sa.batch {
            let dst = batch * os.channels * sp;
            out.data_mut()[dst..dst + sa.channels * sp]
                .copy_from_slice(&ad[batch * sa.channels * sp..(batch + 1) * sa.channels * sp]);
            out.data_mut()[dst + sa.channels * sp..dst + os.channels * sp]
                .copy_from_slice(&bd[batch * sb.channels * sp..(batch + 1) * sb.channels * sp]);
        }
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, Op::ConcatCh(a, b), rg))
    }

    /// Per-channel diagonal-excluded matvec:
    /// out(c, p) = sum_{q != p} m(p, q) * in(c, q).
    /// `m` must be symmetric with side equal to the pixel count.
    pub fn offdiag_matvec(&mut self, q: NodeId, m: Arc<SymMatrix>) -> Result<NodeId> {
        let s = self.shape(q);
        if s.batch != 1 {
            return Err(Error::shape(
                "offdiag_matvec",
                format!("batch must be 1, got {}", s.batch),
            ));
        }
        if m.n() != s.spatial() {
            return Err(Error::shape(
                "offdiag_matvec",
                format!("matrix side {} vs {} pixels", m.n(), s.spatial()),
            ));
        }
        let n = m.n();
        let mut out = Tensor::zeros(s);
        for c in 0..s.channels {
            let src = &self.nodes[q.0].value.data()[c * n..(c + 1) * n];
            m.offdiag_matvec(src, &mut out.data_mut()[c * n..(c + 1) * n]);
        }
        Ok(self.push_unary(out, Op::OffDiagMatvec { q, m }, q))
    }

    /// Summed negative log-likelihood of the per-pixel labels in `mask`
    /// under the channel distributions of `probs` (clamped at LOG_EPS).
    pub fn masked_nll(&mut self, probs: NodeId, mask: &[u8]) -> Result<NodeId> {
        let s = self.shape(probs);
        if s.batch != 1 {
            return Err(Error::shape(
                "nll",
                format!("batch must be 1, got {}", s.batch),
            ));
        }
        if mask.len() != s.spatial() {
            return Err(Error::shape(
                "nll",
                format!("mask has {} pixels, probs {}", mask.len(), s.spatial()),
            ));
        }
        if let Some(bad) = mask.iter().find(|v| **v as usize >= s.channels) {
            return Err(Error::invalid(format!(
                "mask value {bad} is not a valid class label (channels: {})",
                s.channels
            )));
        }
        let pd = self.nodes[probs.0].value.data();
        let n = s.spatial();
        let mut loss = 0.0;
        for (p, &label) in mask.iter().enumerate() {
            loss -= pd[label as usize * n + p].max(LOG_EPS).ln();
        }
        Ok(self.push_unary(
            Tensor::scalar(loss),
            Op::Nll {
                probs,
                mask: Arc::new(mask.to_vec()),
            },
            probs,
        ))
    }

    // ---- reverse sweep ----

    /// Accumulate gradients of the scalar `loss` into every node that
    /// requires them. A parameter the loss does not reach keeps grad = None
    /// (read as zeros via `grad_or_zeros`).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", self.shape(loss)),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut buf: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        buf.resize_with(self.nodes.len(), || None);
        buf[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = buf[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            let mut contribs = self.backward_op(&op, i, &g);
            if let Some((kind, scale)) = &self.fault {
                if op.kind() == kind {
                    for (_, c) in &mut contribs {
                        for v in c {
                            *v *= *scale;
                        }
                    }
                }
            }
            for (input, contrib) in contribs {
                debug_assert!(self.nodes[input.0].requires_grad);
                let slot = buf[input.0]
                    .get_or_insert_with(|| vec![0.0; self.nodes[input.0].value.shape().numel()]);
                for (o, c) in slot.iter_mut().zip(&contrib) {
                    *o += c;
                }
            }
            if self.nodes[i].requires_grad {
                self.nodes[i].grad = Some(g);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` (output grad `g`) to each of its
    /// inputs that requires gradients.
    fn backward_op(&self, op: &Op, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let mut out: Vec<(NodeId, Vec<f64>)> = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.req(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.req(*b) {
                    out.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Scale(x, c) => {
                if self.req(*x) {
                    out.push((*x, g.iter().map(|v| v * c).collect()));
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s).data()[0];
                if self.req(*x) {
                    out.push((*x, g.iter().map(|v| v * sv).collect()));
                }
                if self.req(*s) {
                    let xd = self.value(*x).data();
                    let acc: f64 = xd.iter().zip(g).map(|(a, b)| a * b).sum();
                    out.push((*s, vec![acc]));
                }
            }
            Op::Relu(x) => {
                if self.req(*x) {
                    let xd = self.value(*x).data();
                    out.push((
                        *x,
                        g.iter()
                            .zip(xd)
                            .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            Op::SoftmaxCh(x) => {
                if self.req(*x) {
                    let s = self.shape(NodeId(i));
                    let p = self.value(NodeId(i)).data();
                    let mut dx = vec![0.0; p.len()];
                    let sp = s.spatial();
                    for b in 0..s.batch {
                        for pix in 0..sp {
                            let base = b * s.channels * sp + pix;
                            let mut gdotp = 0.0;
                            for c in 0..s.channels {
                                let idx = base + c * sp;
                                gdotp += g[idx] * p[idx];
                            }
                            for c in 0..s.channels {
                                let idx = base + c * sp;
                                dx[idx] = p[idx] * (g[idx] - gdotp);
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::LogClamped(x) => {
                if self.req(*x) {
                    let xd = self.value(*x).data();
                    out.push((
                        *x,
                        g.iter()
                            .zip(xd)
                            .map(|(gv, xv)| if *xv > LOG_EPS { gv / xv } else { 0.0 })
                            .collect(),
                    ));
                }
            }
            Op::SumAll(x) => {
                if self.req(*x) {
                    out.push((*x, vec![g[0]; self.shape(*x).numel()]));
                }
            }
            Op::DotConst(x, coeffs) => {
                if self.req(*x) {
                    out.push((*x, coeffs.iter().map(|c| c * g[0]).collect()));
                }
            }
            Op::Nll { probs, mask } => {
                if self.req(*probs) {
                    let s = self.shape(*probs);
                    let pd = self.value(*probs).data();
                    let n = s.spatial();
                    let mut dp = vec![0.0; pd.len()];
                    for (pix, &label) in mask.iter().enumerate() {
                        let idx = label as usize * n + pix;
                        if pd[idx] > LOG_EPS {
                            dp[idx] = -g[0] / pd[idx];
                        }
                    }
                    out.push((*probs, dp));
                }
            }
            Op::Conv2d { x, w, b, spec, col } => {
                self.backward_conv2d(*x, *w, *b, *spec, col, NodeId(i), g, &mut out);
            }
            Op::MaxPool2 { x, argmax } => {
                if self.req(*x) {
                    let mut dx = vec![0.0; self.shape(*x).numel()];
                    for (gi, &src) in g.iter().zip(argmax.iter()) {
                        dx[src as usize] += gi;
                    }
                    out.push((*x, dx));
                }
            }
            Op::Upsample2(x) => {
                if self.req(*x) {
                    let s = self.shape(*x);
                    let os = self.shape(NodeId(i));
                    let mut dx = vec![0.0; s.numel()];
                    for b in 0..s.batch {
                        for c in 0..s.channels {
                            for y in 0..os.height {
                                let src_row =
                                    (b * s.channels + c) * s.spatial() + (y / 2) * s.width;
                                let dst_row = (b * s.channels + c) * os.spatial() + y * os.width;
                                for x_ in 0..os.width {
                                    dx[src_row + x_ / 2] += g[dst_row + x_];
                                }
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::Dropout { x, mask } => {
                if self.req(*x) {
                    out.push((*x, g.iter().zip(mask.iter()).map(|(gv, m)| gv * m).collect()));
                }
            }
            Op::ZeroPad(x, pads) => {
                if self.req(*x) {
                    let s = self.shape(*x);
                    let os = self.shape(NodeId(i));
                    let [t, _, l, _] = *pads;
                    let mut dx = vec![0.0; s.numel()];
                    for b in 0..s.batch {
                        for c in 0..s.channels {
                            for y in 0..s.height {
                                let dst = (b * s.channels + c) * s.spatial() + y * s.width;
                                let src =
                                    (b * os.channels + c) * os.spatial() + (y + t) * os.width + l;
                                dx[dst..dst + s.width].copy_from_slice(&g[src..src + s.width]);
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::ConcatCh(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let sp = sa.spatial();
                let oc = sa.channels + sb.channels;
                if self.req(*a) {
                    let mut da = vec![0.0; sa.numel()];
                    for batch in 0..sa.batch {
                        let src = batch * oc * sp;
                        da[batch * sa.channels * sp..(batch + 1) * sa.channels * sp]
                            .copy_from_slice(&g[src..src + sa.channels * sp]);
                    }
                    out.push((*a, da));
                }
                if self.req(*b) {
                    let mut db = vec![0.0; sb.numel()];
                    for batch in 0..sb.batch {
                        let src = batch * oc * sp + sa.channels * sp;
                        db[batch * sb.channels * sp..(batch + 1) * sb.channels * sp]
                            .copy_from_slice(&g[src..src + sb.channels * sp]);
                    }
                    out.push((*b, db));
                }
            }
            Op::OffDiagMatvec { q, m } => {
                if self.req(*q) {
                    // the matrix is symmetric, so the adjoint is the same map
                    let s = self.shape(*q);
                    let n = m.n();
                    let mut dq = vec![0.0; s.numel()];
                    for c in 0..s.channels {
                        m.offdiag_matvec(&g[c * n..(c + 1) * n], &mut dq[c * n..(c + 1) * n]);
                    }
                    out.push((*q, dq));
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_conv2d(
        &self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        spec: ConvSpec,
        col: &[f64],
        node: NodeId,
        g: &[f64],
        out: &mut Vec<(NodeId, Vec<f64>)>,
    ) {
        let xs = self.shape(x);
        let os = self.shape(node);
        let r = spec.in_channels * spec.kernel_size * spec.kernel_size;
        let p = os.spatial();

        if self.req(b) {
            let mut db = vec![0.0; spec.out_channels];
            for batch in 0..xs.batch {
                for (o, dbo) in db.iter_mut().enumerate() {
                    let base = (batch * spec.out_channels + o) * p;
                    *dbo += g[base..base + p].iter().sum::<f64>();
                }
            }
            out.push((b, db));
        }
        if self.req(w) {
            let mut dw = vec![0.0; spec.out_channels * r];
            let mut tmp = vec![0.0; spec.out_channels * r];
            for batch in 0..xs.batch {
                let gb = &g[batch * spec.out_channels * p..(batch + 1) * spec.out_channels * p];
                let colb = &col[batch * r * p..(batch + 1) * r * p];
                // dW = dOut * col^T
                matmul_nt(spec.out_channels, p, r, gb, colb, &mut tmp);
                for (o, t) in dw.iter_mut().zip(&tmp) {
                    *o += t;
                }
            }
            out.push((w, dw));
        }
        if self.req(x) {
            let wd = self.value(w).data();
            let mut dx = vec![0.0; xs.numel()];
            let mut dcol = vec![0.0; r * p];
            for batch in 0..xs.batch {
                let gb = &g[batch * spec.out_channels * p..(batch + 1) * spec.out_channels * p];
                // dCol = W^T * dOut
                matmul_tn(r, spec.out_channels, p, wd, gb, &mut dcol);
                col2im_accumulate(&dcol, xs, batch, spec, os.height, os.width, &mut dx);
            }
            out.push((x, dx));
        }
    }
}

/// Stable softmax over channels, in place, for the given shape.
fn softmax_channels_in_place(data: &mut [f64], s: Shape) {
    let sp = s.spatial();
    for b in 0..s.batch {
        for pix in 0..sp {
            let base = b * s.channels * sp + pix;
            let mut m = f64::NEG_INFINITY;
            for c in 0..s.channels {
                m = m.max(data[base + c * sp]);
            }
            let mut sum = 0.0;
            for c in 0..s.channels {
                let idx = base + c * sp;
                data[idx] = (data[idx] - m).exp();
                sum += data[idx];
            }
            for c in 0..s.channels {
                data[base + c * sp] /= sum;
            }
        }
    }
}

/// Unfold one batch of `x` into a (in_c*k*k) x (oh*ow) column matrix.
fn im2col(x: &[f64], xs: Shape, batch: usize, spec: ConvSpec, oh: usize, ow: usize, col: &mut [f64]) {
    let k = spec.kernel_size;
    let p = oh * ow;
    let (h, w) = (xs.height as isize, xs.width as isize);
    for ci in 0..spec.in_channels {
        let xbase = (batch * xs.channels + ci) * xs.spatial();
        for ky in 0..k {
            for kx in 0..k {
                let rrow = ((ci * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    let crow = rrow + oy * ow;
                    if iy < 0 || iy >= h {
                        col[crow..crow + ow].fill(0.0);
                        continue;
                    }
                    let xrow = xbase + iy as usize * xs.width;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        col[crow + ox] = if ix < 0 || ix >= w {
                            0.0
                        } else {
                            x[xrow + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column-matrix gradient back onto the input layout, accumulating
/// overlaps. Inverse index map of `im2col`.
fn col2im_accumulate(
    dcol: &[f64],
    xs: Shape,
    batch: usize,
    spec: ConvSpec,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let k = spec.kernel_size;
    let p = oh * ow;
    let (h, w) = (xs.height as isize, xs.width as isize);
    for ci in 0..spec.in_channels {
        let xbase = (batch * xs.channels + ci) * xs.spatial();
        for ky in 0..k {
            for kx in 0..k {
                let rrow = ((ci * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let xrow = xbase + iy as usize * xs.width;
                    let crow = rrow + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < w {
                            dx[xrow + ix as usize] += dcol[crow + ox];
                        }
                    }
                }
            }
        }
    }
}
