//! Central finite-difference verification of every backward rule.
//!
//! The harness re-records the forward graph from scratch for each perturbed
//! evaluation, so it exercises exactly the code path training uses. Checks
//! run in f64 with step 1e-4; the pass threshold is relative error < 1e-4.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::linalg::SymMatrix;
use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::{ConvSpec, Shape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{mix2, rng_from};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Maximum allowed relative error between analytic and numeric gradients.
pub const REL_ERR_TOL: f64 = 1e-4;

/// Relative error with a floor so near-zero gradient pairs compare by
/// absolute difference instead of blowing up.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(1e-6)
}

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_ERR_TOL
    }
}

/// Graph builder handed to [`fd_check`]: records a scalar loss from the
/// given differentiable inputs. Must be deterministic.
pub type FdScalarFn<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences, over up to `max_coords_per_input` coordinates of each
/// input (all of them when the input is small enough).
pub fn fd_check(
    name: &str,
    inputs: &[Tensor],
    build: FdScalarFn,
    max_coords_per_input: usize,
    seed: u64,
) -> Result<CheckResult> {
    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|id| tape.grad_or_zeros(*id)).collect();

    let eval = |variants: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = variants.iter().map(|v| t.param(v.clone())).collect();
        let loss = build(&mut t, &ids)?;
        t.value(loss).scalar_value()
    };

    let mut rng = rng_from(mix2(seed, 0x5d));
    let mut max_rel = 0.0f64;
    let mut coords = 0;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.shape().numel();
        let picks: Vec<usize> = if n <= max_coords_per_input {
            (0..n).collect()
        } else {
            (0..max_coords_per_input)
                .map(|_| rng.gen_range(0..n))
                .collect()
        };
        for j in picks {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            max_rel = max_rel.max(relative_error(fd, analytic[i][j]));
            coords += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        coords_checked: coords,
        max_rel_err: max_rel,
    })
}

/// Every primitive with a backward rule, in check order.
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "scale",
    "mul_scalar",
    "relu",
    "softmax",
    "log",
    "sum",
    "dot",
    "nll",
    "conv2d",
    "maxpool2",
    "upsample2",
    "dropout",
    "zero_pad",
    "concat",
    "offdiag_matvec",
];

fn rand_tensor(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random values bounded away from zero, so relu/maxpool kinks sit farther
/// than FD_STEP from every sample.
fn rand_tensor_offzero(shape: Shape, seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let data = (0..shape.numel())
        .map(|_| {
            let mag: f64 = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn reduction_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(mix2(seed, 0xd07));
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Run the finite-difference suite for one primitive by name.
pub fn check_primitive(name: &str, seed: u64) -> Result<CheckResult> {
    let s33 = Shape::new(1, 2, 3, 3);
    match name {
        "add" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 1)),
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 2)),
                ],
                &|t, ids| {
                    let y = t.add(ids[0], ids[1])?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "sub" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 1)),
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 2)),
                ],
                &|t, ids| {
                    let y = t.sub(ids[0], ids[1])?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "scale" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[rand_tensor(s33, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.scale(ids[0], -1.7);
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "mul_scalar" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 1)),
                    rand_tensor(Shape::new(1, 1, 1, 1), 0.2, 2.0, mix2(seed, 2)),
                ],
                &|t, ids| {
                    let y = t.mul_scalar(ids[0], ids[1])?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "relu" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[rand_tensor_offzero(s33, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.relu(ids[0]);
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "softmax" => {
            let s = Shape::new(1, 3, 4, 4);
            let w = reduction_weights(s.numel(), seed);
            fd_check(
                name,
                &[rand_tensor(s, -2.0, 2.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.softmax_channels(ids[0])?;
                    t.dot_const(y, w.clone())
                },
                96,
                seed,
            )
        }
        "log" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[rand_tensor(s33, 0.1, 2.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.log_clamped(ids[0]);
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "sum" => fd_check(
            name,
            &[rand_tensor(s33, -1.0, 1.0, mix2(seed, 1))],
            &|t, ids| Ok(t.sum_all(ids[0])),
            64,
            seed,
        ),
        "dot" => {
            let w = reduction_weights(s33.numel(), seed);
            fd_check(
                name,
                &[rand_tensor(s33, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| t.dot_const(ids[0], w.clone()),
                64,
                seed,
            )
        }
        "nll" => {
            let s = Shape::new(1, 2, 3, 3);
            let mask: Vec<u8> = (0..9).map(|i| (i % 2) as u8).collect();
            fd_check(
                name,
                &[rand_tensor(s, 0.05, 0.95, mix2(seed, 1))],
                &|t, ids| t.masked_nll(ids[0], &mask),
                64,
                seed,
            )
        }
        "conv2d" => {
            // padded 3x3 conv plus the 2x2/stride-2 projection shape
            let spec_a = ConvSpec::new(2, 3, 3, 1, 1).unwrap();
            let sx = Shape::new(1, 2, 6, 6);
            let wa = reduction_weights(3 * 6 * 6, seed);
            let a = fd_check(
                name,
                &[
                    rand_tensor(sx, -1.0, 1.0, mix2(seed, 1)),
                    rand_tensor(spec_a.weight_shape(), -0.7, 0.7, mix2(seed, 2)),
                    rand_tensor(spec_a.bias_shape(), -0.5, 0.5, mix2(seed, 3)),
                ],
                &|t, ids| {
                    let y = t.conv2d(ids[0], ids[1], ids[2], spec_a)?;
                    t.dot_const(y, wa.clone())
                },
                48,
                seed,
            )?;
            let spec_b = ConvSpec::new(3, 2, 2, 2, 0).unwrap();
            let sxb = Shape::new(1, 3, 6, 6);
            let wb = reduction_weights(2 * 3 * 3, seed);
            let b = fd_check(
                name,
                &[
                    rand_tensor(sxb, -1.0, 1.0, mix2(seed, 4)),
                    rand_tensor(spec_b.weight_shape(), -0.7, 0.7, mix2(seed, 5)),
                    rand_tensor(spec_b.bias_shape(), -0.5, 0.5, mix2(seed, 6)),
                ],
                &|t, ids| {
                    let y = t.conv2d(ids[0], ids[1], ids[2], spec_b)?;
                    t.dot_const(y, wb.clone())
                },
                48,
                seed,
            )?;
            Ok(CheckResult {
                name: name.to_string(),
                coords_checked: a.coords_checked + b.coords_checked,
                max_rel_err: a.max_rel_err.max(b.max_rel_err),
            })
        }
        "maxpool2" => {
            let s = Shape::new(1, 2, 4, 4);
            let w = reduction_weights(2 * 2 * 2, seed);
            // well-separated values keep the argmax stable under the FD step
            let mut rng = rng_from(mix2(seed, 1));
            let mut vals: Vec<f64> = (0..s.numel()).map(|i| i as f64 * 0.1).collect();
            for i in (1..vals.len()).rev() {
                let j = rng.gen_range(0..=i);
                vals.swap(i, j);
            }
            let x = Tensor::from_vec(s, vals).unwrap();
            fd_check(
                name,
                &[x],
                &|t, ids| {
                    let y = t.maxpool2(ids[0])?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "upsample2" => {
            let w = reduction_weights(2 * 6 * 6, seed);
            fd_check(
                name,
                &[rand_tensor(s33, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.upsample2(ids[0]);
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "dropout" => {
            let s = Shape::new(1, 2, 4, 4);
            let w = reduction_weights(s.numel(), seed);
            let mask_seed = mix2(seed, 0xdead);
            fd_check(
                name,
                &[rand_tensor(s, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.dropout(ids[0], 0.5, mask_seed, true)?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "zero_pad" => {
            let w = reduction_weights(2 * 4 * 4, seed);
            fd_check(
                name,
                &[rand_tensor(s33, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.zero_pad2d(ids[0], [0, 1, 0, 1]);
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "concat" => {
            let sb = Shape::new(1, 1, 3, 3);
            let w = reduction_weights(3 * 3 * 3, seed);
            fd_check(
                name,
                &[
                    rand_tensor(s33, -1.0, 1.0, mix2(seed, 1)),
                    rand_tensor(sb, -1.0, 1.0, mix2(seed, 2)),
                ],
                &|t, ids| {
                    let y = t.concat_channels(ids[0], ids[1])?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        "offdiag_matvec" => {
            let s = Shape::new(1, 2, 2, 2);
            let m = Arc::new(SymMatrix::from_fn(4, |p, q| {
                if p == q {
                    1.0
                } else {
                    let d = (p as f64 - q as f64).abs();
                    (-d / 2.5).exp()
                }
            }));
            let w = reduction_weights(s.numel(), seed);
            fd_check(
                name,
                &[rand_tensor(s, -1.0, 1.0, mix2(seed, 1))],
                &|t, ids| {
                    let y = t.offdiag_matvec(ids[0], m.clone())?;
                    t.dot_const(y, w.clone())
                },
                64,
                seed,
            )
        }
        other => Err(Error::invalid(format!("unknown primitive: {other}"))),
    }
}

/// Run every primitive's suite with seeds derived from `seed`.
pub fn check_all_primitives(seed: u64) -> Result<Vec<CheckResult>> {
    PRIMITIVES
        .iter()
        .enumerate()
        .map(|(i, name)| check_primitive(name, mix2(seed, i as u64)))
        .collect()
}
