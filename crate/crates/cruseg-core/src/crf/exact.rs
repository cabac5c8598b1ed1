use crate::autodiff::{Shape, Tensor};
use crate::crf::kernels::PairwiseKernels;
use crate::crf::params::CrfParams;
use crate::error::{Error, Result};

/// Enumeration is 2^n labelings; past 16 pixels it stops being a test tool.
const MAX_EXACT_PIXELS: usize = 16;

struct Instance<'a> {
    n: usize,
    unary: &'a [f64],
    mu: [[f64; 2]; 2],
    // combined pair weights, dense n x n (only p < q read)
    w: Vec<f64>,
}

fn prepare<'a>(
    unary_logp: &'a Tensor,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<Instance<'a>> {
    params.validate()?;
    let s = unary_logp.shape();
    if s.batch != 1 || s.channels != 2 {
        return Err(Error::shape(
            "exact_log_partition",
            format!("unary log-probs must be 1x2xHxW, got {s}"),
        ));
    }
    let n = s.spatial();
    if kernels.n() != n {
        return Err(Error::shape(
            "exact_log_partition",
            format!("kernels side {} vs {n} pixels", kernels.n()),
        ));
    }
    if n > MAX_EXACT_PIXELS {
        return Err(Error::invalid(format!(
            "exact enumeration covers at most {MAX_EXACT_PIXELS} pixels, got {n}"
        )));
    }
    let mut w = vec![0.0; n * n];
    for p in 0..n {
        for q in (p + 1)..n {
            w[p * n + q] = params.omega1 * kernels.bilateral.at(p, q)
                + params.omega2 * kernels.spatial.at(p, q);
        }
    }
    Ok(Instance {
        n,
        unary: unary_logp.data(),
        mu: params.mu,
        w,
    })
}

/// Gibbs score of the labeling encoded bitwise (bit p = label of pixel p):
/// S(y) = sum_p u(y_p, p) - sum_{p<q} mu[y_p][y_q] * w(p, q).
fn labeling_score(inst: &Instance, bits: u32) -> f64 {
    let n = inst.n;
    let mut s = 0.0;
    for p in 0..n {
        let yp = ((bits >> p) & 1) as usize;
        s += inst.unary[yp * n + p];
    }
    for p in 0..n {
        let yp = ((bits >> p) & 1) as usize;
        for q in (p + 1)..n {
            let yq = ((bits >> q) & 1) as usize;
            s -= inst.mu[yp][yq] * inst.w[p * n + q];
        }
    }
    s
}

fn all_scores(inst: &Instance) -> Vec<f64> {
    (0..(1u32 << inst.n))
        .map(|bits| labeling_score(inst, bits))
        .collect()
}

/// True log-partition value ln sum_y exp(S(y)) by full enumeration.
/// Only feasible for tiny instances; tests use it as the ground truth that
/// mean-field quantities are measured against.
pub fn exact_log_partition(
    unary_logp: &Tensor,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<f64> {
    let inst = prepare(unary_logp, kernels, params)?;
    let scores = all_scores(&inst);
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    Ok(m + sum.ln())
}

/// True per-pixel label marginals by full enumeration, in the same
/// (1,2,H,W) layout the mean-field state uses.
pub fn exact_marginals(
    unary_logp: &Tensor,
    kernels: &PairwiseKernels,
    params: &CrfParams,
) -> Result<Tensor> {
    let inst = prepare(unary_logp, kernels, params)?;
    let n = inst.n;
    let scores = all_scores(&inst);
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut fg_mass = vec![0.0; n];
    for (bits, s) in scores.iter().enumerate() {
        let weight = (s - m).exp();
        total += weight;
        for (p, mass) in fg_mass.iter_mut().enumerate() {
            if (bits >> p) & 1 == 1 {
                *mass += weight;
            }
        }
    }
    let s = unary_logp.shape();
    let mut out = vec![0.0; 2 * n];
    for p in 0..n {
        let fg = fg_mass[p] / total;
        out[p] = 1.0 - fg;
        out[n + p] = fg;
    }
    Tensor::from_vec(Shape::new(1, 2, s.height, s.width), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::kernels::build_kernels;
    use crate::crf::mean_field::{mean_field_lower_bound, mean_field_step, MeanFieldState};
    use crate::rng::{mix2, rng_from};
    use rand::Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        let data = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(Shape::new(1, 1, h, w), data).unwrap()
    }

    fn rand_simplex(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed);
        let mut v = vec![0.0; 2 * n];
        for p in 0..n {
            let a: f64 = rng.gen_range(0.02..0.98);
            v[p] = a;
            v[n + p] = 1.0 - a;
        }
        v
    }

    fn rand_unary(h: usize, w: usize, seed: u64) -> Tensor {
        let logp: Vec<f64> = rand_simplex(h * w, seed).iter().map(|p| p.ln()).collect();
        Tensor::from_vec(Shape::new(1, 2, h, w), logp).unwrap()
    }

    fn rand_params(seed: u64) -> CrfParams {
        let mut rng = rng_from(seed);
        CrfParams {
            mu: [
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            ],
            omega1: rng.gen_range(0.0..1.5),
            omega2: rng.gen_range(0.0..1.5),
            theta_alpha: rng.gen_range(2.0..10.0),
            theta_beta: rng.gen_range(0.05..0.5),
            theta_gamma: rng.gen_range(1.0..5.0),
            iterations: 5,
        }
    }

    #[test]
    fn one_pixel_zero_unaries_give_ln_two() {
        let u = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let k = build_kernels(&rand_image(1, 1, 1), &CrfParams::default()).unwrap();
        let z = exact_log_partition(&u, &k, &CrfParams::default()).unwrap();
        assert!((z - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn decoupled_pixels_give_n_ln_two() {
        // zero compatibility: every pixel contributes ln(e^0 + e^0)
        let mut params = CrfParams::default();
        params.mu = [[0.0, 0.0], [0.0, 0.0]];
        let u = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let k = build_kernels(&rand_image(3, 3, 2), &params).unwrap();
        let z = exact_log_partition(&u, &k, &params).unwrap();
        assert!((z - 9.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_matches_independent_nested_loop_enumeration() {
        for seed in 0..20u64 {
            let params = rand_params(mix2(50, seed));
            let img = rand_image(2, 2, mix2(60, seed));
            let k = build_kernels(&img, &params).unwrap();
            let u = rand_unary(2, 2, mix2(70, seed));
            let got = exact_log_partition(&u, &k, &params).unwrap();

            // four explicit nested label loops, summing exp directly
            let ud = u.data();
            let w = |p: usize, q: usize| {
                params.omega1 * k.bilateral.at(p, q) + params.omega2 * k.spatial.at(p, q)
            };
            let mut z = 0.0f64;
            for y0 in 0..2usize {
                for y1 in 0..2usize {
                    for y2 in 0..2usize {
                        for y3 in 0..2usize {
                            let y = [y0, y1, y2, y3];
                            let mut s: f64 = (0..4).map(|p| ud[y[p] * 4 + p]).sum();
                            for p in 0..4 {
                                for q in (p + 1)..4 {
                                    s -= params.mu[y[p]][y[q]] * w(p, q);
                                }
                            }
                            z += s.exp();
                        }
                    }
                }
            }
            assert!(
                (got - z.ln()).abs() < 1e-12,
                "seed {seed}: {got} vs {}",
                z.ln()
            );
        }
    }

    #[test]
    fn independent_pixels_have_per_pixel_softmax_marginals() {
        let mut params = rand_params(5);
        params.omega1 = 0.0;
        params.omega2 = 0.0;
        let k = build_kernels(&rand_image(3, 4, 6), &params).unwrap();
        let u = rand_unary(3, 4, 7);
        let marg = exact_marginals(&u, &k, &params).unwrap();
        let ud = u.data();
        let n = 12;
        for p in 0..n {
            let (e0, e1) = (ud[p].exp(), ud[n + p].exp());
            let want_fg = e1 / (e0 + e1);
            assert!((marg.data()[n + p] - want_fg).abs() < 1e-12);
        }
    }

    #[test]
    fn factorized_bound_never_exceeds_log_partition() {
        // shapes up to 12 pixels, arbitrary compatibility signs, arbitrary Q
        let shapes = [(1usize, 2usize), (2, 2), (2, 3), (3, 3), (2, 5), (3, 4), (1, 12)];
        let mut checked = 0;
        for i in 0..105u64 {
            let (h, w) = shapes[(i % shapes.len() as u64) as usize];
            let n = h * w;
            let params = rand_params(mix2(900, i));
            let k = build_kernels(&rand_image(h, w, mix2(901, i)), &params).unwrap();
            let u = rand_unary(h, w, mix2(902, i));
            let q = MeanFieldState::new(
                Tensor::from_vec(Shape::new(1, 2, h, w), rand_simplex(n, mix2(903, i))).unwrap(),
            )
            .unwrap();
            let bound = mean_field_lower_bound(&u, &q, &k, &params).unwrap();
            let z = exact_log_partition(&u, &k, &params).unwrap();
            assert!(
                bound <= z + 1e-9,
                "instance {i} ({h}x{w}): bound {bound} exceeds logZ {z}"
            );
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn weakly_coupled_two_pixel_mean_field_matches_exact_marginals() {
        // |pairwise potential| stays under 0.1, where parallel mean field
        // converges and its marginals approach the true ones
        for i in 0..50u64 {
            let mut rng = rng_from(mix2(1000, i));
            let mut params = CrfParams::default();
            params.mu = [[0.0, 1.0], [1.0, 0.0]];
            params.omega1 = rng.gen_range(0.0..0.04);
            params.omega2 = rng.gen_range(0.0..0.04);
            let k = build_kernels(&rand_image(1, 2, mix2(1001, i)), &params).unwrap();
            let u = rand_unary(1, 2, mix2(1002, i));

            let prob: Vec<f64> = u.data().iter().map(|v| v.exp()).collect();
            let mut q = MeanFieldState::new(
                Tensor::from_vec(Shape::new(1, 2, 1, 2), prob).unwrap(),
            )
            .unwrap();
            for _ in 0..200 {
                let next = mean_field_step(&u, &q, &k, &params).unwrap();
                let delta = next
                    .marginals()
                    .data()
                    .iter()
                    .zip(q.marginals().data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                q = next;
                if delta < 1e-13 {
                    break;
                }
            }
            let exact = exact_marginals(&u, &k, &params).unwrap();
            for (g, e) in q.marginals().data().iter().zip(exact.data()) {
                assert!((g - e).abs() < 1e-3, "instance {i}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn enumeration_refuses_oversized_instances() {
        let params = CrfParams::default();
        let k = build_kernels(&rand_image(5, 4, 9), &params).unwrap();
        let u = Tensor::zeros(Shape::new(1, 2, 5, 4));
        let err = exact_log_partition(&u, &k, &params).unwrap_err().to_string();
        assert!(err.contains("16"), "{err}");
    }
}
