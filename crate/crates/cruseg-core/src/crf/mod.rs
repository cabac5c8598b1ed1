//! Dense fully-connected CRF over the pixel lattice.
//!
//! The pairwise potential couples every pixel pair through two Gaussian
//! kernels: an appearance (bilateral) kernel over position and intensity,
//! and a smoothness kernel over position alone. Inference is parallel
//! mean-field, unrolled for a fixed number of iterations as differentiable
//! tape ops, so the compatibility matrix and kernel weights train jointly
//! with the network that supplies the unary potentials.
//!
//! For instances small enough to enumerate, [`exact_log_partition`] and
//! [`exact_marginals`] compute the true Gibbs quantities; the mean-field
//! free energy ([`mean_field_lower_bound`]) is provably a lower bound on the
//! exact log-partition, which tests exploit.

mod exact;
mod kernels;
mod mean_field;
mod params;

pub use exact::{exact_log_partition, exact_marginals};
pub use kernels::{build_kernels, KernelCache, PairwiseKernels};
pub use mean_field::{
    crf_forward, crf_loss, crf_refine, mean_field_lower_bound, mean_field_step, refine_on_tape,
    step_on_tape, total_loss, total_loss_node, CrfNodes, MeanFieldState,
};
pub use params::CrfParams;
