//! Reverse-mode automatic differentiation on 4-D tensors.
//!
//! A [`Tape`] is a write-once arena of nodes. Forward ops validate shapes,
//! compute values eagerly, and append a node recording the op and its input
//! ids; [`Tape::backward`] replays the arena once in reverse, accumulating
//! gradients into every node that (transitively) requires them. Construction
//! order is topological order by design, since an op can only reference ids
//! that already exist.
//!
//! The op set is exactly what the segmentation network and the CRF layer
//! need: convolution, pooling, upsampling, activations, dropout, padding,
//! concatenation, pointwise arithmetic, clamped log, masked NLL, and a
//! diagonal-excluded symmetric matrix-vector product for dense message
//! passing. 4-D only, CPU only, f64 throughout.

mod gradcheck;
mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{
    check_all_primitives, check_primitive, fd_check, relative_error, CheckResult, FdScalarFn,
    FD_STEP, PRIMITIVES, REL_ERR_TOL,
};
pub use linalg::{matmul, matmul_nt, matmul_tn, SymMatrix};
pub use tape::{NodeId, Tape};
pub use tensor::{ConvSpec, Shape, Tensor};
