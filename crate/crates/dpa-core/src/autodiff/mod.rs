//! Minimal reverse-mode automatic differentiation over dense real tensors.
//!
//! A [`Tape`] records ops eagerly (forward values are computed at call time)
//! and replays them in reverse to accumulate adjoints. Tensors are dense,
//! row-major, rank 0 to 2; the only broadcasting is scalar-against-tensor.
//! Gradient reversal ([`Tape::grl`]) and [`Tape::detach`] are first-class ops
//! so adversarial losses can be written as plain compositions.

mod tape;
mod tensor;

pub use tape::{AutodiffError, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Lower clamp applied to `log` arguments; probability clamps use
/// `[EPS_LOG, 1 - EPS_LOG]`. Sigmoid outputs can saturate to exactly 0 or 1
/// in f64, which would otherwise feed `log` an infinity.
pub const EPS_LOG: f64 = 1e-7;
