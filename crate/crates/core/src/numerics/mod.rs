//! Dense linear algebra, PSD matrix functions, seeded randomness and
//! tape-based reverse-mode differentiation.

pub mod linalg;
mod rng;
mod tape;
mod tensor;

pub use linalg::{pd_inv_sqrt, plane_rotation, psd_sqrt, symmetric_eigen, SymmetricEigen};
pub use rng::{derive_stream, Rng, ALGORITHM as RNG_ALGORITHM};
pub(crate) use tape::{abs_pow, weighted_abs_pow};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
