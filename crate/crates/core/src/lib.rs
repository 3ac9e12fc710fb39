//! Simple Kriging with batch-sequential posterior updates.
//!
//! Assimilating `k` new observations into an `n`-observation posterior costs
//! one `k × k` factorization plus a block extension of the existing Cholesky
//! factor, instead of refactoring the full `(n + k) × (n + k)` Gram matrix.
//! See [`kriging`] for the update formulas.

pub mod bench;
pub mod counterexample;
pub mod error;
pub mod io;
pub mod kernels;
pub mod kriging;
pub mod linalg;
pub mod oracle;
pub mod verify;

pub use error::{KrigingError, Result};
pub use kernels::{Kernel, KernelFamily, Point};
pub use kriging::{ConditionalBlock, KrigingState, KrigingWeights, NaiveUpdate, Prediction, UpdateBatch};
pub use linalg::{block_extend, cholesky, CholeskyFactor};
