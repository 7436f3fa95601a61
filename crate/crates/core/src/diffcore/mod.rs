//! Minimal differentiable-computation core: parameter storage, MLPs, taped
//! reverse-mode gradients, Adam, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod params;
mod scalar;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use mlp::{Mlp, MlpSpec};
pub use params::{adam_update, Adam, AdamConfig, AdamMoments, Gradients, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Activation, Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded generator used for every stochastic step in training and sampling.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
