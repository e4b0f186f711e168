//! Fusion of the two branches, joint training, evaluation and the
//! ablation sweeps.

mod eval;
mod fuse;
mod model;
mod sweep;
mod train;

pub use eval::*;
pub use fuse::*;
pub use model::*;
pub use sweep::*;
pub use train::*;
