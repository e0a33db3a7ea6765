//! Binary-program solver used by the slice optimizer.
//!
//! [`model`] holds a sparse minimization MILP, [`lp`] solves its continuous
//! relaxation, [`bnb`] runs branch-and-bound over those relaxations and
//! [`mps`] writes the model for cross-checking with external solvers.

pub mod bnb;
pub mod lp;
pub mod model;
pub mod mps;

pub use bnb::{solve, BnbError, BnbOptions, MipSolution, MipStatus};
pub use lp::{lp_solve, LpError, LpOptions, LpResult};
pub use model::{MipModel, ModelError, Row, RowId, Sense, VarId, VarKind, Variable};
pub use mps::{write_mps, write_mps_file, MpsError};
