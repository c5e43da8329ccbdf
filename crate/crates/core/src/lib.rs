//! Multilevel rescaling solver for one-dimensional semilinear heat and
//! complex Ginzburg-Landau equations whose solutions blow up in finite time.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod interp;
pub mod pde_core;
pub mod rescaler;
pub mod stepper;

pub use error::{Error, Result};
pub use pde_core::{EquationKind, Grid, RunConfig};
pub use rescaler::{run, BlowupOutcome, LevelStack, RunOutput};
