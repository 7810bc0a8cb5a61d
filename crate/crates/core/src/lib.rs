//! Semiflow selection for set-valued dynamical systems: a barotropic
//! compressible Navier–Stokes candidate generator, a non-unique toy ODE and
//! the Laplace-functional cascade that picks one trajectory per datum.

// `!(x > 0.0)` is how NaN gets rejected along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencils index several parallel arrays by cell.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod manufactured;
pub mod physics;
pub mod selection;
pub mod state;
pub mod systems;
pub mod trajectory;
pub mod weakform;

pub use error::{Error, Result};
pub use physics::{PressureLaw, ViscosityPair};
pub use selection::{CandidateGenerator, SelectionSchedule, SelectionTrace, Selector};
pub use state::{Boundary, Grid, InitialData, ScalarField, VectorField};
pub use trajectory::{EnergySignal, Trajectory, TrajectorySet};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/pressure.md")]
    mod pressure {}
    #[doc = include_str!("../../../book/src/trajectories.md")]
    mod trajectories {}
    #[doc = include_str!("../../../book/src/weak_solutions.md")]
    mod weak_solutions {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/semigroup.md")]
    mod semigroup {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
