//! Candidate-set generators.

pub mod family;
pub mod funnel;
pub mod ns;

pub use family::{generate_candidates, Duplicate, Family, FamilyConfig, FamilyParams, NsSystem, ShiftCertificate};
pub use funnel::{ode_residual, toy_funnel_solutions, Branch, FunnelConfig, FunnelSystem};
pub use ns::{ns_solve, ns_solve_forced, Scheme, SolverConfig, DESK_CELLS_2D, DESK_T_END_2D};
