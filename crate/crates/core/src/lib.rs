//! Multi-patch rigid registration through a rank-constrained semidefinite
//! program over the Gram matrix `G = OᵀO` of the patch transforms.
//!
//! * [`model`] builds instances, the data matrix `C` and recovers transforms.
//! * [`proj`] holds the projections onto `Θ`, `Ω` and the PSD cone.
//! * [`solver`] runs the nonconvex (REG-ADMM) and convex (C-ADMM) iterations.
//! * [`diagnostics`] evaluates optimality certificates and thresholds.
//! * [`bench`] runs seeded parameter sweeps.
//! * [`cli`] is the command-line front end used by the `rigreg` binary.

pub mod bench;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod proj;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    build_clean_data_matrix, build_data_matrix, generate_instance, ground_truth_gram,
    oreg_objective, recover_points, round_to_transforms, DataMatrix, GramMatrix, InstanceSpec,
    PatchScheme, RegistrationInstance, TransformEstimate,
};
pub use solver::{run, GramIterate, SolverConfig, SolverTrace, Termination, Variant, Verdict};
