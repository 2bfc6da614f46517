//! Joint estimation of a Manhattan frame (three orthogonal vanishing
//! directions) and line-to-VP association labels from 2D line segments.
//!
//! The estimator ([`globustvp()`]) solves a sequence of two-block
//! semidefinite relaxations, one vanishing direction at a time, rounds each
//! solution to rank one, harvests inliers under a truncated residual, and
//! finishes with a rotation-constrained refinement. Every relaxation solve
//! carries a [`sdp::Certificate`] that reports the duality gap and rank
//! of the returned point.
//!
//! Supporting modules provide a synthetic scene generator ([`synth`]),
//! brute-force and full-relaxation oracles ([`oracle`]), and evaluation
//! metrics plus a RANSAC baseline ([`eval`]).

pub mod error;
pub mod eval;
pub mod geometry;
pub mod globustvp;
pub mod io;
pub mod oracle;
pub mod refine;
pub mod sdp;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{
    distance_matrix, line_to_normal, optimal_assignment, primal_cost, residual, AssociationLabels,
    CameraIntrinsics, Label, LineObservation, ManhattanFrame,
};
pub use globustvp::{globustvp, GlobustVpResult, SingleBlockConfig, VpIterationResult};
pub use refine::{manhattan_refine, nearest_rotation};
