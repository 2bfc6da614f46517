//! Dense primal-dual interior-point solver for block-diagonal SDPs with
//! linear equality constraints.

mod certificate;
mod problem;
mod solver;

pub use certificate::{certificate, Certificate};
pub(crate) use certificate::leading_pair;
pub use problem::{BlockSdpProblem, Constraint, Entry};
pub use solver::{solve, SdpSettings, SdpSolution, SdpStatus};
