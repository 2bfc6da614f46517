use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::problem::BlockSdpProblem;
use super::solver::SdpSolution;

/// Numerical evidence that a relaxation is tight at the returned point.
///
/// Mirrors the three optimality conditions for a rank-1 primal point `x`
/// and multipliers `y`: primal feasibility of `x xᵀ`, dual feasibility
/// `H(y) ⪰ 0`, and stationarity `H(y) x = 0`. `rank_ratios` measures how far
/// each primal block is from rank one; a ratio near zero together with a
/// nonnegative slack spectrum indicates a unique rank-1 optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `|⟨C,X⟩ - bᵀy| / (1 + |⟨C,X⟩|)`.
    pub gap: f64,
    pub abs_gap: f64,
    /// Smallest eigenvalue of `H(y)` over all blocks.
    pub min_slack_eig: f64,
    /// `σ₂/σ₁` per primal block.
    pub rank_ratios: Vec<f64>,
    /// `‖H(y) w₁‖` per block for the unit leading singular vector `w₁`.
    pub kkt_stationarity: Vec<f64>,
    /// `max_j |Σ_b x_bᵀ A_jb x_b - b_j|` for the rank-1 roundings `x_b`.
    pub rounded_primal_residual: f64,
}

impl Certificate {
    pub fn max_rank_ratio(&self) -> f64 {
        self.rank_ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_tight(&self, gap_tol: f64, rank_tol: f64) -> bool {
        self.gap <= gap_tol && self.max_rank_ratio() <= rank_tol
    }
}

/// Leading singular pair and `σ₂/σ₁` of a symmetric matrix.
pub(crate) fn leading_pair(w: &DMatrix<f64>) -> (f64, nalgebra::DVector<f64>, f64) {
    let n = w.nrows();
    let svd = w.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let s1 = sv[order[0]];
    let s2 = if n > 1 { sv[order[1]] } else { 0.0 };
    let ratio = if s1 > 0.0 { (s2 / s1).clamp(0.0, 1.0) } else { 0.0 };
    (s1, u.column(order[0]).into_owned(), ratio)
}

pub fn certificate(problem: &BlockSdpProblem, solution: &SdpSolution) -> Certificate {
    let abs_gap = (solution.primal_obj - solution.dual_obj).abs();
    let gap = abs_gap / (1.0 + solution.primal_obj.abs());
    let min_slack_eig = solution
        .slack_blocks
        .iter()
        .map(|h| h.clone().symmetric_eigenvalues().min())
        .fold(f64::INFINITY, f64::min);

    let mut rank_ratios = Vec::new();
    let mut kkt_stationarity = Vec::new();
    let mut rounded = Vec::new();
    for (w, h) in solution.primal_blocks.iter().zip(&solution.slack_blocks) {
        let (s1, u1, ratio) = leading_pair(w);
        rank_ratios.push(ratio);
        kkt_stationarity.push((h * &u1).norm());
        let x = &u1 * s1.sqrt();
        rounded.push(&x * x.transpose());
    }
    let rounded_primal_residual = (problem.rhs() - problem.apply(&rounded)).amax();

    Certificate {
        gap,
        abs_gap,
        min_slack_eig,
        rank_ratios,
        kkt_stationarity,
        rounded_primal_residual,
    }
}
