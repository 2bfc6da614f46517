//! Rotation recovery and rotation-constrained refinement of a Manhattan frame.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{LineObservation, ManhattanFrame};

/// Closest rotation to `m` in Frobenius norm: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<ManhattanFrame> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite matrix".into()));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("Vᵀ"));
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[1]] > 1e-9) {
        return Err(Error::DegenerateInput(format!(
            "rank < 2 (second singular value {:.3e})",
            s[order[1]]
        )));
    }
    let mut u_sorted = Matrix3::zeros();
    let mut v_t_sorted = Matrix3::zeros();
    for (k, &i) in order.iter().enumerate() {
        u_sorted.set_column(k, &u.column(i));
        v_t_sorted.set_row(k, &v_t.row(i));
    }
    let det = (u_sorted * v_t_sorted).determinant();
    let sigma = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let r = u_sorted * sigma * v_t_sorted;
    // Polish to machine orthogonality; the SVD factors carry ~1e-15 error.
    let r = r * 1.5 - r * r.transpose() * r * 0.5;
    ManhattanFrame::new(r)
}

/// Per-direction scatter matrices `M_i = Σ_{j ∈ l_i} n_j n_jᵀ`.
pub fn scatter_matrices(inlier_sets: &[Vec<usize>; 3], lines: &[LineObservation]) -> [Matrix3<f64>; 3] {
    let mut out = [Matrix3::zeros(); 3];
    for (m, set) in out.iter_mut().zip(inlier_sets) {
        for &j in set {
            let n = &lines[j].n;
            *m += n * n.transpose();
        }
    }
    out
}

/// `Σ_i r_iᵀ M_i r_i` where `r_i` is row `i` of the frame.
pub fn refine_objective(r: &Matrix3<f64>, scatter: &[Matrix3<f64>; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let row = r.row(i).transpose();
            (row.transpose() * scatter[i] * row)[0]
        })
        .sum()
}

/// Gradient of [`refine_objective`] with respect to the right-multiplicative
/// increment `R ← R·exp([δ]×)` at `δ = 0`.
pub fn refine_gradient(r: &Matrix3<f64>, scatter: &[Matrix3<f64>; 3]) -> Vector3<f64> {
    // Row i moves as r_i + r_i × δ, so ∂r_i/∂δ = [r_i]×.
    (0..3)
        .map(|i| {
            let row = r.row(i).transpose();
            row.cross_matrix().transpose() * (scatter[i] * row) * 2.0
        })
        .sum()
}

fn gauss_newton_hessian(r: &Matrix3<f64>, scatter: &[Matrix3<f64>; 3]) -> Matrix3<f64> {
    (0..3)
        .map(|i| {
            let j = r.row(i).transpose().cross_matrix();
            j.transpose() * scatter[i] * j * 2.0
        })
        .sum()
}

const MAX_ITERS: usize = 50;
const GRAD_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;

/// Minimizes `Σ_i Σ_{j∈l_i} (d_iᵀ n_j)²` over rotations, starting at `frame0`.
///
/// Levenberg-damped Gauss-Newton on SO(3) with increments `R·exp([δ]×)`.
/// Only steps that decrease the objective are accepted, so the result is
/// never worse than `frame0`.
pub fn manhattan_refine(
    frame0: &ManhattanFrame,
    inlier_sets: &[Vec<usize>; 3],
    lines: &[LineObservation],
) -> ManhattanFrame {
    if inlier_sets.iter().all(|s| s.is_empty()) {
        return *frame0;
    }
    let scatter = scatter_matrices(inlier_sets, lines);
    let mut r = *frame0.matrix();
    let mut f = refine_objective(&r, &scatter);
    let mut lambda = 1e-6;

    for _ in 0..MAX_ITERS {
        let g = refine_gradient(&r, &scatter);
        if g.norm() <= GRAD_TOL {
            break;
        }
        let h = gauss_newton_hessian(&r, &scatter);
        let mut accepted = false;
        while lambda < 1e12 {
            let damped = h + Matrix3::identity() * lambda;
            let Some(delta) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            if delta.norm() <= STEP_TOL {
                break;
            }
            let candidate = r * Rotation3::new(delta).into_inner();
            let Ok(candidate) = nearest_rotation(&candidate) else {
                lambda *= 10.0;
                continue;
            };
            let fc = refine_objective(candidate.matrix(), &scatter);
            if fc < f {
                r = *candidate.matrix();
                f = fc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    ManhattanFrame::new(r).unwrap_or(*frame0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_is_fixed_point() {
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let out = nearest_rotation(&r).unwrap();
        assert_relative_eq!(*out.matrix(), r, epsilon = 1e-12);
    }

    #[test]
    fn positive_diagonal_scaling() {
        let m = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let out = nearest_rotation(&m).unwrap();
        assert_relative_eq!(*out.matrix(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn reflection_maps_to_a_rotation() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let out = nearest_rotation(&m).unwrap();
        assert_relative_eq!(out.matrix().determinant(), 1.0, epsilon = 1e-12);
        // Every rotation differing from M by a single axis flip is optimal.
        assert_relative_eq!((out.matrix() - m).norm(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_one_rejected() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let m = v * v.transpose();
        assert!(matches!(
            nearest_rotation(&m),
            Err(Error::DegenerateInput(_))
        ));
    }

    fn planted_lines(r: &Matrix3<f64>, per_vp: usize) -> (Vec<LineObservation>, [Vec<usize>; 3]) {
        let mut lines = Vec::new();
        let mut sets: [Vec<usize>; 3] = Default::default();
        for i in 0..3 {
            let d = r.row(i).transpose();
            let a = d.cross(&Vector3::new(0.3, 0.8, -0.5)).normalize();
            let b = d.cross(&a);
            for k in 0..per_vp {
                let t = 0.4 + k as f64 * 0.9;
                sets[i].push(lines.len());
                lines.push(LineObservation::from_normal(a * t.cos() + b * t.sin(), None));
            }
        }
        (lines, sets)
    }

    #[test]
    fn planted_frame_is_fixed_point() {
        let r = Rotation3::from_euler_angles(0.2, 0.4, -0.9).into_inner();
        let (lines, sets) = planted_lines(&r, 4);
        let frame = ManhattanFrame::new(r).unwrap();
        let out = manhattan_refine(&frame, &sets, &lines);
        assert_relative_eq!(*out.matrix(), r, epsilon = 1e-12);
        let scatter = scatter_matrices(&sets, &lines);
        assert!(refine_objective(out.matrix(), &scatter) < 1e-20);
    }

    #[test]
    fn recovers_from_two_degree_perturbation() {
        let r = Rotation3::from_euler_angles(-0.7, 0.1, 1.3).into_inner();
        let (lines, sets) = planted_lines(&r, 5);
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let perturbed = r * Rotation3::new(axis * 2f64.to_radians()).into_inner();
        let out = manhattan_refine(&ManhattanFrame::new(perturbed).unwrap(), &sets, &lines);
        let err = Rotation3::from_matrix_unchecked(out.matrix().transpose() * r).angle();
        assert!(err.to_degrees() < 1e-4, "error {}°", err.to_degrees());
    }

    #[test]
    fn single_set_converges_to_min_eigenvector() {
        let lines: Vec<_> = [
            Vector3::new(0.2, 0.9, 0.1),
            Vector3::new(0.1, 0.3, 0.95),
            Vector3::new(0.5, 0.7, 0.4),
            Vector3::new(-0.3, 0.6, 0.7),
        ]
        .into_iter()
        .map(|n| LineObservation::from_normal(n, None))
        .collect();
        let sets = [vec![0, 1, 2, 3], vec![], vec![]];
        let scatter = scatter_matrices(&sets, &lines);
        let eig = scatter[0].symmetric_eigen();
        let imin = eig.eigenvalues.imin();
        let vmin = eig.eigenvectors.column(imin).into_owned();

        let out = manhattan_refine(&ManhattanFrame::identity(), &sets, &lines);
        let d1 = out.direction(0);
        assert!(d1.dot(&vmin).abs() > 1.0 - 1e-9, "{d1} vs {vmin}");
        assert_relative_eq!(
            refine_objective(out.matrix(), &scatter),
            eig.eigenvalues[imin],
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_sets_return_input() {
        let f = ManhattanFrame::identity();
        assert_eq!(manhattan_refine(&f, &Default::default(), &[]), f);
    }
}
