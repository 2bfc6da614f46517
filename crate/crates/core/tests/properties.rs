use globustvp::eval::{align_labels, angular_accuracy, classification_metrics, consistency_error};
use globustvp::oracle::{build_full_sdp, grid_oracle, solve_full_sdp, FullSdpLayout, GridConfig};
use globustvp::refine::{refine_objective, scatter_matrices};
use globustvp::sdp::{solve, BlockSdpProblem, Constraint, SdpSettings};
use globustvp::synth::{generate_scene, SceneConfig};
use globustvp::{
    distance_matrix, line_to_normal, manhattan_refine, optimal_assignment, primal_cost, residual,
    AssociationLabels, CameraIntrinsics, Label, LineObservation, ManhattanFrame, SingleBlockConfig,
};
use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0..1.0f64)
        .prop_map(Vector3::from)
        .prop_filter("away from zero", |v| v.norm() > 0.1)
        .prop_map(|v| v.normalize())
}

fn rotation() -> impl Strategy<Value = ManhattanFrame> {
    prop::array::uniform4(-1.0..1.0f64)
        .prop_filter("away from zero", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.01)
        .prop_map(|[w, i, j, k]| {
            let r = UnitQuaternion::from_quaternion(Quaternion::new(w, i, j, k)).to_rotation_matrix();
            ManhattanFrame::new(r.into_inner()).expect("rotation")
        })
}

fn lines(max: usize) -> impl Strategy<Value = Vec<LineObservation>> {
    prop::collection::vec(unit().prop_map(|n| LineObservation::from_normal(n, None)), 1..=max)
}

fn label() -> impl Strategy<Value = Label> {
    (0usize..4).prop_map(Label::from_vp_index)
}

/// Line normals orthogonal to the frame's directions, `counts[i]` for direction `i`.
fn planted(frame: &ManhattanFrame, counts: [usize; 3], twist: f64) -> Vec<LineObservation> {
    let mut out = Vec::new();
    for (i, &k) in counts.iter().enumerate() {
        let d = frame.direction(i);
        let a = frame.direction((i + 1) % 3);
        let b = frame.direction((i + 2) % 3);
        for t in 0..k {
            let phi = twist + t as f64 * 0.7;
            let n = a * phi.cos() + b * phi.sin();
            debug_assert!(d.dot(&n).abs() < 1e-12);
            out.push(LineObservation::from_normal(n, Some(Label::from_vp_index(i))));
        }
    }
    out
}

/// Negates rows `i` and `j`, keeping a proper rotation.
fn flip_pair(frame: &ManhattanFrame, i: usize, j: usize) -> ManhattanFrame {
    let mut m = *frame.matrix();
    for r in [i, j] {
        for c in 0..3 {
            m[(r, c)] = -m[(r, c)];
        }
    }
    ManhattanFrame::new(m).unwrap()
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// The 24 proper signed row permutations applied to `frame`.
fn symmetry_group(frame: &ManhattanFrame) -> Vec<ManhattanFrame> {
    let mut out = Vec::new();
    for p in PERMS {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for r in 0..3 {
                let s = if signs >> r & 1 == 1 { -1.0 } else { 1.0 };
                for c in 0..3 {
                    m[(r, c)] = s * frame.matrix()[(p[r], c)];
                }
            }
            if let Ok(f) = ManhattanFrame::new(m) {
                out.push(f);
            }
        }
    }
    out
}

fn trace_constraint(block: usize, n: usize) -> Constraint {
    let mut c = Constraint::new(1.0);
    for k in 0..n {
        c.add(block, k, k, 1.0);
    }
    c
}

fn symmetric(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |i, j| vals[i * n + j]);
    (&a + a.transpose()) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_assignment_beats_every_labeling(frame in rotation(), lines in lines(6), c in 0.01..0.5f64) {
        let (_, best) = optimal_assignment(&frame, &lines, c);
        let m = lines.len();
        for code in 0..4usize.pow(m as u32) {
            let labels: AssociationLabels = (0..m)
                .map(|j| Label::from_vp_index(code / 4usize.pow(j as u32) % 4))
                .collect::<Vec<_>>()
                .into();
            prop_assert!(best <= primal_cost(&frame, &labels, &lines, c) + 1e-15);
        }
    }

    #[test]
    fn distance_matrix_ignores_signs(frame in rotation(), lines in lines(8), i in 0usize..3, j in 1usize..3) {
        let flipped = flip_pair(&frame, i, (i + j) % 3);
        let negated: Vec<_> = lines.iter().map(|l| LineObservation::from_normal(-l.n, None)).collect();
        let a = distance_matrix(&frame, &lines, 0.03);
        let b = distance_matrix(&flipped, &negated, 0.03);
        prop_assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn normal_ignores_endpoint_order(
        p1 in prop::array::uniform2(0.0..640.0f64),
        p2 in prop::array::uniform2(0.0..640.0f64),
        f in 300.0..1500.0f64,
    ) {
        let k = CameraIntrinsics::new(f, f, 320.0, 240.0).unwrap();
        let (p1, p2) = (Vector2::from(p1), Vector2::from(p2));
        prop_assume!((p1 - p2).norm() > 1.0);
        let a = line_to_normal(&p1, &p2, &k).unwrap();
        let b = line_to_normal(&p2, &p1, &k).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
        prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        for p in [p1, p2] {
            let ray = k.normalize_point(&p);
            prop_assert!(a.dot(&ray).abs() / ray.norm() < 1e-9);
        }
    }

    #[test]
    fn residuals_over_orthonormal_normals_sum_below_one(d in unit(), frame in rotation()) {
        let [n1, n2, n3] = frame.directions();
        prop_assert!(residual(&d, &n1) + residual(&d, &n2) <= 1.0 + 1e-12);
        let total = residual(&d, &n1) + residual(&d, &n2) + residual(&d, &n3);
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_never_increases_objective(
        frame in rotation(),
        normals in prop::collection::vec((unit(), 0usize..3), 3..20),
    ) {
        let lines: Vec<_> = normals.iter().map(|(n, _)| LineObservation::from_normal(*n, None)).collect();
        let mut sets: [Vec<usize>; 3] = Default::default();
        for (j, (_, i)) in normals.iter().enumerate() {
            sets[*i].push(j);
        }
        let scatter = scatter_matrices(&sets, &lines);
        let out = manhattan_refine(&frame, &sets, &lines);
        let before = refine_objective(frame.matrix(), &scatter);
        prop_assert!(refine_objective(out.matrix(), &scatter) <= before + 1e-15);
        let m = out.matrix();
        prop_assert!((m * m.transpose() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);

        let mut reversed = sets.clone();
        for s in &mut reversed {
            s.reverse();
        }
        let again = manhattan_refine(&frame, &reversed, &lines);
        prop_assert!((again.matrix() - m).amax() < 1e-7);
    }

    #[test]
    fn metrics_ignore_vp_permutation(
        gt in prop::collection::vec(label(), 1..30),
        noise in prop::collection::vec(label(), 1..30),
        p in 0usize..6,
    ) {
        let m = gt.len().min(noise.len());
        let gt: AssociationLabels = gt[..m].to_vec().into();
        let pred: AssociationLabels = noise[..m].to_vec().into();
        let permuted: AssociationLabels = pred
            .as_slice()
            .iter()
            .map(|l| l.vp_index().map_or(Label::Outlier, |i| Label::from_vp_index(PERMS[p][i])))
            .collect::<Vec<_>>()
            .into();
        prop_assert_eq!(classification_metrics(&pred, &gt), classification_metrics(&permuted, &gt));
        prop_assert_eq!(align_labels(&gt, &gt), gt);
    }

    #[test]
    fn angular_accuracy_is_symmetric(est in rotation(), gt in rotation(), g in 0usize..24, h in 0usize..24) {
        let thresholds = [3.0, 5.0, 10.0, 45.0];
        let base = angular_accuracy(&est, &gt, &thresholds);
        let (est_group, gt_group) = (symmetry_group(&est), symmetry_group(&gt));
        prop_assert_eq!(est_group.len(), 24);
        prop_assert_eq!(&angular_accuracy(&est_group[g], &gt_group[h], &thresholds), &base);
        prop_assert_eq!(angular_accuracy(&gt, &gt_group[h], &thresholds), vec![1.0; 4]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn consistency_ignores_direction_signs(seed in 0u64..1000, i in 0usize..3, j in 1usize..3) {
        let s = generate_scene(&SceneConfig { n_lines: 30, noise_sigma_px: 1.0, seed, ..SceneConfig::default() }).unwrap();
        let labels = s.gt_labels();
        let a = consistency_error(&s.frame_gt, &labels, &s.lines, &s.intrinsics).unwrap();
        let b = consistency_error(&flip_pair(&s.frame_gt, i, (i + j) % 3), &labels, &s.lines, &s.intrinsics).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn planted_scene_is_recoverable(seed in any::<u64>(), n in 12usize..80, ratio in 0.0..0.5f64) {
        let s = generate_scene(&SceneConfig { n_lines: n, outlier_ratio: ratio, seed, ..SceneConfig::default() }).unwrap();
        let d = s.frame_gt.matrix();
        prop_assert!((d * d.transpose() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((d.determinant() - 1.0).abs() < 1e-9);
        let (labels, _) = optimal_assignment(&s.frame_gt, &s.lines, 0.03);
        prop_assert_eq!(labels, s.gt_labels());
    }

    #[test]
    fn lifted_point_matches_primal_cost(
        frame in rotation(),
        lines in lines(4),
        codes in prop::collection::vec(label(), 4),
        c in 0.01..0.3f64,
    ) {
        let m = lines.len();
        let labels: AssociationLabels = codes[..m].to_vec().into();
        let problem = build_full_sdp(&lines, c).unwrap();
        let w = FullSdpLayout::new(m).lift(&frame, &labels);
        let ww = vec![&w * w.transpose()];
        prop_assert!((problem.apply(&ww) - problem.rhs()).amax() < 1e-10);
        let expect = primal_cost(&frame, &labels, &lines, c);
        prop_assert!((problem.objective(&ww) - expect).abs() < 1e-12);
    }

    #[test]
    fn sdp_scaling_and_duality(n in 2usize..7, vals in prop::collection::vec(-1.0..1.0f64, 36), scale in 0.1..10.0f64) {
        let c = symmetric(n, &vals);
        let solve_with = |cost: DMatrix<f64>| {
            let problem = BlockSdpProblem::new(vec![cost], vec![trace_constraint(0, n)]).unwrap();
            solve(&problem, &SdpSettings::default()).unwrap()
        };
        let base = solve_with(c.clone());
        let scaled = solve_with(&c * scale);
        prop_assert!(base.primal_obj >= base.dual_obj - 1e-6);
        prop_assert!((scaled.primal_obj - scale * base.primal_obj).abs() < 1e-6 * scale.max(1.0));
        prop_assert!((&scaled.primal_blocks[0] - &base.primal_blocks[0]).amax() < 1e-4);
        let lambda_min = c.symmetric_eigenvalues().min();
        prop_assert!((base.primal_obj - lambda_min).abs() < 1e-6);
    }

    #[test]
    fn sdp_blocks_separate(
        n1 in 2usize..6,
        n2 in 2usize..6,
        v1 in prop::collection::vec(-1.0..1.0f64, 25),
        v2 in prop::collection::vec(-1.0..1.0f64, 25),
    ) {
        let (c1, c2) = (symmetric(n1, &v1), symmetric(n2, &v2));
        let joint = BlockSdpProblem::new(
            vec![c1.clone(), c2.clone()],
            vec![trace_constraint(0, n1), trace_constraint(1, n2)],
        )
        .unwrap();
        let sol = solve(&joint, &SdpSettings::default()).unwrap();
        let alone = |c: DMatrix<f64>, n| {
            let p = BlockSdpProblem::new(vec![c], vec![trace_constraint(0, n)]).unwrap();
            solve(&p, &SdpSettings::default()).unwrap().primal_obj
        };
        prop_assert!((sol.primal_obj - alone(c1, n1) - alone(c2, n2)).abs() < 1e-7);
    }

    #[test]
    fn sdp_recovers_planted_optimum(q in rotation(), a in prop::array::uniform3(0.2..2.0f64), y in prop::array::uniform3(-1.0..1.0f64)) {
        // X* = a0 q0 q0ᵀ + a1 q1 q1ᵀ and S* = a2 q2 q2ᵀ are complementary;
        // constraints are tr(X) and two fixed off-diagonal entries.
        let dirs = q.directions();
        let x = dirs[0] * dirs[0].transpose() * a[0] + dirs[1] * dirs[1].transpose() * a[1];
        let s = dirs[2] * dirs[2].transpose() * a[2];
        let mut constraints = Vec::new();
        let mut mats = Vec::new();
        let mut tr = Constraint::new(x.trace());
        for k in 0..3 {
            tr.add(0, k, k, 1.0);
        }
        constraints.push(tr);
        mats.push(Matrix3::identity());
        for (r, c) in [(0, 1), (1, 2)] {
            let mut e = Matrix3::zeros();
            e[(r, c)] = 0.5;
            e[(c, r)] = 0.5;
            constraints.push(Constraint::new(x[(r, c)]).with_entry(0, r, c, 0.5));
            mats.push(e);
        }
        let cost: Matrix3<f64> = s + mats.iter().zip(y).map(|(m, yj)| m * yj).sum::<Matrix3<f64>>();
        let expect = (cost * x).trace();
        let cost = DMatrix::from_fn(3, 3, |i, j| cost[(i, j)]);
        let problem = BlockSdpProblem::new(vec![cost], constraints).unwrap();
        let sol = solve(&problem, &SdpSettings::default()).unwrap();
        prop_assert!((sol.primal_obj - expect).abs() < 1e-6, "{} vs {}", sol.primal_obj, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn grid_levels_are_monotone(frame in rotation(), counts in prop::array::uniform3(1usize..4), twist in 0.0..3.0f64, extra in lines(4)) {
        let mut lines = planted(&frame, counts, twist);
        lines.extend(extra);
        let out = grid_oracle(&lines, 0.03, &GridConfig::default()).unwrap();
        for w in out.level_costs.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert_eq!(out.level_costs.last().copied(), Some(out.cost));
    }

    #[test]
    fn full_sdp_lower_bounds_grid(lines in lines(3)) {
        let full = solve_full_sdp(&lines, 0.03, &SdpSettings::default()).unwrap();
        let grid = grid_oracle(&lines, 0.03, &GridConfig::default()).unwrap();
        prop_assert!(full.objective <= grid.cost + 1e-6, "{} vs {}", full.objective, grid.cost);
    }

    #[test]
    fn globustvp_sets_disjoint_and_deterministic(seed in 0u64..10_000, ratio in 0.0..0.4f64) {
        let s = generate_scene(&SceneConfig { n_lines: 40, outlier_ratio: ratio, noise_sigma_px: 0.5, seed, ..SceneConfig::default() }).unwrap();
        let config = SingleBlockConfig { seed, parallel: false, ..SingleBlockConfig::default() };
        let a = globustvp::globustvp(&s.lines, &config).unwrap();
        let b = globustvp::globustvp(&s.lines, &config).unwrap();
        prop_assert_eq!(a.frame, b.frame);
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        let mut seen = vec![false; s.lines.len()];
        for vp in &a.per_vp {
            for &j in &vp.inlier_ids {
                prop_assert!(!seen[j], "line {} harvested twice", j);
                seen[j] = true;
            }
        }
    }
}
