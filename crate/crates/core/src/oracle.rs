//! Tiny-scale reference solvers: the Full SDP over all labels at once and a
//! brute-force search over SO(3).

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{optimal_assignment, AssociationLabels, LineObservation, ManhattanFrame};
use crate::refine::nearest_rotation;
use crate::sdp::{certificate, leading_pair, solve, BlockSdpProblem, Certificate, Constraint, SdpSettings};

/// Largest line count accepted by [`build_full_sdp`].
pub const FULL_SDP_MAX_LINES: usize = 4;
/// Length of `D̄ = [d₁; d₂; d₃; 1]`.
pub const SUB: usize = 10;
const HOMOG: usize = 9;
/// Just above `acos(1/√3)` in degrees.
const ALPHA_BETA_LIMIT: f64 = 55.0;

/// Layout of `ω = [D̄; vec(Q) ⊗ D̄]`.
///
/// Sub-block 0 is `D̄`; sub-block `k = 4j + i + 1` is `Q[i, j]·D̄` for VP row
/// `i ∈ 0..4` (3 = outlier) and line `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullSdpLayout {
    pub m: usize,
    pub dim: usize,
}

impl FullSdpLayout {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            dim: SUB * (1 + 4 * m),
        }
    }

    pub fn blocks(&self) -> usize {
        1 + 4 * self.m
    }

    /// Sub-block holding label row `i` of line `j`.
    pub fn block_of(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < 4 && j < self.m);
        4 * j + i + 1
    }

    pub fn index(&self, block: usize, inner: usize) -> usize {
        debug_assert!(block < self.blocks() && inner < SUB);
        block * SUB + inner
    }

    /// Inverse of [`FullSdpLayout::index`].
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        (flat / SUB, flat % SUB)
    }

    /// `ω` for a frame and labels.
    pub fn lift(&self, frame: &ManhattanFrame, labels: &AssociationLabels) -> DVector<f64> {
        assert_eq!(labels.len(), self.m);
        let mut dbar = [0.0; SUB];
        for i in 0..3 {
            let d = frame.direction(i);
            dbar[3 * i..3 * i + 3].copy_from_slice(d.as_slice());
        }
        dbar[HOMOG] = 1.0;
        let mut w = DVector::zeros(self.dim);
        let mut put = |block: usize| {
            for (t, v) in dbar.iter().enumerate() {
                w[self.index(block, t)] = *v;
            }
        };
        put(0);
        for (j, label) in labels.as_slice().iter().enumerate() {
            put(self.block_of(label.row(), j));
        }
        w
    }
}

/// Full SDP relaxation as a single PSD block of size `10(1+4m)`.
pub fn build_full_sdp(lines: &[LineObservation], c: f64) -> Result<BlockSdpProblem> {
    let m = lines.len();
    if m > FULL_SDP_MAX_LINES {
        return Err(Error::TooLarge(format!(
            "full SDP supports at most {FULL_SDP_MAX_LINES} lines, got {m}"
        )));
    }
    if m == 0 {
        return Err(Error::InsufficientLines { required: 1, got: 0 });
    }
    let layout = FullSdpLayout::new(m);
    let at = |b: usize, t: usize| layout.index(b, t);

    let mut cost = DMatrix::zeros(layout.dim, layout.dim);
    for (j, line) in lines.iter().enumerate() {
        let nn = line.n * line.n.transpose();
        for i in 0..3 {
            let o = at(layout.block_of(i, j), 3 * i);
            cost.view_mut((o, o), (3, 3)).copy_from(&nn);
        }
        let o = at(layout.block_of(3, j), HOMOG);
        cost[(o, o)] = c * c;
    }

    let mut constraints = Vec::new();
    // W₀₀ = Σᵢ sym(W₀,₍ᵢ,ⱼ₎) per line.
    for j in 0..m {
        for r in 0..SUB {
            for s in r..SUB {
                let mut con = Constraint::new(0.0);
                for i in 0..4 {
                    let b = layout.block_of(i, j);
                    con.add_sym(0, at(0, r), at(b, s), 0.5);
                    con.add_sym(0, at(0, s), at(b, r), 0.5);
                }
                con.add_sym(0, at(0, r), at(0, s), -1.0);
                constraints.push(con);
            }
        }
    }
    // W₀ₖ = Wₖₖ, split into its symmetric part and W₀ₖ = W₀ₖᵀ.
    for b in 1..layout.blocks() {
        for r in 0..SUB {
            for s in r..SUB {
                let mut con = Constraint::new(0.0);
                con.add_sym(0, at(0, r), at(b, s), 0.5);
                con.add_sym(0, at(0, s), at(b, r), 0.5);
                con.add_sym(0, at(b, r), at(b, s), -1.0);
                constraints.push(con);
                if r != s {
                    let mut anti = Constraint::new(0.0);
                    anti.add_sym(0, at(0, r), at(b, s), 1.0);
                    anti.add_sym(0, at(0, s), at(b, r), -1.0);
                    constraints.push(anti);
                }
            }
        }
    }
    // trace of the 3×3 sub-blocks of W₀₀: DDᵀ = I.
    for p in 0..3 {
        for q in p..3 {
            let mut con = Constraint::new(if p == q { 1.0 } else { 0.0 });
            for t in 0..3 {
                con.add_sym(0, at(0, 3 * p + t), at(0, 3 * q + t), 1.0);
            }
            constraints.push(con);
        }
    }
    constraints.push(Constraint::new(1.0).with_entry(0, at(0, HOMOG), at(0, HOMOG), 1.0));

    BlockSdpProblem::new_unchecked(vec![cost], constraints)
}

/// Outcome of solving the Full SDP.
#[derive(Debug, Clone)]
pub struct FullSdpOutcome {
    pub objective: f64,
    pub dual_objective: f64,
    pub certificate: Certificate,
    /// Frame, labels and cost read off the leading eigenvector of `W`, when
    /// its `D̄` part is usable.
    pub rounded: Option<(ManhattanFrame, AssociationLabels, f64)>,
}

pub fn solve_full_sdp(
    lines: &[LineObservation],
    c: f64,
    settings: &SdpSettings,
) -> Result<FullSdpOutcome> {
    let problem = build_full_sdp(lines, c)?;
    let sol = solve(&problem, settings)?;
    let cert = certificate(&problem, &sol);
    let layout = FullSdpLayout::new(lines.len());

    let (s1, u, _) = leading_pair(&sol.primal_blocks[0]);
    let mut w = u * s1.sqrt();
    let h = w[layout.index(0, HOMOG)];
    if h.abs() > 1e-12 {
        w /= h;
    }
    let d = Matrix3::from_fn(|i, t| w[layout.index(0, 3 * i + t)]);
    let rounded = nearest_rotation(&d).ok().map(|frame| {
        let (labels, cost) = optimal_assignment(&frame, lines, c);
        (frame, labels, cost)
    });

    Ok(FullSdpOutcome {
        objective: sol.primal_obj,
        dual_objective: sol.dual_obj,
        certificate: cert,
        rounded,
    })
}

/// Grid search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub coarse_step_deg: f64,
    pub refine_levels: usize,
    /// Cells carried from one level to the next.
    pub keep: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            coarse_step_deg: 2.0,
            refine_levels: 4,
            keep: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOracleResult {
    pub frame: ManhattanFrame,
    pub labels: AssociationLabels,
    pub cost: f64,
    /// z-y-x Euler angles of the winning cell, degrees.
    pub angles_deg: [f64; 3],
    pub final_step_deg: f64,
    /// Best cost after the coarse pass and after each refinement level.
    pub level_costs: Vec<f64>,
}

/// Frame whose directions are the columns of `Rz(α)·Ry(β)·Rx(γ)`.
pub fn euler_frame(angles_deg: [f64; 3]) -> ManhattanFrame {
    let [a, b, g] = angles_deg.map(f64::to_radians);
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), a)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), g);
    ManhattanFrame::new(r.matrix().transpose()).expect("Euler rotation is orthonormal")
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    cost: f64,
    angles: [f64; 3],
}

fn cell_order(a: &Cell, b: &Cell) -> std::cmp::Ordering {
    a.cost
        .total_cmp(&b.cost)
        .then(a.angles[0].total_cmp(&b.angles[0]))
        .then(a.angles[1].total_cmp(&b.angles[1]))
        .then(a.angles[2].total_cmp(&b.angles[2]))
}

fn evaluate(points: Vec<[f64; 3]>, lines: &[LineObservation], c: f64) -> Vec<Cell> {
    let mut cells: Vec<Cell> = points
        .into_par_iter()
        .map(|angles| Cell {
            cost: optimal_assignment(&euler_frame(angles), lines, c).1,
            angles,
        })
        .collect();
    cells.sort_by(cell_order);
    cells
}

/// Brute-force minimizer of the truncated cost over SO(3).
///
/// The coarse grid covers `α, β ∈ [-55°, 55°]`, `γ ∈ [0°, 90°)`. The three
/// axes' `x` components have unit sum of squares, so some signed axis has
/// `aₓ ≥ 1/√3`, which puts its `(α, β)` inside the box; a 90° turn about
/// that axis permutes the other two, so the box meets every frame up to
/// axis order and sign.
pub fn grid_oracle(
    lines: &[LineObservation],
    c: f64,
    config: &GridConfig,
) -> Result<GridOracleResult> {
    let step0 = config.coarse_step_deg;
    if !(step0 > 0.0 && step0 <= 10.0) {
        return Err(Error::InvalidConfig(format!(
            "coarse_step_deg must lie in (0, 10], got {step0}"
        )));
    }
    if config.keep == 0 {
        return Err(Error::InvalidConfig("keep must be positive".into()));
    }

    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / step0).ceil() as usize;
        (0..n).map(|k| lo + (k as f64 + 0.5) * step0).collect()
    };
    let (ab, g) = (axis(-ALPHA_BETA_LIMIT, ALPHA_BETA_LIMIT), axis(0.0, 90.0));
    let mut points = Vec::with_capacity(ab.len() * ab.len() * g.len());
    for &a in &ab {
        for &b in &ab {
            for &gg in &g {
                points.push([a, b, gg]);
            }
        }
    }
    let mut cells = evaluate(points, lines, c);
    cells.truncate(config.keep);
    let mut level_costs = vec![cells[0].cost];

    let mut step = step0;
    for _ in 0..config.refine_levels {
        step *= 0.5;
        let mut points = Vec::with_capacity(cells.len() * 27);
        for cell in &cells {
            for da in [-1.0, 0.0, 1.0] {
                for db in [-1.0, 0.0, 1.0] {
                    for dg in [-1.0, 0.0, 1.0] {
                        let [a, b, gg] = cell.angles;
                        points.push([a + da * step * 0.5, b + db * step * 0.5, gg + dg * step * 0.5]);
                    }
                }
            }
        }
        points.sort_by(|p, q| {
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        });
        points.dedup();
        cells = evaluate(points, lines, c);
        cells.truncate(config.keep);
        level_costs.push(cells[0].cost);
    }

    let best = cells[0];
    let frame = euler_frame(best.angles);
    let (labels, cost) = optimal_assignment(&frame, lines, c);
    Ok(GridOracleResult {
        frame,
        labels,
        cost,
        angles_deg: best.angles,
        final_step_deg: step,
        level_costs,
    })
}
