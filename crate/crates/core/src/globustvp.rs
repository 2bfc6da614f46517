//! Iterative estimation of a Manhattan frame, one vanishing direction at a
//! time.
//!
//! Each iteration solves a two-block SDP over the currently active lines.
//! Block 1 carries `ω₁ = [d; q₁d; …; q_md]` (inlier selections) and block 2
//! carries `ω₂ = [d; (1-q₁)d; …]` (outlier selections); the relaxation of
//! `min Σ q_j (dᵀn_j)² + (1 - q_j) c²` is rounded to rank one, the direction is
//! read off the leading 3-block, and inliers are harvested from the full
//! active set with the truncated residual test. After three iterations the
//! stacked directions are projected to SO(3) and refined.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    optimal_assignment, primal_cost, residual, AssociationLabels, Label, LineObservation,
    ManhattanFrame,
};
use crate::refine::{manhattan_refine, nearest_rotation};
use crate::sdp::{self, certificate, leading_pair, BlockSdpProblem, Certificate, Constraint, SdpSettings};

/// Rank ratio above which an exact (unsampled) solve is treated as a tie
/// between several optima and retried on subsets.
const TIE_RANK_RATIO: f64 = 1e-3;
/// Rounds are evaluated in fixed-size chunks so that early exit is
/// independent of the thread count.
const ROUND_CHUNK: usize = 4;
/// The re-solved direction is kept if its truncated cost exceeds the
/// sampled one by at most this fraction of `c²`.
const RESOLVE_SLACK: f64 = 1e-6;
/// Frame costs closer than this are compared by support instead.
const FRAME_COST_TIE: f64 = 1e-12;
/// Gap and rank-ratio level at which [`certify_set`] stops shrinking.
pub const CERTIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SingleBlockConfig {
    /// Inlier threshold on `|dᵀn|`.
    pub c: f64,
    /// Lines per sampled SDP.
    pub sample_size: usize,
    /// Sampling rounds per vanishing direction.
    pub rounds: usize,
    /// Minimum support for accepting a direction.
    pub min_inliers: usize,
    /// Stop sampling once a candidate is supported by this fraction of the
    /// active lines.
    pub early_exit_fraction: f64,
    /// Weight of the penalty `λ Σ (dᵀd_prev)²` that steers later iterations
    /// towards directions orthogonal to those already found. Zero disables it.
    pub manhattan_prior: f64,
    /// Rank first- and second-iteration candidates by the truncated cost of
    /// their best Manhattan completion instead of by support alone, and
    /// leave lines closer to the completing axes for later iterations.
    pub frame_completion: bool,
    /// Re-solve each accepted direction on its own harvested inliers.
    pub inlier_resolve: bool,
    /// Run the rotation-constrained refinement after the three iterations.
    pub refine: bool,
    /// Evaluate sampling rounds on the rayon pool.
    pub parallel: bool,
    /// Tolerances for the sampled relaxations.
    pub tol: SdpSettings,
    /// Tolerances for the inlier re-solve, whose certificate is reported.
    pub resolve_tol: SdpSettings,
    pub seed: u64,
}

impl Default for SingleBlockConfig {
    fn default() -> Self {
        Self {
            c: 0.03,
            sample_size: 6,
            rounds: 20,
            min_inliers: 2,
            early_exit_fraction: 0.6,
            manhattan_prior: 1.0,
            frame_completion: true,
            inlier_resolve: true,
            refine: true,
            parallel: true,
            tol: SdpSettings {
                tol_gap: 1e-6,
                tol_feas: 1e-6,
                ..SdpSettings::default()
            },
            resolve_tol: SdpSettings {
                tol_gap: 1e-10,
                ..SdpSettings::default()
            },
            seed: 0,
        }
    }
}

impl SingleBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidConfig(format!("c must be positive, got {}", self.c)));
        }
        if self.sample_size < 2 {
            return Err(Error::InvalidConfig("sample_size must be at least 2".into()));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        if !(self.manhattan_prior >= 0.0) {
            return Err(Error::InvalidConfig("manhattan_prior must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One accepted vanishing direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpIterationResult {
    pub direction: Vector3<f64>,
    /// Indices into the line set passed to the caller.
    pub inlier_ids: Vec<usize>,
    pub certificate: Certificate,
    /// Inlier count over the full active set.
    pub consensus_score: usize,
    /// `Σ (dᵀn_j)²` over the inliers.
    pub residual_sum: f64,
    /// Sampling round that produced the direction.
    pub round: usize,
    /// Whether the winning SDP was solved on all active lines.
    pub exact: bool,
    /// Whether the direction comes from the inlier re-solve.
    pub resolved: bool,
}

/// Block index of `W₁` / `W₂` inside the problem.
const INLIER_BLOCK: usize = 0;
const OUTLIER_BLOCK: usize = 1;

/// Single-direction relaxation over `lines`, blocks of size `3(m+1)`.
pub fn build_single_block(lines: &[LineObservation], c: f64) -> Result<BlockSdpProblem> {
    build_single_block_with_prior(lines, c, &Matrix3::zeros())
}

/// As [`build_single_block`], adding `tr(P · W₀₀₁)` to the cost.
pub fn build_single_block_with_prior(
    lines: &[LineObservation],
    c: f64,
    prior: &Matrix3<f64>,
) -> Result<BlockSdpProblem> {
    let m = lines.len();
    if m < 2 {
        return Err(Error::InsufficientLines {
            required: 2,
            got: m,
        });
    }
    let n = 3 * (m + 1);
    let mut c1 = DMatrix::zeros(n, n);
    let mut c2 = DMatrix::zeros(n, n);
    let prior = (prior + prior.transpose()) * 0.5;
    c1.view_mut((0, 0), (3, 3)).copy_from(&prior);
    for (j, line) in lines.iter().enumerate() {
        let o = 3 * (j + 1);
        c1.view_mut((o, o), (3, 3))
            .copy_from(&(line.n * line.n.transpose()));
        for a in 0..3 {
            c2[(o + a, o + a)] = c * c;
        }
    }

    // sym(W_{0,j})[a,b] = (W[a, 3j+b] + W[b, 3j+a]) / 2
    let add_sym_offdiag = |con: &mut Constraint, block: usize, j: usize, a: usize, b: usize, v: f64| {
        let o = 3 * j;
        con.add_sym(block, a, o + b, 0.5 * v);
        con.add_sym(block, b, o + a, 0.5 * v);
    };

    let mut constraints = Vec::with_capacity(18 * m + 7);
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|a| (a..3).map(move |b| (a, b))).collect();

    // W₀₀₁ = sym(W₀ⱼ₁) + sym(W₀ⱼ₂)
    for j in 1..=m {
        for &(a, b) in &pairs {
            let mut con = Constraint::new(0.0);
            con.add_sym(INLIER_BLOCK, a, b, 1.0);
            add_sym_offdiag(&mut con, INLIER_BLOCK, j, a, b, -1.0);
            add_sym_offdiag(&mut con, OUTLIER_BLOCK, j, a, b, -1.0);
            constraints.push(con);
        }
    }
    // sym(W₀ⱼᵢ) = Wⱼⱼᵢ
    for block in [INLIER_BLOCK, OUTLIER_BLOCK] {
        for j in 1..=m {
            let o = 3 * j;
            for &(a, b) in &pairs {
                let mut con = Constraint::new(0.0);
                add_sym_offdiag(&mut con, block, j, a, b, 1.0);
                con.add_sym(block, o + a, o + b, -1.0);
                constraints.push(con);
            }
        }
    }
    // tr(W₀₀₁) = 1
    let mut trace = Constraint::new(1.0);
    for a in 0..3 {
        trace.add(INLIER_BLOCK, a, a, 1.0);
    }
    constraints.push(trace);
    // W₀₀₁ = W₀₀₂
    for &(a, b) in &pairs {
        let mut con = Constraint::new(0.0);
        con.add_sym(INLIER_BLOCK, a, b, 1.0);
        con.add_sym(OUTLIER_BLOCK, a, b, -1.0);
        constraints.push(con);
    }

    BlockSdpProblem::new_unchecked(vec![c1, c2], constraints)
}

/// Best rank-1 factor `w = √σ₁ u₁` of a PSD matrix and `σ₂/σ₁`.
///
/// The sign of `w` is fixed so that its largest-magnitude entry among the
/// first three is positive.
pub fn round_rank1(w: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let (s1, u1, ratio) = leading_pair(w);
    let mut v = u1 * s1.max(0.0).sqrt();
    let lead = (0..v.len().min(3))
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v[lead] < 0.0 {
        v = -v;
    }
    (v, ratio)
}

/// Unit direction from the leading 3-block of a rounded vector, and the
/// relative norm of each following 3-block.
pub fn extract_direction(w: &DVector<f64>, m: usize) -> Result<(Vector3<f64>, Vec<f64>)> {
    assert!(w.len() >= 3 * (m + 1), "vector too short for {m} lines");
    let head = Vector3::new(w[0], w[1], w[2]);
    let norm = head.norm();
    if !(norm > 1e-6) {
        return Err(Error::DegenerateRounding { norm });
    }
    let activations = (1..=m)
        .map(|j| w.rows(3 * j, 3).norm() / norm)
        .collect();
    Ok((head / norm, activations))
}

/// `{ j : (dᵀn_j)² ≤ c² }`.
pub fn collect_inliers(d: &Vector3<f64>, lines: &[LineObservation], c: f64) -> Vec<usize> {
    let c2 = c * c;
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| residual(d, &l.n) <= c2)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone)]
struct Candidate {
    direction: Vector3<f64>,
    inliers: Vec<usize>,
    residual_sum: f64,
    certificate: Certificate,
    round: usize,
    exact: bool,
    resolved: bool,
    /// Truncated cost of the best Manhattan frame containing `direction`.
    frame_cost: Option<f64>,
}

impl Candidate {
    /// Lower frame cost first when available, then more support, then
    /// smaller residual, then earlier round.
    fn better_than(&self, other: &Candidate) -> bool {
        if let (Some(a), Some(b)) = (self.frame_cost, other.frame_cost) {
            if (a - b).abs() > FRAME_COST_TIE {
                return a < b;
            }
        }
        (self.inliers.len(), other.residual_sum, other.round)
            .partial_cmp(&(other.inliers.len(), self.residual_sum, self.round))
            == Some(std::cmp::Ordering::Greater)
    }
}

/// `min_i Σ_j min(r₁, r₂, r₃, c²)` over frames `(d, d × n_i, d × (d × n_i))`.
///
/// Every line through a second orthogonal vanishing point fixes that point
/// exactly, so the minimum over lines is the best frame containing `d`.
pub fn completion_cost(d: &Vector3<f64>, lines: &[LineObservation], c: f64) -> f64 {
    best_completion(d, lines, c).0
}

/// [`completion_cost`] with the two completing directions, `None` when no
/// line completes better than `d` alone.
pub fn best_completion(
    d: &Vector3<f64>,
    lines: &[LineObservation],
    c: f64,
) -> (f64, Option<[Vector3<f64>; 2]>) {
    let c2 = c * c;
    let own: Vec<f64> = lines.iter().map(|l| residual(d, &l.n).min(c2)).collect();
    let mut best = own.iter().sum::<f64>();
    let mut axes = None;
    for l in lines {
        let d2 = d.cross(&l.n);
        let norm = d2.norm();
        if !(norm > 1e-9) {
            continue;
        }
        let d2 = d2 / norm;
        let d3 = d.cross(&d2);
        let mut cost = 0.0;
        for (k, m) in lines.iter().enumerate() {
            cost += own[k].min(residual(&d2, &m.n)).min(residual(&d3, &m.n));
            if cost >= best {
                break;
            }
        }
        if cost < best {
            best = cost;
            axes = Some([d2, d3]);
        }
    }
    (best, axes)
}

/// Directions accepted in earlier iterations.
///
/// With a positive `manhattan_prior` they add `λ Σ d dᵀ` to the relaxation
/// cost and every candidate is projected onto their orthogonal complement
/// before it is scored.
#[derive(Debug, Clone, Default)]
pub struct ManhattanPrior {
    penalty: Matrix3<f64>,
    basis: Vec<Vector3<f64>>,
    /// Rank candidates by [`completion_cost`].
    complete_frame: bool,
}

impl ManhattanPrior {
    pub fn new(previous: &[Vector3<f64>], weight: f64) -> Self {
        if weight == 0.0 {
            return Self::default();
        }
        let penalty = previous.iter().map(|d| d * d.transpose() * weight).sum();
        let mut basis: Vec<Vector3<f64>> = Vec::with_capacity(previous.len());
        for d in previous {
            let mut v = *d;
            for b in &basis {
                v -= b * b.dot(&v);
            }
            if v.norm() > 1e-9 {
                basis.push(v.normalize());
            }
        }
        Self {
            penalty,
            basis,
            complete_frame: false,
        }
    }

    /// Enables frame-completion ranking; meaningful while at most one
    /// direction has been accepted.
    pub fn with_frame_completion(mut self, on: bool) -> Self {
        self.complete_frame = on;
        self
    }

    /// Same projection, no cost term.
    pub fn projection_only(&self) -> Self {
        Self {
            penalty: Matrix3::zeros(),
            basis: self.basis.clone(),
            complete_frame: self.complete_frame,
        }
    }

    pub fn penalty(&self) -> &Matrix3<f64> {
        &self.penalty
    }

    /// Truncated cost of the best frame containing `d` and the accepted
    /// direction, if any; `None` once the frame is fixed.
    fn frame_cost(&self, d: &Vector3<f64>, lines: &[LineObservation], c: f64) -> Option<f64> {
        if !self.complete_frame {
            return None;
        }
        match self.basis.as_slice() {
            [] => Some(completion_cost(d, lines, c)),
            [d1] => {
                let d3 = d1.cross(d);
                let c2 = c * c;
                Some(
                    lines
                        .iter()
                        .map(|l| {
                            residual(d1, &l.n)
                                .min(residual(d, &l.n))
                                .min(residual(&d3, &l.n))
                                .min(c2)
                        })
                        .sum(),
                )
            }
            _ => None,
        }
    }

    /// Remaining axes of the frame that ranked `d`.
    fn completing_axes(&self, d: &Vector3<f64>, lines: &[LineObservation], c: f64) -> Vec<Vector3<f64>> {
        if !self.complete_frame {
            return Vec::new();
        }
        match self.basis.as_slice() {
            [] => best_completion(d, lines, c).1.map(Vec::from).unwrap_or_default(),
            [d1] => vec![*d1, d1.cross(d)],
            _ => Vec::new(),
        }
    }

    /// Unit direction orthogonal to the basis, or `None` if `d` lies in its span.
    pub fn project(&self, d: &Vector3<f64>) -> Option<Vector3<f64>> {
        let mut v = *d;
        for b in &self.basis {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        (norm > 1e-6).then(|| v / norm)
    }
}

fn scored(
    direction: Vector3<f64>,
    active: &[LineObservation],
    prior: &ManhattanPrior,
    c: f64,
    certificate: Certificate,
    round: usize,
    exact: bool,
) -> Candidate {
    let inliers = collect_inliers(&direction, active, c);
    let residual_sum = inliers.iter().map(|&j| residual(&direction, &active[j].n)).sum();
    let frame_cost = prior.frame_cost(&direction, active, c);
    Candidate {
        direction,
        inliers,
        residual_sum,
        certificate,
        round,
        exact,
        resolved: false,
        frame_cost,
    }
}

fn solve_subset(
    active: &[LineObservation],
    subset: &[usize],
    prior: &ManhattanPrior,
    c: f64,
    tol: &SdpSettings,
    round: usize,
    exact: bool,
) -> Option<Candidate> {
    let lines: Vec<LineObservation> = subset.iter().map(|&j| active[j].clone()).collect();
    let problem = build_single_block_with_prior(&lines, c, prior.penalty()).ok()?;
    let solution = sdp::solve(&problem, tol).ok()?;
    let cert = certificate(&problem, &solution);
    let (w, _) = round_rank1(&solution.primal_blocks[INLIER_BLOCK]);
    let (direction, _) = extract_direction(&w, lines.len()).ok()?;
    let direction = prior.project(&direction)?;
    Some(scored(direction, active, prior, c, cert, round, exact))
}

/// `Σ min((dᵀn_j)², c²)` over all lines.
fn truncated_cost(d: &Vector3<f64>, lines: &[LineObservation], c: f64) -> f64 {
    lines.iter().map(|l| residual(d, &l.n).min(c * c)).sum()
}

/// Up to `size` of `ids`, evenly spread over their order of residual to `d`.
fn spread_subset(lines: &[LineObservation], ids: &[usize], d: &Vector3<f64>, size: usize) -> Vec<usize> {
    let mut ranked = ids.to_vec();
    ranked.sort_by(|&a, &b| {
        residual(d, &lines[a].n)
            .total_cmp(&residual(d, &lines[b].n))
            .then(a.cmp(&b))
    });
    let k = ranked.len();
    let take = k.min(size);
    let mut subset: Vec<usize> = (0..take).map(|t| ranked[t * k / take]).collect();
    subset.sort_unstable();
    subset
}

/// Certificate of the relaxation over an evenly spread subset of `ids`.
///
/// Subsets shrink by one line until a solve is tight; otherwise the attempt
/// with the smallest `max(gap, rank ratio)` is returned.
pub fn certify_set(
    lines: &[LineObservation],
    ids: &[usize],
    d: &Vector3<f64>,
    config: &SingleBlockConfig,
) -> Option<Certificate> {
    if ids.len() < 2 {
        return None;
    }
    let score = |c: &Certificate| c.gap.max(c.max_rank_ratio());
    let mut best: Option<Certificate> = None;
    let largest = ids.len().min(config.sample_size);
    for size in (2..=largest).rev() {
        let subset = spread_subset(lines, ids, d, size);
        let chosen: Vec<LineObservation> = subset.iter().map(|&j| lines[j].clone()).collect();
        let Ok(problem) = build_single_block(&chosen, config.c) else {
            continue;
        };
        let Ok(solution) = sdp::solve(&problem, &config.resolve_tol) else {
            continue;
        };
        let cert = certificate(&problem, &solution);
        let tight = cert.is_tight(CERTIFY_TOL, CERTIFY_TOL);
        if best.as_ref().is_none_or(|b| score(&cert) < score(b)) {
            best = Some(cert);
        }
        if tight {
            break;
        }
    }
    best
}

/// Solves the relaxation again on up to `sample_size` of the candidate's
/// inliers. Without lines from other directions in the subset the
/// relaxation is tight and the rounded direction is the least-squares fit
/// of those inliers. Lines that sit within `c` of a second direction are
/// kept out by drawing the subset from the half of the inliers closest to
/// their least-squares direction, spread evenly over that half. The result
/// replaces `cand` unless its truncated cost over the active lines is
/// worse by more than `RESOLVE_SLACK·c²`.
fn resolve_on_inliers(
    active: &[LineObservation],
    cand: Candidate,
    prior: &ManhattanPrior,
    config: &SingleBlockConfig,
) -> Candidate {
    let k = cand.inliers.len();
    if k < 2 {
        return cand;
    }
    let scatter: Matrix3<f64> = cand
        .inliers
        .iter()
        .map(|&j| active[j].n * active[j].n.transpose())
        .sum();
    let eig = scatter.symmetric_eigen();
    let d_ls = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    let mut ranked = cand.inliers.clone();
    ranked.sort_by(|&a, &b| {
        residual(&d_ls, &active[a].n)
            .total_cmp(&residual(&d_ls, &active[b].n))
            .then(a.cmp(&b))
    });
    let take = k.min(config.sample_size);
    ranked.truncate(take.max(k.div_ceil(2)));
    ranked.sort_unstable();
    let kept = ranked.len();
    let subset: Vec<usize> = (0..take).map(|t| ranked[t * kept / take]).collect();
    let Some(mut refit) = solve_subset(
        active,
        &subset,
        &prior.projection_only(),
        config.c,
        &config.resolve_tol,
        cand.round,
        cand.exact,
    ) else {
        return cand;
    };
    let before = truncated_cost(&cand.direction, active, config.c);
    let after = truncated_cost(&refit.direction, active, config.c);
    if after <= before + RESOLVE_SLACK * config.c * config.c {
        refit.resolved = true;
        refit
    } else {
        cand
    }
}

/// Directions through every pair of sampled lines, scored like the relaxed
/// candidate of the same round. The relaxation mixes directions when the
/// sample holds lines of several vanishing points, while a pair from the
/// same point meets it exactly.
fn pair_candidates(
    active: &[LineObservation],
    subset: &[usize],
    prior: &ManhattanPrior,
    c: f64,
    sdp: &Candidate,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            let d = active[i].n.cross(&active[j].n);
            if !(d.norm() > 1e-9) {
                continue;
            }
            let Some(direction) = prior.project(&d) else {
                continue;
            };
            out.push(scored(
                direction,
                active,
                prior,
                c,
                sdp.certificate.clone(),
                sdp.round,
                false,
            ));
        }
    }
    out
}

fn best_of(cands: impl IntoIterator<Item = Candidate>) -> Option<Candidate> {
    cands.into_iter().fold(None, |best, c| match best {
        Some(b) if !c.better_than(&b) => Some(b),
        _ => Some(c),
    })
}

fn sampled_rounds(
    active: &[LineObservation],
    subset_size: usize,
    prior: &ManhattanPrior,
    config: &SingleBlockConfig,
    rng: &mut ChaCha8Rng,
    round_offset: usize,
) -> Option<Candidate> {
    let m = active.len();
    let seeds: Vec<u64> = (0..config.rounds).map(|_| rng.random()).collect();
    let target = (config.early_exit_fraction * m as f64).ceil() as usize;
    let run = |(r, seed): (usize, &u64)| {
        let mut round_rng = ChaCha8Rng::seed_from_u64(*seed);
        let mut subset = index::sample(&mut round_rng, m, subset_size).into_vec();
        subset.sort_unstable();
        let sdp = solve_subset(active, &subset, prior, config.c, &config.tol, round_offset + r, false)?;
        let pairs = pair_candidates(active, &subset, prior, config.c, &sdp);
        best_of(std::iter::once(sdp).chain(pairs))
    };
    let mut best: Option<Candidate> = None;
    let indexed: Vec<(usize, &u64)> = seeds.iter().enumerate().collect();
    for chunk in indexed.chunks(ROUND_CHUNK) {
        let results: Vec<Option<Candidate>> = if config.parallel {
            chunk.par_iter().map(|&p| run(p)).collect()
        } else {
            chunk.iter().map(|&p| run(p)).collect()
        };
        best = best_of(best.into_iter().chain(results.into_iter().flatten()));
        if best.as_ref().is_some_and(|b| b.inliers.len() >= target) {
            break;
        }
    }
    best
}

/// Finds one vanishing direction among `active` lines.
///
/// With at most `sample_size` lines a single exact relaxation is solved;
/// if that solution is not rank one (several equally good directions) the
/// search continues on random subsets with one line left out. Larger sets
/// are handled by `rounds` random subsets of `sample_size` lines, each
/// candidate being scored by its support over all active lines.
pub fn solve_one_vp(
    active: &[LineObservation],
    config: &SingleBlockConfig,
    rng: &mut ChaCha8Rng,
) -> Result<VpIterationResult> {
    solve_one_vp_with_prior(active, config, rng, &ManhattanPrior::default())
}

pub fn solve_one_vp_with_prior(
    active: &[LineObservation],
    config: &SingleBlockConfig,
    rng: &mut ChaCha8Rng,
    prior: &ManhattanPrior,
) -> Result<VpIterationResult> {
    config.validate()?;
    let m = active.len();
    if m < 2 {
        return Err(Error::InsufficientLines {
            required: 2,
            got: m,
        });
    }

    let best = if m <= config.sample_size {
        let all: Vec<usize> = (0..m).collect();
        let exact = solve_subset(active, &all, prior, config.c, &config.tol, 0, true);
        let tie = exact
            .as_ref()
            .is_none_or(|c| c.certificate.max_rank_ratio() > TIE_RANK_RATIO);
        if tie && m > 2 {
            let retry = sampled_rounds(active, m - 1, prior, config, rng, 1);
            best_of(exact.into_iter().chain(retry))
        } else {
            exact
        }
    } else {
        sampled_rounds(active, config.sample_size, prior, config, rng, 0)
    };

    let Some(mut best) = best else {
        return Err(Error::NumericalFailure(
            "no sampling round produced a usable relaxation".into(),
        ));
    };
    if config.inlier_resolve {
        best = resolve_on_inliers(active, best, prior, config);
    }
    if best.inliers.len() < config.min_inliers {
        return Err(Error::NoConsensus {
            iteration: 0,
            best: best.inliers.len(),
            required: config.min_inliers,
        });
    }
    Ok(VpIterationResult {
        direction: best.direction,
        consensus_score: best.inliers.len(),
        inlier_ids: best.inliers,
        certificate: best.certificate,
        residual_sum: best.residual_sum,
        round: best.round,
        exact: best.exact,
        resolved: best.resolved,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobustVpResult {
    pub frame: ManhattanFrame,
    pub labels: AssociationLabels,
    /// Two or three accepted directions, in extraction order.
    pub per_vp: Vec<VpIterationResult>,
    /// Whether the rotation-constrained refinement was applied.
    pub refined: bool,
    /// The third direction was completed as `d₁ × d₂` after the third
    /// iteration failed to reach consensus.
    pub two_vp: bool,
    /// Truncated cost of `labels` under `frame`.
    pub cost: f64,
    /// Relaxation certificate for each final inlier set against the
    /// refined direction; `None` for sets with fewer than two lines.
    pub certificates: Vec<Option<Certificate>>,
}

pub const MIN_LINES: usize = 6;
const MAX_RELABEL_PASSES: usize = 5;

fn sets_by_label(labels: &AssociationLabels) -> [Vec<usize>; 3] {
    let mut sets: [Vec<usize>; 3] = Default::default();
    for (j, l) in labels.as_slice().iter().enumerate() {
        if let Some(i) = l.vp_index() {
            sets[i].push(j);
        }
    }
    sets
}

/// Estimates a Manhattan frame and line labels.
pub fn globustvp(lines: &[LineObservation], config: &SingleBlockConfig) -> Result<GlobustVpResult> {
    config.validate()?;
    if lines.len() < MIN_LINES {
        return Err(Error::InsufficientLines {
            required: MIN_LINES,
            got: lines.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active: Vec<usize> = (0..lines.len()).collect();
    let mut per_vp: Vec<VpIterationResult> = Vec::with_capacity(3);
    let mut two_vp = false;

    for iteration in 0..3 {
        let previous: Vec<Vector3<f64>> = per_vp.iter().map(|r| r.direction).collect();
        let prior = ManhattanPrior::new(&previous, config.manhattan_prior)
            .with_frame_completion(config.frame_completion && iteration < 2);
        let subset: Vec<LineObservation> = active.iter().map(|&j| lines[j].clone()).collect();
        let outcome = if subset.len() < 2 {
            Err(Error::NoConsensus {
                iteration,
                best: subset.len(),
                required: config.min_inliers,
            })
        } else {
            solve_one_vp_with_prior(&subset, config, &mut rng, &prior)
        };
        match outcome {
            Ok(mut res) => {
                // Lines strictly closer to another axis of the completed
                // frame stay available to later iterations.
                let others = prior.completing_axes(&res.direction, &subset, config.c);
                res.inlier_ids.retain(|&k| {
                    let own = residual(&res.direction, &subset[k].n);
                    others.iter().all(|o| residual(o, &subset[k].n) >= own)
                });
                res.inlier_ids = res.inlier_ids.iter().map(|&k| active[k]).collect();
                let harvested: std::collections::HashSet<usize> =
                    res.inlier_ids.iter().copied().collect();
                active.retain(|j| !harvested.contains(j));
                per_vp.push(res);
            }
            Err(Error::NoConsensus { best, required, .. }) if iteration == 2 => {
                let _ = (best, required);
                two_vp = true;
                break;
            }
            Err(Error::NoConsensus { best, required, .. }) => {
                return Err(Error::NoConsensus {
                    iteration,
                    best,
                    required,
                })
            }
            Err(e) => return Err(e),
        }
    }

    let d1 = per_vp[0].direction;
    let d2 = per_vp[1].direction;
    let mut d3 = match per_vp.get(2) {
        Some(r) => r.direction,
        None => d1.cross(&d2).normalize(),
    };
    let stacked = Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()]);
    if stacked.determinant() < 0.0 {
        d3 = -d3;
    }
    let stacked = Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()]);
    let frame0 = nearest_rotation(&stacked)?;

    let mut sets: [Vec<usize>; 3] = Default::default();
    for (set, res) in sets.iter_mut().zip(&per_vp) {
        set.clone_from(&res.inlier_ids);
    }
    if two_vp {
        let d3 = frame0.direction(2);
        sets[2] = active
            .iter()
            .copied()
            .filter(|&j| residual(&d3, &lines[j].n) <= config.c * config.c)
            .collect();
    }
    // Harvested lines are relabeled against the current frame; the rest stay
    // outliers. A line harvested for one direction may sit closer to
    // another, so refinement alternates with relabeling until the sets
    // settle.
    let relabel = |frame: &ManhattanFrame| {
        let (full, _) = optimal_assignment(frame, lines, config.c);
        let mut labels = AssociationLabels::all_outliers(lines.len());
        for &j in sets.iter().flatten() {
            labels.0[j] = full.0[j];
        }
        labels
    };
    let mut frame = frame0;
    let mut labels = relabel(&frame);
    if config.refine {
        let mut fit_sets = sets.clone();
        for _ in 0..MAX_RELABEL_PASSES {
            frame = manhattan_refine(&frame, &fit_sets, lines);
            labels = relabel(&frame);
            let next = sets_by_label(&labels);
            if next == fit_sets {
                break;
            }
            fit_sets = next;
        }
    }
    let cost = primal_cost(&frame, &labels, lines, config.c);
    let certificates = sets_by_label(&labels)
        .iter()
        .enumerate()
        .map(|(i, ids)| certify_set(lines, ids, &frame.direction(i), config))
        .collect();

    Ok(GlobustVpResult {
        frame,
        labels,
        per_vp,
        refined: config.refine,
        two_vp,
        cost,
        certificates,
    })
}

impl GlobustVpResult {
    /// Inlier sets per direction as harvested during the iterations.
    pub fn harvested_sets(&self) -> [Vec<usize>; 3] {
        let mut sets: [Vec<usize>; 3] = Default::default();
        for (set, res) in sets.iter_mut().zip(&self.per_vp) {
            set.clone_from(&res.inlier_ids);
        }
        sets
    }

    pub fn label_of(&self, j: usize) -> Label {
        self.labels.0[j]
    }
}
