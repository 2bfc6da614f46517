//! Infeasible primal-dual path-following method with Mehrotra
//! predictor-corrector steps and the HKM (H..K..M) search direction.
//!
//! Each iteration forms the Schur complement `M_ij = tr(A_i X A_j Z⁻¹)`
//! constraint by constraint from the sparse coefficient entries, factors it
//! with a dense Cholesky, and recovers `ΔZ = R_d - A*(Δy)` and the
//! symmetrized `ΔX = (R - X ΔZ) Z⁻¹`.

use nalgebra::{DMatrix, DVector};

use super::problem::BlockSdpProblem;
use crate::error::{Error, Result};

/// Solver tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    /// Relative duality gap `|⟨C,X⟩ - bᵀy| / (1 + |⟨C,X⟩|)`.
    pub tol_gap: f64,
    /// Max-norm of the primal and dual equality residuals.
    pub tol_feas: f64,
    pub max_iter: usize,
    /// Emit per-iteration residuals as CSV on stderr.
    pub debug: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iter: 100,
            debug: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub primal_blocks: Vec<DMatrix<f64>>,
    pub dual: DVector<f64>,
    /// `C - Σ y_j A_j`, recomputed from the final multipliers.
    pub slack_blocks: Vec<DMatrix<f64>>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

const STEP_FRACTION: f64 = 0.98;
const SCHUR_REGULARIZATION: f64 = 1e-10;
const MIN_CENTERING: f64 = 1e-3;
const PSEUDO_INVERSE_CUTOFF: f64 = 1e-14;
const REFINEMENT_STEPS: usize = 20;

/// Sparse upper-triangle entry with the weight used by the symmetric
/// product formula (diagonal entries are halved so that every entry stands
/// for `s·(E_pq + E_qp)`).
#[derive(Clone, Copy)]
struct Term {
    block: usize,
    p: usize,
    q: usize,
    s: f64,
}

struct Workspace {
    terms: Vec<Vec<Term>>,
    block_masks: Vec<u64>,
}

impl Workspace {
    fn new(problem: &BlockSdpProblem) -> Self {
        let mut terms = Vec::with_capacity(problem.num_constraints());
        let mut block_masks = Vec::with_capacity(problem.num_constraints());
        for con in problem.constraints() {
            let mut mask = 0u64;
            let t: Vec<Term> = con
                .entries()
                .iter()
                .map(|e| {
                    mask |= 1u64 << (e.block % 64);
                    Term {
                        block: e.block,
                        p: e.row,
                        q: e.col,
                        s: if e.row == e.col { 0.5 * e.value } else { e.value },
                    }
                })
                .collect();
            terms.push(t);
            block_masks.push(mask);
        }
        Self { terms, block_masks }
    }

    /// `M_ij = tr(A_i X A_j Z⁻¹)`.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.terms.len();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                if self.block_masks[i] & self.block_masks[j] == 0 {
                    continue;
                }
                let mut acc = 0.0;
                for a in &self.terms[i] {
                    let n = x[a.block].nrows();
                    let xs = x[a.block].as_slice();
                    let zs = zinv[a.block].as_slice();
                    let (p, q) = (a.p, a.q);
                    for b in &self.terms[j] {
                        if b.block != a.block {
                            continue;
                        }
                        let (s, t) = (b.p, b.q);
                        // Column-major: M[(r, c)] = data[r + c * n].
                        let v = xs[q + s * n] * zs[t + p * n]
                            + xs[q + t * n] * zs[s + p * n]
                            + xs[p + s * n] * zs[t + q * n]
                            + xs[p + t * n] * zs[s + q * n];
                        acc += a.s * b.s * v;
                    }
                }
                schur[(i, j)] = acc;
                schur[(j, i)] = acc;
            }
        }
        schur
    }

    /// `tr(A_j G)` for a possibly non-symmetric `G`, for every constraint.
    fn apply_general(&self, g: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|terms| {
                terms
                    .iter()
                    .map(|t| {
                        let m = &g[t.block];
                        t.s * (m[(t.p, t.q)] + m[(t.q, t.p)])
                    })
                    .sum::<f64>()
            }),
        )
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

enum SchurFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Eigenvectors and inverted eigenvalues, with the numerically null
    /// part dropped.
    Pseudo(DMatrix<f64>, DVector<f64>),
}

impl SchurFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SchurFactor::Cholesky(c) => c.solve(rhs),
            SchurFactor::Pseudo(v, inv) => v * (v.tr_mul(rhs).component_mul(inv)),
        }
    }
}

/// Cholesky of `M + 1e-10·I`. Near the optimum of degenerate problems `M`
/// becomes numerically singular; the minimum-norm solution from a truncated
/// eigendecomposition is used then, since a larger shift leaves `Δy` with
/// large components along the null space.
fn factor_schur(schur: &DMatrix<f64>) -> Option<SchurFactor> {
    let mut shifted = schur.clone();
    for k in 0..shifted.nrows() {
        shifted[(k, k)] += SCHUR_REGULARIZATION;
    }
    if let Some(chol) = shifted.cholesky() {
        return Some(SchurFactor::Cholesky(chol));
    }
    let eig = schur.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let floor = PSEUDO_INVERSE_CUTOFF * top;
    let inv = eig.eigenvalues.map(|l| if l > floor { 1.0 / l } else { 0.0 });
    Some(SchurFactor::Pseudo(eig.eigenvectors, inv))
}

/// Largest `α` with `X + α ΔX ⪰ 0` (infinite when `ΔX` keeps `X` PSD).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let chol = x.clone().cholesky()?;
    let l = chol.l();
    let linv = l.solve_lower_triangular(&DMatrix::identity(x.nrows(), x.nrows()))?;
    let mut scaled = &linv * dx * linv.transpose();
    symmetrize(&mut scaled);
    let min = scaled.symmetric_eigenvalues().min();
    Some(if min >= 0.0 { f64::INFINITY } else { -1.0 / min })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn inf_norm_blocks(blocks: &[DMatrix<f64>]) -> f64 {
    blocks.iter().map(|b| b.amax()).fold(0.0, f64::max)
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    z: Vec<DMatrix<f64>>,
}

fn initial_point(problem: &BlockSdpProblem) -> Iterate {
    // Scale so that constraints with a nonzero trace are met by τI.
    let mut tau: f64 = 0.0;
    for con in problem.constraints() {
        let tr: f64 = con
            .entries()
            .iter()
            .filter(|e| e.row == e.col)
            .map(|e| e.value)
            .sum();
        if con.rhs != 0.0 && tr.abs() > 1e-12 && con.rhs / tr > 0.0 {
            tau = tau.max(con.rhs / tr);
        }
    }
    if tau == 0.0 {
        tau = 1.0;
    }
    let x = problem
        .block_sizes()
        .iter()
        .map(|&n| DMatrix::identity(n, n) * tau)
        .collect();
    let z = problem
        .cost_blocks()
        .iter()
        .map(|c| {
            let lift = (0.1 - min_eigenvalue(c)).max(0.0);
            let mut z = c + DMatrix::identity(c.nrows(), c.nrows()) * lift;
            symmetrize(&mut z);
            z
        })
        .collect();
    Iterate {
        x,
        y: DVector::zeros(problem.num_constraints()),
        z,
    }
}

fn finish(problem: &BlockSdpProblem, it: Iterate, iterations: usize, status: SdpStatus) -> SdpSolution {
    let b = problem.rhs();
    let primal_obj = problem.objective(&it.x);
    let dual_obj = b.dot(&it.y);
    let primal_residual = (&b - problem.apply(&it.x)).amax();
    let slack_blocks = problem.slack(&it.y);
    let dual_residual = slack_blocks
        .iter()
        .zip(&it.z)
        .map(|(h, z)| (h - z).amax())
        .fold(0.0, f64::max);
    SdpSolution {
        relative_gap: (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs()),
        primal_blocks: it.x,
        dual: it.y,
        slack_blocks,
        primal_obj,
        dual_obj,
        iterations,
        status,
        primal_residual,
        dual_residual,
    }
}

/// Solves the block SDP.
///
/// Returns `Err(NumericalFailure)` only when the very first iterate cannot
/// be factored; later breakdowns return the best iterate seen with status
/// [`SdpStatus::NumericalFailure`].
pub fn solve(problem: &BlockSdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    let ws = Workspace::new(problem);
    let b = problem.rhs();
    let n_total: usize = problem.block_sizes().iter().sum();
    let mut it = initial_point(problem);

    if settings.debug {
        eprintln!("iter,pobj,dobj,rel_gap,pinf,dinf,mu,alpha_p,alpha_d");
    }

    let mut alphas = (0.0, 0.0);
    // Degenerate problems can lose accuracy after reaching their best point;
    // failures and MaxIter report the iterate with the smallest scaled
    // residual instead of the last one.
    let mut best: Option<(f64, usize, Iterate)> = None;
    for iter in 0..=settings.max_iter {
        let ax = problem.apply(&it.x);
        let rp = &b - &ax;
        let aty = problem.adjoint(&it.y);
        let rd: Vec<DMatrix<f64>> = problem
            .cost_blocks()
            .iter()
            .zip(&aty)
            .zip(&it.z)
            .map(|((c, a), z)| c - a - z)
            .collect();
        let pobj = problem.objective(&it.x);
        let dobj = b.dot(&it.y);
        let pinf = rp.amax();
        let dinf = inf_norm_blocks(&rd);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        let mu = inner(&it.x, &it.z) / n_total as f64;

        if settings.debug {
            eprintln!(
                "{iter},{pobj:.12e},{dobj:.12e},{rel_gap:.3e},{pinf:.3e},{dinf:.3e},{mu:.3e},{:.4},{:.4}",
                alphas.0, alphas.1
            );
        }

        if rel_gap <= settings.tol_gap && pinf <= settings.tol_feas && dinf <= settings.tol_feas {
            return Ok(finish(problem, it, iter, SdpStatus::Optimal));
        }
        let merit = (rel_gap / settings.tol_gap)
            .max(pinf / settings.tol_feas)
            .max(dinf / settings.tol_feas);
        if best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
            best = Some((merit, iter, it.clone()));
        }
        if iter == settings.max_iter {
            let (_, _, b) = best.expect("recorded above");
            return Ok(finish(problem, b, iter, SdpStatus::MaxIter));
        }

        let zinv: Option<Vec<DMatrix<f64>>> = it
            .z
            .iter()
            .map(|z| z.clone().cholesky().map(|c| c.inverse()))
            .collect();
        let Some(zinv) = zinv else {
            return numerical_failure(problem, best, iter, "slack lost definiteness");
        };

        let schur = ws.schur(&it.x, &zinv);
        let Some(chol) = factor_schur(&schur) else {
            return numerical_failure(problem, best, iter, "Schur complement is indefinite");
        };

        // X Rd Z⁻¹ is shared between predictor and corrector.
        let x_rd_zinv: Vec<DMatrix<f64>> = it
            .x
            .iter()
            .zip(&rd)
            .zip(&zinv)
            .map(|((x, r), zi)| x * r * zi)
            .collect();
        let a_x_rd_zinv = ws.apply_general(&x_rd_zinv);

        let direction = |r_zinv: &[DMatrix<f64>]| -> (Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>) {
            // M Δy = rp - A(R Z⁻¹) + A(X Rd Z⁻¹)
            let rhs = &rp - ws.apply_general(r_zinv) + &a_x_rd_zinv;
            let mut dy = chol.solve(&rhs);
            // Refine against the unregularized system; near the optimum the
            // Schur matrix is badly conditioned.
            let scale = rhs.amax().max(f64::MIN_POSITIVE);
            for _ in 0..REFINEMENT_STEPS {
                let r = &rhs - &schur * &dy;
                if r.amax() <= 1e-14 * scale {
                    break;
                }
                dy += chol.solve(&r);
            }
            let atdy = problem.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            let dx: Vec<DMatrix<f64>> = r_zinv
                .iter()
                .zip(&it.x)
                .zip(&dz)
                .zip(&zinv)
                .map(|(((rz, x), dz), zi)| {
                    let mut d = rz - x * dz * zi;
                    symmetrize(&mut d);
                    d
                })
                .collect();
            (dx, dy, dz)
        };

        let step = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| -> Option<(f64, f64)> {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for (x, d) in it.x.iter().zip(dx) {
                ap = ap.min(max_step(x, d)?);
            }
            for (z, d) in it.z.iter().zip(dz) {
                ad = ad.min(max_step(z, d)?);
            }
            Some((ap, ad))
        };

        // Predictor: R = -XZ, so R Z⁻¹ = -X.
        let neg_x: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let (dx_a, _dy_a, dz_a) = direction(&neg_x);
        let Some((ap_a, ad_a)) = step(&dx_a, &dz_a) else {
            return numerical_failure(problem, best, iter, "iterate lost definiteness");
        };
        let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
        let mu_aff: f64 = it
            .x
            .iter()
            .zip(&dx_a)
            .zip(it.z.iter().zip(&dz_a))
            .map(|((x, dx), (z, dz))| (x + dx * ap_a).dot(&(z + dz * ad_a)))
            .sum::<f64>()
            / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3).max(MIN_CENTERING);

        // Corrector: R = σμI - XZ - ΔXa ΔZa.
        let r_zinv: Vec<DMatrix<f64>> = it
            .x
            .iter()
            .zip(&zinv)
            .zip(dx_a.iter().zip(&dz_a))
            .map(|((x, zi), (dxa, dza))| zi * (sigma * mu) - x - dxa * dza * zi)
            .collect();
        let (dx, dy, dz) = direction(&r_zinv);
        let Some((ap, ad)) = step(&dx, &dz) else {
            return numerical_failure(problem, best, iter, "iterate lost definiteness");
        };
        let ap = (STEP_FRACTION * ap).min(1.0);
        let ad = (STEP_FRACTION * ad).min(1.0);
        alphas = (ap, ad);

        for (x, d) in it.x.iter_mut().zip(&dx) {
            *x += d * ap;
            symmetrize(x);
        }
        it.y += &dy * ad;
        for (z, d) in it.z.iter_mut().zip(&dz) {
            *z += d * ad;
            symmetrize(z);
        }
        if ap < 1e-12 && ad < 1e-12 {
            return numerical_failure(problem, best, iter + 1, "step length collapsed");
        }
    }
    unreachable!("loop returns at max_iter")
}

fn numerical_failure(
    problem: &BlockSdpProblem,
    best: Option<(f64, usize, Iterate)>,
    iter: usize,
    why: &str,
) -> Result<SdpSolution> {
    match best {
        Some((_, _, it)) if iter > 0 => Ok(finish(problem, it, iter, SdpStatus::NumericalFailure)),
        _ => Err(Error::NumericalFailure(why.to_string())),
    }
}
