//! Accuracy metrics and a sequential RANSAC baseline.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{residual, AssociationLabels, CameraIntrinsics, Label, LineObservation, ManhattanFrame};
use crate::refine::nearest_rotation;

/// The six orderings of three VP indices, identity first.
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

pub const AA_THRESHOLDS_DEG: [f64; 3] = [3.0, 5.0, 10.0];

fn permute(label: Label, p: &[usize; 3]) -> Label {
    match label.vp_index() {
        Some(i) => Label::from_vp_index(p[i]),
        None => Label::Outlier,
    }
}

/// Lines labeled with the same VP in both, after mapping `pred` through `p`.
fn agreement(pred: &AssociationLabels, gt: &AssociationLabels, p: &[usize; 3]) -> usize {
    pred.as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(a, b)| a.is_inlier() && permute(**a, p) == **b)
        .count()
}

/// `pred` with its VP indices permuted to agree with `reference` on as
/// many lines as possible; the earliest permutation wins ties.
pub fn align_labels(reference: &AssociationLabels, pred: &AssociationLabels) -> AssociationLabels {
    assert_eq!(reference.len(), pred.len(), "label sets differ in length");
    let mut best = (0, &PERMUTATIONS[0]);
    for p in &PERMUTATIONS {
        let a = agreement(pred, reference, p);
        if a > best.0 {
            best = (a, p);
        }
    }
    pred.as_slice()
        .iter()
        .map(|&l| permute(l, best.1))
        .collect::<Vec<_>>()
        .into()
}

/// Precision, recall and F1 of a labeling; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub correct: usize,
    pub wrong: usize,
    pub missed: usize,
}

/// Metrics after aligning the VP indices of `pred` to `gt`.
///
/// All three values are `None` when `gt` has no inliers; precision alone
/// is `None` when nothing is predicted inlier.
pub fn classification_metrics(pred: &AssociationLabels, gt: &AssociationLabels) -> ClassificationMetrics {
    let aligned = align_labels(gt, pred);
    let (mut correct, mut wrong, mut missed) = (0, 0, 0);
    for (p, g) in aligned.as_slice().iter().zip(gt.as_slice()) {
        match (p.is_inlier(), g.is_inlier()) {
            (true, _) if p == g => correct += 1,
            (true, _) => wrong += 1,
            (false, true) => missed += 1,
            (false, false) => {}
        }
    }
    if gt.inlier_count() == 0 {
        return ClassificationMetrics {
            precision: None,
            recall: None,
            f1: None,
            correct,
            wrong,
            missed,
        };
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    let precision = ratio(correct, wrong);
    let recall = ratio(correct, missed);
    let f1 = if correct == 0 {
        Some(0.0)
    } else {
        let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
        Some(2.0 * p * r / (p + r))
    };
    ClassificationMetrics {
        precision,
        recall,
        f1,
        correct,
        wrong,
        missed,
    }
}

/// Which segment endpoints enter the consistency error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Endpoints {
    #[default]
    First,
    Both,
}

const IDEAL_VP_RATIO: f64 = 1e-9;

/// Distance from `p` to the line through `mid` and the VP `v = K·d`.
fn virtual_line_distance(p: &Vector2<f64>, mid: &Vector2<f64>, v: &Vector3<f64>) -> f64 {
    let dir = if v.z.abs() < IDEAL_VP_RATIO * v.norm() {
        Vector2::new(v.x, v.y)
    } else {
        Vector2::new(v.x / v.z, v.y / v.z) - mid
    };
    let len = dir.norm();
    if !(len > 0.0) {
        return 0.0;
    }
    let e = p - mid;
    (e.x * dir.y - e.y * dir.x).abs() / len
}

/// RMS pixel distance from a segment endpoint to the line joining its
/// vanishing point and its midpoint, over inlier lines.
///
/// `None` when no line is labeled inlier.
pub fn consistency_error(
    frame: &ManhattanFrame,
    labels: &AssociationLabels,
    lines: &[LineObservation],
    k: &CameraIntrinsics,
) -> Option<f64> {
    consistency_error_with(frame, labels, lines, k, Endpoints::First)
}

pub fn consistency_error_with(
    frame: &ManhattanFrame,
    labels: &AssociationLabels,
    lines: &[LineObservation],
    k: &CameraIntrinsics,
    endpoints: Endpoints,
) -> Option<f64> {
    assert_eq!(labels.len(), lines.len(), "one label per line");
    let km = k.matrix();
    let vps: Vec<Vector3<f64>> = frame.directions().iter().map(|d| km * d).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (label, line) in labels.as_slice().iter().zip(lines) {
        let Some(i) = label.vp_index() else { continue };
        let mid = line.midpoint();
        let d1 = virtual_line_distance(&line.p1, &mid, &vps[i]);
        match endpoints {
            Endpoints::First => {
                sum += d1 * d1;
                count += 1;
            }
            Endpoints::Both => {
                let d2 = virtual_line_distance(&line.p2, &mid, &vps[i]);
                sum += d1 * d1 + d2 * d2;
                count += 2;
            }
        }
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Per-direction angles in degrees between `est` and `gt` under the axis
/// matching that minimizes the largest angle.
///
/// Angles use `acos|dᵢ·d*ᵢ|`, so sign flips never matter and the 24
/// rotational alignments reduce to the 6 axis permutations.
pub fn matched_angles(est: &ManhattanFrame, gt: &ManhattanFrame) -> [f64; 3] {
    let angle = |a: &Vector3<f64>, b: &Vector3<f64>| a.dot(b).abs().min(1.0).acos().to_degrees();
    let (e, g) = (est.directions(), gt.directions());
    let mut best = [f64::INFINITY; 3];
    let mut best_max = f64::INFINITY;
    for p in &PERMUTATIONS {
        let angles = [angle(&e[p[0]], &g[0]), angle(&e[p[1]], &g[1]), angle(&e[p[2]], &g[2])];
        let worst = angles.iter().copied().fold(0.0, f64::max);
        if worst < best_max {
            best_max = worst;
            best = angles;
        }
    }
    best
}

/// Fraction of the three directions within each threshold.
pub fn angular_accuracy(est: &ManhattanFrame, gt: &ManhattanFrame, thresholds_deg: &[f64]) -> Vec<f64> {
    let angles = matched_angles(est, gt);
    thresholds_deg
        .iter()
        .map(|t| angles.iter().filter(|a| **a <= *t).count() as f64 / 3.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    pub c: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iters: 1000,
            c: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub frame: ManhattanFrame,
    pub labels: AssociationLabels,
    /// Directions found before orthogonalization, in extraction order.
    pub directions: Vec<Vector3<f64>>,
}

/// Unit vector orthogonal to `d`.
fn any_orthogonal(d: &Vector3<f64>) -> Vector3<f64> {
    let axis = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    d.cross(&axis).normalize()
}

/// Sequential RANSAC: three rounds of pair hypotheses `n_a × n_b`, each
/// keeping the direction with most lines within `c` and removing them.
pub fn ransac_baseline(lines: &[LineObservation], config: &RansacConfig) -> Result<RansacResult> {
    const MIN_LINES: usize = 6;
    if lines.len() < MIN_LINES {
        return Err(Error::InsufficientLines {
            required: MIN_LINES,
            got: lines.len(),
        });
    }
    if config.iters == 0 || !(config.c > 0.0) {
        return Err(Error::InvalidConfig("ransac needs iters > 0 and c > 0".into()));
    }
    let c2 = config.c * config.c;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active: Vec<usize> = (0..lines.len()).collect();
    let mut labels = AssociationLabels::all_outliers(lines.len());
    let mut directions = Vec::with_capacity(3);

    for vp in 0..3 {
        if active.len() < 2 {
            break;
        }
        let mut best: Option<(usize, Vector3<f64>)> = None;
        for _ in 0..config.iters {
            let a = rng.random_range(0..active.len());
            let mut b = rng.random_range(0..active.len() - 1);
            if b >= a {
                b += 1;
            }
            let d = lines[active[a]].n.cross(&lines[active[b]].n);
            let norm = d.norm();
            if !(norm > 1e-9) {
                continue;
            }
            let d = d / norm;
            let support = active
                .iter()
                .filter(|&&j| residual(&d, &lines[j].n) <= c2)
                .count();
            if best.is_none_or(|(s, _)| support > s) {
                best = Some((support, d));
            }
        }
        let Some((_, d)) = best else { break };
        active.retain(|&j| {
            let inlier = residual(&d, &lines[j].n) <= c2;
            if inlier {
                labels.0[j] = Label::from_vp_index(vp);
            }
            !inlier
        });
        directions.push(d);
    }

    let d1 = directions.first().copied().unwrap_or_else(Vector3::z);
    let d2 = directions
        .get(1)
        .copied()
        .unwrap_or_else(|| any_orthogonal(&d1));
    let mut d3 = directions
        .get(2)
        .copied()
        .unwrap_or_else(|| d1.cross(&d2).normalize());
    let stacked = |d3: &Vector3<f64>| Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()]);
    if stacked(&d3).determinant() < 0.0 {
        d3 = -d3;
    }
    let frame = nearest_rotation(&stacked(&d3))?;
    Ok(RansacResult {
        frame,
        labels,
        directions,
    })
}

/// One row of the evaluation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene_id: String,
    pub method: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub consistency_px: Option<f64>,
    pub aa3: f64,
    pub aa5: f64,
    pub aa10: f64,
    pub runtime_ms: Option<f64>,
}

/// All metrics for one estimate against a scene with ground truth.
pub fn evaluate(
    scene_id: &str,
    method: &str,
    frame: &ManhattanFrame,
    labels: &AssociationLabels,
    lines: &[LineObservation],
    k: &CameraIntrinsics,
    frame_gt: Option<&ManhattanFrame>,
    runtime_ms: Option<f64>,
) -> EvalRow {
    let gt: AssociationLabels = lines
        .iter()
        .map(|l| l.gt_label.unwrap_or(Label::Outlier))
        .collect::<Vec<_>>()
        .into();
    let m = classification_metrics(labels, &gt);
    let aa = frame_gt
        .map(|g| angular_accuracy(frame, g, &AA_THRESHOLDS_DEG))
        .unwrap_or_else(|| vec![f64::NAN; 3]);
    EvalRow {
        scene_id: scene_id.to_string(),
        method: method.to_string(),
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        consistency_px: consistency_error(frame, labels, lines, k),
        aa3: aa[0],
        aa5: aa[1],
        aa10: aa[2],
        runtime_ms,
    }
}
