//! Line and vanishing-direction algebra.
//!
//! A 2D segment is represented by the unit normal `n` of the plane through
//! the camera centre and the segment, expressed in normalized camera
//! coordinates. A vanishing direction `d` (a unit 3D direction) is consistent
//! with the segment iff `d·n = 0`, so `(d·n)²` is used as the point-to-line
//! distance throughout.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segments shorter than this (in pixels) are rejected.
pub const MIN_SEGMENT_LENGTH_PX: f64 = 1e-6;

const FRAME_TOL: f64 = 1e-9;

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Identity intrinsics (pixels are normalized coordinates).
    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite entry".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Back-projects a pixel to a ray in normalized coordinates (z = 1).
    pub fn normalize_point(&self, p: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    /// Projects a direction to homogeneous pixel coordinates `K·d`.
    pub fn project_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * d
    }
}

/// Association of a line with one of the three vanishing directions, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Vp1,
    Vp2,
    Vp3,
    Outlier,
}

impl Label {
    pub const VPS: [Label; 3] = [Label::Vp1, Label::Vp2, Label::Vp3];

    /// Zero-based VP index, `None` for outliers.
    pub fn vp_index(self) -> Option<usize> {
        match self {
            Label::Vp1 => Some(0),
            Label::Vp2 => Some(1),
            Label::Vp3 => Some(2),
            Label::Outlier => None,
        }
    }

    pub fn from_vp_index(i: usize) -> Label {
        match i {
            0 => Label::Vp1,
            1 => Label::Vp2,
            2 => Label::Vp3,
            _ => Label::Outlier,
        }
    }

    /// Row of the distance matrix (and of `Q`) this label selects.
    pub fn row(self) -> usize {
        self.vp_index().unwrap_or(3)
    }

    /// File encoding: 0 = outlier, 1..=3 = VP index.
    pub fn code(self) -> u8 {
        match self {
            Label::Outlier => 0,
            Label::Vp1 => 1,
            Label::Vp2 => 2,
            Label::Vp3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Label> {
        match code {
            0 => Ok(Label::Outlier),
            1 => Ok(Label::Vp1),
            2 => Ok(Label::Vp2),
            3 => Ok(Label::Vp3),
            other => Err(Error::Malformed(format!("label code {other} not in 0..=3"))),
        }
    }

    pub fn is_inlier(self) -> bool {
        self != Label::Outlier
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Label::from_code(code).map_err(serde::de::Error::custom)
    }
}

/// A 2D segment together with its projection-plane normal.
#[derive(Debug, Clone, PartialEq)]
pub struct LineObservation {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
    /// Unit normal of the projection plane, in normalized coordinates.
    pub n: Vector3<f64>,
    pub gt_label: Option<Label>,
}

impl LineObservation {
    pub fn from_endpoints(
        p1: Vector2<f64>,
        p2: Vector2<f64>,
        k: &CameraIntrinsics,
        gt_label: Option<Label>,
    ) -> Result<Self> {
        let n = line_to_normal(&p1, &p2, k)?;
        Ok(Self { p1, p2, n, gt_label })
    }

    /// Builds an observation directly from a normal, with no pixel geometry.
    pub fn from_normal(n: Vector3<f64>, gt_label: Option<Label>) -> Self {
        Self {
            p1: Vector2::zeros(),
            p2: Vector2::zeros(),
            n: canonical_sign(n.normalize()),
            gt_label,
        }
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        (self.p1 + self.p2) * 0.5
    }

    pub fn length(&self) -> f64 {
        (self.p2 - self.p1).norm()
    }
}

/// Flips `v` so that its first component with magnitude above `1e-12` is
/// positive.
pub fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Unit projection-plane normal of the segment `p1 p2`.
///
/// Computed as `normalize(Kᵀ (p̃1 × p̃2))`, which is parallel to
/// `(K⁻¹p̃1) × (K⁻¹p̃2)`.
pub fn line_to_normal(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    let distance = (p1 - p2).norm();
    if !(distance >= MIN_SEGMENT_LENGTH_PX) {
        return Err(Error::DegenerateSegment { distance });
    }
    let h1 = Vector3::new(p1.x, p1.y, 1.0);
    let h2 = Vector3::new(p2.x, p2.y, 1.0);
    let n = k.matrix().transpose() * h1.cross(&h2);
    let norm = n.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateSegment { distance });
    }
    Ok(canonical_sign(n / norm))
}

/// `(d·n)²`.
#[inline]
pub fn residual(d: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    let t = d.dot(n);
    t * t
}

/// Three mutually orthogonal unit directions stored as the rows of a
/// rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManhattanFrame {
    d: Matrix3<f64>,
}

impl ManhattanFrame {
    /// Validates `D·Dᵀ = I` and `det D = +1` to within `1e-9`.
    pub fn new(d: Matrix3<f64>) -> Result<Self> {
        let err = (d * d.transpose() - Matrix3::identity()).abs().max();
        if !(err <= FRAME_TOL) {
            return Err(Error::InvalidFrame(format!(
                "max |D·Dᵀ - I| = {err:.3e}"
            )));
        }
        let det = d.determinant();
        if (det - 1.0).abs() > FRAME_TOL {
            return Err(Error::InvalidFrame(format!("det(D) = {det}")));
        }
        Ok(Self { d })
    }

    pub fn identity() -> Self {
        Self {
            d: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.d
    }

    pub fn direction(&self, i: usize) -> Vector3<f64> {
        self.d.row(i).transpose()
    }

    pub fn directions(&self) -> [Vector3<f64>; 3] {
        [self.direction(0), self.direction(1), self.direction(2)]
    }
}

/// One label per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssociationLabels(pub Vec<Label>);

impl AssociationLabels {
    pub fn all_outliers(m: usize) -> Self {
        Self(vec![Label::Outlier; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    /// Indices carrying `label`.
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn inlier_count(&self) -> usize {
        self.0.iter().filter(|l| l.is_inlier()).count()
    }
}

impl From<Vec<Label>> for AssociationLabels {
    fn from(v: Vec<Label>) -> Self {
        Self(v)
    }
}

/// The 4×m matrix `([D·N; c·1ᵀ])²`.
pub fn distance_matrix(frame: &ManhattanFrame, lines: &[LineObservation], c: f64) -> DMatrix<f64> {
    let m = lines.len();
    let dirs = frame.directions();
    let c2 = c * c;
    DMatrix::from_fn(4, m, |i, j| {
        if i < 3 {
            residual(&dirs[i], &lines[j].n)
        } else {
            c2
        }
    })
}

/// Column-wise argmin of a 4-row distance matrix, lowest row winning ties.
pub fn assign_columns(dist: &DMatrix<f64>) -> AssociationLabels {
    assert_eq!(dist.nrows(), 4, "distance matrix must have 4 rows");
    let labels = (0..dist.ncols())
        .map(|j| {
            let mut best = 0;
            for i in 1..4 {
                if dist[(i, j)] < dist[(best, j)] {
                    best = i;
                }
            }
            Label::from_vp_index(best)
        })
        .collect();
    AssociationLabels(labels)
}

/// Optimal labels for a fixed frame and their truncated cost
/// `Σ_j min(min_i (d_i·n_j)², c²)`.
pub fn optimal_assignment(
    frame: &ManhattanFrame,
    lines: &[LineObservation],
    c: f64,
) -> (AssociationLabels, f64) {
    let dist = distance_matrix(frame, lines, c);
    let labels = assign_columns(&dist);
    let cost = labels
        .0
        .iter()
        .enumerate()
        .map(|(j, l)| dist[(l.row(), j)])
        .sum();
    (labels, cost)
}

/// `⟨([D·N; c·1ᵀ])², Q⟩` for the labels `Q`.
pub fn primal_cost(
    frame: &ManhattanFrame,
    labels: &AssociationLabels,
    lines: &[LineObservation],
    c: f64,
) -> f64 {
    assert_eq!(labels.len(), lines.len(), "one label per line");
    labels
        .0
        .iter()
        .zip(lines)
        .map(|(label, line)| match label.vp_index() {
            Some(i) => residual(&frame.direction(i), &line.n),
            None => c * c,
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k_identity() -> CameraIntrinsics {
        CameraIntrinsics::identity()
    }

    #[test]
    fn normal_of_diagonal_segment() {
        let n = line_to_normal(&Vector2::new(1.0, 0.0), &Vector2::new(0.0, 1.0), &k_identity())
            .unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_relative_eq!(n, Vector3::new(s, s, -s), epsilon = 1e-15);
    }

    #[test]
    fn normal_of_x_axis_segment() {
        let n = line_to_normal(&Vector2::new(-1.0, 0.0), &Vector2::new(1.0, 0.0), &k_identity())
            .unwrap();
        assert_relative_eq!(n, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn normal_is_orthogonal_to_endpoint_rays() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let kinv = k.inverse();
        let pts = [
            (Vector2::new(12.5, 400.0), Vector2::new(610.0, 33.0)),
            (Vector2::new(320.0, 240.0), Vector2::new(321.0, 500.0)),
            (Vector2::new(-50.0, 10.0), Vector2::new(700.0, 470.25)),
        ];
        for (p1, p2) in pts {
            let n = line_to_normal(&p1, &p2, &k).unwrap();
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-12);
            for p in [p1, p2] {
                let ray = kinv * Vector3::new(p.x, p.y, 1.0);
                assert!(n.dot(&ray.normalize()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_segment_rejected() {
        let p = Vector2::new(3.0, 4.0);
        let err = line_to_normal(&p, &(p + Vector2::new(1e-7, 0.0)), &k_identity()).unwrap_err();
        assert!(matches!(err, Error::DegenerateSegment { .. }));
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn residual_cases() {
        let e1 = Vector3::x();
        assert_eq!(residual(&e1, &Vector3::y()), 0.0);
        assert_eq!(residual(&e1, &e1), 1.0);
        let n = Vector3::new(1.0, 1.0, 0.0).normalize();
        assert_relative_eq!(residual(&e1, &n), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn distance_matrix_single_line() {
        let lines = [LineObservation::from_normal(Vector3::z(), None)];
        let dist = distance_matrix(&ManhattanFrame::identity(), &lines, 0.03);
        assert_eq!(dist.shape(), (4, 1));
        assert_relative_eq!(dist[(0, 0)], 0.0);
        assert_relative_eq!(dist[(1, 0)], 0.0);
        assert_relative_eq!(dist[(2, 0)], 1.0);
        assert_relative_eq!(dist[(3, 0)], 0.0009, epsilon = 1e-15);
    }

    #[test]
    fn argmin_example_from_labelled_columns() {
        // Columns whose argmin rows are (2, 1, 4, 4, 2, 3), one-based.
        let c2 = 0.0009;
        #[rustfmt::skip]
        let dist = DMatrix::from_row_slice(4, 6, &[
            0.5,  1e-5, 0.3, 0.2,  0.4,  0.6,
            1e-4, 0.2,  0.1, 0.05, 2e-4, 0.7,
            0.3,  0.4,  0.2, 0.01, 0.9,  3e-4,
            c2,   c2,   c2,  c2,   c2,   c2,
        ]);
        let labels = assign_columns(&dist);
        use Label::*;
        assert_eq!(labels.0, vec![Vp2, Vp1, Outlier, Outlier, Vp2, Vp3]);
    }

    #[test]
    fn ties_resolve_to_lowest_vp_and_inclusive_threshold() {
        let c: f64 = 0.1;
        // Exactly at the threshold against d1 = e1: (e1·n)² = c².
        let n = Vector3::new(c, (1.0 - c * c).sqrt(), 0.0);
        let line = LineObservation {
            p1: Vector2::zeros(),
            p2: Vector2::zeros(),
            n,
            gt_label: None,
        };
        let dist = DMatrix::from_row_slice(4, 1, &[c * c, 0.5, 0.5, c * c]);
        assert_eq!(assign_columns(&dist).0, vec![Label::Vp1]);
        let dist = DMatrix::from_row_slice(4, 1, &[0.5, 0.2, 0.2, 0.9]);
        assert_eq!(assign_columns(&dist).0, vec![Label::Vp2]);
        let (labels, _) = optimal_assignment(&ManhattanFrame::identity(), &[line], c);
        assert_ne!(labels.0[0], Label::Outlier);
    }

    #[test]
    fn all_orthogonal_to_first_direction() {
        let lines: Vec<_> = (0..5)
            .map(|i| {
                let a = i as f64 * 0.7;
                LineObservation::from_normal(Vector3::new(0.0, a.cos(), a.sin()), None)
            })
            .collect();
        let (labels, cost) = optimal_assignment(&ManhattanFrame::identity(), &lines, 0.03);
        assert!(labels.0.iter().all(|l| *l == Label::Vp1));
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn all_outliers_cost() {
        let lines: Vec<_> = (0..7)
            .map(|i| LineObservation::from_normal(Vector3::new(1.0, i as f64, 2.0), None))
            .collect();
        let cost = primal_cost(
            &ManhattanFrame::identity(),
            &AssociationLabels::all_outliers(7),
            &lines,
            0.03,
        );
        assert_relative_eq!(cost, 7.0 * 0.0009, epsilon = 1e-15);
    }

    #[test]
    fn frame_validation() {
        assert!(ManhattanFrame::new(Matrix3::identity()).is_ok());
        assert!(ManhattanFrame::new(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
        assert!(ManhattanFrame::new(Matrix3::identity() * 1.01).is_err());
    }

    #[test]
    fn label_codes_round_trip() {
        for l in [Label::Vp1, Label::Vp2, Label::Vp3, Label::Outlier] {
            assert_eq!(Label::from_code(l.code()).unwrap(), l);
        }
        assert!(Label::from_code(4).is_err());
    }
}
