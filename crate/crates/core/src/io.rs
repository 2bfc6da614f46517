//! JSON files: line sets (scenes) and estimation results.

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AssociationLabels, CameraIntrinsics, Label, LineObservation, ManhattanFrame};
use crate::globustvp::GlobustVpResult;
use crate::sdp::Certificate;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    p1: [f64; 2],
    p2: [f64; 2],
    #[serde(default)]
    gt_label: Option<Label>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineSetRecord {
    intrinsics: CameraIntrinsics,
    lines: Vec<LineRecord>,
    /// Rows are the planted directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_gt: Option<[[f64; 3]; 3]>,
}

/// Lines with their camera, as read from or written to a scene file.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSet {
    pub intrinsics: CameraIntrinsics,
    pub lines: Vec<LineObservation>,
    pub frame_gt: Option<ManhattanFrame>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn frame_from_rows(r: &[[f64; 3]; 3], field: &str) -> Result<ManhattanFrame> {
    let m = Matrix3::from_fn(|i, j| r[i][j]);
    ManhattanFrame::new(m).map_err(|e| Error::Malformed(format!("{field}: {e}")))
}

fn malformed(e: serde_json::Error) -> Error {
    Error::Malformed(e.to_string())
}

pub fn parse_line_set(text: &str) -> Result<LineSet> {
    let rec: LineSetRecord = serde_json::from_str(text).map_err(malformed)?;
    let k = rec.intrinsics;
    k.validate()
        .map_err(|e| Error::Malformed(format!("intrinsics: {e}")))?;
    let mut lines = Vec::with_capacity(rec.lines.len());
    for (i, l) in rec.lines.iter().enumerate() {
        for (name, p) in [("p1", l.p1), ("p2", l.p2)] {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Malformed(format!("lines[{i}].{name}: non-finite coordinate")));
            }
        }
        let obs = LineObservation::from_endpoints(
            Vector2::from(l.p1),
            Vector2::from(l.p2),
            &k,
            l.gt_label,
        )
        .map_err(|e| Error::Malformed(format!("lines[{i}]: {e}")))?;
        lines.push(obs);
    }
    let frame_gt = rec
        .frame_gt
        .as_ref()
        .map(|r| frame_from_rows(r, "frame_gt"))
        .transpose()?;
    Ok(LineSet {
        intrinsics: k,
        lines,
        frame_gt,
    })
}

pub fn line_set_to_json(set: &LineSet) -> String {
    let rec = LineSetRecord {
        intrinsics: set.intrinsics,
        lines: set
            .lines
            .iter()
            .map(|l| LineRecord {
                p1: [l.p1.x, l.p1.y],
                p2: [l.p2.x, l.p2.y],
                gt_label: l.gt_label,
            })
            .collect(),
        frame_gt: set.frame_gt.map(|f| rows(f.matrix())),
    };
    serde_json::to_string_pretty(&rec).expect("line set serializes") + "\n"
}

/// Contents of a result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub method: String,
    /// Rows are the estimated directions.
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub labels: Vec<Label>,
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default)]
    pub certificates: Vec<Option<Certificate>>,
    #[serde(default)]
    pub two_vp: bool,
    /// Wall-clock solve time; `null` unless timing was requested.
    #[serde(default)]
    pub timing_ms: Option<f64>,
}

impl ResultFile {
    pub fn from_globustvp(res: &GlobustVpResult, timing_ms: Option<f64>) -> Self {
        Self {
            method: "globustvp".into(),
            r: rows(res.frame.matrix()),
            labels: res.labels.0.clone(),
            cost: Some(res.cost),
            certificates: res.certificates.clone(),
            two_vp: res.two_vp,
            timing_ms,
        }
    }

    pub fn from_frame(
        method: &str,
        frame: &ManhattanFrame,
        labels: &AssociationLabels,
        cost: Option<f64>,
        timing_ms: Option<f64>,
    ) -> Self {
        Self {
            method: method.into(),
            r: rows(frame.matrix()),
            labels: labels.0.clone(),
            cost,
            certificates: Vec::new(),
            two_vp: false,
            timing_ms,
        }
    }

    pub fn frame(&self) -> Result<ManhattanFrame> {
        frame_from_rows(&self.r, "R")
    }

    pub fn labels(&self) -> AssociationLabels {
        self.labels.clone().into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }
}

pub fn parse_result(text: &str) -> Result<ResultFile> {
    let res: ResultFile = serde_json::from_str(text).map_err(malformed)?;
    res.frame()?;
    Ok(res)
}
