//! Synthetic Manhattan scenes: three orthogonal directions under a uniform
//! random rotation, inlier segments lying on lines through their vanishing
//! points, and uniformly random outlier segments.

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{residual, CameraIntrinsics, Label, LineObservation, ManhattanFrame};

const MAX_ATTEMPTS: usize = 1000;
/// Outliers must satisfy `|dᵀn| ≥ OUTLIER_MARGIN · c` for every planted
/// direction; after `MAX_ATTEMPTS` draws the margin drops to 1.
const OUTLIER_MARGIN: f64 = 1.5;
/// Focal length of the York Urban images (640×480).
pub const YUD_FOCAL: f64 = 674.918;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_lines: usize,
    pub noise_sigma_px: f64,
    pub outlier_ratio: f64,
    pub width: f64,
    pub height: f64,
    pub focal: f64,
    /// Threshold used to keep outliers away from every planted direction.
    pub c: f64,
    /// Redraw outliers until they are farther than `c` from all planted
    /// directions.
    pub distinguishable_outliers: bool,
    pub min_length_px: f64,
    pub max_length_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_lines: 60,
            noise_sigma_px: 0.0,
            outlier_ratio: 0.0,
            width: 640.0,
            height: 480.0,
            focal: 800.0,
            c: 0.03,
            distinguishable_outliers: true,
            min_length_px: 30.0,
            max_length_px: 150.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// 640×480 with the York Urban focal length.
    pub fn yud_like() -> Self {
        Self {
            focal: YUD_FOCAL,
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.focal, self.focal, self.width / 2.0, self.height / 2.0)
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_ratio * self.n_lines as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lines < 6 {
            return Err(Error::InvalidConfig(format!(
                "n_lines must be at least 6, got {}",
                self.n_lines
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return Err(Error::InvalidConfig(format!(
                "outlier_ratio must lie in [0, 1), got {}",
                self.outlier_ratio
            )));
        }
        if !(self.noise_sigma_px >= 0.0) || !self.noise_sigma_px.is_finite() {
            return Err(Error::InvalidConfig("noise_sigma_px must be finite and >= 0".into()));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        if !(self.min_length_px > 0.0 && self.min_length_px <= self.max_length_px) {
            return Err(Error::InvalidConfig("segment length range is empty".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig("c must be positive".into()));
        }
        let inliers = self.n_lines - self.outlier_count();
        if inliers < 6 {
            return Err(Error::InvalidConfig(format!(
                "{inliers} inlier lines cannot give every direction two lines"
            )));
        }
        self.intrinsics()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub lines: Vec<LineObservation>,
    pub frame_gt: ManhattanFrame,
}

impl Scene {
    pub fn gt_labels(&self) -> crate::geometry::AssociationLabels {
        self.lines
            .iter()
            .map(|l| l.gt_label.unwrap_or(Label::Outlier))
            .collect::<Vec<_>>()
            .into()
    }
}

fn random_rotation(rng: &mut impl Rng) -> ManhattanFrame {
    let q = Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    ManhattanFrame::new(r).expect("unit quaternion gives a rotation")
}

/// Dirichlet(1,1,1) split of `total` with at least two per direction.
fn split_counts(total: usize, rng: &mut impl Rng) -> [usize; 3] {
    for _ in 0..MAX_ATTEMPTS {
        let w: [f64; 3] = [Exp1.sample(rng), Exp1.sample(rng), Exp1.sample(rng)];
        let sum: f64 = w.iter().sum();
        let exact = w.map(|x| x / sum * total as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor()))
        });
        let missing = total - counts.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            counts[i] += 1;
        }
        if counts.iter().all(|&k| k >= 2) {
            return counts;
        }
    }
    [total / 3 + usize::from(total % 3 > 0), total / 3 + usize::from(total % 3 > 1), total / 3]
}

fn inside(p: &Vector2<f64>, width: f64, height: f64) -> bool {
    (0.0..=width).contains(&p.x) && (0.0..=height).contains(&p.y)
}

/// A segment on an image line through the projection of `d`.
fn inlier_segment(
    d: &Vector3<f64>,
    k: &CameraIntrinsics,
    config: &SceneConfig,
    rng: &mut impl Rng,
) -> (Vector2<f64>, Vector2<f64>) {
    let v = k.project_direction(d);
    let (min_len, max_len) = (config.min_length_px, config.max_length_px);
    for attempt in 0.. {
        // Shorter segments are allowed once the nominal range keeps failing.
        let scale = if attempt < MAX_ATTEMPTS { 1.0 } else { 0.25 };
        let p1 = Vector2::new(rng.random_range(0.0..config.width), rng.random_range(0.0..config.height));
        let (toward, to_vp) = if v.z.abs() > 1e-12 * v.norm() {
            let vp = Vector2::new(v.x / v.z, v.y / v.z);
            let u = vp - p1;
            (u / u.norm(), u.norm())
        } else {
            let u = Vector2::new(v.x, v.y);
            (u / u.norm(), f64::INFINITY)
        };
        if !toward.iter().all(|x| x.is_finite()) {
            continue;
        }
        let len = rng.random_range(min_len * scale..=max_len * scale);
        let forward = rng.random_bool(0.5);
        if forward && len >= to_vp - 1.0 {
            continue;
        }
        let p2 = p1 + toward * if forward { len } else { -len };
        if inside(&p2, config.width, config.height) {
            return (p1, p2);
        }
    }
    unreachable!()
}

fn outlier_segment(
    frame: &ManhattanFrame,
    k: &CameraIntrinsics,
    config: &SceneConfig,
    rng: &mut impl Rng,
) -> LineObservation {
    let mut attempt = 0;
    loop {
        let p1 = Vector2::new(rng.random_range(0.0..config.width), rng.random_range(0.0..config.height));
        let p2 = Vector2::new(rng.random_range(0.0..config.width), rng.random_range(0.0..config.height));
        let Ok(line) = LineObservation::from_endpoints(p1, p2, k, Some(Label::Outlier)) else {
            continue;
        };
        if !config.distinguishable_outliers {
            return line;
        }
        let margin = if attempt < MAX_ATTEMPTS { OUTLIER_MARGIN } else { 1.0 };
        let bound = (margin * config.c).powi(2);
        if frame.directions().iter().all(|d| residual(d, &line.n) > bound) {
            return line;
        }
        attempt += 1;
    }
}

/// Generates a scene; lines are ordered VP1, VP2, VP3, then outliers.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let k = config.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let frame = random_rotation(&mut rng);
    let n_out = config.outlier_count();
    let counts = split_counts(config.n_lines - n_out, &mut rng);
    let noise = Normal::new(0.0, config.noise_sigma_px).expect("validated sigma");

    let mut lines = Vec::with_capacity(config.n_lines);
    for (i, &count) in counts.iter().enumerate() {
        let d = frame.direction(i);
        let label = Label::from_vp_index(i);
        let mut made = 0;
        while made < count {
            let (mut p1, mut p2) = inlier_segment(&d, &k, config, &mut rng);
            if config.noise_sigma_px > 0.0 {
                p1 += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                p2 += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            if let Ok(line) = LineObservation::from_endpoints(p1, p2, &k, Some(label)) {
                lines.push(line);
                made += 1;
            }
        }
    }
    for _ in 0..n_out {
        lines.push(outlier_segment(&frame, &k, config, &mut rng));
    }
    Ok(Scene {
        intrinsics: k,
        lines,
        frame_gt: frame,
    })
}
