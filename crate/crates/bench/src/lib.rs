//! Fixtures shared by the benchmarks.

use globustvp::synth::{generate_scene, SceneConfig};
use globustvp::LineObservation;

/// Lines of a seeded synthetic scene.
pub fn scene_lines(n_lines: usize, sigma: f64, outlier_ratio: f64, seed: u64) -> Vec<LineObservation> {
    generate_scene(&SceneConfig {
        n_lines,
        noise_sigma_px: sigma,
        outlier_ratio,
        seed,
        ..SceneConfig::default()
    })
    .expect("valid scene config")
    .lines
}
