//! Fixed inputs shared by the benchmarks, so that every run measures the same
//! work.

use crosswalk_core::{generate_scene, Point2, SceneParams};

/// Seed used for every generated benchmark input.
pub const SEED: u64 = 42;

/// Detections of the default square scene, scaled to `detections` points.
pub fn square_scene(detections: usize) -> Vec<Point2> {
    let params = SceneParams {
        detections,
        ..SceneParams::default()
    };
    generate_scene(&params, SEED)
        .expect("default scene parameters are valid")
        .points()
}

/// `n` points scattered around the line y = 0.5 x + 1.
pub fn noisy_line(n: usize) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let x = i as f64 * 0.05;
            // Deterministic, roughly uniform jitter in [-0.5, 0.5).
            let jitter = ((i as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0 - 0.5;
            Point2::new(x, 0.5 * x + 1.0 + jitter)
        })
        .collect()
}
