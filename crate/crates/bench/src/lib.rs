//! Fixtures shared by the benchmarks.

use sarriver::scene::{observe, river_scene, RiverScene, SceneConfig};
use sarriver::{Raster, SpeckleConfig};

/// Reference river scene of the given size with correlated 4-look speckle.
pub fn speckled_scene(size: usize) -> (RiverScene, Raster) {
    let cfg = SceneConfig {
        width: size,
        height: size,
        meander_amplitude: size as f64 / 12.0,
        meander_period: size as f64 * 0.66,
        ..SceneConfig::default()
    };
    let scene = river_scene(&cfg).expect("valid scene");
    let noisy = observe(&scene.reflectivity, &SpeckleConfig::new(4.0, 0.7, 11).expect("valid speckle"))
        .expect("speckle");
    (scene, noisy)
}
