//! Brute-force per-pixel renderer compared against the tiled rasterizer.

mod common;

use common::{brute_force, max_abs_diff};
use spectral_splat::raster::{render, RasterConfig};
use spectral_splat::shading::ShadingConfig;

#[test]
fn tiled_matches_brute_force_with_same_termination() {
    let scene = common::random_scene(60, 3);
    let cam = common::camera(48, 40);
    let out = render(
        &scene,
        &cam,
        0,
        &RasterConfig::default(),
        &ShadingConfig::default(),
    )
    .unwrap();
    let (color, alpha) = brute_force(&scene, &cam, true);
    assert!(max_abs_diff(out.color.data(), &color) <= 1e-12);
    assert!(max_abs_diff(out.alpha.data(), &alpha) <= 1e-12);
}

#[test]
fn tiled_matches_brute_force_without_termination() {
    let cam = common::camera(32, 32);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let scene = common::random_scene(50, seed);
        let out = render(
            &scene,
            &cam,
            0,
            &RasterConfig::default(),
            &ShadingConfig::default(),
        )
        .unwrap();
        let (color, alpha) = brute_force(&scene, &cam, false);
        worst = worst
            .max(max_abs_diff(out.color.data(), &color))
            .max(max_abs_diff(out.alpha.data(), &alpha));
    }
    assert!(worst <= 1e-6, "max difference {worst}");
}

#[test]
fn bitwise_identical_across_thread_counts() {
    let scene = common::random_scene(50, 11);
    let cam = common::camera(32, 32);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                render(
                    &scene,
                    &cam,
                    0,
                    &RasterConfig::default(),
                    &ShadingConfig::default(),
                )
                .unwrap()
            })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.color.data(), b.color.data());
    assert_eq!(a.alpha.data(), b.alpha.data());
    assert_eq!(a.id_feature.data(), b.id_feature.data());
}
