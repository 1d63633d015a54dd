#![allow(clippy::needless_range_loop)]

mod common;

use spectral_splat::losses::{identity_3d_loss, sample_splats};
use spectral_splat::scene::ENCODING_DIM;

/// Exhaustive kNN/KL: full distance sort per splat and plain softmax ratios.
fn knn_kl_oracle(
    scene: &spectral_splat::scene::SpectralScene,
    band: usize,
    k: usize,
    picked: &[usize],
) -> f64 {
    let soft = |e: &[f64; ENCODING_DIM]| {
        let z: f64 = e.iter().map(|v| v.exp()).sum();
        e.map(|v| v.exp() / z)
    };
    let mut total = 0.0;
    for &j in picked {
        let mj = scene.gaussians[j].mean;
        let mut order: Vec<(f64, usize)> = (0..scene.gaussians.len())
            .filter(|&i| i != j)
            .map(|i| {
                let m = scene.gaussians[i].mean;
                ((0..3).map(|a| (m[a] - mj[a]).powi(2)).sum(), i)
            })
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p = soft(&scene.gaussians[j].bands[band].encoding);
        for &(_, i) in order.iter().take(k) {
            let q = soft(&scene.gaussians[i].bands[band].encoding);
            total += (0..ENCODING_DIM)
                .map(|c| p[c] * (p[c] / q[c]).ln())
                .sum::<f64>();
        }
    }
    total / (picked.len() * k) as f64
}

#[test]
fn knn_kl_matches_exhaustive_oracle() {
    for seed in 0..5 {
        let scene = common::random_scene(10, seed);
        for band in 0..scene.num_bands() {
            for k in [1, 3, 5] {
                let all: Vec<usize> = (0..10).collect();
                let got = identity_3d_loss(&scene, band, k, 1000, seed).unwrap().loss;
                let want = knn_kl_oracle(&scene, band, k, &all);
                assert!(
                    (got - want).abs() < 1e-10,
                    "seed {seed} band {band} k {k}: {got} vs {want}"
                );

                let picked = sample_splats(10, 4, seed);
                let got = identity_3d_loss(&scene, band, k, 4, seed).unwrap().loss;
                let want = knn_kl_oracle(&scene, band, k, &picked);
                assert!((got - want).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn knn_kl_gradient_matches_finite_differences() {
    let scene = common::random_scene(10, 3);
    let grad = identity_3d_loss(&scene, 0, 3, 1000, 0).unwrap().d_encoding;
    let h = 1e-6;
    for i in 0..10 {
        for c in 0..ENCODING_DIM {
            let mut s = scene.clone();
            s.gaussians[i].bands[0].encoding[c] += h;
            let up = identity_3d_loss(&s, 0, 3, 1000, 0).unwrap().loss;
            s.gaussians[i].bands[0].encoding[c] -= 2.0 * h;
            let down = identity_3d_loss(&s, 0, 3, 1000, 0).unwrap().loss;
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (numeric - grad[i][c]).abs() < 1e-7,
                "{i}/{c}: {numeric} vs {}",
                grad[i][c]
            );
        }
    }
}

#[test]
fn identical_encodings_have_zero_kl() {
    let mut scene = common::random_scene(10, 9);
    let e = scene.gaussians[0].bands[0].encoding;
    for g in &mut scene.gaussians {
        g.bands[0].encoding = e;
    }
    assert!(identity_3d_loss(&scene, 0, 4, 1000, 0).unwrap().loss.abs() < 1e-15);
    assert!(identity_3d_loss(&scene, 0, 10, 1000, 0).is_err());
}
