#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_splat::color::BandTable;
use spectral_splat::image::{Image, LabelImage};
use spectral_splat::losses::{render_loss_band, BandTarget, LossWeights};
use spectral_splat::math::Vec3;
use spectral_splat::optim::backward;
use spectral_splat::raster::{
    prepare_splats, render_traced, CameraView, RasterConfig, RenderOutput,
};
use spectral_splat::scene::{
    IdentityClassifier, ParamGradients, ParamLayout, SpectralGaussian, SpectralScene, ENCODING_DIM,
};
use spectral_splat::shading::{EnvironmentLight, ShadingConfig};

pub fn smooth_env(w: usize, h: usize, levels: usize) -> EnvironmentLight {
    EnvironmentLight::from_fn(w, h, levels, |d| {
        [
            0.7 + 0.4 * d.y,
            0.6 + 0.3 * d.x - 0.2 * d.z,
            0.5 - 0.2 * d.x + 0.3 * d.z,
        ]
    })
    .unwrap()
}

pub fn camera(w: usize, h: usize) -> CameraView {
    CameraView::look_at(
        Vec3::new(0.3, -0.2, 3.0),
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        0.8,
        w,
        h,
        0.1,
        10.0,
    )
    .unwrap()
}

/// Random scene with one narrow band plus the full band.
pub fn random_scene(n: usize, seed: u64) -> SpectralScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_table = BandTable::from_centers(&[550.0], 40.0).unwrap();
    let bands = band_table.len();
    let gaussians = (0..n)
        .map(|_| {
            let mean = [0, 1, 2].map(|_| rng.random_range(-0.5..0.5));
            let mut g = SpectralGaussian::new(mean, bands);
            g.log_scale = [0, 1, 2].map(|_| rng.random_range(-3.0..-1.8));
            g.rotation = [0, 1, 2, 3].map(|_| rng.random_range(-1.0..1.0));
            let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.rotation = g.rotation.map(|v| v / norm);
            g.opacity_logit = rng.random_range(-1.0..2.0);
            g.normal_params = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            for app in &mut g.bands {
                app.diffuse_logits = [0, 1, 2].map(|_| rng.random_range(-2.0..1.0));
                app.specular_logits = [0, 1, 2].map(|_| rng.random_range(-2.0..0.5));
                app.roughness_logit = rng.random_range(-0.5..1.5);
                for e in app.encoding.iter_mut() {
                    *e = rng.random_range(-1.0..1.0);
                }
            }
            g
        })
        .collect();
    let classifiers = (0..bands)
        .map(|_| {
            let mut c = IdentityClassifier::zeros(3);
            for row in &mut c.weight {
                *row = [0.0; ENCODING_DIM].map(|_| rng.random_range(-1.0..1.0));
            }
            c
        })
        .collect();
    SpectralScene {
        band_table,
        gaussians,
        environments: (0..bands).map(|_| smooth_env(32, 16, 3)).collect(),
        classifiers,
        full_priors_initialized: false,
    }
}

/// Every pixel visits every splat in depth order; optional early termination.
pub fn brute_force(
    scene: &SpectralScene,
    cam: &CameraView,
    early_exit: bool,
) -> (Vec<f64>, Vec<f64>) {
    let rc = RasterConfig::default();
    let splats = prepare_splats(scene, cam, 0, &rc, &ShadingConfig::default()).unwrap();
    let mut color = vec![0.0; cam.width * cam.height * 3];
    let mut alpha = vec![0.0; cam.width * cam.height];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            for s in &splats {
                let p = &s.projected;
                let (dx, dy) = (px - p.mean2d[0], py - p.mean2d[1]);
                let q = p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
                if q > 9.0 {
                    continue;
                }
                let a = (s.opacity * (-0.5 * q).exp()).min(0.999);
                if a < 1.0 / 255.0 {
                    continue;
                }
                let i = (y * cam.width + x) * 3;
                for c in 0..3 {
                    color[i + c] += s.shading.color[c] * a * t;
                }
                t *= 1.0 - a;
                if early_exit && t < 1e-4 {
                    break;
                }
            }
            alpha[y * cam.width + x] = 1.0 - t;
        }
    }
    (color, alpha)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A camera with random reference images and masks for every band.
pub struct GradCase {
    pub cam: CameraView,
    pub refs: Vec<Image>,
    pub masks: Vec<LabelImage>,
}

impl GradCase {
    pub fn random(scene: &SpectralScene, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = size * size;
        let refs = (0..scene.num_bands())
            .map(|_| {
                Image::from_vec(
                    size,
                    size,
                    3,
                    (0..3 * n).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let classes = scene.num_classes() as u8;
        let masks = (0..scene.num_bands())
            .map(|_| {
                LabelImage::from_vec(
                    size,
                    size,
                    (0..n).map(|_| rng.random_range(0..classes)).collect(),
                )
                .unwrap()
            })
            .collect();
        Self {
            cam: camera(size, size),
            refs,
            masks,
        }
    }

    pub fn target(&self, band: usize) -> BandTarget<'_> {
        BandTarget {
            reference: &self.refs[band],
            mask: Some(&self.masks[band]),
            seed: 17 + band as u64,
        }
    }

    /// Summed loss over all bands, with per-pixel contribution lists.
    pub fn loss(&self, scene: &SpectralScene, w: &LossWeights) -> (f64, Vec<RenderOutput>) {
        let (rc, sc) = (RasterConfig::default(), ShadingConfig::default());
        let mut total = 0.0;
        let mut outs = Vec::new();
        for band in 0..scene.num_bands() {
            let out = render_traced(scene, &self.cam, band, &rc, &sc, true)
                .unwrap()
                .0;
            total += render_loss_band(&out, &self.target(band), w, scene, band)
                .unwrap()
                .total;
            outs.push(out);
        }
        (total, outs)
    }

    pub fn gradients(&self, scene: &SpectralScene, w: &LossWeights) -> ParamGradients {
        let (rc, sc) = (RasterConfig::default(), ShadingConfig::default());
        let mut grads = ParamGradients::zeros(ParamLayout::of(scene));
        for band in 0..scene.num_bands() {
            let (_, g) = backward(scene, &self.cam, band, &self.target(band), w, &rc, &sc).unwrap();
            grads.add_scaled(&g, 1.0);
        }
        grads
    }
}

/// Which splats each pixel composites and which pixels enter the identity term.
fn discrete_state(outs: &[RenderOutput], w: &LossWeights) -> Vec<Vec<u32>> {
    let mut state = Vec::new();
    for out in outs {
        for px in out.contributions.as_ref().unwrap() {
            state.push(px.iter().map(|&(i, _)| i).collect());
        }
        state.push(
            out.alpha
                .data()
                .iter()
                .map(|&a| (a >= w.alpha_threshold) as u32)
                .collect(),
        );
    }
    state
}

pub struct GradReport {
    pub checked: usize,
    pub skipped: Vec<String>,
    pub failures: Vec<String>,
    /// Largest error as a fraction of its tolerance.
    pub worst_ratio: f64,
}

/// Central differences on every parameter. Parameters whose perturbation
/// changes the composited splat sets or the identity pixel set are skipped.
pub fn check_loss_gradients(
    scene: &SpectralScene,
    case: &GradCase,
    w: &LossWeights,
    h: f64,
    rel: f64,
    abs: f64,
) -> GradReport {
    let grads = case.gradients(scene, w);
    let layout = ParamLayout::of(scene);
    let mut probe = scene.clone();
    let mut report = GradReport {
        checked: layout.len(),
        skipped: Vec::new(),
        failures: Vec::new(),
        worst_ratio: 0.0,
    };
    for k in 0..layout.len() {
        let x = scene.get_param(&layout, k);
        probe.set_param(&layout, k, x + h);
        let (fp, op) = case.loss(&probe, w);
        probe.set_param(&layout, k, x - h);
        let (fm, om) = case.loss(&probe, w);
        probe.set_param(&layout, k, x);
        let (group, range) = layout.group_of(k).unwrap();
        let name = format!("{group}[{}]", k - range.start);
        if discrete_state(&op, w) != discrete_state(&om, w) {
            report.skipped.push(name);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = grads.values[k];
        let err = (a - numeric).abs();
        let tol = (rel * a.abs().max(numeric.abs())).max(abs);
        report.worst_ratio = report.worst_ratio.max(err / tol);
        if err > tol {
            report
                .failures
                .push(format!("{name}: analytic {a:e} numeric {numeric:e}"));
        }
    }
    report
}
