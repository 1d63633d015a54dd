//! Procedural ground-truth scenes and their rendered datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetView, SpectralDataset, Split};
use crate::color::BandTable;
use crate::edit::pixel_labels;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::math::{logit, Vec3};
use crate::optim::averaged_appearance;
use crate::raster::{render, CameraView, RasterConfig};
use crate::scene::{IdentityClassifier, SpectralGaussian, SpectralScene, ENCODING_DIM};
use crate::shading::{EnvironmentLight, ShadingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub splats_per_group: usize,
    pub band_centers_nm: Vec<f64>,
    pub band_width_nm: f64,
    pub train_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub camera_radius: f64,
    /// Radius of each splat cluster.
    pub cluster_radius: f64,
    /// Std of the logit offset of the full-spectra appearance from the narrow-band mean.
    pub full_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_groups: 2,
            splats_per_group: 15,
            band_centers_nm: vec![460.0, 500.0, 540.0, 580.0, 620.0],
            band_width_nm: 40.0,
            train_views: 16,
            test_views: 4,
            width: 64,
            height: 64,
            fov_x: 0.8,
            camera_radius: 2.6,
            cluster_radius: 0.4,
            full_offset: 0.3,
            seed: 7,
        }
    }
}

/// Magnitudes (standard deviations) of the noise added by [`perturb_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub normal: f64,
    pub brdf: f64,
    pub encoding: f64,
    pub classifier: f64,
    /// Additive radiance noise; the result is clamped at zero.
    pub environment: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            mean: 0.02,
            log_scale: 0.3,
            rotation: 0.2,
            opacity: 1.0,
            normal: 0.3,
            brdf: 1.5,
            encoding: 1.0,
            classifier: 1.0,
            environment: 0.3,
        }
    }
}

impl PerturbConfig {
    pub fn zero() -> Self {
        Self {
            mean: 0.0,
            log_scale: 0.0,
            rotation: 0.0,
            opacity: 0.0,
            normal: 0.0,
            brdf: 0.0,
            encoding: 0.0,
            classifier: 0.0,
            environment: 0.0,
        }
    }
}

/// Encoding strength and classifier gain of the ground-truth identity model.
const ID_STRENGTH: f64 = 4.0;

fn random_env(rng: &mut ChaCha8Rng, shading: &ShadingConfig) -> Result<EnvironmentLight> {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..0.9));
    let slope: [[f64; 3]; 3] =
        std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.25..0.25)));
    let sun = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    let sun_power = rng.random_range(0.5..1.2);
    EnvironmentLight::from_fn(
        shading.env_width,
        shading.env_height,
        shading.env_levels,
        |d| {
            let lobe = sun_power * ((d.dot(&sun) - 1.0) / 0.25).exp();
            std::array::from_fn(|c| {
                (base[c] + slope[c][0] * d.x + slope[c][1] * d.y + slope[c][2] * d.z + lobe)
                    .max(0.0)
            })
        },
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let q: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

fn cameras(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(String, Split, CameraView)>> {
    let total = cfg.train_views + cfg.test_views;
    let test_every = total.checked_div(cfg.test_views).unwrap_or(usize::MAX);
    let mut out = Vec::with_capacity(total);
    let mut tests = 0;
    for i in 0..total {
        let az = std::f64::consts::TAU * (i as f64 + rng.random_range(-0.3..0.3)) / total as f64;
        let el: f64 = rng.random_range(-0.3..0.6);
        let eye = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * cfg.camera_radius;
        let cam = CameraView::look_at(
            eye,
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            cfg.fov_x,
            cfg.width,
            cfg.height,
            0.1,
            10.0 * cfg.camera_radius,
        )?
        .pose_representable()?;
        let is_test = tests < cfg.test_views && i % test_every == test_every - 1;
        if is_test {
            tests += 1;
        }
        let split = if is_test { Split::Test } else { Split::Train };
        out.push((format!("view_{i:03}"), split, cam));
    }
    Ok(out)
}

/// Ground-truth scene of well-separated splat clusters plus its rendered dataset.
pub fn synth_scene(
    cfg: &SynthConfig,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<(SpectralScene, SpectralDataset)> {
    if cfg.n_groups == 0 || cfg.splats_per_group == 0 {
        return Err(Error::Config(
            "synth needs at least one group and one splat per group".into(),
        ));
    }
    if cfg.n_groups > ENCODING_DIM || cfg.n_groups >= 255 {
        return Err(Error::Config(format!("at most {ENCODING_DIM} groups")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let band_table = BandTable::from_centers(&cfg.band_centers_nm, cfg.band_width_nm)?;
    let n_bands = band_table.len();
    let narrow = band_table.narrow_indices();
    let full = band_table.full_index();
    let classes = cfg.n_groups + 1;

    let mut gaussians = Vec::new();
    let spacing = 3.6 * cfg.cluster_radius;
    for g in 0..cfg.n_groups {
        let centre = Vec3::new(
            (g as f64 - (cfg.n_groups - 1) as f64 / 2.0) * spacing,
            0.0,
            0.0,
        );
        // Per-band group colour; splats vary around it.
        let colour: Vec<[f64; 3]> = (0..n_bands)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5)))
            .collect();
        for _ in 0..cfg.splats_per_group {
            let offset = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() <= 1.0 {
                    break v * cfg.cluster_radius;
                }
            };
            let mean = centre + offset;
            let mut s = SpectralGaussian::new([mean.x, mean.y, mean.z], n_bands);
            s.log_scale = [
                rng.random_range(0.06f64..0.11).ln(),
                rng.random_range(0.06f64..0.11).ln(),
                rng.random_range(0.02f64..0.04).ln(),
            ];
            s.rotation = random_rotation(&mut rng);
            s.opacity_logit = rng.random_range(1.5..3.0);
            s.normal_params = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
            for &b in &narrow {
                let app = &mut s.bands[b];
                app.diffuse_logits =
                    std::array::from_fn(|c| colour[b][c] + rng.random_range(-0.3..0.3));
                app.specular_logits = std::array::from_fn(|_| rng.random_range(-2.5..-0.5));
                app.roughness_logit = logit(rng.random_range(0.3..0.8));
                app.encoding = [0.0; ENCODING_DIM];
                app.encoding[g] = ID_STRENGTH;
            }
            gaussians.push(s);
        }
    }
    let mut scene = SpectralScene {
        band_table: band_table.clone(),
        gaussians,
        environments: Vec::new(),
        classifiers: Vec::new(),
        full_priors_initialized: true,
    };
    let offset =
        Normal::new(0.0, cfg.full_offset.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for i in 0..scene.gaussians.len() {
        let mut app = averaged_appearance(&scene, i);
        for v in app
            .diffuse_logits
            .iter_mut()
            .chain(app.specular_logits.iter_mut())
        {
            *v += offset.sample(&mut rng);
        }
        app.roughness_logit += offset.sample(&mut rng);
        scene.gaussians[i].bands[full] = app;
    }
    let mut clf = IdentityClassifier::zeros(classes);
    for k in 1..classes {
        clf.weight[k][k - 1] = ID_STRENGTH;
    }
    scene.classifiers = vec![clf; n_bands];
    scene.environments = if shading.shared_env {
        vec![random_env(&mut rng, shading)?]
    } else {
        let mut envs: Vec<EnvironmentLight> = (0..n_bands)
            .map(|_| random_env(&mut rng, shading))
            .collect::<Result<_>>()?;
        let len = envs[0].base().data().len();
        let mean: Vec<f64> = (0..len)
            .map(|i| {
                narrow
                    .iter()
                    .map(|&b| envs[b].base().data()[i])
                    .sum::<f64>()
                    / narrow.len() as f64
            })
            .collect();
        envs[full].base_mut().data_mut().copy_from_slice(&mean);
        envs[full].rebuild_mips();
        envs
    };
    scene.validate()?;

    let threshold = LossWeights::default().alpha_threshold;
    let mut views = Vec::new();
    for (name, split, camera) in cameras(cfg, &mut rng)? {
        let mut images = Vec::with_capacity(n_bands);
        let mut masks = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let out = render(&scene, &camera, b, raster, shading)?;
            masks.push(Some(pixel_labels(&out, &scene.classifiers[b], threshold)?));
            images.push(out.color);
        }
        views.push(DatasetView {
            name,
            split,
            camera,
            images,
            masks,
        });
    }
    let ds = SpectralDataset {
        band_table,
        num_classes: classes,
        views,
    };
    ds.validate()?;
    Ok((scene, ds))
}

/// Adds seeded Gaussian noise to every learnable parameter.
pub fn perturb_scene(
    scene: &SpectralScene,
    mag: &PerturbConfig,
    seed: u64,
) -> Result<SpectralScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let noise = |sigma: f64, rng: &mut ChaCha8Rng| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
        } else {
            0.0
        }
    };
    for g in &mut out.gaussians {
        g.mean
            .iter_mut()
            .for_each(|v| *v += noise(mag.mean, &mut rng));
        g.log_scale
            .iter_mut()
            .for_each(|v| *v += noise(mag.log_scale, &mut rng));
        g.rotation
            .iter_mut()
            .for_each(|v| *v += noise(mag.rotation, &mut rng));
        g.opacity_logit += noise(mag.opacity, &mut rng);
        g.normal_params
            .iter_mut()
            .for_each(|v| *v += noise(mag.normal, &mut rng));
        for app in &mut g.bands {
            app.diffuse_logits
                .iter_mut()
                .for_each(|v| *v += noise(mag.brdf, &mut rng));
            app.specular_logits
                .iter_mut()
                .for_each(|v| *v += noise(mag.brdf, &mut rng));
            app.roughness_logit += noise(mag.brdf, &mut rng);
            app.encoding
                .iter_mut()
                .for_each(|v| *v += noise(mag.encoding, &mut rng));
        }
    }
    for clf in &mut out.classifiers {
        for row in &mut clf.weight {
            row.iter_mut()
                .for_each(|v| *v += noise(mag.classifier, &mut rng));
        }
        clf.bias
            .iter_mut()
            .for_each(|v| *v += noise(mag.classifier, &mut rng));
    }
    if mag.environment > 0.0 {
        for env in &mut out.environments {
            for v in env.base_mut().data_mut() {
                *v = (*v + noise(mag.environment, &mut rng)).max(0.0);
            }
            env.rebuild_mips();
        }
    }
    if mag.rotation > 0.0 {
        out.normalize_rotations();
    }
    Ok(out)
}
