//! Gradients of the full band loss, Adam, the warm-up schedule and density control.

mod adam;
mod density;
mod priors;

pub use adam::{Adam, LearningRates};
pub use density::{densify_and_prune, DensityChange, DensityConfig, GradStats};
pub use priors::{averaged_appearance, init_full_spectra_priors};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::BandTable;
use crate::dataset::{DatasetView, SpectralDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{render_loss_band_with_grad, BandTarget, LossTerms, LossWeights};
use crate::math::Vec3;
use crate::raster::{render_backward, render_traced, CameraView, RasterConfig};
use crate::scene::{ParamGradients, ParamGroup, ParamLayout, SpectralScene};
use crate::shading::ShadingConfig;

/// Loss value and gradient of one band in one view.
pub fn backward(
    scene: &SpectralScene,
    cam: &CameraView,
    band: usize,
    target: &BandTarget,
    weights: &LossWeights,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<(LossTerms, ParamGradients)> {
    let (out, tape) = render_traced(scene, cam, band, raster, shading, false)?;
    let (terms, lg) = render_loss_band_with_grad(&out, target, weights, scene, band)?;
    let mut grads = render_backward(scene, cam, &tape, &lg.image, raster, shading)?;
    for (k, row) in lg.classifier_weight.iter().enumerate() {
        for (d, s) in grads
            .slot_mut(ParamGroup::ClassifierWeight(band), k)
            .iter_mut()
            .zip(row)
        {
            *d += s;
        }
        grads.slot_mut(ParamGroup::ClassifierBias(band), k)[0] += lg.classifier_bias[k];
    }
    for (i, e) in lg.encodings.iter().enumerate() {
        for (d, s) in grads
            .slot_mut(ParamGroup::Encoding(band), i)
            .iter_mut()
            .zip(e)
        {
            *d += s;
        }
    }
    grads.ensure_finite()?;
    Ok((terms, grads))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSchedule {
    /// Every active band contributes to every step.
    #[default]
    All,
    /// One active band per step, in turn.
    Cycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Steps over the narrow bands only; the full-spectra band joins afterwards.
    pub warmup_iterations: usize,
    pub seed: u64,
    /// Seed the full-spectra band from the narrow-band means when it joins.
    pub use_priors: bool,
    /// Keep means, scales, rotations, opacities and normals fixed.
    pub freeze_geometry: bool,
    pub band_schedule: BandSchedule,
    pub lr: LearningRates,
    pub density: DensityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            warmup_iterations: 1000,
            seed: 0,
            use_priors: true,
            freeze_geometry: false,
            band_schedule: BandSchedule::All,
            lr: LearningRates::default(),
            density: DensityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations > 0 && self.warmup_iterations >= self.iterations {
            return Err(Error::Config(format!(
                "warmup_iterations ({}) must be below iterations ({})",
                self.warmup_iterations, self.iterations
            )));
        }
        self.lr.validate()?;
        self.density.validate()
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub band: usize,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub scene: SpectralScene,
    pub log: Vec<LossRecord>,
}

/// 1.1 × the largest distance of a camera centre from their centroid; position
/// learning rates are multiplied by it so they are independent of scene units.
pub fn camera_extent(views: &[&DatasetView]) -> f64 {
    let centers: Vec<Vec3> = views.iter().map(|v| v.camera.position()).collect();
    let centroid = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
    let radius = centers
        .iter()
        .map(|c| (c - centroid).norm())
        .fold(0.0, f64::max);
    if radius > 0.0 {
        1.1 * radius
    } else {
        1.0
    }
}

fn step_seed(seed: u64, iteration: usize, band: usize) -> u64 {
    seed ^ ((iteration as u64) << 16 | band as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Optimizes `scene` against the training views of `dataset`.
pub fn train(
    mut scene: SpectralScene,
    dataset: &SpectralDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    weights.validate()?;
    scene.validate()?;
    if shading.use_quadrature {
        return Err(Error::Config(
            "training needs the prefiltered specular path".into(),
        ));
    }
    if dataset.band_table != scene.band_table {
        return Err(Error::CameraMismatch(
            "dataset and scene band tables differ".into(),
        ));
    }
    let views = dataset.split(Split::Train);
    if views.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let extent = camera_extent(&views);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let narrow = scene.band_table.narrow_indices();
    let full = scene.band_table.full_index();
    let mut layout = ParamLayout::of(&scene);
    let mut adam = Adam::new(layout.len());
    let mut stats = GradStats::new(scene.gaussians.len());
    let mut log = Vec::new();
    let mut cycle = 0usize;

    for it in 0..cfg.iterations {
        if it == cfg.warmup_iterations && cfg.use_priors && !scene.full_priors_initialized {
            init_full_spectra_priors(&mut scene)?;
        }
        let mut active = narrow.clone();
        if scene.full_priors_initialized || it >= cfg.warmup_iterations {
            active.push(full);
        }
        let view = views[rng.random_range(0..views.len())];
        let bands = match cfg.band_schedule {
            BandSchedule::All => active,
            BandSchedule::Cycle => {
                cycle += 1;
                vec![active[(cycle - 1) % active.len()]]
            }
        };
        let mut grads = ParamGradients::zeros(layout.clone());
        for band in bands {
            let target = BandTarget {
                reference: &view.images[band],
                mask: view.masks[band].as_ref(),
                seed: step_seed(cfg.seed, it, band),
            };
            let (terms, g) = backward(
                &scene,
                &view.camera,
                band,
                &target,
                weights,
                raster,
                shading,
            )?;
            grads.add_scaled(&g, 1.0);
            log.push(LossRecord {
                iteration: it,
                band,
                terms,
            });
        }
        stats.record(&grads);

        let mut lrs = cfg.lr.per_param(&layout, it, cfg.iterations, |g| {
            !(cfg.freeze_geometry && g.is_geometry())
        });
        for (group, range) in layout.groups() {
            if matches!(group, ParamGroup::Mean) {
                lrs[range.clone()].iter_mut().for_each(|v| *v *= extent);
            }
        }
        let mut flat = scene.to_flat(&layout);
        adam.step(&mut flat, &grads.values, &lrs);
        for (group, range) in layout.groups() {
            if matches!(group, ParamGroup::Environment(_)) {
                flat[range.clone()].iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        scene.set_flat(&layout, &flat);
        scene.normalize_rotations();

        if cfg.density.due(it) {
            let change = densify_and_prune(&scene, &stats, &cfg.density);
            log::debug!(
                "iteration {it}: cloned {}, split {}, pruned {}",
                change.cloned,
                change.split,
                change.pruned
            );
            let new_layout = ParamLayout::of(&change.scene);
            let map = remap_indices(&layout, &new_layout, &change.sources);
            adam = adam.remap(new_layout.len(), |k| map[k]);
            scene = change.scene;
            layout = new_layout;
            stats = GradStats::new(scene.gaussians.len());
        }
    }
    Ok(TrainResult { scene, log })
}

/// For each flat index of `new`, the flat index of `old` holding the same value.
fn remap_indices(
    old: &ParamLayout,
    new: &ParamLayout,
    sources: &[Option<usize>],
) -> Vec<Option<usize>> {
    let mut map = vec![None; new.len()];
    for (group, range) in new.groups() {
        let w = group.width();
        let old_start = old.range(*group).start;
        let per_splat = !matches!(
            group,
            ParamGroup::ClassifierWeight(_)
                | ParamGroup::ClassifierBias(_)
                | ParamGroup::Environment(_)
        );
        for (local, slot) in map[range.clone()].iter_mut().enumerate() {
            *slot = if per_splat {
                sources[local / w].map(|s| old_start + s * w + local % w)
            } else {
                Some(old_start + local)
            };
        }
    }
    map
}

/// Writes the loss log as CSV: `iteration,band,l1,dssim,identity_2d,identity_3d,total`.
pub fn write_loss_log(path: &Path, log: &[LossRecord], bands: &BandTable) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let names = bands.names();
    let mut body = String::from("iteration,band,l1,dssim,identity_2d,identity_3d,total\n");
    for r in log {
        let t = &r.terms;
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, names[r.band], t.l1, t.dssim, t.identity_2d, t.identity_3d, t.total
        ));
    }
    f.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
