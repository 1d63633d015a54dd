//! Grouping splats by identity, deleting groups and fine-tuning against edited views.

use serde::{Deserialize, Serialize};

use crate::dataset::SpectralDataset;
use crate::error::{Error, Result};
use crate::image::LabelImage;
use crate::losses::LossWeights;
use crate::math::argmax;
use crate::optim::{train, DensityConfig, TrainConfig, TrainResult};
use crate::raster::{render, CameraView, RasterConfig, RenderOutput};
use crate::scene::{IdentityClassifier, SpectralScene, ENCODING_DIM};
use crate::shading::ShadingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    /// Splats classified to the group with at least this confidence are deleted.
    pub confidence_threshold: f64,
    pub finetune_iterations: usize,
    pub freeze_geometry: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            finetune_iterations: 2000,
            freeze_geometry: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatClass {
    pub index: usize,
    pub group: usize,
    pub confidence: f64,
}

/// Argmax class (ties to the lowest id) and its probability for every splat in `band`.
pub fn classify_splats(scene: &SpectralScene, band: usize) -> Result<Vec<SplatClass>> {
    scene.ensure_band(band)?;
    let clf = &scene.classifiers[band];
    scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let p = clf.probabilities(&g.bands[band].encoding)?;
            let group = argmax(&p);
            Ok(SplatClass {
                index,
                group,
                confidence: p[group],
            })
        })
        .collect()
}

/// Removes every splat classified to `group` with confidence ≥ `threshold`.
/// Returns the new scene and the number of splats removed.
pub fn delete_group(
    scene: &SpectralScene,
    group: usize,
    band: usize,
    threshold: f64,
) -> Result<(SpectralScene, usize)> {
    let classes = scene
        .classifiers
        .get(band)
        .map_or(0, IdentityClassifier::num_classes);
    if group >= classes {
        return Err(Error::ClassOutOfRange { id: group, classes });
    }
    let doomed: Vec<bool> = classify_splats(scene, band)?
        .iter()
        .map(|c| c.group == group && c.confidence >= threshold)
        .collect();
    let removed = doomed.iter().filter(|&&d| d).count();
    Ok((scene.filtered(|i, _| !doomed[i]), removed))
}

/// Per-pixel class of a render: argmax of the classifier on the composited
/// feature where alpha reaches `alpha_threshold`, background (0) elsewhere.
pub fn pixel_labels(
    out: &RenderOutput,
    clf: &IdentityClassifier,
    alpha_threshold: f64,
) -> Result<LabelImage> {
    let (w, h) = (out.color.width(), out.color.height());
    if clf.num_classes() > 256 {
        return Err(Error::ClassOutOfRange {
            id: clf.num_classes() - 1,
            classes: 256,
        });
    }
    let mut labels = LabelImage::new(w, h);
    for p in 0..w * h {
        if out.alpha.data()[p] >= alpha_threshold {
            let e = &out.id_feature.data()[p * ENCODING_DIM..(p + 1) * ENCODING_DIM];
            labels.ids_mut()[p] = argmax(&clf.logits(e)?) as u8;
        }
    }
    Ok(labels)
}

/// Row-major pixel mask of `group` in one rendered view.
pub fn group_mask_render(
    scene: &SpectralScene,
    cam: &CameraView,
    band: usize,
    group: usize,
    alpha_threshold: f64,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<Vec<bool>> {
    let out = render(scene, cam, band, raster, shading)?;
    let labels = pixel_labels(&out, &scene.classifiers[band], alpha_threshold)?;
    Ok(labels
        .ids()
        .iter()
        .zip(out.alpha.data())
        .map(|(&id, &a)| a >= alpha_threshold && id as usize == group)
        .collect())
}

/// Continues training from `scene` on `edited`, which must share cameras and
/// bands with `original` when given.
#[allow(clippy::too_many_arguments)]
pub fn finetune_edit(
    scene: SpectralScene,
    edited: &SpectralDataset,
    original: Option<&SpectralDataset>,
    edit: &EditConfig,
    base: &TrainConfig,
    weights: &LossWeights,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<TrainResult> {
    if let Some(orig) = original {
        edited.ensure_compatible(orig)?;
    }
    if edited.band_table != scene.band_table {
        return Err(Error::CameraMismatch(
            "edited dataset bands differ from the scene".into(),
        ));
    }
    let cfg = TrainConfig {
        iterations: edit.finetune_iterations,
        warmup_iterations: 0,
        freeze_geometry: edit.freeze_geometry,
        density: DensityConfig {
            enabled: false,
            ..base.density.clone()
        },
        ..base.clone()
    };
    train(scene, edited, &cfg, weights, raster, shading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::BandTable;
    use crate::scene::SpectralGaussian;
    use crate::shading::EnvironmentLight;

    fn two_groups() -> SpectralScene {
        let mut gs = Vec::new();
        for (i, x) in [-0.5, -0.4, 0.4, 0.5].into_iter().enumerate() {
            let mut g = SpectralGaussian::new([x, 0.0, 0.0], 2);
            for b in &mut g.bands {
                b.encoding[i / 2] = 5.0;
            }
            gs.push(g);
        }
        let mut clf = IdentityClassifier::zeros(3);
        clf.weight[1][0] = 1.0;
        clf.weight[2][1] = 1.0;
        SpectralScene {
            band_table: BandTable::from_centers(&[500.0], 40.0).unwrap(),
            gaussians: gs,
            environments: vec![EnvironmentLight::constant(8, 4, 1, [1.0; 3]).unwrap()],
            classifiers: vec![clf; 2],
            full_priors_initialized: false,
        }
    }

    #[test]
    fn zero_classifier_ties_to_lowest_id() {
        let mut s = two_groups();
        s.classifiers = vec![IdentityClassifier::zeros(3); 2];
        for c in classify_splats(&s, 0).unwrap() {
            assert_eq!(c.group, 0);
            assert!((c.confidence - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn delete_removes_group_and_is_idempotent() {
        let s = two_groups();
        let (a, n) = delete_group(&s, 1, 0, 0.5).unwrap();
        assert_eq!((a.gaussians.len(), n), (2, 2));
        assert!(a.gaussians.iter().all(|g| g.mean[0] > 0.0));
        let (b, n2) = delete_group(&a, 1, 0, 0.5).unwrap();
        assert_eq!((b.gaussians.len(), n2), (2, 0));
        let (c, n3) = delete_group(&s, 1, 0, 1.1).unwrap();
        assert_eq!((c, n3), (s.clone(), 0));
        assert!(matches!(
            delete_group(&s, 3, 0, 0.5),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn classification_ignores_logit_shift() {
        let s = two_groups();
        let mut shifted = s.clone();
        for clf in &mut shifted.classifiers {
            clf.bias.iter_mut().for_each(|b| *b += 3.0);
        }
        let a = classify_splats(&s, 0).unwrap();
        let b = classify_splats(&shifted, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.group, y.group);
            assert!((x.confidence - y.confidence).abs() < 1e-12);
        }
    }
}
