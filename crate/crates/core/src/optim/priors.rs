//! Seeding the full-spectra band from the narrow bands after warm-up.

use crate::error::{Error, Result};
use crate::scene::{BandAppearance, SpectralScene, ENCODING_DIM};

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Full-band appearance of splat `g` as the logit-space mean over the narrow bands.
pub fn averaged_appearance(scene: &SpectralScene, g: usize) -> BandAppearance {
    let narrow = scene.band_table.narrow_indices();
    let bands = &scene.gaussians[g].bands;
    let avg = |f: &dyn Fn(&BandAppearance) -> f64| mean_of(narrow.iter().map(|&b| f(&bands[b])));
    BandAppearance {
        diffuse_logits: [0, 1, 2].map(|c| avg(&|a| a.diffuse_logits[c])),
        specular_logits: [0, 1, 2].map(|c| avg(&|a| a.specular_logits[c])),
        roughness_logit: avg(&|a| a.roughness_logit),
        encoding: std::array::from_fn::<f64, ENCODING_DIM, _>(|c| avg(&|a| a.encoding[c])),
    }
}

/// Sets the full-spectra appearance and environment to the mean of the
/// narrow bands. Geometry is shared and left alone.
pub fn init_full_spectra_priors(scene: &mut SpectralScene) -> Result<()> {
    if scene.full_priors_initialized {
        return Err(Error::PriorsAlreadyInitialized);
    }
    let narrow = scene.band_table.narrow_indices();
    if narrow.is_empty() {
        return Err(Error::UnknownBand("no narrow bands to average".into()));
    }
    let full = scene.band_table.full_index();
    for g in 0..scene.gaussians.len() {
        let app = averaged_appearance(scene, g);
        scene.gaussians[g].bands[full] = app;
    }
    if !scene.shared_environment() && scene.environments.len() > 1 {
        let len = scene.environments[full].base().data().len();
        let mean: Vec<f64> = (0..len)
            .map(|i| {
                mean_of(
                    narrow
                        .iter()
                        .map(|&b| scene.environments[b].base().data()[i]),
                )
            })
            .collect();
        let env = &mut scene.environments[full];
        env.base_mut().data_mut().copy_from_slice(&mean);
        env.rebuild_mips();
    }
    scene.full_priors_initialized = true;
    Ok(())
}
