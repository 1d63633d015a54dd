//! Adaptive density control: clone, split and prune splats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ParamGradients, ParamGroup, SpectralScene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub enabled: bool,
    /// First iteration at which density control runs.
    pub start: usize,
    pub interval: usize,
    /// No density control from this iteration on.
    pub stop: usize,
    /// Mean positional-gradient norm above which a splat is cloned or split.
    pub grad_threshold: f64,
    /// Largest scale (world units) of a splat that is cloned rather than split.
    pub size_threshold: f64,
    pub prune_opacity: f64,
    pub max_splats: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            start: 500,
            interval: 100,
            stop: 1500,
            grad_threshold: 2e-4,
            size_threshold: 0.05,
            prune_opacity: 0.005,
            max_splats: 20_000,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && self.interval == 0 {
            return Err(Error::Config("density.interval must be positive".into()));
        }
        Ok(())
    }

    pub fn due(&self, iteration: usize) -> bool {
        self.enabled
            && iteration >= self.start
            && iteration < self.stop
            && (iteration - self.start).is_multiple_of(self.interval)
            && iteration > 0
    }
}

/// Running positional-gradient statistics per splat.
#[derive(Clone, Debug, Default)]
pub struct GradStats {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds the mean-gradient norm of every splat that received a gradient.
    pub fn record(&mut self, grads: &ParamGradients) {
        let means = grads.group(ParamGroup::Mean);
        for (i, g) in means.chunks_exact(3).enumerate() {
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if norm > 0.0 {
                self.sum[i] += norm;
                self.count[i] += 1;
            }
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }
}

/// Result of one density-control pass.
#[derive(Clone, Debug)]
pub struct DensityChange {
    pub scene: SpectralScene,
    /// Per new splat, the old index it continues (`None` for clones and split children).
    pub sources: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Survivors keep their order; clones, then split children, are appended.
pub fn densify_and_prune(
    scene: &SpectralScene,
    stats: &GradStats,
    cfg: &DensityConfig,
) -> DensityChange {
    let n = scene.gaussians.len();
    let mut kept = Vec::new();
    let mut sources = Vec::new();
    let mut clones = Vec::new();
    let mut children = Vec::new();
    let mut pruned = 0;
    let mut split = 0;
    let mut budget = cfg.max_splats.saturating_sub(n);
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.opacity() < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        let hot = stats.average(i) > cfg.grad_threshold && budget > 0;
        let scales = g.scales();
        let largest = scales.iter().copied().fold(f64::MIN, f64::max);
        if hot && largest > cfg.size_threshold {
            let major = (0..3).fold(0, |k, a| if scales[a] > scales[k] { a } else { k });
            let axis = g.rotation_matrix().column(major) * scales[major];
            let shrink = 1.6f64.ln();
            for sign in [1.0, -1.0] {
                let mut c = g.clone();
                for d in 0..3 {
                    c.mean[d] += sign * axis[d];
                }
                c.log_scale = c.log_scale.map(|v| v - shrink);
                children.push(c);
            }
            split += 1;
            budget -= 1;
            continue;
        }
        if hot {
            clones.push(g.clone());
            budget -= 1;
        }
        kept.push(g.clone());
        sources.push(Some(i));
    }
    let cloned = clones.len();
    sources.extend(std::iter::repeat_n(None, clones.len() + children.len()));
    kept.extend(clones);
    kept.extend(children);
    let mut out = scene.clone();
    out.gaussians = kept;
    DensityChange {
        scene: out,
        sources,
        cloned,
        split,
        pruned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::BandTable;
    use crate::scene::{IdentityClassifier, SpectralGaussian};
    use crate::shading::EnvironmentLight;

    fn scene() -> SpectralScene {
        let mut a = SpectralGaussian::new([0.0; 3], 2);
        a.log_scale = [-4.0; 3];
        a.opacity_logit = 2.0;
        a.bands[0].diffuse_logits = [0.3, -0.2, 1.1];
        let mut b = SpectralGaussian::new([1.0, 0.0, 0.0], 2);
        b.log_scale = [-1.0, -3.0, -3.0];
        b.opacity_logit = 1.0;
        let mut c = SpectralGaussian::new([0.0, 1.0, 0.0], 2);
        c.opacity_logit = -8.0;
        SpectralScene {
            band_table: BandTable::from_centers(&[500.0], 40.0).unwrap(),
            gaussians: vec![a, b, c],
            environments: vec![EnvironmentLight::constant(8, 4, 1, [1.0; 3]).unwrap()],
            classifiers: vec![IdentityClassifier::zeros(2); 2],
            full_priors_initialized: false,
        }
    }

    fn stats(values: &[f64]) -> GradStats {
        GradStats {
            sum: values.to_vec(),
            count: vec![1; values.len()],
        }
    }

    #[test]
    fn prune_only_removes_transparent_splat() {
        let s = scene();
        let change = densify_and_prune(&s, &stats(&[0.0; 3]), &DensityConfig::default());
        assert_eq!(change.scene.gaussians.len(), 2);
        assert_eq!(change.pruned, 1);
        assert_eq!(change.sources, vec![Some(0), Some(1)]);
    }

    #[test]
    fn clone_and_split_copy_appearance() {
        let s = scene();
        let change = densify_and_prune(&s, &stats(&[1.0, 1.0, 0.0]), &DensityConfig::default());
        assert_eq!((change.cloned, change.split, change.pruned), (1, 1, 1));
        let g = &change.scene.gaussians;
        assert_eq!(g.len(), 4);
        assert_eq!(g[1], s.gaussians[0]);
        for child in &g[2..] {
            assert_eq!(child.bands, s.gaussians[1].bands);
            assert_eq!(child.opacity_logit, s.gaussians[1].opacity_logit);
            assert!((child.log_scale[0] - (-1.0 - 1.6f64.ln())).abs() < 1e-15);
        }
        assert!((g[2].mean[0] - g[3].mean[0]).abs() > 0.5);
    }
}
