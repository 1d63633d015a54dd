//! Flat parameter vector view of a scene, shared by gradients, the optimizer
//! and finite-difference checks.

use std::fmt;
use std::ops::Range;

use super::{SpectralScene, ENCODING_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Mean,
    LogScale,
    Rotation,
    Opacity,
    NormalPerturbation,
    Diffuse(usize),
    Specular(usize),
    Roughness(usize),
    Encoding(usize),
    ClassifierWeight(usize),
    ClassifierBias(usize),
    Environment(usize),
}

impl ParamGroup {
    /// Values per splat (or per class row, or per texel).
    pub fn width(self) -> usize {
        match self {
            ParamGroup::Mean | ParamGroup::LogScale => 3,
            ParamGroup::Rotation => 4,
            ParamGroup::Opacity => 1,
            ParamGroup::NormalPerturbation => 2,
            ParamGroup::Diffuse(_) | ParamGroup::Specular(_) => 3,
            ParamGroup::Roughness(_) => 1,
            ParamGroup::Encoding(_) | ParamGroup::ClassifierWeight(_) => ENCODING_DIM,
            ParamGroup::ClassifierBias(_) => 1,
            ParamGroup::Environment(_) => 3,
        }
    }

    pub fn is_geometry(self) -> bool {
        matches!(
            self,
            ParamGroup::Mean
                | ParamGroup::LogScale
                | ParamGroup::Rotation
                | ParamGroup::Opacity
                | ParamGroup::NormalPerturbation
        )
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroup::Mean => write!(f, "mean"),
            ParamGroup::LogScale => write!(f, "log_scale"),
            ParamGroup::Rotation => write!(f, "rotation"),
            ParamGroup::Opacity => write!(f, "opacity"),
            ParamGroup::NormalPerturbation => write!(f, "normal"),
            ParamGroup::Diffuse(b) => write!(f, "diffuse[{b}]"),
            ParamGroup::Specular(b) => write!(f, "specular[{b}]"),
            ParamGroup::Roughness(b) => write!(f, "roughness[{b}]"),
            ParamGroup::Encoding(b) => write!(f, "encoding[{b}]"),
            ParamGroup::ClassifierWeight(b) => write!(f, "classifier_weight[{b}]"),
            ParamGroup::ClassifierBias(b) => write!(f, "classifier_bias[{b}]"),
            ParamGroup::Environment(e) => write!(f, "environment[{e}]"),
        }
    }
}

/// Group-major layout: geometry groups, then per band its appearance,
/// encodings and classifier, then the environment maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    groups: Vec<(ParamGroup, Range<usize>)>,
    len: usize,
}

impl ParamLayout {
    pub fn of(scene: &SpectralScene) -> Self {
        let n = scene.gaussians.len();
        let mut groups = Vec::new();
        let mut offset = 0;
        let mut push = |g: ParamGroup, count: usize| {
            let len = g.width() * count;
            groups.push((g, offset..offset + len));
            offset += len;
        };
        push(ParamGroup::Mean, n);
        push(ParamGroup::LogScale, n);
        push(ParamGroup::Rotation, n);
        push(ParamGroup::Opacity, n);
        push(ParamGroup::NormalPerturbation, n);
        for b in 0..scene.num_bands() {
            push(ParamGroup::Diffuse(b), n);
            push(ParamGroup::Specular(b), n);
            push(ParamGroup::Roughness(b), n);
            push(ParamGroup::Encoding(b), n);
            let k = scene.classifiers[b].num_classes();
            push(ParamGroup::ClassifierWeight(b), k);
            push(ParamGroup::ClassifierBias(b), k);
        }
        for (e, env) in scene.environments.iter().enumerate() {
            push(ParamGroup::Environment(e), env.base().len_pixels());
        }
        Self {
            groups,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn groups(&self) -> &[(ParamGroup, Range<usize>)] {
        &self.groups
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        self.groups
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0)
    }

    /// Start of element `index` (splat, class row or texel) within `group`.
    #[inline]
    pub fn offset(&self, group: ParamGroup, index: usize) -> usize {
        self.range(group).start + index * group.width()
    }

    /// Group that owns flat index `k`.
    pub fn group_of(&self, k: usize) -> Option<(ParamGroup, Range<usize>)> {
        self.groups.iter().find(|(_, r)| r.contains(&k)).cloned()
    }
}

impl SpectralScene {
    /// Packs every learnable value into a flat vector in [`ParamLayout`] order.
    pub fn to_flat(&self, layout: &ParamLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.len()];
        for (group, range) in layout.groups() {
            let dst = &mut out[range.clone()];
            match *group {
                ParamGroup::Environment(e) => {
                    dst.copy_from_slice(self.environments[e].base().data())
                }
                ParamGroup::ClassifierWeight(b) => {
                    for (row, w) in dst
                        .chunks_exact_mut(ENCODING_DIM)
                        .zip(&self.classifiers[b].weight)
                    {
                        row.copy_from_slice(w);
                    }
                }
                ParamGroup::ClassifierBias(b) => dst.copy_from_slice(&self.classifiers[b].bias),
                g => {
                    let w = g.width();
                    for (chunk, gauss) in dst.chunks_exact_mut(w).zip(&self.gaussians) {
                        chunk.copy_from_slice(splat_field(gauss, g));
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). Mips of changed environments are rebuilt; quaternions are left as given.
    pub fn set_flat(&mut self, layout: &ParamLayout, values: &[f64]) {
        assert_eq!(values.len(), layout.len());
        for (group, range) in layout.groups() {
            let src = &values[range.clone()];
            match *group {
                ParamGroup::Environment(e) => {
                    let env = &mut self.environments[e];
                    if env.base().data() != src {
                        env.base_mut().data_mut().copy_from_slice(src);
                        env.rebuild_mips();
                    }
                }
                ParamGroup::ClassifierWeight(b) => {
                    for (row, w) in src
                        .chunks_exact(ENCODING_DIM)
                        .zip(&mut self.classifiers[b].weight)
                    {
                        w.copy_from_slice(row);
                    }
                }
                ParamGroup::ClassifierBias(b) => self.classifiers[b].bias.copy_from_slice(src),
                g => {
                    let w = g.width();
                    for (chunk, gauss) in src.chunks_exact(w).zip(&mut self.gaussians) {
                        splat_field_mut(gauss, g).copy_from_slice(chunk);
                    }
                }
            }
        }
    }

    /// Reads one flat parameter.
    pub fn get_param(&self, layout: &ParamLayout, k: usize) -> f64 {
        let (group, range) = layout.group_of(k).expect("parameter index in range");
        let local = k - range.start;
        match group {
            ParamGroup::Environment(e) => self.environments[e].base().data()[local],
            ParamGroup::ClassifierWeight(b) => {
                self.classifiers[b].weight[local / ENCODING_DIM][local % ENCODING_DIM]
            }
            ParamGroup::ClassifierBias(b) => self.classifiers[b].bias[local],
            g => splat_field(&self.gaussians[local / g.width()], g)[local % g.width()],
        }
    }

    /// Writes one flat parameter, rebuilding the affected environment mips.
    pub fn set_param(&mut self, layout: &ParamLayout, k: usize, value: f64) {
        let (group, range) = layout.group_of(k).expect("parameter index in range");
        let local = k - range.start;
        match group {
            ParamGroup::Environment(e) => {
                let env = &mut self.environments[e];
                env.base_mut().data_mut()[local] = value;
                env.rebuild_mips();
            }
            ParamGroup::ClassifierWeight(b) => {
                self.classifiers[b].weight[local / ENCODING_DIM][local % ENCODING_DIM] = value
            }
            ParamGroup::ClassifierBias(b) => self.classifiers[b].bias[local] = value,
            g => {
                splat_field_mut(&mut self.gaussians[local / g.width()], g)[local % g.width()] =
                    value
            }
        }
    }
}

fn splat_field(g: &super::SpectralGaussian, group: ParamGroup) -> &[f64] {
    match group {
        ParamGroup::Mean => &g.mean,
        ParamGroup::LogScale => &g.log_scale,
        ParamGroup::Rotation => &g.rotation,
        ParamGroup::Opacity => std::slice::from_ref(&g.opacity_logit),
        ParamGroup::NormalPerturbation => &g.normal_params,
        ParamGroup::Diffuse(b) => &g.bands[b].diffuse_logits,
        ParamGroup::Specular(b) => &g.bands[b].specular_logits,
        ParamGroup::Roughness(b) => std::slice::from_ref(&g.bands[b].roughness_logit),
        ParamGroup::Encoding(b) => &g.bands[b].encoding,
        _ => unreachable!("not a per-splat group"),
    }
}

fn splat_field_mut(g: &mut super::SpectralGaussian, group: ParamGroup) -> &mut [f64] {
    match group {
        ParamGroup::Mean => &mut g.mean,
        ParamGroup::LogScale => &mut g.log_scale,
        ParamGroup::Rotation => &mut g.rotation,
        ParamGroup::Opacity => std::slice::from_mut(&mut g.opacity_logit),
        ParamGroup::NormalPerturbation => &mut g.normal_params,
        ParamGroup::Diffuse(b) => &mut g.bands[b].diffuse_logits,
        ParamGroup::Specular(b) => &mut g.bands[b].specular_logits,
        ParamGroup::Roughness(b) => std::slice::from_mut(&mut g.bands[b].roughness_logit),
        ParamGroup::Encoding(b) => &mut g.bands[b].encoding,
        _ => unreachable!("not a per-splat group"),
    }
}

/// One gradient slot per learnable value, in [`ParamLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    /// Gradient slice of element `index` of `group`.
    pub fn slot_mut(&mut self, group: ParamGroup, index: usize) -> &mut [f64] {
        let start = self.layout.offset(group, index);
        &mut self.values[start..start + group.width()]
    }

    pub fn slot(&self, group: ParamGroup, index: usize) -> &[f64] {
        let start = self.layout.offset(group, index);
        &self.values[start..start + group.width()]
    }

    pub fn group(&self, group: ParamGroup) -> &[f64] {
        &self.values[self.layout.range(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        let r = self.layout.range(group);
        &mut self.values[r]
    }

    /// `self += scale · other` (same layout).
    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    /// Fails on the first non-finite entry, naming its parameter group.
    pub fn ensure_finite(&self) -> crate::error::Result<()> {
        for (group, range) in self.layout.groups() {
            if self.values[range.clone()].iter().any(|v| !v.is_finite()) {
                return Err(crate::error::Error::NonFiniteGradient(group.to_string()));
            }
        }
        Ok(())
    }
}
