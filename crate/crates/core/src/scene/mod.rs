//! Scene representation: spectral Gaussians, per-band environment lights and
//! identity classifiers.

pub mod checkpoint;
pub mod params;

use crate::color::BandTable;
use crate::error::{Error, Result};
use crate::math::{normalize_backward, quat_to_rotation, sigmoid, softmax, Mat3, Vec3};
use crate::shading::EnvironmentLight;

pub use params::{ParamGradients, ParamGroup, ParamLayout};

/// Length of the per-band identity encoding.
pub const ENCODING_DIM: usize = 16;

/// Per-band appearance of one splat, stored as unconstrained logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandAppearance {
    pub diffuse_logits: [f64; 3],
    pub specular_logits: [f64; 3],
    pub roughness_logit: f64,
    pub encoding: [f64; ENCODING_DIM],
}

impl Default for BandAppearance {
    fn default() -> Self {
        Self {
            diffuse_logits: [0.0; 3],
            specular_logits: [0.0; 3],
            roughness_logit: 0.0,
            encoding: [0.0; ENCODING_DIM],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGaussian {
    pub mean: [f64; 3],
    /// Log of the per-axis standard deviation.
    pub log_scale: [f64; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// Tangent-plane perturbation of the base normal.
    pub normal_params: [f64; 2],
    /// One entry per band of the scene's band table.
    pub bands: Vec<BandAppearance>,
}

impl SpectralGaussian {
    pub fn new(mean: [f64; 3], n_bands: usize) -> Self {
        Self {
            mean,
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            normal_params: [0.0; 2],
            bands: vec![BandAppearance::default(); n_bands],
        }
    }

    pub fn mean_vec(&self) -> Vec3 {
        Vec3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotation(self.rotation)
    }

    pub fn scales(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Axis of the smallest scale (ties to the lowest index) and the other two in order.
    pub fn normal_axes(&self) -> (usize, usize, usize) {
        let s = self.log_scale;
        let mut k = 0;
        for i in 1..3 {
            if s[i] < s[k] {
                k = i;
            }
        }
        let others: Vec<usize> = (0..3).filter(|&i| i != k).collect();
        (k, others[0], others[1])
    }
}

/// `Σ = R·diag(exp(log_scale))²·Rᵀ`.
pub fn covariance(g: &SpectralGaussian) -> Mat3 {
    let r = g.rotation_matrix();
    let s = g.scales();
    let m = r * Mat3::from_diagonal(&Vec3::new(s[0], s[1], s[2]));
    m * m.transpose()
}

/// Intermediate values of the normal construction, kept for the backward pass.
#[derive(Clone, Copy, Debug)]
pub struct NormalFrame {
    /// Camera-facing unit normal.
    pub normal: Vec3,
    pub sign: f64,
    unit: Vec3,
    raw_len: f64,
    axes: (usize, usize, usize),
    rotation: Mat3,
}

impl NormalFrame {
    pub fn new(g: &SpectralGaussian, view_dir: &Vec3) -> Self {
        let rotation = g.rotation_matrix();
        let axes = g.normal_axes();
        let [a, b] = g.normal_params;
        let raw =
            rotation.column(axes.0) + rotation.column(axes.1) * a + rotation.column(axes.2) * b;
        let raw_len = raw.norm();
        let unit = raw / raw_len;
        let sign = if unit.dot(view_dir) >= 0.0 { 1.0 } else { -1.0 };
        Self {
            normal: unit * sign,
            sign,
            unit,
            raw_len,
            axes,
            rotation,
        }
    }

    /// Returns `(∂/∂R, ∂/∂normal_params)` given the gradient on the camera-facing normal.
    pub fn backward(&self, g: &SpectralGaussian, grad_normal: &Vec3) -> (Mat3, [f64; 2]) {
        let g_raw = normalize_backward(&self.unit, self.raw_len, &(grad_normal * self.sign));
        let [a, b] = g.normal_params;
        let (k, k1, k2) = self.axes;
        let mut g_r = Mat3::zeros();
        g_r.set_column(k, &g_raw);
        g_r.set_column(k1, &(g_raw * a));
        g_r.set_column(k2, &(g_raw * b));
        let g_params = [
            g_raw.dot(&self.rotation.column(k1)),
            g_raw.dot(&self.rotation.column(k2)),
        ];
        (g_r, g_params)
    }
}

/// Unit normal of a splat: the rotated axis of its smallest scale, perturbed in
/// the tangent plane by `normal_params`, flipped to face `view_dir`.
pub fn splat_normal(g: &SpectralGaussian, view_dir: &Vec3) -> Vec3 {
    NormalFrame::new(g, view_dir).normal
}

/// Decoded appearance of one splat in one band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedParams {
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub roughness: f64,
    pub opacity: f64,
}

pub fn decode_params(g: &SpectralGaussian, band: usize) -> Result<DecodedParams> {
    let app = g
        .bands
        .get(band)
        .ok_or_else(|| Error::UnknownBand(format!("index {band}")))?;
    Ok(DecodedParams {
        diffuse: app.diffuse_logits.map(sigmoid),
        specular: app.specular_logits.map(sigmoid),
        roughness: sigmoid(app.roughness_logit),
        opacity: sigmoid(g.opacity_logit),
    })
}

/// Linear classifier from identity encodings to `K` mask categories.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityClassifier {
    pub weight: Vec<[f64; ENCODING_DIM]>,
    pub bias: Vec<f64>,
}

impl IdentityClassifier {
    pub fn zeros(classes: usize) -> Self {
        Self {
            weight: vec![[0.0; ENCODING_DIM]; classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    /// `W·e + b`.
    pub fn logits(&self, encoding: &[f64]) -> Result<Vec<f64>> {
        if encoding.len() != ENCODING_DIM {
            return Err(Error::DimensionMismatch(format!(
                "encoding of length {} (expected {ENCODING_DIM})",
                encoding.len()
            )));
        }
        Ok(self
            .weight
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(encoding).map(|(a, e)| a * e).sum::<f64>() + b)
            .collect())
    }

    pub fn probabilities(&self, encoding: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(encoding)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralScene {
    pub band_table: BandTable,
    pub gaussians: Vec<SpectralGaussian>,
    /// One light per band, or a single light shared by all bands.
    pub environments: Vec<EnvironmentLight>,
    /// One classifier per band.
    pub classifiers: Vec<IdentityClassifier>,
    /// Set once the full-spectra band has been seeded from the narrow bands.
    pub full_priors_initialized: bool,
}

impl SpectralScene {
    pub fn num_bands(&self) -> usize {
        self.band_table.len()
    }

    pub fn shared_environment(&self) -> bool {
        self.environments.len() == 1 && self.num_bands() > 1
    }

    pub fn env_index(&self, band: usize) -> usize {
        if self.environments.len() == 1 {
            0
        } else {
            band
        }
    }

    pub fn environment(&self, band: usize) -> &EnvironmentLight {
        &self.environments[self.env_index(band)]
    }

    pub fn ensure_band(&self, band: usize) -> Result<()> {
        if band < self.num_bands() {
            Ok(())
        } else {
            Err(Error::UnknownBand(format!(
                "index {band} of {}",
                self.num_bands()
            )))
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifiers
            .first()
            .map_or(0, IdentityClassifier::num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        self.band_table.validate()?;
        let b = self.num_bands();
        if self.gaussians.iter().any(|g| g.bands.len() != b) {
            return Err(Error::DimensionMismatch(
                "gaussian band count differs from the band table".into(),
            ));
        }
        if self.classifiers.len() != b {
            return Err(Error::DimensionMismatch(format!(
                "{} classifiers for {b} bands",
                self.classifiers.len()
            )));
        }
        let k = self.num_classes();
        if k == 0
            || self
                .classifiers
                .iter()
                .any(|c| c.num_classes() != k || c.weight.len() != k)
        {
            return Err(Error::DimensionMismatch(
                "classifiers must share K ≥ 1 classes".into(),
            ));
        }
        if self.environments.len() != 1 && self.environments.len() != b {
            return Err(Error::DimensionMismatch(format!(
                "{} environment maps for {b} bands",
                self.environments.len()
            )));
        }
        Ok(())
    }

    /// Renormalizes every quaternion.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.gaussians {
            let n = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.rotation = g.rotation.map(|v| v / n);
        }
    }

    /// Copy of the scene keeping only the splats selected by `keep`.
    pub fn filtered(&self, keep: impl Fn(usize, &SpectralGaussian) -> bool) -> Self {
        let mut out = self.clone();
        out.gaussians = self
            .gaussians
            .iter()
            .enumerate()
            .filter(|(i, g)| keep(*i, g))
            .map(|(_, g)| g.clone())
            .collect();
        out
    }
}
