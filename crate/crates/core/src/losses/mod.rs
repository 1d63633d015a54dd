//! Training objectives and their gradients with respect to rendered images,
//! classifiers and encodings.

mod identity;
mod ssim;

pub use identity::{
    identity_2d_loss, identity_3d_loss, identity_logits, nearest_neighbors, sample_splats,
    Identity2d, Identity3d,
};
pub use ssim::{ssim, ssim_with_grad};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};
use crate::raster::{ImageGrads, RenderOutput};
use crate::scene::{SpectralScene, ENCODING_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Share of DSSIM in the photometric term; L1 gets `1 − dssim`.
    pub dssim: f64,
    pub identity_2d: f64,
    pub identity_3d: f64,
    pub knn_k: usize,
    pub knn_samples: usize,
    /// Pixels below this accumulated alpha are left out of the 2D identity term.
    pub alpha_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dssim: 0.2,
            identity_2d: 1.0,
            identity_3d: 2.0,
            knn_k: 5,
            knn_samples: 1000,
            alpha_threshold: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dssim) {
            return Err(Error::Config(format!(
                "loss.dssim must lie in [0, 1], got {}",
                self.dssim
            )));
        }
        if self.identity_2d < 0.0 || self.identity_3d < 0.0 {
            return Err(Error::Config(
                "identity loss weights must be non-negative".into(),
            ));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("loss.knn_k must be positive".into()));
        }
        Ok(())
    }

    /// Weight of the L1 term.
    pub fn l1(&self) -> f64 {
        1.0 - self.dssim
    }
}

/// Mean absolute difference.
pub fn l1_loss(img: &Image, reference: &Image) -> Result<f64> {
    img.ensure_same_shape(reference)?;
    let n = img.data().len().max(1) as f64;
    Ok(img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Gradient of [`l1_loss`] with respect to `img`; zero where the images agree.
pub fn l1_grad(img: &Image, reference: &Image) -> Result<Image> {
    img.ensure_same_shape(reference)?;
    let n = img.data().len().max(1) as f64;
    let data = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| {
            let d = a - b;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Image::from_vec(img.width(), img.height(), img.channels(), data)
}

/// `1 − SSIM`.
pub fn dssim_loss(img: &Image, reference: &Image) -> Result<f64> {
    Ok(1.0 - ssim(img, reference)?)
}

/// Terms of one band's loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub dssim: f64,
    pub identity_2d: f64,
    pub identity_3d: f64,
    pub total: f64,
}

/// Gradients of one band's loss on everything it touches directly.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub image: ImageGrads,
    pub classifier_weight: Vec<[f64; ENCODING_DIM]>,
    pub classifier_bias: Vec<f64>,
    /// Per splat, from the kNN term; empty when that term is off.
    pub encodings: Vec<[f64; ENCODING_DIM]>,
}

/// Inputs of one band's loss besides the render.
pub struct BandTarget<'a> {
    pub reference: &'a Image,
    pub mask: Option<&'a LabelImage>,
    /// Seed of the kNN sampling.
    pub seed: u64,
}

/// `(1−γ)·L1 + γ·DSSIM + γ_2d·L_2d + γ_3d·L_3d` for one rendered band.
pub fn render_loss_band(
    render: &RenderOutput,
    target: &BandTarget,
    weights: &LossWeights,
    scene: &SpectralScene,
    band: usize,
) -> Result<LossTerms> {
    band_loss(render, target, weights, scene, band, false).map(|(t, _)| t)
}

/// [`render_loss_band`] together with its gradients.
pub fn render_loss_band_with_grad(
    render: &RenderOutput,
    target: &BandTarget,
    weights: &LossWeights,
    scene: &SpectralScene,
    band: usize,
) -> Result<(LossTerms, LossGrads)> {
    band_loss(render, target, weights, scene, band, true)
        .map(|(t, g)| (t, g.expect("gradient requested")))
}

fn band_loss(
    render: &RenderOutput,
    target: &BandTarget,
    weights: &LossWeights,
    scene: &SpectralScene,
    band: usize,
    want_grad: bool,
) -> Result<(LossTerms, Option<LossGrads>)> {
    scene.ensure_band(band)?;
    let img = &render.color;
    let mut terms = LossTerms {
        l1: l1_loss(img, target.reference)?,
        ..Default::default()
    };
    let (w, h) = (img.width(), img.height());
    let mut d_color = Image::new(w, h, 3);
    if want_grad && weights.l1() != 0.0 {
        axpy(&mut d_color, weights.l1(), &l1_grad(img, target.reference)?);
    }
    if weights.dssim != 0.0 {
        if want_grad {
            let (s, g) = ssim_with_grad(img, target.reference)?;
            terms.dssim = 1.0 - s;
            axpy(&mut d_color, -weights.dssim, &g);
        } else {
            terms.dssim = dssim_loss(img, target.reference)?;
        }
    }
    let clf = &scene.classifiers[band];
    let mut grads = want_grad.then(|| LossGrads {
        image: ImageGrads::color_only(Image::new(0, 0, 3)),
        classifier_weight: vec![[0.0; ENCODING_DIM]; clf.num_classes()],
        classifier_bias: vec![0.0; clf.num_classes()],
        encodings: Vec::new(),
    });
    if weights.identity_2d != 0.0 {
        if let Some(mask) = target.mask {
            let id = identity_2d_loss(
                &render.id_feature,
                &render.alpha,
                mask,
                clf,
                weights.alpha_threshold,
            )?;
            terms.identity_2d = id.loss;
            if let Some(g) = grads.as_mut() {
                let mut d_feat = id.d_feature;
                d_feat
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v *= weights.identity_2d);
                g.image.id_feature = Some(d_feat);
                for (dst, src) in g.classifier_weight.iter_mut().zip(&id.d_weight) {
                    for c in 0..ENCODING_DIM {
                        dst[c] += weights.identity_2d * src[c];
                    }
                }
                for (dst, src) in g.classifier_bias.iter_mut().zip(&id.d_bias) {
                    *dst += weights.identity_2d * src;
                }
            }
        }
    }
    if weights.identity_3d != 0.0 {
        let id = identity_3d_loss(scene, band, weights.knn_k, weights.knn_samples, target.seed)?;
        terms.identity_3d = id.loss;
        if let Some(g) = grads.as_mut() {
            g.encodings = id
                .d_encoding
                .into_iter()
                .map(|e| e.map(|v| v * weights.identity_3d))
                .collect();
        }
    }
    terms.total = weights.l1() * terms.l1
        + weights.dssim * terms.dssim
        + weights.identity_2d * terms.identity_2d
        + weights.identity_3d * terms.identity_3d;
    if let Some(g) = grads.as_mut() {
        g.image.color = d_color;
    }
    Ok((terms, grads))
}

fn axpy(dst: &mut Image, a: f64, x: &Image) {
    for (d, v) in dst.data_mut().iter_mut().zip(x.data()) {
        *d += a * v;
    }
}

/// Plain sum of per-band totals.
pub fn total_loss(per_band: &[f64]) -> f64 {
    per_band.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a = Image::filled(4, 3, 3, 0.0);
        let b = Image::filled(4, 3, 3, 1.0);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap(), 1.0);
        assert!(l1_grad(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(l1_loss(&a, &Image::new(4, 4, 3)).is_err());
    }

    #[test]
    fn total_is_a_plain_sum() {
        assert_eq!(total_loss(&[1.5]), 1.5);
        assert_eq!(total_loss(&[1.0, 2.0, 3.5]), 6.5);
        assert_eq!(total_loss(&[3.5, 1.0, 2.0]), total_loss(&[1.0, 2.0, 3.5]));
    }
}
