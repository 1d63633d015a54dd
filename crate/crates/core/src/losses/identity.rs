//! Identity-encoding losses: per-pixel cross-entropy on the composited
//! feature and a kNN consistency term between neighbouring splats.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};
use crate::math::{log_softmax, softmax};
use crate::scene::{IdentityClassifier, SpectralScene, ENCODING_DIM};

/// `W·e + b` for one encoding.
pub fn identity_logits(encoding: &[f64], clf: &IdentityClassifier) -> Result<Vec<f64>> {
    clf.logits(encoding)
}

/// Cross-entropy value with gradients on the feature image and classifier.
#[derive(Clone, Debug)]
pub struct Identity2d {
    pub loss: f64,
    /// Number of pixels that entered the mean.
    pub pixels: usize,
    pub d_feature: Image,
    pub d_weight: Vec<[f64; ENCODING_DIM]>,
    pub d_bias: Vec<f64>,
}

/// Mean of `−log softmax(W·E + b)[y]` over pixels whose alpha is at least `alpha_threshold`.
pub fn identity_2d_loss(
    feature: &Image,
    alpha: &Image,
    mask: &LabelImage,
    clf: &IdentityClassifier,
    alpha_threshold: f64,
) -> Result<Identity2d> {
    let (w, h) = (feature.width(), feature.height());
    if feature.channels() != ENCODING_DIM
        || alpha.width() != w
        || alpha.height() != h
        || mask.width() != w
        || mask.height() != h
    {
        return Err(Error::DimensionMismatch(format!(
            "feature {}x{}x{}, alpha {}x{}, mask {}x{}",
            w,
            h,
            feature.channels(),
            alpha.width(),
            alpha.height(),
            mask.width(),
            mask.height()
        )));
    }
    let classes = clf.num_classes();
    if let Some(&bad) = mask.ids().iter().find(|&&id| id as usize >= classes) {
        return Err(Error::ClassOutOfRange {
            id: bad as usize,
            classes,
        });
    }
    let selected: Vec<usize> = (0..w * h)
        .filter(|&p| alpha.data()[p] >= alpha_threshold)
        .collect();
    let mut out = Identity2d {
        loss: 0.0,
        pixels: selected.len(),
        d_feature: Image::new(w, h, ENCODING_DIM),
        d_weight: vec![[0.0; ENCODING_DIM]; classes],
        d_bias: vec![0.0; classes],
    };
    if selected.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / selected.len() as f64;
    for p in selected {
        let e = &feature.data()[p * ENCODING_DIM..(p + 1) * ENCODING_DIM];
        let logits = clf.logits(e)?;
        let y = mask.ids()[p] as usize;
        out.loss -= log_softmax(&logits)[y] * inv;
        let mut d_logits = softmax(&logits);
        d_logits[y] -= 1.0;
        let d_e = &mut out.d_feature.data_mut()[p * ENCODING_DIM..(p + 1) * ENCODING_DIM];
        for (k, dl) in d_logits.iter().enumerate() {
            let dl = dl * inv;
            out.d_bias[k] += dl;
            for c in 0..ENCODING_DIM {
                out.d_weight[k][c] += dl * e[c];
                d_e[c] += dl * clf.weight[k][c];
            }
        }
    }
    Ok(out)
}

/// kNN consistency value and its gradient per splat encoding.
#[derive(Clone, Debug)]
pub struct Identity3d {
    pub loss: f64,
    pub d_encoding: Vec<[f64; ENCODING_DIM]>,
}

/// Indices of the `k` nearest other splats to `j` by mean distance, ties to the lower index.
pub fn nearest_neighbors(scene: &SpectralScene, j: usize, k: usize) -> Vec<usize> {
    let c = scene.gaussians[j].mean_vec();
    let mut d: Vec<(f64, usize)> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(i, g)| ((g.mean_vec() - c).norm_squared(), i))
        .collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, i)| i).collect()
}

/// Splats drawn for the kNN term: all of them when `samples ≥ N`, otherwise a
/// seeded subset without replacement, in ascending order.
pub fn sample_splats(n: usize, samples: usize, seed: u64) -> Vec<usize> {
    if samples >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, samples).into_vec();
    idx.sort_unstable();
    idx
}

/// `(1/mk)·Σ_j Σ_{i ∈ kNN(j)} KL(softmax(e_j) ‖ softmax(e_i))` for band `band`.
pub fn identity_3d_loss(
    scene: &SpectralScene,
    band: usize,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<Identity3d> {
    scene.ensure_band(band)?;
    let n = scene.gaussians.len();
    if n <= k {
        return Err(Error::NotEnoughGaussians { n, k });
    }
    let picked = sample_splats(n, samples, seed);
    let enc = |i: usize| &scene.gaussians[i].bands[band].encoding;
    let mut out = Identity3d {
        loss: 0.0,
        d_encoding: vec![[0.0; ENCODING_DIM]; n],
    };
    let scale = 1.0 / (picked.len() * k) as f64;
    for &j in &picked {
        let log_p = log_softmax(enc(j));
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        for i in nearest_neighbors(scene, j, k) {
            let log_q = log_softmax(enc(i));
            let diff: Vec<f64> = log_p.iter().zip(&log_q).map(|(a, b)| a - b).collect();
            let kl: f64 = p.iter().zip(&diff).map(|(pc, d)| pc * d).sum();
            out.loss += kl * scale;
            for c in 0..ENCODING_DIM {
                out.d_encoding[j][c] += scale * p[c] * (diff[c] - kl);
                out.d_encoding[i][c] += scale * (log_q[c].exp() - p[c]);
            }
        }
    }
    Ok(out)
}
