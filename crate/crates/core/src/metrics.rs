//! Image-quality and segmentation metrics, and dataset evaluation tables.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{SpectralDataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};
use crate::raster::{render, RasterConfig};
use crate::scene::SpectralScene;
use crate::shading::ShadingConfig;

pub use crate::losses::ssim;

/// `10·log10(max²/MSE)`; `+∞` for identical images.
pub fn psnr(img: &Image, reference: &Image, max_val: f64) -> Result<f64> {
    img.ensure_same_shape(reference)?;
    let n = img.data().len().max(1) as f64;
    let mse = img
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    })
}

/// Intersection over union of `class` between two label maps; `None` if absent from both.
pub fn iou(pred: &LabelImage, truth: &LabelImage, class: u8) -> Option<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.ids().iter().zip(truth.ids()) {
        let (a, b) = (p == class, t == class);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Mean IoU over the foreground classes `1..classes` present in either map.
pub fn mean_iou(pred: &[&LabelImage], truth: &[&LabelImage], classes: usize) -> f64 {
    let mut ious = Vec::new();
    for c in 1..classes {
        let (mut inter, mut union) = (0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            for (&a, &b) in p.ids().iter().zip(t.ids()) {
                let (a, b) = (a as usize == c, b as usize == c);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    if ious.is_empty() {
        1.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub view: String,
    pub band: String,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandMetrics {
    pub band: String,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-view rows, per-band means and the overall mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsTable {
    pub views: Vec<ViewMetrics>,
    pub bands: Vec<BandMetrics>,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

fn finite_or_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "inf".into()
    }
}

impl MetricsTable {
    /// `view,band,psnr,ssim` rows, then `mean` rows per band and overall.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,band,psnr,ssim\n");
        for r in &self.views {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.view,
                r.band,
                fmt(r.psnr),
                r.ssim
            ));
        }
        for b in &self.bands {
            s.push_str(&format!("mean,{},{},{}\n", b.band, fmt(b.psnr), b.ssim));
        }
        s.push_str(&format!("mean,all,{},{}\n", fmt(self.psnr), self.ssim));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn band(&self, name: &str) -> Option<&BandMetrics> {
        self.bands.iter().find(|b| b.band == name)
    }
}

/// Renders every view of `split` in every band and scores it against the dataset.
/// Rows are sorted by view name, so the table does not depend on view order.
pub fn evaluate(
    scene: &SpectralScene,
    dataset: &SpectralDataset,
    split: Split,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<MetricsTable> {
    let views = dataset.split(split);
    if views.is_empty() {
        return Err(Error::EmptySplit(format!("{split:?}").to_lowercase()));
    }
    let names = dataset.band_table.names();
    let jobs: Vec<(usize, usize)> = (0..views.len())
        .flat_map(|v| (0..names.len()).map(move |b| (v, b)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(v, b)| {
            let view = views[v];
            let out = render(scene, &view.camera, b, raster, shading)?;
            Ok(ViewMetrics {
                view: view.name.clone(),
                band: names[b].clone(),
                psnr: psnr(&out.color, &view.images[b], 1.0)?,
                ssim: ssim(&out.color, &view.images[b])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        (a.view.as_str(), a.band.as_str()).cmp(&(b.view.as_str(), b.band.as_str()))
    });

    let mut per_band: BTreeMap<&str, Vec<&ViewMetrics>> = BTreeMap::new();
    for r in &rows {
        per_band.entry(r.band.as_str()).or_default().push(r);
    }
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };
    let bands: Vec<BandMetrics> = names
        .iter()
        .map(|n| {
            let rs = &per_band[n.as_str()];
            BandMetrics {
                band: n.clone(),
                psnr: mean(&mut rs.iter().map(|r| r.psnr)),
                ssim: mean(&mut rs.iter().map(|r| r.ssim)),
            }
        })
        .collect();
    let psnr_all = mean(&mut bands.iter().map(|b| b.psnr));
    let ssim_all = mean(&mut bands.iter().map(|b| b.ssim));
    Ok(MetricsTable {
        views: rows,
        bands,
        psnr: psnr_all,
        ssim: ssim_all,
    })
}
