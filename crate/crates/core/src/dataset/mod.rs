//! Multi-view spectral datasets: in-memory form, on-disk layout, and the
//! procedural generator used for round-trip tests.

mod io;
mod manifest;
mod synth;

pub use io::{
    load_image, load_mask, load_npy, load_png, save_image, save_mask, save_npy, save_png,
};
pub use manifest::{
    load_dataset, read_manifest, save_dataset, Manifest, ManifestView, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use synth::{perturb_scene, synth_scene, PerturbConfig, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::color::BandTable;
use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};
use crate::raster::CameraView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One calibrated view with its per-band images and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetView {
    pub name: String,
    pub split: Split,
    pub camera: CameraView,
    /// Display-domain RGB image per band, in band-table order.
    pub images: Vec<Image>,
    /// Mask per band, in band-table order.
    pub masks: Vec<Option<LabelImage>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDataset {
    pub band_table: BandTable,
    /// Size of the mask alphabet; category 0 is background.
    pub num_classes: usize,
    pub views: Vec<DatasetView>,
}

impl SpectralDataset {
    pub fn validate(&self) -> Result<()> {
        self.band_table.validate()?;
        if self.views.is_empty() {
            return Err(Error::Manifest("dataset has no views".into()));
        }
        let names = self.band_table.names();
        for v in &self.views {
            if v.images.len() != names.len() {
                let band = names.get(v.images.len()).cloned().unwrap_or_default();
                return Err(Error::MissingImage {
                    view: v.name.clone(),
                    band,
                });
            }
            if v.masks.len() != names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "view {} has {} mask slots",
                    v.name,
                    v.masks.len()
                )));
            }
            let (w, h) = (v.camera.width, v.camera.height);
            for (img, band) in v.images.iter().zip(&names) {
                if img.width() != w || img.height() != h || img.channels() != 3 {
                    return Err(Error::DimensionMismatch(format!(
                        "view {} band {band}: image {}x{}x{}, camera {w}x{h}",
                        v.name,
                        img.width(),
                        img.height(),
                        img.channels()
                    )));
                }
            }
            for (m, band) in v.masks.iter().zip(&names) {
                if let Some(m) = m {
                    if m.width() != w || m.height() != h {
                        return Err(Error::DimensionMismatch(format!(
                            "view {} band {band}: mask size",
                            v.name
                        )));
                    }
                    if m.max_id() as usize >= self.num_classes {
                        return Err(Error::ClassOutOfRange {
                            id: m.max_id() as usize,
                            classes: self.num_classes,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetView> {
        self.views.iter().filter(|v| v.split == split).collect()
    }

    /// Same cameras, bands and view names as `other`.
    pub fn ensure_compatible(&self, other: &SpectralDataset) -> Result<()> {
        if self.band_table != other.band_table {
            return Err(Error::CameraMismatch("band tables differ".into()));
        }
        if self.views.len() != other.views.len() {
            return Err(Error::CameraMismatch(format!(
                "{} views vs {}",
                self.views.len(),
                other.views.len()
            )));
        }
        for (a, b) in self.views.iter().zip(&other.views) {
            if a.name != b.name || !a.camera.approx_eq(&b.camera, 1e-9) {
                return Err(Error::CameraMismatch(format!(
                    "view {} differs from {}",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }
}
