//! `manifest.json`: versioned description of a dataset directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{load_image, load_mask, save_image, save_mask};
use super::{DatasetView, SpectralDataset, Split};
use crate::color::{
    combine_display_bands, BandTable, CmfTable, ColorMatrix, ColorMatrixKind, GammaCurve,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::CameraView;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub bands: BandTable,
    pub num_classes: usize,
    pub views: Vec<ManifestView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub name: String,
    pub split: Split,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    /// Row-major camera-to-world matrix, OpenCV axes (x right, y down, z forward).
    pub camera_to_world: [[f64; 4]; 4],
    /// Band name → image path relative to the dataset root.
    pub images: BTreeMap<String, PathBuf>,
    /// Band name → mask path relative to the dataset root.
    #[serde(default)]
    pub masks: BTreeMap<String, PathBuf>,
}

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    100.0
}

fn image_dir(band: &str) -> String {
    if band == "full" {
        "full".into()
    } else {
        format!("band_{band}")
    }
}

/// Writes images, masks and the manifest under `root`.
pub fn save_dataset(root: &Path, ds: &SpectralDataset) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let names = ds.band_table.names();
    let mut views = Vec::with_capacity(ds.views.len());
    for v in &ds.views {
        let mut images = BTreeMap::new();
        let mut masks = BTreeMap::new();
        for (b, band) in names.iter().enumerate() {
            let rel = PathBuf::from(image_dir(band)).join(format!("{}.npy", v.name));
            save_image(&root.join(&rel), &v.images[b])?;
            images.insert(band.clone(), rel);
            if let Some(m) = &v.masks[b] {
                let rel = PathBuf::from(format!("masks_{band}")).join(format!("{}.png", v.name));
                save_mask(&root.join(&rel), m)?;
                masks.insert(band.clone(), rel);
            }
        }
        views.push(ManifestView {
            name: v.name.clone(),
            split: v.split,
            width: v.camera.width,
            height: v.camera.height,
            fov_x: v.camera.fov_x(),
            near: v.camera.near,
            far: v.camera.far,
            camera_to_world: v.camera.camera_to_world(),
            images,
            masks,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        bands: ds.band_table.clone(),
        num_classes: ds.num_classes,
        views,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported manifest version {}",
            m.version
        )));
    }
    Ok(m)
}

/// Loads and validates the dataset at `root`. A missing full-spectra image is
/// synthesized by recombining the narrow bands.
pub fn load_dataset(root: &Path) -> Result<SpectralDataset> {
    let m = read_manifest(root)?;
    m.bands.validate()?;
    if m.views.is_empty() {
        return Err(Error::Manifest("manifest lists no views".into()));
    }
    let names = m.bands.names();
    let full = m.bands.full_index();
    let views = m
        .views
        .par_iter()
        .map(|mv| load_view(root, mv, &m.bands, &names, full))
        .collect::<Result<Vec<_>>>()?;
    let ds = SpectralDataset {
        band_table: m.bands,
        num_classes: m.num_classes,
        views,
    };
    ds.validate()?;
    Ok(ds)
}

fn load_view(
    root: &Path,
    mv: &ManifestView,
    bands: &BandTable,
    names: &[String],
    full: usize,
) -> Result<DatasetView> {
    let camera = CameraView::from_pose(
        &mv.camera_to_world,
        mv.fov_x,
        mv.width,
        mv.height,
        mv.near,
        mv.far,
    )
    .map_err(|e| match e {
        Error::NonOrthonormal { error, .. } => Error::NonOrthonormal {
            view: mv.name.clone(),
            error,
        },
        other => other,
    })?;
    let mut images: Vec<Option<Image>> = Vec::with_capacity(names.len());
    for (b, band) in names.iter().enumerate() {
        match mv.images.get(band) {
            Some(rel) if root.join(rel).is_file() => {
                images.push(Some(load_image(&root.join(rel))?))
            }
            Some(_) => {
                return Err(Error::MissingImage {
                    view: mv.name.clone(),
                    band: band.clone(),
                })
            }
            None if b == full => images.push(None),
            None => {
                return Err(Error::MissingImage {
                    view: mv.name.clone(),
                    band: band.clone(),
                })
            }
        }
    }
    if images[full].is_none() {
        let narrow: Vec<&Image> = bands
            .narrow_indices()
            .iter()
            .map(|&b| images[b].as_ref().expect("narrow band loaded"))
            .collect();
        let m = ColorMatrix::srgb_d65(ColorMatrixKind::XyzToSrgbCombined);
        images[full] = Some(combine_display_bands(
            &narrow,
            bands,
            &CmfTable::cie1931(),
            &m,
            GammaCurve::Srgb,
        )?);
    }
    let masks = names
        .iter()
        .map(|band| {
            mv.masks
                .get(band)
                .map(|rel| load_mask(&root.join(rel)))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetView {
        name: mv.name.clone(),
        split: mv.split,
        camera,
        images: images
            .into_iter()
            .map(|i| i.expect("every band filled"))
            .collect(),
        masks,
    })
}
