//! Image files: lossless `.npy` (f64, `[height, width, channels]`) for
//! radiance, 8-bit PNG for display images, indexed PNG for masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array3;
use ndarray_npy::{read_npy, write_npy};

use crate::error::{Error, Result};
use crate::image::{Image, LabelImage};

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn save_npy(path: &Path, img: &Image) -> Result<()> {
    ensure_parent(path)?;
    let arr = Array3::from_shape_vec(
        (img.height(), img.width(), img.channels()),
        img.data().to_vec(),
    )
    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    write_npy(path, &arr).map_err(|e| unsupported(path, e.to_string()))
}

pub fn load_npy(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    let arr: Array3<f64> =
        read_npy(path).map_err(|e| unsupported(path, format!("expected a 3-D f64 array: {e}")))?;
    let (h, w, c) = arr.dim();
    let data = arr.as_standard_layout().iter().copied().collect();
    Image::from_vec(w, h, c, data)
}

/// Writes a 1- or 3-channel image as 8-bit PNG, clipping to [0, 1].
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(unsupported(path, format!("{c} channels"))),
    };
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&bytes))
        .map_err(|e| unsupported(path, e.to_string()))
}

fn read_png(path: &Path, expand: bool) -> Result<(png::OutputInfo, Vec<u8>, Option<Vec<u8>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(if expand {
        png::Transformations::EXPAND
    } else {
        png::Transformations::IDENTITY
    });
    let mut reader = dec
        .read_info()
        .map_err(|e| unsupported(path, e.to_string()))?;
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| unsupported(path, "image too large"))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| unsupported(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf, palette))
}

/// Reads an 8-bit PNG as RGB in [0, 1]. Grayscale is replicated; alpha is dropped.
pub fn load_png(path: &Path) -> Result<Image> {
    let (info, buf, _) = read_png(path, true)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(path, format!("bit depth {:?}", info.bit_depth)));
    }
    let src = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(unsupported(path, "indexed color")),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf.chunks_exact(src) {
        for c in 0..3 {
            let v = if src < 3 { px[0] } else { px[c] };
            data.push(v as f64 / 255.0);
        }
    }
    Image::from_vec(w, h, 3, data)
}

/// Distinct colours for the first few ids; the rest are grey levels.
fn palette() -> Vec<u8> {
    const BASE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
    ];
    (0..256u32)
        .flat_map(|i| match BASE.get(i as usize) {
            Some(c) => *c,
            None => [i as u8; 3],
        })
        .collect()
}

/// Writes a mask as an 8-bit indexed PNG whose palette index is the id.
pub fn save_mask(path: &Path, mask: &LabelImage) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        mask.width() as u32,
        mask.height() as u32,
    );
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette());
    enc.write_header()
        .and_then(|mut w| w.write_image_data(mask.ids()))
        .map_err(|e| unsupported(path, e.to_string()))
}

/// Reads an 8-bit indexed (palette index = id) or grayscale (value = id) PNG.
pub fn load_mask(path: &Path) -> Result<LabelImage> {
    let (info, buf, _) = read_png(path, false)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(
            path,
            format!("mask bit depth {:?}", info.bit_depth),
        ));
    }
    if !matches!(
        info.color_type,
        png::ColorType::Indexed | png::ColorType::Grayscale
    ) {
        return Err(unsupported(
            path,
            format!("mask color type {:?}", info.color_type),
        ));
    }
    LabelImage::from_vec(info.width as usize, info.height as usize, buf)
}

/// Loads `.npy` or `.png` by extension.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => load_npy(path),
        Some("png") => load_png(path),
        _ => Err(unsupported(path, "expected .npy or .png")),
    }
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => save_npy(path, img),
        Some("png") => save_png(path, img),
        _ => Err(unsupported(path, "expected .npy or .png")),
    }
}
