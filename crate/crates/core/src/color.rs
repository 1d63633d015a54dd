//! CIE colorimetry: spectra to tristimulus values, XYZ to sRGB, and the
//! per-band RGB weights used to recombine band renders into display images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const CIE1931_2DEG_5NM: &str = include_str!("../data/cie1931_2deg_5nm.txt");

/// Color-matching functions sampled on an ascending wavelength grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CmfTable {
    pub wavelengths_nm: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub fz: Vec<f64>,
}

impl CmfTable {
    /// The bundled CIE 1931 2° standard observer, 380–780 nm at 5 nm.
    pub fn cie1931() -> Self {
        Self::parse(CIE1931_2DEG_5NM).expect("bundled CMF table is well formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses whitespace-separated rows `wavelength x_bar y_bar z_bar`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CmfTable {
            wavelengths_nm: Vec::new(),
            fx: Vec::new(),
            fy: Vec::new(),
            fz: Vec::new(),
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidSpectrum(format!("CMF line {}: {e}", lineno + 1)))?;
            if cols.len() != 4 {
                return Err(Error::InvalidSpectrum(format!(
                    "CMF line {}: expected 4 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            table.wavelengths_nm.push(cols[0]);
            table.fx.push(cols[1]);
            table.fy.push(cols[2]);
            table.fz.push(cols[3]);
        }
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.wavelengths_nm.len();
        if n < 2 || self.fx.len() != n || self.fy.len() != n || self.fz.len() != n {
            return Err(Error::InvalidSpectrum(
                "CMF columns must have equal length ≥ 2".into(),
            ));
        }
        if self.wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpectrum(
                "CMF wavelengths must be strictly ascending".into(),
            ));
        }
        if [&self.fx, &self.fy, &self.fz]
            .iter()
            .any(|col| col.iter().any(|&v| v < 0.0 || !v.is_finite()))
        {
            return Err(Error::InvalidSpectrum(
                "CMF values must be finite and ≥ 0".into(),
            ));
        }
        if self.min_nm() > 380.0 || self.max_nm() < 780.0 {
            return Err(Error::InvalidSpectrum(
                "CMF table must cover 380–780 nm".into(),
            ));
        }
        Ok(())
    }

    pub fn min_nm(&self) -> f64 {
        self.wavelengths_nm[0]
    }

    pub fn max_nm(&self) -> f64 {
        *self.wavelengths_nm.last().unwrap()
    }

    /// Linearly interpolated `(x̄, ȳ, z̄)` at `lambda_nm`.
    pub fn at(&self, lambda_nm: f64) -> Result<[f64; 3]> {
        if !(lambda_nm >= self.min_nm() && lambda_nm <= self.max_nm()) {
            return Err(Error::WavelengthOutOfRange(lambda_nm));
        }
        let wl = &self.wavelengths_nm;
        let hi = wl.partition_point(|&w| w < lambda_nm).max(1);
        let lo = hi - 1;
        if wl[hi] == lambda_nm {
            return Ok([self.fx[hi], self.fy[hi], self.fz[hi]]);
        }
        let t = (lambda_nm - wl[lo]) / (wl[hi] - wl[lo]);
        let lerp = |c: &[f64]| c[lo] + t * (c[hi] - c[lo]);
        Ok([lerp(&self.fx), lerp(&self.fy), lerp(&self.fz)])
    }
}

/// A sampled spectral power distribution on a uniform wavelength grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spd {
    pub samples: Vec<(f64, f64)>,
    pub delta_lambda_nm: f64,
}

impl Spd {
    pub fn new(samples: Vec<(f64, f64)>, delta_lambda_nm: f64) -> Result<Self> {
        if !(delta_lambda_nm > 0.0) {
            return Err(Error::InvalidSpectrum(
                "sample spacing must be positive".into(),
            ));
        }
        if samples.iter().any(|&(_, p)| !(p >= 0.0)) {
            return Err(Error::InvalidSpectrum("spectral power must be ≥ 0".into()));
        }
        for w in samples.windows(2) {
            let step = w[1].0 - w[0].0;
            if (step - delta_lambda_nm).abs() > 1e-9 * delta_lambda_nm.max(1.0) {
                return Err(Error::InvalidSpectrum(format!(
                    "non-uniform spacing {step} nm (expected {delta_lambda_nm} nm)"
                )));
            }
        }
        Ok(Self {
            samples,
            delta_lambda_nm,
        })
    }

    /// Samples `power(λ)` on `start, start + step, …, end`.
    pub fn sampled(
        start_nm: f64,
        end_nm: f64,
        step_nm: f64,
        power: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let count = ((end_nm - start_nm) / step_nm).round() as usize + 1;
        let samples = (0..count)
            .map(|i| {
                let wl = start_nm + i as f64 * step_nm;
                (wl, power(wl))
            })
            .collect();
        Self::new(samples, step_nm)
    }
}

/// `xyz = Σ cmf(λ) · L(λ) · Δλ`.
pub fn tristimulus(spd: &Spd, cmf: &CmfTable) -> Result<[f64; 3]> {
    if spd.samples.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let mut xyz = [0.0; 3];
    for &(wl, power) in &spd.samples {
        let f = cmf.at(wl)?;
        for c in 0..3 {
            xyz[c] += f[c] * power * spd.delta_lambda_nm;
        }
    }
    Ok(xyz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMatrixKind {
    XyzToLinearRgb,
    XyzToSrgbCombined,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorMatrix {
    pub m: [[f64; 3]; 3],
    pub kind: ColorMatrixKind,
}

/// IEC 61966-2-1 XYZ → linear sRGB (D65).
pub const SRGB_D65: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

impl ColorMatrix {
    pub fn new(m: [[f64; 3]; 3], kind: ColorMatrixKind) -> Result<Self> {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if !(det.abs() > 1e-12) || !det.is_finite() {
            return Err(Error::Config(format!(
                "color matrix is singular (det = {det})"
            )));
        }
        Ok(Self { m, kind })
    }

    pub fn srgb_d65(kind: ColorMatrixKind) -> Self {
        Self { m: SRGB_D65, kind }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

/// Linear RGB from XYZ, unclipped.
pub fn xyz_to_linear_rgb(xyz: [f64; 3], m: &ColorMatrix) -> [f64; 3] {
    debug_assert_eq!(m.kind, ColorMatrixKind::XyzToLinearRgb);
    m.apply(xyz)
}

/// Display transfer curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaCurve {
    /// Piecewise sRGB curve (linear toe below 0.0031308, exponent 1/2.4 above).
    #[default]
    Srgb,
    /// Pure power law `x^(1/gamma)`.
    Power { gamma: f64 },
}

impl GammaCurve {
    /// Encodes one linear value; negative inputs are clamped to 0 first.
    #[inline]
    pub fn encode(self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            GammaCurve::Srgb => {
                if x <= 0.0031308 {
                    12.92 * x
                } else {
                    1.055 * x.powf(1.0 / 2.4) - 0.055
                }
            }
            GammaCurve::Power { gamma } => x.powf(1.0 / gamma),
        }
    }

    #[inline]
    pub fn decode(self, y: f64) -> f64 {
        let y = y.max(0.0);
        match self {
            GammaCurve::Srgb => {
                if y <= 0.04045 {
                    y / 12.92
                } else {
                    ((y + 0.055) / 1.055).powf(2.4)
                }
            }
            GammaCurve::Power { gamma } => y.powf(gamma),
        }
    }

    /// d encode / dx; zero for negative inputs (clamped region).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            GammaCurve::Srgb => {
                if x <= 0.0031308 {
                    12.92
                } else {
                    1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
                }
            }
            GammaCurve::Power { gamma } => {
                if x == 0.0 {
                    0.0
                } else {
                    x.powf(1.0 / gamma - 1.0) / gamma
                }
            }
        }
    }
}

/// Componentwise sRGB encoding.
pub fn gamma_encode(rgb_linear: [f64; 3]) -> [f64; 3] {
    rgb_linear.map(|v| GammaCurve::Srgb.encode(v))
}

pub fn gamma_decode(rgb_gamma: [f64; 3]) -> [f64; 3] {
    rgb_gamma.map(|v| GammaCurve::Srgb.decode(v))
}

pub fn clip01(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|v| v.clamp(0.0, 1.0))
}

/// Per-band RGB weight `M^c · (x̄, ȳ, z̄)(λ) · Δλ`, so that `RGB_λ = weight · L(λ)`.
pub fn band_rgb_weight(
    lambda_nm: f64,
    delta_lambda_nm: f64,
    cmf: &CmfTable,
    m: &ColorMatrix,
) -> Result<[f64; 3]> {
    debug_assert_eq!(m.kind, ColorMatrixKind::XyzToSrgbCombined);
    let f = cmf.at(lambda_nm)?;
    Ok(m.apply(f).map(|v| v * delta_lambda_nm))
}

/// One spectral band, or the pseudo-band standing for the whole visible spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Band {
    Narrow { center_nm: f64, delta_nm: f64 },
    FullSpectra,
}

impl Band {
    pub fn name(&self) -> String {
        match *self {
            Band::Narrow { center_nm, .. } => {
                if center_nm.fract() == 0.0 {
                    format!("{}", center_nm as i64)
                } else {
                    format!("{center_nm}")
                }
            }
            Band::FullSpectra => "full".to_string(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Band::FullSpectra)
    }
}

/// Ordered list of bands; contains `FullSpectra` exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    pub bands: Vec<Band>,
}

impl BandTable {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        let table = Self { bands };
        table.validate()?;
        Ok(table)
    }

    /// Narrow bands at the given centers, each `delta_nm` wide, followed by the full-spectra band.
    pub fn from_centers(centers_nm: &[f64], delta_nm: f64) -> Result<Self> {
        let mut bands: Vec<Band> = centers_nm
            .iter()
            .map(|&center_nm| Band::Narrow {
                center_nm,
                delta_nm,
            })
            .collect();
        bands.push(Band::FullSpectra);
        Self::new(bands)
    }

    /// Five 40 nm bands centred on 460, 500, 540, 580 and 620 nm.
    pub fn five_band_visible() -> Self {
        Self::from_centers(&[460.0, 500.0, 540.0, 580.0, 620.0], 40.0).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let full = self.bands.iter().filter(|b| b.is_full()).count();
        if full != 1 {
            return Err(Error::Config(format!(
                "band table must contain the full-spectra band exactly once (found {full})"
            )));
        }
        let mut centers: Vec<f64> = self
            .bands
            .iter()
            .filter_map(|b| match *b {
                Band::Narrow {
                    center_nm,
                    delta_nm,
                } => {
                    if delta_nm > 0.0 && center_nm.is_finite() {
                        Some(Ok(center_nm))
                    } else {
                        Some(Err(Error::Config(format!(
                            "invalid band {center_nm} nm / {delta_nm} nm"
                        ))))
                    }
                }
                Band::FullSpectra => None,
            })
            .collect::<Result<_>>()?;
        centers.sort_by(f64::total_cmp);
        if centers.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("band centers must be unique".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn full_index(&self) -> usize {
        self.bands
            .iter()
            .position(Band::is_full)
            .expect("validated band table")
    }

    pub fn narrow_indices(&self) -> Vec<usize> {
        (0..self.bands.len())
            .filter(|&i| !self.bands[i].is_full())
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.bands
            .iter()
            .position(|b| b.name() == name)
            .ok_or_else(|| Error::UnknownBand(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(Band::name).collect()
    }
}

/// Recombines linear per-band radiance images into one display image.
///
/// `band_images` holds one image per narrow band, in band-table order. The band
/// radiance at a pixel is the mean of its channels.
pub fn combine_bands(
    band_images: &[Image],
    band_table: &BandTable,
    cmf: &CmfTable,
    m: &ColorMatrix,
) -> Result<Image> {
    let narrow: Vec<(f64, f64)> = band_table
        .bands
        .iter()
        .filter_map(|b| match *b {
            Band::Narrow {
                center_nm,
                delta_nm,
            } => Some((center_nm, delta_nm)),
            Band::FullSpectra => None,
        })
        .collect();
    if band_images.len() != narrow.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} band images for {} narrow bands",
            band_images.len(),
            narrow.len()
        )));
    }
    let Some(first) = band_images.first() else {
        return Err(Error::DimensionMismatch("no band images".into()));
    };
    for img in band_images {
        if img.width() != first.width() || img.height() != first.height() {
            return Err(Error::DimensionMismatch(format!(
                "band image {}x{} vs {}x{}",
                img.width(),
                img.height(),
                first.width(),
                first.height()
            )));
        }
    }
    let weights: Vec<[f64; 3]> = narrow
        .iter()
        .map(|&(c, d)| band_rgb_weight(c, d, cmf, m))
        .collect::<Result<_>>()?;

    let (w, h) = (first.width(), first.height());
    let mut out = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0.0; 3];
            for (img, weight) in band_images.iter().zip(&weights) {
                let px = img.pixel(x, y);
                let radiance = px.iter().sum::<f64>() / px.len() as f64;
                for c in 0..3 {
                    rgb[c] += weight[c] * radiance;
                }
            }
            out.pixel_mut(x, y)
                .copy_from_slice(&clip01(gamma_encode(rgb)));
        }
    }
    Ok(out)
}

/// [`combine_bands`] on display-domain band images, which are first decoded with `gamma`.
pub fn combine_display_bands(
    band_images: &[&Image],
    band_table: &BandTable,
    cmf: &CmfTable,
    m: &ColorMatrix,
    gamma: GammaCurve,
) -> Result<Image> {
    let linear: Vec<Image> = band_images
        .iter()
        .map(|img| img.map(|v| gamma.decode(v)))
        .collect();
    combine_bands(&linear, band_table, cmf, m)
}
