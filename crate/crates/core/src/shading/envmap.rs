//! Equirectangular environment light with a GGX-prefiltered mip chain.
//!
//! Directions use `+y` as the polar axis: `θ = acos(y)`, `φ = atan2(z, x)`.
//! Texel `(i, j)` of an `H×W` level is centred at `θ = (i + ½)π/H`,
//! `φ = (j + ½)2π/W`.
//!
//! Mip level `k > 0` is `P_k · base`, where `P_k` is a fixed, row-normalized
//! sparse operator holding the GGX lobe weights `D(d·ω, ρ_k)·(d·ω)·Δω` for
//! roughness `ρ_k = k / (levels − 1)`. Because `P_k` does not depend on the
//! radiance values it is built once per resolution and shared, and its
//! transpose carries gradients from the mip chain back to the base map.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;

/// Lobe weights below this fraction of the row maximum are dropped from the operator.
const PREFILTER_CUTOFF: f64 = 1e-4;

#[inline]
pub fn direction(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.sin() * phi.cos(),
        theta.cos(),
        theta.sin() * phi.sin(),
    )
}

/// Centre direction of texel `(x, y)` on a `width×height` grid.
#[inline]
pub fn texel_direction(x: usize, y: usize, width: usize, height: usize) -> Vec3 {
    let theta = (y as f64 + 0.5) * PI / height as f64;
    let phi = (x as f64 + 0.5) * 2.0 * PI / width as f64;
    direction(theta, phi)
}

#[derive(Debug)]
struct LevelOperator {
    width: usize,
    height: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

/// Base width, base height, level count.
type OperatorKey = (usize, usize, usize);

/// Sparse prefilter operators for every mip level above 0.
#[derive(Debug)]
pub struct PrefilterOperator {
    base_width: usize,
    base_height: usize,
    levels: Vec<LevelOperator>,
    /// Average `ω·d` under each level's lobe; 1 for mip 0.
    mean_cosines: Vec<f64>,
}

/// GGX normal distribution in terms of `α = ρ²`.
#[inline]
pub(crate) fn ndf_alpha(cos: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let denom = cos * cos * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

impl PrefilterOperator {
    fn build(base_width: usize, base_height: usize, levels: usize) -> Self {
        let texel_area = (PI / base_height as f64) * (2.0 * PI / base_width as f64);
        let mut src_dirs = Vec::with_capacity(base_width * base_height);
        let mut src_area = Vec::with_capacity(base_width * base_height);
        for y in 0..base_height {
            let theta = (y as f64 + 0.5) * PI / base_height as f64;
            for x in 0..base_width {
                src_dirs.push(texel_direction(x, y, base_width, base_height));
                src_area.push(theta.sin() * texel_area);
            }
        }

        let mut ops = Vec::new();
        let mut mean_cosines = vec![1.0];
        for k in 1..levels {
            let rho = k as f64 / (levels - 1) as f64;
            let alpha = rho * rho;
            let (width, height) = (base_width >> k, base_height >> k);
            let mut row_start = vec![0];
            let mut cols = Vec::new();
            let mut weights = Vec::new();
            let mut row = Vec::new();
            let mut cos_sum = 0.0;
            for y in 0..height {
                for x in 0..width {
                    let d = texel_direction(x, y, width, height);
                    row.clear();
                    let mut max_w: f64 = 0.0;
                    for (j, (w_dir, area)) in src_dirs.iter().zip(&src_area).enumerate() {
                        let c = d.dot(w_dir);
                        if c > 0.0 {
                            let w = ndf_alpha(c, alpha) * c * area;
                            max_w = max_w.max(w);
                            row.push((j as u32, w));
                        }
                    }
                    let cutoff = max_w * PREFILTER_CUTOFF;
                    row.retain(|&(_, w)| w >= cutoff);
                    let total: f64 = row.iter().map(|&(_, w)| w).sum();
                    for &(j, w) in &row {
                        cols.push(j);
                        weights.push(w / total);
                        cos_sum += w / total * d.dot(&src_dirs[j as usize]);
                    }
                    row_start.push(cols.len());
                }
            }
            mean_cosines.push(cos_sum / (width * height) as f64);
            ops.push(LevelOperator {
                width,
                height,
                row_start,
                cols,
                weights,
            });
        }
        Self {
            base_width,
            base_height,
            levels: ops,
            mean_cosines,
        }
    }

    /// Shared operator for a resolution; built on first use.
    pub fn shared(base_width: usize, base_height: usize, levels: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<OperatorKey, Arc<PrefilterOperator>>>> =
            OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (base_width, base_height, levels);
        if let Some(op) = cache.lock().unwrap().get(&key) {
            return op.clone();
        }
        let op = Arc::new(Self::build(base_width, base_height, levels));
        cache.lock().unwrap().entry(key).or_insert(op).clone()
    }

    fn apply(&self, level: usize, base: &Image) -> Image {
        let op = &self.levels[level - 1];
        let mut out = Image::new(op.width, op.height, 3);
        let src = base.data();
        for (row, px) in out.data_mut().chunks_exact_mut(3).enumerate() {
            let (a, b) = (op.row_start[row], op.row_start[row + 1]);
            let mut acc = [0.0; 3];
            for (&j, &w) in op.cols[a..b].iter().zip(&op.weights[a..b]) {
                let s = &src[j as usize * 3..j as usize * 3 + 3];
                acc[0] += w * s[0];
                acc[1] += w * s[1];
                acc[2] += w * s[2];
            }
            px.copy_from_slice(&acc);
        }
        out
    }

    fn apply_transpose(&self, level: usize, grad_level: &[f64], grad_base: &mut [f64]) {
        let op = &self.levels[level - 1];
        for row in 0..op.width * op.height {
            let g = &grad_level[row * 3..row * 3 + 3];
            if g == [0.0; 3] {
                continue;
            }
            let (a, b) = (op.row_start[row], op.row_start[row + 1]);
            for (&j, &w) in op.cols[a..b].iter().zip(&op.weights[a..b]) {
                let dst = &mut grad_base[j as usize * 3..j as usize * 3 + 3];
                dst[0] += w * g[0];
                dst[1] += w * g[1];
                dst[2] += w * g[2];
            }
        }
    }

    pub fn mean_cosines(&self) -> &[f64] {
        &self.mean_cosines
    }

    pub fn nonzeros(&self) -> usize {
        self.levels.iter().map(|l| l.weights.len()).sum()
    }

    pub fn base_size(&self) -> (usize, usize) {
        (self.base_width, self.base_height)
    }
}

/// Result of one bilinear lookup: the value, its derivative w.r.t. the
/// direction (one row per channel), and the four texels touched.
#[derive(Clone, Copy, Debug)]
pub struct BilinearSample {
    pub value: [f64; 3],
    pub d_dir: [Vec3; 3],
    pub texels: [usize; 4],
    pub weights: [f64; 4],
}

#[derive(Clone, Debug)]
pub struct EnvironmentLight {
    base: Image,
    mips: Vec<Image>,
    operator: Arc<PrefilterOperator>,
}

impl PartialEq for EnvironmentLight {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.mips.len() == other.mips.len()
    }
}

impl EnvironmentLight {
    /// Builds the light and its mip chain; `levels` counts mip 0.
    pub fn new(base: Image, levels: usize) -> Result<Self> {
        if base.channels() != 3 {
            return Err(Error::DimensionMismatch(
                "environment map must have 3 channels".into(),
            ));
        }
        if levels == 0 || levels > 16 {
            return Err(Error::Config(format!("invalid mip level count {levels}")));
        }
        let scale = 1usize << (levels - 1);
        if !base.width().is_multiple_of(scale)
            || !base.height().is_multiple_of(scale)
            || base.width() < scale
            || base.height() < scale
        {
            return Err(Error::Config(format!(
                "environment {}x{} cannot hold {levels} mip levels",
                base.width(),
                base.height()
            )));
        }
        if base.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "environment radiance must be finite and ≥ 0".into(),
            ));
        }
        let operator = PrefilterOperator::shared(base.width(), base.height(), levels);
        let mut env = Self {
            base,
            mips: Vec::new(),
            operator,
        };
        env.mips = vec![Image::new(0, 0, 3); levels];
        env.rebuild_mips();
        Ok(env)
    }

    pub fn constant(
        width: usize,
        height: usize,
        levels: usize,
        radiance: [f64; 3],
    ) -> Result<Self> {
        let mut base = Image::new(width, height, 3);
        for px in base.data_mut().chunks_exact_mut(3) {
            px.copy_from_slice(&radiance);
        }
        Self::new(base, levels)
    }

    /// Fills the base map from a radiance function of direction.
    pub fn from_fn(
        width: usize,
        height: usize,
        levels: usize,
        f: impl Fn(&Vec3) -> [f64; 3],
    ) -> Result<Self> {
        let mut base = Image::new(width, height, 3);
        for y in 0..height {
            for x in 0..width {
                base.pixel_mut(x, y)
                    .copy_from_slice(&f(&texel_direction(x, y, width, height)));
            }
        }
        Self::new(base, levels)
    }

    pub fn base(&self) -> &Image {
        &self.base
    }

    /// Mutable access to the base map; call [`rebuild_mips`](Self::rebuild_mips) afterwards.
    pub fn base_mut(&mut self) -> &mut Image {
        &mut self.base
    }

    pub fn levels(&self) -> usize {
        self.mips.len()
    }

    pub fn mip(&self, level: usize) -> &Image {
        &self.mips[level]
    }

    pub fn rebuild_mips(&mut self) {
        self.mips[0] = self.base.clone();
        for k in 1..self.mips.len() {
            self.mips[k] = self.operator.apply(k, &self.base);
        }
    }

    /// Clamps negative radiance to zero and rebuilds the mip chain.
    pub fn project_nonnegative(&mut self) {
        for v in self.base.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.rebuild_mips();
    }

    /// Bilinear lookup on one mip level: wraps in `φ`, clamps in `θ`.
    pub fn sample(&self, level: usize, dir: &Vec3) -> BilinearSample {
        let img = &self.mips[level];
        let (w, h) = (img.width(), img.height());
        let (x, y, z) = (dir.x, dir.y, dir.z);
        let rxz2 = x * x + z * z;
        let rxz = rxz2.sqrt();
        let mut phi = z.atan2(x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let theta = rxz.atan2(y);

        let u = phi / (2.0 * PI) * w as f64 - 0.5;
        let v = theta / PI * h as f64 - 0.5;

        let x0f = u.floor();
        let fx = u - x0f;
        let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
        let x1 = (x0 + 1) % w;

        let (y0, y1, fy, v_active) = if v <= 0.0 {
            (0, 0, 0.0, false)
        } else if v >= (h - 1) as f64 {
            (h - 1, h - 1, 0.0, false)
        } else {
            let y0 = v.floor() as usize;
            (y0, y0 + 1, v - y0 as f64, true)
        };

        let t00 = img.pixel(x0, y0);
        let t10 = img.pixel(x1, y0);
        let t01 = img.pixel(x0, y1);
        let t11 = img.pixel(x1, y1);
        let weights = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let mut value = [0.0; 3];
        let mut du = [0.0; 3];
        let mut dv = [0.0; 3];
        for c in 0..3 {
            value[c] = weights[0] * t00[c]
                + weights[1] * t10[c]
                + weights[2] * t01[c]
                + weights[3] * t11[c];
            du[c] = (1.0 - fy) * (t10[c] - t00[c]) + fy * (t11[c] - t01[c]);
            dv[c] = if v_active {
                (1.0 - fx) * (t01[c] - t00[c]) + fx * (t11[c] - t10[c])
            } else {
                0.0
            };
        }

        // du/ddir and dv/ddir.
        let du_dir = if rxz2 > 0.0 {
            Vec3::new(-z / rxz2, 0.0, x / rxz2) * (w as f64 / (2.0 * PI))
        } else {
            Vec3::zeros()
        };
        let r2 = rxz2 + y * y;
        let dv_dir = if rxz > 0.0 {
            Vec3::new(y * x / (r2 * rxz), -rxz / r2, y * z / (r2 * rxz)) * (h as f64 / PI)
        } else {
            Vec3::zeros()
        };
        let d_dir = [
            du_dir * du[0] + dv_dir * dv[0],
            du_dir * du[1] + dv_dir * dv[1],
            du_dir * du[2] + dv_dir * dv[2],
        ];
        BilinearSample {
            value,
            d_dir,
            texels: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            weights,
        }
    }

    /// Splits a fractional mip level into `(lower level, upper level, blend)`.
    pub fn level_blend(&self, level: f64) -> (usize, usize, f64) {
        let max = (self.levels() - 1) as f64;
        let level = level.clamp(0.0, max);
        let l0 = level.floor() as usize;
        if l0 + 1 >= self.levels() {
            (l0, l0, 0.0)
        } else {
            (l0, l0 + 1, level - l0 as f64)
        }
    }

    /// Fractional mip level whose lobe has mean cosine `spread`, with its derivative.
    ///
    /// Interpolates linearly between the levels' measured mean cosines and clamps
    /// to the ends of the chain.
    pub fn level_for_spread(&self, spread: f64) -> (f64, f64) {
        let c = self.operator.mean_cosines();
        if spread >= c[0] {
            return (0.0, 0.0);
        }
        for k in 0..c.len() - 1 {
            if spread >= c[k + 1] {
                let slope = 1.0 / (c[k + 1] - c[k]);
                return (k as f64 + (spread - c[k]) * slope, slope);
            }
        }
        ((c.len() - 1) as f64, 0.0)
    }

    /// Trilinear lookup across the mip chain.
    pub fn sample_trilinear(&self, dir: &Vec3, level: f64) -> [f64; 3] {
        let (l0, l1, t) = self.level_blend(level);
        let a = self.sample(l0, dir).value;
        if t == 0.0 {
            return a;
        }
        let b = self.sample(l1, dir).value;
        [0, 1, 2].map(|c| (1.0 - t) * a[c] + t * b[c])
    }

    pub fn operator(&self) -> &Arc<PrefilterOperator> {
        &self.operator
    }
}

/// Gradient accumulator for one environment light, held per mip level.
#[derive(Clone, Debug)]
pub struct EnvGrad {
    levels: Vec<Vec<f64>>,
}

impl EnvGrad {
    pub fn zeros(env: &EnvironmentLight) -> Self {
        Self {
            levels: env.mips.iter().map(|m| vec![0.0; m.data().len()]).collect(),
        }
    }

    #[inline]
    pub fn scatter(&mut self, level: usize, sample: &BilinearSample, scale: f64, grad: [f64; 3]) {
        let dst = &mut self.levels[level];
        for (&t, &w) in sample.texels.iter().zip(&sample.weights) {
            let ww = w * scale;
            if ww == 0.0 {
                continue;
            }
            dst[t * 3] += ww * grad[0];
            dst[t * 3 + 1] += ww * grad[1];
            dst[t * 3 + 2] += ww * grad[2];
        }
    }

    /// Collapses the per-level gradients onto the base map.
    pub fn into_base(self, env: &EnvironmentLight) -> Vec<f64> {
        let mut levels = self.levels.into_iter();
        let mut base = levels.next().unwrap_or_default();
        for (k, g) in levels.enumerate() {
            env.operator.apply_transpose(k + 1, &g, &mut base);
        }
        base
    }
}
