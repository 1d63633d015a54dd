//! Tile-based front-to-back rasterization of projected splats and its exact
//! reverse pass.

mod camera;
mod project;

pub use camera::{orthonormality_error, CameraView};
pub use project::{project, project_backward, GeometryGrad, Projected2D, ProjectedGrad};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::sigmoid_grad;
use crate::scene::{
    NormalFrame, ParamGradients, ParamGroup, ParamLayout, SpectralScene, ENCODING_DIM,
};
use crate::shading::{shade_splat, shade_splat_backward, EnvGrad, ShadingConfig, SplatShading};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Added to both diagonal entries of every 2D covariance (pixels²).
    pub cov_regularizer: f64,
    /// Contributions below this alpha are skipped.
    pub alpha_cutoff: f64,
    pub max_alpha: f64,
    /// Compositing stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Footprint radius in standard deviations.
    pub sigma_extent: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cov_regularizer: 0.3,
            alpha_cutoff: 1.0 / 255.0,
            max_alpha: 0.999,
            min_transmittance: 1e-4,
            sigma_extent: 3.0,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        if !(self.max_alpha > 0.0 && self.max_alpha < 1.0) {
            return Err(Error::Config("max_alpha must lie in (0, 1)".into()));
        }
        if !(self.cov_regularizer >= 0.0 && self.sigma_extent > 0.0 && self.alpha_cutoff >= 0.0) {
            return Err(Error::Config(
                "raster thresholds must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel evaluation of one splat's footprint.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    alpha: f64,
    falloff: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

#[inline]
fn footprint(
    p: &Projected2D,
    opacity: f64,
    px: f64,
    py: f64,
    cfg: &RasterConfig,
) -> Option<Footprint> {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    let [a, b, c] = p.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if q > cfg.sigma_extent * cfg.sigma_extent {
        return None;
    }
    let falloff = (-0.5 * q).exp();
    let raw = opacity * falloff;
    let clamped = raw > cfg.max_alpha;
    let alpha = if clamped { cfg.max_alpha } else { raw };
    (alpha >= cfg.alpha_cutoff).then_some(Footprint {
        alpha,
        falloff,
        dx,
        dy,
        clamped,
    })
}

/// Alpha of a splat at `pixel` (pixel-space coordinates), or 0 where it is skipped.
pub fn alpha_at_pixel(p: &Projected2D, opacity: f64, pixel: [f64; 2], cfg: &RasterConfig) -> f64 {
    footprint(p, opacity, pixel[0], pixel[1], cfg).map_or(0.0, |f| f.alpha)
}

/// Front-to-back compositing of `(color, alpha)` pairs already sorted by depth.
/// Returns the composited color and the final transmittance.
pub fn composite(layers: &[([f64; 3], f64)], cfg: &RasterConfig) -> ([f64; 3], f64) {
    let mut out = [0.0; 3];
    let mut t = 1.0;
    for (color, alpha) in layers {
        for c in 0..3 {
            out[c] += color[c] * alpha * t;
        }
        t *= 1.0 - alpha;
        if t < cfg.min_transmittance {
            break;
        }
    }
    (out, t)
}

/// A visible splat after projection and shading.
#[derive(Clone, Debug)]
pub struct PreparedSplat {
    /// Index into `scene.gaussians`.
    pub index: usize,
    pub projected: Projected2D,
    pub opacity: f64,
    pub frame: NormalFrame,
    pub shading: SplatShading,
    pub encoding: [f64; ENCODING_DIM],
}

/// Projects, shades and depth-sorts (ties by index) every visible splat for one band.
pub fn prepare_splats(
    scene: &SpectralScene,
    cam: &CameraView,
    band: usize,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<Vec<PreparedSplat>> {
    if band >= scene.num_bands() {
        return Err(Error::UnknownBand(format!("index {band}")));
    }
    let env = scene.environment(band);
    let mut out: Vec<PreparedSplat> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let projected = project(g, cam, raster)?;
            let frame = NormalFrame::new(g, &projected.view_dir);
            let app = &g.bands[band];
            let shading = shade_splat(&frame.normal, &projected.view_dir, app, env, shading);
            Some(PreparedSplat {
                index,
                projected,
                opacity: g.opacity(),
                frame,
                shading,
                encoding: app.encoding,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.projected
            .depth
            .total_cmp(&b.projected.depth)
            .then(a.index.cmp(&b.index))
    });
    Ok(out)
}

/// Rendered band image with identity features and coverage.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    /// Composited identity encodings, `ENCODING_DIM` channels.
    pub id_feature: Image,
    pub alpha: Image,
    /// Per pixel (row-major), the `(gaussian index, alpha)` pairs that were composited, in order.
    pub contributions: Option<Vec<Vec<(u32, f64)>>>,
}

/// State of a forward pass needed by [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderTape {
    pub splats: Vec<PreparedSplat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    band: usize,
}

impl RenderTape {
    pub fn band(&self) -> usize {
        self.band
    }
}

/// Pixel-rectangle of one tile.
fn tile_rect(
    tile: usize,
    tiles_x: usize,
    cam: &CameraView,
    ts: usize,
) -> (usize, usize, usize, usize) {
    let x0 = (tile % tiles_x) * ts;
    let y0 = (tile / tiles_x) * ts;
    (x0, y0, (x0 + ts).min(cam.width), (y0 + ts).min(cam.height))
}

fn bin_tiles(splats: &[PreparedSplat], cam: &CameraView, ts: usize) -> (Vec<Vec<u32>>, usize) {
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let (w, h) = (cam.width as f64, cam.height as f64);
    for (k, s) in splats.iter().enumerate() {
        let p = &s.projected;
        // Pixels whose centres lie inside the extent box.
        let x0 = (p.mean2d[0] - p.extent[0] - 0.5).ceil().clamp(0.0, w - 1.0) as usize;
        let x1 = (p.mean2d[0] + p.extent[0] - 0.5)
            .floor()
            .clamp(0.0, w - 1.0) as usize;
        let y0 = (p.mean2d[1] - p.extent[1] - 0.5).ceil().clamp(0.0, h - 1.0) as usize;
        let y1 = (p.mean2d[1] + p.extent[1] - 0.5)
            .floor()
            .clamp(0.0, h - 1.0) as usize;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    (tiles, tiles_x)
}

struct TileForward {
    color: Vec<[f64; 3]>,
    feature: Vec<[f64; ENCODING_DIM]>,
    alpha: Vec<f64>,
    log: Vec<Vec<(u32, f64)>>,
}

pub fn render(
    scene: &SpectralScene,
    cam: &CameraView,
    band: usize,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<RenderOutput> {
    render_traced(scene, cam, band, raster, shading, false).map(|(out, _)| out)
}

/// Forward pass that also returns the tape for [`render_backward`]. With
/// `record_contributions` the per-pixel compositing log is filled in.
pub fn render_traced(
    scene: &SpectralScene,
    cam: &CameraView,
    band: usize,
    raster: &RasterConfig,
    shading: &ShadingConfig,
    record_contributions: bool,
) -> Result<(RenderOutput, RenderTape)> {
    raster.validate()?;
    cam.validate()?;
    let splats = prepare_splats(scene, cam, band, raster, shading)?;
    let ts = raster.tile_size;
    let (tiles, tiles_x) = bin_tiles(&splats, cam, ts);

    let results: Vec<TileForward> = tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (x0, y0, x1, y1) = tile_rect(tile, tiles_x, cam, ts);
            let n = (x1 - x0) * (y1 - y0);
            let mut out = TileForward {
                color: Vec::with_capacity(n),
                feature: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                log: Vec::new(),
            };
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut color = [0.0; 3];
                    let mut feature = [0.0; ENCODING_DIM];
                    let mut log = Vec::new();
                    let mut t = 1.0;
                    for &k in list {
                        let s = &splats[k as usize];
                        let Some(f) = footprint(&s.projected, s.opacity, px, py, raster) else {
                            continue;
                        };
                        let w = f.alpha * t;
                        for c in 0..3 {
                            color[c] += s.shading.color[c] * w;
                        }
                        for c in 0..ENCODING_DIM {
                            feature[c] += s.encoding[c] * w;
                        }
                        if record_contributions {
                            log.push((s.index as u32, f.alpha));
                        }
                        t *= 1.0 - f.alpha;
                        if t < raster.min_transmittance {
                            break;
                        }
                    }
                    out.color.push(color);
                    out.feature.push(feature);
                    out.alpha.push(1.0 - t);
                    if record_contributions {
                        out.log.push(log);
                    }
                }
            }
            out
        })
        .collect();

    let (w, h) = (cam.width, cam.height);
    let mut color = Image::new(w, h, 3);
    let mut id_feature = Image::new(w, h, ENCODING_DIM);
    let mut alpha = Image::new(w, h, 1);
    let mut contributions = record_contributions.then(|| vec![Vec::new(); w * h]);
    for (tile, mut r) in results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = tile_rect(tile, tiles_x, cam, ts);
        let mut i = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                color.pixel_mut(x, y).copy_from_slice(&r.color[i]);
                id_feature.pixel_mut(x, y).copy_from_slice(&r.feature[i]);
                alpha.pixel_mut(x, y)[0] = r.alpha[i];
                if let Some(log) = contributions.as_mut() {
                    log[y * w + x] = std::mem::take(&mut r.log[i]);
                }
                i += 1;
            }
        }
    }
    Ok((
        RenderOutput {
            color,
            id_feature,
            alpha,
            contributions,
        },
        RenderTape {
            splats,
            tiles,
            tiles_x,
            band,
        },
    ))
}

/// Loss gradients with respect to the rendered images. Missing images mean zero gradient.
#[derive(Clone, Debug)]
pub struct ImageGrads {
    pub color: Image,
    pub id_feature: Option<Image>,
    pub alpha: Option<Image>,
}

impl ImageGrads {
    pub fn color_only(color: Image) -> Self {
        Self {
            color,
            id_feature: None,
            alpha: None,
        }
    }
}

/// Per-splat gradient accumulator over screen-space quantities.
#[derive(Clone, Copy, Debug)]
struct SplatAccum {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    feature: [f64; ENCODING_DIM],
}

impl Default for SplatAccum {
    fn default() -> Self {
        Self {
            mean2d: [0.0; 2],
            conic: [0.0; 3],
            opacity: 0.0,
            color: [0.0; 3],
            feature: [0.0; ENCODING_DIM],
        }
    }
}

impl SplatAccum {
    fn add(&mut self, o: &SplatAccum) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
        for i in 0..ENCODING_DIM {
            self.feature[i] += o.feature[i];
        }
    }
}

/// Reverse pass of [`render_traced`]: gradients of `Σ grads ⊙ outputs` with
/// respect to every scene parameter. Classifier groups are left at zero.
///
/// Tiles are processed in parallel and reduced in tile order, so the result
/// is deterministic for a given tile size.
pub fn render_backward(
    scene: &SpectralScene,
    cam: &CameraView,
    tape: &RenderTape,
    grads: &ImageGrads,
    raster: &RasterConfig,
    shading: &ShadingConfig,
) -> Result<ParamGradients> {
    if shading.use_quadrature {
        return Err(Error::Config(
            "the quadrature specular path has no gradients".into(),
        ));
    }
    let (w, h) = (cam.width, cam.height);
    let check = |img: &Image, ch: usize, what: &str| {
        if img.width() != w || img.height() != h || img.channels() != ch {
            Err(Error::DimensionMismatch(format!(
                "{what} gradient is {}x{}x{}, expected {w}x{h}x{ch}",
                img.width(),
                img.height(),
                img.channels()
            )))
        } else {
            Ok(())
        }
    };
    check(&grads.color, 3, "color")?;
    if let Some(g) = &grads.id_feature {
        check(g, ENCODING_DIM, "feature")?;
    }
    if let Some(g) = &grads.alpha {
        check(g, 1, "alpha")?;
    }

    let splats = &tape.splats;
    let ts = raster.tile_size;
    let tile_accums: Vec<Vec<SplatAccum>> = tape
        .tiles
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![SplatAccum::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (x0, y0, x1, y1) = tile_rect(tile, tape.tiles_x, cam, ts);
            let mut hits: Vec<(usize, Footprint, f64)> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    hits.clear();
                    let mut t = 1.0;
                    for (pos, &k) in list.iter().enumerate() {
                        let s = &splats[k as usize];
                        let Some(f) = footprint(&s.projected, s.opacity, px, py, raster) else {
                            continue;
                        };
                        hits.push((pos, f, t));
                        t *= 1.0 - f.alpha;
                        if t < raster.min_transmittance {
                            break;
                        }
                    }
                    if hits.is_empty() {
                        continue;
                    }
                    let t_final = t;
                    let g_color = grads.color.pixel(x, y);
                    let g_feat = grads.id_feature.as_ref().map(|g| g.pixel(x, y));
                    let g_alpha = grads.alpha.as_ref().map_or(0.0, |g| g.pixel(x, y)[0]);

                    // Suffix sums of the loss-weighted contributions behind each hit.
                    let mut behind = 0.0;
                    for &(pos, f, t_i) in hits.iter().rev() {
                        let s = &splats[list[pos] as usize];
                        let a = &mut acc[pos];
                        let wgt = f.alpha * t_i;
                        let mut own = 0.0;
                        for c in 0..3 {
                            a.color[c] += g_color[c] * wgt;
                            own += g_color[c] * s.shading.color[c];
                        }
                        if let Some(gf) = g_feat {
                            for c in 0..ENCODING_DIM {
                                a.feature[c] += gf[c] * wgt;
                                own += gf[c] * s.encoding[c];
                            }
                        }
                        let one_minus = 1.0 - f.alpha;
                        let g_a = own * t_i - behind / one_minus + g_alpha * t_final / one_minus;
                        behind += own * wgt;
                        if f.clamped {
                            continue;
                        }
                        a.opacity += g_a * f.falloff;
                        let g_q = -0.5 * g_a * s.opacity * f.falloff;
                        let [ca, cb, cc] = s.projected.conic;
                        a.mean2d[0] -= g_q * 2.0 * (ca * f.dx + cb * f.dy);
                        a.mean2d[1] -= g_q * 2.0 * (cb * f.dx + cc * f.dy);
                        a.conic[0] += g_q * f.dx * f.dx;
                        a.conic[1] += g_q * 2.0 * f.dx * f.dy;
                        a.conic[2] += g_q * f.dy * f.dy;
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![SplatAccum::default(); splats.len()];
    for (list, acc) in tape.tiles.iter().zip(&tile_accums) {
        for (&k, a) in list.iter().zip(acc) {
            total[k as usize].add(a);
        }
    }

    let band = tape.band;
    let env_slot = scene.env_index(band);
    let env = &scene.environments[env_slot];
    let mut env_grad = EnvGrad::zeros(env);
    let mut out = ParamGradients::zeros(ParamLayout::of(scene));
    for (s, acc) in splats.iter().zip(&total) {
        let g = &scene.gaussians[s.index];
        let app = &g.bands[band];
        let view = s.projected.view_dir;
        let sg = shade_splat_backward(
            &s.shading,
            app,
            &s.frame.normal,
            &view,
            acc.color,
            &mut env_grad,
            shading,
        );
        let (g_r_normal, g_normal_params) = s.frame.backward(g, &sg.normal);
        let pg = ProjectedGrad {
            mean2d: acc.mean2d,
            conic: acc.conic,
            view_dir: sg.view,
        };
        let mut geo = project_backward(g, cam, &s.projected, &pg);
        geo.rotation_matrix += g_r_normal;
        let i = s.index;
        add_into(out.slot_mut(ParamGroup::Mean, i), geo.mean.as_slice());
        add_into(out.slot_mut(ParamGroup::LogScale, i), &geo.log_scale);
        add_into(out.slot_mut(ParamGroup::Rotation, i), &geo.rotation(g));
        out.slot_mut(ParamGroup::Opacity, i)[0] += acc.opacity * sigmoid_grad(g.opacity_logit);
        add_into(
            out.slot_mut(ParamGroup::NormalPerturbation, i),
            &g_normal_params,
        );
        add_into(
            out.slot_mut(ParamGroup::Diffuse(band), i),
            &sg.diffuse_logits,
        );
        add_into(
            out.slot_mut(ParamGroup::Specular(band), i),
            &sg.specular_logits,
        );
        out.slot_mut(ParamGroup::Roughness(band), i)[0] += sg.roughness_logit;
        add_into(out.slot_mut(ParamGroup::Encoding(band), i), &acc.feature);
    }
    add_into(
        out.group_mut(ParamGroup::Environment(env_slot)),
        &env_grad.into_base(env),
    );
    Ok(out)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::BandTable;
    use crate::math::Vec3;
    use crate::scene::{IdentityClassifier, SpectralGaussian};
    use crate::shading::EnvironmentLight;

    fn cam() -> CameraView {
        CameraView::look_at(
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            0.7,
            40,
            32,
            0.1,
            10.0,
        )
        .unwrap()
    }

    fn scene(splats: Vec<SpectralGaussian>) -> SpectralScene {
        SpectralScene {
            band_table: BandTable::from_centers(&[550.0], 20.0).unwrap(),
            gaussians: splats,
            environments: vec![EnvironmentLight::constant(16, 8, 2, [0.5, 0.5, 0.5]).unwrap()],
            classifiers: vec![IdentityClassifier::zeros(2); 2],
            full_priors_initialized: false,
        }
    }

    fn splat(mean: [f64; 3], opacity_logit: f64, diffuse: f64) -> SpectralGaussian {
        let mut g = SpectralGaussian::new(mean, 2);
        g.log_scale = [-1.8, -1.8, -3.0];
        g.opacity_logit = opacity_logit;
        g.bands[0].diffuse_logits = [diffuse; 3];
        g.bands[0].specular_logits = [-4.0; 3];
        g
    }

    #[test]
    fn composite_single_layer() {
        let (c, t) = composite(&[([1.0, 0.5, 0.0], 0.5)], &RasterConfig::default());
        assert_eq!(c, [0.5, 0.25, 0.0]);
        assert_eq!(t, 0.5);
    }

    #[test]
    fn alpha_clamps_and_vanishes_far_away() {
        let p = Projected2D {
            mean2d: [10.0, 10.0],
            cov2d: [1.0, 0.0, 1.0],
            conic: [1.0, 0.0, 1.0],
            depth: 1.0,
            view_dir: Vec3::z(),
            extent: [3.0, 3.0],
        };
        let cfg = RasterConfig::default();
        assert_eq!(alpha_at_pixel(&p, 1.0, [10.0, 10.0], &cfg), 0.999);
        assert_eq!(alpha_at_pixel(&p, 1.0, [100.0, 10.0], &cfg), 0.0);
    }

    #[test]
    fn empty_scene_is_transparent() {
        let out = render(
            &scene(vec![]),
            &cam(),
            0,
            &RasterConfig::default(),
            &ShadingConfig::default(),
        )
        .unwrap();
        assert!(out.alpha.data().iter().all(|&a| a == 0.0));
        assert!(out.color.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn nearer_splat_occludes() {
        let front = splat([0.0, 0.0, 0.5], 6.0, 4.0);
        let back = splat([0.0, 0.0, -0.5], 6.0, -4.0);
        let s = scene(vec![back, front]);
        let (out, _) = render_traced(
            &s,
            &cam(),
            0,
            &RasterConfig::default(),
            &ShadingConfig::default(),
            true,
        )
        .unwrap();
        let log = out.contributions.unwrap();
        let centre = &log[16 * 40 + 20];
        assert_eq!(centre[0].0, 1);
        assert!(out.color.get(20, 16, 0) > 0.9);
    }

    #[test]
    fn tile_size_does_not_change_pixels() {
        let s = scene(vec![
            splat([0.1, 0.0, 0.2], 0.5, 1.0),
            splat([-0.2, 0.1, -0.3], 1.0, -1.0),
            splat([0.0, -0.15, 0.0], -0.5, 0.0),
        ]);
        let mut cfg = RasterConfig::default();
        let a = render(&s, &cam(), 0, &cfg, &ShadingConfig::default()).unwrap();
        cfg.tile_size = 7;
        let b = render(&s, &cam(), 0, &cfg, &ShadingConfig::default()).unwrap();
        assert_eq!(a.color, b.color);
        assert_eq!(a.alpha, b.alpha);
    }
}
