//! Per-band splat shading: `γ(c_d + s ⊙ L_s)` with a GGX specular term
//! integrated against the environment light.

pub mod envmap;
pub mod lut;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::color::GammaCurve;
use crate::error::{Error, Result};
use crate::math::{normalize_backward, sigmoid, sigmoid_grad, Vec3};
use crate::scene::BandAppearance;

use envmap::{ndf_alpha, BilinearSample};
pub use envmap::{EnvGrad, EnvironmentLight};
use lut::{LobeMoments, LobeTable};

/// Polar × azimuthal resolution of the hemisphere quadrature.
pub const QUADRATURE_THETA: usize = 32;
pub const QUADRATURE_PHI: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingConfig {
    /// Lower bound applied to decoded roughness before shading.
    pub roughness_floor: f64,
    pub gamma: GammaCurve,
    /// Integrate the specular term by quadrature instead of the mip chain (forward only).
    pub use_quadrature: bool,
    pub env_width: usize,
    pub env_height: usize,
    pub env_levels: usize,
    /// One environment map for all bands instead of one per band.
    pub shared_env: bool,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        Self {
            roughness_floor: 0.02,
            gamma: GammaCurve::Srgb,
            use_quadrature: false,
            env_width: 128,
            env_height: 64,
            env_levels: 5,
            shared_env: false,
        }
    }
}

/// Geometry and decoded appearance at one shading point.
#[derive(Clone, Copy, Debug)]
pub struct ShadingSample {
    /// Unit direction toward the camera.
    pub omega_o: Vec3,
    pub normal: Vec3,
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub roughness: f64,
}

/// Mirror direction `2(ω_o·n)n − ω_o`.
#[inline]
pub fn reflect(omega_o: &Vec3, n: &Vec3) -> Vec3 {
    2.0 * omega_o.dot(n) * n - omega_o
}

/// Trowbridge-Reitz distribution with `α = ρ²`, evaluated at the cosine to the lobe axis.
pub fn ggx_ndf(cos: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::DegenerateLobe);
    }
    Ok(ndf_alpha(cos, rho * rho))
}

/// Orthonormal tangent frame around a unit vector.
fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

/// Specular radiance by direct quadrature over the hemisphere around `n`:
/// `Σ L(ω)·D(ω·r)·(ω·n)·Δω` on an equal-solid-angle grid, with `L` sampled
/// bilinearly from the base map.
pub fn specular_light_quadrature(sample: &ShadingSample, env: &EnvironmentLight) -> [f64; 3] {
    let n = sample.normal;
    if sample.omega_o.dot(&n) <= 0.0 {
        return [0.0; 3];
    }
    let r = reflect(&sample.omega_o, &n);
    let rho = sample.roughness.max(1e-3);
    let alpha = rho * rho;
    let (t, b) = tangent_frame(&n);
    let d_omega = 2.0 * PI / (QUADRATURE_THETA * QUADRATURE_PHI) as f64;
    let mut acc = [0.0; 3];
    for i in 0..QUADRATURE_THETA {
        let cos_t = 1.0 - (i as f64 + 0.5) / QUADRATURE_THETA as f64;
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        for j in 0..QUADRATURE_PHI {
            let phi = (j as f64 + 0.5) * 2.0 * PI / QUADRATURE_PHI as f64;
            let w = t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t;
            let weight = ndf_alpha(w.dot(&r), alpha) * cos_t * d_omega;
            let radiance = env.sample(0, &w).value;
            for c in 0..3 {
                acc[c] += radiance[c] * weight;
            }
        }
    }
    acc
}

/// Mean direction and mip level of the clipped lobe for one view.
#[derive(Clone, Debug)]
struct LobeLookup {
    moments: LobeMoments,
    m_len: f64,
    d: Vec3,
    level: f64,
    level_slope: f64,
}

fn lobe_lookup(mu: f64, rho: f64, n: &Vec3, r: &Vec3, env: &EnvironmentLight) -> LobeLookup {
    let moments = LobeTable::global().eval(mu, rho);
    let tangential = moments.tangential.value;
    let m = n * (moments.axial.value - mu * tangential) + r * tangential;
    let m_len = m.norm();
    let (level, level_slope) = env.level_for_spread(m_len);
    LobeLookup {
        moments,
        m_len,
        d: m / m_len,
        level,
        level_slope,
    }
}

/// Specular radiance from the prefiltered mip chain. The lookup follows the
/// mean direction of the lobe clipped to the surface hemisphere, at the mip
/// level whose prefilter lobe has the same spread, scaled by the lobe's mass.
/// At zero roughness this is the mip-0 lookup at `r`, scaled by `n·ω_o`.
pub fn specular_light_prefiltered(sample: &ShadingSample, env: &EnvironmentLight) -> [f64; 3] {
    let n = sample.normal;
    let mu = sample.omega_o.dot(&n);
    if mu <= 0.0 {
        return [0.0; 3];
    }
    let rho = sample.roughness.clamp(0.0, 1.0);
    let r = reflect(&sample.omega_o, &n);
    let lobe = lobe_lookup(mu, rho, &n, &r, env);
    let mass = lobe.moments.mass.value;
    env.sample_trilinear(&lobe.d, lobe.level).map(|v| v * mass)
}

/// Display-domain splat color `clip01(γ(c_d + s ⊙ L_s))`.
pub fn shade(
    sample: &ShadingSample,
    env: &EnvironmentLight,
    use_quadrature: bool,
    gamma: GammaCurve,
) -> [f64; 3] {
    let ls = if use_quadrature {
        specular_light_quadrature(sample, env)
    } else {
        specular_light_prefiltered(sample, env)
    };
    [0, 1, 2].map(|c| {
        gamma
            .encode(sample.diffuse[c] + sample.specular[c] * ls[c])
            .clamp(0.0, 1.0)
    })
}

#[derive(Clone, Debug)]
struct SpecularTape {
    mu: f64,
    r: Vec3,
    lobe: LobeLookup,
    lookup: [f64; 3],
    levels: (usize, usize, f64),
    lower: BilinearSample,
    upper: Option<BilinearSample>,
}

/// Forward record of one splat's shading, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SplatShading {
    pub color: [f64; 3],
    linear: [f64; 3],
    specular: [f64; 3],
    radiance: [f64; 3],
    rho_passes: bool,
    spec: Option<SpecularTape>,
}

/// Gradients of a splat's shaded color with respect to its inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct SplatShadingGrad {
    pub diffuse_logits: [f64; 3],
    pub specular_logits: [f64; 3],
    pub roughness_logit: f64,
    /// W.r.t. the camera-facing unit normal.
    pub normal: Vec3,
    /// W.r.t. the unit direction toward the camera.
    pub view: Vec3,
}

/// Shades one splat. `normal` must already face the camera (`normal·view ≥ 0`).
pub fn shade_splat(
    normal: &Vec3,
    view: &Vec3,
    app: &BandAppearance,
    env: &EnvironmentLight,
    cfg: &ShadingConfig,
) -> SplatShading {
    let diffuse = app.diffuse_logits.map(sigmoid);
    let specular = app.specular_logits.map(sigmoid);
    let rho_raw = sigmoid(app.roughness_logit);
    let rho_passes = rho_raw >= cfg.roughness_floor;
    let rho = rho_raw.max(cfg.roughness_floor);

    let mu = normal.dot(view);
    let (radiance, spec) = if cfg.use_quadrature {
        let sample = ShadingSample {
            omega_o: *view,
            normal: *normal,
            diffuse,
            specular,
            roughness: rho,
        };
        (specular_light_quadrature(&sample, env), None)
    } else if mu > 0.0 {
        let r = reflect(view, normal);
        let lobe = lobe_lookup(mu, rho, normal, &r, env);
        let levels = env.level_blend(lobe.level);
        let lower = env.sample(levels.0, &lobe.d);
        let upper = (levels.2 > 0.0).then(|| env.sample(levels.1, &lobe.d));
        let t = levels.2;
        let lookup = [0, 1, 2].map(|c| match &upper {
            Some(u) => (1.0 - t) * lower.value[c] + t * u.value[c],
            None => lower.value[c],
        });
        let mass = lobe.moments.mass.value;
        let radiance = lookup.map(|v| v * mass);
        (
            radiance,
            Some(SpecularTape {
                mu,
                r,
                lobe,
                lookup,
                levels,
                lower,
                upper,
            }),
        )
    } else {
        ([0.0; 3], None)
    };

    let linear = [0, 1, 2].map(|c| diffuse[c] + specular[c] * radiance[c]);
    let color = linear.map(|v| cfg.gamma.encode(v).clamp(0.0, 1.0));
    SplatShading {
        color,
        linear,
        specular,
        radiance,
        rho_passes,
        spec,
    }
}

/// Pulls `∂loss/∂color` back through [`shade_splat`]. Environment gradients are
/// accumulated into `env_grad`.
pub fn shade_splat_backward(
    tape: &SplatShading,
    app: &BandAppearance,
    normal: &Vec3,
    view: &Vec3,
    grad_color: [f64; 3],
    env_grad: &mut EnvGrad,
    cfg: &ShadingConfig,
) -> SplatShadingGrad {
    let mut out = SplatShadingGrad::default();
    let mut g_lin = [0.0; 3];
    for c in 0..3 {
        let encoded = cfg.gamma.encode(tape.linear[c]);
        if encoded < 1.0 {
            g_lin[c] = grad_color[c] * cfg.gamma.derivative(tape.linear[c]);
        }
    }
    for c in 0..3 {
        out.diffuse_logits[c] = g_lin[c] * sigmoid_grad(app.diffuse_logits[c]);
        out.specular_logits[c] = g_lin[c] * tape.radiance[c] * sigmoid_grad(app.specular_logits[c]);
    }
    let Some(sp) = &tape.spec else {
        return out;
    };

    let g_radiance = [0, 1, 2].map(|c| g_lin[c] * tape.specular[c]);
    let lm = &sp.lobe.moments;
    let g_mass: f64 = (0..3).map(|c| g_radiance[c] * sp.lookup[c]).sum();
    let g_lookup = g_radiance.map(|v| v * lm.mass.value);

    // Trilinear lookup.
    let (l0, l1, t) = sp.levels;
    let mut g_dir = Vec3::zeros();
    let mut g_level = 0.0;
    let w0 = if sp.upper.is_some() { 1.0 - t } else { 1.0 };
    for c in 0..3 {
        g_dir += sp.lower.d_dir[c] * (w0 * g_lookup[c]);
    }
    env_grad.scatter(l0, &sp.lower, w0, g_lookup);
    if let Some(upper) = &sp.upper {
        for c in 0..3 {
            g_dir += upper.d_dir[c] * (t * g_lookup[c]);
            g_level += g_lookup[c] * (upper.value[c] - sp.lower.value[c]);
        }
        env_grad.scatter(l1, upper, t, g_lookup);
    }

    // Lobe mean m = (axial − μ·tangential)·n + tangential·r, read along m/|m| at level(|m|).
    let g_m = normalize_backward(&sp.lobe.d, sp.lobe.m_len, &g_dir)
        + sp.lobe.d * (g_level * sp.lobe.level_slope);
    let mu = sp.mu;
    let tangential = lm.tangential.value;
    let mut g_n = g_m * (lm.axial.value - mu * tangential);
    let g_r = g_m * tangential;
    let g_axial = g_m.dot(normal);
    let g_tangential = g_m.dot(&sp.r) - mu * g_axial;
    let g_mu = -tangential * g_axial
        + g_mass * lm.mass.d_mu
        + g_axial * lm.axial.d_mu
        + g_tangential * lm.tangential.d_mu;
    let g_rho =
        g_mass * lm.mass.d_rho + g_axial * lm.axial.d_rho + g_tangential * lm.tangential.d_rho;

    // μ = n·v and r = 2(n·v)n − v.
    g_n += view * g_mu + g_r * (2.0 * mu) + view * (2.0 * g_r.dot(normal));
    let g_v = normal * g_mu + normal * (2.0 * g_r.dot(normal)) - g_r;

    out.normal = g_n;
    out.view = g_v;
    if tape.rho_passes {
        out.roughness_logit = g_rho * sigmoid_grad(app.roughness_logit);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ENCODING_DIM;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    fn gradient_env(levels: usize) -> EnvironmentLight {
        EnvironmentLight::from_fn(128, 64, levels, |d| {
            [
                0.8 + 0.5 * d.y,
                0.6 + 0.3 * d.x - 0.2 * d.z,
                0.5 - 0.2 * d.x + 0.3 * d.z,
            ]
        })
        .unwrap()
    }

    #[test]
    fn reflect_special_cases() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert!((reflect(&n, &n) - n).norm() < 1e-15);
        let o = Vec3::new(1.0, 0.0, 0.0);
        assert!((reflect(&o, &n) + o).norm() < 1e-15);
    }

    #[test]
    fn ggx_peak_and_grazing_values() {
        assert!((ggx_ndf(1.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        let rho: f64 = 0.6;
        let a = rho * rho;
        assert!((ggx_ndf(0.0, rho).unwrap() - a * a / PI).abs() < 1e-15);
        assert!((ggx_ndf(1.0, rho).unwrap() - 1.0 / (PI * a * a)).abs() < 1e-12);
        assert!(matches!(ggx_ndf(0.5, 0.0), Err(Error::DegenerateLobe)));
    }

    #[test]
    fn ggx_projected_hemisphere_integral_is_one() {
        // 100 × 100 midpoint grid in (cos θ, φ).
        for rho in [0.5, 0.7, 1.0] {
            let steps = 100;
            let d_omega = 2.0 * PI / (steps * steps) as f64;
            let mut total = 0.0;
            for i in 0..steps {
                let c = 1.0 - (i as f64 + 0.5) / steps as f64;
                total += steps as f64 * ggx_ndf(c, rho).unwrap() * c * d_omega;
            }
            assert!((total - 1.0).abs() < 0.02, "rho {rho}: {total}");
        }
    }

    #[test]
    fn dark_env_gives_no_specular() {
        let env = EnvironmentLight::constant(32, 16, 3, [0.0; 3]).unwrap();
        let n = Vec3::new(0.0, 1.0, 0.0);
        let s = ShadingSample {
            omega_o: Vec3::new(0.3, 0.9, 0.1).normalize(),
            normal: n,
            diffuse: [0.2, 0.4, 0.6],
            specular: [1.0; 3],
            roughness: 0.5,
        };
        assert_eq!(specular_light_quadrature(&s, &env), [0.0; 3]);
        assert_eq!(specular_light_prefiltered(&s, &env), [0.0; 3]);
        let c = shade(&s, &env, true, GammaCurve::Srgb);
        for k in 0..3 {
            assert_eq!(c[k], GammaCurve::Srgb.encode(s.diffuse[k]));
        }
    }

    #[test]
    fn zero_tint_ignores_environment() {
        let env = gradient_env(3);
        let s = ShadingSample {
            omega_o: Vec3::new(0.0, 1.0, 0.0),
            normal: Vec3::new(0.0, 1.0, 0.0),
            diffuse: [0.1, 0.5, 0.9],
            specular: [0.0; 3],
            roughness: 0.3,
        };
        for quad in [false, true] {
            let c = shade(&s, &env, quad, GammaCurve::Srgb);
            for k in 0..3 {
                assert_eq!(c[k], GammaCurve::Srgb.encode(s.diffuse[k]));
            }
        }
    }

    #[test]
    fn quadrature_is_linear_in_radiance() {
        let s = ShadingSample {
            omega_o: Vec3::new(0.2, 0.9, -0.3).normalize(),
            normal: Vec3::new(0.0, 1.0, 0.0),
            diffuse: [0.0; 3],
            specular: [1.0; 3],
            roughness: 0.6,
        };
        let one = specular_light_quadrature(
            &s,
            &EnvironmentLight::constant(32, 16, 2, [1.0; 3]).unwrap(),
        );
        let three = specular_light_quadrature(
            &s,
            &EnvironmentLight::constant(32, 16, 2, [3.0; 3]).unwrap(),
        );
        for c in 0..3 {
            assert!((three[c] - 3.0 * one[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_specular_shade_matches_quadrature_oracle() {
        let env = EnvironmentLight::constant(32, 16, 3, [0.5; 3]).unwrap();
        let s = ShadingSample {
            omega_o: Vec3::new(0.0, 1.0, 0.0),
            normal: Vec3::new(0.0, 1.0, 0.0),
            diffuse: [0.0; 3],
            specular: [1.0; 3],
            roughness: 0.7,
        };
        let ls = specular_light_quadrature(&s, &env);
        let c = shade(&s, &env, true, GammaCurve::Srgb);
        for k in 0..3 {
            assert_eq!(c[k], GammaCurve::Srgb.encode(ls[k]).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn narrow_lobe_on_bright_patch_returns_patch_radiance() {
        // Bright cap of radius 25° around r; with a narrow lobe nearly all of the
        // lobe mass sees the cap, so L_s ≈ B · (r·n).
        let n = Vec3::new(0.0, 1.0, 0.0);
        let omega_o = Vec3::new(0.5, 3f64.sqrt() / 2.0, 0.0);
        let r = reflect(&omega_o, &n);
        let bright = 4.0;
        let cap = 25f64.to_radians().cos();
        let env = EnvironmentLight::from_fn(256, 128, 1, |d| {
            if d.dot(&r) > cap {
                [bright; 3]
            } else {
                [0.0; 3]
            }
        })
        .unwrap();
        let s = ShadingSample {
            omega_o,
            normal: n,
            diffuse: [0.0; 3],
            specular: [1.0; 3],
            roughness: 0.35,
        };
        let ls = specular_light_quadrature(&s, &env);
        let expected = bright * r.dot(&n);
        assert!(
            (ls[0] / expected - 1.0).abs() < 0.1,
            "{} vs {expected}",
            ls[0]
        );
    }

    #[test]
    fn zero_roughness_prefiltered_is_mip0_lookup_at_mirror() {
        let env = gradient_env(4);
        let n = Vec3::new(0.0, 1.0, 0.0);
        let s = ShadingSample {
            omega_o: n,
            normal: n,
            diffuse: [0.0; 3],
            specular: [1.0; 3],
            roughness: 0.0,
        };
        let got = specular_light_prefiltered(&s, &env);
        let want = env.sample(0, &n).value;
        for c in 0..3 {
            assert!((got[c] - want[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn prefiltered_agrees_with_quadrature_on_smooth_env() {
        // Roughness is drawn from [0.5, 1]: the 32×64 quadrature grid cannot
        // resolve narrower lobes.
        let env = gradient_env(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let mut o = random_unit(&mut rng);
            if o.dot(&n) < 0.05 {
                o = reflect(&o, &n);
                if o.dot(&n) < 0.05 {
                    o = (o + n * 0.5).normalize();
                }
            }
            let s = ShadingSample {
                omega_o: o,
                normal: n,
                diffuse: [0.0; 3],
                specular: [1.0; 3],
                roughness: rng.random_range(0.5..1.0),
            };
            let q = specular_light_quadrature(&s, &env);
            let p = specular_light_prefiltered(&s, &env);
            for c in 0..3 {
                let err = (p[c] - q[c]).abs();
                worst = worst.max(err / q[c].abs().max(1e-4));
            }
        }
        assert!(worst < 0.1, "worst relative error {worst}");
    }

    fn appearance(seed: u64) -> BandAppearance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BandAppearance {
            diffuse_logits: [0; 3].map(|_| rng.random_range(-1.5..0.5)),
            specular_logits: [0; 3].map(|_| rng.random_range(-1.0..1.0)),
            roughness_logit: rng.random_range(-0.5..1.0),
            encoding: [0.0; ENCODING_DIM],
        }
    }

    #[test]
    fn splat_shading_gradients_match_finite_differences() {
        let env = gradient_env(4);
        let cfg = ShadingConfig {
            gamma: GammaCurve::Power { gamma: 2.2 },
            ..ShadingConfig::default()
        };
        let app = appearance(3);
        let normal = Vec3::new(0.2, 0.9, 0.1).normalize();
        let view = Vec3::new(-0.3, 0.8, 0.4).normalize();
        let weights = [0.7, -0.4, 1.1];
        let loss = |n: &Vec3, v: &Vec3, a: &BandAppearance, e: &EnvironmentLight| {
            let s = shade_splat(n, v, a, e, &cfg);
            (0..3).map(|c| weights[c] * s.color[c]).sum::<f64>()
        };
        let tape = shade_splat(&normal, &view, &app, &env, &cfg);
        let mut eg = EnvGrad::zeros(&env);
        let g = shade_splat_backward(&tape, &app, &normal, &view, weights, &mut eg, &cfg);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
            let numeric = (plus - minus) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() < 1e-6 + 1e-5 * numeric.abs(),
                "{what}: {analytic} vs {numeric}"
            );
        };
        for k in 0..3 {
            let (mut p, mut m) = (app, app);
            p.diffuse_logits[k] += h;
            m.diffuse_logits[k] -= h;
            check(
                g.diffuse_logits[k],
                loss(&normal, &view, &p, &env),
                loss(&normal, &view, &m, &env),
                "diffuse",
            );
            let (mut p, mut m) = (app, app);
            p.specular_logits[k] += h;
            m.specular_logits[k] -= h;
            check(
                g.specular_logits[k],
                loss(&normal, &view, &p, &env),
                loss(&normal, &view, &m, &env),
                "specular",
            );
            let (mut np, mut nm) = (normal, normal);
            np[k] += h;
            nm[k] -= h;
            check(
                g.normal[k],
                loss(&np, &view, &app, &env),
                loss(&nm, &view, &app, &env),
                "normal",
            );
            let (mut vp, mut vm) = (view, view);
            vp[k] += h;
            vm[k] -= h;
            check(
                g.view[k],
                loss(&normal, &vp, &app, &env),
                loss(&normal, &vm, &app, &env),
                "view",
            );
        }
        let (mut p, mut m) = (app, app);
        p.roughness_logit += h;
        m.roughness_logit -= h;
        check(
            g.roughness_logit,
            loss(&normal, &view, &p, &env),
            loss(&normal, &view, &m, &env),
            "roughness",
        );

        let base_grad = eg.into_base(&env);
        for idx in (0..env.base().data().len()).step_by(37) {
            let mut ep = env.clone();
            ep.base_mut().data_mut()[idx] += h;
            ep.rebuild_mips();
            let mut em = env.clone();
            em.base_mut().data_mut()[idx] -= h;
            em.rebuild_mips();
            check(
                base_grad[idx],
                loss(&normal, &view, &app, &ep),
                loss(&normal, &view, &app, &em),
                "env",
            );
        }
    }

    proptest! {
        #[test]
        fn reflect_preserves_incidence_angle(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
                                             bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0) {
            let o = Vec3::new(ax, ay, az);
            let n = Vec3::new(bx, by, bz);
            prop_assume!(o.norm() > 0.1 && n.norm() > 0.1);
            let (o, n) = (o.normalize(), n.normalize());
            let r = reflect(&o, &n);
            prop_assert!((r.norm() - 1.0).abs() < 1e-12);
            prop_assert!((r.dot(&n) - o.dot(&n)).abs() < 1e-12);
        }

        #[test]
        fn shading_is_finite_and_monotone_in_diffuse(seed in 0u64..1000, bump in 0.0f64..0.3) {
            let env = EnvironmentLight::constant(16, 8, 3, [0.7, 0.3, 0.9]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = ShadingSample {
                omega_o: random_unit(&mut rng),
                normal: random_unit(&mut rng),
                diffuse: [0; 3].map(|_| rng.random_range(0.0..0.7)),
                specular: [0; 3].map(|_| rng.random_range(0.0..1.0)),
                roughness: rng.random_range(0.0..1.0),
            };
            let mut brighter = s;
            brighter.diffuse = s.diffuse.map(|d| d + bump);
            for quad in [false, true] {
                let a = shade(&s, &env, quad, GammaCurve::Srgb);
                let b = shade(&brighter, &env, quad, GammaCurve::Srgb);
                for c in 0..3 {
                    prop_assert!(a[c].is_finite() && b[c] >= a[c]);
                }
            }
        }
    }
}
