//! Tabulated moments of the clipped specular lobe.
//!
//! For a view with `μ = n·r` the specular weight over directions is
//! `D(ω·r)·max(ω·n, 0)`. Three smooth functions of `(μ, ρ)` are tabulated:
//!
//! * `mass`: `∫ D(ω·r)·max(ω·n, 0) dω`,
//! * `axial`, `tangential`: the normalized first moment `m = ∫ω·(…)dω / mass`
//!   written as `m = (axial − μ·tangential)·n + tangential·r`.
//!
//! The prefiltered lookup reads the mip chain along `m/|m|` at the level whose
//! lobe has mean cosine `|m|`, and scales by `mass`; this is exact for
//! radiance that is linear in direction. Values are interpolated with a C¹
//! bicubic so shading stays smooth in both arguments.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::envmap::ndf_alpha;

const TABLE_SIZE: usize = 48;
const PSI_STEPS: usize = 160;
const PHI_STEPS: usize = 40;

/// `(mass, ∫ω_t, ∫ω_n)` of one lobe hemisphere, in a frame where `n = +z`
/// and the lobe axis lies in the x-z plane with `axis·n = cos_an`.
///
/// Uses the substitution `tan θ = α·tan(ψπ/2)`, which concentrates samples in the lobe.
fn lobe_moments(cos_an: f64, alpha: f64) -> [f64; 3] {
    let sin_an = (1.0 - cos_an * cos_an).max(0.0).sqrt();
    // Frame around the lobe axis: e1 in the x-z plane, e2 = +y.
    let axis = [sin_an, cos_an];
    let e1 = [cos_an, -sin_an];
    let dpsi = 1.0 / PSI_STEPS as f64;
    let dphi = PI / PHI_STEPS as f64;
    let mut total = [0.0; 3];
    for i in 0..PSI_STEPS {
        let psi = (i as f64 + 0.5) * dpsi;
        let t = (psi * PI / 2.0).tan();
        let theta = (alpha * t).atan();
        let dtheta = alpha * (PI / 2.0) * (1.0 + t * t) / (1.0 + alpha * alpha * t * t);
        let (st, ct) = theta.sin_cos();
        let weight = ndf_alpha(ct, alpha) * st * dtheta * dpsi * 2.0 * dphi;
        for j in 0..PHI_STEPS {
            let phi = (j as f64 + 0.5) * dphi;
            let u = st * phi.cos();
            let wx = u * e1[0] + ct * axis[0];
            let wz = u * e1[1] + ct * axis[1];
            if wz > 0.0 {
                total[0] += weight * wz;
                total[1] += weight * wz * wx;
                total[2] += weight * wz * wz;
            }
        }
    }
    total
}

/// `∫ D(ω·a)·max(ω·n, 0) dω` over the hemisphere around `a`, with `a·n = cos_an`.
pub fn lobe_mass(cos_an: f64, alpha: f64) -> f64 {
    lobe_moments(cos_an, alpha)[0]
}

/// Exact moments at one `(μ, ρ)`: `[mass, axial, tangential]`.
pub fn moments(mu: f64, rho: f64) -> [f64; 3] {
    if rho == 0.0 {
        return [mu, mu, 1.0];
    }
    let alpha = rho * rho;
    // The two lobe halves point along r and −r; the back half mirrors the
    // tangential component.
    let front = lobe_moments(mu, alpha);
    let back = lobe_moments(-mu, alpha);
    let mass = front[0] + back[0];
    let mx = front[1] - back[1];
    let mz = front[2] + back[2];
    let sin_r = (1.0 - mu * mu).sqrt();
    let tangential = mx / mass / sin_r;
    let axial = mz / mass;
    [mass, axial, tangential]
}

/// One interpolated table value with its partial derivatives.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sampled {
    pub value: f64,
    pub d_mu: f64,
    pub d_rho: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LobeMoments {
    pub mass: Sampled,
    pub axial: Sampled,
    pub tangential: Sampled,
}

pub struct LobeTable {
    values: [Vec<f64>; 3],
}

impl LobeTable {
    fn build() -> Self {
        let n = TABLE_SIZE;
        let mut values = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
        for j in 0..n {
            let rho = j as f64 / (n - 1) as f64;
            for i in 0..n {
                // The tangential ratio has a removable singularity at μ = 1.
                let mu = (i as f64 / (n - 1) as f64).min(1.0 - 1e-6);
                let m = moments(mu, rho);
                for (table, v) in values.iter_mut().zip(m) {
                    table[j * n + i] = v;
                }
            }
        }
        for i in 0..n {
            values[0][i] = i as f64 / (n - 1) as f64;
            values[1][i] = i as f64 / (n - 1) as f64;
            values[2][i] = 1.0;
        }
        Self { values }
    }

    pub fn global() -> &'static Self {
        static LUT: OnceLock<LobeTable> = OnceLock::new();
        LUT.get_or_init(Self::build)
    }

    pub fn eval(&self, mu: f64, rho: f64) -> LobeMoments {
        let scale = (TABLE_SIZE - 1) as f64;
        let (ui, ut) = split(mu.clamp(0.0, 1.0) * scale);
        let (vi, vt) = split(rho.clamp(0.0, 1.0) * scale);
        let (wu, dwu) = catmull_rom(ut);
        let (wv, dwv) = catmull_rom(vt);
        let inside = |x: f64| if (0.0..=1.0).contains(&x) { scale } else { 0.0 };
        let sample = |table: &[f64]| {
            let (mut g, mut gu, mut gv) = (0.0, 0.0, 0.0);
            for b in 0..4 {
                for a in 0..4 {
                    let f = at(table, ui + a as isize - 1, vi + b as isize - 1);
                    g += wu[a] * wv[b] * f;
                    gu += dwu[a] * wv[b] * f;
                    gv += wu[a] * dwv[b] * f;
                }
            }
            Sampled {
                value: g,
                d_mu: gu * inside(mu),
                d_rho: gv * inside(rho),
            }
        };
        LobeMoments {
            mass: sample(&self.values[0]),
            axial: sample(&self.values[1]),
            tangential: sample(&self.values[2]),
        }
    }
}

#[inline]
fn at(table: &[f64], i: isize, j: isize) -> f64 {
    let n = TABLE_SIZE as isize;
    let i = i.clamp(0, n - 1) as usize;
    let j = j.clamp(0, n - 1) as usize;
    table[j * TABLE_SIZE + i]
}

fn split(x: f64) -> (isize, f64) {
    let max = (TABLE_SIZE - 2) as f64;
    let base = x.floor().min(max);
    (base as isize, x - base)
}

/// Catmull-Rom weights for the four taps around `t ∈ [0, 1]` and their derivatives.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}
