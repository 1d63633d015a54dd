//! Single-scale SSIM over the valid region of an 11×11 Gaussian window, with
//! its exact gradient.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable valid-mode filtering of a `w×h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `ow×oh` map back to `w×h`.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for i in 0..WINDOW {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn check(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_shape(b)?;
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width(),
            height: a.height(),
        });
    }
    Ok(())
}

/// Mean SSIM over all valid window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    ssim_impl(a, b, true).map(|(s, g)| (s, g.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let k = kernel();
    let count = ((w - WINDOW + 1) * (h - WINDOW + 1) * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));
    for c in 0..ch {
        let pa = a.channel(c).into_vec();
        let pb = b.channel(c).into_vec();
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let e_aa = filter_valid(&sq(&pa, &pa), w, h, &k);
        let e_bb = filter_valid(&sq(&pb, &pb), w, h, &k);
        let e_ab = filter_valid(&sq(&pa, &pb), w, h, &k);
        let n = mu_a.len();
        let (mut d_mu, mut d_aa, mut d_ab) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = var_a + var_b + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mu[i] =
                    s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2) / count;
                d_aa[i] = -s / b2 / count;
                d_ab[i] = 2.0 * s / a2 / count;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = filter_adjoint(&d_mu, w, h, &k);
            let g_aa = filter_adjoint(&d_aa, w, h, &k);
            let g_ab = filter_adjoint(&d_ab, w, h, &k);
            for p in 0..w * h {
                g.data_mut()[p * ch + c] = g_mu[p] + 2.0 * pa[p] * g_aa[p] + pb[p] * g_ab[p];
            }
        }
    }
    Ok((total / count, grad))
}
