//! Perspective EWA projection of 3D Gaussians and its reverse pass.

use nalgebra::{Matrix2, Matrix2x3};

use super::{CameraView, RasterConfig};
use crate::math::{normalize_backward, normalize_with_len, quat_to_rotation_backward, Mat3, Vec3};
use crate::scene::{covariance, SpectralGaussian};

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected2D {
    pub mean2d: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the regularized 2D covariance.
    pub cov2d: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Unit direction from the splat toward the camera.
    pub view_dir: Vec3,
    /// Pixel-space half extents of the 3σ box.
    pub extent: [f64; 2],
}

/// Projects one splat, or returns `None` when it is culled.
pub fn project(g: &SpectralGaussian, cam: &CameraView, cfg: &RasterConfig) -> Option<Projected2D> {
    let mean = g.mean_vec();
    let t = cam.to_camera(&mean);
    if !(t.z > cam.near && t.z < cam.far) {
        return None;
    }
    let (fx, fy) = (cam.focal_x, cam.focal_y);
    let mean2d = [
        fx * t.x / t.z + cam.principal[0],
        fy * t.y / t.z + cam.principal[1],
    ];
    let j = jacobian(&t, fx, fy);
    let m = j * cam.rotation;
    let cov = m * covariance(g) * m.transpose();
    let cov2d = [
        cov[(0, 0)] + cfg.cov_regularizer,
        cov[(0, 1)],
        cov[(1, 1)] + cfg.cov_regularizer,
    ];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let extent = [
        cfg.sigma_extent * cov2d[0].sqrt(),
        cfg.sigma_extent * cov2d[2].sqrt(),
    ];
    // Pixel centres sit at half-integers.
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean2d[0] + extent[0] < 0.5
        || mean2d[0] - extent[0] > w - 0.5
        || mean2d[1] + extent[1] < 0.5
        || mean2d[1] - extent[1] > h - 0.5
    {
        return None;
    }
    let (view_dir, _) = normalize_with_len(&(cam.position() - mean));
    Some(Projected2D {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        view_dir,
        extent,
    })
}

fn jacobian(t: &Vec3, fx: f64, fy: f64) -> Matrix2x3<f64> {
    let z2 = t.z * t.z;
    Matrix2x3::new(fx / t.z, 0.0, -fx * t.x / z2, 0.0, fy / t.z, -fy * t.y / z2)
}

/// Gradients on a projected splat's outputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectedGrad {
    pub mean2d: [f64; 2],
    /// W.r.t. the conic entries `(a, b, c)` of `[[a, b], [b, c]]`, with `b` as one scalar.
    pub conic: [f64; 3],
    pub view_dir: Vec3,
}

/// Geometry gradients of one splat.
#[derive(Clone, Copy, Debug, Default)]
pub struct GeometryGrad {
    pub mean: Vec3,
    pub log_scale: [f64; 3],
    pub rotation_matrix: Mat3,
}

impl GeometryGrad {
    pub fn rotation(&self, g: &SpectralGaussian) -> [f64; 4] {
        quat_to_rotation_backward(g.rotation, &self.rotation_matrix)
    }
}

/// Reverse pass of [`project`].
pub fn project_backward(
    g: &SpectralGaussian,
    cam: &CameraView,
    p: &Projected2D,
    grad: &ProjectedGrad,
) -> GeometryGrad {
    let mean = g.mean_vec();
    let t = cam.to_camera(&mean);
    let (fx, fy) = (cam.focal_x, cam.focal_y);
    let (x, y, z) = (t.x, t.y, t.z);

    // Conic = C⁻¹: dL/dC = −K·G_K·K with the scalar b gradient split over both off-diagonals.
    let k = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
    let gk = Matrix2::new(
        grad.conic[0],
        0.5 * grad.conic[1],
        0.5 * grad.conic[1],
        grad.conic[2],
    );
    let gc = -(k * gk * k);

    let j = jacobian(&t, fx, fy);
    let w = cam.rotation;
    let m = j * w;
    let sigma = covariance(g);
    let g_sigma = m.transpose() * gc * m;
    let g_m = 2.0 * gc * m * sigma;
    let g_j = g_m * w.transpose();

    let mut g_t = Vec3::new(
        grad.mean2d[0] * fx / z,
        grad.mean2d[1] * fy / z,
        -grad.mean2d[0] * fx * x / (z * z) - grad.mean2d[1] * fy * y / (z * z),
    );
    let z2 = z * z;
    let z3 = z2 * z;
    g_t.x += g_j[(0, 2)] * (-fx / z2);
    g_t.y += g_j[(1, 2)] * (-fy / z2);
    g_t.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);

    let mut g_mean = w.transpose() * g_t;
    let (_, len) = normalize_with_len(&(cam.position() - mean));
    g_mean -= normalize_backward(&p.view_dir, len, &grad.view_dir);

    // Σ = (R S)(R S)ᵀ.
    let r = g.rotation_matrix();
    let s = g.scales();
    let rs = r * Mat3::from_diagonal(&Vec3::new(s[0], s[1], s[2]));
    let g_rs = 2.0 * g_sigma * rs;
    let mut g_r = Mat3::zeros();
    let mut g_ls = [0.0; 3];
    for c in 0..3 {
        for row in 0..3 {
            g_r[(row, c)] = g_rs[(row, c)] * s[c];
            g_ls[c] += g_rs[(row, c)] * r[(row, c)];
        }
        g_ls[c] *= s[c];
    }
    GeometryGrad {
        mean: g_mean,
        log_scale: g_ls,
        rotation_matrix: g_r,
    }
}
