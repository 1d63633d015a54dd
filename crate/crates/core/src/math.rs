//! Small numeric helpers shared by the forward and backward passes.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Decoded constrained parameters saturate this far from the interval ends.
pub const SIGMOID_EPS: f64 = 1e-7;

/// Logistic function clamped to `[SIGMOID_EPS, 1 - SIGMOID_EPS]`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// Derivative of [`sigmoid`] with respect to its argument, zero where the clamp is active.
#[inline]
pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    if s <= SIGMOID_EPS || s >= 1.0 - SIGMOID_EPS {
        0.0
    } else {
        s * (1.0 - s)
    }
}

/// Inverse of the unclamped logistic function.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[inline]
pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; the quaternion is normalized first.
pub fn quat_to_rotation(q: [f64; 4]) -> Mat3 {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized) quaternion.
pub fn quat_to_rotation_backward(q: [f64; 4], grad_r: &Mat3) -> [f64; 4] {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    let g = |r: usize, c: usize| grad_r[(r, c)];

    let dw =
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));

    // Project out the radial component: d(q/|q|)/dq = (I - qn qn^T) / |q|.
    let qn = [w, x, y, z];
    let gn = [dw, dx, dy, dz];
    let dot: f64 = qn.iter().zip(gn.iter()).map(|(a, b)| a * b).sum();
    [
        (gn[0] - dot * qn[0]) / norm,
        (gn[1] - dot * qn[1]) / norm,
        (gn[2] - dot * qn[2]) / norm,
        (gn[3] - dot * qn[3]) / norm,
    ]
}

/// Normalizes a vector and returns it with the original length.
#[inline]
pub fn normalize_with_len(v: &Vec3) -> (Vec3, f64) {
    let len = v.norm();
    (v / len, len)
}

/// Backward of `u = v / |v|`: given dL/du, returns dL/dv.
#[inline]
pub fn normalize_backward(unit: &Vec3, len: f64, grad_unit: &Vec3) -> Vec3 {
    (grad_unit - unit * unit.dot(grad_unit)) / len
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
