use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Pinhole camera in the OpenCV convention (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub width: usize,
    pub height: usize,
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal: [f64; 2],
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// Camera centre in world coordinates; world-to-camera is `p ↦ R (p − c)`.
    pub center: Vec3,
    pub near: f64,
    pub far: f64,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return Err(Error::Config("focal length must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!(
                "need 0 < near < far, got {} / {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera has an empty viewport".into()));
        }
        let err = orthonormality_error(&self.rotation);
        if err > 1e-4 {
            return Err(Error::NonOrthonormal {
                view: "camera".into(),
                error: err,
            });
        }
        Ok(())
    }

    /// Focal length in pixels for a horizontal field of view.
    pub fn focal_from_fov(width: usize, fov_x: f64) -> f64 {
        width as f64 / 2.0 / (fov_x / 2.0).tan()
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (self.width as f64 / 2.0 / self.focal_x).atan()
    }

    /// Camera from a camera-to-world pose and horizontal field of view; square
    /// pixels, principal point at the image centre.
    pub fn from_pose(
        camera_to_world: &[[f64; 4]; 4],
        fov_x: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let c2w_rot = Mat3::from_fn(|r, c| camera_to_world[r][c]);
        let center = Vec3::new(
            camera_to_world[0][3],
            camera_to_world[1][3],
            camera_to_world[2][3],
        );
        let rotation = c2w_rot.transpose();
        let focal = Self::focal_from_fov(width, fov_x);
        let cam = Self {
            width,
            height,
            focal_x: focal,
            focal_y: focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            rotation,
            center,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_x: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let focal = Self::focal_from_fov(width, fov_x);
        let cam = Self {
            width,
            height,
            focal_x: focal,
            focal_y: focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            rotation,
            center: eye,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Nearby camera that survives a round trip through its pose and field of
    /// view bit-exactly, so datasets written to disk load back unchanged.
    pub fn pose_representable(self) -> Result<Self> {
        let mut cam = self;
        for _ in 0..32 {
            let next = Self::from_pose(
                &cam.camera_to_world(),
                cam.fov_x(),
                cam.width,
                cam.height,
                cam.near,
                cam.far,
            )?;
            if next == cam {
                return Ok(cam);
            }
            cam = next;
        }
        Err(Error::Config(
            "camera pose does not settle under round trip".into(),
        ))
    }

    /// Camera centre in world coordinates.
    pub fn position(&self) -> Vec3 {
        self.center
    }

    pub fn camera_to_world(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.transpose();
        let c = self.position();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[(i, j)];
            }
            m[i][3] = c[i];
        }
        m[3][3] = 1.0;
        m
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.center)
    }

    /// Same intrinsics and pose within `tol`.
    pub fn approx_eq(&self, other: &CameraView, tol: f64) -> bool {
        self.width == other.width
            && self.height == other.height
            && (self.focal_x - other.focal_x).abs() <= tol
            && (self.focal_y - other.focal_y).abs() <= tol
            && (self.rotation - other.rotation).abs().max() <= tol
            && (self.center - other.center).abs().max() <= tol
    }
}

/// Largest deviation of `RᵀR` from the identity.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}
