use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera. Camera space looks down `+z` with `x` right and `y` down.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal_point: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal_point.0,
            cy: principal_point.1,
            width: resolution.0,
            height: resolution.1,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("resolution must be at least 1x1"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).abs().max() > 1e-4 || (self.rotation.determinant() - 1.0).abs() > 1e-4 {
            return Err(Error::invalid("world-to-camera rotation is not a proper rotation"));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(())
    }

    /// Builds a camera from a row-major 4x4 world-to-camera matrix.
    pub fn from_pose_matrix(
        pose: &[f64; 16],
        focal: (f64, f64),
        principal_point: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        let last = &pose[12..16];
        if last[0].abs() > 1e-6 || last[1].abs() > 1e-6 || last[2].abs() > 1e-6 || (last[3] - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("pose must be rigid with last row 0 0 0 1"));
        }
        let rotation = Matrix3::new(
            pose[0], pose[1], pose[2], pose[4], pose[5], pose[6], pose[8], pose[9], pose[10],
        );
        let translation = Vector3::new(pose[3], pose[7], pose[11]);
        Self::new(rotation, translation, focal, principal_point, resolution)
    }

    pub fn pose_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Camera at `eye` looking at `target`, with a symmetric frustum of the given
    /// horizontal field of view (radians).
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        if !right.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("up vector parallel to viewing direction"));
        }
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(rotation, translation, (f, f), (0.5 * width as f64, 0.5 * height as f64), (width, height))
    }

    pub fn world_to_camera(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rotation * Vector3::from(*p) + self.translation
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}
