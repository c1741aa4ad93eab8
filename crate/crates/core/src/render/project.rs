use nalgebra::{Matrix2, Matrix2x3, Matrix3};

use crate::scene::{Camera, Gaussian};

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// `J W Σ Wᵀ Jᵀ`, before dilation.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub source_index: usize,
}

/// Projects a Gaussian through the pinhole camera, or `None` when it lies at
/// or behind the near plane.
pub fn project_gaussian(gaussian: &Gaussian, index: usize, camera: &Camera, z_near: f64) -> Option<Splat2D> {
    project_covariance(gaussian, gaussian.masked_covariance(1.0), index, camera, z_near)
}

pub(crate) fn project_covariance(
    gaussian: &Gaussian,
    cov3d: Matrix3<f64>,
    index: usize,
    camera: &Camera,
    z_near: f64,
) -> Option<Splat2D> {
    let p = camera.world_to_camera(&gaussian.position);
    if !(p.z > z_near) {
        return None;
    }
    let (x, y, z) = (p.x, p.y, p.z);
    let mean2d = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy];
    let j = Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / (z * z),
        0.0,
        camera.fy / z,
        -camera.fy * y / (z * z),
    );
    let w = camera.rotation;
    let cov = j * w * cov3d * w.transpose() * j.transpose();
    let cov2d = (cov + cov.transpose()) * 0.5;
    Some(Splat2D { mean2d, cov2d, depth: z, source_index: index })
}
