//! Pinhole camera model shared by the analytic renderer, the radiance
//! field, and the homography baseline.
//!
//! Camera frame convention: +x right, +y down, +z forward (into the scene).
//! A camera pose is camera-to-reference, so rays start at the pose
//! translation and directions are the rotated pixel directions.

use crate::se3::Transform;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(
            cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64,
            "principal point must lie inside the image"
        );
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Square image with the given horizontal field of view (radians).
    pub fn square(size: usize, hfov: f64) -> Self {
        let f = size as f64 / (2.0 * (hfov / 2.0).tan());
        CameraIntrinsics::new(f, f, size as f64 / 2.0, size as f64 / 2.0, size, size)
    }

    /// Unit ray direction through pixel center (px, py) in the camera frame.
    pub fn pixel_direction(&self, px: usize, py: usize) -> Vec3 {
        let x = (px as f64 + 0.5 - self.cx) / self.fx;
        let y = (py as f64 + 0.5 - self.cy) / self.fy;
        Vec3::new(x, y, 1.0).normalized()
    }

    /// World-frame ray (origin, direction) through pixel (px, py) for a
    /// camera-to-world pose.
    pub fn pixel_ray(&self, pose: &Transform, px: usize, py: usize) -> (Vec3, Vec3) {
        let dir = pose.rotation.apply(self.pixel_direction(px, py));
        (pose.translation, dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_pixel_looks_forward() {
        let intr = CameraIntrinsics::square(64, 1.0);
        let d = intr.pixel_direction(31, 31);
        // half-pixel offset from the exact principal point
        assert!(d.z > 0.999);
        let d = intr.pixel_direction(63, 31);
        assert!(d.x > 0.0 && d.z > 0.0);
    }

    #[test]
    fn ray_uses_pose_rotation() {
        use crate::se3::{from_euler, EulerAngles, Transform};
        let intr = CameraIntrinsics::square(64, 1.0);
        let pose = Transform::new(
            from_euler(EulerAngles::new(std::f64::consts::PI, 0.0, 0.0)),
            Vec3::new(0.0, 0.0, 0.5),
        );
        // x-flip by pi: camera +z now points along world -z
        let (o, d) = intr.pixel_ray(&pose, 32, 32);
        assert_eq!(o, Vec3::new(0.0, 0.0, 0.5));
        assert!(d.z < -0.99);
    }
}
