//! Pinhole cameras with OpenGL-style pose convention: camera looks down -Z,
//! +Y up, world pose given as camera-to-world rigid transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Rigid, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Camera<S> {
    pub width: usize,
    pub height: usize,
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub pose: Rigid<S>,
}

#[derive(Clone, Debug)]
pub struct Ray<S> {
    pub origin: Vec3<S>,
    pub dir: Vec3<S>,
}

/// Row-major 4x4 camera-to-world matrix as stored in pose files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseMatrix(pub [[f64; 4]; 4]);

impl<S: Scalar> Camera<S> {
    /// Square-pixel camera from a horizontal field of view angle.
    pub fn from_angle_x(width: usize, height: usize, camera_angle_x: f64, pose: Rigid<S>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !(camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI) {
            return Err(Error::Config(format!("camera_angle_x {camera_angle_x} outside (0, pi)")));
        }
        let fx = S::of(width as f64 / (2.0 * (camera_angle_x / 2.0).tan()));
        let cam = Self {
            width,
            height,
            fx,
            fy: fx,
            cx: S::of(width as f64 / 2.0),
            cy: S::of(height as f64 / 2.0),
            pose,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Pose placing the camera at `eye`, looking at `target`.
    pub fn look_at_pose(eye: Vec3<S>, target: Vec3<S>, up: Vec3<S>) -> Result<Rigid<S>> {
        let forward = (target - eye).normalized();
        let z = -forward; // camera -Z is the view direction
        let x = up.cross(z).normalized();
        if !x.norm().is_finite() || x.norm() < S::of(0.5) {
            return Err(Error::Invalid("look-at direction parallel to up vector".into()));
        }
        let y = z.cross(x);
        Ok(Rigid { rot: Mat3::from_cols(x, y, z), t: eye })
    }

    /// Rejects poses whose rotation block is not orthonormal with det +1.
    pub fn validate(&self) -> Result<()> {
        let err = self.pose.rot.orthonormality_error().to64();
        if err > 1e-4 {
            return Err(Error::Dataset(format!("camera rotation not orthonormal (error {err:.3e})")));
        }
        let det = self.pose.rot.det().to64();
        if (det - 1.0).abs() > 1e-4 {
            return Err(Error::Dataset(format!("camera rotation has det {det:.6}, expected +1")));
        }
        Ok(())
    }

    /// Ray through the center of pixel (u, v); direction normalized.
    pub fn ray(&self, u: usize, v: usize) -> Ray<S> {
        self.ray_at(S::of(u as f64 + 0.5), S::of(v as f64 + 0.5))
    }

    /// Ray through continuous image coordinates (u, v) in pixels.
    pub fn ray_at(&self, u: S, v: S) -> Ray<S> {
        let dir_cam = Vec3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -S::one());
        let dir = self.pose.rot.mul_vec(dir_cam).normalized();
        Ray { origin: self.pose.t, dir }
    }

    /// All pixel-center rays in row-major order.
    pub fn generate_rays(&self) -> Vec<Ray<S>> {
        let mut rays = Vec::with_capacity(self.width * self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                rays.push(self.ray(u, v));
            }
        }
        rays
    }

    pub fn pose_matrix(&self) -> PoseMatrix {
        let r = &self.pose.rot;
        let t = self.pose.t;
        let mut m = [[0.0; 4]; 4];
        for row in 0..3 {
            for col in 0..3 {
                m[row][col] = r.col(col).axis(row).to64();
            }
            m[row][3] = t.axis(row).to64();
        }
        m[3][3] = 1.0;
        PoseMatrix(m)
    }

    pub fn from_pose_matrix(width: usize, height: usize, camera_angle_x: f64, m: &PoseMatrix) -> Result<Self> {
        let bottom = m.0[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Dataset(format!("pose matrix bottom row {bottom:?} is not [0,0,0,1]")));
        }
        let rot = Mat3::from_rows_f64([
            [m.0[0][0], m.0[0][1], m.0[0][2]],
            [m.0[1][0], m.0[1][1], m.0[1][2]],
            [m.0[2][0], m.0[2][1], m.0[2][2]],
        ]);
        let t = Vec3::from_f64([m.0[0][3], m.0[1][3], m.0[2][3]]);
        Self::from_angle_x(width, height, camera_angle_x, Rigid { rot, t })
    }

    pub fn cast<T: Scalar>(&self) -> Camera<T> {
        Camera {
            width: self.width,
            height: self.height,
            fx: T::of(self.fx.to64()),
            fy: T::of(self.fy.to64()),
            cx: T::of(self.cx.to64()),
            cy: T::of(self.cy.to64()),
            pose: self.pose.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera<f64> {
        let pose = Camera::look_at_pose(
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        Camera::from_angle_x(64, 48, std::f64::consts::FRAC_PI_2, pose).unwrap()
    }

    #[test]
    fn looks_down_negative_z_toward_target() {
        let c = cam();
        let center = c.ray_at(32.0, 24.0);
        assert!((center.dir.z + 1.0).abs() < 1e-12);
        assert!(center.dir.x.abs() < 1e-12 && center.dir.y.abs() < 1e-12);
        assert_eq!(center.origin, Vec3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn focal_from_fov() {
        let c = cam();
        // 90-degree horizontal fov: fx = w / (2 tan 45) = w / 2.
        assert!((c.fx - 32.0).abs() < 1e-12);
        assert_eq!(c.fx, c.fy);
    }

    #[test]
    fn pixel_right_of_center_maps_to_positive_world_x() {
        let c = cam();
        let r = c.ray(48, 24);
        assert!(r.dir.x > 0.0);
        let r_up = c.ray(32, 5);
        assert!(r_up.dir.y > 0.0);
    }

    #[test]
    fn rays_normalized_and_row_major() {
        let c = cam();
        let all = c.generate_rays();
        assert_eq!(all.len(), 64 * 48);
        for r in all.iter().step_by(977) {
            assert!((r.dir.norm() - 1.0).abs() < 1e-12);
        }
        let direct = c.ray(3, 2);
        assert_eq!(all[2 * 64 + 3].dir, direct.dir);
    }

    #[test]
    fn pose_matrix_roundtrip() {
        let c = cam();
        let m = c.pose_matrix();
        let c2 = Camera::<f64>::from_pose_matrix(c.width, c.height, std::f64::consts::FRAC_PI_2, &m).unwrap();
        let r1 = c.ray(10, 20);
        let r2 = c2.ray(10, 20);
        assert!((r1.dir - r2.dir).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut c = cam();
        c.pose.rot = Mat3::from_rows_f64([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(c.validate().is_err());
        let mut mirror = cam();
        mirror.pose.rot = Mat3::from_rows_f64([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(mirror.validate().is_err());
    }
}
