//! Pinhole camera with the aspect-preserving normalized image convention.
//!
//! Pixels map to normalized units by dividing both axes by `width / 2`:
//! `u_n = 2u / w - 1`, `v_n = 2v / w - h / w`. A square in pixels stays square.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pose2D, Pose3D, PoseSequence3D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// World-to-camera rotation (`p_cam = R p_world + t`).
    pub rotation_wc: Matrix3<f64>,
    /// World-to-camera translation in millimetres.
    pub translation_wc: Vector3<f64>,
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub resolution: [u32; 2],
}

/// Projection of one pose; joints at nonpositive depth get confidence 0 and are listed.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub pose: Pose2D,
    pub behind_camera: Vec<usize>,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`, with `up` defining the image's upward direction.
    ///
    /// Camera axes follow the usual vision convention: x right, y down, z forward.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal_px: f64,
        resolution: [u32; 2],
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Invalid("camera eye coincides with target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or_else(|| {
            Error::Invalid("camera up vector parallel to viewing direction".into())
        })?;
        let down = forward.cross(&right);
        let rotation_wc =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation_wc = -(rotation_wc * eye);
        let cam = Self {
            rotation_wc,
            translation_wc,
            focal: [focal_px, focal_px],
            principal: [resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0],
            resolution,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn identity(focal_px: f64, resolution: [u32; 2]) -> Self {
        Self {
            rotation_wc: Matrix3::identity(),
            translation_wc: Vector3::zeros(),
            focal: [focal_px, focal_px],
            principal: [resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0],
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation_wc;
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if orth > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(
                "camera rotation is not a proper rotation".into(),
            ));
        }
        if self.focal.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Invalid(
                "camera focal length must be positive".into(),
            ));
        }
        if self.resolution.contains(&0) {
            return Err(Error::Invalid("camera resolution must be positive".into()));
        }
        Ok(())
    }

    fn half_width(&self) -> f64 {
        self.resolution[0] as f64 / 2.0
    }

    pub fn point_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_wc * world + self.translation_wc
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_wc.transpose() * self.translation_wc)
    }

    pub fn world_to_camera(&self, seq: &PoseSequence3D) -> PoseSequence3D {
        seq.map_points(|p| self.point_to_camera(&p))
    }

    /// Pixel coordinates of a camera-frame point; `None` for nonpositive depth.
    pub fn project_pixel(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Vector2::new(
            self.focal[0] * p.x / p.z + self.principal[0],
            self.focal[1] * p.y / p.z + self.principal[1],
        ))
    }

    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let hw = self.half_width();
        let aspect = self.resolution[1] as f64 / self.resolution[0] as f64;
        Vector2::new(px.x / hw - 1.0, px.y / hw - aspect)
    }

    pub fn normalized_to_pixel(&self, n: &Vector2<f64>) -> Vector2<f64> {
        let hw = self.half_width();
        let aspect = self.resolution[1] as f64 / self.resolution[0] as f64;
        Vector2::new((n.x + 1.0) * hw, (n.y + aspect) * hw)
    }

    /// Normalized image coordinates of a camera-frame point; `None` for nonpositive depth.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project_pixel(p)
            .map(|px| self.pixel_to_normalized(&px))
    }

    /// Inverse of [`project_point`](Self::project_point) given the true depth.
    pub fn unproject(&self, normalized: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let px = self.normalized_to_pixel(normalized);
        Vector3::new(
            (px.x - self.principal[0]) * depth / self.focal[0],
            (px.y - self.principal[1]) * depth / self.focal[1],
            depth,
        )
    }

    pub fn project_to_normalized(&self, pose: &Pose3D) -> Projected {
        let mut coords = Vec::with_capacity(pose.joint_count());
        let mut confidence = Vec::with_capacity(pose.joint_count());
        let mut behind_camera = Vec::new();
        for (j, p) in pose.points().enumerate() {
            match self.project_point(&p) {
                Some(n) => {
                    coords.push([n.x, n.y]);
                    confidence.push(1.0);
                }
                None => {
                    coords.push([f64::NAN, f64::NAN]);
                    confidence.push(0.0);
                    behind_camera.push(j);
                }
            }
        }
        Projected {
            pose: Pose2D::new(coords, confidence),
            behind_camera,
        }
    }

    /// `d(u_n, v_n) / d(x, y, z)` at a camera-frame point with positive depth.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::Invalid(format!(
                "projection jacobian at depth {}",
                p.z
            )));
        }
        let hw = self.half_width();
        let ax = self.focal[0] / hw;
        let ay = self.focal[1] / hw;
        let iz = 1.0 / p.z;
        Ok(Matrix2x3::new(
            ax * iz,
            0.0,
            -ax * p.x * iz * iz,
            0.0,
            ay * iz,
            -ay * p.y * iz * iz,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> CameraModel {
        CameraModel {
            rotation_wc: Matrix3::identity(),
            translation_wc: Vector3::zeros(),
            focal: [1100.0, 1000.0],
            principal: [610.0, 350.0],
            resolution: [1280, 720],
        }
    }

    #[test]
    fn identity_extrinsics_leave_points() {
        let cam = CameraModel::identity(1000.0, [1000, 1000]);
        let seq = PoseSequence3D::new(vec![Pose3D::new(vec![[1.0, -2.0, 3.0]])], 50.0);
        assert_eq!(cam.world_to_camera(&seq), seq);
    }

    #[test]
    fn translation_shifts_depth() {
        let mut cam = CameraModel::identity(1000.0, [1000, 1000]);
        cam.translation_wc = Vector3::new(0.0, 0.0, 1000.0);
        let p = cam.point_to_camera(&Vector3::new(3.0, 4.0, 5.0));
        assert_eq!(p, Vector3::new(3.0, 4.0, 1005.0));
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = test_camera();
        let n = cam.project_point(&Vector3::new(0.0, 0.0, 2500.0)).unwrap();
        let expected = cam.pixel_to_normalized(&Vector2::new(610.0, 350.0));
        assert_relative_eq!(n, expected, epsilon = 1e-15);

        let centered = CameraModel::identity(800.0, [1000, 600]);
        let n = centered
            .project_point(&Vector3::new(0.0, 0.0, 10.0))
            .unwrap();
        assert_eq!(n, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn hand_pinhole_arithmetic() {
        let cam = test_camera();
        let n = cam
            .project_point(&Vector3::new(200.0, -100.0, 4000.0))
            .unwrap();
        // u = 1100*200/4000 + 610 = 665, v = 1000*(-100)/4000 + 350 = 325
        // u_n = 665/640 - 1, v_n = 325/640 - 720/1280
        assert_relative_eq!(n.x, 665.0 / 640.0 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(n.y, 325.0 / 640.0 - 0.5625, epsilon = 1e-15);
    }

    #[test]
    fn behind_camera_is_flagged() {
        let cam = test_camera();
        let pose = Pose3D::new(vec![[0.0, 0.0, 100.0], [0.0, 0.0, -1.0], [1.0, 1.0, 0.0]]);
        let out = cam.project_to_normalized(&pose);
        assert_eq!(out.behind_camera, vec![1, 2]);
        assert_eq!(out.pose.confidence, vec![1.0, 0.0, 0.0]);
        assert!(cam
            .projection_jacobian(&Vector3::new(0.0, 0.0, 0.0))
            .is_err());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let cam = test_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.gen_range(-1500.0..1500.0),
                rng.gen_range(-1500.0..1500.0),
                rng.gen_range(500.0..8000.0),
            );
            let jac = cam.projection_jacobian(&p).unwrap();
            for k in 0..3 {
                let h = 1e-6 * (1.0 + p[k].abs());
                let mut hi = p;
                let mut lo = p;
                hi[k] += h;
                lo[k] -= h;
                let fd =
                    (cam.project_point(&hi).unwrap() - cam.project_point(&lo).unwrap()) / (2.0 * h);
                for r in 0..2 {
                    let a = jac[(r, k)];
                    let err = (a - fd[r]).abs() / a.abs().max(fd[r].abs()).max(1e-12);
                    assert!(
                        err <= 1e-6 || (a - fd[r]).abs() < 1e-12,
                        "jacobian ({r},{k}) {a} vs {}",
                        fd[r]
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_structure() {
        let cam = test_camera();
        let j = cam
            .projection_jacobian(&Vector3::new(0.0, 0.0, 1000.0))
            .unwrap();
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(1, 0)], 0.0);
        let j2 = cam
            .projection_jacobian(&Vector3::new(0.0, 0.0, 2000.0))
            .unwrap();
        assert_relative_eq!(j2[(0, 0)], j[(0, 0)] / 2.0, epsilon = 1e-18);
    }

    #[test]
    fn look_at_round_trip() {
        let cam = CameraModel::look_at(
            Vector3::new(3000.0, -1000.0, 1500.0),
            Vector3::new(0.0, 0.0, 900.0),
            Vector3::z(),
            1000.0,
            [1000, 1000],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = Vector3::new(
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-500.0..500.0),
                rng.gen_range(0.0..1800.0),
            );
            let c = cam.point_to_camera(&w);
            assert!(c.z > 0.0);
            let n = cam.project_point(&c).unwrap();
            let back = cam.unproject(&n, c.z);
            assert_relative_eq!(back, c, max_relative = 1e-9);
        }
        // target lies on the optical axis
        let t = cam.point_to_camera(&Vector3::new(0.0, 0.0, 900.0));
        assert_relative_eq!(t.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(t.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(
            cam.center(),
            Vector3::new(3000.0, -1000.0, 1500.0),
            epsilon = 1e-9
        );
    }
}
