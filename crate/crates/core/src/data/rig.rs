use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::types::{MultiviewSample, PoseSequence2D, PoseSequence3D, View};

/// Cameras on a circle around a common look-at point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    /// Camera azimuths in degrees, counter-clockwise from the world x axis.
    pub azimuths_deg: Vec<f64>,
    pub radius_mm: f64,
    pub height_mm: f64,
    pub focal_px: f64,
    pub resolution: [u32; 2],
    pub look_at: [f64; 3],
    /// Optional view names; defaults to `cam0`, `cam1`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_names: Option<Vec<String>>,
}

impl RigSpec {
    /// Rig with the given azimuths and the default desk-scale geometry.
    pub fn ring(azimuths_deg: Vec<f64>) -> Self {
        Self {
            azimuths_deg,
            radius_mm: 4000.0,
            height_mm: 1300.0,
            focal_px: 1000.0,
            resolution: [1000, 1000],
            look_at: [0.0, 0.0, 900.0],
            view_names: None,
        }
    }

    pub fn camera_count(&self) -> usize {
        self.azimuths_deg.len()
    }

    pub fn view_name(&self, k: usize) -> String {
        self.view_names
            .as_ref()
            .and_then(|n| n.get(k).cloned())
            .unwrap_or_else(|| format!("cam{k}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuths_deg.is_empty() {
            return Err(Error::Invalid("rig needs at least one camera".into()));
        }
        if !(self.radius_mm > 0.0) {
            return Err(Error::Invalid("rig radius must be positive".into()));
        }
        if let Some(names) = &self.view_names {
            if names.len() != self.azimuths_deg.len() {
                return Err(Error::Invalid(format!(
                    "{} view names for {} cameras",
                    names.len(),
                    self.azimuths_deg.len()
                )));
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        self.validate()?;
        let target = Vector3::from(self.look_at);
        self.azimuths_deg
            .iter()
            .map(|az| {
                let a = az.to_radians();
                let eye = Vector3::new(
                    self.radius_mm * a.cos(),
                    self.radius_mm * a.sin(),
                    self.height_mm,
                );
                CameraModel::look_at(eye, target, Vector3::z(), self.focal_px, self.resolution)
            })
            .collect()
    }
}

/// Renders a world-frame motion through every camera of the rig.
pub fn render_sample(
    sequence_id: &str,
    activity: &str,
    world: &PoseSequence3D,
    rig: &RigSpec,
) -> Result<MultiviewSample> {
    let cameras = rig.cameras()?;
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(k, camera)| {
            let view_id = rig.view_name(k);
            let cam_seq = camera.world_to_camera(world);
            let mut frames = Vec::with_capacity(cam_seq.len());
            for (i, pose) in cam_seq.frames.iter().enumerate() {
                let projected = camera.project_to_normalized(pose);
                if let Some(&joint) = projected.behind_camera.first() {
                    return Err(Error::BehindCamera {
                        camera: view_id,
                        frame: i,
                        joint,
                        depth: pose.coords[joint][2],
                    });
                }
                frames.push(projected.pose);
            }
            Ok(View {
                view_id,
                camera,
                pose_2d: PoseSequence2D::new(frames, world.frame_rate_hz),
                pose_3d: Some(cam_seq),
                world_3d: Some(world.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiviewSample {
        sequence_id: sequence_id.to_string(),
        activity: activity.to_string(),
        views,
    })
}
