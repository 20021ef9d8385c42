//! Synthetic data generation, keypoint conversion and dataset files.

mod io;
mod keypoints;
mod motion;
mod rig;

pub(crate) use io::parse_versioned;
pub use io::{read_dataset, write_dataset, Dataset, SubjectSplit, DATASET_FORMAT};
pub use keypoints::{
    convert_keypoints_2d, convert_keypoints_3d, KeypointMapping, Recipe, TargetRecipe,
};
pub use motion::{generate_motion, rest_bone_length, MotionSpec, PELVIS_HEIGHT_MM};
pub use rig::{render_sample, RigSpec};

use crate::error::Result;
use crate::types::{MultiviewSample, Skeleton};

/// Renders every motion through the rig; a pure function of its arguments.
pub fn generate_dataset(
    rig: &RigSpec,
    motions: &[MotionSpec],
    skeleton: &Skeleton,
) -> Result<Vec<MultiviewSample>> {
    motions
        .iter()
        .map(|m| {
            let world = generate_motion(m, skeleton)?;
            render_sample(
                &format!("{}-{}", m.activity_label, m.seed),
                &m.activity_label,
                &world,
                rig,
            )
        })
        .collect()
}
