//! Keypoint-format conversion driven by a per-target-joint recipe table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pose2D, Pose3D, PoseSequence2D, PoseSequence3D};

const COCO_TO_H36M: &str = include_str!("../../data/coco17_to_h36m17.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Copy(usize),
    Midpoint([usize; 2]),
    /// Linear combination of source joints; weights should sum to one.
    Weighted(Vec<(usize, f64)>),
}

impl Recipe {
    fn terms(&self) -> Vec<(usize, f64)> {
        match self {
            Recipe::Copy(i) => vec![(*i, 1.0)],
            Recipe::Midpoint([a, b]) => vec![(*a, 0.5), (*b, 0.5)],
            Recipe::Weighted(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecipe {
    pub target: String,
    #[serde(flatten)]
    pub recipe: Recipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMapping {
    pub source_format: String,
    pub target_format: String,
    pub source_joints: Vec<String>,
    /// One recipe per target joint, in target index order.
    pub recipes: Vec<TargetRecipe>,
}

impl KeypointMapping {
    /// The checked-in COCO-17 to H36M-17 table.
    pub fn coco_to_h36m() -> Self {
        let mapping: Self =
            serde_json::from_str(COCO_TO_H36M).expect("bundled mapping table parses");
        mapping.validate().expect("bundled mapping table is valid");
        mapping
    }

    /// Identity mapping over the given joint names.
    pub fn identity(format: &str, joints: &[String]) -> Self {
        Self {
            source_format: format.to_string(),
            target_format: format.to_string(),
            source_joints: joints.to_vec(),
            recipes: joints
                .iter()
                .enumerate()
                .map(|(i, name)| TargetRecipe {
                    target: name.clone(),
                    recipe: Recipe::Copy(i),
                })
                .collect(),
        }
    }

    pub fn source_count(&self) -> usize {
        self.source_joints.len()
    }

    pub fn target_count(&self) -> usize {
        self.recipes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.source_count();
        for row in &self.recipes {
            let terms = row.recipe.terms();
            if terms.is_empty() {
                return Err(Error::Invalid(format!(
                    "recipe for `{}` has no terms",
                    row.target
                )));
            }
            if let Some((i, _)) = terms.iter().find(|(i, _)| *i >= n) {
                return Err(Error::Invalid(format!(
                    "recipe for `{}` references source joint {i} of {n}",
                    row.target
                )));
            }
        }
        let mut names: Vec<&str> = self.recipes.iter().map(|r| r.target.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.recipes.len() {
            return Err(Error::Invalid("target joint listed twice".into()));
        }
        Ok(())
    }

    fn check_source(&self, joints: usize) -> Result<()> {
        if joints != self.source_count() {
            return Err(Error::Shape(format!(
                "mapping {} -> {} expects {} source joints, got {joints}",
                self.source_format,
                self.target_format,
                self.source_count()
            )));
        }
        Ok(())
    }

    pub fn convert_pose_3d(&self, pose: &Pose3D) -> Result<Pose3D> {
        self.check_source(pose.joint_count())?;
        Ok(Pose3D::new(
            self.recipes
                .iter()
                .map(|row| {
                    row.recipe.terms().iter().fold([0.0; 3], |mut acc, (i, w)| {
                        for (a, c) in acc.iter_mut().zip(pose.coords[*i]) {
                            *a += w * c;
                        }
                        acc
                    })
                })
                .collect(),
        ))
    }

    /// 2D conversion; combined joints take the minimum confidence of their sources.
    pub fn convert_pose_2d(&self, pose: &Pose2D) -> Result<Pose2D> {
        self.check_source(pose.joint_count())?;
        let mut coords = Vec::with_capacity(self.target_count());
        let mut confidence = Vec::with_capacity(self.target_count());
        for row in &self.recipes {
            let terms = row.recipe.terms();
            let mut c = [0.0; 2];
            let mut conf = f64::INFINITY;
            for (i, w) in &terms {
                c[0] += w * pose.coords[*i][0];
                c[1] += w * pose.coords[*i][1];
                conf = conf.min(pose.confidence[*i]);
            }
            coords.push(c);
            confidence.push(conf);
        }
        Ok(Pose2D::new(coords, confidence))
    }
}

pub fn convert_keypoints_3d(
    seq: &PoseSequence3D,
    mapping: &KeypointMapping,
) -> Result<PoseSequence3D> {
    let frames = seq
        .frames
        .iter()
        .map(|f| mapping.convert_pose_3d(f))
        .collect::<Result<_>>()?;
    Ok(PoseSequence3D::new(frames, seq.frame_rate_hz))
}

pub fn convert_keypoints_2d(
    seq: &PoseSequence2D,
    mapping: &KeypointMapping,
) -> Result<PoseSequence2D> {
    let frames = seq
        .frames
        .iter()
        .map(|f| mapping.convert_pose_2d(f))
        .collect::<Result<_>>()?;
    Ok(PoseSequence2D::new(frames, seq.frame_rate_hz))
}
