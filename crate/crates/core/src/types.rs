//! Shared domain types: skeleton, poses, sequences and multiview samples.

use std::collections::HashSet;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};

/// Joint names of the 17-joint Human3.6M layout, in index order.
pub const H36M_JOINTS: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

const H36M_PARENTS: [Option<usize>; 17] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent_index: Vec<Option<usize>>,
    pub root_index: usize,
}

impl Skeleton {
    /// The fixed Human3.6M 17-joint skeleton rooted at the pelvis.
    pub fn h36m() -> Self {
        Self {
            joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
            parent_index: H36M_PARENTS.to_vec(),
            root_index: 0,
        }
    }

    pub fn new(
        joint_names: Vec<String>,
        parent_index: Vec<Option<usize>>,
        root_index: usize,
    ) -> Result<Self> {
        let skeleton = Self {
            joint_names,
            parent_index,
            root_index,
        };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Bones as (parent, child) index pairs.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent_index
            .iter()
            .enumerate()
            .filter_map(|(child, parent)| parent.map(|p| (p, child)))
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_names.len();
        if j < 2 {
            return Err(Error::Invalid(format!(
                "skeleton needs at least 2 joints, got {j}"
            )));
        }
        if self.parent_index.len() != j {
            return Err(Error::Shape(format!(
                "{} parents for {j} joints",
                self.parent_index.len()
            )));
        }
        if self.root_index >= j {
            return Err(Error::Invalid(format!(
                "root index {} out of range",
                self.root_index
            )));
        }
        let unique: HashSet<&str> = self.joint_names.iter().map(String::as_str).collect();
        if unique.len() != j {
            return Err(Error::Invalid("joint names are not unique".into()));
        }
        for (joint, parent) in self.parent_index.iter().enumerate() {
            match parent {
                None if joint != self.root_index => {
                    return Err(Error::Invalid(format!(
                        "joint {joint} has no parent but is not the root"
                    )))
                }
                Some(_) if joint == self.root_index => {
                    return Err(Error::Invalid("root joint has a parent".into()))
                }
                Some(p) if *p >= j => {
                    return Err(Error::Invalid(format!(
                        "joint {joint} has out-of-range parent {p}"
                    )))
                }
                _ => {}
            }
        }
        // every joint must reach the root without revisiting a joint
        for start in 0..j {
            let mut cursor = start;
            let mut steps = 0;
            while let Some(p) = self.parent_index[cursor] {
                cursor = p;
                steps += 1;
                if steps > j {
                    return Err(Error::Invalid(format!(
                        "cycle in parent graph at joint {start}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One 3D pose: `J` joints in millimetres, camera (or world) frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        Self { coords }
    }

    pub fn zeros(joints: usize) -> Self {
        Self {
            coords: vec![[0.0; 3]; joints],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn joint(&self, j: usize) -> Vector3<f64> {
        Vector3::from(self.coords[j])
    }

    pub fn points(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.coords.iter().map(|c| Vector3::from(*c))
    }

    pub fn map(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            coords: self.points().map(|p| f(p).into()).collect(),
        }
    }

    /// Copy with the given joint moved to the origin.
    pub fn root_centered(&self, root: usize) -> Self {
        let r = self.joint(root);
        self.map(|p| p - r)
    }
}

/// One 2D pose in normalized image units with per-joint confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>, confidence: Vec<f64>) -> Self {
        Self { coords, confidence }
    }

    pub fn with_unit_confidence(coords: Vec<[f64; 2]>) -> Self {
        let confidence = vec![1.0; coords.len()];
        Self { coords, confidence }
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence3D {
    pub frames: Vec<Pose3D>,
    pub frame_rate_hz: f64,
}

impl PoseSequence3D {
    pub fn new(frames: Vec<Pose3D>, frame_rate_hz: f64) -> Self {
        Self {
            frames,
            frame_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Joint count of the first frame (0 for an empty sequence).
    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Pose3D::joint_count)
    }

    /// Frame-major, joint, xyz flattening.
    pub fn to_flat(&self) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|f| f.coords.iter().flatten().copied())
            .collect()
    }

    pub fn from_flat(flat: &[f64], joints: usize, frame_rate_hz: f64) -> Self {
        assert_eq!(
            flat.len() % (joints * 3),
            0,
            "flat length not a multiple of J*3"
        );
        let frames = flat
            .chunks_exact(joints * 3)
            .map(|frame| Pose3D::new(frame.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
            .collect();
        Self::new(frames, frame_rate_hz)
    }

    pub fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        Self::new(
            self.frames.iter().map(|p| p.map(&f)).collect(),
            self.frame_rate_hz,
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map_points(|p| p * factor)
    }

    pub fn root_centered(&self, root: usize) -> Self {
        Self::new(
            self.frames.iter().map(|p| p.root_centered(root)).collect(),
            self.frame_rate_hz,
        )
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Self {
        Self::new(self.frames[start..start + len].to_vec(), self.frame_rate_hz)
    }

    /// All joints of all frames as one point cloud.
    pub fn stacked_points(&self) -> Vec<Vector3<f64>> {
        self.frames
            .iter()
            .flat_map(|f| f.points().collect::<Vec<_>>())
            .collect()
    }

    /// Checks that the two sequences have equal frame and joint counts.
    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "frame count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (i, (a, b)) in self.frames.iter().zip(&other.frames).enumerate() {
            if a.joint_count() != b.joint_count() {
                return Err(Error::Shape(format!(
                    "frame {i}: joint count {} vs {}",
                    a.joint_count(),
                    b.joint_count()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence2D {
    pub frames: Vec<Pose2D>,
    pub frame_rate_hz: f64,
}

impl PoseSequence2D {
    pub fn new(frames: Vec<Pose2D>, frame_rate_hz: f64) -> Self {
        Self {
            frames,
            frame_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Pose2D::joint_count)
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        Self::new(self.frames[start..start + len].to_vec(), self.frame_rate_hz)
    }
}

/// One synchronized camera view of a multiview recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub view_id: String,
    pub camera: CameraModel,
    pub pose_2d: PoseSequence2D,
    /// Camera-frame 3D ground truth, when available.
    pub pose_3d: Option<PoseSequence3D>,
    /// World-frame 3D ground truth, when available.
    pub world_3d: Option<PoseSequence3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiviewSample {
    pub sequence_id: String,
    pub activity: String,
    pub views: Vec<View>,
}

impl MultiviewSample {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Frame count shared by all views (that of the first view).
    pub fn frame_count(&self) -> usize {
        self.views.first().map_or(0, |v| v.pose_2d.len())
    }

    /// Copy restricted to the given view indices, in that order.
    pub fn subset(&self, view_indices: &[usize]) -> Result<Self> {
        let views = view_indices
            .iter()
            .map(|&i| {
                self.views.get(i).cloned().ok_or_else(|| {
                    Error::Invalid(format!(
                        "view index {i} out of range for sample `{}` with {} views",
                        self.sequence_id,
                        self.views.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sequence_id: self.sequence_id.clone(),
            activity: self.activity.clone(),
            views,
        })
    }
}

/// All unordered index pairs `(a, b)` with `a < b` for `n` views, lexicographic.
pub fn view_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect()
}

/// Canonical view pairs of a sample; fails when fewer than two views exist.
pub fn enumerate_view_pairs(sample: &MultiviewSample) -> Result<Vec<(usize, usize)>> {
    let n = sample.view_count();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    Ok(view_pairs(n))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoViews,
    FrameCountMismatch {
        view: String,
        expected: usize,
        found: usize,
    },
    JointCountMismatch {
        view: String,
        frame: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        view: String,
        source: &'static str,
        frame: usize,
        joint: usize,
    },
    ConfidenceOutOfRange {
        view: String,
        frame: usize,
        joint: usize,
        value: f64,
    },
    EmptySequence {
        view: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoViews => write!(f, "sample has no views"),
            Violation::FrameCountMismatch {
                view,
                expected,
                found,
            } => write!(f, "frame count mismatch: view `{view}` has {found} frames, expected {expected}"),
            Violation::JointCountMismatch {
                view,
                frame,
                expected,
                found,
            } => write!(
                f,
                "skeleton mismatch: view `{view}` frame {frame} has {found} joints, expected {expected}"
            ),
            Violation::NonFinite {
                view,
                source,
                frame,
                joint,
            } => write!(f, "non-finite {source} coordinate: view `{view}`, frame {frame}, joint {joint}"),
            Violation::ConfidenceOutOfRange {
                view,
                frame,
                joint,
                value,
            } => write!(
                f,
                "confidence {value} outside [0, 1]: view `{view}`, frame {frame}, joint {joint}"
            ),
            Violation::EmptySequence { view } => write!(f, "view `{view}` has no frames"),
        }
    }
}

/// Reports every invariant violation of `sample` against `skeleton`.
pub fn validate_sample(
    sample: &MultiviewSample,
    skeleton: &Skeleton,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let Some(first) = sample.views.first() else {
        return Err(vec![Violation::NoViews]);
    };
    let expected_frames = first.pose_2d.len();
    let joints = skeleton.joint_count();

    for view in &sample.views {
        let name = &view.view_id;
        if view.pose_2d.is_empty() {
            out.push(Violation::EmptySequence { view: name.clone() });
        }
        let mut check_frames = |found: usize| {
            if found != expected_frames {
                out.push(Violation::FrameCountMismatch {
                    view: name.clone(),
                    expected: expected_frames,
                    found,
                });
            }
        };
        check_frames(view.pose_2d.len());
        if let Some(seq) = &view.pose_3d {
            check_frames(seq.len());
        }
        if let Some(seq) = &view.world_3d {
            check_frames(seq.len());
        }

        for (i, frame) in view.pose_2d.frames.iter().enumerate() {
            if frame.coords.len() != joints || frame.confidence.len() != joints {
                out.push(Violation::JointCountMismatch {
                    view: name.clone(),
                    frame: i,
                    expected: joints,
                    found: frame.coords.len(),
                });
                continue;
            }
            for (j, (c, conf)) in frame.coords.iter().zip(&frame.confidence).enumerate() {
                if !c.iter().all(|v| v.is_finite()) {
                    out.push(Violation::NonFinite {
                        view: name.clone(),
                        source: "2d",
                        frame: i,
                        joint: j,
                    });
                }
                if !(0.0..=1.0).contains(conf) {
                    out.push(Violation::ConfidenceOutOfRange {
                        view: name.clone(),
                        frame: i,
                        joint: j,
                        value: *conf,
                    });
                }
            }
        }
        for (source, seq) in [("3d", &view.pose_3d), ("world", &view.world_3d)] {
            let Some(seq) = seq else { continue };
            for (i, frame) in seq.frames.iter().enumerate() {
                if frame.coords.len() != joints {
                    out.push(Violation::JointCountMismatch {
                        view: name.clone(),
                        frame: i,
                        expected: joints,
                        found: frame.coords.len(),
                    });
                    continue;
                }
                for (j, c) in frame.coords.iter().enumerate() {
                    if !c.iter().all(|v| v.is_finite()) {
                        out.push(Violation::NonFinite {
                            view: name.clone(),
                            source,
                            frame: i,
                            joint: j,
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
