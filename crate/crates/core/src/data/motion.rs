//! Procedural articulated motion on the H36M skeleton.
//!
//! Joint positions come from forward kinematics over fixed bone offsets, so bone
//! lengths are constant by construction. Each joint carries a seeded static
//! offset (the "base pose") plus sinusoidal swings whose amplitudes depend on the
//! limb group. The root translates along a seeded sway path and turns at a
//! constant rate.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pose3D, PoseSequence3D, Skeleton, H36M_JOINTS};

/// Height of the pelvis above the floor at rest, mm.
pub const PELVIS_HEIGHT_MM: f64 = 950.0;

/// Rest offsets from parent, in the body frame (x left, y forward, z up), mm.
const H36M_OFFSETS: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],
    [-110.0, 0.0, 0.0],
    [0.0, 0.0, -440.0],
    [0.0, 0.0, -430.0],
    [110.0, 0.0, 0.0],
    [0.0, 0.0, -440.0],
    [0.0, 0.0, -430.0],
    [0.0, 10.0, 230.0],
    [0.0, 0.0, 250.0],
    [0.0, 40.0, 100.0],
    [0.0, -20.0, 120.0],
    [160.0, 0.0, -20.0],
    [0.0, 0.0, -280.0],
    [0.0, 0.0, -250.0],
    [-160.0, 0.0, -20.0],
    [0.0, 0.0, -280.0],
    [0.0, 0.0, -250.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Limb {
    Leg,
    Arm,
    Torso,
}

fn limb_of(joint: usize) -> Limb {
    match joint {
        1..=6 => Limb::Leg,
        11..=16 => Limb::Arm,
        _ => Limb::Torso,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub activity_label: String,
    pub frame_count: usize,
    pub frame_rate_hz: f64,
    pub seed: u64,
    /// Peak swing of hip/knee rotations, degrees.
    pub leg_amplitude_deg: f64,
    /// Peak swing of shoulder/elbow rotations, degrees.
    pub arm_amplitude_deg: f64,
    /// Peak swing of spine/neck rotations, degrees.
    pub torso_amplitude_deg: f64,
    /// Base oscillation frequency; each joint jitters it by up to ±25%.
    pub frequency_hz: f64,
    /// Peak horizontal root displacement, mm.
    pub root_sway_mm: f64,
    /// Peak vertical root bob, mm.
    pub root_bob_mm: f64,
    /// Heading change rate, degrees per second.
    pub turn_rate_deg_s: f64,
    /// Spread of the seeded static joint offsets, degrees.
    pub pose_variation_deg: f64,
}

impl MotionSpec {
    /// One of the built-in activities: `walk`, `jump`, `throw`, `kick`, `swing`.
    pub fn preset(
        activity: &str,
        seed: u64,
        frame_count: usize,
        frame_rate_hz: f64,
    ) -> Result<Self> {
        let (leg, arm, torso, freq, sway, bob, turn) = match activity {
            "walk" => (35.0, 30.0, 6.0, 1.0, 300.0, 30.0, 25.0),
            "jump" => (45.0, 60.0, 12.0, 0.8, 120.0, 150.0, 10.0),
            "throw" => (15.0, 90.0, 25.0, 0.7, 100.0, 20.0, 15.0),
            "kick" => (70.0, 25.0, 12.0, 0.9, 150.0, 30.0, 10.0),
            "swing" => (15.0, 70.0, 35.0, 0.6, 60.0, 10.0, 20.0),
            other => return Err(Error::Invalid(format!("unknown activity preset `{other}`"))),
        };
        Ok(Self {
            activity_label: activity.to_string(),
            frame_count,
            frame_rate_hz,
            seed,
            leg_amplitude_deg: leg,
            arm_amplitude_deg: arm,
            torso_amplitude_deg: torso,
            frequency_hz: freq,
            root_sway_mm: sway,
            root_bob_mm: bob,
            turn_rate_deg_s: turn,
            pose_variation_deg: 15.0,
        })
    }

    pub const PRESETS: [&'static str; 5] = ["walk", "jump", "throw", "kick", "swing"];

    /// Same motion with every swing, sway and turn set to zero.
    pub fn frozen(mut self) -> Self {
        self.leg_amplitude_deg = 0.0;
        self.arm_amplitude_deg = 0.0;
        self.torso_amplitude_deg = 0.0;
        self.root_sway_mm = 0.0;
        self.root_bob_mm = 0.0;
        self.turn_rate_deg_s = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::Invalid(format!(
                "motion needs at least 2 frames, got {}",
                self.frame_count
            )));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::Invalid("frame rate must be positive".into()));
        }
        let fields = [
            self.leg_amplitude_deg,
            self.arm_amplitude_deg,
            self.torso_amplitude_deg,
            self.frequency_hz,
            self.root_sway_mm,
            self.root_bob_mm,
            self.turn_rate_deg_s,
            self.pose_variation_deg,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("motion parameters must be finite".into()));
        }
        Ok(())
    }
}

fn h36m_only(skeleton: &Skeleton) -> Result<()> {
    let names_match = skeleton.joint_count() == H36M_JOINTS.len()
        && skeleton
            .joint_names
            .iter()
            .zip(H36M_JOINTS)
            .all(|(a, b)| a == b);
    if !names_match || *skeleton != Skeleton::h36m() {
        return Err(Error::Invalid(
            "motion generation supports the H36M skeleton only".into(),
        ));
    }
    Ok(())
}

struct JointSwing {
    base: Vector3<f64>,
    amp: Vector3<f64>,
    omega: Vector3<f64>,
    phase: Vector3<f64>,
}

/// World-frame (z up, mm) motion for `spec`; a pure function of the spec.
pub fn generate_motion(spec: &MotionSpec, skeleton: &Skeleton) -> Result<PoseSequence3D> {
    spec.validate()?;
    h36m_only(skeleton)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let deg = PI / 180.0;
    let joints = skeleton.joint_count();

    let swings: Vec<JointSwing> = (0..joints)
        .map(|j| {
            let limb_amp = match limb_of(j) {
                Limb::Leg => spec.leg_amplitude_deg,
                Limb::Arm => spec.arm_amplitude_deg,
                Limb::Torso => spec.torso_amplitude_deg,
            } * deg;
            let mut axis_amp = Vector3::new(
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.1..0.4),
                rng.gen_range(0.1..0.4),
            );
            // knees and elbows are hinges about the body x axis
            if matches!(j, 2 | 5 | 12 | 15) {
                axis_amp = Vector3::new(1.0, 0.0, 0.0);
            }
            let base = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ) * spec.pose_variation_deg
                * deg;
            let omega =
                Vector3::from_fn(|_, _| 2.0 * PI * spec.frequency_hz * rng.gen_range(0.8..1.25));
            let phase = Vector3::from_fn(|_, _| rng.gen_range(0.0..2.0 * PI));
            JointSwing {
                base,
                amp: axis_amp * limb_amp,
                omega,
                phase,
            }
        })
        .collect();

    let heading0 = rng.gen_range(0.0..2.0 * PI);
    let sway_omega = [
        2.0 * PI * rng.gen_range(0.1..0.3),
        2.0 * PI * rng.gen_range(0.1..0.3),
    ];
    let sway_phase = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
    let bob_omega = 2.0 * PI * spec.frequency_hz * 2.0;

    let frames = (0..spec.frame_count)
        .map(|i| {
            let t = i as f64 / spec.frame_rate_hz;
            let local: Vec<Rotation3<f64>> = swings
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let mut angle = Vector3::from_fn(|k, _| {
                        s.base[k] + s.amp[k] * (s.omega[k] * t + s.phase[k]).sin()
                    });
                    if matches!(j, 2 | 5) {
                        // knees flex backwards only
                        angle.x = -(s.base.x.abs()
                            + s.amp.x * 0.5 * (1.0 - (s.omega.x * t + s.phase.x).cos()));
                    } else if matches!(j, 12 | 15) {
                        angle.x = s.base.x.abs()
                            + s.amp.x * 0.5 * (1.0 - (s.omega.x * t + s.phase.x).cos());
                    }
                    Rotation3::from_scaled_axis(angle)
                })
                .collect();

            let heading = heading0 + spec.turn_rate_deg_s * deg * t;
            let root_rot = Rotation3::from_axis_angle(&Vector3::z_axis(), heading)
                * local[skeleton.root_index];
            let root_pos = Vector3::new(
                spec.root_sway_mm * (sway_omega[0] * t + sway_phase[0]).sin(),
                spec.root_sway_mm * (sway_omega[1] * t + sway_phase[1]).sin(),
                PELVIS_HEIGHT_MM + spec.root_bob_mm * (bob_omega * t).sin(),
            );

            let mut global = vec![Rotation3::identity(); joints];
            let mut pos = vec![Vector3::zeros(); joints];
            global[skeleton.root_index] = root_rot;
            pos[skeleton.root_index] = root_pos;
            // H36M parents always precede their children
            for j in 0..joints {
                if let Some(p) = skeleton.parent_index[j] {
                    pos[j] = pos[p] + global[p] * Vector3::from(H36M_OFFSETS[j]);
                    global[j] = global[p] * local[j];
                }
            }
            Pose3D::new(pos.into_iter().map(Into::into).collect())
        })
        .collect();
    Ok(PoseSequence3D::new(frames, spec.frame_rate_hz))
}

/// Rest bone lengths of the generator's H36M skeleton, indexed by child joint.
pub fn rest_bone_length(joint: usize) -> f64 {
    Vector3::from(H36M_OFFSETS[joint]).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(activity: &str, seed: u64) -> MotionSpec {
        MotionSpec::preset(activity, seed, 40, 50.0).unwrap()
    }

    #[test]
    fn deterministic_by_seed() {
        let s = Skeleton::h36m();
        let a = generate_motion(&spec("walk", 7), &s).unwrap();
        let b = generate_motion(&spec("walk", 7), &s).unwrap();
        assert_eq!(a, b);
        let c = generate_motion(&spec("walk", 8), &s).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_amplitude_is_static() {
        let s = Skeleton::h36m();
        let m = generate_motion(&spec("throw", 3).frozen(), &s).unwrap();
        assert!(m.frames.iter().all(|f| *f == m.frames[0]));
        assert_eq!(m.len(), 40);
    }

    #[test]
    fn bone_lengths_are_constant() {
        let s = Skeleton::h36m();
        for activity in MotionSpec::PRESETS {
            let m = generate_motion(&spec(activity, 11), &s).unwrap();
            for frame in &m.frames {
                for (parent, child) in s.bones() {
                    let len = (frame.joint(child) - frame.joint(parent)).norm();
                    let rest = rest_bone_length(child);
                    assert!(
                        (len - rest).abs() <= 1e-6 * rest,
                        "{activity}: bone {parent}->{child} {len} vs {rest}"
                    );
                }
            }
        }
    }

    #[test]
    fn feet_stay_near_floor_and_body_upright() {
        let s = Skeleton::h36m();
        let m = generate_motion(&spec("jump", 5), &s).unwrap();
        for f in &m.frames {
            assert!(f.joint(10).z > f.joint(0).z);
            assert!(f.points().all(|p| p.z > -100.0 && p.z < 2200.0));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let s = Skeleton::h36m();
        assert!(MotionSpec::preset("dance", 1, 10, 50.0).is_err());
        let mut short = spec("walk", 1);
        short.frame_count = 1;
        assert!(generate_motion(&short, &s).is_err());
    }
}
