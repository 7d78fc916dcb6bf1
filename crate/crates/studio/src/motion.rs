//! Parametric motion tracks for the 22-joint humanoid.
//!
//! Every motion is a set of smooth (sinusoidal) joint-angle curves sharing a
//! single phase clock, sampled at the sequence frame rate. Frame `k` carries
//! timestamp `k/fps`; a track holds `round(fps·duration)` frames.

use draper_core::body::{Pose, HUMANOID_JOINTS};
use draper_core::error::{Error, Result};
use draper_core::scalar::Real;
use serde::{Deserialize, Serialize};

/// Built-in motion repertoire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionSpec {
    IdleSway,
    Walk,
    ArmWave,
    Spin,
}

impl MotionSpec {
    pub const ALL: [MotionSpec; 4] =
        [MotionSpec::IdleSway, MotionSpec::Walk, MotionSpec::ArmWave, MotionSpec::Spin];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "idle-sway" => Ok(MotionSpec::IdleSway),
            "walk" => Ok(MotionSpec::Walk),
            "arm-wave" => Ok(MotionSpec::ArmWave),
            "spin" => Ok(MotionSpec::Spin),
            other => Err(Error::Config(format!(
                "unknown motion '{other}' (expected idle-sway, walk, arm-wave or spin)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionSpec::IdleSway => "idle-sway",
            MotionSpec::Walk => "walk",
            MotionSpec::ArmWave => "arm-wave",
            MotionSpec::Spin => "spin",
        }
    }
}

impl std::fmt::Display for MotionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Joint indices of the humanoid skeleton, in generation order.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const SPINE1: usize = 1;
    pub const SPINE2: usize = 2;
    pub const CHEST: usize = 3;
    pub const NECK: usize = 4;
    pub const HEAD: usize = 5;
    pub const COLLAR_L: usize = 6;
    pub const SHOULDER_L: usize = 7;
    pub const ELBOW_L: usize = 8;
    pub const WRIST_L: usize = 9;
    pub const COLLAR_R: usize = 10;
    pub const SHOULDER_R: usize = 11;
    pub const ELBOW_R: usize = 12;
    pub const WRIST_R: usize = 13;
    pub const HIP_L: usize = 14;
    pub const KNEE_L: usize = 15;
    pub const ANKLE_L: usize = 16;
    pub const FOOT_L: usize = 17;
    pub const HIP_R: usize = 18;
    pub const KNEE_R: usize = 19;
    pub const ANKLE_R: usize = 20;
    pub const FOOT_R: usize = 21;
}

const TAU: f64 = std::f64::consts::TAU;

/// Pose of `motion` at absolute time `t` seconds.
pub fn pose_at<T: Real>(motion: MotionSpec, t: f64) -> Pose<T> {
    let mut rot = vec![[0.0f64; 3]; HUMANOID_JOINTS];
    let mut root = [0.0f64; 3];
    match motion {
        MotionSpec::IdleSway => {
            let w = TAU * 0.4;
            let s = (w * t).sin();
            rot[joint::SPINE2][2] = 0.10 * s;
            rot[joint::CHEST][2] = 0.06 * s;
            rot[joint::NECK][2] = -0.05 * s;
            rot[joint::SHOULDER_L][2] = 0.12 * s;
            rot[joint::SHOULDER_R][2] = 0.12 * s;
            root[0] = 0.015 * s;
        }
        MotionSpec::Walk => {
            let w = TAU * 1.0;
            let s = (w * t).sin();
            rot[joint::HIP_L][0] = 0.45 * s;
            rot[joint::HIP_R][0] = -0.45 * s;
            rot[joint::KNEE_L][0] = 0.35 * 0.5 * (1.0 - (w * t - 0.6).cos());
            rot[joint::KNEE_R][0] = 0.35 * 0.5 * (1.0 - (w * t - 0.6 + std::f64::consts::PI).cos());
            rot[joint::SHOULDER_L][1] = -0.30 * s;
            rot[joint::SHOULDER_R][1] = 0.30 * s;
            rot[joint::ELBOW_L][1] = -0.15 * (w * t - 0.4).sin();
            rot[joint::ELBOW_R][1] = 0.15 * (w * t - 0.4).sin();
            rot[joint::SPINE2][1] = 0.08 * s;
            root[0] = 0.01 * s;
            root[1] = 0.02 * (2.0 * w * t).sin();
        }
        MotionSpec::ArmWave => {
            let w = TAU * 0.6;
            let s = (w * t).sin();
            rot[joint::SHOULDER_L][2] = 0.9 + 0.35 * s;
            rot[joint::ELBOW_L][2] = 0.25 + 0.25 * (w * t + 0.9).sin();
            rot[joint::SHOULDER_R][2] = -0.15 - 0.10 * s;
            rot[joint::CHEST][2] = 0.05 * s;
        }
        MotionSpec::Spin => {
            let rate = 0.5 * std::f64::consts::PI; // one revolution per 4 s
            rot[joint::PELVIS][1] = rate * t;
            rot[joint::SHOULDER_L][2] = 0.35;
            rot[joint::SHOULDER_R][2] = -0.35;
        }
    }
    Pose {
        joint_rotations: rot
            .into_iter()
            .map(|r| [T::from_f64c(r[0]), T::from_f64c(r[1]), T::from_f64c(r[2])])
            .collect(),
        root_translation: [
            T::from_f64c(root[0]),
            T::from_f64c(root[1]),
            T::from_f64c(root[2]),
        ],
        timestamp: T::from_f64c(t),
    }
}

/// Track of `round(fps·duration)` frames: frame `k` is the motion at time
/// `k·speed/fps` with timestamp `k/fps`. `speed` > 1 plays the same curves
/// faster (larger joint velocities and accelerations) in the same wall time.
pub fn pose_track_scaled<T: Real>(
    motion: MotionSpec,
    fps: f64,
    duration: f64,
    speed: f64,
) -> Result<Vec<Pose<T>>> {
    if fps <= 0.0 || duration <= 0.0 || speed <= 0.0 {
        return Err(Error::Config(format!(
            "fps ({fps}), duration ({duration}) and speed ({speed}) must be positive"
        )));
    }
    let frames = (fps * duration).round() as usize;
    if frames == 0 {
        return Err(Error::Config("track would be empty".into()));
    }
    Ok((0..frames)
        .map(|k| {
            let t = k as f64 / fps;
            let mut pose = pose_at::<T>(motion, t * speed);
            pose.timestamp = T::from_f64c(t);
            pose
        })
        .collect())
}

/// Track at natural speed.
pub fn pose_track<T: Real>(motion: MotionSpec, fps: f64, duration: f64) -> Result<Vec<Pose<T>>> {
    pose_track_scaled(motion, fps, duration, 1.0)
}
