//! Procedural quadruped gait over a skeleton.
//!
//! Joint angles follow phase-shifted sinusoids per leg. Stride frequency,
//! amplitude, heading, head and tail carriage drift through slow random
//! processes, so a long sequence does not repeat exactly.

use std::f64::consts::TAU;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::skeleton::{Pose, RotationDof, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitKind {
    /// Lateral-sequence four-beat walk.
    Walk,
    /// Diagonal two-beat trot.
    Trot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitConfig {
    pub kind: GaitKind,
    pub frames: usize,
    pub fps: f64,
    pub stride_hz: f64,
    pub speed_mm_s: f64,
    /// Scales the slow random drift; 0 gives a strictly periodic gait.
    pub variation: f64,
    pub seed: u64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            kind: GaitKind::Walk,
            frames: 100,
            fps: 30.0,
            stride_hz: 1.5,
            speed_mm_s: 800.0,
            variation: 1.0,
            seed: 7,
        }
    }
}

/// Sum of three low-frequency sinusoids with random phases, roughly in [-1, 1].
struct Drift([(f64, f64); 3]);

impl Drift {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Drift([0.0; 3].map(|_| (rng.random_range(0.05..0.4), rng.random_range(0.0..TAU))))
    }

    fn at(&self, t: f64) -> f64 {
        self.0.iter().map(|(f, p)| (TAU * f * t + p).sin()).sum::<f64>() / 2.0
    }
}

fn about(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
}

fn euler(pitch: f64, yaw: f64, roll: f64) -> UnitQuaternion<f64> {
    about(Vector3::y(), yaw) * about(Vector3::x(), pitch) * about(Vector3::z(), roll)
}

/// Generates `config.frames` poses. Joints missing from the skeleton are
/// skipped, so any skeleton using the dog's joint names works.
pub fn gait_sequence(skeleton: &Skeleton, config: &GaitConfig) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let drifts: Vec<Drift> = (0..10).map(|_| Drift::new(&mut rng)).collect();
    let var = config.variation;
    let legs: [(&str, bool, f64); 4] = match config.kind {
        GaitKind::Walk => [
            ("l_hip", false, 0.0),
            ("l_shoulder", true, 0.25),
            ("r_hip", false, 0.5),
            ("r_shoulder", true, 0.75),
        ],
        GaitKind::Trot => [
            ("l_hip", false, 0.0),
            ("r_shoulder", true, 0.0),
            ("r_hip", false, 0.5),
            ("l_shoulder", true, 0.5),
        ],
    };
    let idx = |name: &str| skeleton.index_of(name);
    let dt = 1.0 / config.fps;

    let mut phase = rng.random_range(0.0..TAU);
    let mut heading = 0.0f64;
    let mut position = Vector3::zeros();
    let mut out = Vec::with_capacity(config.frames);
    for i in 0..config.frames {
        let t = i as f64 * dt;
        let amp = 1.0 + 0.3 * var * drifts[0].at(t);
        let mut rot = vec![UnitQuaternion::identity(); skeleton.len()];
        let mut trans = vec![Vector3::zeros(); skeleton.translating_joints().len()];
        let mut set = |name: &str, q: UnitQuaternion<f64>| {
            if let Some(j) = idx(name) {
                rot[j] = match skeleton.joint(j).rotation {
                    RotationDof::Fixed => UnitQuaternion::identity(),
                    // Project onto the hinge by keeping the angle about its axis.
                    RotationDof::Hinge { axis } => {
                        let axis = Vector3::from(axis).normalize();
                        let angle = 2.0 * q.imag().dot(&axis).atan2(q.w);
                        about(axis, angle)
                    }
                    RotationDof::Ball => q,
                };
            }
        };

        for &(base, front, offset) in &legs {
            let side = &base[..2];
            let p = phase + TAU * offset;
            let (s, c) = p.sin_cos();
            let lift = 0.5 + 0.5 * c;
            if front {
                set(base, euler(0.3 * amp * s, 0.0, 0.04 * c));
                set(&format!("{side}upper_arm"), euler(0.15 * s, 0.0, 0.0));
                set(&format!("{side}elbow"), euler(0.6 * amp * lift, 0.0, 0.0));
                set(&format!("{side}wrist"), euler(-0.5 * amp * lift, 0.0, 0.0));
                set(&format!("{side}paw"), euler(0.3 * s, 0.0, 0.0));
                if let Some(j) = idx(base) {
                    if let Some(slot) = skeleton.translating_joints().iter().position(|&k| k == j) {
                        trans[slot] = Vector3::new(0.0, 8.0 * c, 12.0 * s);
                    }
                }
            } else {
                set(base, euler(0.35 * amp * s, 0.0, 0.05 * c));
                set(&format!("{side}knee"), euler(-0.5 * amp * lift, 0.0, 0.0));
                set(&format!("{side}ankle"), euler(0.45 * amp * lift, 0.0, 0.0));
                set(&format!("{side}hind_paw"), euler(0.3 * s, 0.0, 0.0));
            }
        }

        let two = 2.0 * phase;
        set("spine1", euler(0.02 * two.sin(), 0.06 * two.sin(), 0.04 * phase.sin()));
        set("spine2", euler(0.02 * two.cos(), -0.05 * two.sin(), 0.03 * phase.sin()));
        let look_yaw = 0.35 * var * drifts[1].at(t);
        let look_pitch = 0.25 * var * drifts[2].at(t);
        for neck in ["neck1", "neck2", "neck3"] {
            set(neck, euler(0.04 * two.sin() + look_pitch / 3.0, look_yaw / 3.0, 0.0));
        }
        set(
            "head",
            euler(
                0.05 * two.cos() + 0.2 * var * drifts[3].at(t),
                0.1 * var * drifts[4].at(t),
                0.0,
            ),
        );
        set(
            "muzzle",
            euler((0.15 * var * (drifts[5].at(t) + 0.5)).max(0.0), 0.0, 0.0),
        );
        let carriage = 0.4 * var * drifts[6].at(t);
        let wag = 0.25 * (1.0 + 0.5 * var * drifts[7].at(t));
        for k in 1..=8 {
            let lag = two - 0.5 * k as f64;
            set(&format!("tail{k}"), euler(carriage / 4.0, wag * lag.sin(), 0.0));
        }

        let stride = config.stride_hz * (1.0 + 0.15 * var * drifts[8].at(t));
        let turn_rate = 0.5 * var * drifts[9].at(t);
        let root_rotation = about(Vector3::y(), heading) * euler(0.03 * two.sin(), 0.0, 0.02 * phase.sin());
        let bob = 15.0 * two.sin();
        let root_translation = position + Vector3::new(0.0, bob, 0.0);
        out.push(Pose::new(root_rotation, root_translation, rot, trans));

        phase += TAU * stride * dt;
        heading += turn_rate * dt;
        let speed = config.speed_mm_s * stride / config.stride_hz;
        position += Vector3::new(heading.sin(), 0.0, heading.cos()) * speed * dt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_lengths, joint_positions};

    #[test]
    fn deterministic_for_a_seed() {
        let skel = Skeleton::dog();
        let cfg = GaitConfig {
            frames: 20,
            ..Default::default()
        };
        assert_eq!(gait_sequence(&skel, &cfg), gait_sequence(&skel, &cfg));
        let other = gait_sequence(&skel, &GaitConfig { seed: 8, ..cfg });
        assert_ne!(other, gait_sequence(&skel, &cfg));
    }

    #[test]
    fn respects_joint_dof() {
        let skel = Skeleton::dog();
        for pose in gait_sequence(&skel, &GaitConfig::default()) {
            for (j, q) in pose.joint_rotations.iter().enumerate() {
                match skel.joint(j).rotation {
                    RotationDof::Fixed => assert!(q.angle() < 1e-12),
                    RotationDof::Hinge { axis } => {
                        if q.angle() > 1e-9 {
                            let a = q.axis().unwrap();
                            assert!(a.dot(&Vector3::from(axis)).abs() > 1.0 - 1e-9);
                        }
                    }
                    RotationDof::Ball => {}
                }
            }
            let lengths = bone_lengths(&skel, &joint_positions(&skel, &pose).unwrap()).unwrap();
            let shoulder = skel.index_of("l_shoulder").unwrap() - 1;
            for (k, (l, r)) in lengths.iter().zip(skel.rest_lengths()).enumerate() {
                if k != shoulder && k != shoulder + 6 {
                    assert!((l - r).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn moves_forward() {
        let skel = Skeleton::dog();
        let poses = gait_sequence(
            &skel,
            &GaitConfig {
                variation: 0.0,
                ..Default::default()
            },
        );
        let travelled = poses.last().unwrap().root_translation.z - poses[0].root_translation.z;
        assert!(travelled > 0.5 * 800.0 * 99.0 / 30.0);
    }
}
