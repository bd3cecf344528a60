//! Procedural stand-in for a corpus of scanned dogs.
//!
//! Each dog is the template skeleton with bone lengths and tube radii
//! driven linearly by four proportion factors (size, legs, neck and head,
//! trunk and tail) plus small per-bone noise, and small neutral-pose leg
//! rotations. All dogs share the template's mesh topology.

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::skeleton::{JointGroup, Skeleton, SkinnedMesh};
use crate::synthgen::{tube_mesh, TubeStyle};

/// One corpus entry.
#[derive(Clone, Debug)]
pub struct ShapeExemplar {
    pub skeleton: Skeleton,
    /// Rest-pose mesh.
    pub mesh: SkinnedMesh,
    /// Per-joint rotation from the rest pose to the dog's neutral stance.
    pub neutral: Vec<UnitQuaternion<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Region {
    Leg,
    HeadNeck,
    Trunk,
    Tail,
}

fn region(skeleton: &Skeleton, j: usize) -> Region {
    let mut cur = Some(j);
    while let Some(c) = cur {
        let name = skeleton.joint(c).name.as_str();
        if ["l_hip", "r_hip", "l_shoulder", "r_shoulder"].contains(&name) && c != j {
            return Region::Leg;
        }
        cur = skeleton.parent(c);
    }
    match skeleton.joint(j).group {
        JointGroup::Head | JointGroup::Ear => Region::HeadNeck,
        JointGroup::Tail => Region::Tail,
        JointGroup::Body => Region::Trunk,
    }
}

/// Dog with the given factors (each roughly unit-variance) and no noise.
pub fn surrogate_dog(base: &Skeleton, factors: [f64; 4]) -> ShapeExemplar {
    surrogate_dog_with_noise(base, factors, &[])
}

fn surrogate_dog_with_noise(base: &Skeleton, a: [f64; 4], length_noise: &[f64]) -> ShapeExemplar {
    let gain = |r: Region| {
        1.0 + 0.12 * a[0]
            + match r {
                Region::Leg => 0.10 * a[1],
                Region::HeadNeck => 0.10 * a[2],
                Region::Trunk | Region::Tail => 0.08 * a[3],
            }
    };
    let offsets: Vec<Vector3<f64>> = (0..base.len())
        .map(|j| {
            let noise = length_noise.get(j).copied().unwrap_or(0.0);
            base.joint(j).rest_offset * (gain(region(base, j)) + noise).max(0.2)
        })
        .collect();
    let skeleton = base.with_rest_offsets(&offsets).expect("same joint count");
    let girth = 1.0 + 0.12 * a[0];
    let d = TubeStyle::default();
    let style = TubeStyle {
        torso: d.torso * (girth + 0.08 * a[3]),
        limb: d.limb * (girth + 0.05 * a[1]),
        neck: d.neck * (girth + 0.06 * a[2]),
        head: d.head * (girth + 0.06 * a[2]),
        ear: d.ear * girth,
        tail: d.tail * (girth + 0.05 * a[3]),
    };
    let mesh = tube_mesh(&skeleton, &style);
    let splay = 0.04 * a[1];
    let neutral = (0..base.len())
        .map(|j| {
            let name = base.joint(j).name.as_str();
            match name {
                "l_hip" | "l_shoulder" => UnitQuaternion::from_euler_angles(0.0, 0.0, splay),
                "r_hip" | "r_shoulder" => UnitQuaternion::from_euler_angles(0.0, 0.0, -splay),
                "neck1" => UnitQuaternion::from_euler_angles(-0.05 * a[2], 0.0, 0.0),
                _ => UnitQuaternion::identity(),
            }
        })
        .collect();
    ShapeExemplar {
        skeleton,
        mesh,
        neutral,
    }
}

/// `count` seeded surrogate dogs. Bone lengths carry 1% independent noise on
/// top of the four shared factors.
pub fn surrogate_corpus(base: &Skeleton, count: usize, seed: u64) -> Vec<ShapeExemplar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let bone = Normal::new(0.0, 0.01).expect("valid normal");
    (0..count)
        .map(|_| {
            let a = [0; 4].map(|_| unit.sample(&mut rng));
            let noise: Vec<f64> = (0..base.len()).map(|_| bone.sample(&mut rng)).collect();
            surrogate_dog_with_noise(base, a, &noise)
        })
        .collect()
}
