//! Procedural tube mesh bound to a skeleton.
//!
//! Every bone becomes a capped tube with a fixed number of rings and sides,
//! so any two skeletons with the same joint table produce meshes with the
//! same topology. The shape corpus relies on that.

use nalgebra::Vector3;

use crate::skeleton::{JointGroup, RotationDof, Skeleton, SkinnedMesh};

/// Sides per tube ring.
pub const TUBE_SIDES: usize = 12;
/// Ring positions along each bone, as fractions of its length.
const RING_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Radii of the procedural tubes, in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeStyle {
    pub torso: f64,
    pub limb: f64,
    pub neck: f64,
    pub head: f64,
    pub ear: f64,
    pub tail: f64,
}

impl Default for TubeStyle {
    fn default() -> Self {
        TubeStyle {
            torso: 85.0,
            limb: 30.0,
            neck: 50.0,
            head: 50.0,
            ear: 12.0,
            tail: 16.0,
        }
    }
}

impl TubeStyle {
    pub fn scaled(&self, factor: f64) -> Self {
        TubeStyle {
            torso: self.torso * factor,
            limb: self.limb * factor,
            neck: self.neck * factor,
            head: self.head * factor,
            ear: self.ear * factor,
            tail: self.tail * factor,
        }
    }

    fn radius(&self, skeleton: &Skeleton, parent: usize, child: usize) -> f64 {
        let c = skeleton.joint(child);
        match c.group {
            JointGroup::Ear => self.ear,
            JointGroup::Tail => {
                // Taper towards the tip.
                let depth = (0..)
                    .scan(child, |j, _| {
                        let p = skeleton.parent(*j)?;
                        *j = p;
                        Some(p)
                    })
                    .take_while(|&p| skeleton.joint(p).group == JointGroup::Tail)
                    .count();
                self.tail * (1.0 - 0.08 * depth as f64).max(0.4)
            }
            JointGroup::Head => {
                let name = c.name.as_str();
                if name.starts_with("neck") {
                    self.neck
                } else if name == "head" {
                    self.head
                } else {
                    self.head * 0.6
                }
            }
            JointGroup::Body => {
                // Bones leaving the root or spine form the trunk.
                let p = skeleton.joint(parent);
                if p.parent.is_none() || p.name.starts_with("spine") {
                    self.torso
                } else {
                    self.limb
                }
            }
        }
    }
}

/// Tube mesh of the skeleton's rest pose with default radii.
pub fn template_mesh(skeleton: &Skeleton) -> SkinnedMesh {
    tube_mesh(skeleton, &TubeStyle::default())
}

/// Tube mesh of the skeleton's rest pose, root at the origin.
pub fn tube_mesh(skeleton: &Skeleton, style: &TubeStyle) -> SkinnedMesh {
    let rest = skeleton.rest_positions();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut weights = Vec::new();
    for child in 1..skeleton.len() {
        let parent = skeleton.parent(child).expect("non-root joint");
        let a = rest[parent];
        let b = rest[child];
        let axis = (b - a).try_normalize(1e-12).unwrap_or_else(Vector3::z);
        let reference = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = axis.cross(&reference).normalize();
        let v = axis.cross(&u);
        let radius = style.radius(skeleton, parent, child);
        let end_weights = if skeleton.joint(child).rotation == RotationDof::Fixed {
            vec![(parent, 1.0)]
        } else {
            vec![(parent, 0.5), (child, 0.5)]
        };

        let base = vertices.len();
        for (r, &t) in RING_FRACTIONS.iter().enumerate() {
            let centre = a + (b - a) * t;
            for s in 0..TUBE_SIDES {
                let angle = std::f64::consts::TAU * s as f64 / TUBE_SIDES as f64;
                vertices.push(centre + (u * angle.cos() + v * angle.sin()) * radius);
                weights.push(if r + 1 == RING_FRACTIONS.len() {
                    end_weights.clone()
                } else {
                    vec![(parent, 1.0)]
                });
            }
        }
        let start_cap = vertices.len();
        vertices.push(a - axis * radius * 0.5);
        weights.push(vec![(parent, 1.0)]);
        let end_cap = vertices.len();
        vertices.push(b + axis * radius * 0.5);
        weights.push(end_weights.clone());

        let ring = |r: usize, s: usize| base + r * TUBE_SIDES + s % TUBE_SIDES;
        for r in 0..RING_FRACTIONS.len() - 1 {
            for s in 0..TUBE_SIDES {
                // Counter-clockwise seen from outside.
                triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
                triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
            }
        }
        let last = RING_FRACTIONS.len() - 1;
        for s in 0..TUBE_SIDES {
            triangles.push([start_cap, ring(0, s + 1), ring(0, s)]);
            triangles.push([end_cap, ring(last, s), ring(last, s + 1)]);
        }
    }
    SkinnedMesh {
        vertices,
        triangles,
        skin_weights: weights,
    }
}
