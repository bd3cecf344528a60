use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{forward_kinematics, Pose, Skeleton};
use crate::error::{Error, Result};

/// Per-vertex list of `(joint index, weight)`.
pub type SkinWeights = Vec<Vec<(usize, f64)>>;

/// Triangle mesh bound to a skeleton for linear blend skinning. Vertices are
/// in the skeleton's rest pose with the root at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub skin_weights: SkinWeights,
}

impl SkinnedMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[usize; 3]>,
        skin_weights: SkinWeights,
        joint_count: usize,
    ) -> Result<Self> {
        let mesh = SkinnedMesh {
            vertices,
            triangles,
            skin_weights,
        };
        mesh.validate(joint_count)?;
        Ok(mesh)
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.skin_weights.len() != self.vertices.len() {
            return Err(Error::Dimension {
                expected: self.vertices.len(),
                got: self.skin_weights.len(),
                context: "skin weight lists",
            });
        }
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Mesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        for (v, weights) in self.skin_weights.iter().enumerate() {
            let mut total = 0.0;
            for &(j, w) in weights {
                if j >= joint_count {
                    return Err(Error::Mesh(format!("vertex {v} bound to joint {j}")));
                }
                if w < 0.0 {
                    return Err(Error::Mesh(format!("vertex {v} has negative weight")));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-5 {
                return Err(Error::Mesh(format!("vertex {v} weights sum to {total}")));
            }
        }
        Ok(())
    }

    /// Loads a Wavefront OBJ (positions and faces only) plus a skin-weight
    /// sidecar JSON whose joints are remapped by name onto `skeleton`.
    pub fn load(obj: impl AsRef<Path>, sidecar: impl AsRef<Path>, skeleton: &Skeleton) -> Result<Self> {
        let (vertices, triangles) = read_obj(obj.as_ref())?;
        let sidecar = sidecar.as_ref();
        let file: SkinFile = serde_json::from_str(&std::fs::read_to_string(sidecar)?)
            .map_err(|e| Error::format(sidecar, e.to_string()))?;
        let remap: Vec<usize> = file
            .joint_names
            .iter()
            .map(|n| {
                skeleton
                    .index_of(n)
                    .ok_or_else(|| Error::format(sidecar, format!("unknown joint `{n}`")))
            })
            .collect::<Result<_>>()?;
        let skin_weights = file
            .weights
            .into_iter()
            .map(|list| {
                list.into_iter()
                    .map(|(j, w)| {
                        remap
                            .get(j)
                            .map(|&m| (m, w))
                            .ok_or_else(|| Error::format(sidecar, format!("joint slot {j}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        SkinnedMesh::new(vertices, triangles, skin_weights, skeleton.len())
    }

    pub fn save(&self, obj: impl AsRef<Path>, sidecar: impl AsRef<Path>, skeleton: &Skeleton) -> Result<()> {
        write_obj(obj.as_ref(), &self.vertices, &self.triangles)?;
        let file = SkinFile {
            joint_names: skeleton.joints().iter().map(|j| j.name.clone()).collect(),
            weights: self.skin_weights.clone(),
        };
        std::fs::write(sidecar, serde_json::to_string(&file)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SkinFile {
    joint_names: Vec<String>,
    weights: Vec<Vec<(usize, f64)>>,
}

/// Linear blend skinning: `v' = sum_k w_k * W_k * B_k^-1 * v` with `W_k` the
/// posed and `B_k` the rest world transform of joint `k`.
pub fn skin_mesh(mesh: &SkinnedMesh, skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    mesh.validate(skeleton.len())?;
    let rest = forward_kinematics(skeleton, &Pose::identity(skeleton))?;
    let posed = forward_kinematics(skeleton, pose)?;
    let deltas: Vec<Isometry3<f64>> = posed
        .world
        .iter()
        .zip(&rest.world)
        .map(|(w, b)| w * b.inverse())
        .collect();
    Ok(mesh
        .vertices
        .iter()
        .zip(&mesh.skin_weights)
        .map(|(v, weights)| {
            let p = Point3::from(*v);
            weights
                .iter()
                .fold(Vector3::zeros(), |acc, &(j, w)| acc + (deltas[j] * p).coords * w)
        })
        .collect())
}

pub(crate) fn read_obj(path: &Path) -> Result<(Vec<Vector3<f64>>, Vec<[usize; 3]>)> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .take(3)
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
                if xyz.len() != 3 {
                    return Err(Error::format(path, format!("line {}: short vertex", n + 1)));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or(tok);
                        first
                            .parse::<i64>()
                            .ok()
                            .and_then(|i| match i {
                                i if i > 0 => Some(i as usize - 1),
                                i if i < 0 => vertices.len().checked_sub((-i) as usize),
                                _ => None,
                            })
                            .ok_or_else(|| Error::format(path, format!("line {}: bad index `{tok}`", n + 1)))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::format(path, format!("line {}: face with < 3 vertices", n + 1)));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub(crate) fn write_obj(path: &Path, vertices: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{JointDef, JointGroup, RotationDof};
    use nalgebra::UnitQuaternion;

    fn two_bone() -> Skeleton {
        let j = |name: &str, parent: Option<usize>, off: [f64; 3]| JointDef {
            name: name.into(),
            parent,
            rest_offset: off.into(),
            rotation: RotationDof::Ball,
            translation: false,
            symmetric_pair: None,
            group: JointGroup::Body,
        };
        Skeleton::new(
            "two",
            vec![j("a", None, [0.0; 3]), j("b", Some(0), [100.0, 0.0, 0.0])],
            1,
        )
        .unwrap()
    }

    fn mesh(weights: SkinWeights) -> SkinnedMesh {
        SkinnedMesh::new(
            vec![Vector3::new(50.0, 10.0, 0.0), Vector3::new(150.0, 0.0, 0.0)],
            vec![],
            weights,
            2,
        )
        .unwrap()
    }

    #[test]
    fn identity_pose_is_identity_on_vertices() {
        let skel = Skeleton::dog();
        let m = crate::synthgen::template_mesh(&skel);
        let posed = skin_mesh(&m, &skel, &Pose::identity(&skel)).unwrap();
        for (a, b) in posed.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn single_weight_moves_rigidly() {
        let skel = two_bone();
        let m = mesh(vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
        let mut pose = Pose::identity(&skel);
        pose.joint_rotations[1] = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let out = skin_mesh(&m, &skel, &pose).unwrap();
        // Vertex (150,0,0) is 50 along joint b's x axis, now rotated onto +y.
        assert!((out[1] - Vector3::new(100.0, 50.0, 0.0)).norm() < 1e-9);
        assert!((out[0] - Vector3::new(90.0, -50.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn half_weights_blend_to_midpoint() {
        let skel = two_bone();
        let m = mesh(vec![vec![(0, 0.5), (1, 0.5)], vec![(1, 1.0)]]);
        let mut pose = Pose::identity(&skel);
        pose.root_translation = Vector3::new(0.0, 0.0, 40.0);
        pose.joint_rotations[1] = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let out = skin_mesh(&m, &skel, &pose).unwrap();
        // Rigid images of (50,10,0): under a -> (50,10,40); under b -> (90,-50,40).
        let expected = (Vector3::new(50.0, 10.0, 40.0) + Vector3::new(90.0, -50.0, 40.0)) / 2.0;
        assert!((out[0] - expected).norm() < 1e-9);
    }

    #[test]
    fn validation_errors() {
        let bad = SkinnedMesh::new(vec![Vector3::zeros()], vec![[0, 0, 1]], vec![vec![(0, 1.0)]], 1);
        assert!(matches!(bad, Err(Error::Mesh(_))));
        let bad = SkinnedMesh::new(vec![Vector3::zeros()], vec![], vec![vec![(0, 0.7)]], 1);
        assert!(matches!(bad, Err(Error::Mesh(_))));
        let bad = SkinnedMesh::new(vec![Vector3::zeros()], vec![], vec![vec![(3, 1.0)]], 1);
        assert!(matches!(bad, Err(Error::Mesh(_))));
    }

    #[test]
    fn obj_and_sidecar_round_trip() {
        let skel = Skeleton::dog();
        let m = crate::synthgen::template_mesh(&skel);
        let dir = tempfile::tempdir().unwrap();
        let (obj, side) = (dir.path().join("dog.obj"), dir.path().join("dog.skin.json"));
        m.save(&obj, &side, &skel).unwrap();
        let back = SkinnedMesh::load(&obj, &side, &skel).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.skin_weights, m.skin_weights);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn obj_quads_are_fanned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.obj");
        std::fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n").unwrap();
        let (v, f) = read_obj(&p).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3]]);
    }
}
