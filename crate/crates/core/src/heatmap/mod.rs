//! Network-side data representation: input cropping, joint depth
//! normalization, tri-planar heatmap encoding and 3D pose regression from
//! heatmaps.

mod crop;
mod decode;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, MAX_DEPTH_MM};
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

pub use crop::{crop_for_network, network_input, CropTransform, PadRecord, NETWORK_SIDE, PADDED_SIDE};
pub use decode::{decode_heatmaps, plane_peaks, DecodedJoints, Peak, PAIR_COLLISION_PX, PEAK_NMS_RADIUS};

/// Side of each heatmap plane.
pub const PLANE_SIDE: usize = 64;
/// Half-range of root-relative depth offsets, in mm.
pub const DEPTH_OFFSET_RANGE_MM: f64 = 2000.0;
const CODE_MAX: f64 = 255.0;
const CODE_MID: f64 = CODE_MAX / 2.0;

const MAGIC: &[u8; 4] = b"QHM1";

/// Joints in network coordinates: `x`, `y` in 256-pixel space and `z` as a
/// normalized depth code in `[0, 255]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedJoints {
    pub j3d256: Vec<[f64; 3]>,
    pub root_index: usize,
}

impl NormalizedJoints {
    pub fn len(&self) -> usize {
        self.j3d256.len()
    }

    pub fn is_empty(&self) -> bool {
        self.j3d256.is_empty()
    }

    pub fn in_range(&self) -> bool {
        self.j3d256
            .iter()
            .all(|c| c.iter().all(|v| (0.0..=CODE_MAX).contains(v)))
    }
}

/// Maps camera-space joint depths to depth codes. The root is encoded
/// absolutely against the 8 m sensor range; every other joint as a clamped
/// offset from the root within +-2 m.
pub fn normalize_depth(depths_mm: &[f64], root_index: usize) -> Result<Vec<f64>> {
    let root = *depths_mm.get(root_index).ok_or(Error::Dimension {
        expected: root_index + 1,
        got: depths_mm.len(),
        context: "joint depths",
    })?;
    if root <= 0.0 {
        return Err(Error::NonPositiveDepth(root));
    }
    Ok(depths_mm
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if i == root_index {
                z.min(MAX_DEPTH_MM) / MAX_DEPTH_MM * CODE_MAX
            } else {
                ((z - root) / DEPTH_OFFSET_RANGE_MM).clamp(-1.0, 1.0) * CODE_MID + CODE_MID
            }
        })
        .collect())
}

/// Inverse of [`normalize_depth`] on unclamped inputs.
pub fn denormalize_depth(codes: &[f64], root_index: usize) -> Result<Vec<f64>> {
    let root_code = *codes.get(root_index).ok_or(Error::Dimension {
        expected: root_index + 1,
        got: codes.len(),
        context: "depth codes",
    })?;
    let root = root_code / CODE_MAX * MAX_DEPTH_MM;
    Ok(codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i == root_index {
                root
            } else {
                root + (c - CODE_MID) / CODE_MID * DEPTH_OFFSET_RANGE_MM
            }
        })
        .collect())
}

/// Network-space joints for camera-space positions seen through `crop`.
pub fn normalize_joints(
    joints_cam: &[Vector3<f64>],
    camera: &CameraModel,
    crop: &CropTransform,
    root_index: usize,
) -> Result<NormalizedJoints> {
    let depths: Vec<f64> = joints_cam.iter().map(|p| p.z).collect();
    let codes = normalize_depth(&depths, root_index)?;
    let j3d256 = joints_cam
        .iter()
        .zip(&codes)
        .map(|(p, &z)| {
            let q = crop.apply(&camera.project_point(p)?);
            Ok([q.x, q.y, z])
        })
        .collect::<Result<_>>()?;
    Ok(NormalizedJoints { j3d256, root_index })
}

/// Left-right flip of network-space joints with identities exchanged
/// through the skeleton's pair table.
pub fn mirror_normalized(joints: &NormalizedJoints, skeleton: &Skeleton) -> NormalizedJoints {
    let edge = (NETWORK_SIDE - 1) as f64;
    let j3d256 = (0..joints.len())
        .map(|j| {
            let [x, y, z] = joints.j3d256[skeleton.mirror_index(j)];
            [edge - x, y, z]
        })
        .collect();
    NormalizedJoints {
        j3d256,
        root_index: joints.root_index,
    }
}

/// Heatmap plane kinds, in storage order within a joint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlaneKind {
    /// Columns `x`, rows `y`.
    Xy = 0,
    /// Columns `y`, rows `z`.
    Yz = 1,
    /// Columns `x`, rows `z`.
    Xz = 2,
}

impl PlaneKind {
    pub const ALL: [PlaneKind; 3] = [PlaneKind::Xy, PlaneKind::Yz, PlaneKind::Xz];

    /// Coordinate axes `(column, row)` this plane spans (0 = x, 1 = y, 2 = z).
    pub fn axes(self) -> (usize, usize) {
        match self {
            PlaneKind::Xy => (0, 1),
            PlaneKind::Yz => (1, 2),
            PlaneKind::Xz => (0, 2),
        }
    }
}

/// `3 * joints` planes of `64 x 64` scores. Plane `3j + k` belongs to joint
/// `j` and kind `PlaneKind::ALL[k]`; each plane is row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub joint_count: usize,
    pub side: usize,
    pub data: Vec<f32>,
}

impl HeatmapStack {
    pub fn zeros(joint_count: usize) -> Self {
        HeatmapStack {
            joint_count,
            side: PLANE_SIDE,
            data: vec![0.0; joint_count * 3 * PLANE_SIDE * PLANE_SIDE],
        }
    }

    pub fn plane_count(&self) -> usize {
        self.joint_count * 3
    }

    pub fn plane_index(joint: usize, kind: PlaneKind) -> usize {
        3 * joint + kind as usize
    }

    pub fn plane(&self, joint: usize, kind: PlaneKind) -> &[f32] {
        let n = self.side * self.side;
        let i = Self::plane_index(joint, kind);
        &self.data[i * n..(i + 1) * n]
    }

    pub fn plane_mut(&mut self, joint: usize, kind: PlaneKind) -> &mut [f32] {
        let n = self.side * self.side;
        let i = Self::plane_index(joint, kind);
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Binary layout: 16-byte header (`b"QHM1"`, joint count, plane side,
    /// planes per joint; all `u32` little-endian) followed by the planes as
    /// little-endian `f32` in storage order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.joint_count as u32).to_le_bytes())?;
        w.write_all(&(self.side as u32).to_le_bytes())?;
        w.write_all(&3u32.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let bad = |d: &str| Error::Format {
            path: "<heatmap stream>".into(),
            detail: d.into(),
        };
        if &header[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (joint_count, side, per_joint) = (word(4), word(8), word(12));
        if per_joint != 3 {
            return Err(bad("expected 3 planes per joint"));
        }
        let mut bytes = vec![0u8; joint_count * 3 * side * side * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(HeatmapStack {
            joint_count,
            side,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?)).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path, detail),
            other => other,
        })
    }
}

/// Heatmap grid cell (0-based) of a 256-space coordinate. The 1-based
/// `J_3D64` value is this plus one.
pub fn grid_cell(coord256: f64) -> usize {
    ((coord256 / 4.0).floor().max(0.0) as usize).min(PLANE_SIDE - 1)
}

/// 256-space coordinate represented by a (possibly fractional) 0-based grid
/// position: the midpoint of the 4-pixel bin.
pub fn grid_to_256(cell: f64) -> f64 {
    cell * 4.0 + 2.0
}

fn splat(plane: &mut [f32], side: usize, col: usize, row: usize) {
    // sigma = 1 px; contributions beyond 5 sigma are dropped.
    let r = 5i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let (c, rr) = (col as i64 + dx, row as i64 + dy);
            if c < 0 || rr < 0 || c >= side as i64 || rr >= side as i64 {
                continue;
            }
            let g = (-((dx * dx + dy * dy) as f64) / 2.0).exp() as f32;
            plane[rr as usize * side + c as usize] += g;
        }
    }
}

/// Renders unit-sigma Gaussians at each joint's grid cell on its three
/// planes. Members of a symmetric pair share bimodal planes holding both
/// joints' peaks, rescaled so the highest score is 1.
pub fn encode_heatmaps(joints: &NormalizedJoints, skeleton: &Skeleton) -> Result<HeatmapStack> {
    if joints.len() != skeleton.len() {
        return Err(Error::Dimension {
            expected: skeleton.len(),
            got: joints.len(),
            context: "normalized joints",
        });
    }
    if !joints.in_range() {
        return Err(Error::InvalidArgument("normalized joints outside [0, 255]".into()));
    }
    let mut stack = HeatmapStack::zeros(skeleton.len());
    let side = stack.side;
    let cells: Vec<[usize; 3]> = joints
        .j3d256
        .iter()
        .map(|c| [grid_cell(c[0]), grid_cell(c[1]), grid_cell(c[2])])
        .collect();
    for j in 0..skeleton.len() {
        let sources: &[usize] = &match skeleton.joint(j).symmetric_pair {
            Some(p) => vec![j, p],
            None => vec![j],
        };
        for kind in PlaneKind::ALL {
            let (a, b) = kind.axes();
            let plane = stack.plane_mut(j, kind);
            for &s in sources {
                splat(plane, side, cells[s][a], cells[s][b]);
            }
            let peak = plane.iter().cloned().fold(0.0f32, f32::max);
            if peak > 0.0 {
                plane.iter_mut().for_each(|v| *v /= peak);
            }
        }
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn depth_code_examples() {
        let codes = normalize_depth(&[8000.0, 8000.0, 9000.0], 0).unwrap();
        assert_eq!(codes[0], 255.0);
        assert_eq!(codes[1], 127.5);
        assert_eq!(codes[2], 191.25);
        let back = denormalize_depth(&codes, 0).unwrap();
        assert_eq!(back, vec![8000.0, 8000.0, 9000.0]);
    }

    #[test]
    fn depth_codes_clamp() {
        let codes = normalize_depth(&[9000.0, 12000.0, 5000.0], 0).unwrap();
        assert_eq!(codes, vec![255.0, 255.0, 0.0]);
        assert!(matches!(
            normalize_depth(&[0.0, 1.0], 0),
            Err(Error::NonPositiveDepth(_))
        ));
        // Root not at index 0.
        let codes = normalize_depth(&[3000.0, 2000.0], 1).unwrap();
        assert_eq!(codes, vec![191.25, 63.75]);
    }

    #[test]
    fn grid_cell_matches_floor_plus_one() {
        // J_3D64 = floor(J_3D256 / 4) + 1
        let cells: Vec<usize> = [100.0, 60.0, 200.0].iter().map(|&c| grid_cell(c) + 1).collect();
        assert_eq!(cells, vec![26, 16, 51]);
        assert_eq!(grid_cell(255.0), 63);
        assert_eq!(grid_cell(0.0), 0);
    }

    #[test]
    fn unpaired_joint_plane_is_unimodal_at_its_cell() {
        let skel = Skeleton::dog();
        let joints = NormalizedJoints {
            j3d256: vec![[100.0, 60.0, 200.0]; skel.len()],
            root_index: 0,
        };
        let stack = encode_heatmaps(&joints, &skel).unwrap();
        assert_eq!(stack.plane_count(), 129);
        let tail = skel.index_of("tail3").unwrap();
        for kind in PlaneKind::ALL {
            let peaks = plane_peaks(stack.plane(tail, kind), stack.side, 4);
            assert_eq!(peaks.len(), 1);
            let (a, b) = kind.axes();
            let want = [25, 15, 50];
            assert_eq!((peaks[0].col, peaks[0].row), (want[a], want[b]));
            assert_eq!(peaks[0].score, 1.0);
        }
    }

    #[test]
    fn paired_joints_share_bimodal_planes() {
        let skel = Skeleton::dog();
        let mut coords = vec![[128.0, 128.0, 128.0]; skel.len()];
        let l = skel.index_of("l_paw").unwrap();
        let r = skel.index_of("r_paw").unwrap();
        coords[l] = [40.0, 200.0, 100.0];
        coords[r] = [180.0, 210.0, 140.0];
        let stack = encode_heatmaps(
            &NormalizedJoints {
                j3d256: coords,
                root_index: 0,
            },
            &skel,
        )
        .unwrap();
        for j in [l, r] {
            let peaks = plane_peaks(stack.plane(j, PlaneKind::Xy), stack.side, 4);
            assert_eq!(peaks.len(), 2, "joint {j}");
            let mut cells: Vec<_> = peaks.iter().map(|p| (p.col, p.row)).collect();
            cells.sort();
            assert_eq!(cells, vec![(10, 50), (45, 52)]);
        }
        assert_eq!(stack.plane(l, PlaneKind::Yz), stack.plane(r, PlaneKind::Yz));
        let max = stack.data.iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn stack_binary_layout() {
        let skel = Skeleton::dog();
        let joints = NormalizedJoints {
            j3d256: vec![[10.0, 20.0, 30.0]; skel.len()],
            root_index: 0,
        };
        let stack = encode_heatmaps(&joints, &skel).unwrap();
        let mut buf = Vec::new();
        stack.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 129 * 64 * 64 * 4);
        assert_eq!(&buf[..4], b"QHM1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 43);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 64);
        // First plane is joint 0 xy; its peak sits at row 5, col 2.
        let at = 16 + 4 * (5 * 64 + 2);
        assert_eq!(f32::from_le_bytes(buf[at..at + 4].try_into().unwrap()), 1.0);
        assert_eq!(HeatmapStack::read_from(&buf[..]).unwrap(), stack);
        assert!(HeatmapStack::read_from(&b"NOPE0000000000000000"[..]).is_err());
    }

    proptest! {
        #[test]
        fn depth_normalization_inverts(root in 1.0..8000.0f64, offsets in proptest::collection::vec(-2000.0..2000.0f64, 1..10)) {
            let mut depths = vec![root];
            depths.extend(offsets.iter().map(|o| root + o));
            let back = denormalize_depth(&normalize_depth(&depths, 0).unwrap(), 0).unwrap();
            for (a, b) in depths.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
