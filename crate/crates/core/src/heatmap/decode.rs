use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{denormalize_depth, grid_to_256, CropTransform, HeatmapStack, PlaneKind};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;

/// XY distance (64-grid cells) under which two members of a symmetric pair
/// are considered to have been predicted at the same place.
pub const PAIR_COLLISION_PX: f64 = 2.0;
/// Non-maximum suppression radius (64-grid cells) separating heatmap modes.
pub const PEAK_NMS_RADIUS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub col: usize,
    pub row: usize,
    pub score: f32,
}

/// Local maxima of a plane in descending score order (ties: lowest cell
/// index first), thinned by non-maximum suppression. At most `max` peaks.
pub fn plane_peaks(plane: &[f32], side: usize, max: usize) -> Vec<Peak> {
    let at = |c: i64, r: i64| {
        if c < 0 || r < 0 || c >= side as i64 || r >= side as i64 {
            f32::NEG_INFINITY
        } else {
            plane[r as usize * side + c as usize]
        }
    };
    let mut candidates: Vec<Peak> = Vec::new();
    for row in 0..side {
        for col in 0..side {
            let v = plane[row * side + col];
            if v <= 0.0 {
                continue;
            }
            let (c, r) = (col as i64, row as i64);
            let is_max = (-1..=1)
                .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                .filter(|&d| d != (0, 0))
                .all(|(dx, dy)| at(c + dx, r + dy) <= v);
            if is_max {
                candidates.push(Peak { col, row, score: v });
            }
        }
    }
    // Stable sort keeps row-major order among equal scores.
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Peak> = Vec::new();
    for p in candidates {
        let near = kept.iter().any(|k| {
            let (dx, dy) = (k.col as f64 - p.col as f64, k.row as f64 - p.row as f64);
            (dx * dx + dy * dy).sqrt() <= PEAK_NMS_RADIUS
        });
        if !near {
            kept.push(p);
            if kept.len() == max {
                break;
            }
        }
    }
    kept
}

/// Quarter-cell shift along one plane axis towards the larger neighbour.
fn quarter_offset(plane: &[f32], side: usize, col: usize, row: usize, along_col: bool) -> f64 {
    let (lo, hi) = if along_col {
        if col == 0 || col + 1 >= side {
            return 0.0;
        }
        (plane[row * side + col - 1], plane[row * side + col + 1])
    } else {
        if row == 0 || row + 1 >= side {
            return 0.0;
        }
        (plane[(row - 1) * side + col], plane[(row + 1) * side + col])
    };
    if hi > lo {
        0.25
    } else if lo > hi {
        -0.25
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    /// 0-based fractional grid position per axis.
    grid: [f64; 3],
    confidence: f64,
}

/// Decodes the `mode`-th most likely location of `joint` from its three
/// planes. `None` when fewer than two planes carry signal or the requested
/// mode does not exist.
fn decode_mode(stack: &HeatmapStack, joint: usize, mode: usize) -> Option<Candidate> {
    let side = stack.side;
    let planes: Vec<(PlaneKind, &[f32], Option<Peak>)> = PlaneKind::ALL
        .iter()
        .map(|&k| {
            let plane = stack.plane(joint, k);
            let peak = plane_peaks(plane, side, mode + 1).get(mode).copied();
            (k, plane, peak)
        })
        .collect();
    let non_zero = PlaneKind::ALL
        .iter()
        .filter(|&&k| stack.plane(joint, k).iter().any(|&v| v > 0.0))
        .count();
    if non_zero < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..3).collect();
    let score = |i: usize| planes[i].2.map_or(-1.0, |p| p.score);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));

    let (kind1, plane1, peak1) = planes[order[0]];
    let peak1 = peak1?;
    let (a, b) = kind1.axes();
    let mut grid = [0.0; 3];
    grid[a] = peak1.col as f64 + quarter_offset(plane1, side, peak1.col, peak1.row, true);
    grid[b] = peak1.row as f64 + quarter_offset(plane1, side, peak1.col, peak1.row, false);
    let cells = {
        let mut c = [0usize; 3];
        c[a] = peak1.col;
        c[b] = peak1.row;
        c
    };

    // Remaining coordinate from the second-strongest plane, read along the
    // line through the coordinate it shares with the strongest plane.
    let third = 3 - a - b;
    let (kind2, plane2, _) = planes[order[1]];
    let (c2, r2) = kind2.axes();
    let shared = if c2 == third { r2 } else { c2 };
    let third_on_cols = c2 == third;
    let centre = cells[shared] as i64;
    let line_max = |line: i64| -> Option<(usize, usize, f32)> {
        if line < 0 || line >= side as i64 {
            return None;
        }
        let mut best: Option<(usize, usize, f32)> = None;
        for t in 0..side {
            let (col, row) = if third_on_cols {
                (t, line as usize)
            } else {
                (line as usize, t)
            };
            let v = plane2[row * side + col];
            if best.is_none_or(|(_, _, s)| v > s) {
                best = Some((col, row, v));
            }
        }
        best
    };
    // The exact shared line, falling back to its neighbours when it is empty.
    let best = [centre, centre - 1, centre + 1]
        .into_iter()
        .filter_map(line_max)
        .find(|&(_, _, s)| s > 0.0)
        .or_else(|| line_max(centre));
    let (col, row, _) = best?;
    let (cell, off) = if third_on_cols {
        (col, quarter_offset(plane2, side, col, row, true))
    } else {
        (row, quarter_offset(plane2, side, col, row, false))
    };
    grid[third] = cell as f64 + off;
    Some(Candidate {
        grid,
        confidence: peak1.score as f64,
    })
}

/// Joint predictions recovered from a heatmap stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedJoints {
    /// 1-based 64-grid coordinates including the quarter-cell offset.
    pub j3d64: Vec<[f64; 3]>,
    /// Network-space coordinates (`x`, `y` pixels, `z` depth code).
    pub j3d256: Vec<[f64; 3]>,
    /// Pixel coordinates in the full image.
    pub j2d_full: Vec<Vector2<f64>>,
    /// Camera-space positions, mm.
    pub j3d_cam: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
    /// `false` for joints the stack carries no usable signal for.
    pub predicted: Vec<bool>,
}

/// Regresses 2D and 3D joints from a heatmap stack.
///
/// Unimodal joints take two coordinates from their strongest plane and the
/// third from the next strongest. Members of a symmetric pair are decoded
/// from their strongest mode; if both land within [`PAIR_COLLISION_PX`] in
/// XY, the more confident keeps the location and the other moves to its
/// next mode. Grid positions are shifted a quarter cell towards the larger
/// neighbour, mapped to 256 space, through the inverse crop to full-image
/// pixels, and back-projected with the denormalized depth.
pub fn decode_heatmaps(
    stack: &HeatmapStack,
    skeleton: &Skeleton,
    crop: &CropTransform,
    camera: &CameraModel,
) -> Result<DecodedJoints> {
    let n = skeleton.len();
    if stack.joint_count != n {
        return Err(Error::Dimension {
            expected: n,
            got: stack.joint_count,
            context: "heatmap joint count",
        });
    }
    let mut cands: Vec<Option<Candidate>> = (0..n).map(|j| decode_mode(stack, j, 0)).collect();
    for j in 0..n {
        let Some(p) = skeleton.joint(j).symmetric_pair else {
            continue;
        };
        if p < j {
            continue;
        }
        let (Some(a), Some(b)) = (cands[j], cands[p]) else {
            continue;
        };
        let d = ((a.grid[0] - b.grid[0]).powi(2) + (a.grid[1] - b.grid[1]).powi(2)).sqrt();
        if d <= PAIR_COLLISION_PX {
            let loser = if b.confidence > a.confidence { j } else { p };
            if let Some(next) = decode_mode(stack, loser, 1) {
                cands[loser] = Some(next);
            }
        }
    }

    let root = 0;
    let mut out = DecodedJoints {
        j3d64: vec![[0.0; 3]; n],
        j3d256: vec![[0.0; 3]; n],
        j2d_full: vec![Vector2::zeros(); n],
        j3d_cam: vec![Vector3::zeros(); n],
        confidence: vec![0.0; n],
        predicted: vec![false; n],
    };
    if cands[root].is_none() {
        return Ok(out);
    }
    let codes: Vec<f64> = cands
        .iter()
        .map(|c| c.map_or(super::CODE_MID, |c| grid_to_256(c.grid[2])))
        .collect();
    let depths = denormalize_depth(&codes, root)?;
    for (j, cand) in cands.iter().enumerate() {
        let Some(c) = cand else { continue };
        let j256 = [grid_to_256(c.grid[0]), grid_to_256(c.grid[1]), grid_to_256(c.grid[2])];
        let full = crop.invert(&Vector2::new(j256[0], j256[1]));
        let Ok(cam) = camera.backproject(&full, depths[j]) else {
            continue;
        };
        out.j3d64[j] = [c.grid[0] + 1.0, c.grid[1] + 1.0, c.grid[2] + 1.0];
        out.j3d256[j] = j256;
        out.j2d_full[j] = full;
        out.j3d_cam[j] = cam;
        out.confidence[j] = c.confidence;
        out.predicted[j] = true;
    }
    Ok(out)
}
