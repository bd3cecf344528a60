use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::{DepthImage, Mask, Raster};
use crate::error::{Error, Result};

/// Side of the network input raster.
pub const NETWORK_SIDE: usize = 256;
/// Side of the intermediate padded raster before the final rescale.
pub const PADDED_SIDE: usize = 293;

/// Padding applied while cropping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PadRecord {
    /// Inclusive mask bounding box `(x0, y0, x1, y1)` in the source image.
    pub bbox: [usize; 4],
    /// Side of the squared crop, in source pixels.
    pub square_side: f64,
    /// Rows/columns added on each side to square the crop, in source pixels.
    pub square_pad: [f64; 2],
    /// Border added on each side of the 256 raster before rescaling from 293.
    pub margin: f64,
}

/// Similarity map from full-image pixel coordinates to network-input pixel
/// coordinates: `p_out = scale * p_in + translation` (pixel centers at
/// integers in both spaces).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale: f64,
    pub translation: [f64; 2],
    pub pad: PadRecord,
}

impl CropTransform {
    /// Builds the composed transform for a mask bounding box.
    pub fn from_bbox(bbox: (usize, usize, usize, usize)) -> Self {
        let (x0, y0, x1, y1) = bbox;
        let w = (x1 - x0 + 1) as f64;
        let h = (y1 - y0 + 1) as f64;
        let side = w.max(h);
        let pad = [(side - w) / 2.0, (side - h) / 2.0];
        let margin = (PADDED_SIDE - NETWORK_SIDE) as f64 / 2.0;
        let to_256 = NETWORK_SIDE as f64 / side;
        let from_293 = NETWORK_SIDE as f64 / PADDED_SIDE as f64;
        let scale = to_256 * from_293;
        // Edge coordinates: e_out = from_293 * (to_256 * (e_in - origin) + margin),
        // with e = p + 0.5 in both spaces.
        let origin = [x0 as f64 - pad[0], y0 as f64 - pad[1]];
        let translation = [
            scale * (0.5 - origin[0]) + from_293 * margin - 0.5,
            scale * (0.5 - origin[1]) + from_293 * margin - 0.5,
        ];
        CropTransform {
            scale,
            translation,
            pad: PadRecord {
                bbox: [x0, y0, x1, y1],
                square_side: side,
                square_pad: pad,
                margin,
            },
        }
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        p * self.scale + Vector2::from(self.translation)
    }

    pub fn invert(&self, p: &Vector2<f64>) -> Vector2<f64> {
        (p - Vector2::from(self.translation)) / self.scale
    }
}

/// Masks, crops, squares and rescales a depth image into the 256x256 network
/// raster (nearest-neighbour resampling, depths in mm, 0 outside the mask).
pub fn crop_for_network(image: &DepthImage, mask: &Mask) -> Result<(Raster<f32>, CropTransform)> {
    if !image.depth.same_shape(mask) {
        return Err(Error::Dimension {
            expected: image.depth.data.len(),
            got: mask.data.len(),
            context: "mask vs depth raster",
        });
    }
    let bbox = mask.bounding_box().ok_or(Error::Empty("mask"))?;
    let crop = CropTransform::from_bbox(bbox);
    let (x0, y0, x1, y1) = bbox;
    let mut out = Raster::filled(NETWORK_SIDE, NETWORK_SIDE, 0.0f32);
    for v in 0..NETWORK_SIDE {
        for u in 0..NETWORK_SIDE {
            let src = crop.invert(&Vector2::new(u as f64, v as f64));
            let (sx, sy) = (src.x.round(), src.y.round());
            if sx < x0 as f64 || sy < y0 as f64 || sx > x1 as f64 || sy > y1 as f64 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            if mask.get(sx, sy) {
                out.set(u, v, image.depth.get(sx, sy));
            }
        }
    }
    Ok((out, crop))
}

/// Greyscale network input: valid depths rescaled linearly onto `[0, 1]`
/// over their own range (nearest = 1), background 0.
pub fn network_input(cropped: &Raster<f32>) -> Raster<f32> {
    let valid = cropped.data.iter().copied().filter(|&d| d > 0.0);
    let (lo, hi) = valid.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let span = (hi - lo).max(f32::EPSILON);
    Raster {
        width: cropped.width,
        height: cropped.height,
        data: cropped
            .data
            .iter()
            .map(|&d| if d > 0.0 { 1.0 - (d - lo) / span } else { 0.0 })
            .collect(),
    }
}
