use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, DepthImage, Mask, Raster};
use crate::error::{Error, Result};

/// Triangles with a vertex closer than this (mm) are not drawn.
const NEAR_MM: f64 = 1.0;

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Z-buffer rasterization of world-space triangles. Pixel centres sit at
/// integer coordinates; depth is camera-space `z` in mm, interpolated
/// perspective-correctly.
pub fn rasterize_depth(
    vertices: &[Vector3<f64>],
    triangles: &[[usize; 3]],
    camera: &CameraModel,
) -> Result<(DepthImage, Mask)> {
    camera.validate()?;
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
        return Err(Error::Mesh(format!(
            "triangle {t:?} indexes past {} vertices",
            vertices.len()
        )));
    }
    let (w, h) = (camera.width, camera.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let cam: Vec<Vector3<f64>> = vertices.iter().map(|v| camera.world_to_camera(v)).collect();
    for t in triangles {
        let p = t.map(|i| cam[i]);
        if p.iter().any(|v| v.z < NEAR_MM) {
            continue;
        }
        let s = p.map(|v| Vector2::new(camera.fx * v.x / v.z + camera.cx, camera.fy * v.y / v.z + camera.cy));
        let area = edge(&s[0], &s[1], &s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = s.iter().map(|v| v.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let x1 = s
            .iter()
            .map(|v| v.x)
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(w as f64 - 1.0);
        let y0 = s.iter().map(|v| v.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let y1 = s
            .iter()
            .map(|v| v.y)
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_z = p.map(|v| 1.0 / v.z);
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let q = Vector2::new(x as f64, y as f64);
                let b0 = edge(&s[1], &s[2], &q) / area;
                let b1 = edge(&s[2], &s[0], &q) / area;
                let b2 = 1.0 - b0 - b1;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                let cell = &mut zbuf[y * w + x];
                if z < *cell {
                    *cell = z;
                }
            }
        }
    }
    let depth = Raster {
        width: w,
        height: h,
        data: zbuf
            .iter()
            .map(|&z| if z.is_finite() { z as f32 } else { 0.0 })
            .collect(),
    };
    let image = DepthImage::new(depth, camera.clone())?;
    let mask = image.valid_mask();
    Ok((image, mask))
}

/// Additive Gaussian noise then quantization to multiples of `step_mm`;
/// pixels without a return stay zero. Zero sigma or step skips that part.
pub fn apply_noise(image: &DepthImage, sigma_mm: f64, step_mm: f64, seed: u64) -> Result<DepthImage> {
    if !(sigma_mm >= 0.0) || !(step_mm >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma {sigma_mm} and step {step_mm} must be non-negative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_mm.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut out = image.clone();
    for d in out.depth.data.iter_mut().filter(|d| **d > 0.0) {
        let mut v = *d as f64;
        if sigma_mm > 0.0 {
            v += normal.sample(&mut rng);
        }
        if step_mm > 0.0 {
            v = (v / step_mm).round() * step_mm;
            v = v.max(step_mm);
        }
        *d = v.max(f64::from(f32::MIN_POSITIVE)) as f32;
    }
    Ok(out)
}

/// Square zeroed by [`occlude`], in pixels of the raster it was applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl Occlusion {
    /// Whether a pixel coordinate (centres at integers) falls in the square.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let (x0, y0) = (self.x as f64 - 0.5, self.y as f64 - 0.5);
        let s = self.side as f64;
        p.x >= x0 && p.y >= y0 && p.x < x0 + s && p.y < y0 + s
    }
}

/// Zeroes a randomly placed `side x side` square of a raster.
pub fn occlude_raster(raster: &Raster<f32>, side: usize, seed: u64) -> Result<(Raster<f32>, Occlusion)> {
    if side == 0 || side > raster.width || side > raster.height {
        return Err(Error::InvalidArgument(format!(
            "occluder of {side} px does not fit a {}x{} raster",
            raster.width, raster.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occ = Occlusion {
        x: rng.random_range(0..=raster.width - side),
        y: rng.random_range(0..=raster.height - side),
        side,
    };
    let mut out = raster.clone();
    for y in occ.y..occ.y + side {
        for x in occ.x..occ.x + side {
            out.set(x, y, 0.0);
        }
    }
    Ok((out, occ))
}

pub fn occlude(image: &DepthImage, side: usize, seed: u64) -> Result<(DepthImage, Occlusion)> {
    let (depth, occ) = occlude_raster(&image.depth, side, seed)?;
    Ok((
        DepthImage {
            depth,
            camera: image.camera.clone(),
        },
        occ,
    ))
}
