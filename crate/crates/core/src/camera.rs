//! Pinhole camera, projection, and depth raster handling.
//!
//! Camera space looks down `+z` with `x` to the right and `y` down the image.
//! Extrinsics map world points into camera space.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest range a Kinect v2 reports, in mm.
pub const MAX_DEPTH_MM: f64 = 8000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World to camera.
    pub extrinsic: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic: Isometry3::identity(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_extrinsic(mut self, extrinsic: Isometry3<f64>) -> Self {
        self.extrinsic = extrinsic;
        self
    }

    /// A camera at `eye` looking at `target`, with image-up roughly along
    /// world `up`.
    pub fn look_at(self, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        // Image y points down.
        let down = forward.cross(&right);
        let rot = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(rot));
        let translation = -(rotation * eye);
        self.with_extrinsic(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive: {} {}",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Camera(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.extrinsic * Point3::from(*p)).coords
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.extrinsic.inverse() * Point3::from(*p)).coords
    }

    /// `u = fx x / z + cx`, `v = fy y / z + cy`.
    pub fn project_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Projects camera-space points; points at or behind the camera yield
    /// `None`.
    pub fn project(&self, points: &[Vector3<f64>]) -> Vec<Option<Vector2<f64>>> {
        points.iter().map(|p| self.project_point(p).ok()).collect()
    }

    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if depth <= 0.0 {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            (pixel.x - self.cx) * depth / self.fx,
            (pixel.y - self.cy) * depth / self.fy,
            depth,
        ))
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    extrinsic: ExtrinsicFile,
}

/// Rotation `[x, y, z, w]` and translation in mm, world to camera.
#[derive(Serialize, Deserialize)]
struct ExtrinsicFile {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        let r = f.extrinsic.rotation;
        let cam = CameraModel {
            fx: f.fx,
            fy: f.fy,
            cx: f.cx,
            cy: f.cy,
            width: f.width,
            height: f.height,
            extrinsic: Isometry3::from_parts(
                Translation3::from(Vector3::from(f.extrinsic.translation)),
                UnitQuaternion::from_quaternion(Quaternion::new(r[3], r[0], r[1], r[2])),
            ),
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        let q = c.extrinsic.rotation;
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            extrinsic: ExtrinsicFile {
                rotation: [q.i, q.j, q.k, q.w],
                translation: c.extrinsic.translation.vector.into(),
            },
        }
    }
}

/// Row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T: Copy> Raster<T> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub type Mask = Raster<bool>;

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Inclusive `(x_min, y_min, x_max, y_max)` of set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }
}

/// Depth raster in mm (0 = no return) with the camera that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub depth: Raster<f32>,
    pub camera: CameraModel,
}

impl DepthImage {
    pub fn new(depth: Raster<f32>, camera: CameraModel) -> Result<Self> {
        if depth.width != camera.width || depth.height != camera.height {
            return Err(Error::Dimension {
                expected: camera.width * camera.height,
                got: depth.width * depth.height,
                context: "depth raster vs camera image size",
            });
        }
        Ok(DepthImage { depth, camera })
    }

    pub fn empty(camera: CameraModel) -> Self {
        DepthImage {
            depth: Raster::filled(camera.width, camera.height, 0.0),
            camera,
        }
    }

    pub fn valid_mask(&self) -> Mask {
        Raster {
            width: self.depth.width,
            height: self.depth.height,
            data: self.depth.data.iter().map(|&d| d > 0.0).collect(),
        }
    }
}

/// Points back-projected from a depth image, with the pixel each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub pixels: Vec<(usize, usize)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One camera-space point per masked pixel with a valid depth, sampled at the
/// pixel center.
pub fn depth_to_pointcloud(image: &DepthImage, mask: &Mask) -> Result<PointCloud> {
    if !image.depth.same_shape(mask) {
        return Err(Error::Dimension {
            expected: image.depth.data.len(),
            got: mask.data.len(),
            context: "mask vs depth raster",
        });
    }
    let mut cloud = PointCloud::default();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let d = image.depth.get(x, y) as f64;
            if mask.get(x, y) && d > 0.0 {
                let p = image.camera.backproject(&Vector2::new(x as f64, y as f64), d)?;
                cloud.points.push(p);
                cloud.pixels.push((x, y));
            }
        }
    }
    Ok(cloud)
}

/// Writes a depth raster as a 16-bit `P5` PGM, millimetres rounded to the
/// nearest integer, samples stored little-endian.
pub fn write_depth_pgm(path: impl AsRef<Path>, depth: &Raster<f32>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", depth.width, depth.height)?;
    for &d in &depth.data {
        let v = d.round().clamp(0.0, 65535.0) as u16;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (header, body) = split_pnm_header(&bytes, 4).ok_or_else(|| Error::format(path, "bad PGM header"))?;
    if header[0] != "P5" || header[3] != "65535" {
        return Err(Error::format(path, "expected 16-bit P5 PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::format(path, e.to_string()));
    let (width, height) = (parse(&header[1])?, parse(&header[2])?);
    if body.len() < width * height * 2 {
        return Err(Error::format(path, "truncated PGM body"));
    }
    let data = body
        .chunks_exact(2)
        .take(width * height)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
        .collect();
    Ok(Raster { width, height, data })
}

/// Writes a mask as an 8-bit `P5` PGM (255 = set).
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let body: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    out.write_all(&body)?;
    out.flush()?;
    Ok(())
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (header, body) = split_pnm_header(&bytes, 4).ok_or_else(|| Error::format(path, "bad PGM header"))?;
    if header[0] != "P5" || header[3] != "255" {
        return Err(Error::format(path, "expected 8-bit P5 PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::format(path, e.to_string()));
    let (width, height) = (parse(&header[1])?, parse(&header[2])?);
    if body.len() < width * height {
        return Err(Error::format(path, "truncated PGM body"));
    }
    Ok(Raster {
        width,
        height,
        data: body[..width * height].iter().map(|&b| b > 0).collect(),
    })
}

/// Splits a binary PNM file into `fields` whitespace-separated header tokens
/// and the body following the single whitespace byte after the last token.
fn split_pnm_header(bytes: &[u8], fields: usize) -> Option<(Vec<String>, &[u8])> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < fields {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Some((tokens, bytes.get(i + 1..)?))
}
