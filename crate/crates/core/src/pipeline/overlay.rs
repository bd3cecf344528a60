use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use crate::camera::DepthImage;
use crate::error::Result;
use crate::skeleton::Skeleton;

/// Side of the body a joint sits on, from its rest position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Centre,
}

impl Side {
    pub fn of(skeleton: &Skeleton) -> Vec<Side> {
        skeleton
            .rest_positions()
            .iter()
            .map(|p| {
                if p.x > 1e-6 {
                    Side::Left
                } else if p.x < -1e-6 {
                    Side::Right
                } else {
                    Side::Centre
                }
            })
            .collect()
    }

    pub fn colour(self) -> [u8; 3] {
        match self {
            Side::Left => [255, 60, 40],
            Side::Right => [40, 120, 255],
            Side::Centre => [60, 220, 60],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    fn put(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (x, y) = (x.round(), y.round());
        if x >= 0.0 && y >= 0.0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = y as usize * self.width + x as usize;
            self.data[i] = c;
        }
    }

    fn line(&mut self, a: &Vector2<f64>, b: &Vector2<f64>, c: [u8; 3]) {
        let steps = (b - a).abs().max().ceil().max(1.0) as usize;
        for s in 0..=steps {
            let p = a + (b - a) * (s as f64 / steps as f64);
            self.put(p.x, p.y, c);
        }
    }
}

/// Depth as grey (near = bright) with the skeleton drawn on top: bones in
/// the colour of their child joint's side and a 3x3 dot per joint. Joints
/// given as `None` are left out together with their bones.
pub fn render_overlay(depth: &DepthImage, joints2d: &[Option<Vector2<f64>>], skeleton: &Skeleton) -> RgbImage {
    let d = &depth.depth;
    let valid = d.data.iter().copied().filter(|&v| v > 0.0);
    let (lo, hi) = valid.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1.0);
    let data = d
        .data
        .iter()
        .map(|&v| {
            if v > 0.0 {
                let g = (230.0 - 180.0 * (v - lo) / span) as u8;
                [g, g, g]
            } else {
                [0, 0, 0]
            }
        })
        .collect();
    let mut img = RgbImage {
        width: d.width,
        height: d.height,
        data,
    };
    let sides = Side::of(skeleton);
    for j in 1..skeleton.len().min(joints2d.len()) {
        let Some(parent) = skeleton.parent(j) else { continue };
        if let (Some(a), Some(b)) = (joints2d[parent], joints2d[j]) {
            img.line(&a, &b, sides[j].colour());
        }
    }
    for (j, p) in joints2d.iter().enumerate() {
        let Some(p) = p else { continue };
        for dy in -1..=1 {
            for dx in -1..=1 {
                img.put(p.x + dx as f64, p.y + dy as f64, sides[j].colour());
            }
        }
    }
    img
}

/// Binary PPM (P6).
pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + image.data.len() * 3);
    write!(buf, "P6\n{} {}\n255\n", image.width, image.height)?;
    for px in &image.data {
        buf.extend_from_slice(px);
    }
    fs::write(path, buf)?;
    Ok(())
}
