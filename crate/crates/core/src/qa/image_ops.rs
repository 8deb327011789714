//! Plane-level helpers shared by the QA stages: luma, Gaussian blur, region
//! rasterization and region means.

use crate::error::{Error, Result};
use crate::qa::RegionMask;
use crate::texture::Texture;

/// Single-channel f64 image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// BT.601 full-range luma.
#[inline]
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

/// Luma scaled by 1000 as an exact integer.
#[inline]
pub(crate) fn luma_milli(rgb: [u8; 3]) -> u64 {
    299 * rgb[0] as u64 + 587 * rgb[1] as u64 + 114 * rgb[2] as u64
}

pub fn luma_plane(tex: &Texture) -> Plane {
    let data = tex.pixels().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
    Plane {
        width: tex.width(),
        height: tex.height(),
        data,
    }
}

pub fn channel_planes(tex: &Texture) -> [Plane; 3] {
    std::array::from_fn(|c| Plane {
        width: tex.width(),
        height: tex.height(),
        data: tex.pixels().chunks_exact(3).map(|p| p[c] as f64).collect(),
    })
}

/// Normalized kernel of radius `ceil(3 sigma)`; `[1.0]` for `sigma == 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with clamp-to-edge sampling.
pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return plane.clone();
    }
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (plane.width as i64, plane.height as i64);
    let mut tmp = vec![0.0; plane.data.len()];
    for y in 0..h {
        let row = &plane.data[(y * w) as usize..((y + 1) * w) as usize];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (x + k as i64 - r).clamp(0, w - 1);
                acc += kv * row[sx as usize];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; plane.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (y + k as i64 - r).clamp(0, h - 1);
                acc += kv * tmp[(sy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Plane {
        width: plane.width,
        height: plane.height,
        data: out,
    }
}

/// Pixel index ranges `[x0, x1) x [y0, y1)` whose centers fall inside the
/// closed normalized rectangle.
pub fn region_pixels(region: &RegionMask, width: usize, height: usize) -> Result<(usize, usize, usize, usize)> {
    let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let inside = |i: usize| {
            let c = (i as f64 + 0.5) / n as f64;
            c >= lo && c <= hi
        };
        let start = (0..n).find(|&i| inside(i)).unwrap_or(n);
        let end = (start..n).find(|&i| !inside(i)).unwrap_or(n);
        (start, end)
    };
    let (x0, x1) = span(region.rect[0], region.rect[2], width);
    let (y0, y1) = span(region.rect[1], region.rect[3], height);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::invalid(format!(
            "region {} covers no pixels of a {width}x{height} image",
            region.name
        )));
    }
    Ok((x0, x1, y0, y1))
}

/// Mean over a region, accumulated as offsets from the region's first value so
/// that constant regions yield that constant exactly.
pub fn region_mean(plane: &Plane, region: &RegionMask) -> Result<f64> {
    let (x0, x1, y0, y1) = region_pixels(region, plane.width, plane.height)?;
    let reference = plane.at(x0, y0);
    let mut acc = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            acc += plane.at(x, y) - reference;
        }
    }
    Ok(reference + acc / ((x1 - x0) * (y1 - y0)) as f64)
}
