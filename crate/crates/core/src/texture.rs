use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub const DEFAULT_UV_LAYOUT: &str = "ffhq-uv";

/// 8-bit sRGB raster in UV space, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Texture {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    pub uv_layout_id: String,
}

impl Texture {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("texture dimensions must be non-zero"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            uv_layout_id: DEFAULT_UV_LAYOUT.to_string(),
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels).expect("non-zero dims")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels).expect("non-zero dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.put(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Box-filter downsample to a `grid_w x grid_h` grid of mean RGB values
    /// (0..255 scale), row-major. Block `i` spans pixels
    /// `floor(i*W/grid_w) .. floor((i+1)*W/grid_w)`.
    pub fn block_means(&self, grid_w: usize, grid_h: usize) -> Result<Vec<[f64; 3]>> {
        if grid_w == 0 || grid_h == 0 || grid_w > self.width || grid_h > self.height {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} to {grid_w}x{grid_h}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(grid_w * grid_h);
        for by in 0..grid_h {
            let (y0, y1) = (by * self.height / grid_h, (by + 1) * self.height / grid_h);
            for bx in 0..grid_w {
                let (x0, x1) = (bx * self.width / grid_w, (bx + 1) * self.width / grid_w);
                let mut sums = [0u64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = self.get(x, y);
                        for c in 0..3 {
                            sums[c] += p[c] as u64;
                        }
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                out.push(sums.map(|s| s as f64 / n));
            }
        }
        Ok(out)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer size checked at construction");
        img.save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer size checked at construction");
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

/// Every `*.png` in `dir`, sorted by file name, keyed by file stem.
pub fn load_texture_dir(dir: &Path) -> Result<Vec<(String, Texture)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, Texture::load_png(&p)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let t = Texture::from_fn(8, 4, |x, y| [x as u8 * 30, y as u8 * 60, 7]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        t.save_png(&p).unwrap();
        assert_eq!(Texture::load_png(&p).unwrap(), t);
    }

    #[test]
    fn mirror_is_involution() {
        let t = Texture::from_fn(5, 3, |x, y| [x as u8, y as u8, (x * y) as u8]);
        assert_eq!(t.mirrored().get(0, 1), t.get(4, 1));
        assert_eq!(t.mirrored().mirrored(), t);
    }

    #[test]
    fn rejects_bad_buffer() {
        assert!(Texture::new(2, 2, vec![0; 11]).is_err());
        assert!(Texture::new(0, 2, vec![]).is_err());
    }
}
