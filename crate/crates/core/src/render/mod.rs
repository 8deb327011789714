//! Deterministic software renderer for textured head meshes and the
//! rendered-corpus metrics built on it.

mod mesh;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::write_jsonl;
use crate::metrics::{corpus_stats, extract_features, fid, kid, FeatureExtractor, MetricResult};
use crate::texture::Texture;
pub use mesh::{head_mesh, load_mesh, parse_obj, write_obj, Corner, Mesh};
use mesh::{cross, dot3, norm, sub};

const NEAR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpec {
    pub camera_distance: f64,
    /// Radians.
    pub yaw_range: [f64; 2],
    /// Radians, inside (-pi/2, pi/2).
    pub pitch_range: [f64; 2],
    /// Vertical field of view in radians.
    pub fov: f64,
    pub image_size: [usize; 2],
    pub background: [u8; 3],
    pub seed: u64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            camera_distance: 3.0,
            yaw_range: [-30f64.to_radians(), 30f64.to_radians()],
            pitch_range: [-10f64.to_radians(), 10f64.to_radians()],
            fov: 40f64.to_radians(),
            image_size: [256, 256],
            background: [0, 0, 0],
            seed: 0,
        }
    }
}

impl ViewSpec {
    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.camera_distance.is_finite() && self.camera_distance > 0.0) {
            return Err(Error::invalid("camera_distance must be positive"));
        }
        for (name, r) in [("yaw_range", self.yaw_range), ("pitch_range", self.pitch_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::invalid(format!("{name} must be an ordered finite interval")));
            }
        }
        if self.pitch_range[0] <= -half_pi || self.pitch_range[1] >= half_pi {
            return Err(Error::invalid("pitch_range must lie inside (-pi/2, pi/2)"));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::invalid("fov must lie in (0, pi)"));
        }
        if self.image_size.iter().any(|&d| d < 16) {
            return Err(Error::invalid("image dimensions must be >= 16"));
        }
        Ok(())
    }

    /// Viewing angles `(yaw, pitch)` for one sample, drawn uniformly from the ranges.
    pub fn draw_angles(&self, sample_seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let yaw = lerp(self.yaw_range, rng.random::<f64>());
        let pitch = lerp(self.pitch_range, rng.random::<f64>());
        (yaw, pitch)
    }
}

fn lerp(r: [f64; 2], t: f64) -> f64 {
    r[0] + (r[1] - r[0]) * t
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample render seed for corpus position `index`.
pub fn sample_seed(view_seed: u64, index: usize) -> u64 {
    splitmix64(view_seed ^ splitmix64(index as u64))
}

/// Right-handed pinhole camera; camera space has +x right, +y up and
/// positive depth along the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov: f64,
}

impl Camera {
    /// Camera on a sphere around `center`, yaw about +Y (0 = looking down -Z
    /// from +Z), pitch toward +Y.
    pub fn orbit(center: [f64; 3], distance: f64, yaw: f64, pitch: f64, fov: f64) -> Self {
        let dir = [yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos()];
        Self {
            eye: [0, 1, 2].map(|i| center[i] + distance * dir[i]),
            target: center,
            up: [0.0, 1.0, 0.0],
            fov,
        }
    }

    fn basis(&self) -> Result<[[f64; 3]; 3]> {
        let f = sub(self.target, self.eye);
        let fl = norm(f);
        let r = cross(f, self.up);
        let rl = norm(r);
        if fl == 0.0 || rl == 0.0 {
            return Err(Error::invalid("camera view direction is degenerate"));
        }
        let f = f.map(|v| v / fl);
        let r = r.map(|v| v / rl);
        Ok([r, cross(r, f), f])
    }
}

/// Visits every pixel whose centre `(x + 0.5, y + 0.5)` lies inside the
/// screen-space triangle `p`, passing its barycentric weights. Pixels on a
/// shared edge belong to exactly one triangle (top-left rule).
pub fn rasterize_triangle(p: [[f64; 2]; 3], width: usize, height: usize, mut visit: impl FnMut(usize, usize, [f64; 3])) {
    let edge = |a: [f64; 2], b: [f64; 2], x: f64, y: f64| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let area = edge(p[0], p[1], p[2][0], p[2][1]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    // reorder to positive orientation, remembering where each corner went
    let (q, slot) = if area > 0.0 { (p, [0, 1, 2]) } else { ([p[0], p[2], p[1]], [0, 2, 1]) };
    let area = area.abs();
    let top_left = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        (dy == 0.0 && dx > 0.0) || dy < 0.0
    };
    let edges = [(q[1], q[2]), (q[2], q[0]), (q[0], q[1])];
    let owns = edges.map(|(a, b)| top_left(a, b));
    let lo = |i: usize| q.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
    let hi = |i: usize| q.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (lo(0) - 0.5).floor().max(0.0) as usize;
    let y0 = (lo(1) - 0.5).floor().max(0.0) as usize;
    let x1 = ((hi(0) - 0.5).ceil() + 1.0).clamp(0.0, width as f64) as usize;
    let y1 = ((hi(1) - 0.5).ceil() + 1.0).clamp(0.0, height as f64) as usize;
    for y in y0..y1 {
        let cy = y as f64 + 0.5;
        for x in x0..x1 {
            let cx = x as f64 + 0.5;
            let w = [0, 1, 2].map(|k| edge(edges[k].0, edges[k].1, cx, cy));
            if (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && owns[k])) {
                let mut bary = [0.0; 3];
                for k in 0..3 {
                    bary[slot[k]] = w[k] / area;
                }
                visit(x, y, bary);
            }
        }
    }
}

/// Bilinear lookup with OBJ conventions: v = 0 is the bottom texture row.
pub fn sample_bilinear(tex: &Texture, u: f64, v: f64) -> [u8; 3] {
    let (w, h) = (tex.width(), tex.height());
    let fx = (u * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = ((1.0 - v) * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let (a, b, c, d) = (tex.get(x0, y0), tex.get(x1, y0), tex.get(x0, y1), tex.get(x1, y1));
    std::array::from_fn(|i| {
        let top = a[i] as f64 * (1.0 - tx) + b[i] as f64 * tx;
        let bottom = c[i] as f64 * (1.0 - tx) + d[i] as f64 * tx;
        (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8
    })
}

/// Z-buffered, perspective-correct, unlit render of `mesh` from `camera`.
/// Triangles with a corner behind the near plane are skipped.
pub fn render_with_camera(
    mesh: &Mesh,
    tex: &Texture,
    camera: &Camera,
    size: [usize; 2],
    background: [u8; 3],
) -> Result<Texture> {
    let [width, height] = size;
    if width == 0 || height == 0 {
        return Err(Error::invalid("render size must be non-zero"));
    }
    let [right, up, forward] = camera.basis()?;
    let focal = 0.5 * height as f64 / (0.5 * camera.fov).tan();
    let cam_space: Vec<[f64; 3]> = mesh
        .vertices()
        .iter()
        .map(|&p| {
            let d = sub(p, camera.eye);
            [dot3(d, right), dot3(d, up), dot3(d, forward)]
        })
        .collect();
    let mut image = Texture::filled(width, height, background);
    image.uv_layout_id = "render".into();
    // stores 1/depth; larger is nearer, 0 is empty
    let mut depth = vec![0.0f64; width * height];
    let uvs = mesh.uvs();
    for tri in mesh.triangles() {
        let c = tri.map(|(v, _)| cam_space[v]);
        if c.iter().any(|p| p[2] <= NEAR) {
            continue;
        }
        let screen = c.map(|p| [0.5 * width as f64 + focal * p[0] / p[2], 0.5 * height as f64 - focal * p[1] / p[2]]);
        let inv_z = c.map(|p| 1.0 / p[2]);
        let uv = tri.map(|(_, t)| uvs[t]);
        rasterize_triangle(screen, width, height, |x, y, b| {
            let iz = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
            let slot = y * width + x;
            if iz <= depth[slot] {
                return;
            }
            depth[slot] = iz;
            let wts = [0, 1, 2].map(|k| b[k] * inv_z[k] / iz);
            let u = wts[0] * uv[0][0] + wts[1] * uv[1][0] + wts[2] * uv[2][0];
            let v = wts[0] * uv[0][1] + wts[1] * uv[1][1] + wts[2] * uv[2][1];
            image.put(x, y, sample_bilinear(tex, u, v));
        });
    }
    Ok(image)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub image: Texture,
    pub yaw: f64,
    pub pitch: f64,
    pub sample_id: String,
}

/// Renders `tex` on `mesh` from a viewpoint drawn from `view` with `sample_seed`.
pub fn render(mesh: &Mesh, tex: &Texture, view: &ViewSpec, sample_seed: u64) -> Result<RenderedImage> {
    view.validate()?;
    if mesh.surface_area() <= 0.0 {
        return Err(Error::invalid("mesh has zero total area"));
    }
    let (yaw, pitch) = view.draw_angles(sample_seed);
    let camera = Camera::orbit(mesh.centroid(), view.camera_distance, yaw, pitch, view.fov);
    let image = render_with_camera(mesh, tex, &camera, view.image_size, view.background)?;
    Ok(RenderedImage {
        image,
        yaw,
        pitch,
        sample_id: format!("{sample_seed:016x}"),
    })
}

/// One render per texture, seeded by position in the list.
pub fn render_corpus(mesh: &Mesh, textures: &[(&str, &Texture)], view: &ViewSpec) -> Result<Vec<RenderedImage>> {
    if textures.is_empty() {
        return Err(Error::invalid("render_corpus needs at least one texture"));
    }
    textures
        .iter()
        .enumerate()
        .map(|(i, (id, tex))| {
            let mut r = render(mesh, tex, view, sample_seed(view.seed, i))?;
            r.sample_id = id.to_string();
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRecord {
    pub sample_id: String,
    pub yaw: f64,
    pub pitch: f64,
}

/// Writes `<sample_id>.png` per image plus `renders.jsonl`; returns the sidecar path.
pub fn write_renders(dir: &Path, renders: &[RenderedImage]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(renders.len());
    for r in renders {
        r.image.save_png(&dir.join(format!("{}.png", r.sample_id)))?;
        records.push(RenderRecord {
            sample_id: r.sample_id.clone(),
            yaw: r.yaw,
            pitch: r.pitch,
        });
    }
    let sidecar = dir.join("renders.jsonl");
    write_jsonl(&sidecar, &records)?;
    Ok(sidecar)
}

fn rendered_features(
    mesh: &Mesh,
    textures: &[(&str, &Texture)],
    view: &ViewSpec,
    extractor: &FeatureExtractor,
) -> Result<Vec<crate::metrics::FeatureVector>> {
    let renders = render_corpus(mesh, textures, view)?;
    let pairs: Vec<(&str, &Texture)> = renders.iter().map(|r| (r.sample_id.as_str(), &r.image)).collect();
    extract_features(&pairs, extractor)
}

fn require_pair(a: usize, b: usize) -> Result<()> {
    if a < 2 || b < 2 {
        return Err(Error::invalid(format!("rendered metrics need >= 2 textures per corpus (got {a} and {b})")));
    }
    Ok(())
}

/// FID between features of the two corpora rendered with the same view schedule.
pub fn three_d_fid(
    mesh: &Mesh,
    textures_a: &[(&str, &Texture)],
    textures_b: &[(&str, &Texture)],
    view: &ViewSpec,
    extractor: &FeatureExtractor,
) -> Result<MetricResult> {
    require_pair(textures_a.len(), textures_b.len())?;
    let fa = rendered_features(mesh, textures_a, view, extractor)?;
    let fb = rendered_features(mesh, textures_b, view, extractor)?;
    let mut r = fid(&corpus_stats(&fa)?, &corpus_stats(&fb)?)?;
    r.name = "3d_fid".into();
    Ok(r)
}

pub fn three_d_kid(
    mesh: &Mesh,
    textures_a: &[(&str, &Texture)],
    textures_b: &[(&str, &Texture)],
    view: &ViewSpec,
    extractor: &FeatureExtractor,
    blocks: usize,
    seed: u64,
) -> Result<MetricResult> {
    require_pair(textures_a.len(), textures_b.len())?;
    let fa = rendered_features(mesh, textures_a, view, extractor)?;
    let fb = rendered_features(mesh, textures_b, view, extractor)?;
    let mut r = kid(&fa, &fb, blocks, seed)?;
    r.name = "3d_kid".into();
    Ok(r)
}
