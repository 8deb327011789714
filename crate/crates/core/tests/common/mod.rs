//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use uvforge::detection::{BoundingBox, Class};
use uvforge::metrics::FeatureVector;

pub type Mat = Vec<Vec<f64>>;

pub fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec(), "test").unwrap()
}

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            for j in 0..p {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().zip(identity(n)).map(|(r, e)| r.iter().copied().chain(e).collect()).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let row = m[col].clone();
                for (x, y) in m[r].iter_mut().zip(row) {
                    *x -= f * y;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by the coupled Denman-Beavers iteration.
pub fn sqrtm_db(a: &Mat) -> Mat {
    let n = a.len();
    let mut y = a.clone();
    let mut z = identity(n);
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let delta: f64 = ny.iter().flatten().zip(y.iter().flatten()).map(|(a, b)| (a - b).abs()).sum();
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

pub fn trace(a: &Mat) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Mean and unbiased covariance by explicit loops.
pub fn mean_cov(points: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let (n, d) = (points.len(), points[0].len());
    let mut mean = vec![0.0; d];
    for p in points {
        for i in 0..d {
            mean[i] += p[i] / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    (mean, cov)
}

/// `|mu_a - mu_b|^2 + tr(S_a) + tr(S_b) - 2 tr(sqrt(S_a S_b))`.
pub fn fid_oracle(mu_a: &[f64], s_a: &Mat, mu_b: &[f64], s_b: &Mat) -> f64 {
    let d2: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    d2 + trace(s_a) + trace(s_b) - 2.0 * trace(&sqrtm_db(&matmul(s_a, s_b)))
}

pub fn fid_oracle_points(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, sa) = mean_cov(a);
    let (mb, sb) = mean_cov(b);
    fid_oracle(&ma, &sa, &mb, &sb)
}

fn cubic_kernel(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..x.len() {
        dot += x[i] * y[i];
    }
    let t = dot / x.len() as f64 + 1.0;
    t * t * t
}

/// Unbiased MMD^2 over every pair of the full sets.
pub fn mmd2_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (m, n) = (x.len(), y.len());
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sxx += cubic_kernel(&x[i], &x[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                syy += cubic_kernel(&y[i], &y[j]);
            }
        }
    }
    for xi in x {
        for yj in y {
            sxy += cubic_kernel(xi, yj);
        }
    }
    sxx / (m * (m - 1)) as f64 + syy / (n * (n - 1)) as f64 - 2.0 * sxy / (m * n) as f64
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Fraction of `probes` inside some manifold point's k-NN ball, by counting:
/// a probe at distance `d` from point `i` is inside iff fewer than `k` other
/// manifold points are strictly closer to `i` than `d`.
pub fn coverage_oracle(manifold: &[Vec<f64>], probes: &[Vec<f64>], k: usize) -> f64 {
    let inside = probes
        .iter()
        .filter(|p| {
            (0..manifold.len()).any(|i| {
                let d = dist2(p, &manifold[i]);
                let closer = (0..manifold.len()).filter(|&j| j != i && dist2(&manifold[i], &manifold[j]) < d).count();
                closer < k
            })
        })
        .count();
    inside as f64 / probes.len() as f64
}

pub fn iou_oracle(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    let union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    if inter == 0.0 { 0.0 } else { inter / union }
}

/// AP by sweeping every distinct confidence threshold: each threshold's
/// detection set is matched from scratch, and the area is the sum over recall
/// steps of the best precision reached at that recall or beyond. Requires
/// distinct confidences.
pub fn ap_oracle(dets: &[(usize, BoundingBox)], gts: &[(usize, BoundingBox)], thresh: f64) -> Option<f64> {
    if gts.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    let mut thresholds: Vec<f64> = dets.iter().map(|(_, d)| d.confidence.unwrap()).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let mut points = Vec::new();
    for &t in &thresholds {
        let mut kept: Vec<&(usize, BoundingBox)> = dets.iter().filter(|(_, d)| d.confidence.unwrap() >= t).collect();
        kept.sort_by(|a, b| b.1.confidence.unwrap().total_cmp(&a.1.confidence.unwrap()));
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        for (frame, d) in &kept {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(g, (f, gt))| !used[*g] && f == frame && gt.class == d.class)
                .map(|(g, (_, gt))| (g, iou_oracle(d, gt)))
                .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                    Some(a) if a.1 >= c.1 => Some(a),
                    _ => Some(c),
                });
            if let Some((g, o)) = best {
                if o >= thresh {
                    used[g] = true;
                    tp += 1;
                }
            }
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / kept.len() as f64));
    }
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.sort_by(f64::total_cmp);
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        if r == 0.0 {
            continue;
        }
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        area += (r - prev) * best;
        prev = r;
    }
    Some(area)
}

pub fn boxed(x0: f64, y0: f64, x1: f64, y1: f64, class: Class, confidence: Option<f64>) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1, class, confidence).unwrap()
}
