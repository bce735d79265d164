//! Image fidelity and multi-view consistency metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, ray_through, CameraPose, Vec3};
use crate::gsplat::{DepthMap, Image};
use crate::recon::OccupancyGrid;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::invalid(format!(
            "image dims differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with peak 1.0, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let se: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]) * (p[c] - q[c])))
        .sum();
    let mse = se / (3 * a.pixels.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Mean SSIM over valid 11×11 windows (no padding), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let k = ssim_kernel();
    let (c1, c2) = ((SSIM_K1 * 1.0).powi(2), (SSIM_K2 * 1.0).powi(2));
    let (nx, ny) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..3 {
        let mut sum = 0.0;
        for y0 in 0..ny {
            for x0 in 0..nx {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, ky) in k.iter().enumerate() {
                    for (dx, kx) in k.iter().enumerate() {
                        let w = ky * kx;
                        let pa = a.get(x0 + dx, y0 + dy)[ch];
                        let pb = b.get(x0 + dx, y0 + dy)[ch];
                        ma += w * pa;
                        mb += w * pb;
                        saa += w * pa * pa;
                        sbb += w * pb * pb;
                        sab += w * pa * pb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += sum / (nx * ny) as f64;
    }
    Ok(total / 3.0)
}

/// Block-matching parameters; foreground is judged against `background`
/// with the same max-channel threshold as silhouette extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub block: usize,
    pub radius: i32,
    pub background: [f64; 3],
    pub tau: f64,
    /// Blocks with a smaller foreground fraction are invalid.
    pub min_foreground: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            block: 8,
            radius: 4,
            background: [0.5; 3],
            tau: 0.08,
            min_foreground: 0.25,
        }
    }
}

impl FlowParams {
    pub fn with_background(background: [f64; 3]) -> Self {
        FlowParams {
            background,
            ..Self::default()
        }
    }

    fn is_foreground(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|c| (p[c] - self.background[c]).abs())
            .fold(0.0, f64::max)
            > self.tau
    }
}

/// Integer displacement per pixel; replicated across each block.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<i32>,
    pub dy: Vec<i32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn at(&self, x: usize, y: usize) -> Option<(i32, i32)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.dx[i], self.dy[i]))
    }
}

fn block_search(src: &Image, dst: &Image, bx: usize, by: usize, p: &FlowParams) -> Option<(i32, i32)> {
    let b = p.block;
    let fg = (by..by + b)
        .flat_map(|y| (bx..bx + b).map(move |x| (x, y)))
        .filter(|&(x, y)| p.is_foreground(src.get(x, y)))
        .count();
    if (fg as f64) < p.min_foreground * (b * b) as f64 {
        return None;
    }
    let mut best: Option<(f64, i32, i32, i32)> = None;
    for dy in -p.radius..=p.radius {
        for dx in -p.radius..=p.radius {
            let (x0, y0) = (bx as i64 + dx as i64, by as i64 + dy as i64);
            if x0 < 0 || y0 < 0 || x0 as usize + b > dst.width || y0 as usize + b > dst.height {
                continue;
            }
            let mut ssd = 0.0;
            for y in 0..b {
                for x in 0..b {
                    let s = src.get(bx + x, by + y);
                    let d = dst.get(x0 as usize + x, y0 as usize + y);
                    for c in 0..3 {
                        ssd += (s[c] - d[c]) * (s[c] - d[c]);
                    }
                }
            }
            let key = (ssd, dx * dx + dy * dy, dx, dy);
            let better = match best {
                None => true,
                Some(cur) => {
                    key.0 < cur.0
                        || (key.0 == cur.0 && (key.1, key.2, key.3) < (cur.1, cur.2, cur.3))
                }
            };
            if better {
                best = Some(key);
            }
        }
    }
    best.map(|(_, _, dx, dy)| (dx, dy))
}

/// Exhaustive integer block matching from `src` into `dst`. Only displaced
/// blocks lying fully inside `dst` are considered; ties go to the smallest
/// displacement, then lexicographically smallest `(dx, dy)`.
pub fn block_flow(src: &Image, dst: &Image, params: &FlowParams) -> Result<FlowField> {
    check_dims(src, dst)?;
    if params.block == 0 || params.radius < 0 {
        return Err(Error::invalid("flow block must be >= 1 and radius >= 0"));
    }
    let (w, h, b) = (src.width, src.height, params.block);
    let (nbx, nby) = (w / b, h / b);
    let blocks: Vec<Option<(i32, i32)>> = (0..nbx * nby)
        .into_par_iter()
        .map(|i| block_search(src, dst, (i % nbx) * b, (i / nbx) * b, params))
        .collect();
    let mut flow = FlowField {
        width: w,
        height: h,
        dx: vec![0; w * h],
        dy: vec![0; w * h],
        valid: vec![false; w * h],
    };
    for (i, r) in blocks.into_iter().enumerate() {
        let Some((dx, dy)) = r else { continue };
        let (bx, by) = ((i % nbx) * b, (i / nbx) * b);
        for y in by..by + b {
            for x in bx..bx + b {
                let j = y * w + x;
                flow.dx[j] = dx;
                flow.dy[j] = dy;
                flow.valid[j] = true;
            }
        }
    }
    Ok(flow)
}

/// Squared error sum and sample count of `dst` warped back onto `src`.
fn warp_residual(src: &Image, dst: &Image, params: &FlowParams) -> Result<(f64, usize)> {
    let flow = block_flow(src, dst, params)?;
    let (mut se, mut n) = (0.0, 0usize);
    for y in 0..src.height {
        for x in 0..src.width {
            let Some((dx, dy)) = flow.at(x, y) else { continue };
            let s = src.get(x, y);
            if !params.is_foreground(s) {
                continue;
            }
            let d = dst.get((x as i64 + dx as i64) as usize, (y as i64 + dy as i64) as usize);
            se += (0..3).map(|c| (s[c] - d[c]) * (s[c] - d[c])).sum::<f64>();
            n += 3;
        }
    }
    Ok((se, n))
}

/// Mean flow-warping RMSE over cyclic frame pairs `(i, i + interval)`.
pub fn warp_rmse(frames: &[Image], interval: usize, params: &FlowParams) -> Result<f64> {
    let f = frames.len();
    if interval == 0 || interval > f {
        return Err(Error::invalid(format!(
            "warp_rmse interval must be in [1, frames] (got {f} frames, interval {interval})"
        )));
    }
    let per_pair: Vec<Option<f64>> = (0..f)
        .map(|i| {
            let (se, n) = warp_residual(&frames[i], &frames[(i + interval) % f], params)?;
            Ok((n > 0).then(|| (se / n as f64).sqrt()))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = per_pair.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(Error::UndefinedMetric("no valid foreground blocks in any pair".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Warp RMSE using ground-truth correspondences from per-view expected depth
/// instead of estimated flow. Pixels whose reprojection is occluded in the
/// target view (depth disagreement above `occlusion_tol`, relative) are
/// skipped.
pub fn depth_warp_rmse(
    frames: &[Image],
    depths: &[DepthMap],
    cams: &[CameraPose],
    interval: usize,
    occlusion_tol: f64,
) -> Result<f64> {
    let f = frames.len();
    if depths.len() != f || cams.len() != f || f < 2 || interval == 0 {
        return Err(Error::invalid("depth_warp_rmse needs aligned frames, depths and cameras"));
    }
    let (mut total, mut pairs) = (0.0, 0usize);
    for i in 0..f {
        let j = (i + interval) % f;
        let (src, dst) = (&frames[i], &frames[j]);
        let (se, n) = reproject_residual(src, &depths[i], &cams[i], dst, &depths[j], &cams[j], occlusion_tol);
        if n > 0 {
            total += (se / n as f64).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no covered pixels in any pair".into()));
    }
    Ok(total / pairs as f64)
}

fn reproject_residual(
    src: &Image,
    src_depth: &DepthMap,
    src_cam: &CameraPose,
    dst: &Image,
    dst_depth: &DepthMap,
    dst_cam: &CameraPose,
    tol: f64,
) -> (f64, usize) {
    let forward: Vec3 = src_cam.rotation().row(2).transpose();
    let (mut se, mut n) = (0.0, 0usize);
    for y in 0..src.height {
        for x in 0..src.width {
            let i = y * src.width + x;
            if !src_depth.mask[i] {
                continue;
            }
            let ray = ray_through(src_cam, x as f64 + 0.5, y as f64 + 0.5);
            let point = ray.origin + ray.direction * (src_depth.depth[i] / ray.direction.dot(&forward));
            let Some((px, depth)) = project(dst_cam, &point).visible() else { continue };
            if px.x < 0.0 || px.y < 0.0 || px.x >= dst.width as f64 || px.y >= dst.height as f64 {
                continue;
            }
            let (u, v) = (px.x as usize, px.y as usize);
            let k = v * dst.width + u;
            if !dst_depth.mask[k] || (dst_depth.depth[k] - depth).abs() > tol * depth {
                continue;
            }
            let (s, d) = (src.get(x, y), dst.get(u, v));
            se += (0..3).map(|c| (s[c] - d[c]) * (s[c] - d[c])).sum::<f64>();
            n += 3;
        }
    }
    (se, n)
}

/// Symmetric mean nearest-neighbour distance.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance needs non-empty point sets"));
    }
    let one_way = |from: &[Vec3], to: &[Vec3]| -> f64 {
        let sum: f64 = from
            .par_iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        sum / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// `|a ∧ b| / |a ∨ b|`; two empty grids score 1.
pub fn volume_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64> {
    if a.res != b.res {
        return Err(Error::invalid(format!("grid resolutions differ: {} vs {}", a.res, b.res)));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.occupied.iter().zip(&b.occupied) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Evaluation report; absent metrics are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warp_rmse_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warp_rmse_f6: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_iou: Option<f64>,
}

/// Per-view means of `metric` over aligned image lists.
pub fn mean_over_views(
    a: &[Image],
    b: &[Image],
    metric: fn(&Image, &Image) -> Result<f64>,
) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("image lists must be non-empty and aligned"));
    }
    let vals = a.iter().zip(b).map(|(x, y)| metric(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Warp RMSE that maps an undefined metric to `None`.
pub fn warp_rmse_opt(frames: &[Image], interval: usize, params: &FlowParams) -> Result<Option<f64>> {
    match warp_rmse(frames, interval, params) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
