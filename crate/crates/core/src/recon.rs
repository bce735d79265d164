//! Feed-forward multi-view fusion: silhouettes, voxel carving,
//! visibility-aware median colorization and surface Gaussian emission.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraPose, Vec3};
use crate::gsplat::{Gaussian, GaussianCloud, Image};
use crate::io;

/// Half-width of the cube the grid spans.
pub const GRID_EXTENT: f64 = 1.0;
/// Emitted Gaussian scale relative to the voxel size.
pub const SPLAT_SCALE: f64 = 0.7;
pub const SPLAT_ALPHA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// Voxel grid over `[-1, 1]³`, x fastest. Colors exist for occupied voxels
/// once the grid is colorized.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub res: usize,
    pub occupied: Vec<bool>,
    pub color: Vec<Option<[f64; 3]>>,
}

impl OccupancyGrid {
    pub fn empty(res: usize) -> Self {
        OccupancyGrid {
            res,
            occupied: vec![false; res * res * res],
            color: vec![None; res * res * res],
        }
    }

    pub fn voxel_size(&self) -> f64 {
        2.0 * GRID_EXTENT / self.res as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        (idx % self.res, (idx / self.res) % self.res, idx / (self.res * self.res))
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.coords(idx);
        let s = self.voxel_size();
        Vec3::new(
            -GRID_EXTENT + (i as f64 + 0.5) * s,
            -GRID_EXTENT + (j as f64 + 0.5) * s,
            -GRID_EXTENT + (k as f64 + 0.5) * s,
        )
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn locate(&self, p: &Vec3) -> Option<usize> {
        let s = self.voxel_size();
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] + GRID_EXTENT) / s).floor();
            if !(f >= 0.0 && f < self.res as f64) {
                return None;
            }
            ijk[a] = f as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|v| **v).count()
    }

    /// Occupied with at least one empty (or out-of-grid) 6-neighbour.
    pub fn is_surface(&self, idx: usize) -> bool {
        if !self.occupied[idx] {
            return false;
        }
        let (i, j, k) = self.coords(idx);
        let n = self.res;
        let neighbours = [
            (i.wrapping_sub(1), j, k),
            (i + 1, j, k),
            (i, j.wrapping_sub(1), k),
            (i, j + 1, k),
            (i, j, k.wrapping_sub(1)),
            (i, j, k + 1),
        ];
        neighbours
            .iter()
            .any(|&(a, b, c)| a >= n || b >= n || c >= n || !self.occupied[self.index(a, b, c)])
    }

    /// Writes `<stem>.json` ({res, extent}), `<stem>.occ` (bit-packed
    /// occupancy, LSB first) and `<stem>.rgb` (f32 LE triples, zero where
    /// no color is defined).
    pub fn save(&self, stem: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Header {
            res: usize,
            extent: [f64; 2],
        }
        io::write_json(
            &stem.with_extension("json"),
            &Header {
                res: self.res,
                extent: [-GRID_EXTENT, GRID_EXTENT],
            },
        )?;
        let mut bits = vec![0u8; self.occupied.len().div_ceil(8)];
        for (i, o) in self.occupied.iter().enumerate() {
            if *o {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        io::write_bytes(&stem.with_extension("occ"), &bits)?;
        let colors: Vec<f64> = self.color.iter().flat_map(|c| c.unwrap_or([0.0; 3])).collect();
        io::write_f32_le(&stem.with_extension("rgb"), &colors)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            res: usize,
        }
        let head: Header = io::read_json(&stem.with_extension("json"))?;
        let mut grid = OccupancyGrid::empty(head.res);
        let occ_path = stem.with_extension("occ");
        let bits = io::read_bytes(&occ_path)?;
        if bits.len() != grid.occupied.len().div_ceil(8) {
            return Err(Error::parse(&occ_path, "occupancy bitmap size does not match res"));
        }
        for i in 0..grid.occupied.len() {
            grid.occupied[i] = bits[i / 8] >> (i % 8) & 1 == 1;
        }
        let rgb_path = stem.with_extension("rgb");
        let rgb = io::read_f32_le(&rgb_path)?;
        if rgb.len() != 3 * grid.occupied.len() {
            return Err(Error::parse(&rgb_path, "color array size does not match res"));
        }
        for i in 0..grid.occupied.len() {
            if grid.occupied[i] {
                grid.color[i] = Some([rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]]);
            }
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub tau: f64,
    pub res: usize,
    /// `None` means `⌈0.9·F⌉`.
    pub min_views: Option<usize>,
    pub background: [f64; 3],
    /// Radius of the per-channel median filter applied before silhouette
    /// thresholding; 0 disables it.
    pub silhouette_median: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            tau: 0.08,
            res: 64,
            min_views: None,
            background: [0.5; 3],
            silhouette_median: 1,
        }
    }
}

impl ReconConfig {
    pub fn min_views_for(&self, views: usize) -> usize {
        self.min_views
            .unwrap_or_else(|| (0.9 * views as f64).ceil() as usize)
            .clamp(1, views.max(1))
    }
}

/// Foreground where the max-channel deviation from `background` exceeds `tau`.
pub fn silhouette(img: &Image, background: [f64; 3], tau: f64) -> Result<Mask> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("silhouette tau must be > 0, got {tau}")));
    }
    Ok(Mask {
        width: img.width,
        height: img.height,
        data: img
            .pixels
            .iter()
            .map(|p| (0..3).map(|c| (p[c] - background[c]).abs()).fold(0.0, f64::max) > tau)
            .collect(),
    })
}

/// Per-channel median over a `(2r+1)²` window, clamped at the borders.
pub fn median_filter(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let r = radius as i64;
    let mut out = img.clone();
    let mut buf = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                buf.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = ((x + dx).clamp(0, w - 1), (y + dy).clamp(0, h - 1));
                        buf.push(img.get(xx as usize, yy as usize)[c]);
                    }
                }
                buf.sort_by(f64::total_cmp);
                *slot = buf[buf.len() / 2];
            }
            out.set(x as usize, y as usize, px);
        }
    }
    out
}

fn pixel_of(cam: &CameraPose, p: &Vec3) -> Option<(usize, usize)> {
    let (px, _) = project(cam, p).visible()?;
    if px.x < 0.0 || px.y < 0.0 || px.x >= cam.width() as f64 || px.y >= cam.height() as f64 {
        return None;
    }
    Some((px.x as usize, px.y as usize))
}

/// Occupied iff the voxel center lands on foreground in at least
/// `min_views` views.
pub fn carve(masks: &[Mask], cams: &[CameraPose], res: usize, min_views: usize) -> Result<OccupancyGrid> {
    if masks.len() != cams.len() {
        return Err(Error::invalid("masks and cameras must align"));
    }
    if res < 2 {
        return Err(Error::invalid("grid resolution must be >= 2"));
    }
    if min_views == 0 || min_views > cams.len() {
        return Err(Error::invalid(format!(
            "min_views must be in [1, {}], got {min_views}",
            cams.len()
        )));
    }
    for (m, c) in masks.iter().zip(cams) {
        if m.width != c.width() || m.height != c.height() {
            return Err(Error::invalid("mask dims do not match camera"));
        }
    }
    let mut grid = OccupancyGrid::empty(res);
    let f = cams.len();
    let probe = OccupancyGrid::empty(res);
    grid.occupied.par_iter_mut().enumerate().for_each(|(idx, occ)| {
        let center = probe.center(idx);
        let mut hits = 0;
        for (v, (mask, cam)) in masks.iter().zip(cams).enumerate() {
            if pixel_of(cam, &center).is_some_and(|(x, y)| mask.get(x, y)) {
                hits += 1;
                if hits >= min_views {
                    break;
                }
            }
            if hits + (f - v - 1) < min_views {
                break;
            }
        }
        *occ = hits >= min_views;
    });
    Ok(grid)
}

/// Parameter interval `[t0, t1]` of the ray inside the grid cube.
fn cube_entry(origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a].abs() > GRID_EXTENT {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((-GRID_EXTENT - origin[a]) / dir[a], (GRID_EXTENT - origin[a]) / dir[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1).then_some((t0.max(0.0), t1))
}

/// Marches from the camera toward voxel `target` in half-voxel steps; true
/// if no other occupied voxel is hit first.
fn voxel_visible(grid: &OccupancyGrid, cam: &CameraPose, target: usize) -> bool {
    let origin = cam.position();
    let center = grid.center(target);
    let offset = center - origin;
    let length = offset.norm();
    let dir = offset / length;
    let Some((start, _)) = cube_entry(&origin, &dir) else {
        return true;
    };
    let step = 0.5 * grid.voxel_size();
    let mut t = start;
    while t < length {
        if let Some(idx) = grid.locate(&(origin + dir * t)) {
            if idx == target {
                return true;
            }
            if grid.occupied[idx] {
                return false;
            }
        }
        t += step;
    }
    true
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Colors every occupied voxel with the per-channel median of the pixels it
/// projects to in the views that see it; unseen voxels get the mean color
/// of the seen ones.
pub fn colorize(grid: &OccupancyGrid, images: &[Image], cams: &[CameraPose]) -> Result<OccupancyGrid> {
    if images.len() != cams.len() {
        return Err(Error::invalid("images and cameras must align"));
    }
    for (img, cam) in images.iter().zip(cams) {
        if img.width != cam.width() || img.height != cam.height() {
            return Err(Error::invalid("image dims do not match camera"));
        }
    }
    let seen: Vec<Option<[f64; 3]>> = (0..grid.occupied.len())
        .into_par_iter()
        .map(|idx| {
            if !grid.occupied[idx] {
                return None;
            }
            let center = grid.center(idx);
            let samples: Vec<[f64; 3]> = images
                .iter()
                .zip(cams)
                .filter_map(|(img, cam)| {
                    let (x, y) = pixel_of(cam, &center)?;
                    voxel_visible(grid, cam, idx).then(|| img.get(x, y))
                })
                .collect();
            if samples.is_empty() {
                return None;
            }
            let mut chan = Vec::with_capacity(samples.len());
            Some(std::array::from_fn(|c| {
                chan.clear();
                chan.extend(samples.iter().map(|s| s[c]));
                median(&mut chan)
            }))
        })
        .collect();

    let seen_colors: Vec<&[f64; 3]> = seen.iter().flatten().collect();
    let fallback = if seen_colors.is_empty() {
        [0.5; 3]
    } else {
        let n = seen_colors.len() as f64;
        std::array::from_fn(|c| seen_colors.iter().map(|s| s[c]).sum::<f64>() / n)
    };
    let mut out = grid.clone();
    for idx in 0..out.occupied.len() {
        out.color[idx] = out.occupied[idx].then(|| seen[idx].unwrap_or(fallback));
    }
    Ok(out)
}

/// One isotropic Gaussian per occupied surface voxel, in grid order.
pub fn to_gaussians(grid: &OccupancyGrid) -> Result<GaussianCloud> {
    let scale = SPLAT_SCALE * grid.voxel_size();
    (0..grid.occupied.len())
        .filter(|&idx| grid.is_surface(idx))
        .map(|idx| {
            let c = grid.color[idx].unwrap_or([0.5; 3]);
            Gaussian::isotropic(grid.center(idx), scale, SPLAT_ALPHA, c.map(|v| v.clamp(0.0, 1.0)).into())
        })
        .collect::<Result<Vec<_>>>()
        .map(GaussianCloud::new)
}

/// Silhouettes, carve and colorize; returns the colored grid.
pub fn reconstruct_grid(images: &[Image], cams: &[CameraPose], cfg: &ReconConfig) -> Result<OccupancyGrid> {
    if images.len() != cams.len() || images.is_empty() {
        return Err(Error::invalid("reconstruct needs aligned, non-empty images and cameras"));
    }
    let masks = images
        .iter()
        .map(|img| silhouette(&median_filter(img, cfg.silhouette_median), cfg.background, cfg.tau))
        .collect::<Result<Vec<_>>>()?;
    let grid = carve(&masks, cams, cfg.res, cfg.min_views_for(cams.len()))?;
    colorize(&grid, images, cams)
}

/// Full fusion pipeline; an empty carve yields an empty cloud.
pub fn reconstruct(images: &[Image], cams: &[CameraPose], cfg: &ReconConfig) -> Result<GaussianCloud> {
    to_gaussians(&reconstruct_grid(images, cams, cfg)?)
}
