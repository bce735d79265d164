//! 3D Gaussians, EWA projection to screen-space splats and a deterministic
//! front-to-back compositor.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraPose, Vec3};

/// Per-splat opacity ceiling.
pub const MAX_ALPHA: f64 = 0.99;
/// Contributions below this opacity are dropped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Screen-space low-pass dilation added to every projected covariance.
pub const COV2_DILATION: f64 = 0.3;
/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GaussianRepr {
    p: [f64; 3],
    s: [f64; 3],
    q: [f64; 4],
    alpha: f64,
    c: [f64; 3],
}

/// A single anisotropic 3D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    pub p: Vec3,
    pub s: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub q: [f64; 4],
    pub alpha: f64,
    pub c: Vec3,
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        Gaussian::new(r.p.into(), r.s.into(), r.q, r.alpha, r.c.into())
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        GaussianRepr {
            p: g.p.into(),
            s: g.s.into(),
            q: g.q,
            alpha: g.alpha,
            c: g.c.into(),
        }
    }
}

impl Gaussian {
    /// Validates attribute ranges and normalizes the quaternion.
    pub fn new(p: Vec3, s: Vec3, q: [f64; 4], alpha: f64, c: Vec3) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("gaussian center must be finite"));
        }
        if !s.iter().all(|v| (1e-6..=10.0).contains(v)) {
            return Err(Error::invalid(format!("gaussian scale out of [1e-6, 10]: {s:?}")));
        }
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(qn.is_finite() && qn > 1e-12) {
            return Err(Error::invalid("gaussian quaternion must be non-zero"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("gaussian alpha out of [0,1]: {alpha}")));
        }
        if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("gaussian color out of [0,1]: {c:?}")));
        }
        let q = if (qn - 1.0).abs() < 1e-15 {
            q
        } else {
            [q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn]
        };
        Ok(Gaussian { p, s, q, alpha, c })
    }

    /// Isotropic Gaussian with identity rotation.
    pub fn isotropic(p: Vec3, scale: f64, alpha: f64, c: Vec3) -> Result<Self> {
        Gaussian::new(p, Vec3::repeat(scale), [1.0, 0.0, 0.0, 0.0], alpha, c)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance3(&self.s, &self.q)
    }
}

/// The global 3D model: an ordered list of Gaussians.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianCloud { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.gaussians.iter().map(|g| g.p).collect()
    }
}

/// A projected Gaussian in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    pub cov2: Matrix2<f64>,
    pub depth: f64,
    pub alpha: f64,
    pub color: Vec3,
}

/// RGB image with channels in `[0,1]`, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel expected depth with a coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

pub fn rotation_from_quaternion(q: &[f64; 4]) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// `R(q) · diag(s)² · R(q)ᵀ`.
pub fn covariance3(s: &Vec3, q: &[f64; 4]) -> Matrix3<f64> {
    let r = rotation_from_quaternion(q);
    let m = r * Matrix3::from_diagonal(s);
    m * m.transpose()
}

/// Pinhole Jacobian of the pixel map at camera-space point `t`.
pub fn projection_jacobian(focal: f64, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        focal * iz,
        0.0,
        -focal * t.x * iz * iz,
        0.0,
        focal * iz,
        -focal * t.y * iz * iz,
    )
}

/// Projects a Gaussian with the local-affine EWA approximation. `None` means
/// the Gaussian was culled by the near plane.
pub fn project_gaussian(cam: &CameraPose, g: &Gaussian) -> Option<Splat2D> {
    let t = cam.to_camera(&g.p);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let (mean, depth) = project(cam, &g.p).visible()?;
    let j = projection_jacobian(cam.focal(), &t);
    let w = cam.rotation();
    let jw = j * w;
    let mut cov2 = jw * g.covariance() * jw.transpose();
    // exact symmetry
    let off = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
    cov2[(0, 1)] = off;
    cov2[(1, 0)] = off;
    cov2 += Matrix2::identity() * COV2_DILATION;
    Some(Splat2D {
        mean,
        cov2,
        depth,
        alpha: g.alpha,
        color: g.c,
    })
}

struct PreparedSplat {
    mean: Vector2<f64>,
    conic: [f64; 3],
    depth: f64,
    alpha: f64,
    color: [f64; 3],
    x_range: (usize, usize),
    y_range: (usize, usize),
}

/// Splats visible in `cam`, sorted front to back with ties broken by cloud
/// index, each with the pixel rectangle outside which it contributes nothing.
fn prepare(cloud: &GaussianCloud, cam: &CameraPose) -> Vec<PreparedSplat> {
    let (w, h) = (cam.width(), cam.height());
    let mut splats: Vec<(usize, Splat2D)> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| g.alpha >= MIN_ALPHA)
        .filter_map(|(i, g)| project_gaussian(cam, g).map(|s| (i, s)))
        .collect();
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    splats
        .into_iter()
        .filter_map(|(_, s)| {
            let (a, b, c) = (s.cov2[(0, 0)], s.cov2[(0, 1)], s.cov2[(1, 1)]);
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            let conic = [c / det, -b / det, a / det];
            // At least 3σ; wider for opaque splats so the rectangle never
            // clips a contribution that survives the 1/255 cutoff.
            let k = (2.0 * (255.0 * s.alpha).ln()).sqrt().max(3.0);
            let (rx, ry) = (k * a.sqrt(), k * c.sqrt());
            let x_range = pixel_span(s.mean.x, rx, w)?;
            let y_range = pixel_span(s.mean.y, ry, h)?;
            Some(PreparedSplat {
                mean: s.mean,
                conic,
                depth: s.depth,
                alpha: s.alpha,
                color: s.color.into(),
                x_range,
                y_range,
            })
        })
        .collect()
}

/// Inclusive-exclusive range of pixel indices whose centers lie within
/// `center ± radius`, clipped to `[0, n)`.
fn pixel_span(center: f64, radius: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(n as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize + 1))
}

#[inline]
fn splat_alpha(s: &PreparedSplat, px: f64, py: f64) -> f64 {
    let dx = px - s.mean.x;
    let dy = py - s.mean.y;
    let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    (s.alpha * (-0.5 * m).exp()).min(MAX_ALPHA)
}

/// Walks the sorted splats covering pixel `(x, y)`, calling `f(splat,
/// weight)` with the compositing weight `α'·T`; returns the final
/// transmittance.
#[inline]
fn composite<F: FnMut(&PreparedSplat, f64)>(row: &[&PreparedSplat], x: usize, y: usize, mut f: F) -> f64 {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut transmittance = 1.0;
    for s in row {
        if x < s.x_range.0 || x >= s.x_range.1 {
            continue;
        }
        let a = splat_alpha(s, px, py);
        if a < MIN_ALPHA {
            continue;
        }
        f(s, a * transmittance);
        transmittance *= 1.0 - a;
    }
    transmittance
}

fn rows_of(splats: &[PreparedSplat], y: usize) -> Vec<&PreparedSplat> {
    splats
        .iter()
        .filter(|s| y >= s.y_range.0 && y < s.y_range.1)
        .collect()
}

/// Renders `cloud` from `cam` over a constant background.
pub fn render(cloud: &GaussianCloud, cam: &CameraPose, background: [f64; 3]) -> Image {
    let (w, h) = (cam.width(), cam.height());
    let splats = prepare(cloud, cam);
    let mut pixels = vec![[0.0; 3]; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let active = rows_of(&splats, y);
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = [0.0; 3];
            let t = composite(&active, x, y, |s, weight| {
                for ch in 0..3 {
                    acc[ch] += s.color[ch] * weight;
                }
            });
            for ch in 0..3 {
                out[ch] = (acc[ch] + background[ch] * t).clamp(0.0, 1.0);
            }
        }
    });
    Image {
        width: w,
        height: h,
        pixels,
    }
}

/// Renders every camera in order.
pub fn render_views(cloud: &GaussianCloud, cams: &[CameraPose], background: [f64; 3]) -> Vec<Image> {
    cams.iter().map(|c| render(cloud, c, background)).collect()
}

/// Alpha-weighted mean splat depth; mask marks accumulated alpha ≥ 0.5.
pub fn expected_depth(cloud: &GaussianCloud, cam: &CameraPose) -> DepthMap {
    let (w, h) = (cam.width(), cam.height());
    let splats = prepare(cloud, cam);
    let mut cells = vec![(0.0, false); w * h];
    cells.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let active = rows_of(&splats, y);
        for (x, out) in row.iter_mut().enumerate() {
            let (mut wsum, mut dsum) = (0.0, 0.0);
            composite(&active, x, y, |s, weight| {
                wsum += weight;
                dsum += weight * s.depth;
            });
            *out = if wsum > 0.0 {
                (dsum / wsum, wsum >= 0.5)
            } else {
                (0.0, false)
            };
        }
    });
    DepthMap {
        width: w,
        height: h,
        depth: cells.iter().map(|c| c.0).collect(),
        mask: cells.iter().map(|c| c.1).collect(),
    }
}
