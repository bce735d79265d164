//! Independent oracles and helpers shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use mvfuse::geometry::CameraPose;
use mvfuse::gsplat::{GaussianCloud, Image};
use sha2::{Digest, Sha256};

/// Unbounded front-to-back compositor: every Gaussian is evaluated at every
/// pixel with no screen-space rectangle and no low-alpha skip. The EWA
/// footprint is rebuilt from the camera's raw rotation and position.
pub fn brute_force_render(cloud: &GaussianCloud, cam: &CameraPose, bg: [f64; 3]) -> Image {
    let r = cam.rotation();
    let c = cam.position();
    let f = cam.focal();
    let (w, h) = (cam.width(), cam.height());
    struct S {
        mx: f64,
        my: f64,
        inv: [f64; 3],
        depth: f64,
        alpha: f64,
        color: [f64; 3],
    }
    let mut splats: Vec<(usize, S)> = Vec::new();
    for (idx, g) in cloud.gaussians.iter().enumerate() {
        let d = [g.p.x - c.x, g.p.y - c.y, g.p.z - c.z];
        let t: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| r[(i, k)] * d[k]).sum());
        if t[2] <= 0.05 {
            continue;
        }
        // Σ = R_q diag(s²) R_qᵀ with the textbook quaternion matrix
        let [qw, qx, qy, qz] = g.q;
        let n = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
        let (qw, qx, qy, qz) = (qw / n, qx / n, qy / n, qz / n);
        let rq = [
            [1.0 - 2.0 * (qy * qy + qz * qz), 2.0 * (qx * qy - qw * qz), 2.0 * (qx * qz + qw * qy)],
            [2.0 * (qx * qy + qw * qz), 1.0 - 2.0 * (qx * qx + qz * qz), 2.0 * (qy * qz - qw * qx)],
            [2.0 * (qx * qz - qw * qy), 2.0 * (qy * qz + qw * qx), 1.0 - 2.0 * (qx * qx + qy * qy)],
        ];
        let s = [g.s.x, g.s.y, g.s.z];
        let sigma: [[f64; 3]; 3] =
            std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| rq[i][k] * s[k] * s[k] * rq[j][k]).sum()));
        let jac = [
            [f / t[2], 0.0, -f * t[0] / (t[2] * t[2])],
            [0.0, f / t[2], -f * t[1] / (t[2] * t[2])],
        ];
        // M = J·W, cov2 = M Σ Mᵀ + 0.3 I
        let m: [[f64; 3]; 2] = std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| jac[i][k] * r[(k, j)]).sum()));
        let cov = |a: usize, b: usize| -> f64 {
            let mut v = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    v += m[a][i] * sigma[i][j] * m[b][j];
                }
            }
            v
        };
        let (a, b, cc) = (cov(0, 0) + 0.3, 0.5 * (cov(0, 1) + cov(1, 0)), cov(1, 1) + 0.3);
        let det = a * cc - b * b;
        splats.push((
            idx,
            S {
                mx: f * t[0] / t[2] + w as f64 / 2.0,
                my: f * t[1] / t[2] + h as f64 / 2.0,
                inv: [cc / det, -b / det, a / det],
                depth: t[2],
                alpha: g.alpha,
                color: [g.c.x, g.c.y, g.c.z],
            },
        ));
    }
    splats.sort_by(|x, y| x.1.depth.total_cmp(&y.1.depth).then(x.0.cmp(&y.0)));
    let mut img = Image::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for (_, s) in &splats {
                let (dx, dy) = (px - s.mx, py - s.my);
                let q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
                let a = (s.alpha * (-0.5 * q).exp()).min(0.99);
                for ch in 0..3 {
                    acc[ch] += s.color[ch] * a * t;
                }
                t *= 1.0 - a;
            }
            img.set(x, y, std::array::from_fn(|ch| (acc[ch] + bg[ch] * t).clamp(0.0, 1.0)));
        }
    }
    img
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
        .fold(0.0, f64::max)
}

/// Scalar DDIM update written straight from the sampler equation.
pub fn ddim_scalar(z_t: f64, eps: f64, ab: f64, ab_prev: f64, sigma: f64, noise: f64) -> f64 {
    let z0 = (z_t - (1.0 - ab).sqrt() * eps) / ab.sqrt();
    ab_prev.sqrt() * z0 + (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt() * eps + sigma * noise
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), hex);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn mvfuse(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvfuse"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("MV_THREADS", t);
    }
    cmd.output().expect("mvfuse binary runs")
}

pub fn mvfuse_ok(args: &[&str]) {
    let out = mvfuse(args, None);
    assert!(
        out.status.success(),
        "mvfuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// One summary line per acceptance criterion.
pub fn report(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    println!(
        "criterion {id} [{}] {name}: {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
