//! Procedural ground-truth scenes and rendered datasets.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::MultiViewLatent;
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::gsplat::{render_views, Gaussian, GaussianCloud, Image};
use crate::io;
use crate::sampler::LatentCodec;

/// Every generated center lies inside this ball.
pub const SCENE_RADIUS: f64 = 0.8;
pub const RING_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    BlobCluster,
    Ring,
    BoxStack,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::BlobCluster, SceneKind::Ring, SceneKind::BoxStack];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::BlobCluster => "blob-cluster",
            SceneKind::Ring => "ring",
            SceneKind::BoxStack => "box-stack",
        }
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scene kind '{s}'")))
    }
}

pub fn default_palette() -> Vec<[f64; 3]> {
    vec![
        [0.9, 0.1, 0.1],
        [0.1, 0.8, 0.2],
        [0.15, 0.25, 0.95],
        [0.95, 0.85, 0.1],
        [0.85, 0.1, 0.85],
        [0.1, 0.85, 0.9],
        [1.0, 0.5, 0.0],
        [0.1, 0.1, 0.1],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub n_primitives: usize,
    #[serde(default = "default_palette")]
    pub palette: Vec<[f64; 3]>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, n_primitives: usize, seed: u64) -> Self {
        SceneSpec {
            kind,
            n_primitives,
            palette: default_palette(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_primitives == 0 {
            return Err(Error::invalid("scene needs at least one primitive"));
        }
        if self.palette.is_empty() {
            return Err(Error::invalid("scene palette is empty"));
        }
        if self.palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("palette colors must lie in [0,1]"));
        }
        Ok(())
    }
}

fn blob_cluster(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Gaussian>> {
    (0..spec.n_primitives)
        .map(|i| {
            // rejection sample a point in the ball of radius 0.45
            let p = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.45..0.45));
                if p.iter().map(|v| v * v).sum::<f64>() <= 0.45 * 0.45 {
                    break p;
                }
            };
            let s = rng.random_range(0.1..0.18);
            let alpha = rng.random_range(0.8..=1.0);
            let c = spec.palette[i % spec.palette.len()];
            Gaussian::isotropic(p.into(), s, alpha, c.into())
        })
        .collect()
}

fn ring(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Gaussian>> {
    let n = spec.n_primitives;
    let s = (0.6 * RING_RADIUS * (std::f64::consts::PI / n as f64).sin()).clamp(0.04, 0.12);
    (0..n)
        .map(|i| {
            let a = (360.0 / n as f64 * i as f64).to_radians();
            let p = [RING_RADIUS * a.cos(), 0.0, RING_RADIUS * a.sin()];
            let alpha = rng.random_range(0.8..=1.0);
            let c = spec.palette[i % spec.palette.len()];
            Gaussian::isotropic(p.into(), s, alpha, c.into())
        })
        .collect()
}

fn box_stack(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Gaussian>> {
    let n = spec.n_primitives;
    let pitch = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let y = -0.5 + (i as f64 + 0.5) * pitch;
            let p = [rng.random_range(-0.1..0.1), y, rng.random_range(-0.1..0.1)];
            let s = [
                rng.random_range(0.12..0.25),
                (0.35 * pitch).min(0.12),
                rng.random_range(0.12..0.25),
            ];
            let alpha = rng.random_range(0.8..=1.0);
            let c = spec.palette[i % spec.palette.len()];
            Gaussian::new(p.into(), s.into(), [1.0, 0.0, 0.0, 0.0], alpha, c.into())
        })
        .collect()
}

/// Deterministic ground-truth cloud for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GaussianCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gaussians = match spec.kind {
        SceneKind::BlobCluster => blob_cluster(spec, &mut rng)?,
        SceneKind::Ring => ring(spec, &mut rng)?,
        SceneKind::BoxStack => box_stack(spec, &mut rng)?,
    };
    Ok(GaussianCloud::new(gaussians))
}

/// `manifest.json` of a rendered dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub f: usize,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
}

pub fn view_file_name(i: usize) -> String {
    format!("view_{i:03}.ppm")
}

/// Writes `view_NNN.ppm` per camera plus `cameras.json`, `scene.json` and
/// `manifest.json`. Views keep the camera order.
pub fn render_dataset(
    cloud: &GaussianCloud,
    cams: &[CameraPose],
    background: [f64; 3],
    out_dir: &Path,
    spec: Option<&SceneSpec>,
) -> Result<Manifest> {
    let first = cams.first().ok_or_else(|| Error::invalid("dataset needs at least one camera"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    for (i, img) in render_views(cloud, cams, background).iter().enumerate() {
        io::write_ppm(&out_dir.join(view_file_name(i)), img)?;
    }
    io::write_json(&out_dir.join("cameras.json"), cams)?;
    io::write_json(&out_dir.join("scene.json"), cloud)?;
    let manifest = Manifest {
        f: cams.len(),
        width: first.width(),
        height: first.height(),
        background,
        seed: spec.map(|s| s.seed),
        scene: spec.cloned(),
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub cams: Vec<CameraPose>,
    pub images: Vec<Image>,
    /// Absent when the directory holds no `scene.json`.
    pub cloud: Option<GaussianCloud>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = io::read_json(&dir.join("manifest.json"))?;
    let cams: Vec<CameraPose> = io::read_json(&dir.join("cameras.json"))?;
    if cams.len() != manifest.f {
        return Err(Error::parse(dir.join("cameras.json"), "camera count differs from manifest"));
    }
    let images = load_views(dir, manifest.f)?;
    let scene = dir.join("scene.json");
    let cloud = if scene.exists() { Some(io::read_json(&scene)?) } else { None };
    Ok(Dataset {
        manifest,
        cams,
        images,
        cloud,
    })
}

/// Reads `view_000.ppm .. view_{f-1}.ppm`.
pub fn load_views(dir: &Path, f: usize) -> Result<Vec<Image>> {
    (0..f).map(|i| io::read_ppm(&dir.join(view_file_name(i)))).collect()
}

/// Counts consecutive `view_NNN.ppm` files from 0.
pub fn count_views(dir: &Path) -> usize {
    (0..).take_while(|&i| dir.join(view_file_name(i)).is_file()).count()
}

/// Encoded renders: the canonical clean latent of a scene.
pub fn scene_latents(
    cloud: &GaussianCloud,
    cams: &[CameraPose],
    codec: &impl LatentCodec,
    background: [f64; 3],
) -> Result<MultiViewLatent> {
    crate::sampler::latent_dims(cams, codec)?;
    codec.encode(&render_views(cloud, cams, background))
}
