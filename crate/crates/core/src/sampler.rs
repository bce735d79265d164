//! Plain DDIM sampling and 3D-aware sampling with reconstructed-z₀
//! substitution, plus the analytic latent codecs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddim_step, predict_z0, strided_steps, ConditionVector, DdimStep, Denoiser, MultiViewLatent, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::gsplat::{render_views, GaussianCloud, Image};
use crate::recon::{reconstruct, ReconConfig};

/// Maps between `[-1, 1]` latents and `[0, 1]` images. Latents carry three
/// channels; image dims are `scale()` times the latent dims.
pub trait LatentCodec: Sync {
    fn scale(&self) -> usize;
    fn decode(&self, z: &MultiViewLatent) -> Result<Vec<Image>>;
    fn encode(&self, images: &[Image]) -> Result<MultiViewLatent>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    #[default]
    Identity,
    Avgpool2,
}

impl std::str::FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CodecKind::Identity),
            "avgpool2" => Ok(CodecKind::Avgpool2),
            _ => Err(Error::invalid(format!("unknown codec '{s}' (identity|avgpool2)"))),
        }
    }
}

pub fn identity_codec() -> CodecKind {
    CodecKind::Identity
}

pub fn avgpool2_codec() -> CodecKind {
    CodecKind::Avgpool2
}

fn to_pixel(v: f64) -> f64 {
    ((v + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn latent_view_image(z: &MultiViewLatent, v: usize) -> Image {
    let view = z.view(v);
    let pixels = view
        .chunks_exact(3)
        .map(|p| [to_pixel(p[0]), to_pixel(p[1]), to_pixel(p[2])])
        .collect();
    Image {
        width: z.width,
        height: z.height,
        pixels,
    }
}

/// Bilinear 2× upsampling with half-pixel centers and edge clamping.
fn upsample2(img: &Image) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = Image::filled(2 * w, 2 * h, [0.0; 3]);
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    for y in 0..2 * h {
        let (y0, y1, fy) = coord(y, h);
        for x in 0..2 * w {
            let (x0, x1, fx) = coord(x, w);
            let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            let mut p = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] * (1.0 - fx) + b[ch] * fx;
                let bot = c[ch] * (1.0 - fx) + d[ch] * fx;
                p[ch] = top * (1.0 - fy) + bot * fy;
            }
            out.set(x, y, p);
        }
    }
    out
}

impl LatentCodec for CodecKind {
    fn scale(&self) -> usize {
        match self {
            CodecKind::Identity => 1,
            CodecKind::Avgpool2 => 2,
        }
    }

    fn decode(&self, z: &MultiViewLatent) -> Result<Vec<Image>> {
        if z.channels != 3 {
            return Err(Error::invalid(format!("codec expects 3 latent channels, got {}", z.channels)));
        }
        Ok((0..z.views)
            .into_par_iter()
            .map(|v| {
                let img = latent_view_image(z, v);
                match self {
                    CodecKind::Identity => img,
                    CodecKind::Avgpool2 => upsample2(&img),
                }
            })
            .collect())
    }

    fn encode(&self, images: &[Image]) -> Result<MultiViewLatent> {
        let first = images.first().ok_or_else(|| Error::invalid("no images to encode"))?;
        let s = self.scale();
        if images.iter().any(|i| !i.same_dims(first)) {
            return Err(Error::invalid("images to encode differ in size"));
        }
        if first.width % s != 0 || first.height % s != 0 {
            return Err(Error::invalid(format!(
                "{}x{} images are not divisible by codec scale {s}",
                first.width, first.height
            )));
        }
        let (w, h) = (first.width / s, first.height / s);
        let norm = (s * s) as f64;
        let views: Vec<Vec<f64>> = images
            .par_iter()
            .map(|img| {
                let mut out = Vec::with_capacity(w * h * 3);
                for y in 0..h {
                    for x in 0..w {
                        let mut p = [0.0; 3];
                        for dy in 0..s {
                            for dx in 0..s {
                                let q = img.get(s * x + dx, s * y + dy);
                                for c in 0..3 {
                                    p[c] += q[c];
                                }
                            }
                        }
                        out.extend(p.map(|v| 2.0 * v / norm - 1.0));
                    }
                }
                out
            })
            .collect();
        MultiViewLatent::from_data(images.len(), h, w, 3, views.concat())
    }
}

/// Latent `(height, width)` implied by the cameras and codec.
pub fn latent_dims(cams: &[CameraPose], codec: &impl LatentCodec) -> Result<(usize, usize)> {
    let first = cams.first().ok_or_else(|| Error::invalid("no cameras"))?;
    let (w, h) = (first.width(), first.height());
    if cams.iter().any(|c| c.width() != w || c.height() != h) {
        return Err(Error::invalid("cameras differ in image size"));
    }
    let s = codec.scale();
    if w % s != 0 || h % s != 0 {
        return Err(Error::invalid(format!("{w}x{h} images are not divisible by codec scale {s}")));
    }
    Ok((h / s, w / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub eta: f64,
    /// Substitution threshold; negative disables substitution entirely.
    pub t_s: i64,
    /// Substitute on every `k`-th eligible iteration.
    pub k: usize,
    pub codec: CodecKind,
    pub seed: u64,
    pub background: [f64; 3],
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 50,
            eta: 0.0,
            t_s: 700,
            k: 10,
            codec: CodecKind::Identity,
            seed: 0,
            background: [0.5; 3],
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.n_steps == 0 || self.n_steps > sched.train_steps() {
            return Err(Error::invalid(format!("n_steps must be in [1, T], got {}", self.n_steps)));
        }
        if self.k == 0 {
            return Err(Error::invalid("substitution period k must be >= 1"));
        }
        if self.t_s >= sched.train_steps() as i64 {
            return Err(Error::invalid(format!("t_s must be < T, got {}", self.t_s)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must be in [0,1], got {}", self.eta)));
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("background must lie in [0,1]"));
        }
        Ok(())
    }

    /// Per-iteration substitution flags for the given timesteps.
    pub fn substitution_plan(&self, steps: &[usize]) -> Vec<bool> {
        if self.t_s < 0 {
            return vec![false; steps.len()];
        }
        let mut eligible = 0;
        steps
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut sub = false;
                if t as i64 <= self.t_s {
                    sub = eligible % self.k == 0;
                    eligible += 1;
                }
                sub || i + 1 == steps.len()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub t: usize,
    pub t_prev: Option<usize>,
    pub substituted: bool,
    /// Substitution was scheduled but reconstruction came back empty.
    pub skipped_empty: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_z0_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussians: Option<usize>,
}

pub type SampleTrace = Vec<TraceRecord>;

pub fn write_trace_jsonl(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in trace {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::invalid(e.to_string()))?;
        buf.push(b'\n');
    }
    crate::io::write_bytes(path, &buf)
}

pub fn read_trace_jsonl(path: &Path) -> Result<SampleTrace> {
    let bytes = crate::io::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(path, e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

/// Optional ground truth and reconstruction settings for one run.
struct Run<'a> {
    truth: Option<&'a MultiViewLatent>,
    recon: Option<&'a ReconConfig>,
}

fn run_loop<D: Denoiser + ?Sized>(
    denoiser: &D,
    cams: &[CameraPose],
    y: &ConditionVector,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    opts: Run<'_>,
) -> Result<(MultiViewLatent, GaussianCloud, SampleTrace)> {
    cfg.validate(sched)?;
    let (h, w) = latent_dims(cams, &cfg.codec)?;
    let f = cams.len();
    if let Some(truth) = opts.truth {
        if truth.shape() != [f, h, w, 3] {
            return Err(Error::invalid("ground-truth latent shape does not match the cameras"));
        }
    }
    let steps = strided_steps(sched.train_steps(), cfg.n_steps)?;
    let plan = match opts.recon {
        Some(_) => cfg.substitution_plan(&steps),
        None => vec![false; steps.len()],
    };
    let recon_cfg = opts.recon.map(|r| ReconConfig {
        background: cfg.background,
        ..*r
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = MultiViewLatent::standard_normal(&mut rng, f, h, w, 3);
    let mut cloud = GaussianCloud::default();
    let mut trace = Vec::with_capacity(steps.len());
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied();
        let eps = denoiser.predict_noise(&z, t, cams, y)?;
        let noise = (cfg.eta > 0.0).then(|| MultiViewLatent::standard_normal(&mut rng, f, h, w, 3));
        let need_z0 = plan[i] || opts.truth.is_some();
        let z0_hat = if need_z0 { Some(predict_z0(&z, &eps, t, sched)?) } else { None };

        let mut record = TraceRecord {
            iteration: i,
            t,
            t_prev,
            substituted: false,
            skipped_empty: false,
            pred_z0_rmse: match (opts.truth, &z0_hat) {
                (Some(truth), Some(p)) => Some(p.rmse(truth)?),
                _ => None,
            },
            gaussians: None,
        };
        let mut z0_override = None;
        if let (true, Some(rc), Some(pred)) = (plan[i], recon_cfg.as_ref(), &z0_hat) {
            let images = cfg.codec.decode(pred)?;
            let built = reconstruct(&images, cams, rc)?;
            record.gaussians = Some(built.len());
            if built.is_empty() {
                record.skipped_empty = true;
            } else {
                let renders = render_views(&built, cams, cfg.background);
                z0_override = Some(cfg.codec.encode(&renders)?);
                record.substituted = true;
                cloud = built;
            }
        }
        z = ddim_step(
            &z,
            &eps,
            DdimStep {
                t,
                t_prev,
                eta: cfg.eta,
                noise: noise.as_ref(),
                z0_override: z0_override.as_ref(),
            },
            sched,
        )?;
        trace.push(record);
    }
    Ok((z, cloud, trace))
}

/// DDIM from seeded noise over `strided_steps(T, cfg.n_steps)`.
pub fn sample_plain<D: Denoiser + ?Sized>(
    denoiser: &D,
    cams: &[CameraPose],
    y: &ConditionVector,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    truth: Option<&MultiViewLatent>,
) -> Result<(MultiViewLatent, SampleTrace)> {
    let (z, _, trace) = run_loop(denoiser, cams, y, sched, cfg, Run { truth, recon: None })?;
    Ok((z, trace))
}

/// DDIM where scheduled iterations replace the predicted z₀ by renders of a
/// model fused from it. Reconstruction uses `cfg.background`. The returned
/// cloud is the last non-empty reconstruction.
pub fn sample_3d_aware<D: Denoiser + ?Sized>(
    denoiser: &D,
    cams: &[CameraPose],
    y: &ConditionVector,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    recon_cfg: &ReconConfig,
    truth: Option<&MultiViewLatent>,
) -> Result<(MultiViewLatent, GaussianCloud, SampleTrace)> {
    run_loop(
        denoiser,
        cams,
        y,
        sched,
        cfg,
        Run {
            truth,
            recon: Some(recon_cfg),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::OracleDenoiser;
    use crate::geometry::make_orbit_cameras;
    use crate::gsplat::Gaussian;
    use rand::Rng;

    fn random_latent(seed: u64, f: usize, h: usize, w: usize) -> MultiViewLatent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..f * h * w * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        MultiViewLatent::from_data(f, h, w, 3, data).unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let z = random_latent(0, 2, 5, 4);
        let back = identity_codec().encode(&identity_codec().decode(&z).unwrap()).unwrap();
        assert!(back.rmse(&z).unwrap() < 1e-7);
        let img = &identity_codec().decode(&z).unwrap()[1];
        assert_eq!((img.width, img.height), (4, 5));
    }

    #[test]
    fn decode_clamps() {
        let z = MultiViewLatent::from_data(1, 1, 1, 3, vec![-3.0, 0.0, 3.0]).unwrap();
        assert_eq!(identity_codec().decode(&z).unwrap()[0].pixels[0], [0.0, 0.5, 1.0]);
    }

    #[test]
    fn avgpool2_constant_round_trip() {
        let z = MultiViewLatent::from_data(2, 3, 3, 3, [0.3, -0.6, 0.9].repeat(18)).unwrap();
        let imgs = avgpool2_codec().decode(&z).unwrap();
        assert_eq!((imgs[0].width, imgs[0].height), (6, 6));
        let back = avgpool2_codec().encode(&imgs).unwrap();
        assert!(back.rmse(&z).unwrap() < 1e-6);
    }

    #[test]
    fn avgpool2_block_means() {
        // 4x4 image, 2x2 blocks with values 0.1, 0.3 / 0.5, 0.9 plus a
        // zero-mean checker inside each block
        let means = [[0.1, 0.3], [0.5, 0.9]];
        let mut img = Image::filled(4, 4, [0.0; 3]);
        for y in 0..4 {
            for x in 0..4 {
                let d = if (x + y) % 2 == 0 { 0.05 } else { -0.05 };
                img.set(x, y, [means[y / 2][x / 2] + d; 3]);
            }
        }
        let z = avgpool2_codec().encode(&[img]).unwrap();
        let expect = [0.1, 0.3, 0.5, 0.9].map(|m| 2.0 * m - 1.0);
        for (i, e) in expect.iter().enumerate() {
            for c in 0..3 {
                assert!((z.data[3 * i + c] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn codec_dimension_errors() {
        let odd = Image::filled(5, 4, [0.5; 3]);
        assert!(avgpool2_codec().encode(&[odd]).is_err());
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(2, 2, [0.5; 3]);
        assert!(identity_codec().encode(&[a, b]).is_err());
        assert!(identity_codec().encode(&[]).is_err());
        assert!(identity_codec().decode(&MultiViewLatent::zeros(1, 2, 2, 4)).is_err());
        assert_eq!("avgpool2".parse::<CodecKind>().unwrap(), CodecKind::Avgpool2);
        assert!("jpeg".parse::<CodecKind>().is_err());
    }

    #[test]
    fn substitution_plan_rule() {
        let steps = strided_steps(1000, 50).unwrap();
        let cfg = SamplerConfig::default();
        let plan = cfg.substitution_plan(&steps);
        let eligible: Vec<usize> = (0..50).filter(|&i| steps[i] <= 700).collect();
        for (i, &p) in plan.iter().enumerate() {
            let by_rule = eligible.iter().position(|&e| e == i).is_some_and(|n| n % 10 == 0);
            assert_eq!(p, by_rule || i == 49, "iteration {i}");
        }
        assert!(plan.iter().filter(|&&p| p).count() >= 3);

        let only_final = SamplerConfig { t_s: 0, ..cfg }.substitution_plan(&steps);
        assert_eq!(only_final.iter().filter(|&&p| p).count(), 1);
        assert!(only_final[49]);
        let off = SamplerConfig { t_s: -1, ..cfg }.substitution_plan(&steps);
        assert!(off.iter().all(|&p| !p));
    }

    fn blob_setup(size: usize) -> (Vec<CameraPose>, GaussianCloud, NoiseSchedule) {
        let cams = make_orbit_cameras(8, 20.0, 2.0, 50.0, size, size).unwrap();
        let cloud = GaussianCloud::new(vec![
            Gaussian::isotropic([0.0, 0.0, 0.0].into(), 0.25, 1.0, [0.9, 0.1, 0.1].into()).unwrap(),
        ]);
        (cams, cloud, NoiseSchedule::default())
    }

    #[test]
    fn oracle_plain_converges_and_is_deterministic() {
        let (cams, cloud, sched) = blob_setup(16);
        let z0 = identity_codec().encode(&render_views(&cloud, &cams, [0.5; 3])).unwrap();
        let oracle = OracleDenoiser::new(z0.clone(), sched.clone());
        let y = ConditionVector::default();
        let cfg = SamplerConfig::default();
        let (z, trace) = sample_plain(&oracle, &cams, &y, &sched, &cfg, Some(&z0)).unwrap();
        assert!(z.rmse(&z0).unwrap() < 1e-4);
        assert_eq!(trace.len(), 50);
        assert!(trace.iter().all(|r| !r.substituted && r.pred_z0_rmse.unwrap() < 1e-6));
        let (again, _) = sample_plain(&oracle, &cams, &y, &sched, &cfg, None).unwrap();
        assert_eq!(z, again);

        let one = SamplerConfig { n_steps: 1, ..cfg };
        let (z1, trace1) = sample_plain(&oracle, &cams, &y, &sched, &one, None).unwrap();
        assert_eq!(trace1.len(), 1);
        assert_eq!((trace1[0].t, trace1[0].t_prev), (999, None));
        assert!(z1.rmse(&z0).unwrap() < 1e-4);
    }

    #[test]
    fn disabled_aware_is_bit_identical_to_plain() {
        let (cams, cloud, sched) = blob_setup(16);
        let z0 = identity_codec().encode(&render_views(&cloud, &cams, [0.5; 3])).unwrap();
        let oracle = OracleDenoiser::new(z0, sched.clone());
        let y = ConditionVector::default();
        for eta in [0.0, 0.5] {
            let cfg = SamplerConfig {
                t_s: -1,
                eta,
                n_steps: 20,
                seed: 7,
                ..Default::default()
            };
            let (plain, _) = sample_plain(&oracle, &cams, &y, &sched, &cfg, None).unwrap();
            let (aware, built, trace) =
                sample_3d_aware(&oracle, &cams, &y, &sched, &cfg, &ReconConfig::default(), None).unwrap();
            assert_eq!(plain, aware);
            assert!(built.is_empty());
            assert!(trace.iter().all(|r| !r.substituted && r.gaussians.is_none()));
        }
    }

    #[test]
    fn forced_final_substitution_returns_consistent_model() {
        let (cams, cloud, sched) = blob_setup(32);
        let truth_imgs = render_views(&cloud, &cams, [0.5; 3]);
        let z0 = identity_codec().encode(&truth_imgs).unwrap();
        let oracle = OracleDenoiser::new(z0, sched.clone());
        let cfg = SamplerConfig {
            t_s: 0,
            ..Default::default()
        };
        let recon = ReconConfig {
            res: 32,
            ..Default::default()
        };
        let y = ConditionVector::default();
        let (z, built, trace) = sample_3d_aware(&oracle, &cams, &y, &sched, &cfg, &recon, None).unwrap();
        assert!(!built.is_empty());
        assert_eq!(trace.iter().filter(|r| r.substituted).count(), 1);
        assert!(trace.last().unwrap().substituted);
        let out = identity_codec().decode(&z).unwrap();
        let renders = render_views(&built, &cams, [0.5; 3]);
        for ((o, r), t) in out.iter().zip(&renders).zip(&truth_imgs) {
            // the final latent is exactly the encoded render of the model
            assert!(crate::metrics::psnr(o, r).unwrap() > 90.0);
            assert!(crate::metrics::psnr(o, t).unwrap() > 20.0);
            assert!(o.pixels.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn empty_reconstruction_is_skipped() {
        let (cams, _, sched) = blob_setup(16);
        let blank = identity_codec().encode(&render_views(&GaussianCloud::default(), &cams, [0.5; 3])).unwrap();
        let oracle = OracleDenoiser::new(blank.clone(), sched.clone());
        let cfg = SamplerConfig {
            n_steps: 10,
            ..Default::default()
        };
        let recon = ReconConfig {
            res: 16,
            ..Default::default()
        };
        let y = ConditionVector::default();
        let (z, built, trace) = sample_3d_aware(&oracle, &cams, &y, &sched, &cfg, &recon, None).unwrap();
        assert!(built.is_empty());
        let last = trace.last().unwrap();
        assert!(last.skipped_empty && !last.substituted);
        assert_eq!(last.gaussians, Some(0));
        assert!(z.rmse(&blank).unwrap() < 1e-4);
    }

    #[test]
    fn invalid_configs() {
        let sched = NoiseSchedule::default();
        let base = SamplerConfig::default();
        assert!(base.validate(&sched).is_ok());
        for bad in [
            SamplerConfig { n_steps: 0, ..base },
            SamplerConfig { k: 0, ..base },
            SamplerConfig { t_s: 1000, ..base },
            SamplerConfig { eta: 1.5, ..base },
        ] {
            assert!(bad.validate(&sched).is_err());
        }
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let trace = vec![
            TraceRecord {
                iteration: 0,
                t: 999,
                t_prev: Some(979),
                substituted: false,
                skipped_empty: false,
                pred_z0_rmse: Some(0.25),
                gaussians: None,
            },
            TraceRecord {
                iteration: 1,
                t: 979,
                t_prev: None,
                substituted: true,
                skipped_empty: false,
                pred_z0_rmse: None,
                gaussians: Some(12),
            },
        ];
        write_trace_jsonl(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_trace_jsonl(&path).unwrap(), trace);
    }
}
