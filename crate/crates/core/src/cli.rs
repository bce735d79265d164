//! The `mvfuse` command line: argument parsing, config merging and the
//! subcommand drivers.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    evaluate_eps_mse, fit_linear_denoiser, ConditionVector, Denoiser, FitConfig, JitteredOracleDenoiser,
    LinearDenoiser, MultiViewLatent, NoiseSchedule, OracleDenoiser, ScheduleConfig, TrainingScene,
};
use crate::error::{Error, Result};
use crate::geometry::{make_orbit_cameras, CameraPose};
use crate::gsplat::{GaussianCloud, Image};
use crate::metrics::{self, EvalReport, FlowParams};
use crate::recon::{reconstruct_grid, to_gaussians, ReconConfig};
use crate::sampler::{sample_3d_aware, sample_plain, write_trace_jsonl, LatentCodec, SamplerConfig, SampleTrace};
use crate::scenes::{self, load_dataset, Dataset, Manifest, SceneKind, SceneSpec};
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Added to the sampling seed to seed the jitter field, so the two streams
/// never coincide.
pub const JITTER_SEED_OFFSET: u64 = 0x5EED_0000;

#[derive(Debug, Parser)]
#[command(name = "mvfuse", version, about = "Multi-view DDIM sampling with 3D-aware substitution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural scene cloud.
    GenScene,
    /// Render a scene cloud (JSON file or directory holding scene.json) into a dataset.
    Render { scene: PathBuf },
    /// Fit the ridge denoiser on one or more datasets.
    FitDenoiser {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Sample multi-view images for a dataset's cameras.
    Sample { dataset: PathBuf },
    /// Fuse a directory of views and cameras into a Gaussian cloud.
    Reconstruct { dataset: PathBuf },
    /// Compare a test directory against a reference directory.
    Eval { reference: PathBuf, test: PathBuf },
    /// Run plain and aware sampling over several seeds.
    Compare { dataset: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Plain,
    Aware,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON run config; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seeds the scene, sampler and fit
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// oracle | jitter:G | linear:PATH
    #[arg(long, global = true)]
    pub denoiser: Option<String>,
    #[arg(long, global = true)]
    pub views: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub elevation: Option<f64>,
    /// Square image size in pixels
    #[arg(long, global = true)]
    pub size: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Substitution threshold timestep; negative disables
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub ts: Option<i64>,
    /// Substitute every k-th eligible step
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// identity | avgpool2
    #[arg(long, global = true)]
    pub codec: Option<String>,
    /// Comma-separated metric names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// blob-cluster | ring | box-stack
    #[arg(long, global = true)]
    pub kind: Option<String>,
    #[arg(long, global = true)]
    pub primitives: Option<usize>,
    /// Seed count for compare
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Voxel grid resolution
    #[arg(long, global = true)]
    pub res: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitConfig {
    pub views: usize,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            views: 24,
            elevation_deg: 20.0,
            radius: crate::geometry::DEFAULT_RADIUS,
            fov_deg: crate::geometry::DEFAULT_FOV_DEG,
            width: crate::geometry::DEFAULT_IMAGE_SIZE,
            height: crate::geometry::DEFAULT_IMAGE_SIZE,
        }
    }
}

impl OrbitConfig {
    pub fn cameras(&self) -> Result<Vec<CameraPose>> {
        make_orbit_cameras(
            self.views,
            self.elevation_deg,
            self.radius,
            self.fov_deg,
            self.width,
            self.height,
        )
    }
}

pub const ALL_METRICS: [&str; 6] = ["psnr", "ssim", "warp_rmse_f1", "warp_rmse_f6", "chamfer", "volume_iou"];

fn default_metrics() -> Vec<String> {
    ALL_METRICS.iter().map(|s| s.to_string()).collect()
}

/// Config file contents merged with flags; written as `resolved_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub scene: SceneSpec,
    pub cameras: OrbitConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub recon: ReconConfig,
    pub fit: FitConfig,
    pub mode: Mode,
    pub denoiser: String,
    pub seeds: usize,
    pub metrics: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            inputs: Vec::new(),
            seed: 0,
            scene: SceneSpec::new(SceneKind::BlobCluster, 6, 0),
            cameras: OrbitConfig::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            recon: ReconConfig::default(),
            fit: FitConfig::default(),
            mode: Mode::Plain,
            denoiser: "oracle".into(),
            seeds: 20,
            metrics: default_metrics(),
        }
    }
}

impl RunConfig {
    /// Reads the optional config file and applies flag overrides. `--seed`
    /// replaces every seed in the config.
    pub fn resolve(flags: &Flags, command: &Command) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &flags.config {
            Some(path) => io::read_json(path)?,
            None => RunConfig::default(),
        };
        let (name, inputs) = command.describe();
        cfg.command = name.into();
        cfg.inputs = inputs;
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
            cfg.scene.seed = seed;
            cfg.sampler.seed = seed;
            cfg.fit.seed = seed;
        }
        if let Some(m) = flags.mode {
            cfg.mode = m;
        }
        if let Some(d) = &flags.denoiser {
            cfg.denoiser = d.clone();
        }
        if let Some(v) = flags.views {
            cfg.cameras.views = v;
        }
        if let Some(e) = flags.elevation {
            cfg.cameras.elevation_deg = e;
        }
        if let Some(s) = flags.size {
            cfg.cameras.width = s;
            cfg.cameras.height = s;
        }
        if let Some(n) = flags.steps {
            cfg.sampler.n_steps = n;
        }
        if let Some(e) = flags.eta {
            cfg.sampler.eta = e;
        }
        if let Some(t) = flags.ts {
            cfg.sampler.t_s = t;
        }
        if let Some(k) = flags.k {
            cfg.sampler.k = k;
        }
        if let Some(c) = &flags.codec {
            cfg.sampler.codec = c.parse()?;
        }
        if let Some(m) = &flags.metrics {
            cfg.metrics = m.clone();
        }
        if let Some(k) = &flags.kind {
            cfg.scene.kind = k.parse()?;
        }
        if let Some(n) = flags.primitives {
            cfg.scene.n_primitives = n;
        }
        if let Some(n) = flags.seeds {
            cfg.seeds = n;
        }
        if let Some(r) = flags.res {
            cfg.recon.res = r;
        }
        for m in &cfg.metrics {
            if !ALL_METRICS.contains(&m.as_str()) {
                return Err(Error::invalid(format!("unknown metric '{m}'")));
            }
        }
        DenoiserChoice::parse(&cfg.denoiser)?;
        cfg.sampler.validate(&cfg.schedule()?)?;
        cfg.scene.validate()?;
        Ok(cfg)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build(self.sampler.n_steps)
    }

    fn wants(&self, metric: &str) -> bool {
        self.metrics.iter().any(|m| m == metric)
    }
}

impl Command {
    fn describe(&self) -> (&'static str, Vec<PathBuf>) {
        match self {
            Command::GenScene => ("gen-scene", vec![]),
            Command::Render { scene } => ("render", vec![scene.clone()]),
            Command::FitDenoiser { datasets } => ("fit-denoiser", datasets.clone()),
            Command::Sample { dataset } => ("sample", vec![dataset.clone()]),
            Command::Reconstruct { dataset } => ("reconstruct", vec![dataset.clone()]),
            Command::Eval { reference, test } => ("eval", vec![reference.clone(), test.clone()]),
            Command::Compare { dataset } => ("compare", vec![dataset.clone()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserChoice {
    Oracle,
    Jitter(f64),
    Linear(PathBuf),
}

impl DenoiserChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(DenoiserChoice::Oracle);
        }
        if let Some(g) = s.strip_prefix("jitter:") {
            let gamma: f64 = g
                .parse()
                .map_err(|_| Error::invalid(format!("bad jitter gamma '{g}'")))?;
            if !(gamma >= 0.0) || !gamma.is_finite() {
                return Err(Error::invalid(format!("jitter gamma must be >= 0, got {g}")));
            }
            return Ok(DenoiserChoice::Jitter(gamma));
        }
        if let Some(p) = s.strip_prefix("linear:") {
            if p.is_empty() {
                return Err(Error::invalid("linear denoiser needs a path"));
            }
            return Ok(DenoiserChoice::Linear(PathBuf::from(p)));
        }
        Err(Error::invalid(format!("unknown denoiser '{s}' (oracle|jitter:G|linear:PATH)")))
    }

    fn build(&self, z0: &MultiViewLatent, seed: u64, sched: &NoiseSchedule) -> Result<Box<dyn Denoiser + Send>> {
        Ok(match self {
            DenoiserChoice::Oracle => Box::new(OracleDenoiser::new(z0.clone(), sched.clone())),
            DenoiserChoice::Jitter(g) => Box::new(JitteredOracleDenoiser::new(
                z0,
                *g,
                seed.wrapping_add(JITTER_SEED_OFFSET),
                sched.clone(),
            )?),
            DenoiserChoice::Linear(stem) => Box::new(LinearDenoiser::load(stem)?),
        })
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e @ Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            eprintln!("run `mvfuse --help` for usage");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Sizes the global rayon pool from `MV_THREADS` (0 or unset = automatic).
/// Only the first call in a process takes effect.
pub fn configure_threads() {
    let n = std::env::var("MV_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.flags, &cli.command)?;
    let out = cli.flags.out.as_path();
    match &cli.command {
        Command::GenScene => gen_scene(&cfg, out),
        Command::Render { scene } => render(&cfg, scene, out),
        Command::FitDenoiser { datasets } => fit_denoiser(&cfg, datasets, out),
        Command::Sample { dataset } => sample(&cfg, dataset, out),
        Command::Reconstruct { dataset } => reconstruct_cmd(&cfg, dataset, out),
        Command::Eval { reference, test } => eval(&cfg, reference, test, out),
        Command::Compare { dataset } => compare(&cfg, dataset, out),
    }
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    io::write_json(&out.join("resolved_config.json"), cfg)
}

fn gen_scene(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cloud = scenes::generate_scene(&cfg.scene)?;
    io::write_json(&out.join("scene.json"), &cloud)?;
    io::write_json(&out.join("scene_spec.json"), &cfg.scene)?;
    write_resolved(cfg, out)
}

fn render(cfg: &RunConfig, scene: &Path, out: &Path) -> Result<()> {
    let (cloud_path, spec_path) = if scene.is_dir() {
        (scene.join("scene.json"), Some(scene.join("scene_spec.json")))
    } else {
        (scene.to_path_buf(), scene.parent().map(|p| p.join("scene_spec.json")))
    };
    let cloud: GaussianCloud = io::read_json(&cloud_path)?;
    let spec: Option<SceneSpec> = match spec_path.filter(|p| p.is_file()) {
        Some(p) => Some(io::read_json(&p)?),
        None => None,
    };
    let cams = cfg.cameras.cameras()?;
    scenes::render_dataset(&cloud, &cams, cfg.sampler.background, out, spec.as_ref())?;
    write_resolved(cfg, out)
}

/// Clean latent of a dataset: encoded exact renders when the scene cloud is
/// present, otherwise the encoded stored views.
fn dataset_latent(ds: &Dataset, codec: &impl LatentCodec) -> Result<MultiViewLatent> {
    match &ds.cloud {
        Some(cloud) => scenes::scene_latents(cloud, &ds.cams, codec, ds.manifest.background),
        None => codec.encode(&ds.images),
    }
}

fn fit_denoiser(cfg: &RunConfig, datasets: &[PathBuf], out: &Path) -> Result<()> {
    let sched = cfg.schedule()?;
    let scenes = datasets
        .iter()
        .map(|d| {
            let ds = load_dataset(d)?;
            Ok(TrainingScene {
                z0: dataset_latent(&ds, &cfg.sampler.codec)?,
                cams: ds.cams,
                y: ConditionVector::default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = fit_linear_denoiser(&scenes, &sched, &cfg.fit)?;
    model.save(&out.join("linear_denoiser"))?;
    let mse = evaluate_eps_mse(&model, &scenes, &sched, cfg.fit.n_draws, cfg.fit.seed.wrapping_add(1))?;
    io::write_json(&out.join("fit_report.json"), &mse)?;
    write_resolved(cfg, out)
}

struct SampleOutput {
    latent: MultiViewLatent,
    images: Vec<Image>,
    cloud: Option<GaussianCloud>,
    trace: SampleTrace,
}

fn sample_once(cfg: &RunConfig, sampler: &SamplerConfig, ds: &Dataset, mode: Mode) -> Result<SampleOutput> {
    let sched = cfg.schedule()?;
    let codec = sampler.codec;
    let z0 = dataset_latent(ds, &codec)?;
    let denoiser = DenoiserChoice::parse(&cfg.denoiser)?.build(&z0, sampler.seed, &sched)?;
    let y = ConditionVector::default();
    let (latent, cloud, trace) = match mode {
        Mode::Plain => {
            let (z, trace) = sample_plain(&denoiser, &ds.cams, &y, &sched, sampler, Some(&z0))?;
            (z, None, trace)
        }
        Mode::Aware => {
            let (z, cloud, trace) = sample_3d_aware(&denoiser, &ds.cams, &y, &sched, sampler, &cfg.recon, Some(&z0))?;
            (z, Some(cloud), trace)
        }
    };
    let images = codec.decode(&latent)?;
    Ok(SampleOutput {
        latent,
        images,
        cloud,
        trace,
    })
}

/// Writes a sampler result as a dataset-shaped directory.
fn write_sample(out: &Path, ds: &Dataset, res: &SampleOutput) -> Result<()> {
    for (i, img) in res.images.iter().enumerate() {
        io::write_ppm(&out.join(scenes::view_file_name(i)), img)?;
    }
    io::write_json(&out.join("cameras.json"), &ds.cams)?;
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            scene: None,
            ..ds.manifest.clone()
        },
    )?;
    io::save_latent(&out.join("latent"), &res.latent)?;
    write_trace_jsonl(&out.join("trace.jsonl"), &res.trace)?;
    if let Some(cloud) = &res.cloud {
        io::write_json(&out.join("cloud.json"), cloud)?;
    }
    Ok(())
}

/// Sampler settings with the dataset's background.
fn dataset_sampler(cfg: &RunConfig, ds: &Dataset) -> SamplerConfig {
    SamplerConfig {
        background: ds.manifest.background,
        ..cfg.sampler
    }
}

fn sample(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let mut cfg = cfg.clone();
    cfg.sampler = dataset_sampler(&cfg, &ds);
    cfg.recon.background = ds.manifest.background;
    let res = sample_once(&cfg, &cfg.sampler, &ds, cfg.mode)?;
    write_sample(out, &ds, &res)?;
    write_resolved(&cfg, out)
}

fn read_views_and_cams(dir: &Path) -> Result<(Vec<Image>, Vec<CameraPose>, Option<Manifest>)> {
    let cams: Vec<CameraPose> = io::read_json(&dir.join("cameras.json"))?;
    let images = scenes::load_views(dir, cams.len())?;
    let manifest_path = dir.join("manifest.json");
    let manifest = if manifest_path.is_file() {
        Some(io::read_json(&manifest_path)?)
    } else {
        None
    };
    Ok((images, cams, manifest))
}

fn reconstruct_cmd(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let (images, cams, manifest) = read_views_and_cams(dataset)?;
    let mut cfg = cfg.clone();
    if let Some(m) = manifest {
        cfg.recon.background = m.background;
    }
    let grid = reconstruct_grid(&images, &cams, &cfg.recon)?;
    io::write_json(&out.join("cloud.json"), &to_gaussians(&grid)?)?;
    grid.save(&out.join("grid"))?;
    write_resolved(&cfg, out)
}

/// Images of an evaluation directory plus whatever geometry it carries.
struct EvalInput {
    images: Vec<Image>,
    cams: Option<Vec<CameraPose>>,
    cloud: Option<GaussianCloud>,
    background: Option<[f64; 3]>,
}

fn read_eval_input(dir: &Path) -> Result<EvalInput> {
    let cams_path = dir.join("cameras.json");
    let cams: Option<Vec<CameraPose>> = if cams_path.is_file() {
        Some(io::read_json(&cams_path)?)
    } else {
        None
    };
    let f = match &cams {
        Some(c) => c.len(),
        None => scenes::count_views(dir),
    };
    if f == 0 {
        return Err(Error::invalid(format!("no views found in {}", dir.display())));
    }
    let images = scenes::load_views(dir, f)?;
    let cloud = ["cloud.json", "scene.json"]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .map(|p| io::read_json(&p))
        .transpose()?;
    let manifest_path = dir.join("manifest.json");
    let background = if manifest_path.is_file() {
        Some(io::read_json::<Manifest>(&manifest_path)?.background)
    } else {
        None
    };
    Ok(EvalInput {
        images,
        cams,
        cloud,
        background,
    })
}

fn warp_fields(cfg: &RunConfig, frames: &[Image], flow: &FlowParams, report: &mut EvalReport) -> Result<()> {
    if cfg.wants("warp_rmse_f1") {
        report.warp_rmse_f1 = metrics::warp_rmse_opt(frames, 1, flow)?;
    }
    if cfg.wants("warp_rmse_f6") && frames.len() >= 6 {
        report.warp_rmse_f6 = metrics::warp_rmse_opt(frames, 6, flow)?;
    }
    Ok(())
}

/// `report.json` holds the test directory's metrics (fidelity measured
/// against the reference); `reference_report.json` holds the reference's
/// own consistency metrics.
fn eval(cfg: &RunConfig, reference: &Path, test: &Path, out: &Path) -> Result<()> {
    let a = read_eval_input(reference)?;
    let b = read_eval_input(test)?;
    if a.images.len() != b.images.len() {
        return Err(Error::invalid("reference and test view counts differ"));
    }
    let mut cfg = cfg.clone();
    if let Some(bg) = a.background.or(b.background) {
        cfg.recon.background = bg;
    }
    let flow = FlowParams::with_background(cfg.recon.background);
    let mut report = EvalReport::default();
    if cfg.wants("psnr") {
        report.psnr_mean = Some(metrics::mean_over_views(&a.images, &b.images, metrics::psnr)?);
    }
    if cfg.wants("ssim") {
        report.ssim_mean = Some(metrics::mean_over_views(&a.images, &b.images, metrics::ssim)?);
    }
    warp_fields(&cfg, &b.images, &flow, &mut report)?;
    if cfg.wants("chamfer") {
        if let (Some(ca), Some(cb)) = (&a.cloud, &b.cloud) {
            if !ca.is_empty() && !cb.is_empty() {
                report.chamfer = Some(metrics::chamfer(&ca.centers(), &cb.centers())?);
            }
        }
    }
    if cfg.wants("volume_iou") {
        if let (Some(ka), Some(kb)) = (&a.cams, &b.cams) {
            let ga = reconstruct_grid(&a.images, ka, &cfg.recon)?;
            let gb = reconstruct_grid(&b.images, kb, &cfg.recon)?;
            report.volume_iou = Some(metrics::volume_iou(&ga, &gb)?);
        }
    }
    let mut reference_report = EvalReport::default();
    warp_fields(&cfg, &a.images, &flow, &mut reference_report)?;
    io::write_json(&out.join("report.json"), &report)?;
    io::write_json(&out.join("reference_report.json"), &reference_report)?;
    write_resolved(&cfg, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScores {
    pub warp_rmse_f1: Option<f64>,
    pub warp_rmse_f6: Option<f64>,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub plain: ModeScores,
    pub aware: ModeScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub per_seed: Vec<SeedResult>,
    /// Fraction of seeds where aware ≤ plain.
    pub win_rate_f1: Option<f64>,
    pub win_rate_f6: Option<f64>,
    /// Median of `(plain − aware) / plain`.
    pub median_reduction_f1: Option<f64>,
    pub median_reduction_f6: Option<f64>,
    pub psnr_plain_mean: f64,
    pub psnr_aware_mean: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl CompareReport {
    pub fn from_seeds(per_seed: Vec<SeedResult>) -> Self {
        let pick = |m: &ModeScores, f6: bool| if f6 { m.warp_rmse_f6 } else { m.warp_rmse_f1 };
        let stats = |f6: bool| {
            let pairs: Vec<(f64, f64)> = per_seed
                .iter()
                .filter_map(|s| Some((pick(&s.plain, f6)?, pick(&s.aware, f6)?)))
                .collect();
            if pairs.is_empty() {
                return (None, None);
            }
            let wins = pairs.iter().filter(|(p, a)| a <= p).count();
            let reductions = pairs
                .iter()
                .map(|(p, a)| if *p > 0.0 { (p - a) / p } else { 0.0 })
                .collect();
            (Some(wins as f64 / pairs.len() as f64), median(reductions))
        };
        let (win_rate_f1, median_reduction_f1) = stats(false);
        let (win_rate_f6, median_reduction_f6) = stats(true);
        let n = per_seed.len().max(1) as f64;
        CompareReport {
            psnr_plain_mean: per_seed.iter().map(|s| s.plain.psnr).sum::<f64>() / n,
            psnr_aware_mean: per_seed.iter().map(|s| s.aware.psnr).sum::<f64>() / n,
            per_seed,
            win_rate_f1,
            win_rate_f6,
            median_reduction_f1,
            median_reduction_f6,
        }
    }
}

fn compare(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    if cfg.seeds == 0 {
        return Err(Error::invalid("compare needs at least one seed"));
    }
    let mut cfg = cfg.clone();
    cfg.sampler = dataset_sampler(&cfg, &ds);
    cfg.recon.background = ds.manifest.background;
    let truth = match &ds.cloud {
        Some(c) => crate::gsplat::render_views(c, &ds.cams, ds.manifest.background),
        None => ds.images.clone(),
    };
    let flow = FlowParams::with_background(ds.manifest.background);
    let mut per_seed = Vec::with_capacity(cfg.seeds);
    for i in 0..cfg.seeds as u64 {
        let seed = cfg.sampler.seed.wrapping_add(i);
        let sampler = SamplerConfig { seed, ..cfg.sampler };
        let dir = out.join(format!("seed_{seed:03}"));
        let mut scores = Vec::with_capacity(2);
        for mode in [Mode::Plain, Mode::Aware] {
            let res = sample_once(&cfg, &sampler, &ds, mode)?;
            let sub = dir.join(match mode {
                Mode::Plain => "plain",
                Mode::Aware => "aware",
            });
            write_sample(&sub, &ds, &res)?;
            scores.push(ModeScores {
                warp_rmse_f1: metrics::warp_rmse_opt(&res.images, 1, &flow)?,
                warp_rmse_f6: if res.images.len() >= 6 {
                    metrics::warp_rmse_opt(&res.images, 6, &flow)?
                } else {
                    None
                },
                psnr: metrics::mean_over_views(&res.images, &truth, metrics::psnr)?,
            });
        }
        let aware = scores.pop().unwrap();
        let plain = scores.pop().unwrap();
        per_seed.push(SeedResult { seed, plain, aware });
    }
    io::write_json(&out.join("report.json"), &CompareReport::from_seeds(per_seed))?;
    write_resolved(&cfg, out)
}
