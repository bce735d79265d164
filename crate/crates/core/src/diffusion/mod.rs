//! Noise schedule, forward diffusion and the DDIM update.

mod denoiser;
mod embedding;
mod ridge;

pub use denoiser::{ConditionVector, Denoiser, JitteredOracleDenoiser, OracleDenoiser};
pub use embedding::{camera_embedding, camera_features, time_embedding, CameraMlp, CAMERA_FEATURES};
pub use ridge::{evaluate_eps_mse, fit_linear_denoiser, Bucket, EpsMse, FitConfig, LinearDenoiser, TrainingScene};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clamp on ᾱ so `1 − ᾱ` never vanishes.
pub const ALPHA_BAR_MAX: f64 = 1.0 - 1e-8;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
pub const DEFAULT_SAMPLE_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// Strictly decreasing DDIM timesteps.
    pub sample_steps: Vec<usize>,
}

/// Linear β schedule with a strided DDIM sub-sequence.
pub fn make_schedule(
    train_steps: usize,
    beta_min: f64,
    beta_max: f64,
    n_sample_steps: usize,
) -> Result<NoiseSchedule> {
    if train_steps < 2 {
        return Err(Error::invalid("need at least 2 train steps"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = (0..train_steps)
        .map(|t| beta_min + t as f64 * (beta_max - beta_min) / (train_steps - 1) as f64)
        .collect();
    let alpha_bars = betas
        .iter()
        .scan(1.0, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect();
    let sample_steps = strided_steps(train_steps, n_sample_steps)?;
    Ok(NoiseSchedule {
        betas,
        alpha_bars,
        sample_steps,
    })
}

/// `n` timesteps from `T − 1` down to 0, rounded from an even stride. A
/// single step is just `[T − 1]`.
pub fn strided_steps(train_steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > train_steps {
        return Err(Error::invalid(format!(
            "sample steps must be in [1, {train_steps}], got {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![train_steps - 1]);
    }
    let last = (train_steps - 1) as f64;
    Ok((0..n)
        .map(|i| (last * (1.0 - i as f64 / (n - 1) as f64)).round() as usize)
        .collect())
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(
            DEFAULT_TRAIN_STEPS,
            DEFAULT_BETA_MIN,
            DEFAULT_BETA_MAX,
            DEFAULT_SAMPLE_STEPS,
        )
        .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    /// Clamped ᾱ_t.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t].min(ALPHA_BAR_MAX)
    }

    /// ᾱ of the step a DDIM update lands on; `None` is the clean end (ᾱ = 1).
    pub fn alpha_bar_prev(&self, t_prev: Option<usize>) -> f64 {
        t_prev.map_or(1.0, |t| self.alpha_bar(t))
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.train_steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside [0, {})",
                self.train_steps()
            )));
        }
        Ok(())
    }
}

/// `F × h × w × C` latent stack, channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewLatent {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl MultiViewLatent {
    pub fn zeros(views: usize, height: usize, width: usize, channels: usize) -> Self {
        MultiViewLatent {
            views,
            height,
            width,
            channels,
            data: vec![0.0; views * height * width * channels],
        }
    }

    pub fn from_data(
        views: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != views * height * width * channels {
            return Err(Error::invalid(format!(
                "latent data has {} values, expected {views}x{height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(MultiViewLatent {
            views,
            height,
            width,
            channels,
            data,
        })
    }

    /// Seeded standard-normal latent of the given shape.
    pub fn standard_normal<R: Rng>(rng: &mut R, views: usize, height: usize, width: usize, channels: usize) -> Self {
        let mut z = Self::zeros(views, height, width, channels);
        for v in z.data.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        z
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.views, self.height, self.width, self.channels]
    }

    pub fn view_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn view(&self, v: usize) -> &[f64] {
        let n = self.view_len();
        &self.data[v * n..(v + 1) * n]
    }

    pub fn view_mut(&mut self, v: usize) -> &mut [f64] {
        let n = self.view_len();
        &mut self.data[v * n..(v + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &MultiViewLatent, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "{what}: shape {:?} does not match {:?}",
                other.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Root-mean-square difference over all elements.
    pub fn rmse(&self, other: &MultiViewLatent) -> Result<f64> {
        self.check_same_shape(other, "rmse")?;
        let se: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((se / self.data.len() as f64).sqrt())
    }

    /// `a·self + b·other`, elementwise.
    fn combine(&self, a: f64, other: &MultiViewLatent, b: f64) -> MultiViewLatent {
        self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> MultiViewLatent {
        MultiViewLatent {
            views: self.views,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

/// `z_t = √ᾱ_t · z₀ + √(1 − ᾱ_t) · ε`.
pub fn diffuse(
    z0: &MultiViewLatent,
    t: usize,
    eps: &MultiViewLatent,
    sched: &NoiseSchedule,
) -> Result<MultiViewLatent> {
    sched.check_t(t)?;
    z0.check_same_shape(eps, "diffuse noise")?;
    let ab = sched.alpha_bar(t);
    Ok(z0.combine(ab.sqrt(), eps, (1.0 - ab).sqrt()))
}

/// `(z_t − √(1 − ᾱ_t) · ε̂) / √ᾱ_t`.
pub fn predict_z0(
    z_t: &MultiViewLatent,
    eps_hat: &MultiViewLatent,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<MultiViewLatent> {
    sched.check_t(t)?;
    z_t.check_same_shape(eps_hat, "predict_z0 noise")?;
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z_t.with_data(
        z_t.data
            .iter()
            .zip(&eps_hat.data)
            .map(|(z, e)| (z - sb * e) / sa)
            .collect(),
    ))
}

/// DDIM noise scale σ_t for the step `t → t_prev`.
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: Option<usize>, eta: f64) -> f64 {
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar_prev(t_prev);
    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt()
}

/// Inputs to one DDIM update.
#[derive(Debug, Clone, Copy)]
pub struct DdimStep<'a> {
    pub t: usize,
    /// `None` steps to the clean end of the chain.
    pub t_prev: Option<usize>,
    pub eta: f64,
    /// Fresh standard normal noise; required when `eta > 0`.
    pub noise: Option<&'a MultiViewLatent>,
    /// Replaces the predicted z₀ in the first term only.
    pub z0_override: Option<&'a MultiViewLatent>,
}

/// One DDIM update from `z_t` to `z_{t_prev}`.
pub fn ddim_step(
    z_t: &MultiViewLatent,
    eps_hat: &MultiViewLatent,
    step: DdimStep<'_>,
    sched: &NoiseSchedule,
) -> Result<MultiViewLatent> {
    let DdimStep {
        t,
        t_prev,
        eta,
        noise,
        z0_override,
    } = step;
    sched.check_t(t)?;
    if let Some(tp) = t_prev {
        sched.check_t(tp)?;
        if tp >= t {
            return Err(Error::invalid(format!("t_prev {tp} must be < t {t}")));
        }
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta must be in [0,1], got {eta}")));
    }
    let ab_prev = sched.alpha_bar_prev(t_prev);
    let sigma = ddim_sigma(sched, t, t_prev, eta);
    let dir_var = 1.0 - ab_prev - sigma * sigma;
    if dir_var < -1e-15 {
        return Err(Error::invalid("DDIM direction variance is negative"));
    }
    let dir = dir_var.max(0.0).sqrt();

    let predicted;
    let z0 = match z0_override {
        Some(z) => {
            z_t.check_same_shape(z, "z0 override")?;
            z
        }
        None => {
            predicted = predict_z0(z_t, eps_hat, t, sched)?;
            &predicted
        }
    };
    let mut out = z0.combine(ab_prev.sqrt(), eps_hat, dir);
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::invalid("eta > 0 requires a noise sample"))?;
        z_t.check_same_shape(noise, "ddim noise")?;
        for (o, n) in out.data.iter_mut().zip(&noise.data) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// Serializable schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, n_sample_steps: usize) -> Result<NoiseSchedule> {
        make_schedule(self.train_steps, self.beta_min, self.beta_max, n_sample_steps)
    }
}
