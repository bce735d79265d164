use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MultiViewLatent, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;

/// Opaque prompt condition. No encoder produces it; it is threaded through
/// the denoiser signature unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionVector {
    pub values: Vec<f64>,
}

/// Noise predictor `ε_θ(z_t, y, c, t)`.
pub trait Denoiser: Sync {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        y: &ConditionVector,
    ) -> Result<MultiViewLatent>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        y: &ConditionVector,
    ) -> Result<MultiViewLatent> {
        (**self).predict_noise(z_t, t, cams, y)
    }
}

impl<D: Denoiser + ?Sized + Send> Denoiser for Box<D> {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        y: &ConditionVector,
    ) -> Result<MultiViewLatent> {
        (**self).predict_noise(z_t, t, cams, y)
    }
}

/// Test oracle: returns the exact noise that maps `z0` to `z_t`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    z0: MultiViewLatent,
    sched: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(z0: MultiViewLatent, sched: NoiseSchedule) -> Self {
        OracleDenoiser { z0, sched }
    }

    pub fn target(&self) -> &MultiViewLatent {
        &self.z0
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        _y: &ConditionVector,
    ) -> Result<MultiViewLatent> {
        self.z0.check_same_shape(z_t, "oracle input")?;
        if cams.len() != z_t.views {
            return Err(Error::invalid(format!(
                "{} cameras for {} latent views",
                cams.len(),
                z_t.views
            )));
        }
        if t >= self.sched.train_steps() {
            return Err(Error::invalid(format!("timestep {t} out of range")));
        }
        let ab = self.sched.alpha_bar(t);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z_t.with_data(
            z_t.data
                .iter()
                .zip(&self.z0.data)
                .map(|(z, x)| (z - sa * x) / sb)
                .collect(),
        ))
    }
}

/// Oracle aimed at `z0 + γ·η_v`, where `η_v` is a standard normal field per
/// view, drawn once from `seed` and frozen across timesteps.
#[derive(Debug, Clone)]
pub struct JitteredOracleDenoiser {
    inner: OracleDenoiser,
}

impl JitteredOracleDenoiser {
    pub fn new(z0: &MultiViewLatent, gamma: f64, seed: u64, sched: NoiseSchedule) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("jitter gamma must be >= 0, got {gamma}")));
        }
        let target = if gamma == 0.0 {
            z0.clone()
        } else {
            let field = Self::field(z0, seed);
            z0.with_data(
                z0.data
                    .iter()
                    .zip(&field.data)
                    .map(|(x, n)| x + gamma * n)
                    .collect(),
            )
        };
        Ok(JitteredOracleDenoiser {
            inner: OracleDenoiser::new(target, sched),
        })
    }

    /// The per-view jitter field for `seed`, shaped like `z0`.
    pub fn field(z0: &MultiViewLatent, seed: u64) -> MultiViewLatent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [f, h, w, c] = z0.shape();
        MultiViewLatent::standard_normal(&mut rng, f, h, w, c)
    }

    pub fn target(&self) -> &MultiViewLatent {
        self.inner.target()
    }
}

impl Denoiser for JitteredOracleDenoiser {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        y: &ConditionVector,
    ) -> Result<MultiViewLatent> {
        self.inner.predict_noise(z_t, t, cams, y)
    }
}
