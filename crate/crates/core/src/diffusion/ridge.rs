//! Closed-form ridge denoiser: per-view linear map from
//! `[z_t view, time embedding, camera embedding]` to ε, one map per
//! timestep bucket, fitted through the normal equations.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{camera_embedding, time_embedding, CameraMlp};
use super::{diffuse, ConditionVector, Denoiser, MultiViewLatent, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::io;

/// One training scene: its clean latent and the cameras it was rendered from.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub z0: MultiViewLatent,
    pub cams: Vec<CameraPose>,
    pub y: ConditionVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub buckets: usize,
    pub lambda: f64,
    /// `(t, ε)` draws per scene.
    pub n_draws: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub mlp_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            buckets: 4,
            lambda: 1e-3,
            n_draws: 64,
            seed: 0,
            embed_dim: 16,
            mlp_seed: 0,
        }
    }
}

/// Timesteps `[lo, hi)` share one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
    /// `out_dim × in_dim`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDenoiser {
    pub buckets: Vec<Bucket>,
    pub embed_dim: usize,
    pub mlp: CameraMlp,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    #[serde(rename = "B")]
    b: usize,
    bucket_bounds: Vec<[usize; 2]>,
    in_dim: usize,
    out_dim: usize,
    #[serde(rename = "E")]
    e: usize,
}

/// Largest per-view feature count the dense normal equations are built for.
pub const MAX_FEATURES: usize = 4096;

fn bucket_bounds(train_steps: usize, n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|b| (b * train_steps / n, (b + 1) * train_steps / n))
        .collect()
}

fn view_features(view: &[f64], t: usize, cam: &CameraPose, mlp: &CameraMlp, dim: usize) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(view.len() + 2 * dim);
    x.extend_from_slice(view);
    x.extend(time_embedding(t as f64, dim)?);
    x.extend(camera_embedding(cam, mlp, dim)?);
    Ok(x)
}

/// Minimizes `Σ ‖ε − W·x − b‖² + λ‖W‖²` over sampled `(t, ε)` pairs. The
/// bias is not penalized.
pub fn fit_linear_denoiser(
    dataset: &[TrainingScene],
    sched: &NoiseSchedule,
    cfg: &FitConfig,
) -> Result<LinearDenoiser> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::invalid("empty training set"))?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::invalid(format!("ridge lambda must be > 0, got {}", cfg.lambda)));
    }
    if cfg.buckets == 0 || cfg.buckets > sched.train_steps() {
        return Err(Error::invalid("bucket count must be in [1, T]"));
    }
    for scene in dataset {
        first.z0.check_same_shape(&scene.z0, "training latent")?;
        if scene.cams.len() != scene.z0.views {
            return Err(Error::invalid("camera count does not match latent views"));
        }
    }
    let dim = cfg.embed_dim;
    let mlp = CameraMlp::seeded(dim, cfg.mlp_seed);
    let out_dim = first.z0.view_len();
    let in_dim = out_dim + 2 * dim;
    if in_dim > MAX_FEATURES {
        return Err(Error::invalid(format!(
            "per-view feature count {in_dim} exceeds {MAX_FEATURES}; use smaller views or the avgpool2 codec"
        )));
    }
    let bounds = bucket_bounds(sched.train_steps(), cfg.buckets);
    let bucket_of = |t: usize| bounds.iter().position(|&(lo, hi)| t >= lo && t < hi).unwrap();

    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); cfg.buckets];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for scene in dataset {
        let [f, h, w, c] = scene.z0.shape();
        for _ in 0..cfg.n_draws {
            let t = rng.random_range(0..sched.train_steps());
            let eps = MultiViewLatent::standard_normal(&mut rng, f, h, w, c);
            let zt = diffuse(&scene.z0, t, &eps, sched)?;
            let (xs, ys) = &mut rows[bucket_of(t)];
            for v in 0..f {
                xs.extend(view_features(zt.view(v), t, &scene.cams[v], &mlp, dim)?);
                ys.extend_from_slice(eps.view(v));
            }
        }
    }

    let buckets = bounds
        .iter()
        .zip(rows)
        .map(|(&(lo, hi), (xs, ys))| {
            let n = xs.len() / in_dim;
            let (weights, bias) = if n == 0 {
                (DMatrix::zeros(out_dim, in_dim), DVector::zeros(out_dim))
            } else {
                solve_ridge(
                    DMatrix::from_row_slice(n, in_dim, &xs),
                    DMatrix::from_row_slice(n, out_dim, &ys),
                    cfg.lambda,
                )?
            };
            Ok(Bucket {
                lo,
                hi,
                weights,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LinearDenoiser {
        buckets,
        embed_dim: dim,
        mlp,
        in_dim,
        out_dim,
    })
}

/// Centered ridge regression through the normal equations.
fn solve_ridge(mut x: DMatrix<f64>, mut y: DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let x_mean: DVector<f64> = x.row_mean().transpose();
    let y_mean: DVector<f64> = y.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= x_mean.transpose();
    }
    for mut row in y.row_iter_mut() {
        row -= y_mean.transpose();
    }
    let mut gram = x.tr_mul(&x);
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = x.tr_mul(&y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("normal matrix is not positive definite"))?;
    let weights = chol.solve(&rhs).transpose();
    let bias = &y_mean - &weights * &x_mean;
    Ok((weights, bias))
}

impl LinearDenoiser {
    fn bucket(&self, t: usize) -> Result<&Bucket> {
        self.buckets
            .iter()
            .find(|b| t >= b.lo && t < b.hi)
            .ok_or_else(|| Error::invalid(format!("timestep {t} outside all buckets")))
    }

    /// Writes `<stem>.bin` (little-endian f64: per bucket the row-major
    /// weights then the bias, followed by the camera MLP) and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut flat = Vec::new();
        for b in &self.buckets {
            flat.extend(b.weights.transpose().iter());
            flat.extend(b.bias.iter());
        }
        flat.extend(self.mlp.to_flat());
        io::write_f64_le(&stem.with_extension("bin"), &flat)?;
        let side = Sidecar {
            b: self.buckets.len(),
            bucket_bounds: self.buckets.iter().map(|b| [b.lo, b.hi]).collect(),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            e: self.embed_dim,
        };
        io::write_json(&stem.with_extension("json"), &side)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let side_path = stem.with_extension("json");
        let side: Sidecar = io::read_json(&side_path)?;
        if side.bucket_bounds.len() != side.b || side.in_dim != side.out_dim + 2 * side.e {
            return Err(Error::parse(&side_path, "inconsistent linear denoiser sidecar"));
        }
        let bin_path = stem.with_extension("bin");
        let flat = io::read_f64_le(&bin_path)?;
        let per_bucket = side.out_dim * side.in_dim + side.out_dim;
        let mlp_len = CameraMlp::zeros(side.e).param_count();
        if flat.len() != side.b * per_bucket + mlp_len {
            return Err(Error::parse(&bin_path, "weight file size does not match sidecar"));
        }
        let mut buckets = Vec::with_capacity(side.b);
        for (i, [lo, hi]) in side.bucket_bounds.iter().copied().enumerate() {
            let chunk = &flat[i * per_bucket..(i + 1) * per_bucket];
            let (w, b) = chunk.split_at(side.out_dim * side.in_dim);
            buckets.push(Bucket {
                lo,
                hi,
                weights: DMatrix::from_row_slice(side.out_dim, side.in_dim, w),
                bias: DVector::from_column_slice(b),
            });
        }
        let mlp = CameraMlp::from_flat(side.e, &flat[side.b * per_bucket..])?;
        Ok(LinearDenoiser {
            buckets,
            embed_dim: side.e,
            mlp,
            in_dim: side.in_dim,
            out_dim: side.out_dim,
        })
    }
}

impl Denoiser for LinearDenoiser {
    fn predict_noise(
        &self,
        z_t: &MultiViewLatent,
        t: usize,
        cams: &[CameraPose],
        _y: &ConditionVector,
    ) -> Result<MultiViewLatent> {
        if z_t.view_len() != self.out_dim {
            return Err(Error::invalid(format!(
                "latent view has {} values, denoiser expects {}",
                z_t.view_len(),
                self.out_dim
            )));
        }
        if cams.len() != z_t.views {
            return Err(Error::invalid("camera count does not match latent views"));
        }
        let bucket = self.bucket(t)?;
        let mut out = Vec::with_capacity(z_t.data.len());
        for (v, cam) in cams.iter().enumerate() {
            let x = DVector::from_vec(view_features(z_t.view(v), t, cam, &self.mlp, self.embed_dim)?);
            let y = &bucket.weights * x + &bucket.bias;
            out.extend(y.iter());
        }
        Ok(z_t.with_data(out))
    }
}

/// Mean squared ε error of a denoiser and of the all-zero predictor on the
/// same draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsMse {
    pub model: f64,
    pub zero: f64,
}

pub fn evaluate_eps_mse<D: Denoiser>(
    denoiser: &D,
    dataset: &[TrainingScene],
    sched: &NoiseSchedule,
    n_draws: usize,
    seed: u64,
) -> Result<EpsMse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut se, mut zero, mut count) = (0.0, 0.0, 0usize);
    for scene in dataset {
        let [f, h, w, c] = scene.z0.shape();
        for _ in 0..n_draws {
            let t = rng.random_range(0..sched.train_steps());
            let eps = MultiViewLatent::standard_normal(&mut rng, f, h, w, c);
            let zt = diffuse(&scene.z0, t, &eps, sched)?;
            let pred = denoiser.predict_noise(&zt, t, &scene.cams, &scene.y)?;
            for (p, e) in pred.data.iter().zip(&eps.data) {
                se += (p - e) * (p - e);
                zero += e * e;
            }
            count += eps.data.len();
        }
    }
    if count == 0 {
        return Err(Error::invalid("no evaluation draws"));
    }
    Ok(EpsMse {
        model: se / count as f64,
        zero: zero / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_orbit_cameras;

    fn tiny_dataset(n_scenes: usize) -> Vec<TrainingScene> {
        let cams = make_orbit_cameras(4, 20.0, 2.0, 50.0, 4, 4).unwrap();
        (0..n_scenes)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + s as u64);
                let z0 = MultiViewLatent::standard_normal(&mut rng, 4, 4, 4, 3);
                TrainingScene {
                    z0: z0.with_data(z0.data.iter().map(|v| 0.5 * v.tanh()).collect()),
                    cams: cams.clone(),
                    y: ConditionVector::default(),
                }
            })
            .collect()
    }

    #[test]
    fn fitted_model_beats_zero_predictor() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::default();
        let cfg = FitConfig {
            buckets: 2,
            lambda: 1e-6,
            n_draws: 200,
            embed_dim: 4,
            ..FitConfig::default()
        };
        let model = fit_linear_denoiser(&data, &sched, &cfg).unwrap();
        assert_eq!(model.in_dim, 48 + 8);
        let held_out = evaluate_eps_mse(&model, &data, &sched, 100, 999).unwrap();
        assert!(held_out.model < held_out.zero, "{held_out:?}");
        assert!(held_out.model < 1.0);
    }

    #[test]
    fn huge_lambda_collapses_to_bias() {
        let data = tiny_dataset(2);
        let sched = NoiseSchedule::default();
        let cfg = FitConfig {
            buckets: 1,
            lambda: 1e9,
            n_draws: 50,
            embed_dim: 4,
            ..FitConfig::default()
        };
        let model = fit_linear_denoiser(&data, &sched, &cfg).unwrap();
        assert!(model.buckets[0].weights.amax() < 1e-3);
        let zt = MultiViewLatent::zeros(4, 4, 4, 3).with_data(vec![0.3; 192]);
        let pred = model
            .predict_noise(&zt, 10, &data[0].cams, &ConditionVector::default())
            .unwrap();
        for v in 0..4 {
            for (p, b) in pred.view(v).iter().zip(model.buckets[0].bias.iter()) {
                assert!((p - b).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn least_squares_residual_below_zero_weights() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::default();
        let cfg = FitConfig {
            buckets: 1,
            lambda: 1e-8,
            n_draws: 80,
            seed: 5,
            embed_dim: 4,
            ..FitConfig::default()
        };
        let model = fit_linear_denoiser(&data, &sched, &cfg).unwrap();
        let mut zeroed = model.clone();
        zeroed.buckets[0].weights.fill(0.0);
        zeroed.buckets[0].bias.fill(0.0);
        // same seed reproduces the training draws
        let fit = evaluate_eps_mse(&model, &data, &sched, 80, 5).unwrap();
        let base = evaluate_eps_mse(&zeroed, &data, &sched, 80, 5).unwrap();
        assert!(fit.model <= base.model);
    }

    #[test]
    fn invalid_fits() {
        let sched = NoiseSchedule::default();
        assert!(fit_linear_denoiser(&[], &sched, &FitConfig::default()).is_err());
        let data = tiny_dataset(1);
        let cfg = FitConfig {
            lambda: 0.0,
            ..FitConfig::default()
        };
        assert!(fit_linear_denoiser(&data, &sched, &cfg).is_err());
        let big = TrainingScene {
            z0: MultiViewLatent::zeros(1, 64, 64, 3),
            cams: data[0].cams[..1].to_vec(),
            y: ConditionVector::default(),
        };
        let err = fit_linear_denoiser(&[big], &sched, &FitConfig::default()).unwrap_err();
        assert!(err.to_string().contains("avgpool2"));
    }

    #[test]
    fn save_load_round_trip() {
        let data = tiny_dataset(1);
        let sched = NoiseSchedule::default();
        let cfg = FitConfig {
            buckets: 3,
            n_draws: 20,
            embed_dim: 4,
            ..FitConfig::default()
        };
        let model = fit_linear_denoiser(&data, &sched, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("linear_denoiser");
        model.save(&stem).unwrap();
        let side: serde_json::Value = io::read_json(&stem.with_extension("json")).unwrap();
        assert_eq!(side["B"], 3);
        assert_eq!(side["E"], 4);
        assert_eq!(side["bucket_bounds"][1], serde_json::json!([333, 666]));
        assert_eq!(LinearDenoiser::load(&stem).unwrap(), model);
    }
}
