use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::CameraPose;

/// Length of the raw camera feature vector fed to the camera MLP: the
/// flattened 3×4 extrinsics followed by azimuth, elevation (radians), radius
/// and field of view (radians).
pub const CAMERA_FEATURES: usize = 16;

/// Sinusoidal timestep embedding, interleaved `(sin, cos)` pairs with
/// frequencies `10000^(−2i/E)`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!("time embedding dim must be even, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let arg = t / 10000f64.powf(2.0 * i as f64 / dim as f64);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

pub fn camera_features(cam: &CameraPose) -> [f64; CAMERA_FEATURES] {
    let m = cam.world_to_cam();
    let p = cam.params();
    let mut f = [0.0; CAMERA_FEATURES];
    for (i, v) in m.iter().flatten().enumerate() {
        f[i] = *v;
    }
    f[12] = p.azimuth_deg.to_radians();
    f[13] = p.elevation_deg.to_radians();
    f[14] = p.radius;
    f[15] = p.fov_deg.to_radians();
    f
}

/// Two-layer perceptron `16 → 2E → E` with a ReLU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl CameraMlp {
    pub fn zeros(dim: usize) -> Self {
        CameraMlp {
            w1: DMatrix::zeros(2 * dim, CAMERA_FEATURES),
            b1: DVector::zeros(2 * dim),
            w2: DMatrix::zeros(dim, 2 * dim),
            b2: DVector::zeros(dim),
        }
    }

    /// He-style normal weights, zero biases.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0 / CAMERA_FEATURES as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / dim.max(1) as f64).sqrt()).unwrap();
        let w1 = DMatrix::from_fn(2 * dim, CAMERA_FEATURES, |_, _| n1.sample(&mut rng));
        let w2 = DMatrix::from_fn(dim, 2 * dim, |_, _| n2.sample(&mut rng));
        CameraMlp {
            w1,
            b1: DVector::zeros(2 * dim),
            w2,
            b2: DVector::zeros(dim),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters in `w1, b1, w2, b2` order, matrices row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.w1.transpose().iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.transpose().iter());
        out.extend(self.b2.iter());
        out
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        let hidden = 2 * dim;
        let sizes = [hidden * CAMERA_FEATURES, hidden, dim * hidden, dim];
        if flat.len() != sizes.iter().sum::<usize>() {
            return Err(Error::invalid("camera MLP parameter count mismatch"));
        }
        let (a, rest) = flat.split_at(sizes[0]);
        let (b, rest) = rest.split_at(sizes[1]);
        let (c, d) = rest.split_at(sizes[2]);
        Ok(CameraMlp {
            w1: DMatrix::from_row_slice(hidden, CAMERA_FEATURES, a),
            b1: DVector::from_column_slice(b),
            w2: DMatrix::from_row_slice(dim, hidden, c),
            b2: DVector::from_column_slice(d),
        })
    }
}

pub fn camera_embedding(cam: &CameraPose, mlp: &CameraMlp, dim: usize) -> Result<Vec<f64>> {
    let hidden = 2 * dim;
    if mlp.w1.shape() != (hidden, CAMERA_FEATURES)
        || mlp.b1.len() != hidden
        || mlp.w2.shape() != (dim, hidden)
        || mlp.b2.len() != dim
    {
        return Err(Error::invalid(format!(
            "camera MLP shaped {:?}/{:?} does not produce a {dim}-dim embedding",
            mlp.w1.shape(),
            mlp.w2.shape()
        )));
    }
    let x = DVector::from_column_slice(&camera_features(cam));
    let h = (&mlp.w1 * x + &mlp.b1).map(|v| v.max(0.0));
    Ok((&mlp.w2 * h + &mlp.b2).iter().copied().collect())
}
