use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gesture::POSE_DIM;
use crate::numerics::conv::conv1d_forward;
use crate::numerics::{ConvSpec, Tensor};
use crate::rng;

pub const FEATURE_DIM: usize = 32;
const HIDDEN: usize = 64;
const KERNEL: usize = 5;
/// Ridge added to both covariances when either is singular.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Frozen random temporal-convolution network mapping a pose clip to a
/// fixed-length feature vector (time-averaged activations).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: [(ConvSpec, Vec<f64>, Vec<f64>); 2],
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, &format!("{}/feature_extractor", rng::streams::FROZEN));
        let mut layer = |spec: ConvSpec| {
            let k = (3.0 / spec.fan_in() as f64).sqrt();
            let [a, b, c] = spec.weight_shape();
            let w = (0..a * b * c).map(|_| r.gen_range(-k..k)).collect();
            let bias = (0..spec.out_channels).map(|_| r.gen_range(-0.1..0.1)).collect();
            (spec, w, bias)
        };
        let first = layer(ConvSpec::new(POSE_DIM, HIDDEN, KERNEL));
        let second = layer(ConvSpec::new(HIDDEN, FEATURE_DIM, KERNEL));
        Self { layers: [first, second] }
    }

    /// Features of a `[T × 48]` clip.
    pub fn extract(&self, clip: &Tensor) -> Result<Vec<f64>> {
        if clip.rank() != 2 || clip.cols() != POSE_DIM || clip.rows() == 0 {
            return Err(Error::shape_in("feature_extractor", format!("clip {:?}", clip.shape())));
        }
        let t = clip.rows();
        let mut h = clip.transpose2().into_data();
        let mut width = POSE_DIM;
        for (spec, w, b) in &self.layers {
            h = conv1d_forward(spec, &h, &[width, t], w, b)?;
            h.iter_mut().for_each(|v| *v = v.tanh());
            width = spec.out_channels;
        }
        Ok(h.chunks(t).map(|row| row.iter().sum::<f64>() / t as f64).collect())
    }
}

/// Sample mean and covariance (normalized by `n − 1`) of row vectors.
pub fn mean_covariance(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 feature vectors, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape_in("covariance", "ragged or empty feature vectors"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let max = eig.eigenvalues.amax();
    eig.eigenvalues.min() <= 1e-12 * max.max(1e-300)
}

/// `‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::shape_in("frechet_distance", "statistics of different dimensions"));
    }
    let (c1, c2) = if is_singular(cov1) || is_singular(cov2) {
        let ridge = DMatrix::identity(d, d) * COVARIANCE_RIDGE;
        (cov1 + &ridge, cov2 + &ridge)
    } else {
        (cov1.clone(), cov2.clone())
    };
    let s1 = symmetric_sqrt(&c1);
    let inner = &s1 * &c2 * &s1;
    let cross = symmetric_sqrt(&inner).trace();
    let diff = mu1 - mu2;
    Ok((diff.dot(&diff) + c1.trace() + c2.trace() - 2.0 * cross).max(0.0))
}

/// Fréchet distance between feature sets given as rows.
pub fn feature_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (m1, c1) = mean_covariance(a)?;
    let (m2, c2) = mean_covariance(b)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

/// Fréchet gesture distance between two clip sets.
pub fn fgd(generated: &[Tensor], reference: &[Tensor], extractor: &FeatureExtractor) -> Result<f64> {
    let fa = generated.iter().map(|c| extractor.extract(c)).collect::<Result<Vec<_>>>()?;
    let fb = reference.iter().map(|c| extractor.extract(c)).collect::<Result<Vec<_>>>()?;
    feature_distance(&fa, &fb)
}
