//! Fréchet distance between Gaussian fits, and the Inception Score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this are a genuine PSD violation rather than rounding.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Diagonal loading applied to rank-deficient covariances.
pub const REGULARIZATION: f64 = 1e-6;

/// Mean and covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    /// Sample mean and unbiased covariance. With too few samples for a full
    /// rank estimate the covariance is loaded with `REGULARIZATION * I`.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        let d = features.first().map(Vec::len).unwrap_or(0);
        if n < 2 || d == 0 || features.iter().any(|r| r.len() != d) {
            return Err(Error::validation("need at least 2 equally sized, non-empty feature rows"));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("features contain non-finite values"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        if n <= d {
            log::warn!("{n} samples for {d} feature dims; loading the covariance with {REGULARIZATION}·I");
            cov += DMatrix::identity(d, d) * REGULARIZATION;
        }
        Ok(Self { mean, cov })
    }
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOLERANCE {
            return Err(Error::NotPsd { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|μ_A - μ_B|² + Tr Σ_A + Tr Σ_B - 2 Tr (Σ_A^½ Σ_B Σ_A^½)^½`, clamped at 0.
pub fn frechet_from_moments(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::validation("feature dims differ"));
    }
    let sa = sqrtm_psd(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let cross = sqrtm_psd(&inner)?.trace();
    let d2 = (&a.mean - &b.mean).norm_squared();
    Ok((d2 + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    frechet_from_moments(&GaussianMoments::fit(a)?, &GaussianMoments::fit(b)?)
}

/// `exp(E_x KL(p(y|x) ‖ p(y)))` over rows of class probabilities.
pub fn inception_score(rows: &[Vec<f64>]) -> Result<f64> {
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if c == 0 || rows.iter().any(|r| r.len() != c) {
        return Err(Error::validation("need equally sized, non-empty probability rows"));
    }
    for r in rows {
        let s: f64 = r.iter().sum();
        if r.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!("row is not a probability vector (sum {s})")));
        }
    }
    let n = rows.len() as f64;
    let marginal: Vec<f64> = (0..c).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mean_kl = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}
