//! Evaluation metrics: pixel MSE, mask IoU, Fréchet distance between
//! embedding sets, Inception Score from logits, and cosine (CLIP-style) score.

use nalgebra::{DMatrix, DVector};

use crate::corpus::{BinaryMask, RasterImage};
use crate::error::{Error, Result};
use crate::mask_ops::mask_iou;

/// Mean squared per-sample difference on the 0–255 scale.
pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

pub fn mask_eval(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    mask_iou(pred, gt)
}

pub fn clip_score(region: &[f64], reference: &[f64]) -> Result<f64> {
    if region.len() != reference.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", region.len(), reference.len())));
    }
    let na = region.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = region.iter().zip(reference).map(|(a, b)| a * b).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// exp(mean KL(p(y|x) ‖ p(y))) over one split.
pub fn inception_score(logit_rows: &[Vec<f64>]) -> Result<f64> {
    let Some(first) = logit_rows.first() else {
        return Err(Error::EmptyInput);
    };
    let k = first.len();
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    let probs = logit_rows
        .iter()
        .map(|row| {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!("row of {} logits, expected {k}", row.len())));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / s).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = probs.len() as f64;
    let mut marginal = vec![0.0; k];
    for p in &probs {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mean_kl = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &mi)| pi * (pi.ln() - mi.ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}

/// Sample mean and unbiased covariance of a set of row vectors.
pub fn mean_and_covariance(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("embedding rows differ in length".into()));
    }
    let n = rows.len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = r[j] - mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;
/// Eigenvalues down to −1e−8 (relative to the largest magnitude, floored at
/// one) are clamped to zero; anything more negative is a numerical failure.
const NEG_EIGEN_TOL: f64 = 1e-8;

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("eigendecomposition did not converge".into()))?;
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if !v.is_finite() {
            return Err(Error::NumericalFailure("non-finite eigenvalue".into()));
        }
        if *v < -NEG_EIGEN_TOL * scale {
            return Err(Error::NumericalFailure(format!("covariance eigenvalue {v} is negative")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2}) between two embedding sets.
///
/// Uses Tr((ΣaΣb)^{1/2}) = Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2}), so both square
/// roots are of symmetric PSD matrices.
pub fn frechet_distance(emb_a: &[Vec<f64>], emb_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = mean_and_covariance(emb_a)?;
    let (mu_b, cov_b) = mean_and_covariance(emb_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::DimensionMismatch(format!("embedding dims {} vs {}", mu_a.len(), mu_b.len())));
    }
    frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}

pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let diff = mu_a - mu_b;
    let sa = psd_sqrt(cov_a)?;
    let inner = &sa * cov_b * &sa;
    let cross = psd_sqrt(&inner)?.trace();
    let d = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NumericalFailure("non-finite distance".into()));
    }
    Ok(d.max(0.0))
}
