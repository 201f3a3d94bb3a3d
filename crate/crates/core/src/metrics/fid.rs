use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Gaussian fit of a feature set: mean, unbiased covariance, sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct FidStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl FidStats {
    /// Checks dimensions and `n >= 2`, and symmetrizes `sigma`.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::arg(format!("FID statistics need at least 2 samples, got {n}")));
        }
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0} covariance", mu.len()),
                actual: format!("{}x{}", sigma.nrows(), sigma.ncols()),
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("FID statistics".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        Ok(FidStats { mu, sigma, n })
    }

    /// Mean and (n-1)-normalized covariance of feature rows.
    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::arg(format!("FID statistics need at least 2 samples, got {n}")));
        }
        let d = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} features"),
                actual: format!("{} features", bad.len()),
            });
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mu = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
        let sigma = centered.transpose() * &centered / (n - 1) as f64;
        FidStats::new(mu, sigma, n)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Maps an image to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn features(&self, img: &Raster) -> Vec<f64>;
}

/// Grayscale box-downsample to `size`×`size`, scaled to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelFeatures {
    pub size: usize,
}

impl Default for PixelFeatures {
    fn default() -> Self {
        PixelFeatures { size: 8 }
    }
}

impl FeatureExtractor for PixelFeatures {
    fn dim(&self) -> usize {
        self.size * self.size
    }

    fn features(&self, img: &Raster) -> Vec<f64> {
        let g = img.to_gray();
        let small = g.resize_box(self.size, self.size).expect("nonzero target size");
        small.data().iter().map(|&v| v as f64 / 255.0).collect()
    }
}

pub fn feature_extract<E: FeatureExtractor + ?Sized>(imgs: &[Raster], extractor: &E) -> Result<FidStats> {
    let rows: Vec<Vec<f64>> = imgs.par_iter().map(|img| extractor.features(img)).collect();
    FidStats::from_features(&rows)
}

/// Clamps tiny negative eigenvalues to zero and rejects larger ones. The
/// tolerance is 1e-10 of the largest magnitude plus an absolute 1e-12 so an
/// all-zero matrix is accepted.
fn clamp_eigenvalues(vals: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale + 1e-12;
    vals.iter()
        .map(|&v| {
            if v < -tol {
                Err(Error::NotPsd(v))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = clamp_eigenvalues(&eig.eigenvalues)?.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Tr((A B)^{1/2}) computed as the sum of square roots of the eigenvalues of
/// the symmetric matrix A^{1/2} B A^{1/2}.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = symmetric_sqrt(a)?;
    let m = &ra * b * &ra;
    let m = (&m + m.transpose()) * 0.5;
    let vals = clamp_eigenvalues(&SymmetricEigen::new(m).eigenvalues)?;
    Ok(vals.iter().map(|v| v.sqrt()).sum())
}

/// Fréchet distance between two Gaussian fits:
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
pub fn fid(a: &FidStats, b: &FidStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} features", a.dim()),
            actual: format!("{} features", b.dim()),
        });
    }
    let dmu = (&a.mu - &b.mu).norm_squared();
    let tr = a.sigma.trace() + b.sigma.trace() - 2.0 * trace_sqrt_product(&a.sigma, &b.sigma)?;
    let d = dmu + tr;
    if !d.is_finite() {
        return Err(Error::NonFinite("FID".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mu: &[f64], diag: &[f64]) -> FidStats {
        FidStats::new(
            DVector::from_row_slice(mu),
            DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
            10,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_shift() {
        assert!((fid(&stats(&[0.0], &[1.0]), &stats(&[1.0], &[1.0])).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn commuting_diagonals() {
        let d = fid(&stats(&[0.0, 0.0], &[1.0, 4.0]), &stats(&[0.0, 0.0], &[4.0, 1.0])).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn rejects_indefinite() {
        let bad = FidStats {
            mu: DVector::zeros(2),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            n: 3,
        };
        assert!(matches!(fid(&bad, &bad), Err(Error::NotPsd(_))));
    }

    #[test]
    fn identical_images_zero_covariance() {
        let img = Raster::gray(16, 16, 90);
        let s = feature_extract(&[img.clone(), img], &PixelFeatures::default()).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
        assert!(fid(&s, &s).unwrap() < 1e-12);
    }

    #[test]
    fn needs_two_samples() {
        assert!(feature_extract(&[Raster::gray(8, 8, 0)], &PixelFeatures::default()).is_err());
        assert!(FidStats::from_features(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
