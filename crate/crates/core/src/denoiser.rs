//! Noise predictors `eps(x_t, t)`.
//!
//! Instead of a trained network the engine uses predictors that are exact for
//! a known data prior, so every downstream statistic has a closed-form target:
//!
//! * [`GmmPrior`]: i.i.d. per-pixel Gaussian mixture.
//! * [`GpPrior`]: zero-mean Gaussian process over the patch with an
//!   eigendecomposed covariance.
//! * [`ZeroDenoiser`] and [`ConstantDenoiser`]: degenerate predictors for
//!   isolating sampler and fusion behaviour.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::schedule::NoiseSchedule;

/// Maps a noisy sample at timestep `t` to its predicted noise.
pub trait Denoiser: Send + Sync {
    fn predict_eps(&self, x_t: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid>;

    /// The only input shape this predictor accepts, if it is restricted.
    fn input_shape(&self) -> Option<(usize, usize)> {
        None
    }
}

fn noise_levels(t: usize, schedule: &NoiseSchedule) -> Result<(f64, f64)> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let noise_var = 1.0 - ab;
    if noise_var <= 0.0 {
        return Err(Error::arg(format!(
            "abar_{t} = 1 leaves no noise to predict; use the t = 0 convention instead"
        )));
    }
    Ok((ab, noise_var))
}

/// `eps = (x_t - sqrt(abar) * x0_hat) / sqrt(1 - abar)`
#[inline]
fn eps_from_x0(x_t: f64, x0_hat: f64, sqrt_ab: f64, sqrt_noise: f64) -> f64 {
    (x_t - sqrt_ab * x0_hat) / sqrt_noise
}

/// Predicts all-zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_eps(&self, x_t: &Grid, _t: usize, _schedule: &NoiseSchedule) -> Result<Grid> {
        Ok(Grid::zeros(x_t.height(), x_t.width()))
    }
}

/// Exact predictor for a point-mass prior: every pixel is `value`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDenoiser {
    pub value: f64,
}

impl Denoiser for ConstantDenoiser {
    fn predict_eps(&self, x_t: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid> {
        let (ab, noise_var) = noise_levels(t, schedule)?;
        let (sa, sn) = (ab.sqrt(), noise_var.sqrt());
        Ok(x_t.map(|x| eps_from_x0(x, self.value, sa, sn)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Per-pixel i.i.d. Gaussian mixture prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    components: Vec<GmmComponent>,
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::arg("mixture needs at least one component"));
        }
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::arg(format!("component {k} weight must be positive")));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::arg(format!("component {k} std must be positive")));
            }
            if !c.mean.is_finite() {
                return Err(Error::arg(format!("component {k} mean must be finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn single(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![GmmComponent {
            weight: 1.0,
            mean,
            std,
        }])
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    fn log_responsibility(c: &GmmComponent, x_t: f64, sa: f64, ab: f64, noise_var: f64) -> f64 {
        let var = ab * c.std * c.std + noise_var;
        let d = x_t - sa * c.mean;
        c.weight.ln() - 0.5 * var.ln() - 0.5 * d * d / var
    }

    /// Posterior mean `E[x0 | x_t]` for one pixel at cumulative signal `ab`.
    ///
    /// Responsibilities are normalised in log space against their maximum;
    /// near `t = 0` the component likelihoods are too peaked for direct
    /// evaluation.
    pub fn posterior_mean_x0(&self, x_t: f64, ab: f64) -> f64 {
        let noise_var = 1.0 - ab;
        let sa = ab.sqrt();
        let snr = ab / noise_var;
        let best = self
            .components
            .iter()
            .map(|c| Self::log_responsibility(c, x_t, sa, ab, noise_var))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut acc = 0.0;
        for c in &self.components {
            let r = (Self::log_responsibility(c, x_t, sa, ab, noise_var) - best).exp();
            let prec = 1.0 / (c.std * c.std);
            let m_hat = (sa / noise_var * x_t + c.mean * prec) / (snr + prec);
            norm += r;
            acc += r * m_hat;
        }
        acc / norm
    }
}

impl Denoiser for GmmPrior {
    fn predict_eps(&self, x_t: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid> {
        let (ab, noise_var) = noise_levels(t, schedule)?;
        let (sa, sn) = (ab.sqrt(), noise_var.sqrt());
        Ok(x_t.map(|x| eps_from_x0(x, self.posterior_mean_x0(x, ab), sa, sn)))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// Orthonormal eigenvectors of the full `n x n` covariance, as columns.
    Dense(DMatrix<f64>),
    /// `C = K_rows (x) K_cols`; the basis is the Kronecker product of the
    /// factor eigenbases.
    Separable {
        rows: DMatrix<f64>,
        row_values: Vec<f64>,
        cols: DMatrix<f64>,
        col_values: Vec<f64>,
    },
}

/// Zero-mean Gaussian-process prior over one patch, `x0 ~ N(0, C)`.
///
/// The eigendecomposition is computed once at construction. Prediction then
/// costs two basis changes: dense matrix-vector products for an arbitrary
/// covariance, or `U_r^T X U_c` style products for a separable kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPrior {
    height: usize,
    width: usize,
    basis: Basis,
    /// Spectrum in the basis' coefficient order (row-major `(i, j)` for a
    /// separable basis).
    eigenvalues: Vec<f64>,
}

fn se_kernel_1d(n: usize, length_scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        (-0.5 * d * d / (length_scale * length_scale)).exp()
    })
}

fn psd_eigen(cov: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = cov.nrows();
    let asym = (&cov - cov.transpose()).norm();
    if asym > 1e-10 * cov.norm().max(1.0) {
        return Err(Error::arg("covariance matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    // Round-off puts the tail of a smooth kernel's spectrum slightly below 0.
    let tol = 1e-9 * max.max(1.0) * n as f64;
    let mut values = Vec::with_capacity(n);
    for &l in eig.eigenvalues.iter() {
        if l < -tol {
            return Err(Error::arg(format!("covariance has negative eigenvalue {l}")));
        }
        values.push(l.max(0.0));
    }
    Ok((eig.eigenvectors, values))
}

fn reconstruct(u: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (j, &l) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
    }
    scaled * u.transpose()
}

impl GpPrior {
    /// Squared-exponential kernel with unit marginal variance over the pixel
    /// coordinates of a `height x width` patch.
    pub fn squared_exponential(height: usize, width: usize, length_scale: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("GP patch dimensions must be positive"));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::arg(format!(
                "length-scale must be positive, got {length_scale}"
            )));
        }
        let (rows, row_values) = psd_eigen(se_kernel_1d(height, length_scale))?;
        let (cols, col_values) = psd_eigen(se_kernel_1d(width, length_scale))?;
        let mut eigenvalues = Vec::with_capacity(height * width);
        for a in &row_values {
            for b in &col_values {
                eigenvalues.push(a * b);
            }
        }
        Ok(Self {
            height,
            width,
            basis: Basis::Separable {
                rows,
                row_values,
                cols,
                col_values,
            },
            eigenvalues,
        })
    }

    /// Arbitrary symmetric PSD covariance over the row-major flattened patch.
    pub fn from_covariance(height: usize, width: usize, cov: DMatrix<f64>) -> Result<Self> {
        let n = height * width;
        if n == 0 || cov.nrows() != n || cov.ncols() != n {
            return Err(Error::arg(format!(
                "covariance must be {n}x{n} for a {height}x{width} patch"
            )));
        }
        let (basis, eigenvalues) = psd_eigen(cov)?;
        Ok(Self {
            height,
            width,
            basis: Basis::Dense(basis),
            eigenvalues,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The dense covariance `U diag(lambda) U^T` over the flattened patch.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.basis {
            Basis::Dense(u) => reconstruct(u, &self.eigenvalues),
            Basis::Separable {
                rows,
                row_values,
                cols,
                col_values,
            } => reconstruct(rows, row_values).kronecker(&reconstruct(cols, col_values)),
        }
    }

    /// Largest deviation of `U^T U` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let check = |u: &DMatrix<f64>| {
            let g = u.transpose() * u;
            (g - DMatrix::identity(u.ncols(), u.ncols())).amax()
        };
        match &self.basis {
            Basis::Dense(u) => check(u),
            Basis::Separable { rows, cols, .. } => check(rows).max(check(cols)),
        }
    }

    /// Applies `f(lambda)` along the eigenbasis: `U diag(f(lambda)) U^T x`.
    fn apply_spectral(&self, x: &Grid, f: impl Fn(f64) -> f64) -> Grid {
        match &self.basis {
            Basis::Dense(u) => {
                let v = DVector::from_column_slice(x.values());
                let mut coeffs = u.tr_mul(&v);
                for (c, &l) in coeffs.iter_mut().zip(&self.eigenvalues) {
                    *c *= f(l);
                }
                let out = u * coeffs;
                Grid::from_vec(self.height, self.width, out.as_slice().to_vec())
                    .expect("basis preserves dimension")
            }
            Basis::Separable { rows, cols, .. } => {
                let m = DMatrix::from_row_slice(self.height, self.width, x.values());
                let mut coeffs = rows.tr_mul(&m) * cols;
                for i in 0..self.height {
                    for j in 0..self.width {
                        coeffs[(i, j)] *= f(self.eigenvalues[i * self.width + j]);
                    }
                }
                // (U_r S U_c^T)^T, whose column-major storage is the
                // row-major layout of the result.
                let out_t = cols * (rows * coeffs).transpose();
                Grid::from_vec(self.height, self.width, out_t.as_slice().to_vec())
                    .expect("basis preserves dimension")
            }
        }
    }

    /// Posterior mean `E[x0 | x_t]` at cumulative signal `ab`.
    pub fn posterior_mean_x0(&self, x_t: &Grid, ab: f64) -> Result<Grid> {
        self.check_shape(x_t)?;
        let sa = ab.sqrt();
        let noise_var = 1.0 - ab;
        Ok(self.apply_spectral(x_t, |l| sa * l / (ab * l + noise_var)))
    }

    /// Draws `x0 ~ N(0, C)` from i.i.d. standard normals `white`.
    pub fn color(&self, white: &Grid) -> Result<Grid> {
        self.check_shape(white)?;
        // U diag(sqrt(lambda)) g with g = U^T white is also N(0, C).
        Ok(self.apply_spectral(white, f64::sqrt))
    }

    fn check_shape(&self, x: &Grid) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }
}

impl Denoiser for GpPrior {
    fn predict_eps(&self, x_t: &Grid, t: usize, schedule: &NoiseSchedule) -> Result<Grid> {
        self.check_shape(x_t)?;
        let (ab, noise_var) = noise_levels(t, schedule)?;
        let x0 = self.posterior_mean_x0(x_t, ab)?;
        let (sa, sn) = (ab.sqrt(), noise_var.sqrt());
        x_t.zip_map(&x0, |x, m| eps_from_x0(x, m, sa, sn))
    }

    fn input_shape(&self) -> Option<(usize, usize)> {
        Some(self.shape())
    }
}
