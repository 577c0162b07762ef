//! Gaussian beliefs used by the filter, plus dense reference computations.
//!
//! [`DiagGaussian`] carries the latent task belief and encoder outputs.
//! [`FactorizedBelief`] is the latent state belief: a mean of size `2m` and
//! three diagonal covariance vectors describing the block covariance
//!
//! ```text
//! | diag(var_u)  diag(cov_s) |
//! | diag(cov_s)  diag(var_l) |
//! ```
//!
//! [`DenseGaussian`] and the free functions in this module operate on full
//! matrices. They exist for tests and oracles only; nothing on the training
//! path touches them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalue tolerance for positive-semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-9;

/// Lower bound applied to every variance after a covariance update.
pub const VAR_FLOOR: f64 = 1e-8;

/// Entries outside the factorized pattern must be below this to convert.
pub const PATTERN_TOL: f64 = 1e-12;

/// Condition number above which an innovation covariance counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(format!("{name}[{i}] is not finite")));
    }
    Ok(())
}

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, var has {}",
                mean.len(),
                var.len()
            )));
        }
        check_finite("mean", &mean)?;
        if let Some(i) = var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidValue(format!("var[{i}] = {} is not positive", var[i])));
        }
        Ok(Self { mean, var })
    }

    /// N(0, I) in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn to_dense(&self) -> DenseGaussian {
        DenseGaussian {
            mean: DVector::from_column_slice(&self.mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(&self.var)),
        }
    }
}

/// Latent state belief with the factorized block covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedBelief {
    mean: Vec<f64>,
    var_u: Vec<f64>,
    var_l: Vec<f64>,
    cov_s: Vec<f64>,
}

impl FactorizedBelief {
    /// Builds a belief, checking positivity of the diagonal variances and the
    /// per-coordinate 2x2 PSD condition `var_u * var_l >= cov_s^2`.
    pub fn new(mean: Vec<f64>, var_u: Vec<f64>, var_l: Vec<f64>, cov_s: Vec<f64>) -> Result<Self> {
        let m = var_u.len();
        if mean.len() != 2 * m || var_l.len() != m || cov_s.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "factorized belief needs mean of 2m and three m-vectors, got mean {}, var_u {}, var_l {}, cov_s {}",
                mean.len(),
                m,
                var_l.len(),
                cov_s.len()
            )));
        }
        check_finite("mean", &mean)?;
        check_finite("cov_s", &cov_s)?;
        for i in 0..m {
            let (u, l, s) = (var_u[i], var_l[i], cov_s[i]);
            if !(u.is_finite() && u > 0.0) || !(l.is_finite() && l > 0.0) {
                return Err(Error::PsdViolation(format!(
                    "coordinate {i}: var_u = {u}, var_l = {l} must be positive"
                )));
            }
            if u * l - s * s < -PSD_TOL * (u * l).max(1.0) {
                return Err(Error::PsdViolation(format!(
                    "coordinate {i}: var_u * var_l - cov_s^2 = {:e}",
                    u * l - s * s
                )));
            }
        }
        Ok(Self { mean, var_u, var_l, cov_s })
    }

    /// Broad zero-mean belief used at the start of every window.
    pub fn initial(m: usize, var: f64) -> Self {
        Self { mean: vec![0.0; 2 * m], var_u: vec![var; m], var_l: vec![var; m], cov_s: vec![0.0; m] }
    }

    /// Latent observation dimension `m` (half the state size).
    pub fn m(&self) -> usize {
        self.var_u.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn upper_mean(&self) -> &[f64] {
        &self.mean[..self.m()]
    }

    pub fn lower_mean(&self) -> &[f64] {
        &self.mean[self.m()..]
    }

    pub fn var_u(&self) -> &[f64] {
        &self.var_u
    }

    pub fn var_l(&self) -> &[f64] {
        &self.var_l
    }

    pub fn cov_s(&self) -> &[f64] {
        &self.cov_s
    }

    /// Expands the three diagonals into a full `2m x 2m` covariance.
    pub fn to_dense(&self) -> DenseGaussian {
        let m = self.m();
        let mut cov = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            cov[(i, i)] = self.var_u[i];
            cov[(m + i, m + i)] = self.var_l[i];
            cov[(i, m + i)] = self.cov_s[i];
            cov[(m + i, i)] = self.cov_s[i];
        }
        DenseGaussian { mean: DVector::from_column_slice(&self.mean), cov }
    }

    /// Reads the factorized representation back out of a dense Gaussian whose
    /// covariance has exactly the three-diagonal pattern.
    pub fn from_dense(g: &DenseGaussian) -> Result<Self> {
        let d = g.dim();
        if !d.is_multiple_of(2) {
            return Err(Error::OddLatentDim(d));
        }
        let m = d / 2;
        for r in 0..d {
            for c in 0..d {
                let allowed = r == c || r + m == c || c + m == r;
                if !allowed && g.cov[(r, c)].abs() > PATTERN_TOL {
                    return Err(Error::PatternViolation { row: r, col: c, value: g.cov[(r, c)] });
                }
            }
        }
        let var_u = (0..m).map(|i| g.cov[(i, i)]).collect();
        let var_l = (0..m).map(|i| g.cov[(m + i, m + i)]).collect();
        let cov_s = (0..m).map(|i| g.cov[(i, m + i)]).collect();
        Self::new(g.mean.iter().copied().collect(), var_u, var_l, cov_s)
    }
}

/// Full-covariance Gaussian, used only by oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DenseGaussian {
    /// Validates symmetry and positive-semidefiniteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has {d} entries, cov is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.amax().max(1.0);
        for r in 0..d {
            for c in r + 1..d {
                if (cov[(r, c)] - cov[(c, r)]).abs() > 1e-12 * scale {
                    return Err(Error::PsdViolation(format!("covariance is not symmetric at ({r}, {c})")));
                }
            }
        }
        let min_eig = min_eigenvalue(&cov);
        if min_eig < -PSD_TOL * scale {
            return Err(Error::PsdViolation(format!("minimum eigenvalue {min_eig:e}")));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Conditions `prior` on an observation `y ~ N(H z, diag(obs_var))` by
/// explicit matrix inversion of the innovation covariance.
pub fn dense_condition(
    prior: &DenseGaussian,
    obs_mean: &[f64],
    obs_var: &[f64],
    h: &DMatrix<f64>,
) -> Result<DenseGaussian> {
    let d = prior.dim();
    let k = obs_mean.len();
    if obs_var.len() != k || h.nrows() != k || h.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "observation of size {k} with variance of size {} and H {}x{} against a prior of size {d}",
            obs_var.len(),
            h.nrows(),
            h.ncols()
        )));
    }
    if let Some(i) = obs_var.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidValue(format!("obs_var[{i}] = {} is not positive", obs_var[i])));
    }
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(obs_var));
    let s = h * &prior.cov * h.transpose() + r;
    let eig = s.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::SingularMatrix(cond));
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularMatrix(cond))?;
    let gain = &prior.cov * h.transpose() * s_inv;
    let innovation = DVector::from_column_slice(obs_mean) - h * &prior.mean;
    let mean = &prior.mean + &gain * innovation;
    let cov = (DMatrix::identity(d, d) - &gain * h) * &prior.cov;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(DenseGaussian { mean, cov })
}

/// Marginal of `y | u, v ~ N(A u + b + B v, Sigma)` with independent
/// `u ~ N(mu_u, Sigma_u)` and `v ~ N(mu_v, Sigma_v)`.
#[allow(clippy::too_many_arguments)]
pub fn identity1_marginal(
    mu_u: &DVector<f64>,
    sigma_u: &DMatrix<f64>,
    mu_v: &DVector<f64>,
    sigma_v: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<DenseGaussian> {
    let dy = a.nrows();
    let consistent = a.ncols() == mu_u.len()
        && sigma_u.shape() == (mu_u.len(), mu_u.len())
        && b_mat.nrows() == dy
        && b_mat.ncols() == mu_v.len()
        && sigma_v.shape() == (mu_v.len(), mu_v.len())
        && b.len() == dy
        && sigma.shape() == (dy, dy);
    if !consistent {
        return Err(Error::DimensionMismatch("identity1_marginal operands have inconsistent shapes".into()));
    }
    let mean = a * mu_u + b + b_mat * mu_v;
    let cov = a * sigma_u * a.transpose() + b_mat * sigma_v * b_mat.transpose() + sigma;
    Ok(DenseGaussian { mean, cov: (&cov + cov.transpose()) * 0.5 })
}
