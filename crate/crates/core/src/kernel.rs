//! Squared-exponential plus linear covariance kernel.
//!
//! `k(u, v) = theta0 * exp(-0.5 * sum_l eta_l (u_l - v_l)^2) + sum_l xi_l u_l v_l`
//!
//! Hyperparameters are optimized on an unconstrained scale:
//! `[ln theta0, ln eta_1.., ln(xi_1 + XI_FLOOR)..]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal jitter added to every Gram matrix before factorization.
pub const JITTER_REL: f64 = 1e-8;

/// Offset that lets the linear weights reach zero on the log scale.
pub const XI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta0: f64,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
}

impl KernelParams {
    pub fn new(theta0: f64, eta: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        let params = KernelParams { theta0, eta, xi };
        params.validate()?;
        Ok(params)
    }

    /// Scalar-covariate convenience constructor.
    pub fn scalar(theta0: f64, eta: f64, xi: f64) -> Result<Self> {
        Self::new(theta0, vec![eta], vec![xi])
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.len() != self.xi.len() {
            return Err(Error::input(format!(
                "kernel has {} length-scale weights but {} linear weights",
                self.eta.len(),
                self.xi.len()
            )));
        }
        if !(self.theta0 > 0.0 && self.theta0.is_finite()) {
            return Err(Error::input(format!("theta0 must be positive, got {}", self.theta0)));
        }
        if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::input(format!("eta must be positive, got {e}")));
        }
        if let Some(x) = self.xi.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::input(format!("xi must be non-negative, got {x}")));
        }
        Ok(())
    }

    /// Covariate dimension `p`.
    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    /// Number of free parameters on the unconstrained scale.
    pub fn n_free(&self) -> usize {
        1 + 2 * self.dim()
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free());
        out.push(self.theta0.ln());
        out.extend(self.eta.iter().map(|e| e.ln()));
        out.extend(self.xi.iter().map(|x| (x + XI_FLOOR).ln()));
        out
    }

    /// Inverse of [`to_unconstrained`](Self::to_unconstrained) for a `p`-dimensional kernel.
    pub fn from_unconstrained(p: usize, s: &[f64]) -> Self {
        debug_assert_eq!(s.len(), 1 + 2 * p);
        KernelParams {
            theta0: s[0].exp(),
            eta: s[1..1 + p].iter().map(|v| v.exp()).collect(),
            xi: s[1 + p..1 + 2 * p]
                .iter()
                .map(|v| (v.exp() - XI_FLOOR).max(0.0))
                .collect(),
        }
    }

    #[inline]
    fn se_part(&self, u: &[f64], v: &[f64]) -> f64 {
        let d2: f64 = self
            .eta
            .iter()
            .zip(u.iter().zip(v))
            .map(|(e, (a, b))| e * (a - b) * (a - b))
            .sum();
        self.theta0 * (-0.5 * d2).exp()
    }

    #[inline]
    fn linear_part(&self, u: &[f64], v: &[f64]) -> f64 {
        self.xi.iter().zip(u.iter().zip(v)).map(|(x, (a, b))| x * (a * b)).sum()
    }

    #[inline]
    fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        self.se_part(u, v) + self.linear_part(u, v)
    }
}

fn check_point(params: &KernelParams, u: &[f64]) -> Result<()> {
    if u.len() != params.dim() {
        return Err(Error::input(format!(
            "point has dimension {} but kernel expects {}",
            u.len(),
            params.dim()
        )));
    }
    Ok(())
}

fn check_design(params: &KernelParams, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.dim() {
        return Err(Error::input(format!(
            "design has {} covariate columns but kernel expects {}",
            x.ncols(),
            params.dim()
        )));
    }
    Ok(())
}

fn row(x: &DMatrix<f64>, a: usize) -> Vec<f64> {
    x.row(a).iter().copied().collect()
}

pub fn eval_kernel(params: &KernelParams, u: &[f64], v: &[f64]) -> Result<f64> {
    check_point(params, u)?;
    check_point(params, v)?;
    Ok(params.eval_unchecked(u, v))
}

/// Gram matrix `K[a][b] = k(x_a, x_b)` over the rows of `x`, without jitter.
pub fn gram_matrix(params: &KernelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_design(params, x)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::input("design has no rows"));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|a| row(x, a)).collect();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let v = params.eval_unchecked(&rows[a], &rows[b]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("Gram matrix has non-finite entries"));
    }
    Ok(k)
}

/// The jitter `JITTER_REL * mean(diag(K))` for a Gram matrix.
pub fn jitter_for(k: &DMatrix<f64>) -> f64 {
    JITTER_REL * k.diagonal().mean()
}

/// Gram matrix with the fixed diagonal jitter applied; this is what every
/// factorization in the crate sees.
pub fn jittered_gram(params: &KernelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut k = gram_matrix(params, x)?;
    let j = jitter_for(&k);
    for a in 0..k.nrows() {
        k[(a, a)] += j;
    }
    Ok(k)
}

/// `k_z = (k(z, x_1), ..., k(z, x_n))`.
pub fn cross_vector(params: &KernelParams, z: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_point(params, z)?;
    check_design(params, x)?;
    Ok(DVector::from_iterator(
        x.nrows(),
        (0..x.nrows()).map(|a| params.eval_unchecked(z, &row(x, a))),
    ))
}

/// Cross-covariance matrix between the rows of `z` (m rows) and `x` (n rows).
pub fn cross_matrix(params: &KernelParams, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_design(params, z)?;
    check_design(params, x)?;
    let zr: Vec<Vec<f64>> = (0..z.nrows()).map(|a| row(z, a)).collect();
    let xr: Vec<Vec<f64>> = (0..x.nrows()).map(|a| row(x, a)).collect();
    Ok(DMatrix::from_fn(z.nrows(), x.nrows(), |a, b| {
        params.eval_unchecked(&zr[a], &xr[b])
    }))
}

/// Element-wise derivatives of the (unjittered) Gram matrix with respect to
/// each unconstrained parameter, in the order of
/// [`KernelParams::to_unconstrained`].
pub fn gram_gradients(params: &KernelParams, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    params.validate()?;
    check_design(params, x)?;
    let n = x.nrows();
    let p = params.dim();
    let rows: Vec<Vec<f64>> = (0..n).map(|a| row(x, a)).collect();
    let se = DMatrix::from_fn(n, n, |a, b| params.se_part(&rows[a], &rows[b]));

    let mut out = Vec::with_capacity(params.n_free());
    out.push(se.clone());
    for l in 0..p {
        let eta = params.eta[l];
        out.push(DMatrix::from_fn(n, n, |a, b| {
            let d = rows[a][l] - rows[b][l];
            -0.5 * eta * d * d * se[(a, b)]
        }));
    }
    for l in 0..p {
        let scale = params.xi[l] + XI_FLOOR;
        out.push(DMatrix::from_fn(n, n, |a, b| scale * rows[a][l] * rows[b][l]));
    }
    Ok(out)
}
