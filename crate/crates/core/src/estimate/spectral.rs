//! Per-group marginal likelihood in the eigenbasis of `K`.
//!
//! With `K = V diag(lambda) V^T` the batch covariance decouples into `n`
//! independent `J x J` blocks `r0 lambda_k 1 1^T + phi diag(r_1..r_J)`, each
//! inverted by Sherman-Morrison. All quantities below are exact rewrites of
//! the dense formulas and are checked against them in the tests.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::{jittered_gram, KernelParams};
use crate::model::Group;

/// Eigendecomposition of a group's jittered Gram matrix and the rotated data.
#[derive(Debug, Clone)]
pub(crate) struct GroupSpectrum {
    pub lambda: DVector<f64>,
    pub vecs: DMatrix<f64>,
    /// `V^T y_j` for every curve.
    pub yt: Vec<DVector<f64>>,
}

impl GroupSpectrum {
    pub fn new(kp: &KernelParams, group: &Group) -> Result<Self> {
        let k = jittered_gram(kp, &group.x)?;
        let eig = SymmetricEigen::new(k);
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("eigendecomposition of the Gram matrix failed"));
        }
        let lambda = eig.eigenvalues.map(|v| v.max(0.0));
        let vecs = eig.eigenvectors;
        let yt = group.curves.iter().map(|y| vecs.tr_mul(y)).collect();
        Ok(GroupSpectrum { lambda, vecs, yt })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn j(&self) -> usize {
        self.yt.len()
    }

    /// Evaluates the Gaussian part of the group likelihood at full effects
    /// `(r0, r_1..r_J)` and noise scale `phi`.
    pub fn eval(&self, r: &[f64], phi: f64) -> Result<SpectralEval> {
        let n = self.n();
        let j = self.j();
        if r.len() != j + 1 {
            return Err(Error::input("effect vector does not match the number of curves"));
        }
        if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::numeric("non-positive effect or noise scale"));
        }
        let r0 = r[0];
        let w: f64 = r[1..].iter().map(|v| 1.0 / v).sum();
        let c = w * r0 / phi;
        let denom = self.lambda.map(|l| 1.0 + c * l);
        let g = self.lambda.zip_map(&denom, |l, d| r0 * l / d);

        let mut ybar = DVector::zeros(n);
        for (yj, rj) in self.yt.iter().zip(&r[1..]) {
            ybar.axpy(1.0 / rj, yj, 1.0);
        }
        let ft = g.component_mul(&ybar) / phi;
        let e: Vec<DVector<f64>> = self.yt.iter().map(|y| y - &ft).collect();
        let alpha: Vec<DVector<f64>> = e.iter().zip(&r[1..]).map(|(ej, rj)| ej / (phi * rj)).collect();
        let mut u = DVector::zeros(n);
        for a in &alpha {
            u += a;
        }

        let logdet = r[1..].iter().map(|rj| n as f64 * (phi * rj).ln()).sum::<f64>()
            + denom.iter().map(|d| d.ln()).sum::<f64>();
        let quad: f64 = self.yt.iter().zip(&alpha).map(|(y, a)| y.dot(a)).sum();
        let loglik = -0.5 * ((n * j) as f64 * (2.0 * PI).ln() + logdet + quad);
        if !loglik.is_finite() {
            return Err(Error::numeric("non-finite marginal likelihood"));
        }
        Ok(SpectralEval {
            r: r.to_vec(),
            phi,
            w,
            denom,
            g,
            ft,
            e,
            alpha,
            u,
            loglik,
            quad,
        })
    }
}

/// Intermediate quantities of one spectral evaluation.
#[derive(Debug, Clone)]
pub(crate) struct SpectralEval {
    pub r: Vec<f64>,
    pub phi: f64,
    pub w: f64,
    /// `1 + c lambda_k`.
    pub denom: DVector<f64>,
    /// Eigenvalues of the conditional covariance of `f` given `r`.
    pub g: DVector<f64>,
    /// BLUP of `f` in the eigenbasis.
    pub ft: DVector<f64>,
    pub e: Vec<DVector<f64>>,
    /// Rotated blocks of `C^{-1} y`.
    pub alpha: Vec<DVector<f64>>,
    /// Sum of the `alpha` blocks.
    pub u: DVector<f64>,
    pub loglik: f64,
    /// `y^T C^{-1} y`.
    pub quad: f64,
}

impl SpectralEval {
    fn trace_g(&self) -> f64 {
        self.g.sum()
    }

    /// Gradient of the Gaussian log-likelihood in `(r0, r_1..r_J)`.
    pub fn gradient(&self, sp: &GroupSpectrum) -> Vec<f64> {
        let n = sp.n() as f64;
        let phi = self.phi;
        let tr_g = self.trace_g();
        let mut out = Vec::with_capacity(self.r.len());
        let s0: f64 = sp
            .lambda
            .iter()
            .zip(self.u.iter())
            .zip(self.denom.iter())
            .map(|((l, u), d)| l * u * u - (self.w / phi) * l / d)
            .sum();
        out.push(0.5 * s0);
        for (ej, rj) in self.e.iter().zip(&self.r[1..]) {
            let rj2 = rj * rj;
            out.push(0.5 * (ej.norm_squared() / (phi * rj2) - n / rj + tr_g / (phi * rj2)));
        }
        out
    }

    /// Sum of absolute summands of each entry of [`SpectralEval::gradient`].
    pub fn term_scale(&self, sp: &GroupSpectrum) -> Vec<f64> {
        let n = sp.n() as f64;
        let phi = self.phi;
        let tr_g = self.trace_g();
        let mut out = Vec::with_capacity(self.r.len());
        let s0: f64 = sp
            .lambda
            .iter()
            .zip(self.u.iter())
            .zip(self.denom.iter())
            .map(|((l, u), d)| l * u * u + (self.w / phi) * l / d)
            .sum();
        out.push(0.5 * s0);
        for (ej, rj) in self.e.iter().zip(&self.r[1..]) {
            let rj2 = rj * rj;
            out.push(0.5 * (ej.norm_squared() / (phi * rj2) + n / rj + tr_g / (phi * rj2)));
        }
        out
    }

    /// Hessian of the Gaussian log-likelihood in `(r0, r_1..r_J)`.
    pub fn hessian(&self, sp: &GroupSpectrum) -> DMatrix<f64> {
        let n = sp.n() as f64;
        let j = sp.j();
        let phi = self.phi;
        let r = &self.r;
        let lam = &sp.lambda;
        let p = self.denom.map(|d| self.w / (phi * d));
        let rho = self.denom.map(|d| 1.0 / (phi * d));
        let v = lam.component_mul(&self.u);
        let g2: f64 = self.g.iter().map(|x| x * x).sum();
        let tr_g = self.trace_g();

        let mut h = DMatrix::zeros(j + 1, j + 1);
        let t1_00: f64 = v.iter().zip(p.iter()).map(|(vk, pk)| vk * vk * pk).sum();
        let t2_00: f64 = p.iter().zip(lam.iter()).map(|(pk, lk)| (pk * lk).powi(2)).sum();
        h[(0, 0)] = -t1_00 + 0.5 * t2_00;

        let lam_rho2: f64 = lam.iter().zip(rho.iter()).map(|(l, q)| l * q * q).sum();
        for a in 0..j {
            let ra = r[a + 1];
            let t1: f64 = v
                .iter()
                .zip(self.alpha[a].iter())
                .zip(self.denom.iter())
                .map(|((vk, ak), d)| vk * ak / d)
                .sum::<f64>()
                / ra;
            let t2 = phi * lam_rho2 / (ra * ra);
            h[(0, a + 1)] = -t1 + 0.5 * t2;
            h[(a + 1, 0)] = h[(0, a + 1)];
        }
        for a in 0..j {
            let ra = r[a + 1];
            for b in a..j {
                let rb = r[b + 1];
                let ga: f64 = self.alpha[a]
                    .iter()
                    .zip(self.alpha[b].iter())
                    .zip(self.g.iter())
                    .map(|((x, y), gk)| x * y * gk)
                    .sum();
                let mut t1 = -ga / (ra * rb);
                let t2 = if a == b {
                    t1 += phi * self.alpha[a].norm_squared() / ra;
                    n / (ra * ra) - 2.0 * tr_g / (phi * ra.powi(3)) + g2 / (phi * phi * ra.powi(4))
                } else {
                    g2 / (phi * phi * ra * ra * rb * rb)
                };
                h[(a + 1, b + 1)] = -t1 + 0.5 * t2;
                h[(b + 1, a + 1)] = h[(a + 1, b + 1)];
            }
        }
        h
    }

    /// BLUP of `f` on the design.
    pub fn blup(&self, sp: &GroupSpectrum) -> DVector<f64> {
        &sp.vecs * &self.ft
    }

    /// Conditional covariance of `f` given `r` on the design.
    pub fn conditional_cov(&self, sp: &GroupSpectrum) -> DMatrix<f64> {
        let vg = &sp.vecs * DMatrix::from_diagonal(&self.g);
        vg * sp.vecs.transpose()
    }
}
