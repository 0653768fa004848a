//! Dense h-likelihood evaluations built directly on `C_ri`.
//!
//! These are the reference implementations; the estimator itself runs on
//! the spectral rewrite in [`super::spectral`].

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::Beta;
use crate::error::{Error, Result};
use crate::kernel::{gram_gradients, jittered_gram};
use crate::model::{
    build_covariance, covariance_partials, ig_log_density, BatchData, CovarianceVar, ModelConfig, RandomEffects,
    ShapeSlot,
};

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))
}

fn gaussian_logpdf(y: &DVector<f64>, mean: Option<&DVector<f64>>, cov: DMatrix<f64>, what: &str) -> Result<f64> {
    let ch = cholesky(cov, what)?;
    let d = match mean {
        Some(m) => y - m,
        None => y.clone(),
    };
    let a = ch.solve(&d);
    let logdet: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (d.len() as f64 * (2.0 * PI).ln() + logdet + d.dot(&a)))
}

/// Effects with every non-free component forced to 1.
pub(crate) fn effective(config: &ModelConfig, r: &[f64]) -> Vec<f64> {
    let layout = config.layout();
    let j = r.len() - 1;
    layout.expand(&layout.compress(r), j)
}

/// Sum of IG log densities over the free effects of one group.
pub(crate) fn prior_term(config: &ModelConfig, beta: &Beta, r: &[f64]) -> Result<f64> {
    let layout = config.layout();
    let free = layout.compress(r);
    let mut s = 0.0;
    for (a, v) in free.iter().enumerate() {
        s += ig_log_density(beta.shape(layout.shape_slot(a))?, *v)?;
    }
    Ok(s)
}

fn check_shapes(config: &ModelConfig, beta: &Beta, effects: &RandomEffects, data: &BatchData) -> Result<()> {
    config.validate(data)?;
    beta.validate(config, data)?;
    effects.validate(data)
}

/// h-likelihood `h0` at latent curves `f` (one `n`-vector per group).
pub fn h0_value(
    config: &ModelConfig,
    beta: &Beta,
    effects: &RandomEffects,
    f: &[DVector<f64>],
    data: &BatchData,
) -> Result<f64> {
    check_shapes(config, beta, effects, data)?;
    if f.len() != data.groups.len() {
        return Err(Error::input("one latent vector per group is required"));
    }
    let mut total = 0.0;
    for (i, g) in data.groups.iter().enumerate() {
        if f[i].len() != g.n() {
            return Err(Error::input(format!("latent vector of group {} has the wrong length", g.id)));
        }
        let r = effective(config, &effects.groups[i]);
        let phi = beta.phis[i];
        let n = g.n();
        for (c, rj) in g.curves.iter().zip(&r[1..]) {
            let cov = DMatrix::identity(n, n) * (phi * rj);
            total += gaussian_logpdf(c, Some(&f[i]), cov, "noise covariance")?;
        }
        let k = jittered_gram(&beta.thetas[i], &g.x)? * r[0];
        total += gaussian_logpdf(&f[i], None, k, "signal covariance")?;
        total += prior_term(config, beta, &r)?;
    }
    Ok(total)
}

/// Integrated h-likelihood `h1`: the marginal `N(y_i | 0, C_ri)` plus IG terms.
pub fn h1_value(config: &ModelConfig, beta: &Beta, effects: &RandomEffects, data: &BatchData) -> Result<f64> {
    check_shapes(config, beta, effects, data)?;
    let mut total = 0.0;
    for (i, g) in data.groups.iter().enumerate() {
        let r = effective(config, &effects.groups[i]);
        let k = jittered_gram(&beta.thetas[i], &g.x)?;
        let c = build_covariance(&r, &k, beta.phis[i])?;
        total += gaussian_logpdf(&g.stacked(), None, c, "batch covariance")?;
        total += prior_term(config, beta, &r)?;
    }
    Ok(total)
}

/// BLUP `(sum_j r_ij^-1 I + (phi_i / r_i0) K^-1)^-1 sum_j r_ij^-1 y_ij`,
/// the maximizer of `h0` in `f_i`.
pub fn blup_f(beta: &Beta, effects: &RandomEffects, data: &BatchData, group: usize) -> Result<DVector<f64>> {
    let g = data
        .groups
        .get(group)
        .ok_or_else(|| Error::input(format!("no group at index {group}")))?;
    let r = effects
        .groups
        .get(group)
        .ok_or_else(|| Error::input("random effects do not cover the group"))?;
    if r.len() != g.j() + 1 {
        return Err(Error::input("random effects do not match the number of curves"));
    }
    let n = g.n();
    let k = jittered_gram(&beta.thetas[group], &g.x)?;
    let kinv = cholesky(k, "Gram matrix")?.inverse();
    let w: f64 = r[1..].iter().map(|v| 1.0 / v).sum();
    let mut rhs = DVector::zeros(n);
    for (c, rj) in g.curves.iter().zip(&r[1..]) {
        rhs.axpy(1.0 / rj, c, 1.0);
    }
    let mut a = kinv * (beta.phis[group] / r[0]);
    for d in 0..n {
        a[(d, d)] += w;
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok(cholesky(a, "BLUP system")?.solve(&rhs))
}

/// Conditional mean `r_i0 (b_J^T (x) K) C_ri^-1 y_i` of `f_i` given `r_i` and the data.
pub fn conditional_mean(beta: &Beta, effects: &RandomEffects, data: &BatchData, group: usize) -> Result<DVector<f64>> {
    let g = data
        .groups
        .get(group)
        .ok_or_else(|| Error::input(format!("no group at index {group}")))?;
    let r = &effects.groups[group];
    let n = g.n();
    let k = jittered_gram(&beta.thetas[group], &g.x)?;
    let c = build_covariance(r, &k, beta.phis[group])?;
    let alpha = cholesky(c, "batch covariance")?.solve(&g.stacked());
    let mut s = DVector::zeros(n);
    for j in 0..g.j() {
        s += alpha.rows(j * n, n);
    }
    Ok(k * s * r[0])
}

/// Gradient of `h1` in the kernel and noise parameters at fixed `r`:
/// per group, the unconstrained kernel parameters followed by `log phi_i`.
pub fn beta_scores(config: &ModelConfig, beta: &Beta, effects: &RandomEffects, data: &BatchData) -> Result<Vec<Vec<f64>>> {
    check_shapes(config, beta, effects, data)?;
    let mut out = Vec::new();
    for (i, g) in data.groups.iter().enumerate() {
        let r = effective(config, &effects.groups[i]);
        let k = jittered_gram(&beta.thetas[i], &g.x)?;
        let grads = gram_gradients(&beta.thetas[i], &g.x)?;
        let phi = beta.phis[i];
        let c = build_covariance(&r, &k, phi)?;
        let ch = cholesky(c, "batch covariance")?;
        let alpha = ch.solve(&g.stacked());
        let cinv = ch.inverse();
        let mut scores = Vec::new();
        let mut phi_score = 0.0;
        for (var, d) in covariance_partials(config.layout(), &r, &k, &grads, phi)? {
            let s = 0.5 * (alpha.dot(&(&d * &alpha)) - (&cinv * &d).trace());
            match var {
                CovarianceVar::Kernel(_) => scores.push(s),
                CovarianceVar::Phi => phi_score = s * phi,
                CovarianceVar::Effect(_) => {}
            }
        }
        scores.push(phi_score);
        out.push(scores);
    }
    Ok(out)
}

impl Beta {
    pub(crate) fn shape(&self, slot: ShapeSlot) -> Result<f64> {
        match slot {
            ShapeSlot::Nu0 => self.nu0,
            ShapeSlot::Nu1 => self.nu1,
        }
        .ok_or_else(|| Error::input("missing shape parameter for an extended t-process"))
    }
}
