//! Predictive distributions of the latent curves and outlier scores.
//!
//! Independent-error models report the mean at `(beta_hat, r_hat)` and a
//! variance taken from the inverse negative Hessian of the h-likelihood, which
//! accounts for the uncertainty in `r_hat`. The joint-error baseline uses its
//! exact predictive law: the GPR mean and the GPR covariance scaled by `s_0i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::spectral::{GroupSpectrum, SpectralEval};
use crate::estimate::{fitted_group, inner_problem, CorrectionParts, FitResult};
use crate::kernel::{cross_matrix, eval_kernel, KernelParams};
use crate::model::EffectLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Query inputs, one row per point.
    pub at: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl Prediction {
    pub fn sd(&self) -> DVector<f64> {
        self.variance.map(|v| v.sqrt())
    }
}

fn group_index(fit: &FitResult, group: usize) -> Result<()> {
    if group >= fit.data.groups.len() {
        return Err(Error::input(format!("no group at index {group}")));
    }
    Ok(())
}

/// Prediction of the latent curve at the group's design points.
pub fn predict_train(fit: &FitResult, group: usize) -> Result<Prediction> {
    group_index(fit, group)?;
    let at = fit.data.groups[group].x.clone();
    if fit.config.joint_error {
        let (sp, ev, s0) = joint_state(fit, group)?;
        let cov = ev.conditional_cov(&sp) * s0;
        return Ok(Prediction {
            at,
            mean: ev.blup(&sp),
            variance: cov.diagonal().map(|v| v.max(0.0)),
            covariance: Some(cov),
        });
    }
    let (sp, ev, free) = fitted_group(fit, group)?;
    let prob = inner_problem(&fit.config, &fit.beta_hat, &sp, group);
    let cov = CorrectionParts::new(&prob, &free, &ev, 0)?.design_covariance(&sp, &ev);
    Ok(Prediction {
        at,
        mean: ev.blup(&sp),
        variance: cov.diagonal().map(|v| v.max(0.0)),
        covariance: Some(cov),
    })
}

/// Joint-error state at unit effects together with `s_0i`.
fn joint_state(fit: &FitResult, group: usize) -> Result<(GroupSpectrum, SpectralEval, f64)> {
    let g = &fit.data.groups[group];
    let sp = GroupSpectrum::new(&fit.beta_hat.thetas[group], g)?;
    let ev = sp.eval(&vec![1.0; g.j() + 1], fit.beta_hat.phis[group])?;
    let nu0 = fit
        .beta_hat
        .nu0
        .ok_or_else(|| Error::input("joint-error fit lacks nu0"))?;
    let s0 = s0_from_quad(ev.quad, nu0, g.n() * g.j());
    Ok((sp, ev, s0))
}

fn s0_from_quad(quad: f64, nu0: f64, n_total: usize) -> f64 {
    (2.0 * (nu0 - 1.0) + quad) / (2.0 * (nu0 - 1.0) + n_total as f64)
}

/// Variance factor `s_0 = (2(nu0 - 1) + y^T C^-1 y) / (2(nu0 - 1) + len(y))`
/// separating the joint-error predictive covariance from the GPR one. It
/// tends to 1 as the sample grows.
pub fn etpr_variance_factor(y: &DVector<f64>, c: &DMatrix<f64>, nu0: f64) -> Result<f64> {
    if c.nrows() != y.len() || c.ncols() != y.len() {
        return Err(Error::input("covariance does not match the response length"));
    }
    if !(nu0 > 1.0) {
        return Err(Error::domain(format!("nu0 must exceed 1, got {nu0}")));
    }
    let ch = nalgebra::Cholesky::new(c.clone()).ok_or_else(|| Error::numeric("covariance is not positive definite"))?;
    let quad = y.dot(&ch.solve(y));
    Ok(s0_from_quad(quad, nu0, y.len()))
}

/// Prediction of the latent curve at new inputs `z` (one row per point).
///
/// The per-point variance is the latent entry of the inverse negative Hessian
/// of the h-likelihood extended by that point; with `full_covariance` the
/// joint covariance over all points is also returned.
pub fn predict_new(fit: &FitResult, group: usize, z: &DMatrix<f64>, full_covariance: bool) -> Result<Prediction> {
    group_index(fit, group)?;
    let g = &fit.data.groups[group];
    if z.ncols() != g.p() {
        return Err(Error::input(format!(
            "query points have {} covariates but the design has {}",
            z.ncols(),
            g.p()
        )));
    }
    let kp = &fit.beta_hat.thetas[group];
    let m = z.nrows();
    // n x m cross covariances rotated into the eigenbasis
    let kzx = cross_matrix(kp, z, &g.x)?;
    let kzz_diag: Vec<f64> = (0..m)
        .map(|a| {
            let row: Vec<f64> = z.row(a).iter().copied().collect();
            eval_kernel(kp, &row, &row)
        })
        .collect::<Result<_>>()?;

    if fit.config.joint_error {
        let (sp, ev, s0) = joint_state(fit, group)?;
        let kt = sp.vecs.tr_mul(&kzx.transpose());
        let mean = kt.tr_mul(&ev.u);
        let base = latent_block(&sp, &ev, &kt, z, kp, full_covariance, &kzz_diag)?;
        let variance = base.0.map(|v| (v * s0).max(0.0));
        return Ok(Prediction {
            at: z.clone(),
            mean,
            variance,
            covariance: base.1.map(|c| c * s0),
        });
    }

    let (sp, ev, free) = fitted_group(fit, group)?;
    let prob = inner_problem(&fit.config, &fit.beta_hat, &sp, group);
    let kt = sp.vecs.tr_mul(&kzx.transpose());
    let r0 = ev.r[0];
    let mean = kt.tr_mul(&ev.u) * r0;
    let (base_var, base_cov) = latent_block(&sp, &ev, &kt, z, kp, full_covariance, &kzz_diag)?;

    // cross covariance of (f_n, f_z) given r, rotated: r0 k~ / (1 + c lambda)
    let snz = DMatrix::from_fn(sp.n(), m, |k, a| r0 * kt[(k, a)] / ev.denom[k]);
    let d = prob.n_free();
    let (variance, covariance) = if d == 0 {
        (base_var, base_cov)
    } else {
        let single = CorrectionParts::new(&prob, &free, &ev, 1)?;
        let mz = snz.tr_mul(&single.hfr); // m x d
        let variance = DVector::from_fn(m, |a, _| {
            let row = mz.row(a);
            let add = (row * &single.s_inv * row.transpose())[(0, 0)];
            (base_var[a] + add).max(0.0)
        });
        let covariance = match base_cov {
            Some(c) => {
                let joint = CorrectionParts::new(&prob, &free, &ev, m)?;
                let mz = snz.tr_mul(&joint.hfr);
                let full = c + &mz * &joint.s_inv * mz.transpose();
                Some((&full + full.transpose()) * 0.5)
            }
            None => None,
        };
        (variance, covariance)
    };
    Ok(Prediction {
        at: z.clone(),
        mean,
        variance,
        covariance,
    })
}

/// Conditional covariance of `f(z)` given `r` and the data: per-point
/// variances and optionally the full block.
fn latent_block(
    sp: &GroupSpectrum,
    ev: &SpectralEval,
    kt: &DMatrix<f64>,
    z: &DMatrix<f64>,
    kp: &KernelParams,
    full: bool,
    kzz_diag: &[f64],
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let r0 = ev.r[0];
    let m = kt.ncols();
    let p = ev.denom.map(|d| ev.w / (ev.phi * d));
    let var = DVector::from_fn(m, |a, _| {
        let red: f64 = (0..sp.n()).map(|k| p[k] * kt[(k, a)] * kt[(k, a)]).sum();
        r0 * kzz_diag[a] - r0 * r0 * red
    });
    let cov = if full {
        let kzz = cross_matrix(kp, z, z)?;
        let pk = DMatrix::from_fn(sp.n(), m, |k, a| p[k] * kt[(k, a)]);
        let c = kzz * r0 - kt.tr_mul(&pk) * (r0 * r0);
        Some((&c + c.transpose()) * 0.5)
    } else {
        None
    };
    Ok((var, cov))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveScore {
    pub group: u32,
    pub curve: u32,
    pub r_hat: f64,
    /// `multiplier * median` of the curve's group.
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// Curves are flagged when `r_hat > multiplier * median` within their group.
    pub multiplier: f64,
    pub curves: Vec<CurveScore>,
}

impl OutlierReport {
    pub fn flagged(&self) -> impl Iterator<Item = &CurveScore> {
        self.curves.iter().filter(|c| c.flagged)
    }
}

pub const DEFAULT_RULE_MULTIPLIER: f64 = 3.0;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Flags curves whose estimated noise effect exceeds `multiplier` times the
/// median effect of their group.
pub fn outlier_scores(fit: &FitResult, multiplier: f64) -> Result<OutlierReport> {
    match fit.config.layout() {
        EffectLayout::Noise | EffectLayout::Both => {}
        _ => {
            return Err(Error::Unsupported(format!(
                "model {} has no curve-specific noise effects",
                fit.config.kind().name()
            )))
        }
    }
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::input("rule multiplier must be positive"));
    }
    let mut curves = Vec::new();
    for (g, r) in fit.data.groups.iter().zip(&fit.r_hat.groups) {
        let med = median(&r[1..]);
        for (id, v) in g.curve_ids.iter().zip(&r[1..]) {
            curves.push(CurveScore {
                group: g.id,
                curve: *id,
                r_hat: *v,
                threshold: multiplier * med,
                flagged: *v > multiplier * med,
            });
        }
    }
    Ok(OutlierReport { multiplier, curves })
}
