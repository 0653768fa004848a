//! h-likelihood estimation.
//!
//! For fixed parameters `beta` the random effects are profiled out by
//! maximizing `h1`; `beta` itself maximizes the adjusted profile likelihood
//! `m = h1(r_hat) - 1/2 log|B / 2 pi|` where `B` is the negative Hessian of
//! `h1` in the free effects.

pub(crate) mod inner;
mod likelihood;
mod optim;
pub(crate) mod spectral;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::model::{ig_curvature, BatchData, Group, ModelConfig, NuMode, RandomEffects, NU_CEILING, NU_FLOOR};
use inner::{solve_group, GroupProblem, InnerOptions, InnerSolution};
use optim::{maximize, BfgsOptions, Objective};
use spectral::{GroupSpectrum, SpectralEval};

pub use likelihood::{beta_scores, blup_f, conditional_mean, h0_value, h1_value};
pub use optim::Termination;

/// Model parameters: per-group kernels and noise scales plus the IG shapes.
///
/// The unconstrained vector used by the optimizer is ordered as every
/// group's kernel parameters (`log theta0`, `log eta_l`, `log(xi_l + 1e-12)`),
/// then `log phi_i` for every group, then `log(nu0 - 1)` and `log(nu1 - 1)`
/// for the shapes being estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub thetas: Vec<KernelParams>,
    pub phis: Vec<f64>,
    pub nu0: Option<f64>,
    pub nu1: Option<f64>,
}

impl Beta {
    pub fn new(thetas: Vec<KernelParams>, phis: Vec<f64>, nu0: Option<f64>, nu1: Option<f64>) -> Self {
        Beta { thetas, phis, nu0, nu1 }
    }

    /// Shapes carried over from the model configuration.
    pub fn with_config_shapes(thetas: Vec<KernelParams>, phis: Vec<f64>, config: &ModelConfig) -> Self {
        Beta::new(thetas, phis, config.nu0(), config.nu1())
    }

    pub fn validate(&self, config: &ModelConfig, data: &BatchData) -> Result<()> {
        let ng = data.groups.len();
        if self.thetas.len() != ng || self.phis.len() != ng {
            return Err(Error::input("parameters do not match the number of groups"));
        }
        for t in &self.thetas {
            t.validate()?;
            if t.dim() != data.p() {
                return Err(Error::input("kernel dimension does not match the covariates"));
            }
        }
        if self.phis.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::input("phi must be positive"));
        }
        for (want, have, name) in [(config.nu0(), self.nu0, "nu0"), (config.nu1(), self.nu1, "nu1")] {
            match (want, have) {
                (Some(_), Some(v)) if v >= NU_FLOOR && v.is_finite() => {}
                (Some(_), _) => return Err(Error::input(format!("{name} must exceed 1"))),
                (None, Some(_)) => return Err(Error::input(format!("{name} is not used by this model"))),
                (None, None) => {}
            }
        }
        Ok(())
    }

    fn estimated_shapes(config: &ModelConfig) -> (bool, bool) {
        match config.nu_mode {
            NuMode::Fixed => (false, false),
            NuMode::Estimated => (config.nu0().is_some(), config.nu1().is_some()),
        }
    }

    pub fn to_unconstrained(&self, config: &ModelConfig) -> Vec<f64> {
        let mut v: Vec<f64> = self.thetas.iter().flat_map(|t| t.to_unconstrained()).collect();
        v.extend(self.phis.iter().map(|p| p.ln()));
        let (e0, e1) = Self::estimated_shapes(config);
        if e0 {
            v.push((self.nu0.unwrap() - 1.0).ln());
        }
        if e1 {
            v.push((self.nu1.unwrap() - 1.0).ln());
        }
        v
    }

    /// Inverse of [`Beta::to_unconstrained`]; shapes that are not estimated
    /// are copied from `template`.
    pub fn from_unconstrained(template: &Beta, config: &ModelConfig, v: &[f64]) -> Beta {
        let v: Vec<f64> = v.iter().map(|s| s.clamp(-LOG_BOUND, LOG_BOUND)).collect();
        let mut at = 0;
        let thetas = template
            .thetas
            .iter()
            .map(|t| {
                let k = t.n_free();
                let out = KernelParams::from_unconstrained(t.dim(), &v[at..at + k]);
                at += k;
                out
            })
            .collect();
        let phis = v[at..at + template.phis.len()].iter().map(|s| s.exp()).collect();
        at += template.phis.len();
        let (e0, e1) = Self::estimated_shapes(config);
        let shape = |s: f64| 1.0 + s.exp().clamp(NU_FLOOR - 1.0, NU_CEILING - 1.0);
        let nu0 = if e0 {
            at += 1;
            Some(shape(v[at - 1]))
        } else {
            template.nu0
        };
        let nu1 = if e1 {
            Some(shape(v[at]))
        } else {
            template.nu1
        };
        Beta { thetas, phis, nu0, nu1 }
    }

    /// Default starting point: `theta0 = phi = var(y) / 2`,
    /// `eta = 1 / median squared distance`, `xi = 1e-3`, shapes from `config`.
    pub fn initial(config: &ModelConfig, data: &BatchData, init: &InitSpec) -> Result<Beta> {
        let mut thetas = Vec::new();
        let mut phis = Vec::new();
        for g in &data.groups {
            let half_var = (sample_variance(g) / 2.0).max(1e-6);
            let p = g.p();
            let eta = match init.eta {
                Some(e) => vec![e; p],
                None => median_inverse_sq_dist(g),
            };
            thetas.push(KernelParams::new(
                init.theta0.unwrap_or(half_var),
                eta,
                vec![init.xi.unwrap_or(1e-3); p],
            )?);
            phis.push(init.phi.unwrap_or(half_var));
        }
        let beta = Beta::with_config_shapes(thetas, phis, config);
        beta.validate(config, data)?;
        Ok(beta)
    }
}

fn sample_variance(g: &Group) -> f64 {
    let vals: Vec<f64> = g.curves.iter().flat_map(|c| c.iter().copied()).collect();
    let n = vals.len() as f64;
    if vals.len() < 2 {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn median_inverse_sq_dist(g: &Group) -> Vec<f64> {
    (0..g.p())
        .map(|l| {
            let col = g.x.column(l);
            let mut d: Vec<f64> = Vec::new();
            for a in 0..col.len() {
                for b in a + 1..col.len() {
                    let s = (col[a] - col[b]).powi(2);
                    if s > 0.0 {
                        d.push(s);
                    }
                }
            }
            if d.is_empty() {
                return 1.0;
            }
            d.sort_by(|a, b| a.total_cmp(b));
            let m = d.len();
            let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
            1.0 / med
        })
        .collect()
}

/// Log-scale parameters are clamped to `[-LOG_BOUND, LOG_BOUND]`, so `m` is
/// flat outside the box and boundary optima stay finite and positive.
pub const LOG_BOUND: f64 = 30.0;

/// Optional starting values applied to every group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub theta0: Option<f64>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// Central-difference step on the unconstrained scale.
    pub fd_step: f64,
    pub init: InitSpec,
    /// Multipliers applied to the initial `eta`; the best converged start wins.
    pub eta_starts: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            inner_tol: 1e-8,
            inner_max_iter: 200,
            outer_tol: 1e-5,
            outer_max_iter: 500,
            fd_step: 1e-4,
            init: InitSpec::default(),
            eta_starts: vec![1.0],
        }
    }
}

impl FitOptions {
    fn inner(&self) -> InnerOptions {
        InnerOptions {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective_evaluations: usize,
    /// Infinity norm of the final finite-difference gradient of `m`.
    pub outer_grad_norm: f64,
    /// Infinity norm of the final `h1` score in the free effects, per group.
    pub inner_grad_norms: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    /// Groups whose `B` was not positive definite at the optimum.
    pub saddle_groups: Vec<u32>,
    pub eta_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub config: ModelConfig,
    pub data: BatchData,
    pub beta_hat: Beta,
    pub r_hat: RandomEffects,
    /// BLUPs of the latent curves on each group's design.
    pub f_hat: Vec<DVector<f64>>,
    /// Per-group blocks of `B` over the free effects.
    pub b: Vec<DMatrix<f64>>,
    /// Per-group corrected covariance of the latent curve on the design.
    pub h_in: Vec<DMatrix<f64>>,
    pub m_value: f64,
    pub diagnostics: Diagnostics,
}

/// `m` at one parameter value with the profiled effects.
#[derive(Debug, Clone)]
pub struct ProfileValue {
    pub m: f64,
    pub h1: f64,
    pub r_hat: RandomEffects,
    pub b: Vec<DMatrix<f64>>,
    pub saddle_groups: Vec<u32>,
}

struct GroupFit {
    spectrum: GroupSpectrum,
    solution: InnerSolution,
    b: DMatrix<f64>,
    logdet: f64,
    saddle: bool,
}

pub(crate) fn inner_problem<'a>(config: &ModelConfig, beta: &Beta, sp: &'a GroupSpectrum, i: usize) -> GroupProblem<'a> {
    GroupProblem {
        sp,
        layout: config.layout(),
        phi: beta.phis[i],
        nu0: beta.nu0.unwrap_or(f64::NAN),
        nu1: beta.nu1.unwrap_or(f64::NAN),
    }
}

/// `log|B / 2 pi|`; an indefinite `B` falls back to absolute eigenvalues.
fn laplace_logdet(b: &DMatrix<f64>) -> Result<(f64, bool)> {
    if b.nrows() == 0 {
        return Ok((0.0, false));
    }
    let eig = SymmetricEigen::new(b.clone()).eigenvalues;
    if eig.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::numeric("Laplace matrix is singular"));
    }
    let saddle = eig.iter().any(|v| *v <= 0.0);
    Ok((eig.iter().map(|v| (v.abs() / (2.0 * PI)).ln()).sum(), saddle))
}

fn fit_group(
    config: &ModelConfig,
    beta: &Beta,
    group: &Group,
    i: usize,
    warm: &[f64],
    opts: InnerOptions,
) -> Result<GroupFit> {
    let spectrum = GroupSpectrum::new(&beta.thetas[i], group)?;
    let prob = inner_problem(config, beta, &spectrum, i);
    let solution = solve_group(&prob, warm, opts)?;
    let b = -prob.hessian(&solution.free, &solution.eval);
    let (logdet, saddle) = laplace_logdet(&b)?;
    Ok(GroupFit {
        spectrum,
        solution,
        b,
        logdet,
        saddle,
    })
}

fn initial_free(config: &ModelConfig, data: &BatchData) -> Vec<Vec<f64>> {
    let layout = config.layout();
    data.groups.iter().map(|g| vec![1.0; layout.n_free(g.j())]).collect()
}

fn profile(
    config: &ModelConfig,
    beta: &Beta,
    data: &BatchData,
    warm: &[Vec<f64>],
    opts: InnerOptions,
) -> Result<Vec<GroupFit>> {
    data.groups
        .iter()
        .enumerate()
        .map(|(i, g)| fit_group(config, beta, g, i, &warm[i], opts))
        .collect()
}

fn m_of(fits: &[GroupFit]) -> f64 {
    fits.iter().map(|f| f.solution.value - 0.5 * f.logdet).sum()
}

fn effects_of(config: &ModelConfig, data: &BatchData, fits: &[GroupFit]) -> RandomEffects {
    let layout = config.layout();
    RandomEffects {
        groups: fits
            .iter()
            .zip(&data.groups)
            .map(|(f, g)| layout.expand(&f.solution.free, g.j()))
            .collect(),
    }
}

fn check(config: &ModelConfig, beta: &Beta, data: &BatchData) -> Result<()> {
    config.validate(data)?;
    beta.validate(config, data)
}

fn warm_from(config: &ModelConfig, data: &BatchData, init: &RandomEffects) -> Result<Vec<Vec<f64>>> {
    init.validate(data)?;
    let layout = config.layout();
    Ok(init.groups.iter().map(|r| layout.compress(r)).collect())
}

/// Maximizes `h1` over the free random effects at fixed `beta`.
pub fn solve_r(
    config: &ModelConfig,
    beta: &Beta,
    data: &BatchData,
    init: &RandomEffects,
    options: &FitOptions,
) -> Result<RandomEffects> {
    check(config, beta, data)?;
    let warm = warm_from(config, data, init)?;
    let fits = profile(config, beta, data, &warm, options.inner())?;
    Ok(effects_of(config, data, &fits))
}

/// Scores of `h1` in each group's free effects.
pub fn r_scores(config: &ModelConfig, beta: &Beta, effects: &RandomEffects, data: &BatchData) -> Result<Vec<Vec<f64>>> {
    check(config, beta, data)?;
    let warm = warm_from(config, data, effects)?;
    data.groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let sp = GroupSpectrum::new(&beta.thetas[i], g)?;
            let prob = inner_problem(config, beta, &sp, i);
            let (_, ev) = prob.value(&warm[i])?;
            Ok(prob.gradient(&warm[i], &ev))
        })
        .collect()
}

/// `B = -d^2 h1 / dr dr^T` over all free effects, block-diagonal by group.
pub fn laplace_b(config: &ModelConfig, beta: &Beta, r_hat: &RandomEffects, data: &BatchData) -> Result<DMatrix<f64>> {
    check(config, beta, data)?;
    let warm = warm_from(config, data, r_hat)?;
    let blocks: Vec<DMatrix<f64>> = data
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let sp = GroupSpectrum::new(&beta.thetas[i], g)?;
            let prob = inner_problem(config, beta, &sp, i);
            let (_, ev) = prob.value(&warm[i])?;
            Ok(-prob.hessian(&warm[i], &ev))
        })
        .collect::<Result<_>>()?;
    let d: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(d, d);
    let mut at = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((at, at), (k, k)).copy_from(&b);
        at += k;
    }
    Ok(out)
}

/// Adjusted profile likelihood `m(beta)`, solving for the effects from the
/// prior mean.
pub fn adjusted_profile_m(config: &ModelConfig, beta: &Beta, data: &BatchData, options: &FitOptions) -> Result<ProfileValue> {
    check(config, beta, data)?;
    let fits = profile(config, beta, data, &initial_free(config, data), options.inner())?;
    Ok(ProfileValue {
        m: m_of(&fits),
        h1: fits.iter().map(|f| f.solution.value).sum(),
        r_hat: effects_of(config, data, &fits),
        b: fits.iter().map(|f| f.b.clone()).collect(),
        saddle_groups: fits.iter().zip(&data.groups).filter(|(f, _)| f.saddle).map(|(_, g)| g.id).collect(),
    })
}

struct ProfileObjective<'a> {
    config: &'a ModelConfig,
    data: &'a BatchData,
    template: Beta,
    inner: InnerOptions,
    warm: Vec<Vec<f64>>,
    last: Option<Vec<Vec<f64>>>,
    inner_iterations: usize,
    evaluations: usize,
}

impl Objective for ProfileObjective<'_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        self.last = None;
        let beta = Beta::from_unconstrained(&self.template, self.config, x);
        let fits = profile(self.config, &beta, self.data, &self.warm, self.inner)?;
        self.inner_iterations += fits.iter().map(|f| f.solution.iterations).sum::<usize>();
        self.last = Some(fits.iter().map(|f| f.solution.free.clone()).collect());
        let m = m_of(&fits);
        if !m.is_finite() {
            return Err(Error::numeric("non-finite adjusted profile likelihood"));
        }
        Ok(m)
    }

    fn commit(&mut self) {
        if let Some(w) = self.last.take() {
            self.warm = w;
        }
    }
}

/// Fits the model by maximizing `m` over `beta` with BFGS.
pub fn fit(config: &ModelConfig, data: &BatchData, options: &FitOptions) -> Result<FitResult> {
    config.validate(data)?;
    let starts = if options.eta_starts.is_empty() {
        vec![1.0]
    } else {
        options.eta_starts.clone()
    };
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for mult in starts {
        match fit_from(config, data, options, mult) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.m_value > b.m_value) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one start"))
}

fn fit_from(config: &ModelConfig, data: &BatchData, options: &FitOptions, eta_mult: f64) -> Result<FitResult> {
    let mut beta0 = Beta::initial(config, data, &options.init)?;
    for t in &mut beta0.thetas {
        for e in &mut t.eta {
            *e *= eta_mult;
        }
    }
    let mut obj = ProfileObjective {
        config,
        data,
        template: beta0.clone(),
        inner: options.inner(),
        warm: initial_free(config, data),
        last: None,
        inner_iterations: 0,
        evaluations: 0,
    };
    let x0 = beta0.to_unconstrained(config);
    let out = maximize(
        &mut obj,
        &x0,
        BfgsOptions {
            tol: options.outer_tol,
            max_iter: options.outer_max_iter,
            fd_step: options.fd_step,
            max_step: 2.0,
            bound: LOG_BOUND,
        },
    )?;
    let beta_hat = Beta::from_unconstrained(&beta0, config, &out.x);
    let fits = profile(config, &beta_hat, data, &obj.warm, options.inner())?;
    let r_hat = effects_of(config, data, &fits);

    let mut f_hat = Vec::new();
    let mut h_in = Vec::new();
    let mut inner_norms = Vec::new();
    for (i, f) in fits.iter().enumerate() {
        f_hat.push(f.solution.eval.blup(&f.spectrum));
        let prob = inner_problem(config, &beta_hat, &f.spectrum, i);
        let parts = CorrectionParts::new(&prob, &f.solution.free, &f.solution.eval, 0)?;
        h_in.push(parts.design_covariance(&f.spectrum, &f.solution.eval));
        let g = prob.gradient(&f.solution.free, &f.solution.eval);
        inner_norms.push(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let m_value = m_of(&fits);
    let diagnostics = Diagnostics {
        outer_iterations: out.iterations,
        inner_iterations: obj.inner_iterations,
        objective_evaluations: obj.evaluations,
        outer_grad_norm: out.grad.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        inner_grad_norms: inner_norms,
        converged: true,
        termination: out.termination,
        saddle_groups: fits.iter().zip(&data.groups).filter(|(f, _)| f.saddle).map(|(_, g)| g.id).collect(),
        eta_start: eta_mult,
    };
    Ok(FitResult {
        config: *config,
        data: data.clone(),
        beta_hat,
        r_hat,
        f_hat,
        b: fits.into_iter().map(|f| f.b).collect(),
        h_in,
        m_value,
        diagnostics,
    })
}

/// Corrected covariance of the latent curve of group `group` on its design:
/// the leading block of the inverse negative Hessian of `h0` in
/// `(f_i, r_i)`.
pub fn corrected_covariance_hin(fit: &FitResult, group: usize) -> Result<DMatrix<f64>> {
    let (sp, ev, free) = fitted_group(fit, group)?;
    let prob = inner_problem(&fit.config, &fit.beta_hat, &sp, group);
    let parts = CorrectionParts::new(&prob, &free, &ev, 0)?;
    Ok(parts.design_covariance(&sp, &ev))
}

/// Spectral state of a fitted group at `(beta_hat, r_hat)`.
pub(crate) fn fitted_group(fit: &FitResult, group: usize) -> Result<(GroupSpectrum, SpectralEval, Vec<f64>)> {
    let g = fit
        .data
        .groups
        .get(group)
        .ok_or_else(|| Error::input(format!("no group at index {group}")))?;
    let sp = GroupSpectrum::new(&fit.beta_hat.thetas[group], g)?;
    let r = &fit.r_hat.groups[group];
    let ev = sp.eval(r, fit.beta_hat.phis[group])?;
    Ok((sp, ev, fit.config.layout().compress(r)))
}

/// Pieces of the `(f, r)` negative Hessian of `h0` in the eigenbasis of `K`:
/// the `f`-`r` cross block and the inverse Schur complement of the `r` block.
pub(crate) struct CorrectionParts {
    /// `n x d` cross block `-d^2 h0 / df dr` (rotated).
    pub hfr: DMatrix<f64>,
    /// Inverse of `H_rr - H_fr^T Sigma H_fr`.
    pub s_inv: DMatrix<f64>,
}

impl CorrectionParts {
    /// `extra_points` latent values appended to `f` (new inputs) raise the
    /// dimension of the signal prior.
    pub fn new(prob: &GroupProblem, free: &[f64], ev: &SpectralEval, extra_points: usize) -> Result<Self> {
        let sp = prob.sp;
        let n = sp.n();
        let j = sp.j();
        let layout = prob.layout;
        let d = layout.n_free(j);
        let r = &ev.r;
        let phi = ev.phi;

        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(j + 1);
        let mut diag = Vec::with_capacity(j + 1);
        let r0 = r[0];
        cols.push(-&ev.u / r0);
        let dim0 = (n + extra_points) as f64;
        diag.push(-dim0 / (2.0 * r0 * r0) + ev.ft.dot(&ev.u) / (r0 * r0));
        for a in 0..j {
            let ra = r[a + 1];
            cols.push(&ev.alpha[a] / ra);
            diag.push(-(n as f64) / (2.0 * ra * ra) + ev.e[a].norm_squared() / (phi * ra.powi(3)));
        }

        let mut hfr = DMatrix::zeros(n, d);
        let mut hrr = DMatrix::zeros(d, d);
        for a in 0..d {
            for k in layout.drives(a, j) {
                let mut c = hfr.column_mut(a);
                c += &cols[k];
                hrr[(a, a)] += diag[k];
            }
            hrr[(a, a)] -= ig_curvature(prob.nu(a), free[a]);
        }
        let sh = DMatrix::from_fn(n, d, |k, a| ev.g[k] * hfr[(k, a)]);
        let s = &hrr - hfr.transpose() * &sh;
        let s = (&s + s.transpose()) * 0.5;
        let s_inv = if d == 0 {
            DMatrix::zeros(0, 0)
        } else {
            s.clone()
                .try_inverse()
                .ok_or_else(|| Error::numeric("Hessian of h0 is singular"))?
        };
        Ok(CorrectionParts { hfr, s_inv })
    }

    pub fn design_covariance(&self, sp: &GroupSpectrum, ev: &SpectralEval) -> DMatrix<f64> {
        let n = sp.n();
        let m = DMatrix::from_fn(n, self.hfr.ncols(), |k, a| ev.g[k] * self.hfr[(k, a)]);
        let mut inner = &m * &self.s_inv * m.transpose();
        for k in 0..n {
            inner[(k, k)] += ev.g[k];
        }
        let out = &sp.vecs * inner * sp.vecs.transpose();
        (&out + out.transpose()) * 0.5
    }
}
