//! Process specifications, the inverse-gamma mixing law and batch covariance
//! assembly.
//!
//! A group `i` holds `J` curves observed on a shared design of `n` points.
//! Given random effects `r_i = (r_i0, r_i1, ..., r_iJ)` the stacked responses
//! `y_i = (y_i1, ..., y_iJ)` are `N(0, C_ri)` with
//!
//! `C_ri = r_i0 A (x) K_i + phi_i diag(r_i1..r_iJ) (x) I_n`
//!
//! where `A` is the `J x J` all-ones matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Smallest admissible shape `nu`; keeps `IG(nu, nu - 1)` proper.
pub const NU_FLOOR: f64 = 1.0 + 1e-6;

/// Largest shape reachable when `nu` is estimated; beyond it the process is
/// numerically Gaussian and the effect scores lose precision.
pub const NU_CEILING: f64 = 1e6;

/// Shape used when a model fixes `nu` and nothing else is specified.
pub const DEFAULT_NU: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    GaussianProcess,
    /// Extended t-process: a GP whose kernel is scaled by `r ~ IG(nu, nu - 1)`.
    ExtendedTProcess { nu: f64 },
}

impl ProcessSpec {
    pub fn is_etp(&self) -> bool {
        matches!(self, ProcessSpec::ExtendedTProcess { .. })
    }

    pub fn nu(&self) -> Option<f64> {
        match self {
            ProcessSpec::GaussianProcess => None,
            ProcessSpec::ExtendedTProcess { nu } => Some(*nu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuMode {
    /// Shapes stay at the values carried by the process specs.
    Fixed,
    /// Shapes of every extended t-process are estimated jointly with the
    /// kernel and noise parameters, starting from the configured values.
    Estimated,
}

/// The model menu: four independent-error variants plus the joint-error
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gp-gp")]
    GpGp,
    #[serde(rename = "gp-tp")]
    GpTp,
    #[serde(rename = "tp-tp")]
    TpTp,
    #[serde(rename = "tp-gp")]
    TpGp,
    #[serde(rename = "etpr-joint")]
    EtprJoint,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GpGp,
        ModelKind::GpTp,
        ModelKind::TpTp,
        ModelKind::TpGp,
        ModelKind::EtprJoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GpGp => "gp-gp",
            ModelKind::GpTp => "gp-tp",
            ModelKind::TpTp => "tp-tp",
            ModelKind::TpGp => "tp-gp",
            ModelKind::EtprJoint => "etpr-joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub signal: ProcessSpec,
    pub noise: ProcessSpec,
    pub nu_mode: NuMode,
    /// Joint-error (eTPR) baseline: one random effect shared by the signal
    /// and every curve of a group, with shape `nu0`.
    pub joint_error: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, nu0: f64, nu1: f64, nu_mode: NuMode) -> Self {
        let etp = |nu| ProcessSpec::ExtendedTProcess { nu };
        let gp = ProcessSpec::GaussianProcess;
        let (signal, noise, joint_error) = match kind {
            ModelKind::GpGp => (gp, gp, false),
            ModelKind::GpTp => (gp, etp(nu1), false),
            ModelKind::TpTp => (etp(nu0), etp(nu1), false),
            ModelKind::TpGp => (etp(nu0), gp, false),
            ModelKind::EtprJoint => (etp(nu0), etp(nu0), true),
        };
        ModelConfig {
            signal,
            noise,
            nu_mode,
            joint_error,
        }
    }

    /// Preset with both shapes fixed at [`DEFAULT_NU`].
    pub fn preset(kind: ModelKind) -> Self {
        Self::new(kind, DEFAULT_NU, DEFAULT_NU, NuMode::Fixed)
    }

    pub fn kind(&self) -> ModelKind {
        if self.joint_error {
            return ModelKind::EtprJoint;
        }
        match (self.signal.is_etp(), self.noise.is_etp()) {
            (false, false) => ModelKind::GpGp,
            (false, true) => ModelKind::GpTp,
            (true, true) => ModelKind::TpTp,
            (true, false) => ModelKind::TpGp,
        }
    }

    /// Shape of the signal mixing law (`nu0`), if the signal is an ETP.
    pub fn nu0(&self) -> Option<f64> {
        self.signal.nu()
    }

    /// Shape of the noise mixing law (`nu1`), if the noise is a separate ETP.
    pub fn nu1(&self) -> Option<f64> {
        if self.joint_error {
            None
        } else {
            self.noise.nu()
        }
    }

    pub fn layout(&self) -> EffectLayout {
        if self.joint_error {
            return EffectLayout::Joint;
        }
        match (self.signal.is_etp(), self.noise.is_etp()) {
            (false, false) => EffectLayout::None,
            (true, false) => EffectLayout::Signal,
            (false, true) => EffectLayout::Noise,
            (true, true) => EffectLayout::Both,
        }
    }

    /// Checks the configuration against the shape of the data it will be fit to.
    pub fn validate(&self, data: &BatchData) -> Result<()> {
        for spec in [self.signal, self.noise] {
            if let Some(nu) = spec.nu() {
                if !(nu >= NU_FLOOR && nu.is_finite()) {
                    return Err(Error::input(format!("nu must exceed 1, got {nu}")));
                }
            }
        }
        if self.joint_error && !(self.signal.is_etp() && self.noise.is_etp()) {
            return Err(Error::input("joint-error model requires extended t-processes"));
        }
        if self.joint_error && self.signal.nu() != self.noise.nu() {
            return Err(Error::input("joint-error model shares one shape nu0"));
        }
        let any_etp = self.signal.is_etp() || self.noise.is_etp();
        let single = data.groups.len() == 1 && data.groups[0].j() == 1;
        if single && any_etp && self.nu_mode == NuMode::Estimated {
            return Err(Error::input(
                "nu is not estimable with a single group holding a single curve; use fixed nu",
            ));
        }
        Ok(())
    }
}

/// Which components of `(r_i0, r_i1, ..., r_iJ)` are free variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectLayout {
    /// GP signal and GP noise: every `r` is pinned at 1.
    None,
    /// Only `r_i0`.
    Signal,
    /// Only `r_i1..r_iJ`.
    Noise,
    /// All of `r_i0..r_iJ`.
    Both,
    /// One shared `r` driving every component.
    Joint,
}

/// Which shape governs a free random effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeSlot {
    Nu0,
    Nu1,
}

impl EffectLayout {
    pub fn n_free(self, j: usize) -> usize {
        match self {
            EffectLayout::None => 0,
            EffectLayout::Signal | EffectLayout::Joint => 1,
            EffectLayout::Noise => j,
            EffectLayout::Both => j + 1,
        }
    }

    /// Full-vector indices (0 = signal, 1..=J = curves) driven by free variable `a`.
    pub fn drives(self, a: usize, j: usize) -> Vec<usize> {
        match self {
            EffectLayout::None => vec![],
            EffectLayout::Signal => vec![0],
            EffectLayout::Noise => vec![a + 1],
            EffectLayout::Both => vec![a],
            EffectLayout::Joint => (0..=j).collect(),
        }
    }

    pub fn shape_slot(self, a: usize) -> ShapeSlot {
        match self {
            EffectLayout::Signal | EffectLayout::Joint => ShapeSlot::Nu0,
            EffectLayout::Noise => ShapeSlot::Nu1,
            EffectLayout::Both if a == 0 => ShapeSlot::Nu0,
            _ => ShapeSlot::Nu1,
        }
    }

    /// Full effect vector of length `J + 1` from the free variables.
    pub fn expand(self, free: &[f64], j: usize) -> Vec<f64> {
        let mut full = vec![1.0; j + 1];
        for (a, v) in free.iter().enumerate() {
            for k in self.drives(a, j) {
                full[k] = *v;
            }
        }
        full
    }

    /// Free variables read back from a full effect vector.
    pub fn compress(self, full: &[f64]) -> Vec<f64> {
        let j = full.len() - 1;
        (0..self.n_free(j))
            .map(|a| full[self.drives(a, j)[0]])
            .collect()
    }

    /// Chain rule from a full-vector gradient to the free variables.
    pub fn reduce_gradient(self, full: &[f64]) -> Vec<f64> {
        let j = full.len() - 1;
        (0..self.n_free(j))
            .map(|a| self.drives(a, j).iter().map(|&k| full[k]).sum())
            .collect()
    }

    /// Chain rule from a full-vector Hessian to the free variables.
    pub fn reduce_hessian(self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let j = full.nrows() - 1;
        let d = self.n_free(j);
        let maps: Vec<Vec<usize>> = (0..d).map(|a| self.drives(a, j)).collect();
        DMatrix::from_fn(d, d, |a, b| {
            let mut s = 0.0;
            for &k in &maps[a] {
                for &l in &maps[b] {
                    s += full[(k, l)];
                }
            }
            s
        })
    }
}

/// Random effects for every group: `groups[i] = (r_i0, r_i1, ..., r_iJ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub groups: Vec<Vec<f64>>,
}

impl RandomEffects {
    /// All effects at 1, the prior mean of `IG(nu, nu - 1)`.
    pub fn ones(data: &BatchData) -> Self {
        RandomEffects {
            groups: data.groups.iter().map(|g| vec![1.0; g.j() + 1]).collect(),
        }
    }

    pub fn validate(&self, data: &BatchData) -> Result<()> {
        if self.groups.len() != data.groups.len() {
            return Err(Error::input("random effects do not match the number of groups"));
        }
        for (r, g) in self.groups.iter().zip(&data.groups) {
            if r.len() != g.j() + 1 {
                return Err(Error::input("random effects do not match the number of curves"));
            }
            if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::input("random effects must be strictly positive"));
            }
        }
        Ok(())
    }
}

/// One group: a shared design and the curves observed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: u32,
    /// `n x p` design; row `k` is the covariate of the `k`-th observation of every curve.
    pub x: DMatrix<f64>,
    pub curves: Vec<DVector<f64>>,
    pub curve_ids: Vec<u32>,
}

impl Group {
    pub fn new(id: u32, x: DMatrix<f64>, curves: Vec<DVector<f64>>) -> Result<Self> {
        let ids = (1..=curves.len() as u32).collect();
        Self::with_ids(id, x, curves, ids)
    }

    pub fn with_ids(id: u32, x: DMatrix<f64>, curves: Vec<DVector<f64>>, curve_ids: Vec<u32>) -> Result<Self> {
        let g = Group {
            id,
            x,
            curves,
            curve_ids,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 || self.x.ncols() == 0 {
            return Err(Error::input(format!("group {} has an empty design", self.id)));
        }
        if self.curves.is_empty() {
            return Err(Error::input(format!("group {} has no curves", self.id)));
        }
        if self.curve_ids.len() != self.curves.len() {
            return Err(Error::input(format!("group {} curve ids do not match curves", self.id)));
        }
        for (c, id) in self.curves.iter().zip(&self.curve_ids) {
            if c.len() != self.x.nrows() {
                return Err(Error::input(format!(
                    "group {} curve {} has {} responses but the design has {} rows",
                    self.id,
                    id,
                    c.len(),
                    self.x.nrows()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("group {} curve {} has non-finite values", self.id, id)));
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("group {} has non-finite covariates", self.id)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn j(&self) -> usize {
        self.curves.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `(y_i1; ...; y_iJ)`, length `nJ`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.n();
        let mut y = DVector::zeros(n * self.j());
        for (j, c) in self.curves.iter().enumerate() {
            y.rows_mut(j * n, n).copy_from(c);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchData {
    pub groups: Vec<Group>,
}

impl BatchData {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::input("dataset has no groups"));
        }
        let p = groups[0].p();
        if groups.iter().any(|g| g.p() != p) {
            return Err(Error::input("groups disagree on the covariate dimension"));
        }
        for g in &groups {
            g.validate()?;
        }
        Ok(BatchData { groups })
    }

    pub fn p(&self) -> usize {
        self.groups[0].p()
    }

    pub fn group_index(&self, id: u32) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    /// Copy of the dataset with one curve removed.
    pub fn without_curve(&self, group_id: u32, curve_id: u32) -> Result<Self> {
        let gi = self
            .group_index(group_id)
            .ok_or_else(|| Error::input(format!("no group {group_id}")))?;
        let g = &self.groups[gi];
        let ci = g
            .curve_ids
            .iter()
            .position(|&c| c == curve_id)
            .ok_or_else(|| Error::input(format!("group {group_id} has no curve {curve_id}")))?;
        if g.j() == 1 {
            return Err(Error::input(format!("cannot drop the only curve of group {group_id}")));
        }
        let mut out = self.clone();
        out.groups[gi].curves.remove(ci);
        out.groups[gi].curve_ids.remove(ci);
        Ok(out)
    }

    /// Copy with every response negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        for g in &mut out.groups {
            for c in &mut g.curves {
                c.neg_mut();
            }
        }
        out
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 1.0 && nu.is_finite()) {
        return Err(Error::domain(format!("IG shape must exceed 1, got {nu}")));
    }
    Ok(())
}

/// Log density of `IG(nu, nu - 1)` at `r`:
/// `-ln Gamma(nu) + nu ln(nu - 1) - (nu + 1) ln r - (nu - 1) / r`.
pub fn ig_log_density(nu: f64, r: f64) -> Result<f64> {
    check_nu(nu)?;
    if !(r > 0.0) {
        return Err(Error::domain(format!("IG density needs r > 0, got {r}")));
    }
    Ok(ig_log_density_unchecked(nu, r))
}

#[inline]
pub(crate) fn ig_log_density_unchecked(nu: f64, r: f64) -> f64 {
    -ln_gamma(nu) + nu * (nu - 1.0).ln() - (nu + 1.0) * r.ln() - (nu - 1.0) / r
}

/// First derivative of the IG log density in `r`.
#[inline]
pub(crate) fn ig_score(nu: f64, r: f64) -> f64 {
    -(nu + 1.0) / r + (nu - 1.0) / (r * r)
}

/// Second derivative of the IG log density in `r`.
#[inline]
pub(crate) fn ig_curvature(nu: f64, r: f64) -> f64 {
    (nu + 1.0) / (r * r) - 2.0 * (nu - 1.0) / (r * r * r)
}

/// One draw from `IG(nu, nu - 1)` as the reciprocal of a
/// `Gamma(shape = nu, rate = nu - 1)` draw.
pub fn sample_ig<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> Result<f64> {
    check_nu(nu)?;
    let gamma = Gamma::new(nu, 1.0 / (nu - 1.0)).map_err(|e| Error::domain(e.to_string()))?;
    Ok(1.0 / gamma.sample(rng))
}

/// `kron(A, B)` for dense matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Dense `C_ri = r_i0 A (x) K + phi diag(r_i1..r_iJ) (x) I_n`.
///
/// `effects` is the full vector `(r_i0, ..., r_iJ)`; `k` is used as given
/// (callers pass the jittered Gram matrix).
pub fn build_covariance(effects: &[f64], k: &DMatrix<f64>, phi: f64) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if effects.len() < 2 {
        return Err(Error::input("effects need r_0 and at least one curve"));
    }
    if !(phi > 0.0) {
        return Err(Error::input(format!("phi must be positive, got {phi}")));
    }
    let j = effects.len() - 1;
    let r0 = effects[0];
    let mut c = DMatrix::zeros(n * j, n * j);
    for bj in 0..j {
        for bl in 0..j {
            let mut block = c.view_mut((bj * n, bl * n), (n, n));
            block.copy_from(&(k * r0));
            if bj == bl {
                for d in 0..n {
                    block[(d, d)] += phi * effects[bj + 1];
                }
            }
        }
    }
    if nalgebra::Cholesky::new(c.clone()).is_none() {
        return Err(Error::numeric("batch covariance is not positive definite"));
    }
    Ok(c)
}

/// Variables that `C_ri` can be differentiated with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceVar {
    /// Free random effect `a` of the group's [`EffectLayout`].
    Effect(usize),
    /// The noise scale `phi_i` (raw scale).
    Phi,
    /// Unconstrained kernel parameter `l`.
    Kernel(usize),
}

/// `dC_ri / d(variable)` for every free effect, `phi_i` and every kernel
/// parameter. `gram_grads` are the Gram derivatives from
/// [`crate::kernel::gram_gradients`].
pub fn covariance_partials(
    layout: EffectLayout,
    effects: &[f64],
    k: &DMatrix<f64>,
    gram_grads: &[DMatrix<f64>],
    phi: f64,
) -> Result<Vec<(CovarianceVar, DMatrix<f64>)>> {
    let n = k.nrows();
    if effects.len() < 2 {
        return Err(Error::input("effects need r_0 and at least one curve"));
    }
    let j = effects.len() - 1;
    let ones = DMatrix::from_element(j, j, 1.0);
    let a_k = kron(&ones, k);
    let noise_block = |jj: usize| {
        let mut e = DMatrix::zeros(j, j);
        e[(jj, jj)] = 1.0;
        kron(&e, &DMatrix::identity(n, n))
    };

    let mut out = Vec::new();
    for a in 0..layout.n_free(j) {
        let mut d = DMatrix::zeros(n * j, n * j);
        for idx in layout.drives(a, j) {
            if idx == 0 {
                d += &a_k;
            } else {
                d += noise_block(idx - 1) * phi;
            }
        }
        out.push((CovarianceVar::Effect(a), d));
    }
    let re = DMatrix::from_diagonal(&DVector::from_iterator(j, effects[1..].iter().copied()));
    out.push((CovarianceVar::Phi, kron(&re, &DMatrix::identity(n, n))));
    for (l, g) in gram_grads.iter().enumerate() {
        out.push((CovarianceVar::Kernel(l), kron(&ones, g) * effects[0]));
    }
    Ok(out)
}
