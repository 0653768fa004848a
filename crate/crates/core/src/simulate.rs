//! Synthetic batch-data experiments: truth and error sampling, outlying
//! curve injection, test-set MSE and replicated model comparisons.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions};
use crate::kernel::{jittered_gram, KernelParams};
use crate::model::{sample_ig, BatchData, Group, ModelConfig};
use crate::predict::{outlier_scores, predict_new, DEFAULT_RULE_MULTIPLIER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorKind {
    Gaussian,
    /// One `r ~ IG(nu, nu - 1)` per curve scaling iid `N(0, phi)` noise.
    Etp { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Disturbance {
    None,
    Constant { gamma: f64 },
    /// Student t with 2 degrees of freedom plus `gamma`.
    RandomT2 { gamma: f64 },
}

impl Disturbance {
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Disturbance::None => None,
            Disturbance::Constant { gamma } | Disturbance::RandomT2 { gamma } => Some(gamma),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Disturbance::None => "none",
            Disturbance::Constant { .. } => "constant",
            Disturbance::RandomT2 { .. } => "random",
        }
    }
}

/// Whether a random disturbance is drawn once per response or once per curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceScope {
    #[default]
    PerResponse,
    PerCurve,
}

/// Rule for picking training points out of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainRule {
    /// Every `grid_size / n_train`-th index from 0.
    #[default]
    Stride,
    /// `round(k (grid_size - 1) / (n_train - 1))`, so both ends are included.
    Endpoints,
}

/// One simulation scenario. Missing keys in a config file take the
/// [`Default`] values: the single-group table setting without disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub groups: usize,
    pub curves: usize,
    pub n_train: usize,
    pub grid_size: usize,
    pub grid_range: [f64; 2],
    /// True kernel, shared by every group.
    pub truth: KernelParams,
    pub phi: f64,
    pub error: ErrorKind,
    pub disturbance: Disturbance,
    pub disturbance_scope: DisturbanceScope,
    /// 1-based index of the outlying curve in each group.
    pub disturbed_curve: usize,
    pub train_rule: TrainRule,
    pub reps: usize,
    pub seed: u64,
    pub rule_multiplier: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            disturbance: Disturbance::None,
            ..Self::replication_default(1, 0.0)
        }
    }
}

impl SimConfig {
    /// Six curves per group with Gaussian noise, the sixth shifted by `gamma`.
    pub fn replication_default(groups: usize, gamma: f64) -> Self {
        SimConfig {
            groups,
            curves: 6,
            n_train: 10,
            grid_size: 30,
            grid_range: [0.0, 3.0],
            truth: KernelParams::scalar(0.1, 10.0, 0.1).expect("valid kernel"),
            phi: 0.2,
            error: ErrorKind::Gaussian,
            disturbance: Disturbance::Constant { gamma },
            disturbance_scope: DisturbanceScope::PerResponse,
            disturbed_curve: 6,
            train_rule: TrainRule::Stride,
            reps: 100,
            seed: 1,
            rule_multiplier: DEFAULT_RULE_MULTIPLIER,
        }
    }

    /// The low-noise two-group setting used for plotted example curves.
    pub fn curves_default(gamma: f64) -> Self {
        SimConfig {
            truth: KernelParams::scalar(0.1, 5.0, 0.1).expect("valid kernel"),
            phi: 0.01,
            reps: 1,
            ..Self::replication_default(2, gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.curves == 0 {
            return Err(Error::input("simulation needs at least one group and one curve"));
        }
        if self.n_train < 2 || self.n_train > self.grid_size {
            return Err(Error::input(format!(
                "n_train = {} must lie in [2, grid_size = {}]",
                self.n_train, self.grid_size
            )));
        }
        let [a, b] = self.grid_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::input("grid_range must be an increasing finite interval"));
        }
        if self.truth.dim() != 1 {
            return Err(Error::input("simulation grids are one-dimensional"));
        }
        self.truth.validate()?;
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::domain("phi must be positive"));
        }
        if let ErrorKind::Etp { nu } = self.error {
            if !(nu > 1.0 && nu.is_finite()) {
                return Err(Error::domain(format!("error shape nu = {nu} must exceed 1")));
            }
        }
        if let Some(g) = self.disturbance.gamma() {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::domain("disturbance gamma must be non-negative"));
            }
        }
        if self.disturbance != Disturbance::None && !(1..=self.curves).contains(&self.disturbed_curve) {
            return Err(Error::input(format!(
                "disturbed_curve = {} outside 1..={}",
                self.disturbed_curve, self.curves
            )));
        }
        if self.reps == 0 {
            return Err(Error::input("reps must be at least 1"));
        }
        if !(self.rule_multiplier > 0.0) {
            return Err(Error::domain("rule multiplier must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub grid: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Design {
    fn column(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_iterator(idx.len(), 1, idx.iter().map(|&k| self.grid[k]))
    }
}

pub fn make_design(config: &SimConfig) -> Result<Design> {
    let (g, n) = (config.grid_size, config.n_train);
    if n > g {
        return Err(Error::input(format!("n_train = {n} exceeds grid_size = {g}")));
    }
    if n == 0 || g < 2 {
        return Err(Error::input("grid needs at least two points and one training point"));
    }
    let [a, b] = config.grid_range;
    let step = (b - a) / (g - 1) as f64;
    let mut grid: Vec<f64> = (0..g).map(|k| a + step * k as f64).collect();
    grid[g - 1] = b;
    let train: Vec<usize> = match config.train_rule {
        TrainRule::Stride => (0..n).map(|k| k * (g / n)).collect(),
        TrainRule::Endpoints if n == 1 => vec![0],
        TrainRule::Endpoints => (0..n)
            .map(|k| ((k * (g - 1)) as f64 / (n - 1) as f64).round() as usize)
            .collect(),
    };
    let test = (0..g).filter(|k| !train.contains(k)).collect();
    Ok(Design { grid, train, test })
}

/// One zero-mean draw of the latent curve on the full grid.
pub fn sample_truth<R: Rng + ?Sized>(truth: &KernelParams, grid: &[f64], rng: &mut R) -> Result<DVector<f64>> {
    let x = DMatrix::from_column_slice(grid.len(), 1, grid);
    let k = jittered_gram(truth, &x)?;
    let l = Cholesky::new(k)
        .ok_or_else(|| Error::numeric("truth Gram matrix is not positive definite"))?
        .l();
    let z = DVector::from_fn(grid.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(l * z)
}

/// Noise for one curve of `n` responses.
pub fn sample_errors<R: Rng + ?Sized>(error: ErrorKind, phi: f64, n: usize, rng: &mut R) -> Result<DVector<f64>> {
    let scale = match error {
        ErrorKind::Gaussian => phi,
        ErrorKind::Etp { nu } => sample_ig(nu, rng)? * phi,
    };
    let sd = scale.sqrt();
    Ok(DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal)))
}

pub fn inject_disturbance<R: Rng + ?Sized>(
    y: &DVector<f64>,
    disturbance: Disturbance,
    scope: DisturbanceScope,
    rng: &mut R,
) -> DVector<f64> {
    match disturbance {
        Disturbance::None => y.clone(),
        Disturbance::Constant { gamma } => y.add_scalar(gamma),
        Disturbance::RandomT2 { gamma } => {
            let t2 = StudentT::new(2.0).expect("two degrees of freedom");
            match scope {
                DisturbanceScope::PerResponse => y.map(|v| v + t2.sample(rng) + gamma),
                DisturbanceScope::PerCurve => y.add_scalar(t2.sample(rng) + gamma),
            }
        }
    }
}

/// Sum of squared test errors over all groups divided by `n I`, where `n`
/// is the number of training points per curve.
pub fn mse(f_hat: &[DVector<f64>], f0: &[DVector<f64>], n: usize) -> Result<f64> {
    if f_hat.len() != f0.len() || f_hat.is_empty() {
        return Err(Error::input("prediction and truth group counts differ"));
    }
    if n == 0 {
        return Err(Error::input("n must be positive"));
    }
    let mut s = 0.0;
    for (a, b) in f_hat.iter().zip(f0) {
        if a.len() != b.len() {
            return Err(Error::input("prediction and truth lengths differ"));
        }
        s += (a - b).norm_squared();
    }
    Ok(s / (n * f_hat.len()) as f64)
}

/// One simulated training batch with the latent truth on the full grid.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: BatchData,
    pub truth: Vec<DVector<f64>>,
}

/// Draws one replicate; the order of draws is part of the reproducibility contract.
pub fn sample_replicate<R: Rng + ?Sized>(config: &SimConfig, design: &Design, rng: &mut R) -> Result<Replicate> {
    let x = design.column(&design.train);
    let mut groups = Vec::with_capacity(config.groups);
    let mut truth = Vec::with_capacity(config.groups);
    for i in 0..config.groups {
        let f0 = sample_truth(&config.truth, &design.grid, rng)?;
        let f_train = DVector::from_iterator(design.train.len(), design.train.iter().map(|&k| f0[k]));
        let mut curves = Vec::with_capacity(config.curves);
        for j in 1..=config.curves {
            let mut y = &f_train + sample_errors(config.error, config.phi, design.train.len(), rng)?;
            if j == config.disturbed_curve {
                y = inject_disturbance(&y, config.disturbance, config.disturbance_scope, rng);
            }
            curves.push(y);
        }
        groups.push(Group::new(i as u32 + 1, x.clone(), curves)?);
        truth.push(f0);
    }
    Ok(Replicate {
        data: BatchData::new(groups)?,
        truth,
    })
}

/// Generator for replication `rep`: its own stream of the configured seed.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Outcome of one model on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub mse: Option<f64>,
    /// Per group, per curve estimates when the model has noise effects.
    pub r_hat: Option<Vec<Vec<f64>>>,
    pub flagged: Option<Vec<Vec<bool>>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub runs: Vec<ModelRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub mean: f64,
    pub sd: f64,
    pub flag_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub succeeded: usize,
    pub failed: usize,
    /// Per group, per curve summaries of the noise effect estimates.
    pub r_hat: Option<Vec<Vec<CurveSummary>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub models: Vec<ModelSummary>,
    pub reps: Vec<RepRecord>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_model(
    config: &SimConfig,
    model: &ModelConfig,
    options: &FitOptions,
    rep: &Replicate,
    design: &Design,
) -> Result<ModelRun> {
    let f = fit(model, &rep.data, options)?;
    let z = design.column(&design.test);
    let mut f_hat = Vec::with_capacity(config.groups);
    let mut f0 = Vec::with_capacity(config.groups);
    for (i, truth) in rep.truth.iter().enumerate() {
        f_hat.push(predict_new(&f, i, &z, false)?.mean);
        f0.push(DVector::from_iterator(design.test.len(), design.test.iter().map(|&k| truth[k])));
    }
    let mse = mse(&f_hat, &f0, config.n_train)?;
    let (r_hat, flagged) = if model.noise.is_etp() && !model.joint_error {
        let report = outlier_scores(&f, config.rule_multiplier)?;
        let r = f.r_hat.groups.iter().map(|g| g[1..].to_vec()).collect();
        let flags = report.curves.chunks(config.curves).map(|g| g.iter().map(|c| c.flagged).collect()).collect();
        (Some(r), Some(flags))
    } else {
        (None, None)
    };
    Ok(ModelRun {
        mse: Some(mse),
        r_hat,
        flagged,
        error: None,
    })
}

/// Runs `config.reps` replications of every model. Replications run in
/// parallel on the current rayon pool; results do not depend on its size.
pub fn run_experiment(config: &SimConfig, models: &[ModelConfig], options: &FitOptions) -> Result<SimResult> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::input("no models to compare"));
    }
    let design = make_design(config)?;
    if design.test.is_empty() {
        return Err(Error::input("n_train equals grid_size, leaving no test points for MSE"));
    }
    let reps: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            let sample = sample_replicate(config, &design, &mut rng)?;
            let runs = models
                .iter()
                .map(|m| {
                    run_model(config, m, options, &sample, &design).unwrap_or_else(|e| {
                        warn!("seed {} rep {rep} model {}: {e}", config.seed, m.kind().name());
                        ModelRun {
                            mse: None,
                            r_hat: None,
                            flagged: None,
                            error: Some(e.to_string()),
                        }
                    })
                })
                .collect();
            Ok(RepRecord { rep, runs })
        })
        .collect::<Result<_>>()?;

    let summaries = models
        .iter()
        .enumerate()
        .map(|(a, m)| summarize(config, m, a, &reps))
        .collect();
    Ok(SimResult {
        config: config.clone(),
        models: summaries,
        reps,
    })
}

fn summarize(config: &SimConfig, model: &ModelConfig, a: usize, reps: &[RepRecord]) -> ModelSummary {
    let ok: Vec<&ModelRun> = reps.iter().map(|r| &r.runs[a]).filter(|r| r.mse.is_some()).collect();
    let mses: Vec<f64> = ok.iter().filter_map(|r| r.mse).collect();
    let (mse_mean, mse_sd) = mean_sd(&mses);
    let with_r: Vec<&&ModelRun> = ok.iter().filter(|r| r.r_hat.is_some()).collect();
    let r_hat = (!with_r.is_empty()).then(|| {
        (0..config.groups)
            .map(|i| {
                (0..config.curves)
                    .map(|j| {
                        let v: Vec<f64> = with_r.iter().map(|r| r.r_hat.as_ref().unwrap()[i][j]).collect();
                        let flags = with_r.iter().filter(|r| r.flagged.as_ref().unwrap()[i][j]).count();
                        let (mean, sd) = mean_sd(&v);
                        CurveSummary {
                            mean,
                            sd,
                            flag_rate: flags as f64 / with_r.len() as f64,
                        }
                    })
                    .collect()
            })
            .collect()
    });
    ModelSummary {
        model: model.kind().name().to_string(),
        mse_mean,
        mse_sd,
        succeeded: ok.len(),
        failed: reps.len() - ok.len(),
        r_hat,
    }
}
