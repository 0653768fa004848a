//! File formats: curve datasets, run and simulation configs, fit artifacts
//! and delimited result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimate::{FitOptions, FitResult, InitSpec};
use crate::model::{BatchData, Group, ModelConfig, ModelKind, NuMode, DEFAULT_NU};
use crate::predict::DEFAULT_RULE_MULTIPLIER;
use crate::simulate::SimConfig;

/// Version tag written into every fit artifact.
pub const FIT_SCHEMA: &str = "rtpr-fit/1";

/// Starting shape for `nu0 = "estimate"` / `nu1 = "estimate"`.
pub const ESTIMATE_START: f64 = 2.0;

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match line {
        Some(l) => Error::input(format!("line {l}: {e}")),
        None => Error::input(e.to_string()),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

// ---------------------------------------------------------------- datasets

/// Reads a `group,curve,x1..xp,y` table. Rows may come in any order; each
/// group's design is stored sorted by covariates.
pub fn parse_dataset<R: Read>(reader: R) -> Result<BatchData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[0] != "group" || header[1] != "curve" || header[header.len() - 1] != "y" {
        return Err(Error::input("line 1: header must be group,curve,x1,...,xp,y"));
    }
    let p = header.len() - 3;
    for (k, name) in header[2..2 + p].iter().enumerate() {
        if *name != format!("x{}", k + 1) && !(p == 1 && name == "x") {
            return Err(Error::input(format!("line 1: expected column x{} but found '{name}'", k + 1)));
        }
    }

    type Rows = Vec<(Vec<f64>, f64)>;
    let mut groups: BTreeMap<u32, BTreeMap<u32, Rows>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<&str> {
            match rec.get(k) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::input(format!("line {line}: missing value in column '{}'", header[k]))),
            }
        };
        let id = |k: usize| -> Result<u32> {
            let s = field(k)?;
            match s.parse::<u32>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::input(format!("line {line}: {} must be an integer >= 1, got '{s}'", header[k]))),
            }
        };
        let real = |k: usize| -> Result<f64> {
            let s = field(k)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::input(format!("line {line}: {} is not a finite number: '{s}'", header[k]))),
            }
        };
        let (g, c) = (id(0)?, id(1)?);
        let x = (2..2 + p).map(real).collect::<Result<Vec<_>>>()?;
        let y = real(2 + p)?;
        groups.entry(g).or_default().entry(c).or_default().push((x, y));
    }
    if groups.is_empty() {
        return Err(Error::input("dataset has no rows"));
    }

    let cmp = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal);
    let mut out = Vec::with_capacity(groups.len());
    for (gid, curves) in groups {
        let mut design: Option<Vec<Vec<f64>>> = None;
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        for (cid, mut rows) in curves {
            rows.sort_by(|a, b| cmp(&a.0, &b.0));
            let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            match &design {
                None => design = Some(xs),
                Some(d) if *d == xs => {}
                Some(_) => {
                    return Err(Error::input(format!(
                        "group {gid}: curve {cid} does not share the design of curve {}",
                        ids[0]
                    )))
                }
            }
            ys.push(DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)));
            ids.push(cid);
        }
        let design = design.expect("at least one curve");
        if design.len() < 2 {
            return Err(Error::input(format!("group {gid} needs at least 2 design points")));
        }
        let x = DMatrix::from_fn(design.len(), p, |k, l| design[k][l]);
        out.push(Group::with_ids(gid, x, ys, ids)?);
    }
    BatchData::new(out)
}

pub fn read_dataset(path: &Path) -> Result<BatchData> {
    let f = fs::File::open(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    parse_dataset(f)
}

pub fn write_dataset<W: Write>(data: &BatchData, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let p = data.p();
    let mut header = vec!["group".to_string(), "curve".to_string()];
    header.extend((1..=p).map(|l| format!("x{l}")));
    header.push("y".into());
    wtr.write_record(&header).map_err(csv_error)?;
    for g in &data.groups {
        for (c, id) in g.curves.iter().zip(&g.curve_ids) {
            for k in 0..g.n() {
                let mut rec = vec![g.id.to_string(), id.to_string()];
                rec.extend((0..p).map(|l| fmt_f64(g.x[(k, l)])));
                rec.push(fmt_f64(c[k]));
                wtr.write_record(&rec).map_err(csv_error)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

// ------------------------------------------------------------ run configs

/// A shape parameter that is either fixed or estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSetting {
    Fixed(f64),
    Estimate,
}

impl Default for ShapeSetting {
    fn default() -> Self {
        ShapeSetting::Fixed(DEFAULT_NU)
    }
}

impl Serialize for ShapeSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ShapeSetting::Fixed(v) => s.serialize_f64(*v),
            ShapeSetting::Estimate => s.serialize_str("estimate"),
        }
    }
}

impl<'de> Deserialize<'de> for ShapeSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = ShapeSetting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a shape above 1 or \"estimate\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<ShapeSetting, E> {
                Ok(ShapeSetting::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<ShapeSetting, E> {
                Ok(ShapeSetting::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<ShapeSetting, E> {
                Ok(ShapeSetting::Fixed(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ShapeSetting, E> {
                match v {
                    "estimate" => Ok(ShapeSetting::Estimate),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    pub fd_step: f64,
    pub eta_starts: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        OptimizerConfig {
            inner_tol: d.inner_tol,
            inner_max_iter: d.inner_max_iter,
            outer_tol: d.outer_tol,
            outer_max_iter: d.outer_max_iter,
            fd_step: d.fd_step,
            eta_starts: d.eta_starts,
        }
    }
}

impl OptimizerConfig {
    pub fn fit_options(&self, init: &InitSpec) -> Result<FitOptions> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.inner_tol) && pos(self.outer_tol) && pos(self.fd_step)) {
            return Err(Error::input("optimizer tolerances and fd_step must be positive"));
        }
        if self.inner_max_iter == 0 || self.outer_max_iter == 0 {
            return Err(Error::input("optimizer iteration limits must be positive"));
        }
        if self.eta_starts.is_empty() || !self.eta_starts.iter().all(|v| pos(*v)) {
            return Err(Error::input("eta_starts must be a non-empty list of positive multipliers"));
        }
        Ok(FitOptions {
            inner_tol: self.inner_tol,
            inner_max_iter: self.inner_max_iter,
            outer_tol: self.outer_tol,
            outer_max_iter: self.outer_max_iter,
            fd_step: self.fd_step,
            init: init.clone(),
            eta_starts: self.eta_starts.clone(),
        })
    }
}

/// Settings for `fit`, read from TOML. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub nu0: ShapeSetting,
    pub nu1: ShapeSetting,
    pub seed: u64,
    pub rule_multiplier: f64,
    pub optimizer: OptimizerConfig,
    pub init: InitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::GpTp,
            nu0: ShapeSetting::default(),
            nu1: ShapeSetting::default(),
            seed: 0,
            rule_multiplier: DEFAULT_RULE_MULTIPLIER,
            optimizer: OptimizerConfig::default(),
            init: InitSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        c.model_config()?;
        c.fit_options()?;
        if !(c.rule_multiplier > 0.0 && c.rule_multiplier.is_finite()) {
            return Err(Error::input("config: rule_multiplier must be positive"));
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let (uses0, uses1) = match self.model {
            ModelKind::GpGp => (false, false),
            ModelKind::GpTp => (false, true),
            ModelKind::TpTp => (true, true),
            ModelKind::TpGp | ModelKind::EtprJoint => (true, false),
        };
        let used = [(uses0, self.nu0), (uses1, self.nu1)];
        let estimated = used.iter().any(|(u, s)| *u && *s == ShapeSetting::Estimate);
        let fixed = used.iter().any(|(u, s)| *u && matches!(s, ShapeSetting::Fixed(_)));
        if estimated && fixed {
            return Err(Error::input("config: nu0 and nu1 must both be fixed or both be \"estimate\""));
        }
        let value = |s: ShapeSetting| match s {
            ShapeSetting::Fixed(v) => v,
            ShapeSetting::Estimate => ESTIMATE_START,
        };
        for (name, (u, s)) in ["nu0", "nu1"].iter().zip(used) {
            if let (true, ShapeSetting::Fixed(v)) = (u, s) {
                if !(v > 1.0 && v.is_finite()) {
                    return Err(Error::input(format!("config: {name} = {v} must exceed 1")));
                }
            }
        }
        let mode = if estimated { NuMode::Estimated } else { NuMode::Fixed };
        Ok(ModelConfig::new(self.model, value(self.nu0), value(self.nu1), mode))
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        self.optimizer.fit_options(&self.init)
    }
}

// ----------------------------------------------------------- fit artifact

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub group: u32,
    /// 0 for the signal effect `r_i0`.
    pub curve: u32,
    pub r_hat: f64,
}

/// Self-describing output of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema: String,
    pub run_config: RunConfig,
    /// Curves removed before fitting, as `group:curve`.
    pub dropped: Vec<String>,
    pub random_effects: Vec<EffectRow>,
    pub fit: FitResult,
}

impl FitArtifact {
    pub fn new(run_config: RunConfig, dropped: Vec<String>, fit: FitResult) -> Self {
        let mut random_effects = Vec::new();
        for (g, r) in fit.data.groups.iter().zip(&fit.r_hat.groups) {
            random_effects.push(EffectRow {
                group: g.id,
                curve: 0,
                r_hat: r[0],
            });
            for (id, v) in g.curve_ids.iter().zip(&r[1..]) {
                random_effects.push(EffectRow {
                    group: g.id,
                    curve: *id,
                    r_hat: *v,
                });
            }
        }
        FitArtifact {
            schema: FIT_SCHEMA.into(),
            run_config,
            dropped,
            random_effects,
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::numeric(format!("artifact: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::input(format!("artifact: {e}")))?;
        match probe.get("schema").and_then(|v| v.as_str()) {
            Some(FIT_SCHEMA) => {}
            Some(other) => return Err(Error::input(format!("artifact: unsupported schema '{other}'"))),
            None => return Err(Error::input("artifact: missing schema field")),
        }
        let a: FitArtifact = serde_json::from_value(probe).map_err(|e| Error::input(format!("artifact: {e}")))?;
        let data = BatchData::new(a.fit.data.groups.clone())?;
        a.fit.beta_hat.validate(&a.fit.config, &data)?;
        a.fit.r_hat.validate(&data)?;
        Ok(a)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

// ------------------------------------------------------ prediction inputs

/// Points at which to predict, for one group or for all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub group: Option<u32>,
    pub z: DMatrix<f64>,
}

/// Parses `lo:hi:count` into an evenly spaced one-dimensional grid.
pub fn parse_grid(spec: &str) -> Result<DMatrix<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::input(format!("grid spec '{spec}' is not lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite()) || count == 0 || (count > 1 && !(hi > lo)) {
        return Err(bad());
    }
    if count == 1 {
        return Ok(DMatrix::from_element(1, 1, lo));
    }
    let step = (hi - lo) / (count - 1) as f64;
    let mut z = DMatrix::from_fn(count, 1, |k, _| lo + step * k as f64);
    z[(count - 1, 0)] = hi;
    Ok(z)
}

/// Reads query points from a table with columns `x1..xp` and an optional
/// leading `group` column.
pub fn parse_query<R: Read>(reader: R, p: usize) -> Result<Vec<Query>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let grouped = header.first().is_some_and(|h| h == "group");
    let off = usize::from(grouped);
    let expect: Vec<String> = (1..=p).map(|l| format!("x{l}")).collect();
    let single_x = p == 1 && header.len() == off + 1 && header[off] == "x";
    if header[off..] != expect[..] && !single_x {
        return Err(Error::input(format!(
            "line 1: query header must be {}{}",
            if grouped { "group," } else { "" },
            expect.join(",")
        )));
    }
    let mut rows: BTreeMap<Option<u32>, Vec<Vec<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let g = if grouped {
            let s = rec.get(0).unwrap_or("");
            Some(
                s.parse::<u32>()
                    .ok()
                    .filter(|v| *v >= 1)
                    .ok_or_else(|| Error::input(format!("line {line}: group must be an integer >= 1, got '{s}'")))?,
            )
        } else {
            None
        };
        let x = (0..p)
            .map(|l| {
                let s = rec.get(off + l).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::input(format!("line {line}: x{} is not a finite number: '{s}'", l + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.entry(g).or_default().push(x);
    }
    if rows.is_empty() {
        return Err(Error::input("query has no rows"));
    }
    Ok(rows
        .into_iter()
        .map(|(group, xs)| Query {
            group,
            z: DMatrix::from_fn(xs.len(), p, |k, l| xs[k][l]),
        })
        .collect())
}

// ------------------------------------------------------ simulation configs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimOutput {
    /// Mean(sd) test MSE per scenario and model.
    #[default]
    Mse,
    /// Mean(sd) noise effect estimates per scenario, group and curve.
    RandomEffects,
    /// Truth, training means and prediction bands of the first replicate.
    Curves,
}

/// Overrides applied on top of `base` for one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub error: Option<crate::simulate::ErrorKind>,
    pub disturbance: Option<crate::simulate::Disturbance>,
}

/// A batch of simulation scenarios sharing models and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub output: SimOutput,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_nu")]
    pub nu0: f64,
    #[serde(default = "default_nu")]
    pub nu1: f64,
    /// Model whose effect estimates fill a `random-effects` table.
    #[serde(default)]
    pub effects_model: Option<ModelKind>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub base: SimConfig,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

fn default_nu() -> f64 {
    DEFAULT_NU
}

impl SimSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let s: SimSpec = toml::from_str(text).map_err(|e| Error::input(format!("simulation config: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::input("simulation config: models is empty"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::input("simulation config: no [[scenario]] entries"));
        }
        for nu in [self.nu0, self.nu1] {
            if !(nu > 1.0 && nu.is_finite()) {
                return Err(Error::input(format!("simulation config: shape {nu} must exceed 1")));
            }
        }
        if self.output == SimOutput::RandomEffects {
            let m = self.effects_model();
            if !self.models.contains(&m) || !matches!(m, ModelKind::GpTp | ModelKind::TpTp) {
                return Err(Error::input(
                    "simulation config: effects_model must be a listed model with curve-specific noise effects",
                ));
            }
        }
        self.fit_options()?;
        for k in 0..self.scenarios.len() {
            self.scenario(k).validate()?;
        }
        Ok(())
    }

    pub fn effects_model(&self) -> ModelKind {
        self.effects_model.unwrap_or(ModelKind::GpTp)
    }

    pub fn scenario(&self, k: usize) -> SimConfig {
        let mut c = self.base.clone();
        let s = &self.scenarios[k];
        if let Some(e) = s.error {
            c.error = e;
        }
        if let Some(d) = s.disturbance {
            c.disturbance = d;
        }
        c
    }

    pub fn model_configs(&self) -> Vec<ModelConfig> {
        self.models
            .iter()
            .map(|k| ModelConfig::new(*k, self.nu0, self.nu1, NuMode::Fixed))
            .collect()
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        self.optimizer.fit_options(&InitSpec::default())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("simulation config serializes")
    }
}

// ------------------------------------------------------------------ tables

/// A delimited table preceded by `#` provenance lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    /// Adds every line of `text` as a comment.
    pub fn comment(&mut self, text: &str) {
        self.comments.extend(text.lines().map(|l| l.to_string()));
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(&self.header).map_err(csv_error)?;
        for r in &self.rows {
            wtr.write_record(r).map_err(csv_error)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
        Ok(out)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
