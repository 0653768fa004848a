//! The `fit`, `predict`, `simulate` and `diagnose` commands. Each has a pure
//! form returning the rendered output and a `cmd_*` form that reads and
//! writes files.

use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::fit;
use crate::io::{
    parse_grid, parse_query, read_dataset, write_text, FitArtifact, Query, RunConfig, SimOutput, SimSpec, Table,
};
use crate::model::BatchData;
use crate::predict::{outlier_scores, predict_new};
use crate::simulate::{
    make_design, replication_rng, run_experiment, sample_replicate, Disturbance, ErrorKind, SimResult,
};

/// Parses a `group:curve` pair as used by `--drop`.
pub fn parse_drop(spec: &str) -> Result<(u32, u32)> {
    let bad = || Error::input(format!("--drop expects group:curve, got '{spec}'"));
    let (g, c) = spec.split_once(':').ok_or_else(bad)?;
    Ok((g.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

pub fn fit_artifact(data: &BatchData, config: &RunConfig, drops: &[(u32, u32)]) -> Result<FitArtifact> {
    let mut data = data.clone();
    for &(g, c) in drops {
        data = data.without_curve(g, c)?;
    }
    let model = config.model_config()?;
    let result = fit(&model, &data, &config.fit_options()?)?;
    let dropped = drops.iter().map(|(g, c)| format!("{g}:{c}")).collect();
    Ok(FitArtifact::new(config.clone(), dropped, result))
}

pub fn cmd_fit(data_path: &Path, config_path: Option<&Path>, drops: &[(u32, u32)], out: &Path) -> Result<FitArtifact> {
    let data = read_dataset(data_path)?;
    let config = match config_path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let artifact = fit_artifact(&data, &config, drops)?;
    write_text(out, &artifact.to_json()?)?;
    info!("wrote {}", out.display());
    Ok(artifact)
}

fn provenance(table: &mut Table, command: &str, artifact: &FitArtifact) {
    table.comment(&format!("rtpr {command}"));
    table.comment(&format!("schema = {}", artifact.schema));
    if !artifact.dropped.is_empty() {
        table.comment(&format!("dropped = {}", artifact.dropped.join(" ")));
    }
    table.comment(&artifact.run_config.to_toml());
}

/// Resolves `at` as a query file when it names one, else as a grid spec.
pub fn resolve_query(at: &str, p: usize) -> Result<Vec<Query>> {
    let path = Path::new(at);
    if path.is_file() {
        let f = std::fs::File::open(path)?;
        return parse_query(f, p);
    }
    let z = parse_grid(at)?;
    if p != 1 {
        return Err(Error::input(format!("grid specs are one-dimensional but the data have p = {p}")));
    }
    Ok(vec![Query { group: None, z }])
}

pub fn predict_table(artifact: &FitArtifact, queries: &[Query], at: &str) -> Result<Table> {
    let f = &artifact.fit;
    let p = f.data.p();
    let mut header = vec!["group".to_string()];
    header.extend((1..=p).map(|l| if p == 1 { "x".to_string() } else { format!("x{l}") }));
    header.extend(["mean", "sd", "lower95", "upper95"].map(String::from));
    let mut t = Table {
        header,
        ..Default::default()
    };
    provenance(&mut t, "predict", artifact);
    t.comment(&format!("at = {at}"));
    for q in queries {
        if q.z.ncols() != p {
            return Err(Error::input(format!("query has {} covariates, the fit has {p}", q.z.ncols())));
        }
        let groups: Vec<usize> = match q.group {
            Some(id) => vec![f.data.group_index(id).ok_or_else(|| Error::input(format!("fit has no group {id}")))?],
            None => (0..f.data.groups.len()).collect(),
        };
        for gi in groups {
            let pred = predict_new(f, gi, &q.z, false)?;
            let sd = pred.sd();
            for k in 0..q.z.nrows() {
                let mut row = vec![f.data.groups[gi].id.to_string()];
                row.extend((0..p).map(|l| format!("{:?}", q.z[(k, l)])));
                let m = pred.mean[k];
                row.extend([m, sd[k], m - 1.96 * sd[k], m + 1.96 * sd[k]].map(|v| format!("{v:?}")));
                t.push(row);
            }
        }
    }
    Ok(t)
}

pub fn cmd_predict(artifact_path: &Path, at: &str, out: &Path) -> Result<Table> {
    let artifact = FitArtifact::read(artifact_path)?;
    let queries = resolve_query(at, artifact.fit.data.p())?;
    let t = predict_table(&artifact, &queries, at)?;
    write_text(out, &t.render()?)?;
    Ok(t)
}

pub fn diagnose_table(artifact: &FitArtifact, multiplier: Option<f64>) -> Result<Table> {
    let mult = multiplier.unwrap_or(artifact.run_config.rule_multiplier);
    let report = outlier_scores(&artifact.fit, mult)?;
    let mut t = Table::new(&["group", "curve", "r_hat", "threshold", "flag", "multiplier"]);
    provenance(&mut t, "diagnose", artifact);
    t.comment(&format!("rule: flag when r_hat > multiplier * median r_hat of the group; multiplier = {mult:?}"));
    for c in &report.curves {
        t.push(vec![
            c.group.to_string(),
            c.curve.to_string(),
            format!("{:?}", c.r_hat),
            format!("{:?}", c.threshold),
            u8::from(c.flagged).to_string(),
            format!("{mult:?}"),
        ]);
    }
    Ok(t)
}

pub fn cmd_diagnose(artifact_path: &Path, multiplier: Option<f64>, out: &Path) -> Result<Table> {
    let artifact = FitArtifact::read(artifact_path)?;
    let t = diagnose_table(&artifact, multiplier)?;
    write_text(out, &t.render()?)?;
    Ok(t)
}

/// Rendered outputs of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTables {
    pub summary: Table,
    /// One row per scenario, replication, model and group.
    pub reps: Table,
}

fn error_label(e: ErrorKind) -> String {
    match e {
        ErrorKind::Gaussian => "gaussian".into(),
        ErrorKind::Etp { nu } => format!("etp(nu={nu})"),
    }
}

fn gamma_label(d: Disturbance) -> String {
    d.gamma().map_or_else(String::new, |g| format!("{g:?}"))
}

fn cell(mean: f64, sd: f64) -> String {
    format!("{mean:.4}({sd:.4})")
}

/// Applies command-line overrides of the seed and replication count.
pub fn with_overrides(mut spec: SimSpec, seed: Option<u64>, reps: Option<usize>) -> SimSpec {
    if let Some(s) = seed {
        spec.base.seed = s;
    }
    if let Some(r) = reps {
        spec.base.reps = r;
    }
    spec
}

/// Runs every scenario of `spec` on the current rayon pool.
pub fn simulate_tables(spec: &SimSpec) -> Result<SimTables> {
    spec.validate()?;
    let models = spec.model_configs();
    let options = spec.fit_options()?;
    let names: Vec<&str> = spec.models.iter().map(|m| m.name()).collect();
    let echo = format!("rtpr simulate\n{}", spec.to_toml());
    let j = spec.base.curves;

    let mut reps = Table::new(&["scenario", "rep", "model", "group", "mse", "status"]);
    reps.header.extend((1..=j).map(|c| format!("r{c}")));
    reps.comment(&echo);

    let mut summary = match spec.output {
        SimOutput::Mse => {
            let mut h = vec!["error", "disturbance", "gamma"];
            h.extend(&names);
            h.push("failures");
            Table::new(&h)
        }
        SimOutput::RandomEffects => {
            let mut t = Table::new(&["error", "disturbance", "gamma", "group"]);
            t.header.extend((1..=j).map(|c| format!("r{c}")));
            t.header.extend((1..=j).map(|c| format!("flag_rate{c}")));
            t
        }
        SimOutput::Curves => Table::new(&[
            "scenario", "group", "x", "truth", "train_mean", "model", "mean", "lower95", "upper95",
        ]),
    };
    summary.comment(&echo);

    for k in 0..spec.scenarios.len() {
        let config = spec.scenario(k);
        if spec.output == SimOutput::Curves {
            curves_rows(&mut summary, spec, k)?;
            continue;
        }
        info!("scenario {}: {} reps", k + 1, config.reps);
        let result = run_experiment(&config, &models, &options)?;
        rep_rows(&mut reps, &result, k, &names);
        let labels = vec![error_label(config.error), config.disturbance.label().into(), gamma_label(config.disturbance)];
        match spec.output {
            SimOutput::Mse => {
                let mut row = labels;
                row.extend(result.models.iter().map(|m| cell(m.mse_mean, m.mse_sd)));
                row.push(result.models.iter().map(|m| m.failed).sum::<usize>().to_string());
                summary.push(row);
            }
            SimOutput::RandomEffects => {
                let a = spec.models.iter().position(|m| *m == spec.effects_model()).expect("validated");
                let Some(groups) = &result.models[a].r_hat else {
                    return Err(Error::estimation("every replication of the effects model failed", None));
                };
                for (i, g) in groups.iter().enumerate() {
                    let mut row = labels.clone();
                    row.push((i + 1).to_string());
                    row.extend(g.iter().map(|c| cell(c.mean, c.sd)));
                    row.extend(g.iter().map(|c| format!("{:.2}", c.flag_rate)));
                    summary.push(row);
                }
            }
            SimOutput::Curves => unreachable!(),
        }
    }
    Ok(SimTables { summary, reps })
}

fn rep_rows(t: &mut Table, result: &SimResult, scenario: usize, names: &[&str]) {
    for rec in &result.reps {
        for (run, name) in rec.runs.iter().zip(names) {
            for i in 0..result.config.groups {
                let mut row = vec![
                    (scenario + 1).to_string(),
                    (rec.rep + 1).to_string(),
                    name.to_string(),
                    (i + 1).to_string(),
                    run.mse.map_or_else(String::new, |v| format!("{v:?}")),
                    run.error.clone().unwrap_or_else(|| "ok".into()),
                ];
                match &run.r_hat {
                    Some(r) => row.extend(r[i].iter().map(|v| format!("{v:?}"))),
                    None => row.extend(std::iter::repeat_n(String::new(), result.config.curves)),
                }
                t.push(row);
            }
        }
    }
}

/// Curves of replicate 1: truth on the grid, the mean of the undisturbed
/// training curves, and each model's prediction band.
fn curves_rows(t: &mut Table, spec: &SimSpec, k: usize) -> Result<()> {
    let config = spec.scenario(k);
    config.validate()?;
    let design = make_design(&config)?;
    let rep = sample_replicate(&config, &design, &mut replication_rng(config.seed, 0))?;
    let z = DMatrix::from_column_slice(design.grid.len(), 1, &design.grid);
    let options = spec.fit_options()?;
    for (m, kind) in spec.model_configs().iter().zip(&spec.models) {
        let f = fit(m, &rep.data, &options)?;
        for (i, g) in rep.data.groups.iter().enumerate() {
            let pred = predict_new(&f, i, &z, false)?;
            let sd = pred.sd();
            for (a, x) in design.grid.iter().enumerate() {
                let train_mean = match design.train.iter().position(|&q| q == a) {
                    Some(pos) => {
                        let clean: Vec<f64> = g
                            .curves
                            .iter()
                            .zip(&g.curve_ids)
                            .filter(|(_, id)| **id as usize != config.disturbed_curve || config.disturbance == Disturbance::None)
                            .map(|(c, _)| c[pos])
                            .collect();
                        format!("{:?}", clean.iter().sum::<f64>() / clean.len() as f64)
                    }
                    None => String::new(),
                };
                let mean = pred.mean[a];
                t.push(vec![
                    (k + 1).to_string(),
                    g.id.to_string(),
                    format!("{x:?}"),
                    format!("{:?}", rep.truth[i][a]),
                    train_mean,
                    kind.name().to_string(),
                    format!("{mean:?}"),
                    format!("{:?}", mean - 1.96 * sd[a]),
                    format!("{:?}", mean + 1.96 * sd[a]),
                ]);
            }
        }
    }
    Ok(())
}

/// Path of the per-replication file written next to `out`.
pub fn reps_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "simulate".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.reps.csv"))
}

pub fn cmd_simulate(spec_path: &Path, seed: Option<u64>, reps: Option<usize>, out: &Path) -> Result<SimTables> {
    let spec = with_overrides(SimSpec::read(spec_path)?, seed, reps);
    let tables = simulate_tables(&spec)?;
    write_text(out, &tables.summary.render()?)?;
    if spec.output != SimOutput::Curves {
        write_text(&reps_path(out), &tables.reps.render()?)?;
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_dataset;

    fn small_spec(output: &str) -> SimSpec {
        SimSpec::parse(&format!(
            "models = [\"gp-gp\", \"gp-tp\"]\noutput = \"{output}\"\n[base]\nreps = 2\nseed = 4\ngroups = 2\n\
             [[scenario]]\ndisturbance = {{ kind = \"constant\", gamma = 2.0 }}\n"
        ))
        .unwrap()
    }

    #[test]
    fn drop_specs() {
        assert_eq!(parse_drop("2:13").unwrap(), (2, 13));
        assert!(parse_drop("2").is_err());
        assert!(parse_drop("a:1").is_err());
    }

    #[test]
    fn mse_table_shape() {
        let t = simulate_tables(&small_spec("mse")).unwrap();
        assert_eq!(t.summary.header, ["error", "disturbance", "gamma", "gp-gp", "gp-tp", "failures"]);
        assert_eq!(t.summary.rows.len(), 1);
        assert_eq!(&t.summary.rows[0][..3], ["gaussian", "constant", "2.0"]);
        // 2 reps x 2 models x 2 groups
        assert_eq!(t.reps.rows.len(), 8);
        assert!(t.summary.render().unwrap().starts_with("# rtpr simulate\n"));
    }

    #[test]
    fn effects_table_shape() {
        let t = simulate_tables(&small_spec("random-effects")).unwrap();
        assert_eq!(t.summary.rows.len(), 2);
        assert_eq!(t.summary.header.len(), 4 + 12);
    }

    #[test]
    fn curves_table_shape() {
        let t = simulate_tables(&small_spec("curves")).unwrap();
        // 2 models x 2 groups x 30 grid points
        assert_eq!(t.summary.rows.len(), 120);
        let train_rows = t.summary.rows.iter().filter(|r| !r[4].is_empty()).count();
        assert_eq!(train_rows, 2 * 2 * 10);
    }

    #[test]
    fn predict_at_design_reproduces_blup() {
        let text = "group,curve,x1,y\n1,1,0,0.1\n1,1,1,0.9\n1,1,2,0.2\n1,2,0,0.0\n1,2,1,1.1\n1,2,2,0.3\n1,3,0,2.1\n1,3,1,3.0\n1,3,2,2.2\n";
        let data = parse_dataset(text.as_bytes()).unwrap();
        let a = fit_artifact(&data, &RunConfig::default(), &[]).unwrap();
        let q = vec![Query {
            group: None,
            z: data.groups[0].x.clone(),
        }];
        let t = predict_table(&a, &q, "design").unwrap();
        for (row, f) in t.rows.iter().zip(a.fit.f_hat[0].iter()) {
            let mean: f64 = row[2].parse().unwrap();
            assert!((mean - f).abs() < 1e-6);
            let (lo, hi): (f64, f64) = (row[4].parse().unwrap(), row[5].parse().unwrap());
            assert!(lo <= mean && mean <= hi);
        }
        let d = diagnose_table(&a, None).unwrap();
        assert_eq!(d.rows.len(), 3);
        let dropped = fit_artifact(&data, &RunConfig::default(), &[(1, 3)]).unwrap();
        assert_eq!(dropped.fit.data.groups[0].j(), 2);
        assert_eq!(dropped.dropped, vec!["1:3"]);
    }
}
