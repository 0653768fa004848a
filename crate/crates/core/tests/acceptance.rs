//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rtpr::commands::{cmd_simulate, reps_path};
use rtpr::estimate::{adjusted_profile_m, blup_f, conditional_mean, fit, h1_value, r_scores, Beta, FitOptions, FitResult};
use rtpr::io::SimSpec;
use rtpr::kernel::{gram_gradients, KernelParams};
use rtpr::model::{
    build_covariance, covariance_partials, BatchData, CovarianceVar, Group, ModelConfig, ModelKind, NuMode,
    RandomEffects,
};
use rtpr::predict::{etpr_variance_factor, outlier_scores, predict_new, predict_train};
use rtpr::simulate::{run_experiment, Disturbance, ErrorKind};
use statrs::function::gamma::ln_gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

// ---------------------------------------------------------------- oracles

fn kern(kp: &KernelParams, u: f64, v: f64) -> f64 {
    kp.theta0 * (-0.5 * kp.eta[0] * (u - v) * (u - v)).exp() + kp.xi[0] * u * v
}

fn gram(kp: &KernelParams, x: &[f64], jitter: bool) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::from_fn(n, n, |a, b| kern(kp, x[a], x[b]));
    if jitter {
        let j = 1e-8 * k.diagonal().mean();
        for a in 0..n {
            k[(a, a)] += j;
        }
    }
    k
}

/// Batch covariance: block `(j, l)` is `r0 K + [j = l] phi r_j I`.
fn batch_cov(k: &DMatrix<f64>, r: &[f64], phi: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let j = r.len() - 1;
    DMatrix::from_fn(n * j, n * j, |a, b| {
        let mut v = r[0] * k[(a % n, b % n)];
        if a == b {
            v += phi * r[1 + a / n];
        }
        v
    })
}

/// Sum of the `J` length-`n` blocks of `v`.
fn fold(v: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut s = DVector::zeros(n);
    for b in 0..v.len() / n {
        s += v.rows(b * n, n);
    }
    s
}

fn log_ig(nu: f64, r: f64) -> f64 {
    nu * (nu - 1.0).ln() - ln_gamma(nu) - (nu + 1.0) * r.ln() - (nu - 1.0) / r
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn random_group(rng: &mut ChaCha8Rng, id: u32, n: usize, j: usize) -> Group {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    x.sort_by(f64::total_cmp);
    let shift = rng.random_range(-1.0..1.0);
    let curves = (0..j)
        .map(|_| {
            let off = rng.random_range(-0.3..0.3);
            DVector::from_iterator(
                n,
                x.iter().map(|t| (t * 2.0 + shift).sin() + off + 0.2 * rng.sample::<f64, _>(StandardNormal)),
            )
        })
        .collect();
    Group::new(id, DMatrix::from_column_slice(n, 1, &x), curves).unwrap()
}

fn random_kernel(rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams::scalar(rng.random_range(0.3..2.0), rng.random_range(0.3..3.0), rng.random_range(0.0..0.5)).unwrap()
}

fn xs(g: &Group) -> Vec<f64> {
    g.x.column(0).iter().copied().collect()
}

// ------------------------------------------------------------ criteria

/// GP-GP fits and predictions against a textbook GPR at the same parameters.
fn gpr_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(3..=15);
        let j = rng.random_range(1..=3);
        let data = BatchData::new(vec![random_group(&mut rng, 1, n, j)]).unwrap();
        let f = fit(&ModelConfig::preset(ModelKind::GpGp), &data, &FitOptions::default()).unwrap();
        let g = &data.groups[0];
        let (kp, phi) = (&f.beta_hat.thetas[0], f.beta_hat.phis[0]);
        let x = xs(g);
        let k = gram(kp, &x, true);
        let c = batch_cov(&k, &vec![1.0; j + 1], phi);
        let ch = Cholesky::new(c.clone()).unwrap();
        let y = g.stacked();
        let alpha = ch.solve(&y);
        let logml = -0.5 * y.dot(&alpha) - ch.l().diagonal().map(f64::ln).sum() - 0.5 * (n * j) as f64 * (2.0 * PI).ln();
        worst = worst.max((f.m_value - logml).abs());
        worst = worst.max((&f.f_hat[0] - &k * fold(&alpha, n)).amax());

        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..3.5)).collect();
        let p = predict_new(&f, 0, &DMatrix::from_column_slice(5, 1, &z), false).unwrap();
        for (a, za) in z.iter().enumerate() {
            let kz = DVector::from_fn(n * j, |b, _| kern(kp, *za, x[b % n]));
            let mean = kz.dot(&alpha);
            let var = kern(kp, *za, *za) - kz.dot(&ch.solve(&kz));
            worst = worst.max((p.mean[a] - mean).abs()).max((p.variance[a] - var).abs());
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("20 instances, max abs diff {worst:.2e} (< 1e-6)"),
    }
}

/// The BLUP formula and the conditional-mean formula agree.
fn blup_marginal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let j = rng.random_range(1..=3);
        let data = BatchData::new(vec![random_group(&mut rng, 1, n, j)]).unwrap();
        let kp = random_kernel(&mut rng);
        let phi = rng.random_range(0.05..1.0);
        let r: Vec<f64> = (0..=j).map(|_| rng.random_range(0.1..10.0)).collect();
        let beta = Beta::new(vec![kp.clone()], vec![phi], None, None);
        let eff = RandomEffects { groups: vec![r.clone()] };
        let a = blup_f(&beta, &eff, &data, 0).unwrap();
        let b = conditional_mean(&beta, &eff, &data, 0).unwrap();
        let k = gram(&kp, &xs(&data.groups[0]), true);
        let c = batch_cov(&k, &r, phi);
        let oracle = &k * fold(&Cholesky::new(c).unwrap().solve(&data.groups[0].stacked()), n) * r[0];
        worst = worst.max((&a - &b).amax()).max((&b - &oracle).amax());
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!("50 instances, max abs diff {worst:.2e} (< 1e-8)"),
    }
}

fn rel(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / an.abs().max(1e-2)
}

/// Analytic effect scores, covariance partials and kernel gradients against
/// central differences.
fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let kinds = [ModelKind::GpTp, ModelKind::TpTp, ModelKind::TpGp, ModelKind::EtprJoint];
    let (mut w_score, mut w_cov, mut w_kern): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for inst in 0..50 {
        let n = rng.random_range(2..=6);
        let j = rng.random_range(1..=3);
        let data = BatchData::new(vec![random_group(&mut rng, 1, n, j)]).unwrap();
        let kp = random_kernel(&mut rng);
        let phi = rng.random_range(0.05..1.0);
        let nu0 = rng.random_range(1.5..6.0);
        let nu1 = rng.random_range(1.5..6.0);
        let config = ModelConfig::new(kinds[inst % 4], nu0, nu1, NuMode::Fixed);
        let beta = Beta::with_config_shapes(vec![kp.clone()], vec![phi], &config);
        let layout = config.layout();
        let free: Vec<f64> = (0..layout.n_free(j)).map(|_| rng.random_range(0.2..3.0)).collect();
        let full = layout.expand(&free, j);
        let eff = |f: &[f64]| RandomEffects {
            groups: vec![layout.expand(f, j)],
        };

        let scores = r_scores(&config, &beta, &eff(&free), &data).unwrap();
        for a in 0..free.len() {
            let h = 1e-5 * free[a];
            let (mut up, mut dn) = (free.clone(), free.clone());
            up[a] += h;
            dn[a] -= h;
            let fd = (h1_value(&config, &beta, &eff(&up), &data).unwrap()
                - h1_value(&config, &beta, &eff(&dn), &data).unwrap())
                / (2.0 * h);
            w_score = w_score.max(rel(fd, scores[0][a]));
        }

        let x = xs(&data.groups[0]);
        let k = gram(&kp, &x, false);
        let grads = gram_gradients(&kp, &data.groups[0].x).unwrap();
        for (var, an) in covariance_partials(layout, &full, &k, &grads, phi).unwrap() {
            let (cp, cm, h) = match var {
                CovarianceVar::Effect(a) => {
                    let h = 1e-5 * free[a];
                    let (mut up, mut dn) = (free.clone(), free.clone());
                    up[a] += h;
                    dn[a] -= h;
                    (batch_cov(&k, &layout.expand(&up, j), phi), batch_cov(&k, &layout.expand(&dn, j), phi), h)
                }
                CovarianceVar::Phi => {
                    let h = 1e-6 * phi;
                    (batch_cov(&k, &full, phi + h), batch_cov(&k, &full, phi - h), h)
                }
                CovarianceVar::Kernel(l) => {
                    let s = kp.to_unconstrained();
                    let h = 1e-5;
                    let (mut up, mut dn) = (s.clone(), s.clone());
                    up[l] += h;
                    dn[l] -= h;
                    let kup = gram(&KernelParams::from_unconstrained(1, &up), &x, false);
                    let kdn = gram(&KernelParams::from_unconstrained(1, &dn), &x, false);
                    (batch_cov(&kup, &full, phi), batch_cov(&kdn, &full, phi), h)
                }
            };
            let fd = (cp - cm) / (2.0 * h);
            w_cov = w_cov.max(max_abs(&fd, &an) / an.amax().max(1e-2));
        }

        let s = kp.to_unconstrained();
        for (l, an) in grads.iter().enumerate() {
            let h = 1e-5;
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[l] += h;
            dn[l] -= h;
            let fd = (gram(&KernelParams::from_unconstrained(1, &up), &x, false)
                - gram(&KernelParams::from_unconstrained(1, &dn), &x, false))
                / (2.0 * h);
            w_kern = w_kern.max(max_abs(&fd, an) / an.amax().max(1e-2));
        }
        // the assembled covariance matches the oracle as well
        w_cov = w_cov.max(max_abs(&build_covariance(&full, &k, phi).unwrap(), &batch_cov(&k, &full, phi)));
    }
    let worst = w_score.max(w_cov).max(w_kern);
    Outcome {
        pass: worst < 1e-4,
        detail: format!("50 instances, max rel err: scores {w_score:.1e}, partials {w_cov:.1e}, kernel {w_kern:.1e} (< 1e-4)"),
    }
}

/// `log` of the integral of `exp(h1)` over `(r0, r1)` for a scalar instance,
/// by the trapezoid rule on `log r`.
fn scalar_log_integral(k: f64, phi: f64, y: f64, nu: f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let h = (hi - lo) / steps as f64;
    let f = |s0: f64, s1: f64| {
        let v = s0.exp() * k + phi * s1.exp();
        -0.5 * (2.0 * PI * v).ln() - 0.5 * y * y / v + log_ig(nu, s0.exp()) + log_ig(nu, s1.exp()) + s0 + s1
    };
    let mut vals = Vec::with_capacity((steps + 1) * (steps + 1));
    for a in 0..=steps {
        for b in 0..=steps {
            vals.push(f(lo + a as f64 * h, lo + b as f64 * h));
        }
    }
    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + (vals.iter().map(|v| (v - mx).exp()).sum::<f64>() * h * h).ln()
}

fn laplace_error(rng: &mut ChaCha8Rng, nu: f64, range: f64, steps: usize) -> f64 {
    let theta0 = rng.random_range(0.3..2.0);
    let xi = rng.random_range(0.0..0.5);
    let phi = rng.random_range(0.1..1.0);
    let x = rng.random_range(-1.0..1.0);
    let y = rng.random_range(-2.0..2.0);
    let kp = KernelParams::scalar(theta0, 1.0, xi).unwrap();
    let group = Group::new(1, DMatrix::from_element(1, 1, x), vec![DVector::from_element(1, y)]).unwrap();
    let data = BatchData::new(vec![group]).unwrap();
    let config = ModelConfig::new(ModelKind::TpTp, nu, nu, NuMode::Fixed);
    let beta = Beta::new(vec![kp.clone()], vec![phi], Some(nu), Some(nu));
    let m = adjusted_profile_m(&config, &beta, &data, &FitOptions::default()).unwrap().m;
    let k = gram(&kp, &[x], true)[(0, 0)];
    (m - scalar_log_integral(k, phi, y, nu, -range, range, steps)).abs()
}

/// Laplace approximation against 2-D quadrature on scalar instances. The
/// approximation error shrinks like `1/nu`; the asserted family uses
/// `nu` in [60, 200] and the heavy-tailed default is reported alongside.
fn laplace_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let nu = rng.random_range(60.0..200.0);
        worst = worst.max(laplace_error(&mut rng, nu, 8.0, 1600));
    }
    let mut heavy: f64 = 0.0;
    for _ in 0..3 {
        heavy = heavy.max(laplace_error(&mut rng, 1.05, 30.0, 3000));
    }
    Outcome {
        pass: worst < 0.05,
        detail: format!("10 instances with nu in [60, 200], max |m - log quad| {worst:.4} (< 0.05); at nu = 1.05: {heavy:.3}"),
    }
}

fn joint_checks(f: &FitResult, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, g) in f.data.groups.iter().enumerate() {
        let (n, j) = (g.n(), g.j());
        let (kp, phi) = (&f.beta_hat.thetas[i], f.beta_hat.phis[i]);
        let nu0 = f.beta_hat.nu0.unwrap();
        let x = xs(g);
        let k = gram(kp, &x, true);
        let c = batch_cov(&k, &vec![1.0; j + 1], phi);
        let ch = Cholesky::new(c).unwrap();
        let y = g.stacked();
        let alpha = ch.solve(&y);
        let s0 = (2.0 * (nu0 - 1.0) + y.dot(&alpha)) / (2.0 * (nu0 - 1.0) + (n * j) as f64);

        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..3.5)).collect();
        let kzx = DMatrix::from_fn(4, n * j, |a, b| kern(kp, z[a], x[b % n]));
        let kxx = DMatrix::from_fn(n, n * j, |a, b| k[(a, b % n)]);
        let kzz = DMatrix::from_fn(4, 4, |a, b| kern(kp, z[a], z[b]));

        let train = predict_train(f, i).unwrap();
        worst = worst.max((&train.mean - &kxx * &alpha).amax());
        let gpr_train = &k - &kxx * ch.solve(&kxx.transpose());
        worst = worst.max(max_abs(train.covariance.as_ref().unwrap(), &(gpr_train * s0)));

        let p = predict_new(f, i, &DMatrix::from_column_slice(4, 1, &z), true).unwrap();
        worst = worst.max((&p.mean - &kzx * &alpha).amax());
        let gpr_new = kzz - &kzx * ch.solve(&kzx.transpose());
        worst = worst.max(max_abs(p.covariance.as_ref().unwrap(), &(gpr_new * s0)));
    }
    worst
}

/// Joint-error predictions collapse to GPR means with scaled covariances.
fn joint_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for inst in 0..8 {
        let groups = 1 + inst % 2;
        let gs = (0..groups)
            .map(|i| {
                let n = rng.random_range(4..=8);
                let j = rng.random_range(2..=3);
                random_group(&mut rng, i as u32 + 1, n, j)
            })
            .collect();
        let data = BatchData::new(gs).unwrap();
        let f = fit(&ModelConfig::preset(ModelKind::EtprJoint), &data, &FitOptions::default()).unwrap();
        worst = worst.max(joint_checks(&f, &mut rng));
    }

    // E[s0] = 1 when y ~ N(0, C)
    let kp = KernelParams::scalar(0.8, 2.0, 0.1).unwrap();
    let x: Vec<f64> = (0..6).map(|a| a as f64 * 0.5).collect();
    let c = batch_cov(&gram(&kp, &x, true), &[1.0, 1.0, 1.0], 0.3);
    let l = Cholesky::new(c.clone()).unwrap().l();
    let draws = 10_000;
    let s: Vec<f64> = (0..draws)
        .map(|_| {
            let z = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            etpr_variance_factor(&(&l * z), &c, 2.5).unwrap()
        })
        .collect();
    let mean = s.iter().sum::<f64>() / draws as f64;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    let se = sd / (draws as f64).sqrt();
    let mc_ok = (mean - 1.0).abs() <= 3.0 * se;
    Outcome {
        pass: worst < 1e-8 && mc_ok,
        detail: format!(
            "8 fits, max abs diff {worst:.2e} (< 1e-8); MC mean s0 {mean:.4} +/- {se:.4} (|mean - 1| <= 3 SE: {mc_ok})"
        ),
    }
}

fn load_spec(name: &str) -> SimSpec {
    SimSpec::read(&configs().join(name)).unwrap()
}

/// Gaussian-noise constant-disturbance rows of the bundled one-group config.
fn one_group_orderings() -> Outcome {
    let spec = load_spec("one_group_mse.cfg");
    let models = [
        ModelConfig::new(ModelKind::GpGp, spec.nu0, spec.nu1, NuMode::Fixed),
        ModelConfig::new(ModelKind::GpTp, spec.nu0, spec.nu1, NuMode::Fixed),
    ];
    let options = spec.fit_options().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for k in 0..spec.scenarios.len() {
        let c = spec.scenario(k);
        let (ErrorKind::Gaussian, Disturbance::Constant { gamma }) = (c.error, c.disturbance) else {
            continue;
        };
        assert_eq!(c.reps, 100);
        let r = run_experiment(&c, &models, &options).unwrap();
        let (gpr, gptp) = (r.models[0].mse_mean, r.models[1].mse_mean);
        let ratio = gptp / gpr;
        let wins = r
            .reps
            .iter()
            .filter(|rep| matches!((rep.runs[0].mse, rep.runs[1].mse), (Some(a), Some(b)) if b < a))
            .count();
        let failed = r.models[0].failed + r.models[1].failed;
        let ok = if gamma == 0.5 {
            (0.75..=1.25).contains(&ratio)
        } else if gamma == 1.0 {
            // one-sided sign test at 5%: at least 59 wins of 100
            gptp < gpr && wins >= 59
        } else {
            gptp < gpr && ratio < 0.7 && wins >= 59
        };
        pass &= ok && failed == 0;
        parts.push(format!("g={gamma}: GPR {gpr:.3} GP-TP {gptp:.3} ratio {ratio:.2} wins {wins}/100 failed {failed}"));
    }
    pass &= parts.len() == 3;
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// Noise effects of the disturbed curve in the bundled two-group config.
fn two_group_effects() -> Outcome {
    let spec = load_spec("two_group_effects.cfg");
    let k = (0..spec.scenarios.len())
        .find(|&k| spec.scenario(k).disturbance == Disturbance::Constant { gamma: 2.0 })
        .unwrap();
    let c = spec.scenario(k);
    assert_eq!((c.groups, c.reps), (2, 100));
    let model = ModelConfig::new(ModelKind::GpTp, spec.nu0, spec.nu1, NuMode::Fixed);
    let r = run_experiment(&c, &[model], &spec.fit_options().unwrap()).unwrap();
    let summary = r.models[0].r_hat.as_ref().unwrap();
    let mut pass = r.models[0].failed == 0;
    let mut parts = Vec::new();
    for (i, g) in summary.iter().enumerate() {
        let out = &g[5];
        let top = g[..5].iter().map(|c| c.mean).fold(0.0, f64::max);
        pass &= out.mean > 5.0 * top && out.flag_rate >= 0.9;
        parts.push(format!(
            "group {}: r6 {:.3} vs max r1..r5 {:.3} (ratio {:.1}), curve 6 flagged in {:.0}%",
            i + 1,
            out.mean,
            top,
            out.mean / top,
            100.0 * out.flag_rate
        ));
    }
    // the same rule on a full fit of one replicate
    let design = rtpr::simulate::make_design(&c).unwrap();
    let rep = rtpr::simulate::sample_replicate(&c, &design, &mut rtpr::simulate::replication_rng(c.seed, 0)).unwrap();
    let f = fit(&model, &rep.data, &FitOptions::default()).unwrap();
    let flagged: Vec<(u32, u32)> = outlier_scores(&f, c.rule_multiplier).unwrap().flagged().map(|s| (s.group, s.curve)).collect();
    pass &= flagged == [(1, 6), (2, 6)];
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn bits(f: &FitResult) -> (Vec<u64>, Vec<u64>) {
    let b = f.beta_hat.to_unconstrained(&f.config).iter().map(|v| v.to_bits()).collect();
    let r = f.r_hat.groups.iter().flatten().map(|v| v.to_bits()).collect();
    (b, r)
}

/// Estimates are unchanged when every response is negated.
fn even_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let kinds = [ModelKind::GpTp, ModelKind::TpTp, ModelKind::GpGp, ModelKind::TpGp, ModelKind::EtprJoint];
    let mut equal = 0;
    for inst in 0..10 {
        let groups = 1 + inst % 2;
        let gs = (0..groups)
            .map(|i| {
                let n = rng.random_range(4..=9);
                let j = rng.random_range(2..=4);
                random_group(&mut rng, i as u32 + 1, n, j)
            })
            .collect();
        let data = BatchData::new(gs).unwrap();
        let config = ModelConfig::preset(kinds[inst % 5]);
        let a = fit(&config, &data, &FitOptions::default()).unwrap();
        let b = fit(&config, &data.negated(), &FitOptions::default()).unwrap();
        if bits(&a) == bits(&b) {
            equal += 1;
        }
    }
    Outcome {
        pass: equal == 10,
        detail: format!("{equal}/10 instances bitwise equal"),
    }
}

/// `simulate` output is byte-identical across runs and pool sizes.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = configs().join("one_group_mse.cfg");
    let run = |threads: usize, tag: &str| {
        let out = dir.path().join(format!("{tag}.csv"));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cmd_simulate(&spec, Some(77), Some(3), &out))
            .unwrap();
        (std::fs::read(&out).unwrap(), std::fs::read(reps_path(&out)).unwrap())
    };
    let a = run(1, "one");
    let b = run(4, "four");
    let c = run(4, "again");
    let same = a == b && b == c;
    Outcome {
        pass: same,
        detail: format!(
            "12 scenarios x 3 reps; 1 vs 4 threads and repeat: identical = {same} ({} + {} bytes)",
            a.0.len(),
            a.1.len()
        ),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 9] = [
        (1, "GPR reduction", gpr_reduction, Duration::from_secs(10)),
        (2, "BLUP-marginal equivalence", blup_marginal, Duration::from_secs(5)),
        (3, "gradient suite", gradient_suite, Duration::from_secs(30)),
        (4, "Laplace fidelity", laplace_fidelity, Duration::from_secs(60)),
        (5, "joint-error identities", joint_identities, Duration::from_secs(60)),
        (6, "one-group MSE orderings", one_group_orderings, Duration::from_secs(1800)),
        (7, "two-group outlying-curve effects", two_group_effects, Duration::from_secs(1800)),
        (8, "even invariance", even_invariance, Duration::from_secs(120)),
        (9, "simulate determinism", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        let t = Instant::now();
        let out = run();
        let took = t.elapsed();
        let pass = out.pass && took < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} {}: {name}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {}/9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
