//! Maximization of `h1` over one group's free random effects.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::spectral::{GroupSpectrum, SpectralEval};
use crate::error::{Error, Result};
use crate::model::{ig_curvature, ig_log_density_unchecked, ig_score, EffectLayout, ShapeSlot};

/// `h1` restricted to one group, as a function of its free effects.
pub(crate) struct GroupProblem<'a> {
    pub sp: &'a GroupSpectrum,
    pub layout: EffectLayout,
    pub phi: f64,
    pub nu0: f64,
    pub nu1: f64,
}

impl GroupProblem<'_> {
    pub fn n_free(&self) -> usize {
        self.layout.n_free(self.sp.j())
    }

    pub fn nu(&self, a: usize) -> f64 {
        match self.layout.shape_slot(a) {
            ShapeSlot::Nu0 => self.nu0,
            ShapeSlot::Nu1 => self.nu1,
        }
    }

    pub fn full(&self, free: &[f64]) -> Vec<f64> {
        self.layout.expand(free, self.sp.j())
    }

    pub fn value(&self, free: &[f64]) -> Result<(f64, SpectralEval)> {
        let ev = self.sp.eval(&self.full(free), self.phi)?;
        let prior: f64 = free
            .iter()
            .enumerate()
            .map(|(a, r)| ig_log_density_unchecked(self.nu(a), *r))
            .sum();
        let v = ev.loglik + prior;
        if !v.is_finite() {
            return Err(Error::numeric("non-finite h1"));
        }
        Ok((v, ev))
    }

    pub fn gradient(&self, free: &[f64], ev: &SpectralEval) -> Vec<f64> {
        let mut g = self.layout.reduce_gradient(&ev.gradient(self.sp));
        for (a, r) in free.iter().enumerate() {
            g[a] += ig_score(self.nu(a), *r);
        }
        g
    }

    /// Magnitude of the summands of each score; rounding limits how close
    /// to zero the score can be driven.
    pub fn score_scale(&self, free: &[f64], ev: &SpectralEval) -> Vec<f64> {
        let full = ev.term_scale(self.sp);
        let mut out = self.layout.reduce_gradient(&full);
        for (a, r) in free.iter().enumerate() {
            let nu = self.nu(a);
            out[a] += (nu + 1.0) / r + (nu - 1.0) / (r * r);
        }
        out
    }

    pub fn hessian(&self, free: &[f64], ev: &SpectralEval) -> DMatrix<f64> {
        let mut h = self.layout.reduce_hessian(&ev.hessian(self.sp));
        for (a, r) in free.iter().enumerate() {
            h[(a, a)] += ig_curvature(self.nu(a), *r);
        }
        h
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

pub(crate) struct InnerSolution {
    pub free: Vec<f64>,
    pub value: f64,
    pub eval: SpectralEval,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Relative size of the score noise floor.
const SCORE_EPS: f64 = 1e-13;

fn converged(g: &[f64], scale: &[f64], tol: f64) -> bool {
    g.iter().zip(scale).all(|(v, s)| v.abs() <= tol.max(SCORE_EPS * s))
}

/// Log-scale score small enough that further progress is below rounding.
fn stagnated(free: &[f64], g: &[f64], tol: f64) -> bool {
    free.iter().zip(g).all(|(r, s)| (r * s).abs() <= tol)
}

/// Newton direction in `s = log r` for maximizing, with a Levenberg shift
/// whenever the log-scale Hessian is not negative definite.
fn newton_direction(free: &[f64], g: &[f64], h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let d = free.len();
    let gs = DVector::from_iterator(d, free.iter().zip(g).map(|(r, s)| r * s));
    let mut neg = DMatrix::from_fn(d, d, |a, b| -free[a] * h[(a, b)] * free[b]);
    for a in 0..d {
        neg[(a, a)] -= gs[a];
    }
    let scale = neg.diagonal().iter().fold(1e-12f64, |m, x| m.max(x.abs()));
    let mut mu = 0.0;
    for _ in 0..40 {
        let mut m = neg.clone();
        for a in 0..d {
            m[(a, a)] += mu;
        }
        if let Some(ch) = Cholesky::new(m) {
            let step = ch.solve(&gs);
            if step.iter().all(|x| x.is_finite()) {
                return Some(step);
            }
        }
        mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
    }
    None
}

const MAX_LOG_STEP: f64 = 3.0;

/// Newton increments in `log r` below this are at the rounding floor.
const NEWTON_FLOOR: f64 = 1e-10;

/// Solves the score equations of one group starting from `init`.
pub(crate) fn solve_group(prob: &GroupProblem, init: &[f64], opts: InnerOptions) -> Result<InnerSolution> {
    let d = prob.n_free();
    if init.len() != d {
        return Err(Error::input("initial effects do not match the model layout"));
    }
    let mut free = init.to_vec();
    let (mut value, mut ev) = prob.value(&free)?;
    if d == 0 {
        return Ok(InnerSolution {
            free,
            value,
            eval: ev,
            iterations: 0,
        });
    }
    let mut iterations = 0;
    let mut fell_back = false;
    loop {
        let g = prob.gradient(&free, &ev);
        if converged(&g, &prob.score_scale(&free, &ev), opts.tol) {
            // one extra Newton step sharpens the root well below the tolerance
            let h = prob.hessian(&free, &ev);
            if let Some(step) = newton_direction(&free, &g, &h) {
                let trial: Vec<f64> = free.iter().zip(step.iter()).map(|(r, s)| r * s.exp()).collect();
                if let Ok((v, e)) = prob.value(&trial) {
                    let gt = prob.gradient(&trial, &e);
                    if v >= value - 1e-12 * (1.0 + value.abs()) && inf_norm(&gt) <= inf_norm(&g) {
                        return Ok(InnerSolution {
                            free: trial,
                            value: v,
                            eval: e,
                            iterations,
                        });
                    }
                }
            }
            return Ok(InnerSolution {
                free,
                value,
                eval: ev,
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::estimation(
                format!("random-effect solve did not converge in {} iterations", opts.max_iter),
                Some(free),
            ));
        }
        iterations += 1;

        let h = prob.hessian(&free, &ev);
        let mut moved = false;
        if let Some(mut step) = newton_direction(&free, &g, &h) {
            let big = inf_norm(step.as_slice());
            if big <= NEWTON_FLOOR {
                // the remaining score is rounding noise in the score itself
                return Ok(InnerSolution {
                    free,
                    value,
                    eval: ev,
                    iterations,
                });
            }
            if big > MAX_LOG_STEP {
                step *= MAX_LOG_STEP / big;
            }
            let slope: f64 = free.iter().zip(&g).zip(step.iter()).map(|((r, s), t)| r * s * t).sum();
            let mut t = 1.0;
            while t * big.min(MAX_LOG_STEP) > 1e-15 {
                let trial: Vec<f64> = free.iter().zip(step.iter()).map(|(r, s)| r * (t * s).exp()).collect();
                if let Ok((v, e)) = prob.value(&trial) {
                    if v >= value + 1e-4 * t * slope {
                        free = trial;
                        value = v;
                        ev = e;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                // below the resolution of h1 the score itself decides
                let trial: Vec<f64> = free.iter().zip(step.iter()).map(|(r, s)| r * s.exp()).collect();
                if let Ok((v, e)) = prob.value(&trial) {
                    let gt = prob.gradient(&trial, &e);
                    if trial != free && v >= value - 1e-12 * (1.0 + value.abs()) && inf_norm(&gt) < inf_norm(&g) {
                        free = trial;
                        value = v;
                        ev = e;
                        moved = true;
                    }
                }
            }
        }
        if moved {
            continue;
        }
        if stagnated(&free, &g, opts.tol) {
            return Ok(InnerSolution {
                free,
                value,
                eval: ev,
                iterations,
            });
        }
        if fell_back {
            return Err(Error::estimation("random-effect solve stalled", Some(free)));
        }
        fell_back = true;
        free = bisection_sweeps(prob, free, opts)?;
        let (v, e) = prob.value(&free)?;
        value = v;
        ev = e;
    }
}

/// Gauss-Seidel sweeps solving each score in its own coordinate by bisection
/// on `log r`.
fn bisection_sweeps(prob: &GroupProblem, mut free: Vec<f64>, opts: InnerOptions) -> Result<Vec<f64>> {
    let score = |free: &[f64], a: usize| -> Result<f64> {
        let (_, ev) = prob.value(free)?;
        Ok(prob.gradient(free, &ev)[a])
    };
    for _ in 0..opts.max_iter {
        for a in 0..free.len() {
            let s0 = free[a].ln();
            let at = |free: &mut Vec<f64>, s: f64| -> Result<f64> {
                free[a] = s.exp();
                score(free, a)
            };
            let f0 = at(&mut free, s0)?;
            if f0 == 0.0 {
                continue;
            }
            // the prior makes the score positive as r -> 0 and negative as r -> inf
            let (mut lo, mut hi) = (s0, s0);
            let mut found = false;
            for k in 0..60 {
                let probe = if f0 > 0.0 { s0 + (k + 1) as f64 } else { s0 - (k + 1) as f64 };
                let fp = at(&mut free, probe)?;
                if (fp < 0.0) == (f0 > 0.0) || fp == 0.0 {
                    if f0 > 0.0 {
                        lo = probe - 1.0;
                        hi = probe;
                    } else {
                        lo = probe;
                        hi = probe + 1.0;
                    }
                    found = true;
                    break;
                }
            }
            if !found {
                free[a] = s0.exp();
                return Err(Error::estimation("could not bracket a random-effect score root", Some(free)));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if at(&mut free, mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            free[a] = (0.5 * (lo + hi)).exp();
        }
        let (_, ev) = prob.value(&free)?;
        let g = prob.gradient(&free, &ev);
        if converged(&g, &prob.score_scale(&free, &ev), opts.tol) || stagnated(&free, &g, opts.tol) {
            break;
        }
    }
    Ok(free)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelParams;
    use crate::model::Group;

    fn group() -> Group {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.5, 1.0, 1.5]);
        let curves = vec![
            DVector::from_vec(vec![0.1, 0.3, 0.2, -0.1]),
            DVector::from_vec(vec![0.0, 0.35, 0.1, -0.2]),
            DVector::from_vec(vec![2.1, 2.4, 2.2, 1.9]),
        ];
        Group::new(1, x, curves).unwrap()
    }

    #[test]
    fn newton_and_bisection_agree() {
        let g = group();
        let sp = GroupSpectrum::new(&KernelParams::scalar(0.3, 2.0, 0.05).unwrap(), &g).unwrap();
        let prob = GroupProblem {
            sp: &sp,
            layout: EffectLayout::Both,
            phi: 0.05,
            nu0: 1.05,
            nu1: 1.05,
        };
        let opts = InnerOptions {
            tol: 1e-8,
            max_iter: 200,
        };
        let newton = solve_group(&prob, &[1.0; 4], opts).unwrap();
        let g_n = prob.gradient(&newton.free, &newton.eval);
        assert!(inf_norm(&g_n) < 1e-8);
        let bis = bisection_sweeps(&prob, vec![1.0; 4], opts).unwrap();
        for (a, b) in newton.free.iter().zip(&bis) {
            assert!((a - b).abs() < 1e-6 * a.max(1.0), "{a} vs {b}");
        }
        // the shifted curve gets the largest noise effect
        assert!(newton.free[3] > newton.free[1] && newton.free[3] > newton.free[2]);
    }

    #[test]
    fn gp_layout_is_trivial() {
        let g = group();
        let sp = GroupSpectrum::new(&KernelParams::scalar(0.3, 2.0, 0.05).unwrap(), &g).unwrap();
        let prob = GroupProblem {
            sp: &sp,
            layout: EffectLayout::None,
            phi: 0.05,
            nu0: f64::NAN,
            nu1: f64::NAN,
        };
        let s = solve_group(&prob, &[], InnerOptions { tol: 1e-8, max_iter: 5 }).unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.value, sp.eval(&[1.0; 4], 0.05).unwrap().loglik);
    }
}
