//! Box-constrained BFGS ascent with Armijo backtracking and
//! central-difference gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An objective whose evaluations can be committed as the new warm start.
pub(crate) trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    /// Adopt the state of the most recent `value` call.
    fn commit(&mut self);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    /// Converged when every gradient entry is below `tol * max(1, |f|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    /// Largest per-coordinate move in one iteration.
    pub max_step: f64,
    /// Every coordinate is kept in `[-bound, bound]`.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Gradient below tolerance.
    Gradient,
    /// No ascent step could be found from the current point.
    LineSearchStalled,
}

pub(crate) struct BfgsOutcome {
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

fn fd_gradient<O: Objective>(obj: &mut O, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for a in 0..x.len() {
        xp[a] = x[a] + h;
        let fp = obj.value(&xp)?;
        xp[a] = x[a] - h;
        let fm = obj.value(&xp)?;
        xp[a] = x[a];
        g.push((fp - fm) / (2.0 * h));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite finite-difference gradient"));
    }
    Ok(g)
}

fn small(g: &DVector<f64>, f: f64, tol: f64) -> bool {
    let scale = f.abs().max(1.0);
    g.iter().all(|v| v.abs() <= tol * scale)
}

/// Gradient with the components that push against a bound removed.
fn projected(x: &DVector<f64>, g: &DVector<f64>, bound: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |a, _| {
        let pinned = (x[a] >= bound && g[a] > 0.0) || (x[a] <= -bound && g[a] < 0.0);
        if pinned {
            0.0
        } else {
            g[a]
        }
    })
}

/// Maximizes `obj` from `x0`.
pub(crate) fn maximize<O: Objective>(obj: &mut O, x0: &[f64], opts: BfgsOptions) -> Result<BfgsOutcome> {
    let d = x0.len();
    let clamp = |v: DVector<f64>| v.map(|c| c.clamp(-opts.bound, opts.bound));
    let mut x = clamp(DVector::from_column_slice(x0));
    let mut f = obj.value(x.as_slice())?;
    obj.commit();
    if d == 0 {
        return Ok(BfgsOutcome {
            x: vec![],
            grad: vec![],
            iterations: 0,
            termination: Termination::Gradient,
        });
    }
    let mut g = DVector::from_vec(fd_gradient(obj, x.as_slice(), opts.fd_step)?);
    // inverse Hessian approximation of -f
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    let mut iterations = 0;

    loop {
        let gp = projected(&x, &g, opts.bound);
        if small(&gp, f, opts.tol) {
            return Ok(BfgsOutcome {
                x: x.as_slice().to_vec(),
                grad: g.as_slice().to_vec(),
                iterations,
                termination: Termination::Gradient,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::estimation(
                format!("outer optimizer did not converge in {} iterations", opts.max_iter),
                Some(x.as_slice().to_vec()),
            ));
        }
        iterations += 1;

        let free = gp.map(|v| if v == 0.0 { 0.0 } else { 1.0 });
        let mut p = (&hinv * &gp).component_mul(&free);
        if !(gp.dot(&p) > 0.0) {
            hinv = DMatrix::identity(d, d);
            fresh = true;
            p = gp.clone();
        }
        let big = p.amax();
        if big > opts.max_step {
            p *= opts.max_step / big;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = clamp(&x + &p * t);
            let slope = g.dot(&(&trial - &x));
            if let Ok(ft) = obj.value(trial.as_slice()) {
                if ft.is_finite() && slope > 0.0 && ft >= f + 1e-4 * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(d, d);
                fresh = true;
                continue;
            }
            return Ok(BfgsOutcome {
                x: x.as_slice().to_vec(),
                grad: g.as_slice().to_vec(),
                iterations,
                termination: Termination::LineSearchStalled,
            });
        };
        obj.commit();
        let g_new = DVector::from_vec(fd_gradient(obj, x_new.as_slice(), opts.fd_step)?);

        // update for minimizing -f: s = dx, y = -(g_new - g)
        let s = &x_new - &x;
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
}
