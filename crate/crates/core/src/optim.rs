//! Derivative-free, quasi-Newton and Newton minimizers over `R^d`.
//!
//! Objectives may return `+inf` (or NaN, treated as `+inf`) to signal an
//! infeasible point; every method steps back from such points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Relative size of the initial simplex edges.
    pub initial_step: f64,
    /// Stop when the spread of simplex values is below `ftol * (1 + |f_best|)`.
    pub ftol: f64,
    /// and the simplex diameter is below `xtol`.
    pub xtol: f64,
}

impl NelderMeadOptions {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            max_evals: 500 * dim.max(1),
            initial_step: 0.1,
            ftol: 1e-10,
            xtol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Gradient tolerance relative to `max(1, |f|)`.
    pub gtol: f64,
    /// Relative step of the central-difference gradient.
    pub grad_step: f64,
    /// Stop after `stall_iters` consecutive accepted steps that lower the
    /// objective by less than `ftol * max(1, |f|)`.
    pub ftol: f64,
    pub stall_iters: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-8,
            grad_step: 1e-6,
            ftol: 1e-13,
            stall_iters: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub grad_step: f64,
    pub hess_step: f64,
    /// Stop once the accepted step is smaller than this in every coordinate.
    pub xtol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 4,
            grad_step: 1e-6,
            hess_step: 1e-4,
            xtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Nelder-Mead with the dimension-adaptive coefficients of Gao and Han.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let nf = n as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / nf);
    let (rho, sigma) = (0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step * v[i].abs().max(1.0);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.call(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while obj.evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| max_abs_diff(v, &simplex[0]))
            .fold(0.0, f64::max);
        if spread.is_finite()
            && spread <= opts.ftol * (1.0 + values[0].abs())
            && diameter <= opts.xtol
        {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = toward(-alpha);
        let fr = obj.call(&xr);
        if fr < values[0] {
            let xe = toward(-gamma);
            let fe = obj.call(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = toward(-rho);
            let fc = obj.call(&xc);
            (xc, if fc <= fr { fc } else { f64::INFINITY })
        } else {
            let xc = toward(rho);
            let fc = obj.call(&xc);
            (xc, if fc < values[n] { fc } else { f64::INFINITY })
        };
        if fc.is_finite() {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + sigma * (*x - b);
            }
            values[i] = obj.call(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        fx: values[best],
        evals: obj.evals,
        iterations,
        converged,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central-difference gradient with step `rel_step * max(1, |x_i|)`.
pub fn numerical_gradient<F>(mut f: F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian, returned row-major as a `d * d` vector.
///
/// `fx` is the objective at `x`.
pub fn numerical_hessian<F>(mut f: F, x: &[f64], fx: f64, rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x.len();
    let h: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let mut hess = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for i in 0..d {
        xp[i] = x[i] + h[i];
        let up = f(&xp);
        xp[i] = x[i] - h[i];
        let down = f(&xp);
        xp[i] = x[i];
        hess[i * d + i] = (up - 2.0 * fx + down) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    hess
}

/// BFGS on the inverse Hessian with numerical gradients and an Armijo
/// backtracking line search.
pub fn bfgs<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.call(&x);
    let mut converged = false;
    let mut iterations = 0;
    if !fx.is_finite() {
        return Minimum {
            x,
            fx,
            evals: obj.evals,
            iterations,
            converged,
        };
    }
    let grad =
        |obj: &mut Counted<F>, x: &[f64]| numerical_gradient(|v| obj.call(v), x, opts.grad_step);
    let mut g = grad(&mut obj, &x);
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut stalled = 0;

    while iterations < opts.max_iter {
        if g.iter().all(|v| v.is_finite())
            && g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gtol * fx.abs().max(1.0)
        {
            converged = true;
            break;
        }
        iterations += 1;

        let mut p: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let fnew = obj.call(&xn);
            if fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };

        let gn = grad(&mut obj, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) && sy.is_finite() {
            if fresh {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for i in 0..n {
                    hinv[i * n + i] = scale;
                }
                fresh = false;
            }
            update_inverse(&mut hinv, &s, &y, sy);
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if decrease <= opts.ftol * fx.abs().max(1.0) {
            stalled += 1;
            if stalled >= opts.stall_iters {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Minimum {
        x,
        fx,
        evals: obj.evals,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn update_inverse(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] +=
                -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Newton iterations with a numerical Hessian from `x0`, used to polish a
/// quasi-Newton optimum. A step is taken only if it lowers the objective
/// (halving up to 20 times); iteration stops when the Hessian is not
/// positive definite, no step helps, or the step is below `xtol`.
pub fn newton_polish<F>(f: F, x0: &[f64], fx0: f64, opts: &NewtonOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = fx0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter && fx.is_finite() {
        iterations += 1;
        let g = numerical_gradient(|y| f.call(y), &x, opts.grad_step);
        let h = numerical_hessian(|y| f.call(y), &x, fx, opts.hess_step);
        if g.iter().chain(&h).any(|v| !v.is_finite()) {
            break;
        }
        let Some(chol) = DMatrix::from_row_slice(d, d, &h).cholesky() else {
            break;
        };
        let step = chol.solve(&DVector::from_column_slice(&g));
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let y: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .map(|(xi, si)| xi - t * si)
                .collect();
            let fy = f.call(&y);
            if fy <= fx {
                let size = step.iter().fold(0.0f64, |m, s| m.max((t * s).abs()));
                x = y;
                fx = fy;
                moved = true;
                converged = size < opts.xtol;
                break;
            }
            t *= 0.5;
        }
        if !moved || converged {
            converged |= !moved;
            break;
        }
    }
    Minimum {
        x,
        fx,
        evals: f.evals,
        iterations,
        converged,
    }
}
