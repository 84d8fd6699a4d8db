//! Bounded nonlinear least squares.
//!
//! A projected Levenberg-Marquardt iteration with Marquardt diagonal scaling
//! and a forward-difference Jacobian. Variables sitting on a bound whose
//! gradient pushes outward are frozen for the step; trial points are clipped
//! into the box, so every point handed to the residual function is feasible.
//!
//! The cost is `Σ rᵢ²`. `max_evals` counts residual evaluations made for
//! trial points and excludes the Jacobian columns.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    /// Relative cost decrease on a successful step.
    pub ftol: f64,
    /// Relative step size.
    pub xtol: f64,
    /// Infinity norm of the projected gradient.
    pub gtol: f64,
    pub max_evals: usize,
    /// Relative forward-difference step.
    pub diff_step: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
            max_evals: 1000,
            diff_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Ftol,
    Xtol,
    Gtol,
    ZeroCost,
    MaxEvals,
    /// Damping blew up without finding a decrease.
    Stalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxEvals | Termination::Stalled)
    }
}

#[derive(Debug, Clone)]
pub struct LsqResult {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub evals: usize,
    pub jacobian_evals: usize,
    pub iterations: usize,
    pub termination: Termination,
}

impl LsqResult {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimize `Σ f(x)ᵢ²` over `lower ≤ x ≤ upper`.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LsqOptions,
) -> LsqResult {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bound lengths");
    assert!(lower.iter().zip(upper).all(|(l, u)| l <= u), "lower bound above upper bound");
    assert!(opts.max_evals >= 1, "max_evals must be at least 1");

    let clip = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    clip(&mut x);
    let mut r = f(&x);
    let m = r.len();
    let mut cost = sq_norm(&r);
    let initial_cost = cost;
    let mut evals = 1;
    let mut jacobian_evals = 0;
    let mut iterations = 0;
    let mut mu = 1e-3;

    let finish = |x: Vec<f64>, r: Vec<f64>, cost, evals, jacobian_evals, iterations, termination| LsqResult {
        x,
        residuals: r,
        cost,
        initial_cost,
        evals,
        jacobian_evals,
        iterations,
        termination,
    };
    if cost == 0.0 {
        return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::ZeroCost);
    }
    if n == 0 || m == 0 {
        return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Gtol);
    }

    loop {
        // Jacobian by forward differences, stepping backward at an upper bound
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut xp = x.clone();
        for j in 0..n {
            let mut h = opts.diff_step * x[j].abs().max(1.0);
            if x[j] + h > upper[j] {
                h = -h;
            }
            xp[j] = x[j] + h;
            let h_eff = xp[j] - x[j];
            let rp = f(&xp);
            jacobian_evals += 1;
            for i in 0..m {
                jac[(i, j)] = (rp[i] - r[i]) / h_eff;
            }
            xp[j] = x[j];
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0)))
            .collect();
        let pg = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        if pg <= opts.gtol {
            return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Gtol);
        }
        let jf = jac.select_columns(&free);
        let jtj = jf.transpose() * &jf;
        let g = jf.transpose() * &rv;
        let diag: Vec<f64> = (0..free.len()).map(|i| jtj[(i, i)].max(1e-12)).collect();

        loop {
            iterations += 1;
            let mut a = jtj.clone();
            for (i, d) in diag.iter().enumerate() {
                a[(i, i)] += mu * d;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                if mu > 1e20 {
                    return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Stalled);
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut xt = x.clone();
            for (k, &i) in free.iter().enumerate() {
                xt[i] += delta[k];
            }
            clip(&mut xt);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            let step_norm = sq_norm(&step).sqrt();
            let x_norm = sq_norm(&x).sqrt();
            if step_norm <= opts.xtol * (opts.xtol + x_norm) {
                return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Xtol);
            }
            if evals >= opts.max_evals {
                return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::MaxEvals);
            }
            let rt = f(&xt);
            evals += 1;
            let cost_t = sq_norm(&rt);
            if cost_t.is_finite() && cost_t < cost {
                let sv = DVector::from_column_slice(&step);
                let lin = &rv + &jac * sv;
                let predicted = cost - lin.norm_squared();
                let actual = cost - cost_t;
                let ratio = if predicted > 0.0 { actual / predicted } else { 0.0 };
                if ratio > 0.75 {
                    mu = (mu / 3.0).max(1e-12);
                } else if ratio < 0.25 {
                    mu *= 2.0;
                }
                let old = cost;
                x = xt;
                r = rt;
                cost = cost_t;
                if cost == 0.0 {
                    return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::ZeroCost);
                }
                if actual <= opts.ftol * old && ratio > 0.25 {
                    return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Ftol);
                }
                if step_norm <= opts.xtol * (opts.xtol + x_norm) {
                    return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Xtol);
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e20 {
                return finish(x, r, cost, evals, jacobian_evals, iterations, Termination::Stalled);
            }
        }
    }
}
