//! Closed-form solutions of the one-dimensional test families and a
//! finite-difference Newton solver for problems without one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::f_dist_sq;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("{0}")]
    BadInput(String),
    #[error("tridiagonal system is singular at row {row}")]
    Singular { row: usize },
    #[error("newton did not converge in {iterations} iterations (last gradient norm {last:e})")]
    NoConvergence { iterations: usize, last: f64, log: Vec<NewtonStep> },
    #[error("line search failed at iteration {iteration}")]
    LineSearch { iteration: usize, log: Vec<NewtonStep> },
}

/// One-dimensional families with known solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `-u'' = k^2 sin(k pi x)` on `(-1, 1)`.
    Vrhs,
    /// `-div(|u'|^{k-2} u') = 1` on `(-1, 1)`.
    Vexp,
    /// `-u'' = 1` on `(-k, k)`.
    Vdom,
}

impl Family {
    /// PDE exponent at parameter `k`.
    pub fn exponent(self, k: f64) -> f64 {
        match self {
            Family::Vexp => k,
            _ => 2.0,
        }
    }

    pub fn rhs(self, k: f64, x: f64) -> f64 {
        match self {
            Family::Vrhs => k * k * (k * PI * x).sin(),
            _ => 1.0,
        }
    }

    pub fn domain(self, k: f64) -> (f64, f64) {
        match self {
            Family::Vdom => (-k, k),
            _ => (-1.0, 1.0),
        }
    }

    /// `(u, u')` at `x`.
    pub fn exact(self, k: f64, x: f64) -> (f64, f64) {
        match self {
            Family::Vrhs => (
                ((k * PI * x).sin() - (k * PI).sin() * x) / (PI * PI),
                (k * PI * (k * PI * x).cos() - (k * PI).sin()) / (PI * PI),
            ),
            Family::Vexp => {
                let q = k / (k - 1.0);
                let ax = x.abs();
                ((1.0 - ax.powf(q)) / q, -x.signum() * ax.powf(q - 1.0))
            }
            Family::Vdom => (0.5 * (k * k - x * x), -x),
        }
    }
}

/// Maximum strong-form residual `-(|u'|^{p-2} u')' - f` of the exact
/// solution, with nested differences of step `1e-4` at `n_points` evenly
/// spaced interior points. Points within `1e-3` of the origin are skipped
/// for `Vexp`, where the flux is smooth but `u` is not.
pub fn residual_check(family: Family, k: f64, n_points: usize) -> f64 {
    let h = 1e-4;
    let p = family.exponent(k);
    let (a, b) = family.domain(k);
    let u = |x: f64| family.exact(k, x).0;
    let flux = |x: f64| {
        let d = (u(x + 0.5 * h) - u(x - 0.5 * h)) / h;
        d.abs().powf(p - 2.0) * d
    };
    let margin = 10.0 * h;
    (0..n_points)
        .map(|i| a + margin + (b - a - 2.0 * margin) * (i as f64 + 0.5) / n_points as f64)
        .filter(|x| family != Family::Vexp || x.abs() > 1e-3)
        .map(|x| (-(flux(x + 0.5 * h) - flux(x - 0.5 * h)) / h - family.rhs(k, x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet0,
    Penalty { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant; steps are halved until it holds.
    pub armijo: f64,
    /// Regularization `|Du|_eps = sqrt(Du^2 + eps^2)`.
    pub eps: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            armijo: 1e-4,
            eps: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    /// Regularization of the stage this step belongs to.
    pub eps: f64,
    pub iteration: usize,
    pub energy: f64,
    pub grad_inf: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSolution {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub h: f64,
    pub p: f64,
    pub log: Vec<NewtonStep>,
}

impl FdSolution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,u\n");
        for (x, u) in self.x.iter().zip(&self.u) {
            out.push_str(&format!("{x:e},{u:e}\n"));
        }
        out
    }

    /// Forward differences, one per cell.
    pub fn slopes(&self) -> Vec<f64> {
        self.u.windows(2).map(|w| (w[1] - w[0]) / self.h).collect()
    }

    /// Piecewise-linear interpolant at `x`.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.u.len() - 1;
        let t = ((x - self.x[0]) / self.h).clamp(0.0, n as f64);
        let i = (t.floor() as usize).min(n - 1);
        let s = t - i as f64;
        (1.0 - s) * self.u[i] + s * self.u[i + 1]
    }
}

/// Discrete energy of nodal values on a uniform grid.
struct Discrete<'a> {
    p: f64,
    h: f64,
    f: &'a [f64],
    lambda: Option<f64>,
    eps: f64,
}

impl Discrete<'_> {
    fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.f.len() {
            0.5 * self.h
        } else {
            self.h
        }
    }

    fn reg(&self, d: f64) -> f64 {
        d * d + self.eps * self.eps
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let p = self.p;
        let mut e = 0.0;
        for (i, w) in u.windows(2).enumerate() {
            let d = (w[1] - w[0]) / self.h;
            e += self.h * self.reg(d).powf(0.5 * p) / p;
            e -= self.weight(i) * self.f[i] * u[i];
        }
        let n = u.len() - 1;
        e -= self.weight(n) * self.f[n] * u[n];
        if let Some(lambda) = self.lambda {
            e += lambda / p * (self.reg(u[0]).powf(0.5 * p) + self.reg(u[n]).powf(0.5 * p));
        }
        e
    }

    /// Gradient and tridiagonal Hessian `(lower, diag, upper)`.
    fn derivatives(&self, u: &[f64]) -> (Vec<f64>, [Vec<f64>; 3]) {
        let p = self.p;
        let n = u.len();
        let mut g = vec![0.0; n];
        let mut lo = vec![0.0; n];
        let mut di = vec![0.0; n];
        let mut up = vec![0.0; n];
        for i in 0..n - 1 {
            let d = (u[i + 1] - u[i]) / self.h;
            let r = self.reg(d);
            let flux = r.powf(0.5 * p - 1.0) * d;
            let curv = r.powf(0.5 * p - 2.0) * ((p - 1.0) * d * d + self.eps * self.eps) / self.h;
            g[i] -= flux;
            g[i + 1] += flux;
            di[i] += curv;
            di[i + 1] += curv;
            up[i] -= curv;
            lo[i + 1] -= curv;
        }
        for (i, gi) in g.iter_mut().enumerate() {
            *gi -= self.weight(i) * self.f[i];
        }
        if let Some(lambda) = self.lambda {
            for i in [0, n - 1] {
                let r = self.reg(u[i]);
                g[i] += lambda * r.powf(0.5 * p - 1.0) * u[i];
                di[i] += lambda * r.powf(0.5 * p - 2.0) * ((p - 1.0) * u[i] * u[i] + self.eps * self.eps);
            }
        }
        (g, [lo, di, up])
    }
}

/// Solves a tridiagonal system with the Thomas algorithm.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>, ReferenceError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let m = diag[i] - if i > 0 { lower[i] * c[i - 1] } else { 0.0 };
        if m == 0.0 || !m.is_finite() {
            return Err(ReferenceError::Singular { row: i });
        }
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / m;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Minimizes the discrete p-Dirichlet energy on `n` uniform cells of
/// `(a, b)` by damped Newton, starting from the `p = 2` solution and
/// tightening the regularization by decades down to `opts.eps`.
pub fn fd_solve_1d(
    p: f64,
    f: impl Fn(f64) -> f64,
    domain: (f64, f64),
    n: usize,
    bc: BoundaryCondition,
    opts: NewtonOptions,
) -> Result<FdSolution, ReferenceError> {
    let (a, b) = domain;
    if n < 3 || p <= 1.0 || !p.is_finite() || b <= a {
        return Err(ReferenceError::BadInput(format!("need n >= 3, p > 1 and a < b; got n={n}, p={p}, ({a}, {b})")));
    }
    let lambda = match bc {
        BoundaryCondition::Penalty { lambda } if lambda > 0.0 => Some(lambda),
        BoundaryCondition::Penalty { lambda } => {
            return Err(ReferenceError::BadInput(format!("penalty needs lambda > 0, got {lambda}")))
        }
        BoundaryCondition::Dirichlet0 => None,
    };
    let h = (b - a) / n as f64;
    let x: Vec<f64> = (0..=n).map(|i| a + h * i as f64).collect();
    let fv: Vec<f64> = x.iter().map(|&x| f(x)).collect();
    // Free unknowns: every node under the penalty, interior nodes otherwise.
    let free = if lambda.is_some() { 0..n + 1 } else { 1..n };

    let newton_dir = |disc: &Discrete, u: &[f64]| -> Result<(Vec<f64>, Vec<f64>), ReferenceError> {
        let (g, [lo, di, up]) = disc.derivatives(u);
        let r = free.clone();
        let rhs: Vec<f64> = g[r.clone()].iter().map(|v| -v).collect();
        let s = solve_tridiagonal(&lo[r.clone()], &di[r.clone()], &up[r.clone()], &rhs)?;
        Ok((g, s))
    };

    let mut u = vec![0.0; n + 1];
    let linear = Discrete {
        p: 2.0,
        h,
        f: &fv,
        lambda,
        // Any eps gives the exact quadratic at p = 2; 1 keeps it well scaled.
        eps: 1.0,
    };
    let (_, s) = newton_dir(&linear, &u)?;
    for (ui, si) in u[free.clone()].iter_mut().zip(&s) {
        *ui = *si;
    }

    // Continuation in eps: each stage starts inside the next one's Newton
    // basin, which plain Newton lacks for p < 2 where the flux is sqrt-like.
    let mut stages = vec![1.0];
    while stages[stages.len() - 1] > opts.eps * 10.0 {
        let e = stages[stages.len() - 1] * 0.1;
        stages.push(e);
    }
    stages.push(opts.eps);
    let mut log = Vec::new();
    for eps in stages {
        let disc = Discrete {
            p,
            h,
            f: &fv,
            lambda,
            eps,
        };
        newton_stage(&disc, &mut u, free.clone(), &opts, &newton_dir, &mut log)?;
    }
    Ok(FdSolution { x, u, h, p, log })
}

type Direction<'a> = dyn Fn(&Discrete, &[f64]) -> Result<(Vec<f64>, Vec<f64>), ReferenceError> + 'a;

fn newton_stage(
    disc: &Discrete,
    u: &mut Vec<f64>,
    free: std::ops::Range<usize>,
    opts: &NewtonOptions,
    newton_dir: &Direction<'_>,
    log: &mut Vec<NewtonStep>,
) -> Result<(), ReferenceError> {
    let mut energy = disc.energy(u);
    for iteration in 0..=opts.max_iter {
        let (g, s) = newton_dir(disc, u)?;
        let grad_inf = g[free.clone()].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_inf <= opts.tol {
            log.push(NewtonStep {
                eps: disc.eps,
                iteration,
                energy,
                grad_inf,
                step: 0.0,
            });
            return Ok(());
        }
        if iteration == opts.max_iter {
            return Err(ReferenceError::NoConvergence {
                iterations: iteration,
                last: grad_inf,
                log: std::mem::take(log),
            });
        }
        let slope: f64 = g[free.clone()].iter().zip(&s).map(|(g, s)| g * s).sum();
        let slack = 8.0 * f64::EPSILON * energy.abs();
        let mut alpha = 1.0;
        let mut trial = u.clone();
        loop {
            for ((t, ui), si) in trial[free.clone()].iter_mut().zip(&u[free.clone()]).zip(&s) {
                *t = ui + alpha * si;
            }
            let e = disc.energy(&trial);
            if e.is_finite() && e <= energy + opts.armijo * alpha * slope + slack {
                energy = e;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-20 {
                return Err(ReferenceError::LineSearch {
                    iteration,
                    log: std::mem::take(log),
                });
            }
        }
        log.push(NewtonStep {
            eps: disc.eps,
            iteration,
            energy,
            grad_inf,
            step: alpha,
        });
        std::mem::swap(u, &mut trial);
    }
    unreachable!("loop returns on its last iteration")
}

/// Discrete natural distance `h sum |F(Du) - F(Dv)|^2` between solutions on
/// the same grid.
pub fn fd_natural_distance_sq(u: &FdSolution, v: &FdSolution) -> f64 {
    u.slopes()
        .iter()
        .zip(v.slopes())
        .map(|(a, b)| f_dist_sq(u.p, &[*a], &[b]))
        .sum::<f64>()
        * u.h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRow {
    pub lambda: f64,
    /// `|u(a)|^p + |u(b)|^p`
    pub boundary_norm: f64,
    pub natural_sq: f64,
    /// Discrete energy of the penalized solution minus that of the Dirichlet one.
    pub energy_gap: f64,
}

/// Penalized solutions for each `lambda` against the Dirichlet solution.
pub fn penalty_rate_study(
    p: f64,
    f: impl Fn(f64) -> f64 + Copy,
    domain: (f64, f64),
    lambdas: &[f64],
    n: usize,
) -> Result<Vec<PenaltyRow>, ReferenceError> {
    if let Some(l) = lambdas.iter().find(|&&l| l < 1.0) {
        return Err(ReferenceError::BadInput(format!("penalty rates need lambda >= 1, got {l}")));
    }
    let opts = NewtonOptions::default();
    let dirichlet = fd_solve_1d(p, f, domain, n, BoundaryCondition::Dirichlet0, opts)?;
    let e_star = dirichlet.log.last().map_or(f64::NAN, |s| s.energy);
    lambdas
        .iter()
        .map(|&lambda| {
            let sol = fd_solve_1d(p, f, domain, n, BoundaryCondition::Penalty { lambda }, opts)?;
            let ends = sol.u[0].abs().powf(p) + sol.u[n].abs().powf(p);
            Ok(PenaltyRow {
                lambda,
                boundary_norm: ends,
                natural_sq: fd_natural_distance_sq(&sol, &dirichlet),
                energy_gap: sol.log.last().map_or(f64::NAN, |s| s.energy) - e_star,
            })
        })
        .collect()
}

/// Least-squares fit of `y = C x^r` in log-log coordinates, returning `(C, r)`.
/// Non-positive entries are ignored.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let r = sxy / sxx;
    ((my - r * mx).exp(), r)
}
