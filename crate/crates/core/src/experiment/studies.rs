//! Verification studies: energy sandwich, pointwise lemmas, penalty rates
//! and the finite-difference oracle.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{config_err, numeric_err, write, ExperimentError, Outcome, Seeds};
use crate::energy::density;
use crate::metrics::{eta_sq, equivalence_ratios, natural_distance_sq, relation_check, Extent};
use crate::network::SampledField;
use crate::quadrature::{tensor_grid, Axis};
use crate::reference::{
    fd_solve_1d, fit_power_law, penalty_rate_study, BoundaryCondition, Family, NewtonOptions,
};

fn check_exponents(ps: &[f64]) -> Result<(), ExperimentError> {
    if ps.is_empty() {
        return Err(config_err("at least one exponent is required"));
    }
    match ps.iter().find(|p| !(p.is_finite() && **p > 1.0)) {
        Some(p) => Err(config_err(format!("exponents must exceed 1, got {p}"))),
        None => Ok(()),
    }
}

fn positive(name: &str, v: usize) -> Result<(), ExperimentError> {
    if v == 0 {
        Err(config_err(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichConfig {
    pub exponents: Vec<f64>,
    /// Midpoints of `(-1, 1)`.
    pub n: usize,
    pub perturbations: usize,
    /// Sine modes per perturbation.
    pub modes: usize,
    /// Perturbation sizes are log-uniform in this range.
    pub delta: (f64, f64),
}

impl SandwichConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        check_exponents(&self.exponents)?;
        positive("sandwich.n", self.n)?;
        positive("sandwich.perturbations", self.perturbations)?;
        positive("sandwich.modes", self.modes)?;
        let (lo, hi) = self.delta;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(config_err("sandwich.delta must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// `w(x) = sum_k c_k sin(k pi (x + 1) / 2)` and `w'`, vanishing at `x = +-1`.
pub fn sandwich_perturbation(coef: &[f64], x: f64) -> (f64, f64) {
    coef.iter().enumerate().fold((0.0, 0.0), |(w, dw), (i, c)| {
        let k = (i + 1) as f64 * PI / 2.0;
        let t = k * (x + 1.0);
        (w + c * t.sin(), dw + c * k * t.cos())
    })
}

pub(super) fn sandwich(cfg: &SandwichConfig, seeds: Seeds, out: &Path) -> Result<Outcome, ExperimentError> {
    let grid = tensor_grid(&[Axis::new(-1.0, 1.0, cfg.n)]).map_err(config_err)?;
    let xs: Vec<f64> = grid.iter().map(|z| z[0]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let mut csv = String::from("p,trial,delta,gap,natural_sq,ratio\n");
    let mut summary = BTreeMap::new();
    for &p in &cfg.exponents {
        let star: Vec<(f64, f64)> = xs.iter().map(|&x| Family::Vexp.exact(p, x)).collect();
        let star_field = SampledField {
            k: 1,
            u: star.iter().map(|s| s.0).collect(),
            du: star.iter().map(|s| s.1).collect(),
        };
        let mut ext = Extent::empty();
        for trial in 0..cfg.perturbations {
            let coef: Vec<f64> = (1..=cfg.modes)
                .map(|k| rng.sample::<f64, _>(StandardNormal) / k as f64)
                .collect();
            let (lo, hi) = cfg.delta;
            let delta = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
            let mut v = SampledField {
                k: 1,
                u: Vec::with_capacity(xs.len()),
                du: Vec::with_capacity(xs.len()),
            };
            let mut gap = 0.0;
            for (&x, &(u, du)) in xs.iter().zip(&star) {
                let (w, dw) = sandwich_perturbation(&coef, x);
                let (vu, vd) = (u + delta * w, du + delta * dw);
                gap += density(p, 1.0, 0.0, vu, &[vd]) - density(p, 1.0, 0.0, u, &[du]);
                v.u.push(vu);
                v.du.push(vd);
            }
            gap *= grid.weight;
            let rho = natural_distance_sq(&p, &grid, &v, &star_field);
            let ratio = gap / rho;
            if !ratio.is_finite() {
                return Err(numeric_err(format!("sandwich ratio not finite at p={p}, trial {trial}")));
            }
            ext.push(ratio);
            writeln!(csv, "{p},{trial},{delta},{gap},{rho},{ratio}").expect("write to string");
        }
        let c = ext.max.max(1.0 / ext.min);
        summary.insert(p.to_string(), json!({ "min": ext.min, "max": ext.max, "c": c }));
    }
    Ok(Outcome {
        summary: json!({ "ratios": summary }),
        artifacts: vec![write(out, "sandwich.csv", &csv)?],
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmasConfig {
    pub exponents: Vec<f64>,
    pub dims: Vec<usize>,
    pub samples: usize,
    /// Gauss-Legendre order for the `eta` integral.
    pub n_tau: usize,
    /// Random field pairs for the relation chain.
    pub relation_trials: usize,
    /// Midpoints of `(-1, 1)` per relation trial.
    pub relation_points: usize,
}

impl LemmasConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        check_exponents(&self.exponents)?;
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(config_err("lemmas.dims must be non-empty and positive"));
        }
        positive("lemmas.samples", self.samples)?;
        positive("lemmas.n_tau", self.n_tau)?;
        positive("lemmas.relation_trials", self.relation_trials)?;
        positive("lemmas.relation_points", self.relation_points)
    }
}

/// Magnitude `10^U(-2, 2)` times a uniform direction.
fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
    dir.into_iter().map(|x| mag * x / norm).collect()
}

/// Gradient field of `sum_k c_k sin(k pi (x + 1) / 2)` with `10^U(-1, 1)` scale.
fn random_gradient_field(rng: &mut ChaCha8Rng, xs: &[f64]) -> SampledField {
    let scale = 10f64.powf(2.0 * rng.random::<f64>() - 1.0);
    let coef: Vec<f64> = (1..=6)
        .map(|k| scale * rng.sample::<f64, _>(StandardNormal) / k as f64)
        .collect();
    let (u, du) = xs.iter().map(|&x| sandwich_perturbation(&coef, x)).unzip();
    SampledField { k: 1, u, du }
}

pub(super) fn lemmas(cfg: &LemmasConfig, seeds: Seeds, out: &Path) -> Result<Outcome, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let mut csv = String::from("p,d,ratio,min,max\n");
    let mut pointwise = Vec::new();
    for &p in &cfg.exponents {
        for &d in &cfg.dims {
            let r = equivalence_ratios(
                p,
                || (random_vector(&mut rng, d), random_vector(&mut rng, d)),
                cfg.samples,
                cfg.n_tau,
            )
            .map_err(numeric_err)?;
            for (name, e) in [("monotone", r.monotone), ("shifted", r.shifted), ("eta", r.eta)] {
                writeln!(csv, "{p},{d},{name},{},{}", e.min, e.max).expect("write to string");
                pointwise.push(json!({ "p": p, "d": d, "ratio": name, "min": e.min, "max": e.max }));
            }
        }
    }
    let spot = eta_sq(4.0, &[1.0, 0.0], &[0.0, 0.0], cfg.n_tau).map_err(numeric_err)?;

    let grid = tensor_grid(&[Axis::new(-1.0, 1.0, cfg.relation_points)]).map_err(config_err)?;
    let xs: Vec<f64> = grid.iter().map(|z| z[0]).collect();
    let mut rel = String::from("p,trial,lhs,mid,rhs,constant\n");
    let mut constants = BTreeMap::new();
    for &p in &cfg.exponents {
        let mut worst = Extent::empty();
        for trial in 0..cfg.relation_trials {
            let v = random_gradient_field(&mut rng, &xs);
            let w = random_gradient_field(&mut rng, &xs);
            let c = relation_check(p, &grid, &v, &w);
            worst.push(c.constant);
            writeln!(rel, "{p},{trial},{},{},{},{}", c.lhs, c.mid, c.rhs, c.constant).expect("write to string");
        }
        constants.insert(p.to_string(), json!({ "min": worst.min, "max": worst.max }));
    }
    Ok(Outcome {
        summary: json!({
            "pointwise": pointwise,
            "eta_sq_p4_e1_0": spot,
            "relation_constants": constants,
        }),
        artifacts: vec![write(out, "lemmas.csv", &csv)?, write(out, "relation.csv", &rel)?],
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyRateConfig {
    pub exponents: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Cells of `(-1, 1)`.
    pub n: usize,
}

impl PenaltyRateConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        check_exponents(&self.exponents)?;
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 1.0)) {
            return Err(config_err("penalty_rate.lambdas must be non-empty and at least 1"));
        }
        if self.n < 3 {
            return Err(config_err("penalty_rate.n must be at least 3"));
        }
        Ok(())
    }
}

/// Boundary norm of the penalized solution of `-div(|u'|^{p-2} u') = 1` on
/// `(-1, 1)`, whose end values are `lambda^{-1/(p-1)}`.
pub fn penalty_boundary_norm(p: f64, lambda: f64) -> f64 {
    2.0 * lambda.powf(-p / (p - 1.0))
}

pub(super) fn penalty_rate(cfg: &PenaltyRateConfig, out: &Path) -> Result<Outcome, ExperimentError> {
    let mut csv = String::from("p,lambda,boundary_norm,hand_value,natural_sq,energy_gap\n");
    let mut summary = BTreeMap::new();
    for &p in &cfg.exponents {
        let rows = penalty_rate_study(p, |_| 1.0, (-1.0, 1.0), &cfg.lambdas, cfg.n).map_err(numeric_err)?;
        for r in &rows {
            writeln!(
                csv,
                "{p},{},{},{},{},{}",
                r.lambda,
                r.boundary_norm,
                penalty_boundary_norm(p, r.lambda),
                r.natural_sq,
                r.energy_gap
            )
            .expect("write to string");
        }
        let norms: Vec<f64> = rows.iter().map(|r| r.boundary_norm).collect();
        let (_, slope) = fit_power_law(&cfg.lambdas, &norms);
        let monotone = norms.windows(2).all(|w| w[1] < w[0]);
        summary.insert(p.to_string(), json!({ "slope": slope, "monotone": monotone }));
    }
    Ok(Outcome {
        summary: json!({ "boundary_norm": summary }),
        artifacts: vec![write(out, "penalty_rate.csv", &csv)?],
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdOracleConfig {
    pub exponents: Vec<f64>,
    /// Cell counts, increasing.
    pub cells: Vec<usize>,
}

impl FdOracleConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        check_exponents(&self.exponents)?;
        if self.cells.len() < 2 || self.cells.iter().any(|&n| n < 3) || !self.cells.windows(2).all(|w| w[0] < w[1]) {
            return Err(config_err("fd_oracle.cells needs at least two increasing counts of 3 or more"));
        }
        Ok(())
    }
}

pub(super) fn fd_oracle(cfg: &FdOracleConfig, out: &Path) -> Result<Outcome, ExperimentError> {
    let mut csv = String::from("p,n,h,nodal_max_err,midpoint_max_err\n");
    let mut summary = BTreeMap::new();
    for &p in &cfg.exponents {
        let (mut hs, mut nodal, mut mid) = (Vec::new(), Vec::new(), Vec::new());
        for &n in &cfg.cells {
            let sol = fd_solve_1d(p, |_| 1.0, (-1.0, 1.0), n, BoundaryCondition::Dirichlet0, NewtonOptions::default())
                .map_err(numeric_err)?;
            let exact = |x: f64| Family::Vexp.exact(p, x).0;
            let e_nodal = sol.x.iter().zip(&sol.u).map(|(x, u)| (u - exact(*x)).abs()).fold(0.0, f64::max);
            let e_mid = sol
                .x
                .windows(2)
                .map(|w| {
                    let m = 0.5 * (w[0] + w[1]);
                    (sol.interpolate(m) - exact(m)).abs()
                })
                .fold(0.0, f64::max);
            writeln!(csv, "{p},{n},{},{e_nodal},{e_mid}", sol.h).expect("write to string");
            hs.push(sol.h);
            nodal.push(e_nodal);
            mid.push(e_mid);
        }
        let order = |e: &[f64]| fit_power_law(&hs, e).1;
        summary.insert(
            p.to_string(),
            json!({
                "nodal_order": order(&nodal),
                "midpoint_order": order(&mid),
                "finest_nodal_max_err": nodal.last(),
            }),
        );
    }
    Ok(Outcome {
        summary: json!({ "convergence": summary }),
        artifacts: vec![write(out, "fd_oracle.csv", &csv)?],
        ..Outcome::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_vanishes_at_the_ends() {
        let c = [0.3, -1.2, 0.7];
        for x in [-1.0, 1.0] {
            assert!(sandwich_perturbation(&c, x).0.abs() < 1e-14);
        }
        let h = 1e-6;
        let fd = (sandwich_perturbation(&c, 0.2 + h).0 - sandwich_perturbation(&c, 0.2 - h).0) / (2.0 * h);
        assert!((fd - sandwich_perturbation(&c, 0.2).1).abs() < 1e-8);
    }

    #[test]
    fn hand_penalty_value_at_p2() {
        assert!((penalty_boundary_norm(2.0, 10.0) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_sections() {
        let bad = FdOracleConfig {
            exponents: vec![2.0],
            cells: vec![100, 50],
        };
        assert!(bad.validate().is_err());
        let bad = PenaltyRateConfig {
            exponents: vec![2.0],
            lambdas: vec![0.5],
            n: 100,
        };
        assert!(bad.validate().is_err());
    }
}
