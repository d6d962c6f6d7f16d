//! p-Dirichlet energies and their parametric variants as quadrature sums.
//!
//! Points are `z = (params, x)`. The network output is multiplied by the
//! architecture's lift before the spatial gradient is taken. Two evaluation
//! paths exist: a general one on the scalar tape, and a fused batched one
//! used for training that computes the energy and its parameter gradient
//! with a hand-written adjoint. Both sum in a fixed order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sum, Tape, Var};
use crate::expr::{Expr, ExprError};
use crate::network::{
    apply_lift_jet, backward_batch, evaluate_lifted, forward_batch, forward_jet, ArchSpec, NetworkError,
    SampledField,
};
use crate::quadrature::{sample_box, QuadratureSet, SetKind};

/// Points per chunk of the fused path. Fixed so the reduction order, and
/// hence every bit of the result, does not depend on the thread count.
pub const CHUNK: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("non-finite {what} {value} at point {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64>, value: f64 },
    #[error("non-finite gradient entry {index}")]
    NonFiniteGradient { index: usize },
    #[error("exponent {p} at parameters {params:?} outside [{lo}, {hi}] or not above 1")]
    Exponent { params: Vec<f64>, p: f64, lo: f64, hi: f64 },
    #[error("penalty parameter must be non-negative, got {0}")]
    Lambda(f64),
    #[error("penalty problems need a boundary set")]
    BoundaryRequired,
    #[error("only penalty problems take a boundary set")]
    BoundaryForbidden,
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("parameter box axis {0} is empty")]
    ParamBox(usize),
    #[error("variable domain problems take exactly one parameter and one spatial dimension")]
    DomainShape,
}

/// Which energy is minimized. Exponent maps are expressions in the
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    FixedP { p: f64 },
    /// Adds `(lambda/p) int_{boundary} |v|^p`.
    Penalty { p: f64, lambda: f64 },
    VariableRhs { p: f64 },
    VariableExponent { p_of: Expr, p_min: f64, p_max: f64 },
    /// Spatial domain `(-p0, p0)`.
    VariableDomain { p: f64 },
    /// Adds `1/2 int |v|^2`.
    MixedMass { p_of: Expr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub variant: Variant,
    /// Right-hand side `f(params, x)`.
    pub rhs: Expr,
    #[serde(default)]
    pub param_box: Vec<(f64, f64)>,
    pub spatial_dim: usize,
}

impl ProblemSpec {
    pub fn new(variant: Variant, rhs: &str, param_box: Vec<(f64, f64)>, spatial_dim: usize) -> Result<Self, EnergyError> {
        let spec = Self {
            variant,
            rhs: Expr::parse(rhs)?,
            param_box,
            spatial_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn param_dim(&self) -> usize {
        self.param_box.len()
    }

    pub fn input_dim(&self) -> usize {
        self.param_dim() + self.spatial_dim
    }

    /// Input coordinates the spatial gradient is taken along.
    pub fn tracked(&self) -> Vec<usize> {
        (self.param_dim()..self.input_dim()).collect()
    }

    pub fn exponent(&self, params: &[f64]) -> f64 {
        match &self.variant {
            Variant::FixedP { p }
            | Variant::Penalty { p, .. }
            | Variant::VariableRhs { p }
            | Variant::VariableDomain { p } => *p,
            Variant::VariableExponent { p_of, .. } | Variant::MixedMass { p_of } => p_of.eval(params, &[]),
        }
    }

    pub fn mass(&self) -> f64 {
        match self.variant {
            Variant::MixedMass { .. } => 1.0,
            _ => 0.0,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.variant {
            Variant::Penalty { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    /// Spatial interval of a variable domain problem.
    pub fn domain(&self, params: &[f64]) -> Option<(f64, f64)> {
        match self.variant {
            Variant::VariableDomain { .. } => Some((-params[0], params[0])),
            _ => None,
        }
    }

    fn exponent_bounds(&self) -> (f64, f64) {
        match self.variant {
            Variant::VariableExponent { p_min, p_max, .. } => (p_min, p_max),
            _ => (1.0, f64::INFINITY),
        }
    }

    fn check_exponent(&self, params: &[f64]) -> Result<f64, EnergyError> {
        let p = self.exponent(params);
        let (lo, hi) = self.exponent_bounds();
        if !(p > 1.0 && p >= lo && p <= hi && p.is_finite()) {
            return Err(EnergyError::Exponent {
                params: params.to_vec(),
                p,
                lo,
                hi,
            });
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let pd = self.param_dim();
        self.rhs.check_dims(pd, self.spatial_dim)?;
        for (i, &(lo, hi)) in self.param_box.iter().enumerate() {
            if !(lo < hi) {
                return Err(EnergyError::ParamBox(i));
            }
        }
        match &self.variant {
            Variant::VariableExponent { p_of, p_min, p_max } => {
                p_of.check_dims(pd, 0)?;
                if !(1.0 < *p_min && p_min <= p_max && p_max.is_finite()) {
                    return Err(EnergyError::Exponent {
                        params: vec![],
                        p: *p_min,
                        lo: *p_min,
                        hi: *p_max,
                    });
                }
            }
            Variant::MixedMass { p_of } => p_of.check_dims(pd, 0)?,
            Variant::Penalty { lambda, .. } if !(*lambda >= 0.0) => return Err(EnergyError::Lambda(*lambda)),
            Variant::VariableDomain { .. } if pd != 1 || self.spatial_dim != 1 => return Err(EnergyError::DomainShape),
            _ => {}
        }
        if pd == 0 {
            self.check_exponent(&[])?;
        } else {
            // Corners plus a seeded sample of the box.
            for mask in 0..(1usize << pd.min(12)) {
                let corner: Vec<f64> = self
                    .param_box
                    .iter()
                    .enumerate()
                    .map(|(i, &(lo, hi))| if mask >> i & 1 == 1 { hi } else { lo })
                    .collect();
                self.check_exponent(&corner)?;
            }
            for params in sample_box(&self.param_box, 1000, 0x5eed).chunks_exact(pd) {
                self.check_exponent(params)?;
            }
        }
        Ok(())
    }
}

/// Scalar energy density `(1/p)|g|^p - f u + (m/2) u^2` with `|0|^p = 0`.
pub fn density(p: f64, f: f64, mass: f64, u: f64, grad: &[f64]) -> f64 {
    let sq: f64 = grad.iter().map(|g| g * g).sum();
    let dirichlet = if sq > 0.0 { sq.powf(0.5 * p) / p } else { 0.0 };
    dirichlet - f * u + 0.5 * mass * u * u
}

/// The energy density on the tape.
pub fn integrand<'t>(spec: &ProblemSpec, params: &[f64], x: &[f64], u: Var<'t>, gradu: &[Var<'t>]) -> Var<'t> {
    let tape = u.tape();
    let p = spec.exponent(params);
    let f = spec.rhs.eval(params, x);
    let sq = sum(tape, gradu.iter().map(|g| g.square()));
    let mut out = sq.powf(0.5 * p) * (1.0 / p) - u * f;
    let m = spec.mass();
    if m != 0.0 {
        out = out + u.square() * (0.5 * m);
    }
    out
}

/// A problem bound to concrete quadrature sets, with `(p, f)` cached per
/// interior point.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub interior: QuadratureSet,
    pub boundary: Option<QuadratureSet>,
    coef: Vec<[f64; 2]>,
}

impl Problem {
    pub fn new(spec: ProblemSpec, interior: QuadratureSet, boundary: Option<QuadratureSet>) -> Result<Self, EnergyError> {
        spec.validate()?;
        match (spec.lambda().is_some(), &boundary) {
            (true, None) => return Err(EnergyError::BoundaryRequired),
            (false, Some(_)) => return Err(EnergyError::BoundaryForbidden),
            _ => {}
        }
        if let Some(b) = &boundary {
            check_set(&spec, b, "boundary set")?;
        }
        let mut problem = Self {
            spec,
            interior: boundary_placeholder(),
            boundary,
            coef: Vec::new(),
        };
        problem.set_interior(interior)?;
        Ok(problem)
    }

    /// Swaps in a new interior set, e.g. after re-sampling parameters.
    pub fn set_interior(&mut self, interior: QuadratureSet) -> Result<(), EnergyError> {
        check_set(&self.spec, &interior, "interior set")?;
        let pd = self.spec.param_dim();
        let mut coef = Vec::with_capacity(interior.len());
        for z in interior.iter() {
            let (params, x) = z.split_at(pd);
            let p = self.spec.check_exponent(params)?;
            coef.push([p, self.spec.rhs.eval(params, x)]);
        }
        self.interior = interior;
        self.coef = coef;
        Ok(())
    }

    pub fn tracked(&self) -> Vec<usize> {
        self.spec.tracked()
    }
}

fn boundary_placeholder() -> QuadratureSet {
    QuadratureSet {
        dim: 1,
        points: Vec::new(),
        weight: 0.0,
        total_measure: 0.0,
        kind: SetKind::Interior,
    }
}

fn check_set(spec: &ProblemSpec, set: &QuadratureSet, what: &'static str) -> Result<(), EnergyError> {
    if set.dim != spec.input_dim() {
        return Err(EnergyError::Dimension {
            what,
            expected: spec.input_dim(),
            got: set.dim,
        });
    }
    Ok(())
}

fn check_arch(problem: &Problem, arch: &ArchSpec) -> Result<(), EnergyError> {
    if arch.input_dim != problem.spec.input_dim() {
        return Err(EnergyError::Dimension {
            what: "network input",
            expected: problem.spec.input_dim(),
            got: arch.input_dim,
        });
    }
    Ok(())
}

/// Penalty boundary term `(lambda/p) w_b sum |u|^p` as `(value, d/du)`.
fn boundary_term(p: f64, lambda: f64, weight: f64, u: f64) -> (f64, f64) {
    let a = u.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let ap1 = a.powf(p - 1.0);
    (lambda / p * weight * ap1 * a, lambda * weight * ap1 * u.signum())
}

/// Energy on the tape, summing interior points left to right.
pub fn energy<'t>(problem: &Problem, arch: &ArchSpec, theta: &[Var<'t>]) -> Result<Var<'t>, EnergyError> {
    check_arch(problem, arch)?;
    let tape: &'t Tape = theta.first().map(|v| v.tape()).expect("networks have parameters");
    let spec = &problem.spec;
    let pd = spec.param_dim();
    let tracked = spec.tracked();
    let mut terms = Vec::with_capacity(problem.interior.len());
    for z in problem.interior.iter() {
        let raw = forward_jet(arch, theta, z, &tracked)?;
        let lifted = apply_lift_jet(&arch.lift, z, &tracked, &raw);
        let (params, x) = z.split_at(pd);
        let term = integrand(spec, params, x, lifted.value, &lifted.partials);
        if !term.value().is_finite() {
            return Err(EnergyError::NonFinite {
                what: "integrand",
                point: z.to_vec(),
                value: term.value(),
            });
        }
        terms.push(term);
    }
    let mut total = sum(tape, terms) * problem.interior.weight;
    if let (Some(lambda), Some(b)) = (spec.lambda(), &problem.boundary) {
        let mut bterms = Vec::with_capacity(b.len());
        for z in b.iter() {
            let raw = forward_jet(arch, theta, z, &[])?;
            let u = apply_lift_jet(&arch.lift, z, &[], &raw).value;
            bterms.push(u.abs().powf(spec.exponent(&z[..pd])));
        }
        let p = spec.exponent(&[]);
        total = total + sum(tape, bterms) * (lambda / p * b.weight);
    }
    Ok(total)
}

struct ChunkResult {
    value: f64,
    grad: Vec<f64>,
}

/// Energy and its parameter gradient through the fused batched path.
pub fn energy_and_gradient(problem: &Problem, arch: &ArchSpec, theta: &[f64]) -> Result<(f64, Vec<f64>), EnergyError> {
    check_arch(problem, arch)?;
    let layout = arch.layout();
    if theta.len() != layout.len {
        return Err(NetworkError::ParamLength {
            expected: layout.len,
            got: theta.len(),
        }
        .into());
    }
    let spec = &problem.spec;
    let tracked = spec.tracked();
    let k = tracked.len();
    let d = spec.input_dim();
    let w = problem.interior.weight;
    let mass = spec.mass();

    let chunks: Vec<Result<ChunkResult, EnergyError>> = problem
        .interior
        .points
        .par_chunks(CHUNK * d)
        .zip(problem.coef.par_chunks(CHUNK))
        .map(|(pts, coef)| {
            let fwd = forward_batch(arch, &layout, theta, pts, &tracked);
            let n = fwd.n;
            let mut u_bar = vec![0.0; n];
            let mut du_bar = vec![0.0; k * n];
            let mut deta = vec![0.0; k];
            let mut g = vec![0.0; k];
            let mut value = 0.0;
            for (s, z) in pts.chunks_exact(d).enumerate() {
                let [p, f] = coef[s];
                let eta = arch.lift.eval_into(z, &tracked, &mut deta);
                let raw = fwd.u[s];
                let lifted = eta * raw;
                let mut sq = 0.0;
                for t in 0..k {
                    g[t] = deta[t] * raw + eta * fwd.du[t * n + s];
                    sq += g[t] * g[t];
                }
                let (dirichlet, scale) = if sq > 0.0 {
                    let s_pm1 = sq.powf(0.5 * p - 1.0);
                    (s_pm1 * sq / p, s_pm1)
                } else {
                    (0.0, 0.0)
                };
                let term = dirichlet - f * lifted + 0.5 * mass * lifted * lifted;
                if !term.is_finite() {
                    return Err(EnergyError::NonFinite {
                        what: "integrand",
                        point: z.to_vec(),
                        value: term,
                    });
                }
                value += term;
                let lifted_bar = w * (mass * lifted - f);
                let mut ub = eta * lifted_bar;
                for t in 0..k {
                    let gb = w * scale * g[t];
                    ub += deta[t] * gb;
                    du_bar[t * n + s] = eta * gb;
                }
                u_bar[s] = ub;
            }
            let mut grad = vec![0.0; theta.len()];
            backward_batch(arch, &layout, theta, &fwd, &u_bar, &du_bar, &mut grad);
            Ok(ChunkResult { value, grad })
        })
        .collect();

    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for c in chunks {
        let c = c?;
        total += c.value;
        for (a, b) in grad.iter_mut().zip(&c.grad) {
            *a += b;
        }
    }
    total *= w;

    if let (Some(lambda), Some(b)) = (spec.lambda(), &problem.boundary) {
        let p = spec.exponent(&[]);
        let fwd = forward_batch(arch, &layout, theta, &b.points, &[]);
        let mut u_bar = vec![0.0; fwd.n];
        let mut bsum = 0.0;
        for (s, z) in b.iter().enumerate() {
            let eta = arch.lift.eval_into(z, &[], &mut []);
            let (v, dv) = boundary_term(p, lambda, b.weight, eta * fwd.u[s]);
            bsum += v;
            u_bar[s] = eta * dv;
        }
        backward_batch(arch, &layout, theta, &fwd, &u_bar, &[], &mut grad);
        total += bsum;
    }

    if !total.is_finite() {
        return Err(EnergyError::NonFinite {
            what: "energy",
            point: vec![],
            value: total,
        });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(EnergyError::NonFiniteGradient { index });
    }
    Ok((total, grad))
}

/// Energy of sampled values on the problem's own sets.
pub fn energy_of_samples(problem: &Problem, interior: &SampledField, boundary: Option<&[f64]>) -> Result<f64, EnergyError> {
    let spec = &problem.spec;
    let mass = spec.mass();
    let mut total = 0.0;
    for (s, z) in problem.interior.iter().enumerate() {
        let [p, f] = problem.coef[s];
        let term = density(p, f, mass, interior.u[s], interior.grad(s));
        if !term.is_finite() {
            return Err(EnergyError::NonFinite {
                what: "integrand",
                point: z.to_vec(),
                value: term,
            });
        }
        total += term;
    }
    total *= problem.interior.weight;
    if let (Some(lambda), Some(b), Some(bu)) = (spec.lambda(), &problem.boundary, boundary) {
        let p = spec.exponent(&[]);
        total += bu.iter().map(|&u| boundary_term(p, lambda, b.weight, u).0).sum::<f64>();
    }
    Ok(total)
}

/// Energy of the lifted network, forward only.
pub fn energy_value(problem: &Problem, arch: &ArchSpec, theta: &[f64]) -> Result<f64, EnergyError> {
    check_arch(problem, arch)?;
    let interior = evaluate_lifted(arch, theta, &problem.interior.points, &problem.tracked())?;
    let boundary = match &problem.boundary {
        Some(b) => Some(evaluate_lifted(arch, theta, &b.points, &[])?.u),
        None => None,
    };
    energy_of_samples(problem, &interior, boundary.as_deref())
}

/// Energy of a closed-form field `z -> (v, grad_x v)`.
pub fn energy_of_field(problem: &Problem, field: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> Result<f64, EnergyError> {
    let k = problem.spec.spatial_dim;
    let mut sampled = SampledField {
        k,
        u: Vec::with_capacity(problem.interior.len()),
        du: Vec::with_capacity(problem.interior.len() * k),
    };
    for z in problem.interior.iter() {
        let (v, g) = field(z);
        sampled.u.push(v);
        sampled.du.extend_from_slice(&g);
    }
    let boundary: Option<Vec<f64>> = problem.boundary.as_ref().map(|b| b.iter().map(|z| field(z).0).collect());
    energy_of_samples(problem, &sampled, boundary.as_deref())
}

/// Per-parameter energy `E_params(u_theta(params, .))` on a spatial-only set.
pub fn energy_slice(
    spec: &ProblemSpec,
    arch: &ArchSpec,
    theta: &[f64],
    params: &[f64],
    spatial: &QuadratureSet,
    spatial_boundary: Option<&QuadratureSet>,
) -> Result<f64, EnergyError> {
    if params.len() != spec.param_dim() {
        return Err(EnergyError::Dimension {
            what: "slice parameters",
            expected: spec.param_dim(),
            got: params.len(),
        });
    }
    let problem = Problem::new(
        spec.clone(),
        spatial.with_parameters(params),
        spatial_boundary.map(|b| b.with_parameters(params)),
    )?;
    energy_value(&problem, arch, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::autodiff::{grad, ridders_gradient_error};
    use crate::network::{conditioned_params, init_params, LiftSpec};
    use crate::quadrature::{boundary_grid_1d, tensor_grid, Axis};

    fn line(n: usize) -> QuadratureSet {
        tensor_grid(&[Axis::new(-1.0, 1.0, n)]).unwrap()
    }

    fn fixed(p: f64, rhs: &str) -> ProblemSpec {
        ProblemSpec::new(Variant::FixedP { p }, rhs, vec![], 1).unwrap()
    }

    #[test]
    fn integrand_examples() {
        let spec2 = fixed(2.0, "1");
        let tape = Tape::new();
        let v = integrand(&spec2, &[], &[0.0], tape.var(1.0), &[tape.var(0.0)]);
        assert_eq!(v.value(), -1.0);
        let spec4 = ProblemSpec::new(Variant::FixedP { p: 4.0 }, "0", vec![], 2).unwrap();
        let v = integrand(&spec4, &[], &[0.0, 0.0], tape.var(0.0), &[tape.var(2.0), tape.var(0.0)]);
        assert_eq!(v.value(), 4.0);
        let spec15 = fixed(1.5, "0");
        let u = tape.var(5.0);
        let g = tape.var(0.0);
        let v = integrand(&spec15, &[], &[0.0], u, &[g]);
        assert_eq!(v.value(), 0.0);
        let adj = tape.gradient(v, &[u, g]);
        assert!(adj.iter().all(|a| a.is_finite()));
        assert_eq!(density(1.5, 0.0, 0.0, 5.0, &[0.0]), 0.0);
    }

    #[test]
    fn exact_energy_of_quadratic() {
        let problem = Problem::new(fixed(2.0, "1"), line(1000), None).unwrap();
        let e = energy_of_field(&problem, |z| (0.5 * (1.0 - z[0] * z[0]), vec![-z[0]])).unwrap();
        assert!((e + 1.0 / 3.0).abs() < 1e-4, "{e}");
    }

    #[test]
    fn penalty_energy_of_constant() {
        let spec = ProblemSpec::new(Variant::Penalty { p: 2.0, lambda: 3.0 }, "1", vec![], 1).unwrap();
        let problem = Problem::new(spec, line(10), Some(boundary_grid_1d(-1.0, 1.0).unwrap())).unwrap();
        let e = energy_of_field(&problem, |_| (1.0, vec![0.0])).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
        let mut last = f64::NEG_INFINITY;
        for lambda in [0.0, 0.5, 1.0, 10.0, 100.0] {
            let spec = ProblemSpec::new(Variant::Penalty { p: 2.0, lambda }, "1", vec![], 1).unwrap();
            let problem = Problem::new(spec, line(10), Some(boundary_grid_1d(-1.0, 1.0).unwrap())).unwrap();
            let e = energy_of_field(&problem, |z| (0.3 + z[0], vec![1.0])).unwrap();
            assert!(e > last);
            last = e;
        }
    }

    #[test]
    fn boundary_sets_follow_the_variant() {
        let spec = ProblemSpec::new(Variant::Penalty { p: 2.0, lambda: 3.0 }, "1", vec![], 1).unwrap();
        assert_eq!(Problem::new(spec, line(4), None).unwrap_err(), EnergyError::BoundaryRequired);
        let b = boundary_grid_1d(-1.0, 1.0).unwrap();
        assert_eq!(Problem::new(fixed(2.0, "1"), line(4), Some(b)).unwrap_err(), EnergyError::BoundaryForbidden);
    }

    #[test]
    fn variable_exponent_bounds_are_sampled() {
        let ok = Variant::VariableExponent {
            p_of: Expr::parse("p").unwrap(),
            p_min: 1.5,
            p_max: 6.0,
        };
        assert!(ProblemSpec::new(ok, "1", vec![(1.5, 6.0)], 1).is_ok());
        let bad = Variant::VariableExponent {
            p_of: Expr::parse("1 + 2*sin(3*p)").unwrap(),
            p_min: 1.1,
            p_max: 3.0,
        };
        assert!(matches!(
            ProblemSpec::new(bad, "1", vec![(0.0, 2.0)], 1),
            Err(EnergyError::Exponent { .. })
        ));
    }

    #[test]
    fn zero_network_has_zero_energy() {
        let arch = ArchSpec::new(2, vec![3, 3], Activation::GeluApprox).with_lift(LiftSpec::Product1d { a: -1.0, b: 1.0 });
        let spec = ProblemSpec::new(Variant::VariableRhs { p: 2.0 }, "p^2*sin(p*pi*x)", vec![(1.0, 3.0)], 1).unwrap();
        let quad = tensor_grid(&[Axis::new(1.0, 3.0, 4), Axis::new(-1.0, 1.0, 20)]).unwrap();
        let problem = Problem::new(spec.clone(), quad, None).unwrap();
        let zero = vec![0.0; arch.param_count()];
        let (e, g) = energy_and_gradient(&problem, &arch, &zero).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
        for q in [1.0, 2.5, 3.0] {
            assert_eq!(energy_slice(&spec, &arch, &zero, &[q], &line(50), None).unwrap(), 0.0);
        }
    }

    #[test]
    fn fubini_on_tensor_grids() {
        let arch = ArchSpec::new(2, vec![6, 6], Activation::GeluApprox).with_lift(LiftSpec::Product1d { a: -1.0, b: 1.0 });
        let theta = init_params(&arch, 3);
        let spec = ProblemSpec::new(Variant::VariableRhs { p: 2.0 }, "p^2*sin(p*pi*x)", vec![(1.0, 3.0)], 1).unwrap();
        let p_axis = Axis::new(1.0, 3.0, 7);
        let quad = tensor_grid(&[p_axis, Axis::new(-1.0, 1.0, 40)]).unwrap();
        let total = energy_value(&Problem::new(spec.clone(), quad, None).unwrap(), &arch, theta.as_slice()).unwrap();
        let dp = p_axis.step();
        let slices: f64 = p_axis
            .midpoints()
            .iter()
            .map(|&q| dp * energy_slice(&spec, &arch, theta.as_slice(), &[q], &line(40), None).unwrap())
            .sum();
        assert!(((total - slices) / total).abs() <= 1e-10, "{total} {slices}");
    }

    fn all_variants() -> Vec<(ProblemSpec, ArchSpec, QuadratureSet, Option<QuadratureSet>)> {
        let prod = LiftSpec::Product1d { a: -1.0, b: 1.0 };
        vec![
            (fixed(3.0, "1"), ArchSpec::new(1, vec![5, 4], Activation::S2Relu).with_lift(prod), line(30), None),
            (
                ProblemSpec::new(Variant::Penalty { p: 2.5, lambda: 7.0 }, "1", vec![], 1).unwrap(),
                ArchSpec::new(1, vec![5, 4], Activation::GeluApprox),
                line(30),
                Some(boundary_grid_1d(-1.0, 1.0).unwrap()),
            ),
            (
                ProblemSpec::new(Variant::VariableRhs { p: 2.0 }, "p^2*sin(p*pi*x)", vec![(1.0, 3.0)], 1).unwrap(),
                ArchSpec::new(2, vec![4, 4], Activation::GeluApprox).with_fourier(3, 0.5).with_lift(prod),
                tensor_grid(&[Axis::new(1.0, 3.0, 3), Axis::new(-1.0, 1.0, 10)]).unwrap(),
                None,
            ),
            (
                ProblemSpec::new(
                    Variant::VariableExponent {
                        p_of: Expr::parse("p").unwrap(),
                        p_min: 1.5,
                        p_max: 4.0,
                    },
                    "1",
                    vec![(1.5, 4.0)],
                    1,
                )
                .unwrap(),
                ArchSpec::new(2, vec![4, 4], Activation::Relu2).with_lift(prod),
                tensor_grid(&[Axis::new(1.5, 4.0, 3), Axis::new(-1.0, 1.0, 10)]).unwrap(),
                None,
            ),
            (
                ProblemSpec::new(Variant::VariableDomain { p: 2.0 }, "1", vec![(1.0, 2.0)], 1).unwrap(),
                ArchSpec::new(2, vec![4, 4], Activation::GeluApprox).with_lift(LiftSpec::IntervalFamily),
                crate::quadrature::variable_domain_grid(Axis::new(1.0, 2.0, 3), |p| 8.0 * p, |p| (-p, p)).unwrap(),
                None,
            ),
            (
                ProblemSpec::new(
                    Variant::MixedMass {
                        p_of: Expr::parse("p4").unwrap(),
                    },
                    "p0/(2*pi*p1)*exp(-((x-p2)^2+(y-p3)^2)/(2*p1^2))",
                    vec![(4.7, 7.8), (0.2, 0.5), (-0.3, 0.3), (-0.3, 0.3), (1.8, 2.2)],
                    2,
                )
                .unwrap(),
                ArchSpec::new(7, vec![4, 4], Activation::S2Relu),
                crate::quadrature::random_parameter_grid(
                    &[(4.7, 7.8), (0.2, 0.5), (-0.3, 0.3), (-0.3, 0.3), (1.8, 2.2)],
                    2,
                    &crate::quadrature::disk_grid(1.0, 5).unwrap(),
                    1,
                )
                .unwrap(),
                None,
            ),
        ]
    }

    #[test]
    fn fused_path_matches_tape_for_every_variant() {
        for (i, (spec, arch, quad, bnd)) in all_variants().into_iter().enumerate() {
            let problem = Problem::new(spec, quad, bnd).unwrap();
            let theta = conditioned_params(&arch, &problem.interior.points, 10 + i as u64, 1e-3).0;
            let (tv, tg) = grad(|_, th| energy(&problem, &arch, th).unwrap(), &theta).unwrap();
            let (fv, fg) = energy_and_gradient(&problem, &arch, &theta).unwrap();
            let ev = energy_value(&problem, &arch, &theta).unwrap();
            assert!((tv - fv).abs() <= 1e-12 * tv.abs().max(1e-3), "variant {i}: {tv} {fv}");
            assert!((ev - fv).abs() <= 1e-12 * ev.abs().max(1e-3), "variant {i}");
            let scale = tg.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            for (a, b) in tg.iter().zip(&fg) {
                assert!((a - b).abs() <= 1e-10 * scale, "variant {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        for (i, (spec, arch, quad, bnd)) in all_variants().into_iter().enumerate() {
            let problem = Problem::new(spec, quad, bnd).unwrap();
            let theta = conditioned_params(&arch, &problem.interior.points, 20 + i as u64, 1e-2).0;
            let (_, g) = energy_and_gradient(&problem, &arch, &theta).unwrap();
            let err = ridders_gradient_error(
                |t| energy_value(&problem, &arch, t).unwrap(),
                &g,
                &theta,
                1e-5,
                0..theta.len(),
            )
            .unwrap();
            assert!(err <= 1e-5, "variant {i}: {err}");
        }
    }

    #[test]
    fn non_finite_integrand_names_the_point() {
        let spec = fixed(2.0, "1/x");
        let quad = QuadratureSet::from_points(1, vec![0.5, 0.0, -0.5], 2.0, SetKind::Interior).unwrap();
        let problem = Problem::new(spec, quad, None).unwrap();
        let arch = ArchSpec::new(1, vec![2], Activation::GeluApprox).with_lift(LiftSpec::Product1d { a: -1.0, b: 1.0 });
        let mut theta = init_params(&arch, 1).0;
        *theta.last_mut().unwrap() = 1.0;
        match energy_and_gradient(&problem, &arch, &theta) {
            Err(EnergyError::NonFinite { point, .. }) => assert_eq!(point, vec![0.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = ProblemSpec::new(
            Variant::VariableExponent {
                p_of: Expr::parse("p").unwrap(),
                p_min: 1.5,
                p_max: 6.0,
            },
            "1",
            vec![(1.5, 6.0)],
            1,
        )
        .unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ProblemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ProblemSpec>(&json.replace("\"rhs\"", "\"rsh\"")).is_err());
    }
}
