//! The F map, natural distances, discrete norm errors and empirical checks
//! of the inequalities that tie them together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{EnergyError, ProblemSpec};
use crate::network::{evaluate_lifted, ArchSpec, NetworkError, SampledField};
use crate::quadrature::QuadratureSet;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("eta is undefined for a = b = 0")]
    Domain,
    #[error("{what}: expected {expected} values, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("reference is not finite at {point:?}")]
    NonFiniteReference { point: Vec<f64> },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Exponent as seen from a quadrature point `z`.
pub trait ExponentField {
    fn at(&self, z: &[f64]) -> f64;
}

impl ExponentField for f64 {
    fn at(&self, _: &[f64]) -> f64 {
        *self
    }
}

impl ExponentField for ProblemSpec {
    fn at(&self, z: &[f64]) -> f64 {
        self.exponent(&z[..self.param_dim()])
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale_factor(p: f64, n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n.powf(0.5 * (p - 2.0))
    }
}

/// `F(a) = |a|^{(p-2)/2} a`, zero at the origin.
pub fn f_map(p: f64, a: &[f64]) -> Vec<f64> {
    let s = scale_factor(p, norm(a));
    a.iter().map(|x| s * x).collect()
}

/// `|F(a) - F(b)|^2` without allocating.
pub fn f_dist_sq(p: f64, a: &[f64], b: &[f64]) -> f64 {
    let sa = scale_factor(p, norm(a));
    let sb = scale_factor(p, norm(b));
    a.iter().zip(b).map(|(x, y)| (sa * x - sb * y).powi(2)).sum()
}

/// `rho_F^2 = w sum |F(grad v) - F(grad w)|^2` over the set's points.
pub fn natural_distance_sq(p: &impl ExponentField, quad: &QuadratureSet, v: &SampledField, w: &SampledField) -> f64 {
    quad.iter()
        .enumerate()
        .map(|(i, z)| f_dist_sq(p.at(z), v.grad(i), w.grad(i)))
        .sum::<f64>()
        * quad.weight
}

/// Natural distance plus `lambda w_b sum |F(v) - F(w)|^2` over boundary values.
pub fn penalized_distance_sq(
    p: f64,
    lambda: f64,
    interior: &QuadratureSet,
    boundary: &QuadratureSet,
    v: (&SampledField, &[f64]),
    w: (&SampledField, &[f64]),
) -> f64 {
    let bulk = natural_distance_sq(&p, interior, v.0, w.0);
    let edge: f64 = v.1.iter().zip(w.1).map(|(a, b)| f_dist_sq(p, &[*a], &[*b])).sum();
    bulk + lambda * boundary.weight * edge
}

/// Errors of one parameter slice. Relative entries are `None` when the
/// reference norm vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceError {
    pub params: Vec<f64>,
    pub lp_abs: f64,
    pub lp_rel: Option<f64>,
    pub w1p_abs: f64,
    pub w1p_rel: Option<f64>,
    pub natural_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub slices: usize,
    pub lp_abs: f64,
    pub lp_rel: Option<f64>,
    pub w1p_abs: f64,
    pub w1p_rel: Option<f64>,
    pub natural_sq: f64,
    /// Slices whose relative entries were undefined.
    pub undefined_relative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub param_dim: usize,
    pub records: Vec<SliceError>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ErrorReport {
    pub fn aggregates(&self) -> Aggregates {
        let r = &self.records;
        let undefined = r.iter().filter(|s| s.lp_rel.is_none() || s.w1p_rel.is_none()).count();
        let rel = |pick: fn(&SliceError) -> Option<f64>| {
            if r.iter().all(|s| pick(s).is_some()) && !r.is_empty() {
                Some(mean(r.iter().filter_map(pick)))
            } else {
                None
            }
        };
        Aggregates {
            slices: r.len(),
            lp_abs: mean(r.iter().map(|s| s.lp_abs)),
            lp_rel: rel(|s| s.lp_rel),
            w1p_abs: mean(r.iter().map(|s| s.w1p_abs)),
            w1p_rel: rel(|s| s.w1p_rel),
            natural_sq: mean(r.iter().map(|s| s.natural_sq)),
            undefined_relative: undefined,
        }
    }

    pub fn csv_header(param_dim: usize) -> String {
        let mut cols: Vec<String> = (0..param_dim).map(|i| format!("p{i}")).collect();
        cols.extend(["lp_abs", "lp_rel", "w1p_abs", "w1p_rel", "natural_sq"].map(String::from));
        cols.join(",")
    }

    /// One row per slice; undefined relative entries are written as `undefined`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:e}"));
        let mut out = Self::csv_header(self.param_dim);
        out.push('\n');
        for s in &self.records {
            let mut cols: Vec<String> = s.params.iter().map(|x| format!("{x:e}")).collect();
            cols.push(format!("{:e}", s.lp_abs));
            cols.push(opt(s.lp_rel));
            cols.push(format!("{:e}", s.w1p_abs));
            cols.push(opt(s.w1p_rel));
            cols.push(format!("{:e}", s.natural_sq));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

/// Closed-form or otherwise evaluable reference `(params, x) -> (u, grad_x u)`.
pub type Reference<'a> = dyn Fn(&[f64], &[f64]) -> (f64, Vec<f64>) + Sync + 'a;

/// Discrete errors of `u_theta(params, .)` against `reference` on each slice.
/// `spatial` gives the spatial set for a parameter value.
pub fn norm_errors(
    spec: &ProblemSpec,
    arch: &ArchSpec,
    theta: &[f64],
    reference: &Reference<'_>,
    slices: &[Vec<f64>],
    spatial: &dyn Fn(&[f64]) -> QuadratureSet,
) -> Result<ErrorReport, MetricsError> {
    let pd = spec.param_dim();
    let mut records = Vec::with_capacity(slices.len());
    for params in slices {
        if params.len() != pd {
            return Err(MetricsError::Dimension {
                what: "slice parameters",
                expected: pd,
                got: params.len(),
            });
        }
        let set = spatial(params).with_parameters(params);
        let field = evaluate_lifted(arch, theta, &set.points, &spec.tracked())?;
        records.push(slice_error(spec.exponent(params), params, &set, &field, reference)?);
    }
    Ok(ErrorReport { param_dim: pd, records })
}

/// Samples `reference` on the spatial part of `set`'s points.
pub fn sample_reference(reference: &Reference<'_>, params: &[f64], set: &QuadratureSet) -> Result<SampledField, MetricsError> {
    let pd = params.len();
    let k = set.dim - pd;
    let mut out = SampledField {
        k,
        u: Vec::with_capacity(set.len()),
        du: Vec::with_capacity(set.len() * k),
    };
    for z in set.iter() {
        let (u, du) = reference(params, &z[pd..]);
        if !u.is_finite() || du.len() != k || du.iter().any(|g| !g.is_finite()) {
            return Err(MetricsError::NonFiniteReference { point: z.to_vec() });
        }
        out.u.push(u);
        out.du.extend_from_slice(&du);
    }
    Ok(out)
}

fn slice_error(
    p: f64,
    params: &[f64],
    set: &QuadratureSet,
    field: &SampledField,
    reference: &Reference<'_>,
) -> Result<SliceError, MetricsError> {
    Ok(compare_fields(p, params, set.weight, field, &sample_reference(reference, params, set)?))
}

/// Errors of `field` against `reference`, both sampled on the same points
/// with common weight `weight`.
pub fn compare_fields(p: f64, params: &[f64], weight: f64, field: &SampledField, reference: &SampledField) -> SliceError {
    let (mut e0, mut e1, mut r0, mut r1, mut nat) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut diff = vec![0.0; field.k];
    for i in 0..field.len() {
        let (u, du) = (reference.u[i], reference.grad(i));
        let g = field.grad(i);
        for ((d, a), b) in diff.iter_mut().zip(g).zip(du) {
            *d = a - b;
        }
        e0 += (field.u[i] - u).abs().powf(p);
        e1 += norm(&diff).powf(p);
        r0 += u.abs().powf(p);
        r1 += norm(du).powf(p);
        nat += f_dist_sq(p, g, du);
    }
    let root = |s: f64| (weight * s).powf(1.0 / p);
    let rel = |e: f64, r: f64| if r > 0.0 { Some(root(e) / root(r)) } else { None };
    SliceError {
        params: params.to_vec(),
        lp_abs: root(e0),
        lp_rel: rel(e0, r0),
        w1p_abs: root(e1),
        w1p_rel: rel(e1, r1),
        natural_sq: weight * nat,
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// `D^2 phi(c) : d (x) d` with `phi(a) = |a|^p / p`, or `None` where it is
/// undefined (`c = 0`, `p < 2`).
fn hessian_form(p: f64, c: &[f64], d: &[f64]) -> Option<f64> {
    let nc = norm(c);
    let dd: f64 = d.iter().map(|x| x * x).sum();
    if nc == 0.0 {
        return match p {
            p if p > 2.0 => Some(0.0),
            p if p == 2.0 => Some(dd),
            _ => None,
        };
    }
    let cd: f64 = c.iter().zip(d).map(|(a, b)| a * b).sum::<f64>() / nc;
    Some(nc.powf(p - 2.0) * (dd + (p - 2.0) * cd * cd))
}

/// `eta^2(a, b) = int_0^1 D^2 phi(t a + (1-t) b) : (a-b) (x) (a-b) (1-t) dt`
/// with a precomputed rule on `[0, 1]`.
///
/// The rule is applied on each side of the point `t*` where the segment
/// comes closest to the origin. For `p < 2` the integrand has a
/// `|c|^{p-2}` peak there, so each side is graded with `t = t* +- L s^m`,
/// `m = 2/(p-1)`, which turns an exact crossing into a smooth integrand.
pub fn eta_sq_with(rule: &(Vec<f64>, Vec<f64>), p: f64, a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Dimension {
            what: "eta arguments",
            expected: a.len(),
            got: b.len(),
        });
    }
    if norm(a) + norm(b) == 0.0 {
        return Err(MetricsError::Domain);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dd: f64 = d.iter().map(|x| x * x).sum();
    if dd == 0.0 {
        return Ok(0.0);
    }
    // c(t) = b + t d is closest to the origin at t*.
    let t_star = (-b.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>() / dd).clamp(0.0, 1.0);
    let m = if p < 2.0 { 2.0 / (p - 1.0) } else { 1.0 };
    let c_star: Vec<f64> = b.iter().zip(&d).map(|(y, di)| y + t_star * di).collect();
    let mut c = vec![0.0; a.len()];
    let mut total = 0.0;
    for (len, dir) in [(t_star, -1.0), (1.0 - t_star, 1.0)] {
        if len <= 0.0 {
            continue;
        }
        for (&s, &w) in rule.0.iter().zip(&rule.1) {
            // Offsets from c(t*) directly, so tiny |c| is not lost to cancellation.
            let off = dir * len * s.powf(m);
            let t = t_star + off;
            let jac = len * m * s.powf(m - 1.0);
            for ((ci, cs), di) in c.iter_mut().zip(&c_star).zip(&d) {
                *ci = cs + off * di;
            }
            if let Some(h) = hessian_form(p, &c, &d) {
                total += w * jac * h * (1.0 - t);
            }
        }
    }
    Ok(total)
}

/// `eta^2` with an `n_tau`-point Gauss-Legendre rule.
pub fn eta_sq(p: f64, a: &[f64], b: &[f64], n_tau: usize) -> Result<f64, MetricsError> {
    eta_sq_with(&gauss_legendre(n_tau), p, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: f64,
    pub max: f64,
}

impl Extent {
    pub fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

/// Extremes of each expression divided by `|F(a) - F(b)|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRatios {
    /// `(|a|^{p-2} a - |b|^{p-2} b) . (a - b)`
    pub monotone: Extent,
    /// `(|a| + |b|)^{p-2} |a - b|^2`
    pub shifted: Extent,
    /// `eta^2(a, b)`
    pub eta: Extent,
}

/// The three pointwise ratios for a single pair.
pub fn pair_ratios(rule: &(Vec<f64>, Vec<f64>), p: f64, a: &[f64], b: &[f64]) -> Result<[f64; 3], MetricsError> {
    let fd = f_dist_sq(p, a, b);
    let (na, nb) = (norm(a), norm(b));
    let (sa, sb) = (scale_factor(2.0 * p - 2.0, na), scale_factor(2.0 * p - 2.0, nb));
    let mono: f64 = a.iter().zip(b).map(|(x, y)| (sa * x - sb * y) * (x - y)).sum();
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let shifted = (na + nb).powf(p - 2.0) * d2;
    let eta = eta_sq_with(rule, p, a, b)?;
    Ok([mono / fd, shifted / fd, eta / fd])
}

/// Samples `n` pairs and records the ratio extremes. Pairs with `a = b` are skipped.
pub fn equivalence_ratios(
    p: f64,
    mut sampler: impl FnMut() -> (Vec<f64>, Vec<f64>),
    n_samples: usize,
    n_tau: usize,
) -> Result<EquivalenceRatios, MetricsError> {
    let rule = gauss_legendre(n_tau);
    let mut ext = [Extent::empty(); 3];
    for _ in 0..n_samples {
        let (a, b) = sampler();
        if a == b {
            continue;
        }
        let r = pair_ratios(&rule, p, &a, &b)?;
        for (e, v) in ext.iter_mut().zip(r) {
            e.push(v);
        }
    }
    Ok(EquivalenceRatios {
        monotone: ext[0],
        shifted: ext[1],
        eta: ext[2],
    })
}

/// One evaluation of the chain `lhs <~ mid <~ rhs` relating the natural
/// distance to the gradient `L^p` distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub p: f64,
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    /// Smallest `C` with `lhs <= C mid` and `mid <= C rhs`.
    pub constant: f64,
}

impl RelationCheck {
    pub fn holds_with(&self, c: f64) -> bool {
        self.lhs <= c * self.mid && self.mid <= c * self.rhs
    }
}

/// For `p >= 2`: `|grad(v-w)|_p^p`, `rho_F^2`, `(|grad v|_p + |grad w|_p)^{p-2} |grad(v-w)|_p^2`.
/// For `p < 2`: `rho_F^2`, `|grad(v-w)|_p^p`, `(|grad v|_p + |grad w|_p)^{p(2-p)/2} (rho_F^2)^{p/2}`.
pub fn relation_check(p: f64, quad: &QuadratureSet, v: &SampledField, w: &SampledField) -> RelationCheck {
    let (mut sd, mut sv, mut sw) = (0.0, 0.0, 0.0);
    for i in 0..quad.len() {
        let (a, b) = (v.grad(i), w.grad(i));
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        sd += d.powf(p);
        sv += norm(a).powf(p);
        sw += norm(b).powf(p);
    }
    let wt = quad.weight;
    let dist_p = wt * sd;
    let nv = (wt * sv).powf(1.0 / p);
    let nw = (wt * sw).powf(1.0 / p);
    let rho = natural_distance_sq(&p, quad, v, w);
    let (lhs, mid, rhs) = if p >= 2.0 {
        (dist_p, rho, (nv + nw).powf(p - 2.0) * dist_p.powf(2.0 / p))
    } else {
        (rho, dist_p, (nv + nw).powf(0.5 * p * (2.0 - p)) * rho.powf(0.5 * p))
    };
    let ratio = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x / y };
    let constant = ratio(lhs, mid).max(ratio(mid, rhs)).max(1.0);
    RelationCheck {
        p,
        lhs,
        mid,
        rhs,
        constant,
    }
}
