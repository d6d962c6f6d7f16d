//! Equal-weight point sets over parameter x space.
//!
//! Every set carries one scalar weight `total_measure / len`, so a
//! quadrature sum is a measure-scaled mean. Interior generators use cell
//! midpoints and never touch the boundary.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("axis {axis}: need lo < hi and n >= 1, got ({lo}, {hi}, {n})")]
    BadAxis { axis: usize, lo: f64, hi: f64, n: usize },
    #[error("point count must be positive")]
    Empty,
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("spatial factor must be an interior set")]
    NotInterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Interior,
    Boundary,
}

/// One axis of a tensor grid: `n` midpoints of `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / self.n as f64;
        (0..self.n).map(|k| self.lo + (k as f64 + 0.5) * h).collect()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    fn check(&self, axis: usize) -> Result<(), QuadratureError> {
        if self.n == 0 || !(self.lo < self.hi) {
            return Err(QuadratureError::BadAxis {
                axis,
                lo: self.lo,
                hi: self.hi,
                n: self.n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSet {
    pub dim: usize,
    /// Row-major `len x dim` coordinates.
    pub points: Vec<f64>,
    pub weight: f64,
    pub total_measure: f64,
    pub kind: SetKind,
}

impl QuadratureSet {
    pub fn from_points(dim: usize, points: Vec<f64>, total_measure: f64, kind: SetKind) -> Result<Self, QuadratureError> {
        let len = points.len() / dim.max(1);
        if len == 0 {
            return Err(QuadratureError::Empty);
        }
        Ok(Self {
            dim,
            points,
            weight: total_measure / len as f64,
            total_measure,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// `weight * sum f(z_i)`, summed left to right.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.weight * self.iter().map(f).fold(0.0, |a, v| a + v)
    }

    /// Prepends fixed parameter coordinates to every point.
    pub fn with_parameters(&self, params: &[f64]) -> QuadratureSet {
        let dim = params.len() + self.dim;
        let mut points = Vec::with_capacity(self.len() * dim);
        for x in self.iter() {
            points.extend_from_slice(params);
            points.extend_from_slice(x);
        }
        QuadratureSet {
            dim,
            points,
            weight: self.weight,
            total_measure: self.total_measure,
            kind: self.kind,
        }
    }
}

/// Cartesian product of midpoint rules, first axis slowest.
pub fn tensor_grid(axes: &[Axis]) -> Result<QuadratureSet, QuadratureError> {
    if axes.is_empty() {
        return Err(QuadratureError::Empty);
    }
    for (i, a) in axes.iter().enumerate() {
        a.check(i)?;
    }
    let dim = axes.len();
    let coords: Vec<Vec<f64>> = axes.iter().map(Axis::midpoints).collect();
    let len: usize = axes.iter().map(|a| a.n).product();
    let mut points = Vec::with_capacity(len * dim);
    let mut idx = vec![0usize; dim];
    for _ in 0..len {
        for (d, &i) in idx.iter().enumerate() {
            points.push(coords[d][i]);
        }
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].n {
                break;
            }
            idx[d] = 0;
        }
    }
    let measure = axes.iter().map(|a| a.hi - a.lo).product();
    QuadratureSet::from_points(dim, points, measure, SetKind::Interior)
}

/// Midpoint grid over the non-cylindrical set `{(p, x) : x in domain(p)}`:
/// each parameter midpoint `p_i` gets `round(n_x(p_i))` spatial midpoints.
pub fn variable_domain_grid(
    p_axis: Axis,
    n_x_of_p: impl Fn(f64) -> f64,
    domain: impl Fn(f64) -> (f64, f64),
) -> Result<QuadratureSet, QuadratureError> {
    p_axis.check(0)?;
    let dp = p_axis.step();
    let mut points = Vec::new();
    let mut measure = 0.0;
    for p in p_axis.midpoints() {
        let (lo, hi) = domain(p);
        let n = n_x_of_p(p).round().max(1.0) as usize;
        let ax = Axis::new(lo, hi, n);
        ax.check(1)?;
        for x in ax.midpoints() {
            points.push(p);
            points.push(x);
        }
        measure += dp * (hi - lo);
    }
    QuadratureSet::from_points(2, points, measure, SetKind::Interior)
}

/// `n_p` uniform parameter draws crossed with a fixed spatial set.
pub fn random_parameter_grid(
    p_box: &[(f64, f64)],
    n_p: usize,
    spatial: &QuadratureSet,
    seed: u64,
) -> Result<QuadratureSet, QuadratureError> {
    if spatial.kind != SetKind::Interior {
        return Err(QuadratureError::NotInterior);
    }
    if n_p == 0 {
        return Err(QuadratureError::Empty);
    }
    for (i, &(lo, hi)) in p_box.iter().enumerate() {
        Axis::new(lo, hi, 1).check(i)?;
    }
    let params = sample_box(p_box, n_p, seed);
    let pd = p_box.len();
    let dim = pd + spatial.dim;
    let mut points = Vec::with_capacity(n_p * spatial.len() * dim);
    for p in params.chunks_exact(pd.max(1)).take(n_p) {
        for x in spatial.iter() {
            points.extend_from_slice(&p[..pd]);
            points.extend_from_slice(x);
        }
    }
    let box_measure: f64 = p_box.iter().map(|(lo, hi)| hi - lo).product();
    QuadratureSet::from_points(dim, points, box_measure * spatial.total_measure, SetKind::Interior)
}

/// `n` uniform points of a box, row-major.
pub fn sample_box(p_box: &[(f64, f64)], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * p_box.len());
    for _ in 0..n {
        for &(lo, hi) in p_box {
            out.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    out
}

/// Midpoint grid of `[-r, r]^2` restricted to the open disk; the weight is
/// `pi r^2 / kept`.
pub fn disk_grid(radius: f64, n_per_axis: usize) -> Result<QuadratureSet, QuadratureError> {
    if !(radius > 0.0) {
        return Err(QuadratureError::BadRadius(radius));
    }
    let square = tensor_grid(&[Axis::new(-radius, radius, n_per_axis), Axis::new(-radius, radius, n_per_axis)])?;
    let r2 = radius * radius;
    let points: Vec<f64> = square
        .iter()
        .filter(|p| p[0] * p[0] + p[1] * p[1] < r2)
        .flatten()
        .copied()
        .collect();
    QuadratureSet::from_points(2, points, PI * r2, SetKind::Interior)
}

/// Endpoints of `(a, b)` with counting measure.
pub fn boundary_grid_1d(a: f64, b: f64) -> Result<QuadratureSet, QuadratureError> {
    Axis::new(a, b, 1).check(0)?;
    QuadratureSet::from_points(1, vec![a, b], 2.0, SetKind::Boundary)
}
