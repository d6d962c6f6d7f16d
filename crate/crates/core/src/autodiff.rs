//! Scalar reverse-mode automatic differentiation with forward-mode spatial
//! jets.
//!
//! A [`Tape`] records every primitive together with its local partial
//! derivatives. [`Var`] is a cheap handle into the tape. [`Jet`] bundles a
//! value with its directional derivatives along tracked spatial coordinates;
//! all jet components are themselves tape variables, so anything built from
//! `u` and `grad_x u` stays differentiable with respect to the leaves.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::activation::Activation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite value {value} produced by `{kind}` at tape node {index}")]
    NonFinite {
        kind: &'static str,
        index: usize,
        value: f64,
    },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("tracked coordinate {index} out of range for a point of dimension {dim}")]
    TrackedOutOfRange { index: usize, dim: usize },
}

/// Primitive recorded on the tape. Constants needed for replay are stored
/// inline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst(f64),
    MulConst(f64),
    /// `a^q` for `a >= 0`, with `0^q := 0` and zero slope there.
    PowConst(f64),
    Powi(i32),
    Abs,
    Sin,
    Cos,
    Tanh,
    Exp,
    MaxConst(f64),
    Act(Activation),
    ActPrime(Activation),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::AddConst(_) => "add_const",
            Op::MulConst(_) => "mul_const",
            Op::PowConst(_) => "pow",
            Op::Powi(_) => "powi",
            Op::Abs => "abs",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::MaxConst(_) => "max_const",
            Op::Act(a) => a.name(),
            Op::ActPrime(_) => "activation_prime",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf | Op::Const => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    args: [u32; 2],
    partials: [f64; 2],
    value: f64,
}

/// Append-only record of a computation. Single-threaded by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, args: [u32; 2], partials: [f64; 2], value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            args,
            partials,
            value,
        });
        Var { tape: self, index }
    }

    /// Independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, [0, 0], [0.0, 0.0], value)
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Constant: participates in the computation but never receives adjoint.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, [0, 0], [0.0, 0.0], value)
    }

    pub fn value(&self, index: usize) -> f64 {
        self.nodes.borrow()[index].value
    }

    /// First node whose value is NaN or infinite.
    pub fn first_non_finite(&self) -> Option<AdError> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(index, n)| AdError::NonFinite {
                kind: n.op.name(),
                index,
                value: n.value,
            })
    }

    /// Adjoints of every node with respect to `output`.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; output.index as usize + 1];
        adj[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..node.op.arity() {
                adj[node.args[k] as usize] += a * node.partials[k];
            }
        }
        adj
    }

    /// Gradient of `output` with respect to the given leaves.
    pub fn gradient(&self, output: Var<'_>, leaves: &[Var<'_>]) -> Vec<f64> {
        let adj = self.adjoints(output);
        leaves
            .iter()
            .map(|v| adj.get(v.index as usize).copied().unwrap_or(0.0))
            .collect()
    }

    /// Recomputes every value from leaves and constants, in tape order.
    pub fn replay(&self) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<f64> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let a = out.get(node.args[0] as usize).copied().unwrap_or(0.0);
            let b = out.get(node.args[1] as usize).copied().unwrap_or(0.0);
            let v = match node.op {
                Op::Leaf | Op::Const => node.value,
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Neg => -a,
                Op::AddConst(c) => a + c,
                Op::MulConst(c) => a * c,
                Op::PowConst(q) => pow_nonneg(a, q).0,
                Op::Powi(k) => a.powi(k),
                Op::Abs => a.abs(),
                Op::Sin => a.sin(),
                Op::Cos => a.cos(),
                Op::Tanh => a.tanh(),
                Op::Exp => a.exp(),
                Op::MaxConst(c) => a.max(c),
                Op::Act(g) => g.value(a),
                Op::ActPrime(g) => g.derivative(a),
            };
            out.push(v);
        }
        out
    }

    /// Values currently stored on the tape.
    pub fn stored_values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }
}

/// `(a^q, q a^(q-1))` with the convention `0^q = 0`, slope 0.
#[inline]
fn pow_nonneg(a: f64, q: f64) -> (f64, f64) {
    if a == 0.0 {
        (0.0, 0.0)
    } else {
        let v = a.powf(q);
        (v, q * v / a)
    }
}

#[inline]
fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.value(self.index as usize)
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, partial: f64, value: f64) -> Var<'t> {
        self.tape.push(op, [self.index, 0], [partial, 0.0], value)
    }

    fn binary(self, other: Var<'t>, op: Op, partials: [f64; 2], value: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        self.tape.push(op, [self.index, other.index], partials, value)
    }

    pub fn constant(&self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }

    pub fn sin(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Sin, x.cos(), x.sin())
    }

    pub fn cos(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Cos, -x.sin(), x.cos())
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value().tanh();
        self.unary(Op::Tanh, 1.0 - t * t, t)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value().exp();
        self.unary(Op::Exp, e, e)
    }

    /// `|a|`; the derivative at zero is `sign(0) = 0`.
    pub fn abs(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Abs, sign(x), x.abs())
    }

    /// `a^q` for nonnegative `a`; `0^q` is 0 with zero slope.
    pub fn powf(self, q: f64) -> Var<'t> {
        let (v, d) = pow_nonneg(self.value(), q);
        self.unary(Op::PowConst(q), d, v)
    }

    pub fn powi(self, k: i32) -> Var<'t> {
        let x = self.value();
        let d = if k == 0 { 0.0 } else { k as f64 * x.powi(k - 1) };
        self.unary(Op::Powi(k), d, x.powi(k))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn max_const(self, c: f64) -> Var<'t> {
        let x = self.value();
        let d = if x > c { 1.0 } else { 0.0 };
        self.unary(Op::MaxConst(c), d, x.max(c))
    }

    pub fn activate(self, g: Activation) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Act(g), g.derivative(x), g.value(x))
    }

    /// `g'(a)` as a differentiable value (its own slope is `g''(a)`).
    pub fn activate_prime(self, g: Activation) -> Var<'t> {
        let x = self.value();
        self.unary(Op::ActPrime(g), g.second_derivative(x), g.derivative(x))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() + rhs.value();
        self.binary(rhs, Op::Add, [1.0, 1.0], v)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, [1.0, -1.0], v)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Mul, [b, a], a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Div, [1.0 / b, -a / (b * b)], a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        let v = -self.value();
        self.unary(Op::Neg, -1.0, v)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        let v = self.value() + c;
        self.unary(Op::AddConst(c), 1.0, v)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        let v = self.value() * c;
        self.unary(Op::MulConst(c), c, v)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self * (1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        (-v) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

/// Sequential left-to-right sum.
pub fn sum<'t>(tape: &'t Tape, terms: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    let mut iter = terms.into_iter();
    match iter.next() {
        None => tape.constant(0.0),
        Some(first) => iter.fold(first, |acc, t| acc + t),
    }
}

/// Value together with derivatives along the tracked spatial coordinates.
#[derive(Debug, Clone)]
pub struct Jet<'t> {
    pub value: Var<'t>,
    pub partials: Vec<Var<'t>>,
}

impl<'t> Jet<'t> {
    pub fn constant(tape: &'t Tape, value: f64, k: usize) -> Self {
        let zero = tape.constant(0.0);
        Jet {
            value: tape.constant(value),
            partials: vec![zero; k],
        }
    }

    /// Lifts a variable that does not depend on the tracked coordinates.
    pub fn from_var(value: Var<'t>, k: usize) -> Self {
        let zero = value.constant(0.0);
        Jet {
            value,
            partials: vec![zero; k],
        }
    }

    pub fn dims(&self) -> usize {
        self.partials.len()
    }

    pub fn add(&self, other: &Jet<'t>) -> Jet<'t> {
        Jet {
            value: self.value + other.value,
            partials: zip_map(&self.partials, &other.partials, |a, b| a + b),
        }
    }

    pub fn sub(&self, other: &Jet<'t>) -> Jet<'t> {
        Jet {
            value: self.value - other.value,
            partials: zip_map(&self.partials, &other.partials, |a, b| a - b),
        }
    }

    pub fn mul(&self, other: &Jet<'t>) -> Jet<'t> {
        let (u, v) = (self.value, other.value);
        Jet {
            value: u * v,
            partials: zip_map(&self.partials, &other.partials, |du, dv| du * v + u * dv),
        }
    }

    /// Product with a variable that is constant in space.
    pub fn scale(&self, s: Var<'t>) -> Jet<'t> {
        Jet {
            value: self.value * s,
            partials: self.partials.iter().map(|&d| d * s).collect(),
        }
    }

    pub fn scale_const(&self, c: f64) -> Jet<'t> {
        Jet {
            value: self.value * c,
            partials: self.partials.iter().map(|&d| d * c).collect(),
        }
    }

    pub fn add_var(&self, s: Var<'t>) -> Jet<'t> {
        Jet {
            value: self.value + s,
            partials: self.partials.clone(),
        }
    }

    pub fn add_const(&self, c: f64) -> Jet<'t> {
        Jet {
            value: self.value + c,
            partials: self.partials.clone(),
        }
    }

    /// Chain rule through a unary function given `g(u)` and `g'(u)` as
    /// tape variables.
    pub fn chain(&self, g: Var<'t>, dg: Var<'t>) -> Jet<'t> {
        Jet {
            value: g,
            partials: self.partials.iter().map(|&d| dg * d).collect(),
        }
    }

    pub fn activate(&self, act: Activation) -> Jet<'t> {
        self.chain(self.value.activate(act), self.value.activate_prime(act))
    }

    pub fn sin(&self) -> Jet<'t> {
        self.chain(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> Jet<'t> {
        self.chain(self.value.cos(), -self.value.sin())
    }

    pub fn tanh(&self) -> Jet<'t> {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }

    pub fn exp(&self) -> Jet<'t> {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn square(&self) -> Jet<'t> {
        self.mul(self)
    }

    pub fn partial_values(&self) -> Vec<f64> {
        self.partials.iter().map(|v| v.value()).collect()
    }
}

fn zip_map<'t>(
    a: &[Var<'t>],
    b: &[Var<'t>],
    f: impl Fn(Var<'t>, Var<'t>) -> Var<'t>,
) -> Vec<Var<'t>> {
    assert_eq!(a.len(), b.len(), "jets of different dimension");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Value and gradient of a scalar program of the parameter vector.
pub fn grad<F>(program: F, theta: &[f64]) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves = tape.vars(theta);
    let out = program(&tape, &leaves);
    if let Some(err) = tape.first_non_finite() {
        return Err(err);
    }
    let g = tape.gradient(out, &leaves);
    Ok((out.value(), g))
}

/// Seeds jets at the spatial point `x` (derivative 1 along each tracked
/// coordinate) and runs `program` on them.
pub fn jet_eval<'t, F>(
    tape: &'t Tape,
    program: F,
    x: &[f64],
    tracked: &[usize],
) -> Result<Jet<'t>, AdError>
where
    F: FnOnce(&[Jet<'t>]) -> Jet<'t>,
{
    for &t in tracked {
        if t >= x.len() {
            return Err(AdError::TrackedOutOfRange {
                index: t,
                dim: x.len(),
            });
        }
    }
    let zero = tape.constant(0.0);
    let one = tape.constant(1.0);
    let inputs: Vec<Jet<'t>> = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| Jet {
            value: tape.constant(xi),
            partials: tracked.iter().map(|&t| if t == i { one } else { zero }).collect(),
        })
        .collect();
    let out = program(&inputs);
    if let Some(err) = tape.first_non_finite() {
        return Err(err);
    }
    Ok(out)
}

/// Max over coordinates of `|g_i - fd_i| / max(|g_i|, |fd_i|, 1e-12)`.
pub fn relative_gradient_error(
    value: impl Fn(&[f64]) -> f64,
    gradient: &[f64],
    theta: &[f64],
    h: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<f64, AdError> {
    if !(h > 0.0) {
        return Err(AdError::InvalidStep(h));
    }
    let mut point = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = point[i];
        point[i] = orig + h;
        let fp = value(&point);
        point[i] = orig - h;
        let fm = value(&point);
        point[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let ad = gradient[i];
        let denom = ad.abs().max(fd.abs()).max(1e-12);
        worst = worst.max((ad - fd).abs() / denom);
    }
    Ok(worst)
}

/// Derivative of `f` at 0 by Ridders' extrapolation of central differences,
/// starting from step `h0` and shrinking by 1.4 per stage. Returns the
/// estimate and its error estimate.
pub fn ridders(mut f: impl FnMut(f64) -> f64, h0: f64) -> Result<(f64, f64), AdError> {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    if !(h0 > 0.0) {
        return Err(AdError::InvalidStep(h0));
    }
    let mut a = [[0.0; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = (f(h) - f(-h)) / (2.0 * h);
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = (f(h) - f(-h)) / (2.0 * h);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok((best, err))
}

/// [`relative_gradient_error`] with Ridders-extrapolated differences as the
/// reference.
pub fn ridders_gradient_error(
    value: impl Fn(&[f64]) -> f64,
    gradient: &[f64],
    theta: &[f64],
    h0: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<f64, AdError> {
    let mut point = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = theta[i];
        let (fd, _) = ridders(
            |s| {
                point[i] = orig + s;
                let v = value(&point);
                point[i] = orig;
                v
            },
            h0,
        )?;
        let ad = gradient[i];
        let denom = ad.abs().max(fd.abs()).max(1e-12);
        worst = worst.max((ad - fd).abs() / denom);
    }
    Ok(worst)
}

/// Compares the reverse-mode gradient of `program` with central
/// differences of its recorded value.
pub fn check_gradient<F>(program: F, theta: &[f64], h: f64) -> Result<f64, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    if !(h > 0.0) {
        return Err(AdError::InvalidStep(h));
    }
    let (_, g) = grad(&program, theta)?;
    let value = |p: &[f64]| {
        let tape = Tape::new();
        let leaves = tape.vars(p);
        program(&tape, &leaves).value()
    };
    relative_gradient_error(value, &g, theta, h, 0..theta.len())
}
