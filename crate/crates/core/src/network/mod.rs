//! Fully-connected networks `T_L o g o T_{L-1} o ... o g o T_1`, with an
//! optional trainable Gaussian Fourier embedding in front and an optional
//! multiplicative boundary lift behind.

mod batch;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::Activation;
use crate::autodiff::{Jet, Tape, Var};

pub use batch::{backward_batch, forward_batch, BatchForward};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("architecture needs at least one hidden layer")]
    NoHiddenLayers,
    #[error("hidden layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("input dimension must be positive")]
    ZeroInput,
    #[error("output dimension must be 1, got {0}")]
    OutputDim(usize),
    #[error("Fourier embedding needs at least one feature and sigma > 0")]
    BadFourier,
    #[error("lift interval ({a}, {b}) is empty")]
    BadLift { a: f64, b: f64 },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input point has dimension {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    /// Number of random frequencies `m`; the embedding has `2m` outputs.
    pub features: usize,
    /// Standard deviation of the initial frequency matrix entries.
    pub sigma: f64,
}

/// Fixed smooth weight multiplied onto the network output. Lifts act on the
/// last input coordinate (the spatial variable of 1D problems); the interval
/// family additionally reads the first coordinate as the half-width.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LiftSpec {
    #[default]
    None,
    /// `(b - x)(x - a) / ((b - a)/2)^2`, equal to 1 at the midpoint.
    Product1d { a: f64, b: f64 },
    /// `(p - x)(p + x) / p^2` on `(-p, p)` with `p = z[0]`.
    IntervalFamily,
}

impl LiftSpec {
    /// `eta(z)` and its derivatives along the tracked coordinates.
    pub fn eval(&self, z: &[f64], tracked: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; tracked.len()];
        let eta = self.eval_into(z, tracked, &mut grad);
        (eta, grad)
    }

    /// Like [`LiftSpec::eval`] but writes the derivatives into `grad`.
    pub fn eval_into(&self, z: &[f64], tracked: &[usize], grad: &mut [f64]) -> f64 {
        let last = z.len() - 1;
        let x = z[last];
        let (eta, dx, dp) = match *self {
            LiftSpec::None => (1.0, 0.0, 0.0),
            LiftSpec::Product1d { a, b } => {
                let s = 0.25 * (b - a) * (b - a);
                ((b - x) * (x - a) / s, (a + b - 2.0 * x) / s, 0.0)
            }
            LiftSpec::IntervalFamily => {
                let p = z[0];
                let p2 = p * p;
                ((p - x) * (p + x) / p2, -2.0 * x / p2, 2.0 * x * x / (p2 * p))
            }
        };
        for (g, &t) in grad.iter_mut().zip(tracked) {
            *g = if t == last {
                dx
            } else if t == 0 {
                dp
            } else {
                0.0
            };
        }
        eta
    }

    fn validate(&self) -> Result<(), NetworkError> {
        match *self {
            LiftSpec::Product1d { a, b } if !(a < b) => Err(NetworkError::BadLift { a, b }),
            _ => Ok(()),
        }
    }
}

/// `eta(z) * u`.
pub fn apply_lift(lift: &LiftSpec, z: &[f64], u: f64) -> f64 {
    lift.eval(z, &[]).0 * u
}

/// Product rule `grad(eta u) = grad(eta) u + eta grad(u)` on a jet.
pub fn apply_lift_jet<'t>(lift: &LiftSpec, z: &[f64], tracked: &[usize], u: &Jet<'t>) -> Jet<'t> {
    if matches!(lift, LiftSpec::None) {
        return u.clone();
    }
    let (eta, deta) = lift.eval(z, tracked);
    Jet {
        value: u.value * eta,
        partials: u
            .partials
            .iter()
            .zip(&deta)
            .map(|(&du, &de)| du * eta + u.value * de)
            .collect(),
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default = "one")]
    pub output_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub fourier: Option<FourierSpec>,
    #[serde(default)]
    pub lift: LiftSpec,
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim: 1,
            activation,
            fourier: None,
            lift: LiftSpec::None,
        }
    }

    pub fn with_fourier(mut self, features: usize, sigma: f64) -> Self {
        self.fourier = Some(FourierSpec { features, sigma });
        self
    }

    pub fn with_lift(mut self, lift: LiftSpec) -> Self {
        self.lift = lift;
        self
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 {
            return Err(NetworkError::ZeroInput);
        }
        if self.hidden_widths.is_empty() {
            return Err(NetworkError::NoHiddenLayers);
        }
        if let Some(i) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(NetworkError::ZeroWidth(i));
        }
        if self.output_dim != 1 {
            return Err(NetworkError::OutputDim(self.output_dim));
        }
        if let Some(f) = self.fourier {
            if f.features == 0 || !(f.sigma > 0.0) {
                return Err(NetworkError::BadFourier);
            }
        }
        self.lift.validate()
    }

    /// Width of the first affine layer's input.
    pub fn embedding_dim(&self) -> usize {
        match self.fourier {
            Some(f) => 2 * f.features,
            None => self.input_dim,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

/// Number of trainable scalars of `arch`.
pub fn param_count(arch: &ArchSpec) -> usize {
    arch.param_count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weights: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Offsets of every block inside the flat parameter vector:
/// `[B (m x input_dim)] ++ [A_1, b_1] ++ ... ++ [A_L, b_L]`, matrices
/// row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub fourier: Option<usize>,
    pub fourier_rows: usize,
    pub input_dim: usize,
    pub layers: Vec<LayerLayout>,
    pub len: usize,
}

impl Layout {
    fn new(arch: &ArchSpec) -> Self {
        let mut offset = 0;
        let (fourier, fourier_rows) = match arch.fourier {
            Some(f) => {
                offset += f.features * arch.input_dim;
                (Some(0), f.features)
            }
            None => (None, 0),
        };
        let mut widths = vec![arch.embedding_dim()];
        widths.extend(&arch.hidden_widths);
        widths.push(arch.output_dim);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let l = LayerLayout {
                    weights: offset,
                    bias: offset + rows * cols,
                    rows,
                    cols,
                };
                offset += rows * cols + rows;
                l
            })
            .collect();
        Layout {
            fourier,
            fourier_rows,
            input_dim: arch.input_dim,
            layers,
            len: offset,
        }
    }
}

/// Flat trainable parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn for_arch(arch: &ArchSpec, values: Vec<f64>) -> Result<Self, NetworkError> {
        let expected = arch.param_count();
        if values.len() != expected {
            return Err(NetworkError::ParamLength {
                expected,
                got: values.len(),
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(arch: &ArchSpec) -> Self {
        Self(vec![0.0; arch.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn unflatten(&self, arch: &ArchSpec) -> Result<Unflattened, NetworkError> {
        let layout = arch.layout();
        if self.0.len() != layout.len {
            return Err(NetworkError::ParamLength {
                expected: layout.len,
                got: self.0.len(),
            });
        }
        let fourier = layout
            .fourier
            .map(|off| self.0[off..off + layout.fourier_rows * layout.input_dim].to_vec());
        let layers = layout
            .layers
            .iter()
            .map(|l| AffineLayer {
                rows: l.rows,
                cols: l.cols,
                weights: self.0[l.weights..l.weights + l.rows * l.cols].to_vec(),
                bias: self.0[l.bias..l.bias + l.rows].to_vec(),
            })
            .collect();
        Ok(Unflattened { fourier, layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Structured view `((B), (A_1, b_1), ..., (A_L, b_L))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unflattened {
    pub fourier: Option<Vec<f64>>,
    pub layers: Vec<AffineLayer>,
}

impl Unflattened {
    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::new();
        if let Some(b) = &self.fourier {
            out.extend_from_slice(b);
        }
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        ParamVector(out)
    }
}

/// Glorot-uniform weights, zero biases, `N(0, sigma^2)` Fourier frequencies.
pub fn init_params(arch: &ArchSpec, seed: u64) -> ParamVector {
    let layout = arch.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; layout.len];
    if let (Some(off), Some(f)) = (layout.fourier, arch.fourier) {
        let normal = Normal::new(0.0, f.sigma).expect("sigma validated positive");
        for v in &mut theta[off..off + layout.fourier_rows * layout.input_dim] {
            *v = normal.sample(&mut rng);
        }
    }
    for l in &layout.layers {
        let limit = (6.0 / (l.rows + l.cols) as f64).sqrt();
        for v in &mut theta[l.weights..l.weights + l.rows * l.cols] {
            *v = rng.random_range(-limit..limit);
        }
    }
    ParamVector(theta)
}

/// Network value and spatial jet on the tape, before any lift.
pub fn forward_jet<'t>(
    arch: &ArchSpec,
    theta: &[Var<'t>],
    z: &[f64],
    tracked: &[usize],
) -> Result<Jet<'t>, NetworkError> {
    let layout = arch.layout();
    if theta.len() != layout.len {
        return Err(NetworkError::ParamLength {
            expected: layout.len,
            got: theta.len(),
        });
    }
    if z.len() != arch.input_dim {
        return Err(NetworkError::InputDim {
            expected: arch.input_dim,
            got: z.len(),
        });
    }
    let tape: &'t Tape = theta
        .first()
        .map(|v| v.tape())
        .expect("architectures always have parameters");
    let k = tracked.len();
    let zero = tape.constant(0.0);
    let one = tape.constant(1.0);
    let inputs: Vec<Jet<'t>> = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| Jet {
            value: tape.constant(zi),
            partials: tracked.iter().map(|&t| if t == i { one } else { zero }).collect(),
        })
        .collect();

    let mut h: Vec<Jet<'t>> = match layout.fourier {
        Some(off) => {
            let m = layout.fourier_rows;
            let d = layout.input_dim;
            let phases: Vec<Jet<'t>> = (0..m)
                .map(|i| {
                    let mut acc = Jet::constant(tape, 0.0, k);
                    for (j, input) in inputs.iter().enumerate() {
                        acc = acc.add(&input.scale(theta[off + i * d + j]));
                    }
                    acc.scale_const(2.0 * PI)
                })
                .collect();
            let mut e: Vec<Jet<'t>> = phases.iter().map(Jet::cos).collect();
            e.extend(phases.iter().map(Jet::sin));
            e
        }
        None => inputs,
    };

    let last = layout.layers.len() - 1;
    for (li, l) in layout.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(l.rows);
        for i in 0..l.rows {
            let mut acc = Jet::from_var(theta[l.bias + i], k);
            for (j, hj) in h.iter().enumerate() {
                acc = acc.add(&hj.scale(theta[l.weights + i * l.cols + j]));
            }
            next.push(if li == last {
                acc
            } else {
                acc.activate(arch.activation)
            });
        }
        h = next;
    }
    Ok(h.pop().expect("output layer has one neuron"))
}

/// Network value on the tape, before any lift.
pub fn forward<'t>(arch: &ArchSpec, theta: &[Var<'t>], z: &[f64]) -> Result<Var<'t>, NetworkError> {
    forward_jet(arch, theta, z, &[]).map(|j| j.value)
}

/// Random parameters suited to derivative checks: initial weights with
/// jittered biases, redrawn until every hidden pre-activation on `points`
/// is at least `margin` away from an activation kink, then with the output
/// layer rescaled so that `max |u| = 1` on `points`.
pub fn conditioned_params(arch: &ArchSpec, points: &[f64], seed: u64, margin: f64) -> ParamVector {
    let layout = arch.layout();
    let kinks = arch.activation.kinks();
    let mut draw = 0u64;
    loop {
        let mut theta = init_params(arch, seed).0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (draw << 32) ^ 0x9e37_79b9);
        for l in &layout.layers {
            for b in &mut theta[l.bias..l.bias + l.rows] {
                *b += rng.random_range(-0.1..0.1);
            }
        }
        draw += 1;
        let fwd = forward_batch(arch, &layout, &theta, points, &[]);
        let clear = fwd
            .pre_activations()
            .all(|a| kinks.iter().all(|k| (a - k).abs() >= margin));
        if !clear && draw < 1000 {
            continue;
        }
        let scale = fwd.u.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        if scale > 0.0 {
            let last = layout.layers.last().expect("at least one layer");
            for v in &mut theta[last.weights..last.bias + last.rows] {
                *v /= scale;
            }
        }
        return ParamVector(theta);
    }
}

/// Lifted network values and spatial gradients sampled on a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub k: usize,
    pub u: Vec<f64>,
    /// Row-major `n x k`.
    pub du: Vec<f64>,
}

impl SampledField {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.du[i * self.k..(i + 1) * self.k]
    }
}

const EVAL_CHUNK: usize = 256;

/// Evaluates `eta * u_theta` and its gradient along `tracked` on row-major
/// `points`, in fixed-size chunks.
pub fn evaluate_lifted(
    arch: &ArchSpec,
    theta: &[f64],
    points: &[f64],
    tracked: &[usize],
) -> Result<SampledField, NetworkError> {
    let layout = arch.layout();
    if theta.len() != layout.len {
        return Err(NetworkError::ParamLength {
            expected: layout.len,
            got: theta.len(),
        });
    }
    let d = arch.input_dim;
    if points.len() % d != 0 {
        return Err(NetworkError::InputDim {
            expected: d,
            got: points.len() % d,
        });
    }
    let k = tracked.len();
    let n = points.len() / d;
    let mut u = Vec::with_capacity(n);
    let mut du = Vec::with_capacity(n * k);
    let mut deta = vec![0.0; k];
    for chunk in points.chunks(EVAL_CHUNK * d) {
        let fwd = forward_batch(arch, &layout, theta, chunk, tracked);
        for (s, z) in chunk.chunks_exact(d).enumerate() {
            let eta = arch.lift.eval_into(z, tracked, &mut deta);
            let raw = fwd.u[s];
            u.push(eta * raw);
            for t in 0..k {
                du.push(deta[t] * raw + eta * fwd.du[t * fwd.n + s]);
            }
        }
    }
    Ok(SampledField { k, u, du })
}
