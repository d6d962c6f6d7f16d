//! Batched forward-over-reverse evaluation of the raw network.
//!
//! Activations are stored neuron-major (`[neuron][point]`) so inner loops
//! run over contiguous points. Spatial derivative channels are stored as
//! `[channel][neuron][point]`. The backward pass is the hand-derived adjoint
//! of the forward jet recursion
//!
//! ```text
//! a = A h + b        da_t = A dh_t
//! h' = g(a)          dh'_t = g'(a) da_t
//! ```
//!
//! and therefore consumes `g''`.

use std::f64::consts::PI;

use super::{ArchSpec, Layout};

const TWO_PI: f64 = 2.0 * PI;

/// Cached intermediates of one batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub n: usize,
    pub k: usize,
    /// Copy of the input points, `[coordinate][point]`.
    inputs: Vec<f64>,
    tracked: Vec<usize>,
    /// Per layer input activations and their spatial derivatives.
    h: Vec<Vec<f64>>,
    dh: Vec<Vec<f64>>,
    /// Per hidden layer pre-activations and `g'` at them.
    pre: Vec<Vec<f64>>,
    dpre: Vec<Vec<f64>>,
    gprime: Vec<Vec<f64>>,
    /// Fourier phases `2 pi B z`, `[feature][point]`.
    phase: Vec<f64>,
    /// Raw network output and its spatial derivatives `[channel][point]`.
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

impl BatchForward {
    /// All hidden-layer pre-activations of the batch.
    pub fn pre_activations(&self) -> impl Iterator<Item = f64> + '_ {
        self.pre.iter().flatten().copied()
    }
}

/// Evaluates the raw network on `n` points stored row-major in `points`
/// (`n x input_dim`), tracking derivatives along `tracked`.
pub fn forward_batch(
    arch: &ArchSpec,
    layout: &Layout,
    theta: &[f64],
    points: &[f64],
    tracked: &[usize],
) -> BatchForward {
    let d = arch.input_dim;
    debug_assert_eq!(points.len() % d, 0);
    debug_assert_eq!(theta.len(), layout.len);
    let n = points.len() / d;
    let k = tracked.len();

    let mut inputs = vec![0.0; d * n];
    for s in 0..n {
        for j in 0..d {
            inputs[j * n + s] = points[s * d + j];
        }
    }

    let mut phase = Vec::new();
    let (h0, dh0) = match layout.fourier {
        Some(off) => {
            let m = layout.fourier_rows;
            phase = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut phase[i * n..(i + 1) * n];
                for j in 0..d {
                    let bij = TWO_PI * theta[off + i * d + j];
                    let col = &inputs[j * n..(j + 1) * n];
                    for (r, &z) in row.iter_mut().zip(col) {
                        *r += bij * z;
                    }
                }
            }
            let mut h0 = vec![0.0; 2 * m * n];
            let mut dh0 = vec![0.0; k * 2 * m * n];
            for i in 0..m {
                for s in 0..n {
                    let (sin, cos) = phase[i * n + s].sin_cos();
                    h0[i * n + s] = cos;
                    h0[(m + i) * n + s] = sin;
                    for (t, &c) in tracked.iter().enumerate() {
                        let w = TWO_PI * theta[off + i * d + c];
                        dh0[(t * 2 * m + i) * n + s] = -sin * w;
                        dh0[(t * 2 * m + m + i) * n + s] = cos * w;
                    }
                }
            }
            (h0, dh0)
        }
        None => {
            let mut dh0 = vec![0.0; k * d * n];
            for (t, &c) in tracked.iter().enumerate() {
                dh0[(t * d + c) * n..(t * d + c + 1) * n].fill(1.0);
            }
            (inputs.clone(), dh0)
        }
    };

    let depth = layout.layers.len();
    let mut h = Vec::with_capacity(depth);
    let mut dh = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth - 1);
    let mut dpre = Vec::with_capacity(depth - 1);
    let mut gprime = Vec::with_capacity(depth - 1);
    h.push(h0);
    dh.push(dh0);

    let act = arch.activation;
    let mut u = Vec::new();
    let mut du = Vec::new();
    for (li, l) in layout.layers.iter().enumerate() {
        let (a, da) = affine(theta, l.weights, l.bias, l.rows, l.cols, &h[li], &dh[li], n, k);
        if li + 1 == depth {
            u = a;
            du = da;
        } else {
            let mut out = vec![0.0; a.len()];
            let mut gp = vec![0.0; a.len()];
            for ((o, g), &x) in out.iter_mut().zip(gp.iter_mut()).zip(&a) {
                *o = act.value(x);
                *g = act.derivative(x);
            }
            let mut dout = da.clone();
            let width = l.rows * n;
            for t in 0..k {
                for (v, &g) in dout[t * width..(t + 1) * width].iter_mut().zip(&gp) {
                    *v *= g;
                }
            }
            pre.push(a);
            dpre.push(da);
            gprime.push(gp);
            h.push(out);
            dh.push(dout);
        }
    }

    BatchForward {
        n,
        k,
        inputs,
        tracked: tracked.to_vec(),
        h,
        dh,
        pre,
        dpre,
        gprime,
        phase,
        u,
        du,
    }
}

#[allow(clippy::too_many_arguments)]
fn affine(
    theta: &[f64],
    w_off: usize,
    b_off: usize,
    rows: usize,
    cols: usize,
    h: &[f64],
    dh: &[f64],
    n: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; rows * n];
    let mut da = vec![0.0; k * rows * n];
    for i in 0..rows {
        let row = &mut a[i * n..(i + 1) * n];
        row.fill(theta[b_off + i]);
        for j in 0..cols {
            let w = theta[w_off + i * cols + j];
            for (r, &x) in row.iter_mut().zip(&h[j * n..(j + 1) * n]) {
                *r += w * x;
            }
        }
        for t in 0..k {
            let drow = &mut da[(t * rows + i) * n..(t * rows + i + 1) * n];
            for j in 0..cols {
                let w = theta[w_off + i * cols + j];
                let src = &dh[(t * cols + j) * n..(t * cols + j + 1) * n];
                for (r, &x) in drow.iter_mut().zip(src) {
                    *r += w * x;
                }
            }
        }
    }
    (a, da)
}

/// Accumulates into `grad` the parameter gradient of
/// `sum_s u_bar[s] u(z_s) + sum_{t,s} du_bar[t][s] d_t u(z_s)`.
pub fn backward_batch(
    arch: &ArchSpec,
    layout: &Layout,
    theta: &[f64],
    fwd: &BatchForward,
    u_bar: &[f64],
    du_bar: &[f64],
    grad: &mut [f64],
) {
    let (n, k) = (fwd.n, fwd.k);
    debug_assert_eq!(u_bar.len(), n);
    debug_assert_eq!(du_bar.len(), k * n);
    let act = arch.activation;
    let depth = layout.layers.len();

    let mut a_bar = u_bar.to_vec();
    let mut da_bar = du_bar.to_vec();
    for li in (0..depth).rev() {
        let l = layout.layers[li];
        let (rows, cols) = (l.rows, l.cols);
        let h_in = &fwd.h[li];
        let dh_in = &fwd.dh[li];

        let mut h_bar = vec![0.0; cols * n];
        let mut dh_bar = vec![0.0; k * cols * n];
        for i in 0..rows {
            let ai = &a_bar[i * n..(i + 1) * n];
            grad[l.bias + i] += ai.iter().sum::<f64>();
            for j in 0..cols {
                let w_idx = l.weights + i * cols + j;
                let w = theta[w_idx];
                let hj = &h_in[j * n..(j + 1) * n];
                let mut acc = dot(ai, hj);
                for (hb, &a) in h_bar[j * n..(j + 1) * n].iter_mut().zip(ai) {
                    *hb += w * a;
                }
                for t in 0..k {
                    let dai = &da_bar[(t * rows + i) * n..(t * rows + i + 1) * n];
                    let dhj = &dh_in[(t * cols + j) * n..(t * cols + j + 1) * n];
                    acc += dot(dai, dhj);
                    for (hb, &a) in dh_bar[(t * cols + j) * n..(t * cols + j + 1) * n]
                        .iter_mut()
                        .zip(dai)
                    {
                        *hb += w * a;
                    }
                }
                grad[w_idx] += acc;
            }
        }

        if li == 0 {
            if let Some(off) = layout.fourier {
                fourier_backward(layout, theta, fwd, off, &h_bar, &dh_bar, grad);
            }
            break;
        }

        // Through the activation of hidden layer li - 1.
        let gp = &fwd.gprime[li - 1];
        let pre = &fwd.pre[li - 1];
        let dpre = &fwd.dpre[li - 1];
        let width = cols * n;
        let mut next_a = vec![0.0; width];
        for ((o, &hb), &g) in next_a.iter_mut().zip(&h_bar).zip(gp) {
            *o = g * hb;
        }
        if k > 0 {
            let gpp: Vec<f64> = pre.iter().map(|&x| act.second_derivative(x)).collect();
            for t in 0..k {
                let db = &dh_bar[t * width..(t + 1) * width];
                let dp = &dpre[t * width..(t + 1) * width];
                for (((o, &g2), &d), &b) in next_a.iter_mut().zip(&gpp).zip(dp).zip(db) {
                    *o += g2 * d * b;
                }
            }
        }
        let mut next_da = dh_bar;
        for t in 0..k {
            for (v, &g) in next_da[t * width..(t + 1) * width].iter_mut().zip(gp) {
                *v *= g;
            }
        }
        a_bar = next_a;
        da_bar = next_da;
    }
}

fn fourier_backward(
    layout: &Layout,
    theta: &[f64],
    fwd: &BatchForward,
    off: usize,
    h_bar: &[f64],
    dh_bar: &[f64],
    grad: &mut [f64],
) {
    let (n, k) = (fwd.n, fwd.k);
    let m = layout.fourier_rows;
    let d = layout.input_dim;
    let mut phase_bar = vec![0.0; n];
    for i in 0..m {
        let mut direct = vec![0.0; k];
        for s in 0..n {
            let (sin, cos) = fwd.phase[i * n + s].sin_cos();
            let mut pb = -sin * h_bar[i * n + s] + cos * h_bar[(m + i) * n + s];
            for (t, &c) in fwd.tracked.iter().enumerate() {
                let w = TWO_PI * theta[off + i * d + c];
                let bc = dh_bar[(t * 2 * m + i) * n + s];
                let bs = dh_bar[(t * 2 * m + m + i) * n + s];
                pb += -cos * w * bc - sin * w * bs;
                direct[t] += -sin * bc + cos * bs;
            }
            phase_bar[s] = pb;
        }
        for j in 0..d {
            grad[off + i * d + j] += TWO_PI * dot(&phase_bar, &fwd.inputs[j * n..(j + 1) * n]);
        }
        for (t, &c) in fwd.tracked.iter().enumerate() {
            grad[off + i * d + c] += TWO_PI * direct[t];
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::autodiff::{grad as tape_grad, Tape};
    use crate::network::{forward_jet, init_params};

    fn archs() -> Vec<ArchSpec> {
        vec![
            ArchSpec::new(1, vec![4, 3], Activation::GeluApprox),
            ArchSpec::new(2, vec![5, 4, 3], Activation::S2Relu).with_fourier(3, 0.7),
            ArchSpec::new(3, vec![6], Activation::Relu2),
            ArchSpec::new(7, vec![4, 4], Activation::GeluApprox).with_fourier(2, 0.5),
        ]
    }

    #[test]
    fn batch_forward_matches_tape_forward() {
        for (ai, arch) in archs().iter().enumerate() {
            let layout = arch.layout();
            let theta = init_params(arch, 100 + ai as u64).0;
            let d = arch.input_dim;
            let tracked: Vec<usize> = (d.saturating_sub(2)..d).collect();
            let points: Vec<f64> = (0..5 * d).map(|i| ((i as f64) * 0.37).sin() * 0.9).collect();
            let fwd = forward_batch(arch, &layout, &theta, &points, &tracked);
            for s in 0..5 {
                let tape = Tape::new();
                let t = tape.vars(&theta);
                let j = forward_jet(arch, &t, &points[s * d..(s + 1) * d], &tracked).unwrap();
                assert!((j.value.value() - fwd.u[s]).abs() < 1e-13);
                for c in 0..tracked.len() {
                    assert!((j.partials[c].value() - fwd.du[c * 5 + s]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_backward_matches_tape_gradient() {
        for (ai, arch) in archs().iter().enumerate() {
            let layout = arch.layout();
            let theta = init_params(arch, 200 + ai as u64).0;
            let d = arch.input_dim;
            let tracked: Vec<usize> = (d.saturating_sub(2)..d).collect();
            let k = tracked.len();
            let n = 4;
            let points: Vec<f64> = (0..n * d).map(|i| ((i as f64) * 0.91).cos() * 0.8).collect();
            let u_bar: Vec<f64> = (0..n).map(|s| 0.3 + s as f64 * 0.1).collect();
            let du_bar: Vec<f64> = (0..k * n).map(|i| -0.2 + i as f64 * 0.05).collect();

            let fwd = forward_batch(arch, &layout, &theta, &points, &tracked);
            let mut g = vec![0.0; theta.len()];
            backward_batch(arch, &layout, &theta, &fwd, &u_bar, &du_bar, &mut g);

            let (_, expected) = tape_grad(
                |tape, t| {
                    let mut acc = tape.constant(0.0);
                    for s in 0..n {
                        let j = forward_jet(arch, t, &points[s * d..(s + 1) * d], &tracked).unwrap();
                        acc = acc + j.value * u_bar[s];
                        for c in 0..k {
                            acc = acc + j.partials[c] * du_bar[c * n + s];
                        }
                    }
                    acc
                },
                &theta,
            )
            .unwrap();
            for (i, (a, b)) in g.iter().zip(&expected).enumerate() {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "arch {ai} param {i}: {a} vs {b}");
            }
        }
    }
}
