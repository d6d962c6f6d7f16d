//! Scalar activation functions together with their first and second
//! derivatives.
//!
//! Every activation ships the triple `(g, g', g'')`: forward-mode spatial
//! jets carry `g'` as a tape value, so the reverse pass needs `g''` as well.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// `sqrt(2/pi)` used by the tanh approximation of GELU.
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(x, 0)^2`
    Relu2,
    /// `x/2 * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))`
    GeluApprox,
    /// `sin(2 pi x) * max(x, 0) * max(1 - x, 0)`
    S2Relu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu2, Activation::GeluApprox, Activation::S2Relu];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu2 => "relu2",
            Activation::GeluApprox => "gelu_approx",
            Activation::S2Relu => "s2relu",
        }
    }

    /// Points where `g''` jumps.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::Relu2 => &[0.0],
            Activation::GeluApprox => &[],
            Activation::S2Relu => &[0.0, 1.0],
        }
    }

    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Relu2 => {
                let r = x.max(0.0);
                r * r
            }
            Activation::GeluApprox => {
                let s = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + s.tanh())
            }
            Activation::S2Relu => {
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    (2.0 * PI * x).sin() * x * (1.0 - x)
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu2 => 2.0 * x.max(0.0),
            Activation::GeluApprox => {
                let s = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
                let ds = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
                let t = s.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * ds
            }
            Activation::S2Relu => {
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    let w = 2.0 * PI * x;
                    2.0 * PI * w.cos() * (x - x * x) + w.sin() * (1.0 - 2.0 * x)
                }
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu2 => {
                if x > 0.0 {
                    2.0
                } else {
                    0.0
                }
            }
            Activation::GeluApprox => {
                let s = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
                let ds = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x);
                let dds = GELU_SCALE * 6.0 * GELU_CUBIC * x;
                let t = s.tanh();
                let sech2 = 1.0 - t * t;
                sech2 * ds + 0.5 * x * sech2 * (dds - 2.0 * t * ds * ds)
            }
            Activation::S2Relu => {
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    let w = 2.0 * PI * x;
                    let (sin, cos) = w.sin_cos();
                    -4.0 * PI * PI * sin * (x - x * x) + 4.0 * PI * cos * (1.0 - 2.0 * x)
                        - 2.0 * sin
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn away_from_kinks(act: Activation, x: f64) -> bool {
        match act {
            Activation::Relu2 => x.abs() > 1e-3,
            Activation::S2Relu => x.abs() > 1e-3 && (x - 1.0).abs() > 1e-3,
            Activation::GeluApprox => true,
        }
    }

    #[test]
    fn derivative_triples_match_finite_differences() {
        let h = 1e-6;
        for act in Activation::ALL {
            for i in 0..=600 {
                let x = -3.0 + 6.0 * i as f64 / 600.0 + 1.234e-4;
                if !away_from_kinks(act, x) {
                    continue;
                }
                let d1 = central(|t| act.value(t), x, h);
                let d2 = central(|t| act.derivative(t), x, h);
                assert!((act.derivative(x) - d1).abs() <= 1e-6, "{act:?} g' at {x}");
                assert!((act.second_derivative(x) - d2).abs() <= 1e-6, "{act:?} g'' at {x}");
            }
        }
    }

    #[test]
    fn relu2_conventions_at_zero() {
        assert_eq!(Activation::Relu2.value(0.0), 0.0);
        assert_eq!(Activation::Relu2.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu2.second_derivative(0.0), 0.0);
        assert_eq!(Activation::Relu2.value(2.0), 4.0);
        assert_eq!(Activation::Relu2.value(-1.0), 0.0);
    }

    #[test]
    fn s2relu_vanishes_outside_unit_interval() {
        assert_eq!(Activation::S2Relu.value(-0.5), 0.0);
        assert_eq!(Activation::S2Relu.value(1.5), 0.0);
        assert_eq!(Activation::S2Relu.derivative(-0.5), 0.0);
        assert!(Activation::S2Relu.value(0.25) > 0.0);
    }

    #[test]
    fn gelu_is_asymptotically_identity() {
        let g = Activation::GeluApprox;
        assert_eq!(g.value(0.0), 0.0);
        let r = g.value(10.0) / 10.0;
        assert!((0.999..=1.0001).contains(&r), "{r}");
        // x * Phi(x) at x = 1 is 0.8413447
        assert!((g.value(1.0) - 0.841_344_7).abs() < 1e-3);
    }
}
