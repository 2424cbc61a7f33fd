use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Firing-rate nonlinearity applied element-wise to unit states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, min(v, 1))`; derivative 1 on the open interval (0, 1), 0 elsewhere.
    HardSigmoid,
    Logistic,
    Tanh,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::HardSigmoid)
    }

    /// Whether the state solver clips units to `[0, 1]`.
    pub fn clips_state(self) -> bool {
        matches!(self, Activation::HardSigmoid)
    }

    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::HardSigmoid => v.clamp(0.0, 1.0),
            Activation::Logistic => logistic(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// First derivative. The hard sigmoid uses `rho'(0) = rho'(1) = 0`.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::HardSigmoid => {
                if v > 0.0 && v < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => {
                let s = logistic(v);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative; zero almost everywhere for the hard sigmoid.
    #[inline]
    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            Activation::HardSigmoid => 0.0,
            Activation::Logistic => {
                let s = logistic(v);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// True when `v` sits on a point where the derivative is discontinuous.
    pub fn on_kink(self, v: f64) -> bool {
        self == Activation::HardSigmoid && (v <= 0.0 || v >= 1.0)
    }
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Element-wise activation of a whole layer.
pub fn rho(v: &DVector<f64>, activation: Activation) -> DVector<f64> {
    v.map(|x| activation.eval(x))
}

pub fn rho_prime(v: &DVector<f64>, activation: Activation) -> DVector<f64> {
    v.map(|x| activation.derivative(x))
}
