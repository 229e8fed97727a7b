//! Critic parameterizations.
//!
//! Every critic in this crate has the homothetic shape
//!
//! ```text
//! V(t, w, g) = (w^{1-gamma} e^{E(t,g)} - 1) / (1 - gamma)
//! ```
//!
//! so `(1-gamma) V + 1 = w^{1-gamma} e^{E(t,g)} > 0` holds structurally and
//! the relative TD denominator never changes sign. Parameterizations differ
//! only in the exponent `E` and its parameter gradient:
//!
//! - scalar (Black-Scholes): `E = psi (T-t) - lambda (1-gamma)(T-t)/2`;
//! - bridge form: `E = A1(t) g^{p6} + A0(t) - lambda (1-gamma)(T-t)/2`;
//! - network form: `E = (T-t) NN(t/T, log g)` with the temperature
//!   adjustment absorbed by the network.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::Mlp;
use crate::policy::{a0_term, a1_bridge, validate_bridge_denominator};

/// `x^e` with a fast path for the reciprocal-square exponent that the common
/// risk aversion gamma = 3 produces in every wealth-scaling term.
#[inline]
pub(crate) fn fast_pow(x: f64, e: f64) -> f64 {
    if e == -2.0 {
        let r = 1.0 / x;
        r * r
    } else {
        x.powf(e)
    }
}

/// Parameters of the bridge-structured critic exponent:
/// `(p0..p3)` build the bridge, `p4, p5` the time-and-log term, `p6` the
/// variance power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuePsi(pub [f64; 7]);

impl ValuePsi {
    /// Neutral initialization: exponent identically zero apart from the
    /// temperature adjustment, variance power matching the 3/2 model.
    pub fn neutral() -> Self {
        ValuePsi([0.1, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0])
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        validate_bridge_denominator(&self.0, horizon)
    }
}

/// Critic parameterizations sharing the homothetic value shape.
///
/// Serializes as `{"kind": ..., "params": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Critic {
    /// One scalar exponent rate (the Black-Scholes critic).
    Bs { psi: f64 },
    /// Bridge-structured exponent.
    SpecificForm(ValuePsi),
    /// Feed-forward exponent rate on standardized inputs.
    Network(Mlp),
}

impl Critic {
    pub fn dim(&self) -> usize {
        match self {
            Critic::Bs { .. } => 1,
            Critic::SpecificForm(_) => 7,
            Critic::Network(mlp) => mlp.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Critic::Bs { psi } => vec![*psi],
            Critic::SpecificForm(p) => p.0.to_vec(),
            Critic::Network(mlp) => mlp.params().to_vec(),
        }
    }

    pub fn add_scaled(&mut self, step: f64, direction: &[f64]) {
        debug_assert_eq!(direction.len(), self.dim());
        match self {
            Critic::Bs { psi } => *psi += step * direction[0],
            Critic::SpecificForm(p) => {
                for (v, d) in p.0.iter_mut().zip(direction) {
                    *v += step * d;
                }
            }
            Critic::Network(mlp) => mlp.add_scaled(step, direction),
        }
    }

    /// The exponent `E(t, g)`.
    pub fn exponent(&self, t: f64, g: f64, lambda: f64, gamma: f64, horizon: f64) -> Result<f64> {
        let tau = horizon - t;
        Ok(match self {
            Critic::Bs { psi } => psi * tau - lambda * (1.0 - gamma) * tau / 2.0,
            Critic::SpecificForm(p) => {
                let p = &p.0;
                let a1 = a1_bridge(&[p[0], p[1], p[2], p[3]], t, horizon)?.value;
                let a0 = a0_term(p[0], p[2], p[3], p[4], p[5], t, horizon)?.value;
                a1 * g.powf(p[6]) + a0 - lambda * (1.0 - gamma) * tau / 2.0
            }
            Critic::Network(mlp) => tau * mlp.forward(&[t / horizon, g.ln()]),
        })
    }

    /// Exponent together with its parameter gradient (written into `grad`).
    pub fn exponent_with_grad(
        &self,
        t: f64,
        g: f64,
        lambda: f64,
        gamma: f64,
        horizon: f64,
        grad: &mut Vec<f64>,
    ) -> Result<f64> {
        let tau = horizon - t;
        grad.clear();
        match self {
            Critic::Bs { psi } => {
                grad.push(tau);
                Ok(psi * tau - lambda * (1.0 - gamma) * tau / 2.0)
            }
            Critic::SpecificForm(p) => {
                let p = &p.0;
                let bridge = a1_bridge(&[p[0], p[1], p[2], p[3]], t, horizon)?;
                let a0 = a0_term(p[0], p[2], p[3], p[4], p[5], t, horizon)?;
                let gp = g.powf(p[6]);
                grad.extend_from_slice(&[
                    gp * bridge.d_params[0] + a0.d_p0,
                    gp * bridge.d_params[1],
                    gp * bridge.d_params[2] + a0.d_p2,
                    gp * bridge.d_params[3] + a0.d_p3,
                    a0.d_p4,
                    a0.d_p5,
                    bridge.value * gp * g.ln(),
                ]);
                Ok(bridge.value * gp + a0.value - lambda * (1.0 - gamma) * tau / 2.0)
            }
            Critic::Network(mlp) => {
                let (out, cache) = mlp.forward_cached(&[t / horizon, g.ln()]);
                mlp.backward_into(&cache, grad);
                for v in grad.iter_mut() {
                    *v *= tau;
                }
                Ok(tau * out)
            }
        }
    }

    /// `V(t, w, g)`.
    pub fn value(&self, t: f64, w: f64, g: f64, lambda: f64, gamma: f64, horizon: f64) -> Result<f64> {
        debug_assert!(w > 0.0);
        let e = self.exponent(t, g, lambda, gamma, horizon)?;
        Ok((fast_pow(w, 1.0 - gamma) * e.exp() - 1.0) / (1.0 - gamma))
    }

    /// `(1-gamma) V + 1 = w^{1-gamma} e^{E}`, the always-positive scale the
    /// relative TD error divides by.
    pub fn denominator(
        &self,
        t: f64,
        w: f64,
        g: f64,
        lambda: f64,
        gamma: f64,
        horizon: f64,
    ) -> Result<f64> {
        let e = self.exponent(t, g, lambda, gamma, horizon)?;
        Ok(fast_pow(w, 1.0 - gamma) * e.exp())
    }

    /// `V` and `dV/dparams` at once; the gradient is
    /// `w^{1-gamma} e^{E} / (1-gamma) * dE/dparams`.
    pub fn value_with_grad(
        &self,
        t: f64,
        w: f64,
        g: f64,
        lambda: f64,
        gamma: f64,
        horizon: f64,
        grad: &mut Vec<f64>,
    ) -> Result<f64> {
        let e = self.exponent_with_grad(t, g, lambda, gamma, horizon, grad)?;
        let scale_pos = fast_pow(w, 1.0 - gamma) * e.exp();
        let scale = scale_pos / (1.0 - gamma);
        for v in grad.iter_mut() {
            *v *= scale;
        }
        Ok((scale_pos - 1.0) / (1.0 - gamma))
    }
}
