//! The admissible Gaussian policy class and its mean-function
//! parameterizations.
//!
//! A policy is a normal action distribution with mean `u(t, g)` and variance
//! `lambda / (gamma g)`, where `g` is the observed instantaneous variance.
//! The variance needs no training: it is pinned by the temperature, the risk
//! aversion and the observable volatility. Only the mean function carries
//! learnable parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MertonError, Result};
use crate::nn::Mlp;

/// Reject bridge evaluations when the denominator is this close to zero.
pub const BRIDGE_SINGULARITY_TOL: f64 = 1e-12;

/// Value and partial derivatives of the bridge function
/// `A1(t) = (-p1 + p1 e^{p0 (T-t)}) / (p2 + p3 e^{p0 (T-t)})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeEval {
    pub value: f64,
    /// Partials with respect to `(p0, p1, p2, p3)`.
    pub d_params: [f64; 4],
    pub d_t: f64,
}

/// Evaluate the bridge and its exact partials at time `t` with horizon `T`.
pub fn a1_bridge(p: &[f64; 4], t: f64, horizon: f64) -> Result<BridgeEval> {
    let tau = horizon - t;
    let e = (p[0] * tau).exp();
    let den = p[2] + p[3] * e;
    if den.abs() < BRIDGE_SINGULARITY_TOL || !den.is_finite() {
        return Err(MertonError::SingularBridge { t, denominator: den });
    }
    let num = p[1] * (e - 1.0);
    let value = num / den;
    let den2 = den * den;
    // d/dp0: tau e (p1 den - p3 num) / den^2 = tau e p1 (p2 + p3) / den^2
    let d0 = tau * e * p[1] * (p[2] + p[3]) / den2;
    let d1 = (e - 1.0) / den;
    let d2 = -num / den2;
    let d3 = -num * e / den2;
    let d_t = -p[0] * e * p[1] * (p[2] + p[3]) / den2;
    Ok(BridgeEval { value, d_params: [d0, d1, d2, d3], d_t })
}

/// Antiderivative helper: `A0(t) = p4 (T-t) + p5 log(den(t) / den(T))` with
/// `den(t) = p2 + p3 e^{p0 (T-t)}`. Returns the value and partials with
/// respect to `(p0, p2, p3, p4, p5)`; `p1` does not enter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A0Eval {
    pub value: f64,
    pub d_p0: f64,
    pub d_p2: f64,
    pub d_p3: f64,
    pub d_p4: f64,
    pub d_p5: f64,
}

pub fn a0_term(p0: f64, p2: f64, p3: f64, p4: f64, p5: f64, t: f64, horizon: f64) -> Result<A0Eval> {
    let tau = horizon - t;
    let e = (p0 * tau).exp();
    let den = p2 + p3 * e;
    let den0 = p2 + p3;
    if den.abs() < BRIDGE_SINGULARITY_TOL || den0.abs() < BRIDGE_SINGULARITY_TOL {
        return Err(MertonError::SingularBridge { t, denominator: den.min(den0) });
    }
    let ratio = den / den0;
    if ratio <= 0.0 {
        return Err(MertonError::SingularBridge { t, denominator: den });
    }
    let log_ratio = ratio.ln();
    Ok(A0Eval {
        value: p4 * tau + p5 * log_ratio,
        d_p0: p5 * p3 * tau * e / den,
        d_p2: p5 * (1.0 / den - 1.0 / den0),
        d_p3: p5 * (e / den - 1.0 / den0),
        d_p4: tau,
        d_p5: log_ratio,
    })
}

/// Parameters of the bridge-structured policy mean
/// `u(t,g) = g^{p6} (p4 + p5 A1(t))` with `A1` built from `(p0..p3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecificFormTheta(pub [f64; 7]);

impl SpecificFormTheta {
    /// Neutral initialization: zero mean everywhere, bridge well-conditioned,
    /// variance-power matching the 3/2 model exponent.
    pub fn neutral() -> Self {
        SpecificFormTheta([0.1, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0])
    }

    /// Checks that the bridge denominator stays away from zero over `[0, T]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        validate_bridge_denominator(&self.0, horizon)
    }
}

pub(crate) fn validate_bridge_denominator(p: &[f64; 7], horizon: f64) -> Result<()> {
    const GRID: usize = 101;
    for i in 0..=GRID {
        let t = horizon * i as f64 / GRID as f64;
        let den = p[2] + p[3] * (p[0] * (horizon - t)).exp();
        if den.abs() < 1e-8 || !den.is_finite() {
            return Err(MertonError::SingularBridge { t, denominator: den });
        }
    }
    Ok(())
}

/// Time-invariant power-law mean `u(g) = c1 g^{c2}`, the infinite-horizon
/// limit used by the empirical protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawPolicy {
    pub c1: f64,
    pub c2: f64,
}

/// Mean-function parameterizations of the Gaussian policy.
///
/// Serializes as `{"kind": ..., "params": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MeanFn {
    /// Constant allocation (the Black-Scholes actor).
    Scalar(f64),
    /// Bridge-structured form mirroring the closed-form optimum.
    SpecificForm(SpecificFormTheta),
    /// Time-invariant power law.
    PowerLaw(PowerLawPolicy),
    /// Feed-forward network on standardized inputs `(t/T, log g)`.
    FeedForward(Mlp),
}

impl MeanFn {
    pub fn dim(&self) -> usize {
        match self {
            MeanFn::Scalar(_) => 1,
            MeanFn::SpecificForm(_) => 7,
            MeanFn::PowerLaw(_) => 2,
            MeanFn::FeedForward(mlp) => mlp.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            MeanFn::Scalar(v) => vec![*v],
            MeanFn::SpecificForm(t) => t.0.to_vec(),
            MeanFn::PowerLaw(p) => vec![p.c1, p.c2],
            MeanFn::FeedForward(mlp) => mlp.params().to_vec(),
        }
    }

    pub fn add_scaled(&mut self, step: f64, direction: &[f64]) {
        debug_assert_eq!(direction.len(), self.dim());
        match self {
            MeanFn::Scalar(v) => *v += step * direction[0],
            MeanFn::SpecificForm(t) => {
                for (p, d) in t.0.iter_mut().zip(direction) {
                    *p += step * d;
                }
            }
            MeanFn::PowerLaw(p) => {
                p.c1 += step * direction[0];
                p.c2 += step * direction[1];
            }
            MeanFn::FeedForward(mlp) => mlp.add_scaled(step, direction),
        }
    }

    pub fn eval(&self, t: f64, g: f64, horizon: f64) -> Result<f64> {
        Ok(match self {
            MeanFn::Scalar(v) => *v,
            MeanFn::SpecificForm(th) => {
                let p = &th.0;
                let a1 = a1_bridge(&[p[0], p[1], p[2], p[3]], t, horizon)?.value;
                g.powf(p[6]) * (p[4] + p[5] * a1)
            }
            MeanFn::PowerLaw(p) => p.c1 * g.powf(p.c2),
            MeanFn::FeedForward(mlp) => mlp.forward(&[t / horizon, g.ln()]),
        })
    }

    /// Mean value together with its gradient in the parameters, written into
    /// `grad` (resized to `dim`).
    pub fn eval_with_grad(&self, t: f64, g: f64, horizon: f64, grad: &mut Vec<f64>) -> Result<f64> {
        grad.clear();
        match self {
            MeanFn::Scalar(v) => {
                grad.push(1.0);
                Ok(*v)
            }
            MeanFn::SpecificForm(th) => {
                let p = &th.0;
                let bridge = a1_bridge(&[p[0], p[1], p[2], p[3]], t, horizon)?;
                let gp = g.powf(p[6]);
                let level = p[4] + p[5] * bridge.value;
                let mean = gp * level;
                grad.extend_from_slice(&[
                    gp * p[5] * bridge.d_params[0],
                    gp * p[5] * bridge.d_params[1],
                    gp * p[5] * bridge.d_params[2],
                    gp * p[5] * bridge.d_params[3],
                    gp,
                    gp * bridge.value,
                    mean * g.ln(),
                ]);
                Ok(mean)
            }
            MeanFn::PowerLaw(p) => {
                let gp = g.powf(p.c2);
                let mean = p.c1 * gp;
                grad.extend_from_slice(&[gp, mean * g.ln()]);
                Ok(mean)
            }
            MeanFn::FeedForward(mlp) => {
                let (out, cache) = mlp.forward_cached(&[t / horizon, g.ln()]);
                mlp.backward_into(&cache, grad);
                Ok(out)
            }
        }
    }
}

/// Gaussian policy: mean function plus the pinned variance `lambda/(gamma g)`.
///
/// `lambda = 0` is admissible (the policy degenerates to its mean and can be
/// evaluated), but learning operations reject it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    #[serde(flatten)]
    pub mean_fn: MeanFn,
    pub lambda: f64,
    pub gamma: f64,
    /// Episode horizon the time argument is measured against.
    pub horizon: f64,
}

impl GaussianPolicy {
    pub fn new(mean_fn: MeanFn, lambda: f64, gamma: f64, horizon: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(MertonError::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(gamma > 0.0) || gamma == 1.0 {
            return Err(MertonError::InvalidParameter(format!(
                "gamma must be positive and != 1, got {gamma}"
            )));
        }
        if !(horizon > 0.0) {
            return Err(MertonError::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
        }
        if let MeanFn::SpecificForm(t) = &mean_fn {
            t.validate(horizon)?;
        }
        Ok(GaussianPolicy { mean_fn, lambda, gamma, horizon })
    }

    pub fn variance(&self, g: f64) -> f64 {
        self.lambda / (self.gamma * g)
    }

    pub fn mean(&self, t: f64, g: f64) -> f64 {
        // Learned parameters are guarded against singular bridges by the
        // update-rejection path, so evaluation failures map to NaN rather
        // than panics and surface through downstream validation.
        self.mean_fn.eval(t, g, self.horizon).unwrap_or(f64::NAN)
    }

    /// Draw an action; with `lambda = 0` this returns the mean.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, g: f64, rng: &mut R) -> f64 {
        let mean = self.mean(t, g);
        if self.lambda == 0.0 {
            return mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        mean + self.variance(g).sqrt() * z
    }

    /// Gradient of `log pi(a | t, g)` in the mean-function parameters:
    /// `(gamma g / lambda) (a - mean) dmean/dparams`.
    ///
    /// Errors with a degenerate-policy error when `lambda = 0`.
    pub fn log_density_grad(&self, action: f64, t: f64, g: f64, grad: &mut Vec<f64>) -> Result<()> {
        if self.lambda == 0.0 {
            return Err(MertonError::DegeneratePolicy);
        }
        let mean = self.mean_fn.eval_with_grad(t, g, self.horizon, grad)?;
        let scale = self.gamma * g / self.lambda * (action - mean);
        for v in grad.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }
}
