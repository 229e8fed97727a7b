//! Closed-form ground-truth solutions and loss metrics.
//!
//! For the stochastic-volatility market the bridge coefficient `A1` of the
//! optimal-value exponent solves a terminal-value Riccati equation. In
//! time-to-horizon `tau = T - t`,
//!
//! ```text
//! dA1/dtau = a A1^2 - b A1 + c,    A1(0) = 0,
//! dA0/dtau = (1-gamma) r - beta + iota xbar A1,   A0(0) = 0,
//! ```
//!
//! with
//!
//! ```text
//! a = nubar^2 [rho^2 + gamma (1 - rho^2)] / (2 gamma)
//! b = iota - (1-gamma) rho delta nubar / gamma
//! c = (1-gamma) delta^2 / (2 gamma)
//! ```
//!
//! When `b^2 > 4 a c` (the well-posedness inequality) the solution is a
//! bounded exponential bridge; otherwise it is a tangent branch that blows up
//! at a finite time-to-horizon. `beta` is a subjective discount rate that the
//! undiscounted objective does not carry; it is fixed to [`DISCOUNT_BETA`].

use serde::{Deserialize, Serialize};

use crate::error::{MertonError, Result};
use crate::market::{BsParams, SvParams};

/// Subjective discount rate in the `A0` equation. The objective is an
/// undiscounted terminal utility, so this stays zero.
pub const DISCOUNT_BETA: f64 = 0.0;

/// Riccati quadratic coefficients in time-to-horizon form.
fn riccati_coeffs(p: &SvParams, gamma: f64) -> (f64, f64, f64) {
    let a = p.nu_bar * p.nu_bar * (p.rho * p.rho + gamma * (1.0 - p.rho * p.rho)) / (2.0 * gamma);
    let b = p.iota - (1.0 - gamma) * p.rho * p.risk_premium_delta * p.nu_bar / gamma;
    let c = (1.0 - gamma) * p.risk_premium_delta * p.risk_premium_delta / (2.0 * gamma);
    (a, b, c)
}

/// Well-posedness inequality `iota^2 gamma > (1-gamma)(2 rho iota delta nubar
/// + delta^2 nubar^2)`, equivalently `b^2 - 4 a c > 0`.
pub fn sv_condition(p: &SvParams, gamma: f64) -> bool {
    let lhs = p.iota * p.iota * gamma;
    let rhs = (1.0 - gamma)
        * (2.0 * p.rho * p.iota * p.risk_premium_delta * p.nu_bar
            + p.risk_premium_delta * p.risk_premium_delta * p.nu_bar * p.nu_bar);
    lhs > rhs
}

/// Closed-form coefficients of the well-posed branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellPosedCoeffs {
    /// Exponent rate (negative).
    pub psi0: f64,
    /// Bridge numerator loading; equals the product of the quadratic's roots.
    pub psi1: f64,
    /// Larger root of the quadratic.
    pub psi2: f64,
    /// Smaller root of the quadratic; also the infinite-horizon bridge limit.
    pub psi3: f64,
    /// Linear rate of `A0`.
    pub psi4: f64,
    /// Log-term loading of `A0`.
    pub psi5: f64,
}

/// Closed-form coefficients of the blow-up (tangent) branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUpCoeffs {
    /// Vertex level `b / (2a)`.
    pub center: f64,
    /// Tangent amplitude.
    pub amplitude: f64,
    /// Tangent frequency.
    pub frequency: f64,
    /// Phase `arctan(center / amplitude)`.
    pub phase: f64,
    /// Linear rate of `A0`.
    pub a0_rate: f64,
    /// Log-cosine loading of `A0`.
    pub a0_log: f64,
    /// First pole in time-to-horizon.
    pub pole_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RiccatiBranch {
    WellPosed(WellPosedCoeffs),
    BlowUp(BlowUpCoeffs),
}

/// Solution of the Riccati system, either in closed form or tabulated from a
/// numerical integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub horizon: f64,
    pub kind: RiccatiKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RiccatiKind {
    Closed(RiccatiBranch),
    /// Runge-Kutta tabulation on a uniform tau grid from 0 to `tau_max`.
    Tabulated { tau: Vec<f64>, a1: Vec<f64>, a0: Vec<f64>, diverged_at: Option<f64> },
}

impl RiccatiSolution {
    pub fn is_well_posed(&self) -> bool {
        match &self.kind {
            RiccatiKind::Closed(RiccatiBranch::WellPosed(_)) => true,
            RiccatiKind::Closed(RiccatiBranch::BlowUp(_)) => false,
            RiccatiKind::Tabulated { diverged_at, .. } => diverged_at.is_none(),
        }
    }

    /// Location of the blow-up pole in time-to-horizon, when on that branch.
    pub fn pole_tau(&self) -> Option<f64> {
        match &self.kind {
            RiccatiKind::Closed(RiccatiBranch::BlowUp(c)) => Some(c.pole_tau),
            RiccatiKind::Tabulated { diverged_at, .. } => *diverged_at,
            _ => None,
        }
    }

    /// Bridge coefficient at calendar time `t`.
    pub fn a1(&self, t: f64) -> Result<f64> {
        let tau = self.horizon - t;
        match &self.kind {
            RiccatiKind::Closed(RiccatiBranch::WellPosed(c)) => {
                let e = (c.psi0 * tau).exp();
                Ok(c.psi1 * (e - 1.0) / (-c.psi2 + c.psi3 * e))
            }
            RiccatiKind::Closed(RiccatiBranch::BlowUp(c)) => {
                if tau >= c.pole_tau {
                    return Err(MertonError::BlowUp { pole_tau: c.pole_tau });
                }
                Ok(c.center + c.amplitude * (c.frequency * tau - c.phase).tan())
            }
            RiccatiKind::Tabulated { tau: grid, a1, diverged_at, .. } => {
                if let Some(pole) = diverged_at {
                    if tau >= *pole {
                        return Err(MertonError::BlowUp { pole_tau: *pole });
                    }
                }
                Ok(interp(grid, a1, tau))
            }
        }
    }

    /// Constant term at calendar time `t`.
    pub fn a0(&self, t: f64) -> Result<f64> {
        let tau = self.horizon - t;
        match &self.kind {
            RiccatiKind::Closed(RiccatiBranch::WellPosed(c)) => {
                let e = (c.psi0 * tau).exp();
                let ratio = (-c.psi2 + c.psi3 * e) / (-c.psi2 + c.psi3);
                Ok(c.psi4 * tau + c.psi5 * ratio.ln())
            }
            RiccatiKind::Closed(RiccatiBranch::BlowUp(c)) => {
                if tau >= c.pole_tau {
                    return Err(MertonError::BlowUp { pole_tau: c.pole_tau });
                }
                let ratio = (c.frequency * tau - c.phase).cos() / (-c.phase).cos();
                Ok(c.a0_rate * tau + c.a0_log * ratio.ln())
            }
            RiccatiKind::Tabulated { tau: grid, a0, diverged_at, .. } => {
                if let Some(pole) = diverged_at {
                    if tau >= *pole {
                        return Err(MertonError::BlowUp { pole_tau: *pole });
                    }
                }
                Ok(interp(grid, a0, tau))
            }
        }
    }

    /// Optimal-value exponent `A1(t) x + A0(t)` at the factor level `x`.
    pub fn value_exponent(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.a1(t)? * x + self.a0(t)?)
    }
}

fn interp(grid: &[f64], values: &[f64], tau: f64) -> f64 {
    debug_assert!(grid.len() >= 2);
    let h = grid[1] - grid[0];
    let pos = (tau - grid[0]) / h;
    if pos <= 0.0 {
        return values[0];
    }
    let idx = pos.floor() as usize;
    if idx + 1 >= grid.len() {
        return *values.last().unwrap();
    }
    let frac = pos - idx as f64;
    values[idx] * (1.0 - frac) + values[idx + 1] * frac
}

/// Closed-form Riccati solution; picks the branch from the well-posedness
/// inequality.
pub fn sv_riccati_closed_form(p: &SvParams, gamma: f64, horizon: f64) -> Result<RiccatiSolution> {
    p.validate()?;
    if !(gamma > 0.0) || gamma == 1.0 || !(horizon > 0.0) {
        return Err(MertonError::InvalidParameter(format!(
            "need gamma > 0, gamma != 1, horizon > 0 (got gamma={gamma}, horizon={horizon})"
        )));
    }
    let (a, b, c) = riccati_coeffs(p, gamma);
    let disc = b * b - 4.0 * a * c;
    let denom_scale =
        p.nu_bar * p.nu_bar * (p.rho * p.rho + gamma * (1.0 - p.rho * p.rho));
    if denom_scale <= 0.0 {
        // nubar = 0: the factor is deterministic and A1 solves a linear ODE;
        // treat through the numeric route instead.
        return Err(MertonError::InvalidParameter(
            "closed form requires nu_bar > 0; use the numeric solver".into(),
        ));
    }
    let branch = if disc > 0.0 {
        let s = disc.sqrt();
        let psi2 = (b + s) / (2.0 * a);
        let psi3 = (b - s) / (2.0 * a);
        RiccatiBranch::WellPosed(WellPosedCoeffs {
            psi0: -s,
            psi1: c / a,
            psi2,
            psi3,
            psi4: (1.0 - gamma) * p.r - DISCOUNT_BETA + p.iota * p.x_bar * psi3,
            psi5: -2.0 * gamma * p.iota * p.x_bar / denom_scale,
        })
    } else {
        let center = b / (2.0 * a);
        let amplitude = (-disc).sqrt() / (2.0 * a);
        let frequency = (-disc).sqrt() / 2.0;
        let phase = (center / amplitude).atan();
        let pole_tau = (std::f64::consts::FRAC_PI_2 + phase) / frequency;
        RiccatiBranch::BlowUp(BlowUpCoeffs {
            center,
            amplitude,
            frequency,
            phase,
            a0_rate: (1.0 - gamma) * p.r - DISCOUNT_BETA + p.iota * p.x_bar * center,
            a0_log: -2.0 * gamma * p.iota * p.x_bar / denom_scale,
            pole_tau,
        })
    };
    Ok(RiccatiSolution { horizon, kind: RiccatiKind::Closed(branch) })
}

/// Divergence threshold for the numeric integration.
const BLOWUP_THRESHOLD: f64 = 1e8;

/// Classic fourth-order Runge-Kutta integration of the Riccati system
/// backward from the horizon, tabulated on `steps` uniform intervals.
pub fn sv_riccati_numeric(
    p: &SvParams,
    gamma: f64,
    horizon: f64,
    steps: usize,
) -> Result<RiccatiSolution> {
    p.validate()?;
    if steps < 100 {
        return Err(MertonError::InvalidParameter(format!("steps must be >= 100, got {steps}")));
    }
    let (a, b, c) = riccati_coeffs(p, gamma);
    let rate0 = (1.0 - gamma) * p.r - DISCOUNT_BETA;
    let f1 = |a1: f64| a * a1 * a1 - b * a1 + c;
    let f0 = |a1: f64| rate0 + p.iota * p.x_bar * a1;

    let h = horizon / steps as f64;
    let mut tau = Vec::with_capacity(steps + 1);
    let mut a1v = Vec::with_capacity(steps + 1);
    let mut a0v = Vec::with_capacity(steps + 1);
    let (mut y1, mut y0) = (0.0f64, 0.0f64);
    tau.push(0.0);
    a1v.push(y1);
    a0v.push(y0);
    let mut diverged_at = None;
    for i in 0..steps {
        let k1 = f1(y1);
        let l1 = f0(y1);
        let k2 = f1(y1 + 0.5 * h * k1);
        let l2 = f0(y1 + 0.5 * h * k1);
        let k3 = f1(y1 + 0.5 * h * k2);
        let l3 = f0(y1 + 0.5 * h * k2);
        let k4 = f1(y1 + h * k3);
        let l4 = f0(y1 + h * k3);
        y1 += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        y0 += h * (l1 + 2.0 * l2 + 2.0 * l3 + l4) / 6.0;
        if !y1.is_finite() || y1.abs() > BLOWUP_THRESHOLD {
            diverged_at = Some((i + 1) as f64 * h);
            break;
        }
        tau.push((i + 1) as f64 * h);
        a1v.push(y1);
        a0v.push(y0);
    }
    Ok(RiccatiSolution {
        horizon,
        kind: RiccatiKind::Tabulated { tau, a1: a1v, a0: a0v, diverged_at },
    })
}

/// Optimal allocation `u*(t, g) = (delta/gamma + rho nubar A1(t)/gamma)
/// g^{(alpha-1)/2}` for the stochastic-volatility market.
pub fn sv_optimal_policy(
    sol: &RiccatiSolution,
    p: &SvParams,
    gamma: f64,
    t: f64,
    g: f64,
) -> Result<f64> {
    if !sol.is_well_posed() {
        return Err(MertonError::BlowUp { pole_tau: sol.pole_tau().unwrap_or(f64::NAN) });
    }
    let a1 = sol.a1(t)?;
    Ok((p.risk_premium_delta / gamma + p.rho * p.nu_bar * a1 / gamma)
        * g.powf((p.alpha - 1.0) / 2.0))
}

/// Ground truth for the Black-Scholes market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsGroundTruth {
    pub theta_star: f64,
    /// Exponent rate of the deterministic-optimum value:
    /// `V0(t, w) = (w^{1-gamma} e^{rate (T-t)} - 1)/(1-gamma)`.
    pub value_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: f64,
}

impl BsGroundTruth {
    /// Optimal value of the randomized problem at temperature `lambda`.
    pub fn value(&self, t: f64, w: f64) -> f64 {
        let tau = self.horizon - t;
        let e = self.value_rate * tau - self.lambda * (1.0 - self.gamma) * tau / 2.0;
        (w.powf(1.0 - self.gamma) * e.exp() - 1.0) / (1.0 - self.gamma)
    }

    /// Deterministic-policy optimum (`lambda = 0`).
    pub fn value_deterministic(&self, t: f64, w: f64) -> f64 {
        let e = self.value_rate * (self.horizon - t);
        (w.powf(1.0 - self.gamma) * e.exp() - 1.0) / (1.0 - self.gamma)
    }
}

/// Black-Scholes ground truth: `theta* = (mu - r) / (gamma sigma^2)` and the
/// closed-form optimal value.
pub fn bs_ground_truth(p: &BsParams, gamma: f64, lambda: f64, horizon: f64) -> Result<BsGroundTruth> {
    if !(gamma > 0.0) || gamma == 1.0 {
        return Err(MertonError::InvalidParameter(format!(
            "gamma must be positive and != 1, got {gamma}"
        )));
    }
    let excess = p.mu - p.r;
    let sigma2 = p.sigma * p.sigma;
    Ok(BsGroundTruth {
        theta_star: excess / (gamma * sigma2),
        value_rate: (p.r + excess * excess / (2.0 * gamma * sigma2)) * (1.0 - gamma),
        gamma,
        lambda,
        horizon,
    })
}

/// Invert the certainty-equivalent relation: the wealth fraction `Delta` such
/// that the deterministic optimum started from `w0 (1 - Delta)` equals the
/// achieved average utility.
///
/// `exponent0` is the optimal-value exponent at evaluation start (for the
/// stochastic-volatility market `A1(0) x0 + A0(0)`, for Black-Scholes
/// `value_rate * T`). Returned signed: a utility above the optimum produces a
/// negative loss.
pub fn erwl_from_utility(u_bar: f64, w0: f64, exponent0: f64, gamma: f64) -> Result<f64> {
    let scaled = (1.0 - gamma) * u_bar + 1.0;
    if !(scaled > 0.0) {
        return Err(MertonError::InvalidParameter(format!(
            "(1-gamma) u + 1 must be positive, got {scaled}"
        )));
    }
    let base = scaled * (-exponent0).exp();
    Ok(1.0 - base.powf(1.0 / (1.0 - gamma)) / w0)
}

/// ERWL of the optimal randomized policy at temperature `lambda`:
/// `1 - exp(-lambda T / 2)`.
pub fn erwl_exploratory(lambda: f64, horizon: f64) -> f64 {
    1.0 - (-lambda * horizon / 2.0).exp()
}

/// ERWL of the constant deterministic allocation `theta` in a Black-Scholes
/// market: `1 - exp(-T gamma sigma^2 (theta - theta*)^2 / 2)`.
pub fn erwl_bs_deterministic(theta: f64, p: &BsParams, gamma: f64, horizon: f64) -> f64 {
    let theta_star = (p.mu - p.r) / (gamma * p.sigma * p.sigma);
    let d = theta - theta_star;
    1.0 - (-horizon * gamma * p.sigma * p.sigma * d * d / 2.0).exp()
}
