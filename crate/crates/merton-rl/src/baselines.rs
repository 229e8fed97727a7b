//! Reference strategies: buy-and-hold and the estimate-then-plug-in method.
//!
//! The plug-in method fits the stochastic-volatility model to an observed
//! `(S, G)` series by maximizing a Gaussian transition likelihood built from
//! the Euler discretization, then evaluates the closed-form optimal policy at
//! the fitted parameters. Its well-posedness flag records whether the fitted
//! parameters admit the bounded bridge solution at all; a fit that lands on
//! the blow-up branch cannot produce a finite-leverage policy.

use serde::{Deserialize, Serialize};

use crate::error::{MertonError, Result};
use crate::market::SvParams;
use crate::oracle::{sv_condition, sv_riccati_closed_form, RiccatiSolution};
use crate::policy::{MeanFn, PowerLawPolicy};

/// The buy-and-hold policy: allocation 1 at every state.
pub fn buy_and_hold() -> MeanFn {
    MeanFn::PowerLaw(PowerLawPolicy { c1: 1.0, c2: 0.0 })
}

/// Output of the maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvEstimate {
    pub params: SvParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Whether the fitted parameters satisfy the well-posedness inequality
    /// for the risk aversion they will be plugged into.
    pub condition_satisfied: bool,
    pub gamma: f64,
}

/// Gaussian transition log-likelihood of an observed `(s, g)` series under
/// the Euler discretization, together with its gradient.
///
/// Transitions are `(dlog S, dX)` with the factor recovered from the observed
/// variance as `x = g^alpha` at the current elasticity. The gradient covers
/// `(delta, iota, x_bar, nu_bar, rho)` analytically and `alpha` by central
/// finite differences.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodEval {
    pub log_likelihood: f64,
    /// Gradient in the order `(delta, iota, x_bar, nu_bar, rho, alpha)`.
    pub grad: [f64; 6],
}

/// Eigenvalue floor applied when the transition covariance degenerates
/// (correlation near +-1 or vanishing vol-of-vol).
const COVARIANCE_FLOOR: f64 = 1e-10;

pub fn sv_log_likelihood(s: &[f64], g: &[f64], p: &SvParams, dt: f64) -> Result<LikelihoodEval> {
    let ll_only = |q: &SvParams| -> Result<f64> { Ok(log_likelihood_core(s, g, q, dt)?.0) };

    let (ll, grad5) = log_likelihood_core(s, g, p, dt)?;
    // alpha enters through the data transform as well as the coefficients;
    // differentiate numerically.
    let h = 1e-6 * p.alpha.abs().max(1.0);
    let mut up = *p;
    up.alpha += h;
    let mut dn = *p;
    dn.alpha -= h;
    let d_alpha = (ll_only(&up)? - ll_only(&dn)?) / (2.0 * h);
    Ok(LikelihoodEval {
        log_likelihood: ll,
        grad: [grad5[0], grad5[1], grad5[2], grad5[3], grad5[4], d_alpha],
    })
}

fn log_likelihood_core(s: &[f64], g: &[f64], p: &SvParams, dt: f64) -> Result<(f64, [f64; 5])> {
    if s.len() != g.len() || s.len() < 2 {
        return Err(MertonError::Validation(
            "need matching s and g series with at least 2 observations".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(MertonError::InvalidParameter("dt must be positive".into()));
    }
    let n = s.len() - 1;
    let drift_pow = (1.0 + p.alpha) / (2.0 * p.alpha);
    let mut ll = 0.0;
    let mut g_delta = 0.0;
    let mut g_iota = 0.0;
    let mut g_xbar = 0.0;
    let mut g_nubar = 0.0;
    let mut g_rho = 0.0;

    // Degenerate covariances are floored and flagged through the flooring
    // itself; the quadratic form then uses the floored eigenvalue scale.
    let rho = p.rho.clamp(-0.999999, 0.999999);
    let one_minus_rho2 = (1.0 - rho * rho).max(COVARIANCE_FLOOR);

    for k in 0..n {
        let gk = g[k];
        let xk = gk.powf(p.alpha);
        let x_next = g[k + 1].powf(p.alpha);
        if !(gk > 0.0) || !xk.is_finite() || !x_next.is_finite() {
            return Err(MertonError::Validation(format!(
                "nonpositive or non-finite variance data at transition {k}"
            )));
        }
        let d_logs = (s[k + 1] / s[k]).ln();
        let dx = x_next - xk;

        let m1 = (p.r + p.risk_premium_delta * xk.powf(drift_pow) - 0.5 * gk) * dt;
        let m2 = p.iota * (p.x_bar - xk) * dt;
        let v1 = (gk * dt).max(COVARIANCE_FLOOR);
        let v2 = (p.nu_bar * p.nu_bar * xk * dt).max(COVARIANCE_FLOOR);
        let s12 = (v1 * v2).sqrt();

        let e1 = d_logs - m1;
        let e2 = dx - m2;
        // bivariate normal with correlation rho:
        // ll_k = -log(2 pi) - 0.5 log(v1 v2 (1-rho^2))
        //        - (q1 - 2 rho q12 + q2) / (2 (1-rho^2))
        let q1 = e1 * e1 / v1;
        let q12 = e1 * e2 / s12;
        let q2 = e2 * e2 / v2;
        let quad = (q1 - 2.0 * rho * q12 + q2) / one_minus_rho2;
        ll += -(2.0 * std::f64::consts::PI).ln()
            - 0.5 * (v1 * v2 * one_minus_rho2).ln()
            - 0.5 * quad;

        // d ll / d e1 = -(e1/v1 - rho e2/s12) / (1-rho^2); the means enter
        // the residuals negatively, so d e1/d delta = -x^pow dt and so on.
        let dll_de1 = -(e1 / v1 - rho * e2 / s12) / one_minus_rho2;
        let dll_de2 = -(e2 / v2 - rho * e1 / s12) / one_minus_rho2;
        g_delta -= dll_de1 * xk.powf(drift_pow) * dt;
        g_iota -= dll_de2 * (p.x_bar - xk) * dt;
        g_xbar -= dll_de2 * p.iota * dt;

        // v2 carries nu_bar; only terms touching v2 contribute:
        // d ll / d v2 = -0.5/v2 - 0.5 d quad/d v2 with
        // d q2/d v2 = -q2/v2, d q12/d v2 = -q12/(2 v2)
        if p.nu_bar * p.nu_bar * xk * dt > COVARIANCE_FLOOR {
            let dll_dv2 = -0.5 / v2 - 0.5 * (rho * q12 / v2 - q2 / v2) / one_minus_rho2;
            g_nubar += dll_dv2 * 2.0 * p.nu_bar * xk * dt;
        }
        // d ll / d rho at fixed (v1, v2)
        g_rho += rho / one_minus_rho2 + q12 / one_minus_rho2
            - rho * quad / one_minus_rho2;
    }
    Ok((ll, [g_delta, g_iota, g_xbar, g_nubar, g_rho]))
}

/// How the elasticity exponent is treated during the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Keep alpha at its initialization (the default; see below).
    Fixed,
    /// Ascend jointly on the finite-difference alpha gradient. The Gaussian
    /// transition likelihood above omits the change-of-variables term of the
    /// factor transform, so this direction is unbounded on exact data and is
    /// kept only for experimentation.
    Joint,
}

/// Maximum-likelihood fit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub steps: usize,
    /// Initial step scale of the backtracking ascent.
    pub rate: f64,
    pub alpha_mode: AlphaMode,
    /// Risk aversion the estimate will be plugged into (for the flag).
    pub gamma: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { steps: 400, rate: 1.0, alpha_mode: AlphaMode::Fixed, gamma: 3.0 }
    }
}

/// Parameter scales used to precondition the ascent direction; the raw
/// gradient components differ by orders of magnitude.
const PARAM_SCALES: [f64; 6] = [0.1, 0.1, 10.0, 0.1, 0.1, 0.1];

fn pack(p: &SvParams) -> [f64; 6] {
    [p.risk_premium_delta, p.iota, p.x_bar, p.nu_bar, p.rho, p.alpha]
}

/// Project candidate values back into the admissible parameter region.
fn unpack(v: &[f64; 6], r: f64) -> SvParams {
    let alpha = if v[5].abs() < 1e-3 {
        // keep the elasticity away from the singular point alpha = 0
        if v[5] < 0.0 {
            -1e-3
        } else {
            1e-3
        }
    } else {
        v[5]
    };
    SvParams {
        risk_premium_delta: v[0],
        r,
        alpha,
        iota: v[1].max(0.0),
        x_bar: v[2].max(1e-8),
        nu_bar: v[3].max(1e-8),
        rho: v[4].clamp(-0.995, 0.995),
    }
}

/// Gradient ascent with backtracking halving on likelihood decrease.
///
/// The ascent direction is the gradient preconditioned by fixed per-parameter
/// scales and normalized, so `rate` is the trust-region radius in scaled
/// units. A step that fails to improve the likelihood is halved up to 30
/// times before the iteration is counted as stalled; 10 consecutive stalls
/// terminate early.
pub fn fit_sv_mle(s: &[f64], g: &[f64], init: &SvParams, dt: f64, cfg: &MleConfig) -> Result<SvEstimate> {
    let mut current = *init;
    let mut eval = sv_log_likelihood(s, g, &current, dt)?;
    let mut stalls = 0usize;
    let mut iterations = 0usize;

    for _ in 0..cfg.steps {
        iterations += 1;
        let mut direction = [0.0f64; 6];
        let active = match cfg.alpha_mode {
            AlphaMode::Fixed => 5,
            AlphaMode::Joint => 6,
        };
        let mut norm2 = 0.0;
        for i in 0..active {
            direction[i] = eval.grad[i] * PARAM_SCALES[i] * PARAM_SCALES[i];
            let scaled = direction[i] / PARAM_SCALES[i];
            norm2 += scaled * scaled;
        }
        let norm = norm2.sqrt().max(1.0);
        let mut step = cfg.rate;
        let mut improved = false;
        for _ in 0..30 {
            let mut candidate = pack(&current);
            for i in 0..active {
                candidate[i] += step * direction[i] / norm;
            }
            let cand_params = unpack(&candidate, current.r);
            match sv_log_likelihood(s, g, &cand_params, dt) {
                Ok(cand_eval)
                    if cand_eval.log_likelihood.is_finite()
                        && cand_eval.log_likelihood >= eval.log_likelihood =>
                {
                    current = cand_params;
                    eval = cand_eval;
                    improved = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if improved {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= 10 {
                break;
            }
        }
    }
    Ok(SvEstimate {
        params: current,
        log_likelihood: eval.log_likelihood,
        iterations,
        condition_satisfied: sv_condition(&current, cfg.gamma),
        gamma: cfg.gamma,
    })
}

/// Exactly one ascent step on the latest data window, for daily rolling
/// re-estimation.
pub fn rolling_mle_step(
    est: &SvEstimate,
    s_window: &[f64],
    g_window: &[f64],
    dt: f64,
    rate: f64,
) -> Result<SvEstimate> {
    let cfg = MleConfig { steps: 1, rate, alpha_mode: AlphaMode::Fixed, gamma: est.gamma };
    fit_sv_mle(s_window, g_window, &est.params, dt, &cfg)
}

/// The plug-in policy: the closed-form optimum evaluated at the estimate.
///
/// Fails with a structured error when the estimate violates the
/// well-posedness inequality, so the caller can record the run as infeasible
/// or fall back to an earlier feasible estimate.
pub struct PlugInPolicy {
    pub solution: RiccatiSolution,
    pub params: SvParams,
    pub gamma: f64,
}

impl PlugInPolicy {
    pub fn mean(&self, t: f64, g: f64) -> Result<f64> {
        crate::oracle::sv_optimal_policy(&self.solution, &self.params, self.gamma, t, g)
    }

    /// Infinite-horizon (time-invariant) allocation, used by rolling
    /// backtests: the bridge is held at its long-horizon limit.
    pub fn mean_stationary(&self, g: f64) -> Result<f64> {
        let a1_limit = match &self.solution.kind {
            crate::oracle::RiccatiKind::Closed(crate::oracle::RiccatiBranch::WellPosed(c)) => {
                c.psi3
            }
            _ => return Err(MertonError::IllPosedEstimate),
        };
        Ok(
            (self.params.risk_premium_delta / self.gamma
                + self.params.rho * self.params.nu_bar * a1_limit / self.gamma)
                * g.powf((self.params.alpha - 1.0) / 2.0),
        )
    }
}

pub fn plug_in_policy(est: &SvEstimate, gamma: f64, horizon: f64) -> Result<PlugInPolicy> {
    if !est.condition_satisfied || !sv_condition(&est.params, gamma) {
        return Err(MertonError::IllPosedEstimate);
    }
    let solution = sv_riccati_closed_form(&est.params, gamma, horizon)?;
    if !solution.is_well_posed() {
        return Err(MertonError::IllPosedEstimate);
    }
    Ok(PlugInPolicy { solution, params: est.params, gamma })
}
