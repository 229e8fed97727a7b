//! Market simulators and the wealth recursion.
//!
//! The stochastic-volatility market has one stock and one factor,
//!
//! ```text
//! dS/S = mu(t,X) dt + sigma(t,X) dB
//! dX   = iota (xbar - X) dt + nubar sqrt(X) [rho dB + sqrt(1-rho^2) dB~]
//! ```
//!
//! with `mu(t,x) = r + delta x^{(1+alpha)/(2 alpha)}` and
//! `sigma(t,x) = x^{1/(2 alpha)}`, so the instantaneous variance observed by
//! the agent is `G = sigma^2 = X^{1/alpha}`. The Black-Scholes market is the
//! constant-coefficient special case with no factor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MertonError, Result};
use crate::policy::GaussianPolicy;
use crate::rng::{SeedSpec, StreamTag};

/// Floor applied to the factor after each Euler step and to perturbed
/// variances. The factor is strictly positive in law; reflecting here avoids
/// NaN cascades at desk-scale step sizes.
pub const POSITIVITY_FLOOR: f64 = 1e-10;

/// Black-Scholes market coefficients (per year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsParams {
    /// Expected return of the stock.
    pub mu: f64,
    /// Risk-free rate.
    pub r: f64,
    /// Volatility per sqrt-year.
    pub sigma: f64,
}

impl BsParams {
    pub fn new(mu: f64, r: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !r.is_finite() {
            return Err(MertonError::InvalidParameter(format!(
                "BsParams require sigma > 0 and finite mu, r (got mu={mu}, r={r}, sigma={sigma})"
            )));
        }
        Ok(BsParams { mu, r, sigma })
    }
}

/// Stochastic-volatility market coefficients.
///
/// `alpha = -1` gives the 3/2 model, where the variance is the reciprocal of
/// the mean-reverting factor and the stock drift is the constant `r + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    /// Risk-premium coefficient.
    pub risk_premium_delta: f64,
    /// Risk-free rate.
    pub r: f64,
    /// Elasticity exponent (nonzero).
    pub alpha: f64,
    /// Mean-reversion speed of the factor, per year.
    pub iota: f64,
    /// Long-run factor mean.
    pub x_bar: f64,
    /// Vol-of-vol coefficient.
    pub nu_bar: f64,
    /// Correlation between stock and factor shocks, in (-1, 1).
    pub rho: f64,
}

impl SvParams {
    pub fn new(
        risk_premium_delta: f64,
        r: f64,
        alpha: f64,
        iota: f64,
        x_bar: f64,
        nu_bar: f64,
        rho: f64,
    ) -> Result<Self> {
        let p = SvParams { risk_premium_delta, r, alpha, iota, x_bar, nu_bar, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(MertonError::InvalidParameter("alpha must be nonzero".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(MertonError::InvalidParameter(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if !(self.iota >= 0.0) || !(self.nu_bar >= 0.0) || !(self.x_bar > 0.0) {
            return Err(MertonError::InvalidParameter(format!(
                "require iota >= 0, nu_bar >= 0, x_bar > 0 (got iota={}, nu_bar={}, x_bar={})",
                self.iota, self.nu_bar, self.x_bar
            )));
        }
        Ok(())
    }

    /// The simulation-study parameter set: the 3/2 model with coefficients
    /// adapted from estimated index data.
    pub fn simulation_study() -> Self {
        SvParams {
            risk_premium_delta: 0.2811,
            r: 0.02,
            alpha: -1.0,
            iota: 0.1374,
            x_bar: 35.0,
            nu_bar: 0.9503,
            rho: 0.5241,
        }
    }

    /// Stock drift `mu(t,x) = r + delta x^{(1+alpha)/(2 alpha)}`.
    pub fn mu(&self, x: f64) -> f64 {
        self.r + self.risk_premium_delta * x.powf((1.0 + self.alpha) / (2.0 * self.alpha))
    }

    /// Instantaneous variance `g = sigma^2(t,x) = x^{1/alpha}`.
    pub fn variance(&self, x: f64) -> f64 {
        x.powf(1.0 / self.alpha)
    }

    /// Factor value implied by an observed variance, `x = g^alpha`.
    pub fn factor_from_variance(&self, g: f64) -> f64 {
        g.powf(self.alpha)
    }
}

/// Equally spaced time grid `t0 = t_0 < t_1 < ... < t_K = t0 + horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Grid with `steps` equal intervals covering `[t0, t0 + horizon]`.
    pub fn from_steps(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(MertonError::InvalidParameter(format!(
                "time grid requires steps >= 1 and horizon > 0 (got {steps}, {horizon})"
            )));
        }
        Ok(TimeGrid { t0, horizon, dt: horizon / steps as f64, steps })
    }

    /// Grid with step `dt`; `horizon / dt` must be an integer up to 1e-12.
    pub fn from_dt(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(MertonError::InvalidParameter(format!(
                "time grid requires dt > 0 and horizon > 0 (got dt={dt}, horizon={horizon})"
            )));
        }
        let steps_f = horizon / dt;
        let steps = steps_f.round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-12 * horizon.max(1.0) {
            return Err(MertonError::InvalidParameter(format!(
                "horizon {horizon} is not an integer multiple of dt {dt}"
            )));
        }
        Ok(TimeGrid { t0, horizon, dt, steps: steps as usize })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// A simulated trajectory of stock price, factor and instantaneous variance,
/// optionally carrying a noisy variance observation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPath {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub g_noisy: Option<Vec<f64>>,
}

impl MarketPath {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.s.len().saturating_sub(1)
    }

    /// The variance series the agent observes: the noisy channel when present
    /// and requested, the exact one otherwise.
    pub fn observed_g(&self, noisy: bool) -> &[f64] {
        match (&self.g_noisy, noisy) {
            (Some(gn), true) => gn,
            _ => &self.g,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.s.len() != n || self.x.len() != n || self.g.len() != n {
            return Err(MertonError::Validation("path vectors must share one length".into()));
        }
        if let Some(gn) = &self.g_noisy {
            if gn.len() != n {
                return Err(MertonError::Validation("noisy variance length mismatch".into()));
            }
        }
        if self.s.iter().any(|&v| !(v > 0.0)) || self.g.iter().any(|&v| !(v > 0.0)) {
            return Err(MertonError::Validation("prices and variances must be positive".into()));
        }
        Ok(())
    }
}

/// One Euler-Maruyama trajectory of the stochastic-volatility market.
///
/// The log-price is stepped by Euler-Maruyama on `d log S`, which keeps prices
/// positive and makes the Gaussian transition of `(dlog S, dX)` the exact law
/// of the generated data. The factor is stepped in levels and reflected at
/// [`POSITIVITY_FLOOR`]. The correlated pair is `(z1, rho z1 + sqrt(1-rho^2) z2)`.
pub fn simulate_sv_path<R: Rng + ?Sized>(
    p: &SvParams,
    grid: &TimeGrid,
    x0: f64,
    rng: &mut R,
) -> Result<MarketPath> {
    p.validate()?;
    if !(x0 > 0.0) {
        return Err(MertonError::InvalidParameter(format!("x0 must be positive, got {x0}")));
    }
    let n = grid.steps;
    let sqrt_dt = grid.dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();

    let mut times = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n + 1);
    let mut g = Vec::with_capacity(n + 1);

    let mut log_s = 0.0f64;
    let mut xk = x0;
    times.push(grid.t0);
    s.push(1.0);
    x.push(xk);
    g.push(p.variance(xk));

    for k in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let gv = p.variance(xk);
        log_s += (p.mu(xk) - 0.5 * gv) * grid.dt + gv.sqrt() * sqrt_dt * z1;
        xk = (xk
            + p.iota * (p.x_bar - xk) * grid.dt
            + p.nu_bar * xk.sqrt() * sqrt_dt * (p.rho * z1 + rho_c * z2))
            .max(POSITIVITY_FLOOR);
        if !log_s.is_finite() || !xk.is_finite() {
            return Err(MertonError::SimulationDiverged {
                step: k,
                what: format!("log_s={log_s}, x={xk}"),
            });
        }
        times.push(grid.time(k + 1));
        s.push(log_s.exp());
        x.push(xk);
        g.push(p.variance(xk));
    }

    let path = MarketPath { times, s, x, g, g_noisy: None };
    path.validate()?;
    Ok(path)
}

/// One Black-Scholes trajectory with exact log-normal stepping; the variance
/// column is filled with the constant `sigma^2` and the factor column with 1.
pub fn simulate_bs_path<R: Rng + ?Sized>(
    p: &BsParams,
    grid: &TimeGrid,
    s0: f64,
    rng: &mut R,
) -> Result<MarketPath> {
    if !(s0 > 0.0) {
        return Err(MertonError::InvalidParameter(format!("s0 must be positive, got {s0}")));
    }
    let n = grid.steps;
    let sqrt_dt = grid.dt.sqrt();
    let drift = (p.mu - 0.5 * p.sigma * p.sigma) * grid.dt;
    let g_const = p.sigma * p.sigma;

    let mut times = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut log_s = s0.ln();
    times.push(grid.t0);
    s.push(s0);
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        log_s += drift + p.sigma * sqrt_dt * z;
        times.push(grid.time(k + 1));
        s.push(log_s.exp());
    }
    Ok(MarketPath {
        times,
        s,
        x: vec![1.0; n + 1],
        g: vec![g_const; n + 1],
        g_noisy: None,
    })
}

/// One self-financing wealth step:
/// `w' = w (1 + a (s'/s - 1) + (1 - a) r dt)`.
pub fn wealth_step(w: f64, a: f64, gross_stock_ratio: f64, r: f64, dt: f64) -> Result<f64> {
    debug_assert!(w > 0.0);
    let w_next = w * (1.0 + a * (gross_stock_ratio - 1.0) + (1.0 - a) * r * dt);
    if w_next <= 0.0 || !w_next.is_finite() {
        return Err(MertonError::Bankruptcy { step: 0, wealth: w_next });
    }
    Ok(w_next)
}

/// Wealth and action trajectories obtained by sampling the policy along a path.
#[derive(Debug, Clone)]
pub struct SampledWealth {
    pub wealth: Vec<f64>,
    pub actions: Vec<f64>,
}

/// Walk a market path, at each grid time sampling an action from the policy
/// (fed the observed variance) and advancing wealth by [`wealth_step`].
///
/// Episode-relative times `k dt` are fed to the policy, so windows cut from a
/// long dataset behave like fresh episodes.
pub fn simulate_sampled_wealth<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    path: &MarketPath,
    w0: f64,
    r: f64,
    noisy_observations: bool,
    rng: &mut R,
) -> Result<SampledWealth> {
    let steps = path.steps();
    let g_obs = path.observed_g(noisy_observations);
    let mut wealth = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut w = w0;
    wealth.push(w);
    for k in 0..steps {
        let dt = path.times[k + 1] - path.times[k];
        let t = path.times[k] - path.times[0];
        let a = policy.sample(t, g_obs[k], rng);
        w = wealth_step(w, a, path.s[k + 1] / path.s[k], r, dt)
            .map_err(|_| MertonError::Bankruptcy { step: k, wealth: w })?;
        wealth.push(w);
        actions.push(a);
    }
    Ok(SampledWealth { wealth, actions })
}

/// Simulate the exploratory wealth dynamics driven by three independent
/// Brownian streams: the stock shock, the factor shock and the extra
/// randomization noise whose instantaneous variance is the policy variance.
///
/// With a degenerate policy (`lambda = 0`) the extra term vanishes and the
/// recursion coincides step by step with [`simulate_sampled_wealth`] run on
/// the same market stream with actions pinned to the mean.
pub fn simulate_exploratory_wealth<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    market: &ExploratoryMarket,
    grid: &TimeGrid,
    w0: f64,
    market_rng: &mut R,
    exploration_rng: &mut R,
) -> Result<Vec<f64>> {
    let path = match market {
        ExploratoryMarket::Bs(p) => simulate_bs_path(p, grid, 1.0, market_rng)?,
        ExploratoryMarket::Sv { p, x0 } => simulate_sv_path(p, grid, *x0, market_rng)?,
    };
    let r = match market {
        ExploratoryMarket::Bs(p) => p.r,
        ExploratoryMarket::Sv { p, .. } => p.r,
    };
    let sqrt_dt = grid.dt.sqrt();
    let mut wealth = Vec::with_capacity(grid.steps + 1);
    let mut w = w0;
    wealth.push(w);
    for k in 0..grid.steps {
        let t = k as f64 * grid.dt;
        let g = path.g[k];
        let mean = policy.mean(t, g);
        let var = policy.variance(g);
        let z_bar: f64 = exploration_rng.sample(StandardNormal);
        let diffusion_extra = (g * var).sqrt() * sqrt_dt * z_bar;
        let w_next = w
            * (1.0 + mean * (path.s[k + 1] / path.s[k] - 1.0)
                + (1.0 - mean) * r * grid.dt
                + diffusion_extra);
        if w_next <= 0.0 || !w_next.is_finite() {
            return Err(MertonError::Bankruptcy { step: k, wealth: w_next });
        }
        w = w_next;
        wealth.push(w);
    }
    Ok(wealth)
}

/// Market specification for the exploratory-dynamics simulator.
#[derive(Debug, Clone)]
pub enum ExploratoryMarket {
    Bs(BsParams),
    Sv { p: SvParams, x0: f64 },
}

/// Perturb a variance series into its noisy observation channel:
/// `g~ = (sqrt(g) + scale * xi)^2` with i.i.d. standard normal `xi`,
/// floored at [`POSITIVITY_FLOOR`].
pub fn noisy_volatility<R: Rng + ?Sized>(g: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    g.iter()
        .map(|&gv| {
            let xi: f64 = rng.sample(StandardNormal);
            let root = gv.sqrt() + scale * xi;
            (root * root).max(POSITIVITY_FLOOR)
        })
        .collect()
}

/// Default observation-noise scale for the noisy-volatility channel.
pub const NOISY_VOL_SCALE: f64 = 0.02;

/// Attach a noisy variance channel to a path using the dedicated stream tag.
pub fn attach_noisy_volatility(path: &mut MarketPath, scale: f64, seed: &SeedSpec, path_index: u64) {
    let mut rng = seed.stream(path_index, StreamTag::NoisyVolatility);
    path.g_noisy = Some(noisy_volatility(&path.g, scale, &mut rng));
}
