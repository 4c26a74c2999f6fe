//! Log returns and GARCH(2,1) margins with Gaussian innovations.
//!
//! `r_t = μ + ξ_t`, `ξ_t = σ_t ε_t`, and
//! `σ²_t = α0 + α1 ξ²_{t-1} + α2 ξ²_{t-2} + β1 σ²_{t-1}`.
//! Pre-sample values are `ξ = 0` and `σ² =` the sample variance.
//!
//! Fitting runs on the standardised series and maps back, which is exact
//! because the recursion is scale-equivariant. The optimiser works in an
//! unconstrained space: `ln α0`, a logistic for the total persistence
//! `α1 + α2 + β1 < 1`, and a softmax splitting it between the three terms.

use crate::error::{Error, Result};
use crate::optim::{bfgs_min, numeric_hessian};
use crate::stats::{mean, variance};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MIN_GARCH_LEN: usize = 300;
pub const FTOL: f64 = 1e-8;
pub const MAX_ITER: usize = 500;
const BURN_IN: usize = 500;

pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: prices.len() });
    }
    if let Some(i) = prices.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::Domain(format!("price at position {i} is not a positive number")));
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub mu: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
}

impl GarchParams {
    pub fn persistence(&self) -> f64 {
        self.alpha1 + self.alpha2 + self.beta1
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.alpha0 > 0.0
            && self.alpha0.is_finite()
            && [self.alpha1, self.alpha2, self.beta1].iter().all(|&a| a >= 0.0 && a.is_finite());
        if !ok {
            return Err(Error::Parameter(format!("invalid GARCH parameters {self:?}")));
        }
        if self.persistence() >= 1.0 {
            return Err(Error::NonStationary(self.persistence()));
        }
        Ok(())
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.persistence())
    }

    /// Conditional volatilities and standardised residuals for `returns`,
    /// started from pre-sample variance `init_var`.
    pub fn filter(&self, returns: &[f64], init_var: f64) -> (Vec<f64>, Vec<f64>) {
        let mut sigma = Vec::with_capacity(returns.len());
        let mut resid = Vec::with_capacity(returns.len());
        let (mut xi1, mut xi2, mut s2) = (0.0, 0.0, init_var);
        for &r in returns {
            s2 = self.alpha0 + self.alpha1 * xi1 * xi1 + self.alpha2 * xi2 * xi2 + self.beta1 * s2;
            let xi = r - self.mu;
            let s = s2.sqrt();
            sigma.push(s);
            resid.push(xi / s);
            xi2 = xi1;
            xi1 = xi;
        }
        (sigma, resid)
    }

    /// Gaussian log-likelihood; `-∞` if the variance recursion turns non-positive.
    pub fn loglik(&self, returns: &[f64], init_var: f64) -> f64 {
        let (mut xi1, mut xi2, mut s2) = (0.0, 0.0, init_var);
        let mut ll = 0.0;
        for &r in returns {
            s2 = self.alpha0 + self.alpha1 * xi1 * xi1 + self.alpha2 * xi2 * xi2 + self.beta1 * s2;
            if !(s2 > 0.0) {
                return f64::NEG_INFINITY;
            }
            let xi = r - self.mu;
            ll -= 0.5 * ((2.0 * PI).ln() + s2.ln() + xi * xi / s2);
            xi2 = xi1;
            xi1 = xi;
        }
        ll
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    pub params: GarchParams,
    pub sigma: Vec<f64>,
    pub resid: Vec<f64>,
    pub loglik: f64,
    /// Standard errors of `(μ, α0, α1, α2, β1)`; NaN where the observed
    /// information is not invertible.
    pub stderr: [f64; 5],
    pub iterations: usize,
    /// Pre-sample variance used to start the recursion.
    pub init_var: f64,
    /// Last two centred returns `(ξ_T, ξ_{T-1})`.
    last_xi: [f64; 2],
}

impl GarchFit {
    /// One-step-ahead conditional volatility.
    pub fn forecast_sigma(&self) -> f64 {
        let p = &self.params;
        let s = *self.sigma.last().expect("fit has at least one observation");
        let [x1, x2] = self.last_xi;
        (p.alpha0 + p.alpha1 * x1 * x1 + p.alpha2 * x2 * x2 + p.beta1 * s * s).sqrt()
    }

    /// Re-filters `returns` with fixed parameters, keeping the pre-sample variance
    /// convention of a fresh fit.
    pub fn filter(params: GarchParams, returns: &[f64]) -> Result<GarchFit> {
        params.validate()?;
        if returns.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: returns.len() });
        }
        let init_var = variance(returns);
        let (sigma, resid) = params.filter(returns, init_var);
        let n = returns.len();
        Ok(GarchFit {
            params,
            loglik: params.loglik(returns, init_var),
            sigma,
            resid,
            stderr: [f64::NAN; 5],
            iterations: 0,
            init_var,
            last_xi: [returns[n - 1] - params.mu, returns[n - 2] - params.mu],
        })
    }
}

fn to_params(z: &DVector<f64>) -> GarchParams {
    let pers = 1.0 / (1.0 + (-z[2]).exp());
    let m = z[3].max(z[4]).max(0.0);
    let (e1, e2, e3) = ((z[3] - m).exp(), (z[4] - m).exp(), (-m).exp());
    let tot = e1 + e2 + e3;
    GarchParams {
        mu: z[0],
        alpha0: z[1].exp(),
        alpha1: pers * e1 / tot,
        alpha2: pers * e2 / tot,
        beta1: pers * e3 / tot,
    }
}

fn from_params(p: &GarchParams) -> DVector<f64> {
    let pers = p.persistence();
    let b = p.beta1.max(1e-12);
    DVector::from_vec(vec![
        p.mu,
        p.alpha0.ln(),
        (pers / (1.0 - pers)).ln(),
        (p.alpha1.max(1e-12) / b).ln(),
        (p.alpha2.max(1e-12) / b).ln(),
    ])
}

pub fn fit_garch21(returns: &[f64]) -> Result<GarchFit> {
    let n = returns.len();
    if n < MIN_GARCH_LEN {
        return Err(Error::InsufficientData { needed: MIN_GARCH_LEN, got: n });
    }
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let m = mean(returns);
    let var = variance(returns);
    let scale = returns.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    if !(var > (1e-12 * scale).powi(2)) || var == 0.0 {
        return Err(Error::Degenerate("return series has zero variance".into()));
    }
    let sd = var.sqrt();
    let y: Vec<f64> = returns.iter().map(|r| (r - m) / sd).collect();
    let init_y = variance(&y);
    let objective = |z: &DVector<f64>| {
        let ll = to_params(z).loglik(&y, init_y);
        if ll.is_finite() {
            -ll / n as f64
        } else {
            f64::INFINITY
        }
    };

    let starts = [
        GarchParams { mu: 0.0, alpha0: 0.1, alpha1: 0.05, alpha2: 0.05, beta1: 0.8 },
        GarchParams { mu: 0.0, alpha0: 0.8, alpha1: 0.05, alpha2: 0.05, beta1: 0.1 },
    ];
    let mut best = None;
    for s in &starts {
        let out = bfgs_min(objective, from_params(s), FTOL, MAX_ITER);
        if best.as_ref().is_none_or(|b: &crate::optim::BfgsOutcome| out.value < b.value) {
            best = Some(out);
        }
    }
    let best = best.expect("two starts");
    if !best.converged {
        return Err(Error::NonConvergence(format!(
            "GARCH(2,1) likelihood did not converge in {} iterations",
            best.iterations
        )));
    }
    let py = to_params(&best.x);
    if py.persistence() >= 1.0 - 1e-9 {
        return Err(Error::NonStationary(py.persistence()));
    }

    // observed information in the standardised parameterisation
    let theta = DVector::from_vec(vec![py.mu, py.alpha0, py.alpha1, py.alpha2, py.beta1]);
    let mut negll = |t: &DVector<f64>| {
        let p = GarchParams { mu: t[0], alpha0: t[1], alpha1: t[2], alpha2: t[3], beta1: t[4] };
        -p.loglik(&y, init_y)
    };
    let info = numeric_hessian(&mut negll, &theta, 1e-4);
    let scale = [sd, var, 1.0, 1.0, 1.0];
    let stderr = match info.clone().cholesky() {
        Some(ch) => {
            let cov = ch.inverse();
            std::array::from_fn(|i| cov[(i, i)].sqrt() * scale[i])
        }
        None => [f64::NAN; 5],
    };

    let params = GarchParams {
        mu: m + sd * py.mu,
        alpha0: var * py.alpha0,
        alpha1: py.alpha1,
        alpha2: py.alpha2,
        beta1: py.beta1,
    };
    let init_var = var * init_y;
    let (sigma, resid) = params.filter(returns, init_var);
    Ok(GarchFit {
        params,
        loglik: params.loglik(returns, init_var),
        sigma,
        resid,
        stderr,
        iterations: best.iterations,
        init_var,
        last_xi: [returns[n - 1] - params.mu, returns[n - 2] - params.mu],
    })
}

pub fn simulate_garch21(params: &GarchParams, t_len: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xi1, mut xi2) = (0.0f64, 0.0f64);
    let mut s2 = params.unconditional_variance();
    let mut out = Vec::with_capacity(t_len);
    for i in 0..BURN_IN + t_len {
        s2 = params.alpha0 + params.alpha1 * xi1 * xi1 + params.alpha2 * xi2 * xi2 + params.beta1 * s2;
        let e: f64 = StandardNormal.sample(&mut rng);
        let xi = s2.sqrt() * e;
        if i >= BURN_IN {
            out.push(params.mu + xi);
        }
        xi2 = xi1;
        xi1 = xi;
    }
    Ok(out)
}
