//! Portfolio loss, Monte-Carlo VaR/ES under a copula with GARCH margins,
//! rolling re-estimation and Kupiec backtesting.
//!
//! VaR and ES are reported as positive loss quantiles on a unit portfolio.

use crate::copula::CopulaSpec;
use crate::detect::Segment;
use crate::error::{Error, Result};
use crate::margins::{fit_garch21, GarchFit};
use crate::special::norm_quantile;
use crate::stats::{chi2_sf, derive_seed, quantile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_SIMS: usize = 1000;
pub const MIN_BACKTEST_LEN: usize = 50;

/// `L = -Σ λ_i S_i (exp(X_i) - 1)`: minus the value change of a portfolio
/// holding `λ_i` units of asset `i` priced `S_i`, after log returns `X_i`.
pub fn portfolio_loss(prices: [f64; 2], returns_next: [f64; 2], weights: [f64; 2]) -> f64 {
    -(0..2).map(|i| weights[i] * prices[i] * returns_next[i].exp_m1()).sum::<f64>()
}

/// One-step-ahead return distribution of one asset: `μ + σ z`, `z ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginForecast {
    pub mu: f64,
    pub sigma: f64,
}

impl MarginForecast {
    pub fn from_garch(fit: &GarchFit) -> Self {
        MarginForecast { mu: fit.params.mu, sigma: fit.forecast_sigma() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    /// Index of the forecast day in the return series.
    pub t: usize,
    pub var_value: f64,
    pub es_value: f64,
    pub spec_used: CopulaSpec,
    pub sigma_forecasts: [f64; 2],
    /// Loss realised on day `t`, when the day is in the data.
    pub realized_loss: Option<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 0.5], got {alpha}")));
    }
    Ok(())
}

/// Simulated VaR and ES at level `alpha` for explicit margin forecasts.
pub fn var_es_margins(
    margins: [MarginForecast; 2],
    spec: &CopulaSpec,
    weights: [f64; 2],
    alpha: f64,
    n_sims: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if n_sims < MIN_SIMS {
        return Err(Error::Parameter(format!("n_sims must be at least {MIN_SIMS}, got {n_sims}")));
    }
    if margins.iter().any(|m| !(m.sigma > 0.0 && m.sigma.is_finite() && m.mu.is_finite())) {
        return Err(Error::Degenerate(format!("invalid margin forecasts {margins:?}")));
    }
    let draws = spec.sample(n_sims, seed)?;
    let losses: Vec<f64> = draws
        .iter()
        .map(|u| {
            let r = [0, 1].map(|i| margins[i].mu + margins[i].sigma * norm_quantile(u[i]));
            portfolio_loss([1.0, 1.0], r, weights)
        })
        .collect();
    let var = quantile(&losses, 1.0 - alpha);
    let tail: Vec<f64> = losses.iter().copied().filter(|&l| l > var).collect();
    let es = if tail.is_empty() { var } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    Ok((var, es))
}

/// VaR and ES for the day after the fitted samples.
pub fn var_es(
    garch: [&GarchFit; 2],
    spec: &CopulaSpec,
    weights: [f64; 2],
    alpha: f64,
    n_sims: usize,
    seed: u64,
) -> Result<RiskPoint> {
    let margins = garch.map(MarginForecast::from_garch);
    let (var_value, es_value) = var_es_margins(margins, spec, weights, alpha, n_sims, seed)?;
    Ok(RiskPoint {
        t: garch[0].sigma.len(),
        var_value,
        es_value,
        spec_used: *spec,
        sigma_forecasts: margins.map(|m| m.sigma),
        realized_loss: None,
    })
}

/// Copula in force on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: usize,
    pub end: usize,
    pub spec: CopulaSpec,
}

impl From<&Segment> for Regime {
    fn from(s: &Segment) -> Self {
        Regime { start: s.start, end: s.end, spec: s.fit.spec }
    }
}

/// Where the copula for each forecast day comes from.
#[derive(Debug, Clone, Copy)]
pub enum CopulaSource<'a> {
    Static(CopulaSpec),
    /// Piecewise model; the regime covering the forecast day is used.
    Dynamic(&'a [Regime]),
}

impl CopulaSource<'_> {
    fn spec_at(&self, t: usize) -> Result<CopulaSpec> {
        match self {
            CopulaSource::Static(spec) => Ok(*spec),
            CopulaSource::Dynamic(segs) => segs
                .iter()
                .find(|s| s.start <= t && t < s.end)
                .map(|s| s.spec)
                .ok_or_else(|| Error::Parameter(format!("no regime covers day {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    /// Days between risk evaluations.
    pub step: usize,
    pub alpha: f64,
    pub n_sims: usize,
    pub weights: [f64; 2],
    pub seed: u64,
    /// Returns required before the first evaluation.
    pub min_history: usize,
    /// GARCH parameters are re-estimated every this many evaluations and
    /// only re-filtered in between.
    pub refit_every: usize,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            step: 20,
            alpha: 0.05,
            n_sims: 10_000,
            weights: [0.5, 0.5],
            seed: 0,
            min_history: 500,
            refit_every: 5,
        }
    }
}

/// Risk forecasts every `cfg.step` days from `cfg.min_history` on.
/// `returns[t]` is realised on day `t`; the forecast for day `t` uses
/// `returns[..t]` only.
pub fn rolling_risk(returns: &[[f64; 2]], source: CopulaSource, cfg: &RollingConfig) -> Result<Vec<RiskPoint>> {
    check_alpha(cfg.alpha)?;
    if cfg.step == 0 || cfg.refit_every == 0 {
        return Err(Error::Parameter("step and refit_every must be positive".into()));
    }
    if returns.len() <= cfg.min_history {
        return Err(Error::InsufficientData { needed: cfg.min_history + 1, got: returns.len() });
    }
    let days: Vec<usize> = (cfg.min_history..returns.len()).step_by(cfg.step).collect();
    let column = |i: usize, end: usize| -> Vec<f64> { returns[..end].iter().map(|r| r[i]).collect() };

    let blocks: Vec<&[usize]> = days.chunks(cfg.refit_every).collect();
    let out: Vec<Result<Vec<RiskPoint>>> = blocks
        .par_iter()
        .map(|block| {
            let fits = [0, 1].map(|i| fit_garch21(&column(i, block[0])));
            let [f0, f1] = fits;
            let params = [f0?.params, f1?.params];
            block
                .iter()
                .map(|&t| {
                    let g0 = GarchFit::filter(params[0], &column(0, t))?;
                    let g1 = GarchFit::filter(params[1], &column(1, t))?;
                    let spec = source.spec_at(t)?;
                    let mut point =
                        var_es([&g0, &g1], &spec, cfg.weights, cfg.alpha, cfg.n_sims, derive_seed(cfg.seed, t as u64))?;
                    point.realized_loss = Some(portfolio_loss([1.0, 1.0], returns[t], cfg.weights));
                    Ok(point)
                })
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(days.len());
    for block in out {
        points.extend(block?);
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub n: usize,
    pub exceedances: usize,
    pub expected: f64,
    pub kupiec_stat: f64,
    pub kupiec_pvalue: f64,
}

/// `x ln(p)` with the limit `0 ln 0 = 0`.
fn xlogy(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * p.ln()
    }
}

/// Kupiec proportion-of-failures test of VaR exceedances (`loss > VaR`).
/// At `x = 0` or `x = n` the unrestricted likelihood is 1, so the statistic
/// reduces to `-2 ln L(α)`.
pub fn backtest_var(losses: &[f64], var: &[f64], alpha: f64) -> Result<BacktestReport> {
    check_alpha(alpha)?;
    if losses.len() != var.len() {
        return Err(Error::Parameter(format!(
            "loss and VaR series differ in length ({} vs {})",
            losses.len(),
            var.len()
        )));
    }
    let n = losses.len();
    if n < MIN_BACKTEST_LEN {
        return Err(Error::InsufficientData { needed: MIN_BACKTEST_LEN, got: n });
    }
    if let Some(i) = losses.iter().chain(var).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i % n));
    }
    let x = losses.iter().zip(var).filter(|(l, v)| l > v).count();
    let (nf, xf) = (n as f64, x as f64);
    let restricted = xlogy(nf - xf, 1.0 - alpha) + xlogy(xf, alpha);
    let free = xlogy(nf - xf, 1.0 - xf / nf) + xlogy(xf, xf / nf);
    let stat = (-2.0 * (restricted - free)).max(0.0);
    Ok(BacktestReport {
        n,
        exceedances: x,
        expected: alpha * nf,
        kupiec_stat: stat,
        kupiec_pvalue: chi2_sf(1, stat).clamp(0.0, 1.0),
    })
}

/// Mean of `loss - ES` over VaR exceedances; a well-calibrated ES keeps it
/// near zero, a positive value means ES understates tail losses.
pub fn es_exceedance_residual(losses: &[f64], var: &[f64], es: &[f64]) -> Option<f64> {
    let resid: Vec<f64> =
        losses.iter().zip(var.iter().zip(es)).filter(|(l, (v, _))| l > v).map(|(l, (_, e))| l - e).collect();
    (!resid.is_empty()).then(|| resid.iter().sum::<f64>() / resid.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::{simulate_garch21, GarchParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_formula_examples() {
        assert_eq!(portfolio_loss([3.0, 7.0], [0.0, 0.0], [0.5, 0.5]), 0.0);
        let l = portfolio_loss([1.0, 1.0], [2f64.ln(), 2f64.ln()], [0.5, 0.5]);
        assert!((l + 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_revaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = [rng.random_range(1.0..500.0), rng.random_range(1.0..500.0)];
            let x: [f64; 2] = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
            let w = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
            let v0 = w[0] * s[0] + w[1] * s[1];
            let v1 = w[0] * s[0] * x[0].exp() + w[1] * s[1] * x[1].exp();
            assert!((portfolio_loss(s, x, w) + (v1 - v0)).abs() < 1e-9 * v0);
        }
    }

    const FLAT: [MarginForecast; 2] = [MarginForecast { mu: 0.0, sigma: 0.01 }; 2];

    #[test]
    fn es_dominates_var_and_alpha_is_monotone() {
        let spec = CopulaSpec::StudentT { rho: 0.6, nu: 3.0 };
        let mut last = 0.0;
        for alpha in [0.2, 0.1, 0.05, 0.01] {
            let (v, e) = var_es_margins(FLAT, &spec, [0.5, 0.5], alpha, 20_000, 9).unwrap();
            assert!(e >= v && v >= last);
            last = v;
        }
    }

    #[test]
    fn dependence_raises_var() {
        let (indep, _) =
            var_es_margins(FLAT, &CopulaSpec::Gaussian { rho: 0.0 }, [0.5, 0.5], 0.05, 100_000, 3).unwrap();
        let (como, _) =
            var_es_margins(FLAT, &CopulaSpec::Gaussian { rho: 0.999 }, [0.5, 0.5], 0.05, 100_000, 3).unwrap();
        assert!(como > indep);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let spec = CopulaSpec::Gaussian { rho: 0.1 };
        assert!(var_es_margins(FLAT, &spec, [0.5, 0.5], 0.0, 5000, 1).is_err());
        assert!(var_es_margins(FLAT, &spec, [0.5, 0.5], 0.05, 10, 1).is_err());
        assert!(backtest_var(&[0.0; 10], &[0.0; 10], 0.05).is_err());
        assert!(backtest_var(&[0.0; 60], &[0.0; 59], 0.05).is_err());
    }

    #[test]
    fn kupiec_matches_direct_formula() {
        // 25 exceedances of 250 at 5%
        let losses: Vec<f64> = (0..250).map(|i| if i % 10 == 0 { 2.0 } else { 0.0 }).collect();
        let rep = backtest_var(&losses, &[1.0; 250], 0.05).unwrap();
        assert_eq!(rep.exceedances, 25);
        assert!((rep.kupiec_stat - 10.327109456373194).abs() < 1e-9);
        assert!((rep.kupiec_pvalue - 0.0013109034724475294).abs() < 1e-9);
        // perfect coverage
        let losses: Vec<f64> = (0..100).map(|i| if i < 5 { 2.0 } else { 0.0 }).collect();
        let rep = backtest_var(&losses, &[1.0; 100], 0.05).unwrap();
        assert!(rep.kupiec_stat.abs() < 1e-12 && (rep.kupiec_pvalue - 1.0).abs() < 1e-12);
        // no exceedances: limit convention
        let rep = backtest_var(&[0.0; 100], &[1.0; 100], 0.05).unwrap();
        assert!((rep.kupiec_stat - 10.258658877510115).abs() < 1e-9);
    }

    #[test]
    fn rolling_single_segment_equals_static() {
        let params = GarchParams { mu: 2e-4, alpha0: 2e-6, alpha1: 0.05, alpha2: 0.05, beta1: 0.85 };
        let spec = CopulaSpec::Clayton { theta: 1.5 };
        let u = spec.sample(700, 5).unwrap();
        let a = simulate_garch21(&params, 700, 1).unwrap();
        let b = simulate_garch21(&params, 700, 2).unwrap();
        let returns: Vec<[f64; 2]> = a.iter().zip(&b).map(|(x, y)| [*x, *y]).collect();
        let seg = Segment {
            start: 0,
            end: 700,
            fit: crate::fit::fit_copula(&crate::pseudo::PseudoSample::from_uniforms(u).unwrap(), spec.family())
                .unwrap(),
            gof: None,
        };
        let cfg = RollingConfig { n_sims: 2000, min_history: 400, ..Default::default() };
        let dynamic = rolling_risk(&returns, CopulaSource::Dynamic(&[Regime::from(&seg)]), &cfg).unwrap();
        let stat = rolling_risk(&returns, CopulaSource::Static(seg.fit.spec), &cfg).unwrap();
        assert_eq!(dynamic, stat);
        assert_eq!(dynamic.len(), 15);
        assert!(dynamic.iter().all(|p| p.es_value >= p.var_value && p.realized_loss.is_some()));
    }

    #[test]
    fn es_residual_sign() {
        let losses = [0.0, 3.0, 0.5, 2.0];
        let var = [1.0; 4];
        assert_eq!(es_exceedance_residual(&losses, &var, &[2.0; 4]), Some(0.5));
        assert_eq!(es_exceedance_residual(&[0.0; 4], &var, &[2.0; 4]), None);
    }
}
