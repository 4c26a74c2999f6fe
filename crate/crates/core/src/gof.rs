//! Rank-based information-matrix goodness-of-fit test.
//!
//! Under a correctly specified copula the expected Hessian of `ln c` plus the
//! expected outer product of the score vanishes. The test averages
//! `d_t = vech(H_t + s_t s_tᵀ)` over the sample and studentises it with a
//! variance that accounts for estimating θ (through `∇D B⁻¹`) and for using
//! ranks instead of the true margins (through the `W_n` and `M_n` terms).
//!
//! `W_n` and `M_n` are integrals against the copula, evaluated by Monte-Carlo
//! over seeded draws from the fitted copula. Their inner `u_n` derivatives
//! are central differences with step [`U_STEP`].

use crate::copula::{clamp_u, sample_with_latent, CopulaSpec, Derivs, Evaluator, USens};
use crate::error::{Error, Result};
use crate::pseudo::PseudoSample;
use crate::stats::chi2_sf;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use crate::stats::chi2_quantile;

pub const U_STEP: f64 = 1e-5;
pub const DEFAULT_MC_DRAWS: usize = 4096;
pub const MIN_MC_DRAWS: usize = 1000;
const COND_LIMIT: f64 = 1e12;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    pub mc_draws: usize,
    pub seed: u64,
    /// Test a Student-t copula with ν held fixed (one degree of freedom).
    pub fixed_nu: bool,
}

impl Default for GofConfig {
    fn default() -> Self {
        GofConfig { mc_draws: DEFAULT_MC_DRAWS, seed: 0, fixed_nu: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub dof: usize,
    pub pvalue: f64,
    pub d_bar: Vec<f64>,
    pub v_matrix: Vec<Vec<f64>>,
    /// A ridge was added because V was ill-conditioned.
    pub regularized: bool,
    /// V could not be inverted and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Number of active parameters and length of the tested vech vector.
#[derive(Debug, Clone, Copy)]
struct Dims {
    p: usize,
    m: usize,
}

impl Dims {
    fn new(spec: &CopulaSpec, fixed_nu: bool) -> Self {
        let p = if fixed_nu { 1 } else { spec.param_dim() };
        Dims { p, m: p * (p + 1) / 2 }
    }
}

/// `D̄ = T⁻¹ Σ vech(∇²ln c + ∇ln c ∇ln cᵀ)` at the pseudo-observations.
pub fn d_bar(ps: &PseudoSample, spec: &CopulaSpec) -> Result<Vec<f64>> {
    let dims = Dims::new(spec, false);
    let pts = clamped(ps);
    Ok(mean_indicator(&pts, spec, dims)?[..dims.m].to_vec())
}

/// The plug-in variance of `√T·D̄`, full parameter vector.
pub fn estimate_v(ps: &PseudoSample, spec: &CopulaSpec, mc_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let cfg = GofConfig { mc_draws, seed, fixed_nu: false };
    Ok(components(&clamped(ps), spec, &cfg)?.1)
}

pub fn info_matrix_test(ps: &PseudoSample, spec: &CopulaSpec, cfg: &GofConfig) -> Result<GofResult> {
    let pts = clamped(ps);
    let (dbar, v) = components(&pts, spec, cfg)?;
    let m = dbar.len();
    let (vinv, regularized, pseudo_inverse) = invert_v(&v);
    let d = DMatrix::from_column_slice(m, 1, &dbar);
    let quad = (d.transpose() * &vinv * &d)[(0, 0)];
    let statistic = (pts.len() as f64 * quad).max(0.0);
    if !statistic.is_finite() {
        return Err(Error::Degenerate("information-matrix statistic is not finite".into()));
    }
    Ok(GofResult {
        statistic,
        dof: m,
        pvalue: chi2_sf(m, statistic),
        d_bar: dbar,
        v_matrix: (0..m).map(|i| (0..m).map(|j| v[(i, j)]).collect()).collect(),
        regularized,
        pseudo_inverse,
    })
}

fn clamped(ps: &PseudoSample) -> Vec<[f64; 2]> {
    ps.points().iter().map(|&u| clamp_u(u)).collect()
}

fn mean_indicator(pts: &[[f64; 2]], spec: &CopulaSpec, dims: Dims) -> Result<[f64; 3]> {
    let ev = Evaluator::new(spec)?;
    let mut acc = [0.0; 3];
    for &u in pts {
        let ind = restricted_indicator(&ev.derivs(u), dims);
        for j in 0..dims.m {
            acc[j] += ind[j];
        }
    }
    Ok(acc.map(|a| a / pts.len() as f64))
}

fn restricted_indicator(d: &Derivs, dims: Dims) -> [f64; 3] {
    if dims.p == 1 {
        [d.hess[0][0] + d.grad[0] * d.grad[0], 0.0, 0.0]
    } else {
        d.indicator()
    }
}

/// Returns `(D̄, V)` restricted to the active parameters.
fn components(pts: &[[f64; 2]], spec: &CopulaSpec, cfg: &GofConfig) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if cfg.mc_draws < MIN_MC_DRAWS {
        return Err(Error::Parameter(format!("mc_draws must be at least {MIN_MC_DRAWS}, got {}", cfg.mc_draws)));
    }
    let dims = Dims::new(spec, cfg.fixed_nu);
    let (p, m) = (dims.p, dims.m);
    let t_len = pts.len();
    let ev = Evaluator::new(spec)?;

    let mut scores = Vec::with_capacity(t_len);
    let mut inds = Vec::with_capacity(t_len);
    let mut hbar = [[0.0; 2]; 2];
    for &u in pts {
        let d = ev.derivs(u);
        scores.push(d.grad);
        inds.push(restricted_indicator(&d, dims));
        for i in 0..p {
            for j in 0..p {
                hbar[i][j] += d.hess[i][j] / t_len as f64;
            }
        }
    }
    let mut dbar = [0.0; 3];
    for ind in &inds {
        for j in 0..m {
            dbar[j] += ind[j] / t_len as f64;
        }
    }

    // B = -H̄, inverted in closed form for p <= 2
    let binv = invert_small([[-hbar[0][0], -hbar[0][1]], [-hbar[1][0], -hbar[1][1]]], p)?;
    let grad_d = grad_dbar(pts, spec, dims)?;
    let mut a = [[0.0; 2]; 3];
    for j in 0..m {
        for k in 0..p {
            a[j][k] = (0..p).map(|l| grad_d[j][l] * binv[l][k]).sum();
        }
    }

    let draws = sample_with_latent(spec, cfg.mc_draws, cfg.seed)?;
    let sens: Vec<([f64; 2], USens)> = draws
        .iter()
        .map(|&(raw, latent)| {
            let u = clamp_u(raw);
            // latent variates only match the draw when clamping left it alone
            let latent = latent.filter(|_| u == raw);
            (u, ev.derivs_with_sens_at(u, latent, U_STEP).1)
        })
        .collect();
    if sens.iter().any(|(_, s)| s.dscore.iter().flatten().chain(s.dindicator.iter().flatten()).any(|v| !v.is_finite()))
    {
        return Err(Error::Degenerate("non-finite Monte-Carlo integrand".into()));
    }
    let rank_terms = [RankIntegral::new(&sens, 0), RankIntegral::new(&sens, 1)];

    let mut vs: Vec<[f64; 3]> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut s = scores[t];
        let mut v = inds[t];
        for (n, ri) in rank_terms.iter().enumerate() {
            let (w, mm) = ri.at(pts[t][n]);
            for k in 0..p {
                s[k] += w[k];
            }
            for j in 0..m {
                v[j] += mm[j];
            }
        }
        for j in 0..m {
            v[j] += (0..p).map(|k| a[j][k] * s[k]).sum::<f64>();
        }
        vs.push(v);
    }
    let mut mean = [0.0; 3];
    for v in &vs {
        for j in 0..m {
            mean[j] += v[j] / t_len as f64;
        }
    }
    let mut vmat = DMatrix::zeros(m, m);
    for v in &vs {
        for i in 0..m {
            for j in 0..=i {
                vmat[(i, j)] += (v[i] - mean[i]) * (v[j] - mean[j]) / t_len as f64;
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            vmat[(j, i)] = vmat[(i, j)];
        }
    }
    Ok((dbar[..m].to_vec(), vmat))
}

fn invert_small(b: [[f64; 2]; 2], p: usize) -> Result<[[f64; 2]; 2]> {
    let singular = || Error::Singular("B = -mean Hessian is not positive definite".into());
    if p == 1 {
        if !(b[0][0] > 0.0) || !b[0][0].is_finite() {
            return Err(singular());
        }
        return Ok([[1.0 / b[0][0], 0.0], [0.0, 0.0]]);
    }
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    if !(b[0][0] > 0.0 && det > 0.0) || !det.is_finite() {
        return Err(singular());
    }
    Ok([[b[1][1] / det, -b[0][1] / det], [-b[1][0] / det, b[0][0] / det]])
}

fn param_step(spec: &CopulaSpec, k: usize) -> f64 {
    match *spec {
        CopulaSpec::Gaussian { rho } => 1e-4f64.min(0.5 * (1.0 - rho.abs())),
        CopulaSpec::StudentT { rho, .. } if k == 0 => 1e-4f64.min(0.5 * (1.0 - rho.abs())),
        CopulaSpec::StudentT { nu, .. } => 1e-2 * nu,
        CopulaSpec::Clayton { theta } => (1e-4 * theta.max(1.0)).min(0.5 * theta),
    }
}

/// `∂D̄/∂θ` by central differences, rows indexed by vech component.
fn grad_dbar(pts: &[[f64; 2]], spec: &CopulaSpec, dims: Dims) -> Result<[[f64; 2]; 3]> {
    let mut g = [[0.0; 2]; 3];
    let params = spec.params();
    for k in 0..dims.p {
        let h = param_step(spec, k);
        let mut hi = params.clone();
        let mut lo = params.clone();
        hi[k] += h;
        lo[k] -= h;
        let fam = spec.family();
        let up = mean_indicator(pts, &CopulaSpec::from_params_unchecked(fam, &hi), dims)?;
        let dn = mean_indicator(pts, &CopulaSpec::from_params_unchecked(fam, &lo), dims)?;
        for j in 0..dims.m {
            g[j][k] = (up[j] - dn[j]) / (2.0 * h);
        }
    }
    Ok(g)
}

/// Monte-Carlo evaluation of `∫ [1{x ≤ u_n} − u_n] f(u) dC(u)` for the score
/// and indicator sensitivities, as a function of `x`.
struct RankIntegral {
    sorted_u: Vec<f64>,
    /// suffix sums of the integrands over draws sorted by `u_n`
    suffix_w: Vec<[f64; 2]>,
    suffix_m: Vec<[f64; 3]>,
    centre_w: [f64; 2],
    centre_m: [f64; 3],
    inv_draws: f64,
}

impl RankIntegral {
    fn new(sens: &[([f64; 2], USens)], n: usize) -> Self {
        let mut order: Vec<usize> = (0..sens.len()).collect();
        order.sort_by(|&a, &b| sens[a].0[n].total_cmp(&sens[b].0[n]));
        let len = sens.len();
        let mut suffix_w = vec![[0.0; 2]; len + 1];
        let mut suffix_m = vec![[0.0; 3]; len + 1];
        let (mut centre_w, mut centre_m) = ([0.0; 2], [0.0; 3]);
        for pos in (0..len).rev() {
            let (u, s) = &sens[order[pos]];
            for k in 0..2 {
                suffix_w[pos][k] = suffix_w[pos + 1][k] + s.dscore[n][k];
                centre_w[k] += u[n] * s.dscore[n][k];
            }
            for j in 0..3 {
                suffix_m[pos][j] = suffix_m[pos + 1][j] + s.dindicator[n][j];
                centre_m[j] += u[n] * s.dindicator[n][j];
            }
        }
        RankIntegral {
            sorted_u: order.iter().map(|&i| sens[i].0[n]).collect(),
            suffix_w,
            suffix_m,
            centre_w,
            centre_m,
            inv_draws: 1.0 / len as f64,
        }
    }

    fn at(&self, x: f64) -> ([f64; 2], [f64; 3]) {
        let k = self.sorted_u.partition_point(|&u| u < x);
        let w = std::array::from_fn(|i| (self.suffix_w[k][i] - self.centre_w[i]) * self.inv_draws);
        let m = std::array::from_fn(|i| (self.suffix_m[k][i] - self.centre_m[i]) * self.inv_draws);
        (w, m)
    }
}

/// Inverse of V, with a ridge when the condition number exceeds `COND_LIMIT`
/// and a pseudo-inverse as the last resort.
fn invert_v(v: &DMatrix<f64>) -> (DMatrix<f64>, bool, bool) {
    let dim = v.nrows();
    let eig = SymmetricEigen::new(v.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let mut work = v.clone();
    let mut regularized = false;
    if !(min > 0.0) || max / min > COND_LIMIT {
        let ridge = RIDGE * v.trace() / dim as f64;
        for i in 0..dim {
            work[(i, i)] += ridge;
        }
        regularized = true;
    }
    match work.clone().cholesky() {
        Some(ch) => (ch.inverse(), regularized, false),
        None => {
            let pinv = work.pseudo_inverse(1e-14 * max.abs().max(f64::MIN_POSITIVE));
            (pinv.unwrap_or_else(|_| DMatrix::zeros(dim, dim)), regularized, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_copula;
    use crate::Family;

    fn sample(spec: CopulaSpec, n: usize, seed: u64) -> PseudoSample {
        crate::pseudo::pseudo_observations(&spec.sample(n, seed).unwrap()).unwrap()
    }

    #[test]
    fn dimensions_follow_family() {
        let ps = sample(CopulaSpec::Gaussian { rho: 0.4 }, 300, 1);
        assert_eq!(d_bar(&ps, &CopulaSpec::Gaussian { rho: 0.4 }).unwrap().len(), 1);
        assert_eq!(d_bar(&ps, &CopulaSpec::StudentT { rho: 0.4, nu: 5.0 }).unwrap().len(), 3);
        let t = CopulaSpec::StudentT { rho: 0.4, nu: 5.0 };
        let r = info_matrix_test(&ps, &t, &GofConfig::default()).unwrap();
        assert_eq!(r.dof, 3);
        let r = info_matrix_test(&ps, &t, &GofConfig { fixed_nu: true, ..Default::default() }).unwrap();
        assert_eq!(r.dof, 1);
    }

    #[test]
    fn v_is_symmetric_psd() {
        let spec = CopulaSpec::StudentT { rho: 0.5, nu: 4.0 };
        let ps = sample(spec, 400, 4);
        let fit = fit_copula(&ps, Family::StudentT).unwrap();
        let v = estimate_v(&ps, &fit.spec, 2000, 3).unwrap();
        assert_eq!(v, v.transpose());
        let eig = SymmetricEigen::new(v).eigenvalues;
        assert!(eig.min() >= -1e-8);
    }

    #[test]
    fn statistic_invariant_to_row_order_and_monotone_margins() {
        let spec = CopulaSpec::Clayton { theta: 1.5 };
        let raw = spec.sample(300, 8).unwrap();
        let ps = crate::pseudo::pseudo_observations(&raw).unwrap();
        let fit = fit_copula(&ps, Family::Clayton).unwrap();
        let cfg = GofConfig { seed: 5, ..Default::default() };
        let base = info_matrix_test(&ps, &fit.spec, &cfg).unwrap().statistic;

        let warped: Vec<[f64; 2]> = raw.iter().map(|p| [p[0].ln(), p[1].powi(3)]).collect();
        let ps2 = crate::pseudo::pseudo_observations(&warped).unwrap();
        let again = info_matrix_test(&ps2, &fit.spec, &cfg).unwrap().statistic;
        assert!((base - again).abs() <= 1e-9 * base.max(1.0));

        let mut rev = ps.points().to_vec();
        rev.reverse();
        let ps3 = PseudoSample::from_uniforms(rev).unwrap();
        let rstat = info_matrix_test(&ps3, &fit.spec, &cfg).unwrap().statistic;
        assert!((base - rstat).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn wrong_family_is_rejected() {
        let ps = sample(CopulaSpec::Clayton { theta: 3.0 }, 1500, 2);
        let fit = fit_copula(&ps, Family::Gaussian).unwrap();
        let r = info_matrix_test(&ps, &fit.spec, &GofConfig::default()).unwrap();
        assert!(r.pvalue < 0.01, "{r:?}");
    }

    #[test]
    fn too_few_draws_is_an_error() {
        let ps = sample(CopulaSpec::Gaussian { rho: 0.2 }, 100, 1);
        let cfg = GofConfig { mc_draws: 10, ..Default::default() };
        assert!(info_matrix_test(&ps, &CopulaSpec::Gaussian { rho: 0.2 }, &cfg).is_err());
    }
}
