//! Bivariate copula families: Gaussian, Student-t and Clayton.
//!
//! Log-density derivatives in ρ (elliptical families) and θ (Clayton) are
//! analytic. Derivatives in the Student-t degrees of freedom ν are central
//! finite differences with step [`NU_STEP`]`·max(1, ν)`, re-solving the
//! marginal quantiles at each perturbed ν.
//!
//! Points are `[u1, u2]` arrays. Inputs to the density routines are clamped
//! to `[U_CLAMP, 1 - U_CLAMP]` after the interior check.

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_quantile, t_cdf, t_quantile, StudentT};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

pub const U_CLAMP: f64 = 1e-10;
pub const NU_MIN: f64 = 2.0;
pub const NU_MAX: f64 = 50.0;
pub const CLAYTON_MIN: f64 = 1e-6;
/// Relative finite-difference step for derivatives in ν.
pub const NU_STEP: f64 = 1e-3;

const CDF_TOL: f64 = 1e-11;
const MAX_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    StudentT,
    Clayton,
}

impl Family {
    /// Fixed order used for deterministic tie-breaking.
    pub const ALL: [Family; 3] = [Family::Gaussian, Family::StudentT, Family::Clayton];

    pub fn param_dim(self) -> usize {
        match self {
            Family::StudentT => 2,
            Family::Gaussian | Family::Clayton => 1,
        }
    }

    /// Length of `vech` of a `param_dim × param_dim` matrix.
    pub fn vech_dim(self) -> usize {
        let p = self.param_dim();
        p * (p + 1) / 2
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::Clayton => "clayton",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "gaussian" | "normal" | "ga" => Ok(Family::Gaussian),
            "student_t" | "studentt" | "t" => Ok(Family::StudentT),
            "clayton" | "cl" => Ok(Family::Clayton),
            other => Err(Error::Parameter(format!("unknown copula family '{other}'"))),
        }
    }
}

/// A copula family together with its parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CopulaSpec {
    Gaussian { rho: f64 },
    StudentT { rho: f64, nu: f64 },
    Clayton { theta: f64 },
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CopulaSpec::Gaussian { rho } => write!(f, "Gaussian ({rho:.4})"),
            CopulaSpec::StudentT { rho, nu } => write!(f, "Student-t ({rho:.4}, {nu:.4})"),
            CopulaSpec::Clayton { theta } => write!(f, "Clayton ({theta:.4})"),
        }
    }
}

impl CopulaSpec {
    pub fn gaussian(rho: f64) -> Result<Self> {
        let spec = CopulaSpec::Gaussian { rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn student_t(rho: f64, nu: f64) -> Result<Self> {
        let spec = CopulaSpec::StudentT { rho, nu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn clayton(theta: f64) -> Result<Self> {
        let spec = CopulaSpec::Clayton { theta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_params(family: Family, params: &[f64]) -> Result<Self> {
        if params.len() != family.param_dim() {
            return Err(Error::Parameter(format!(
                "{family} takes {} parameter(s), got {}",
                family.param_dim(),
                params.len()
            )));
        }
        let spec = Self::from_params_unchecked(family, params);
        spec.validate()?;
        Ok(spec)
    }

    pub(crate) fn from_params_unchecked(family: Family, params: &[f64]) -> Self {
        match family {
            Family::Gaussian => CopulaSpec::Gaussian { rho: params[0] },
            Family::StudentT => CopulaSpec::StudentT { rho: params[0], nu: params[1] },
            Family::Clayton => CopulaSpec::Clayton { theta: params[0] },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            CopulaSpec::Gaussian { .. } => Family::Gaussian,
            CopulaSpec::StudentT { .. } => Family::StudentT,
            CopulaSpec::Clayton { .. } => Family::Clayton,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.family().param_dim()
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            CopulaSpec::Gaussian { rho } => vec![rho],
            CopulaSpec::StudentT { rho, nu } => vec![rho, nu],
            CopulaSpec::Clayton { theta } => vec![theta],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rho_ok = |rho: f64| rho.is_finite() && rho > -1.0 && rho < 1.0;
        match *self {
            CopulaSpec::Gaussian { rho } if !rho_ok(rho) => {
                Err(Error::Parameter(format!("Gaussian rho must lie in (-1, 1), got {rho}")))
            }
            CopulaSpec::StudentT { rho, .. } if !rho_ok(rho) => {
                Err(Error::Parameter(format!("Student-t rho must lie in (-1, 1), got {rho}")))
            }
            CopulaSpec::StudentT { nu, .. } if !(nu.is_finite() && nu >= NU_MIN) => {
                Err(Error::Parameter(format!("Student-t nu must be finite and >= {NU_MIN}, got {nu}")))
            }
            CopulaSpec::Clayton { theta } if !(theta.is_finite() && theta >= CLAYTON_MIN) => {
                Err(Error::Parameter(format!("Clayton theta must be >= {CLAYTON_MIN}, got {theta}")))
            }
            _ => Ok(()),
        }
    }

    /// Population Kendall's τ.
    pub fn kendall_tau(&self) -> f64 {
        match *self {
            CopulaSpec::Gaussian { rho } | CopulaSpec::StudentT { rho, .. } => 2.0 / PI * rho.asin(),
            CopulaSpec::Clayton { theta } => theta / (theta + 2.0),
        }
    }

    pub fn log_density(&self, u: [f64; 2]) -> Result<f64> {
        let u = interior(u)?;
        Ok(Evaluator::new(self)?.log_density(u))
    }

    pub fn density(&self, u: [f64; 2]) -> Result<f64> {
        self.log_density(u).map(f64::exp)
    }

    /// Gradient of `ln c_θ(u)` with respect to the parameter vector.
    pub fn log_density_grad(&self, u: [f64; 2]) -> Result<DVector<f64>> {
        let u = interior(u)?;
        let d = Evaluator::new(self)?.derivs(u);
        Ok(DVector::from_fn(d.dim, |i, _| d.grad[i]))
    }

    /// Hessian of `ln c_θ(u)` with respect to the parameter vector.
    pub fn log_density_hessian(&self, u: [f64; 2]) -> Result<DMatrix<f64>> {
        let u = interior(u)?;
        let d = Evaluator::new(self)?.derivs(u);
        Ok(DMatrix::from_fn(d.dim, d.dim, |i, j| d.hess[i][j]))
    }

    /// Copula distribution function `C(u1, u2)` on the closed unit square.
    pub fn cdf(&self, u: [f64; 2]) -> Result<f64> {
        self.validate()?;
        let [u1, u2] = u;
        if !(0.0..=1.0).contains(&u1) || !(0.0..=1.0).contains(&u2) {
            return Err(Error::Domain(format!("cdf argument ({u1}, {u2}) outside the unit square")));
        }
        if u1 == 0.0 || u2 == 0.0 {
            return Ok(0.0);
        }
        if u1 == 1.0 {
            return Ok(u2);
        }
        if u2 == 1.0 {
            return Ok(u1);
        }
        let value = match *self {
            CopulaSpec::Clayton { theta } => {
                let ln_a = clayton_ln_a(theta, u1.ln(), u2.ln());
                (-ln_a / theta).exp()
            }
            CopulaSpec::Gaussian { rho } => {
                let x2 = norm_quantile(u2);
                let sd = (1.0 - rho * rho).sqrt();
                integrate(
                    |s| {
                        let x1 = norm_quantile(s.max(f64::MIN_POSITIVE));
                        norm_cdf((x2 - rho * x1) / sd)
                    },
                    0.0,
                    u1,
                )
            }
            CopulaSpec::StudentT { rho, nu } => {
                let x2 = t_quantile(u2, nu);
                let q = 1.0 - rho * rho;
                integrate(
                    |s| {
                        let x1 = t_quantile(s.max(f64::MIN_POSITIVE), nu);
                        if x1.is_infinite() {
                            return t_cdf(rho * ((nu + 1.0) / q).sqrt(), nu + 1.0);
                        }
                        let scale = ((nu + x1 * x1) * q / (nu + 1.0)).sqrt();
                        t_cdf((x2 - rho * x1) / scale, nu + 1.0)
                    },
                    0.0,
                    u1,
                )
            }
        };
        Ok(value.clamp(0.0, u1.min(u2)))
    }

    /// Draws `n` i.i.d. points; identical `(spec, n, seed)` gives identical output.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Parameter("sample size must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(n);
        match *self {
            CopulaSpec::Gaussian { rho } => {
                let sd = (1.0 - rho * rho).sqrt();
                for _ in 0..n {
                    let z1: f64 = rng.sample(StandardNormal);
                    let e: f64 = rng.sample(StandardNormal);
                    let z2 = rho * z1 + sd * e;
                    out.push([open_unit(norm_cdf(z1)), open_unit(norm_cdf(z2))]);
                }
            }
            CopulaSpec::StudentT { rho, nu } => {
                out.extend(t_pairs(rho, nu, n, rng)?.into_iter().map(|(u, _)| u));
            }
            CopulaSpec::Clayton { theta } => {
                // conditional inversion of ∂C/∂u1
                for _ in 0..n {
                    let u1 = open_unit(rng.random::<f64>());
                    let w = open_unit(rng.random::<f64>());
                    let a = -theta * u1.ln();
                    let b = (-theta / (1.0 + theta) * w.ln()).exp_m1();
                    let ln_inner = softplus(a + b.ln());
                    out.push([u1, open_unit((-ln_inner / theta).exp())]);
                }
            }
        }
        Ok(out)
    }
}

/// Student-t copula draws with their latent t variates.
fn t_pairs<R: Rng + ?Sized>(rho: f64, nu: f64, n: usize, rng: &mut R) -> Result<Vec<([f64; 2], [f64; 2])>> {
    let sd = (1.0 - rho * rho).sqrt();
    let chi = ChiSquared::new(nu).map_err(|e| Error::Parameter(format!("chi-square mixing: {e}")))?;
    let dist = StudentT::new(nu);
    Ok((0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z2 = rho * z1 + sd * e;
            let w: f64 = chi.sample(rng);
            let scale = (nu / w).sqrt();
            let x = [z1 * scale, z2 * scale];
            ([open_unit(dist.cdf(x[0])), open_unit(dist.cdf(x[1]))], x)
        })
        .collect())
}

/// Sample plus, for Student-t specs, the latent variates behind each draw.
pub(crate) fn sample_with_latent(spec: &CopulaSpec, n: usize, seed: u64) -> Result<Vec<([f64; 2], Option<[f64; 2]>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        CopulaSpec::StudentT { rho, nu } => {
            spec.validate()?;
            if n == 0 {
                return Err(Error::Parameter("sample size must be at least 1".into()));
            }
            Ok(t_pairs(rho, nu, n, &mut rng)?.into_iter().map(|(u, x)| (u, Some(x))).collect())
        }
        _ => Ok(spec.sample_with(n, &mut rng)?.into_iter().map(|u| (u, None)).collect()),
    }
}

fn open_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, MAX_BELOW_ONE)
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(u1^-θ + u2^-θ - 1)` evaluated without overflow.
fn clayton_ln_a(theta: f64, l1: f64, l2: f64) -> f64 {
    let a1 = -theta * l1;
    let a2 = -theta * l2;
    let m = a1.max(a2);
    m + ((a1 - m).exp() + (a2 - m).exp() - (-m).exp()).ln()
}

pub(crate) fn interior(u: [f64; 2]) -> Result<[f64; 2]> {
    for &v in &u {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("point ({}, {}) is not strictly inside the unit square", u[0], u[1])));
        }
    }
    Ok(clamp_u(u))
}

pub(crate) fn clamp_u(u: [f64; 2]) -> [f64; 2] {
    [u[0].clamp(U_CLAMP, 1.0 - U_CLAMP), u[1].clamp(U_CLAMP, 1.0 - U_CLAMP)]
}

/// Adaptive Simpson over `[a, b]`, started on eight panels.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let lo = a + h * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(&f, lo, hi, flo, fmid, fhi, whole, CDF_TOL / PANELS as f64, 48);
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Log-density value with its parameter gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub dim: usize,
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Derivs {
    /// `vech(H + g gᵀ)`: the per-observation information-matrix indicator.
    pub fn indicator(&self) -> [f64; 3] {
        let g = self.grad;
        let h = self.hess;
        if self.dim == 1 {
            [h[0][0] + g[0] * g[0], 0.0, 0.0]
        } else {
            [h[0][0] + g[0] * g[0], h[1][0] + g[1] * g[0], h[1][1] + g[1] * g[1]]
        }
    }
}

/// Sensitivity of the score and of the indicator to each margin `u_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct USens {
    /// `∂/∂u_n ∇_θ ln c`, indexed `[n][k]`.
    pub dscore: [[f64; 2]; 2],
    /// `∂/∂u_n vech(H + g gᵀ)`, indexed `[n][j]`.
    pub dindicator: [[f64; 3]; 2],
}

struct TConsts {
    nu: f64,
    biv: f64,
    uni: f64,
    dist: StudentT,
}

impl TConsts {
    fn new(nu: f64) -> Self {
        let dist = StudentT::new(nu);
        TConsts { nu, biv: ln_gamma(0.5 * (nu + 2.0)) - ln_gamma(0.5 * nu) - (nu * PI).ln(), uni: dist.ln_norm(), dist }
    }
}

enum Kind {
    Gaussian { rho: f64, q: f64 },
    StudentT { rho: f64, q: f64, h: f64, consts: [TConsts; 3] },
    Clayton { theta: f64 },
}

/// Pre-computed evaluation context for one parameter vector.
///
/// Construction only checks that the parameters give a proper density
/// (|ρ| < 1, ν > 0, θ > 0), so finite-difference perturbations slightly
/// outside the fitting domain are accepted.
pub struct Evaluator {
    kind: Kind,
}

impl Evaluator {
    pub fn new(spec: &CopulaSpec) -> Result<Self> {
        let bad = || Error::Parameter(format!("copula parameters out of range: {spec:?}"));
        let kind = match *spec {
            CopulaSpec::Gaussian { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(bad());
                }
                Kind::Gaussian { rho, q: 1.0 - rho * rho }
            }
            CopulaSpec::StudentT { rho, nu } => {
                let h = NU_STEP * nu.max(1.0);
                if !(rho.abs() < 1.0) || !(nu.is_finite() && nu - h > 0.0) {
                    return Err(bad());
                }
                Kind::StudentT {
                    rho,
                    q: 1.0 - rho * rho,
                    h,
                    consts: [TConsts::new(nu - h), TConsts::new(nu), TConsts::new(nu + h)],
                }
            }
            CopulaSpec::Clayton { theta } => {
                if !(theta.is_finite() && theta > 0.0) {
                    return Err(bad());
                }
                Kind::Clayton { theta }
            }
        };
        Ok(Evaluator { kind })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            Kind::StudentT { .. } => 2,
            _ => 1,
        }
    }

    /// `ln c(u)`; `u` must already be clamped to the interior.
    pub fn log_density(&self, u: [f64; 2]) -> f64 {
        match &self.kind {
            Kind::Gaussian { rho, q } => {
                let (x1, x2) = (norm_quantile(u[0]), norm_quantile(u[1]));
                gauss_value(*rho, *q, x1, x2)
            }
            Kind::StudentT { rho, q, consts, .. } => {
                let k = &consts[1];
                t_value(*rho, *q, k, k.dist.quantile(u[0]), k.dist.quantile(u[1]))
            }
            Kind::Clayton { theta } => clayton_derivs(*theta, u[0].ln(), u[1].ln()).value,
        }
    }

    pub fn derivs(&self, u: [f64; 2]) -> Derivs {
        match &self.kind {
            Kind::Gaussian { rho, q } => gauss_derivs(*rho, *q, norm_quantile(u[0]), norm_quantile(u[1])),
            Kind::StudentT { .. } => {
                let xs = self.t_latent(u);
                self.t_derivs(&xs)
            }
            Kind::Clayton { theta } => clayton_derivs(*theta, u[0].ln(), u[1].ln()),
        }
    }

    /// Derivatives plus their central-difference sensitivities to each
    /// margin, with step `step` shrunk near the boundary.
    pub fn derivs_with_sens(&self, u: [f64; 2], step: f64) -> (Derivs, USens) {
        self.derivs_with_sens_at(u, None, step)
    }

    /// As [`Self::derivs_with_sens`], reusing the central-ν latent variates
    /// when the caller already has them (Student-t only).
    pub(crate) fn derivs_with_sens_at(&self, u: [f64; 2], latent: Option<[f64; 2]>, step: f64) -> (Derivs, USens) {
        let base;
        let mut sens = USens { dscore: [[0.0; 2]; 2], dindicator: [[0.0; 3]; 2] };
        match &self.kind {
            Kind::StudentT { consts, .. } => {
                // shift each latent quantile by ±δ / f_ν'(x) instead of re-solving it
                let xs = self.t_latent_from(u, latent);
                base = self.t_derivs(&xs);
                for n in 0..2 {
                    let d = step.min(0.5 * u[n]).min(0.5 * (1.0 - u[n]));
                    let mut up = xs;
                    let mut dn = xs;
                    for k in 0..3 {
                        let slope = d / consts[k].dist.pdf(xs[n][k]);
                        up[n][k] += slope;
                        dn[n][k] -= slope;
                    }
                    fill_sens(&mut sens, n, d, &self.t_derivs(&up), &self.t_derivs(&dn));
                }
            }
            _ => {
                base = self.derivs(u);
                for n in 0..2 {
                    let d = step.min(0.5 * u[n]).min(0.5 * (1.0 - u[n]));
                    let mut up = u;
                    let mut dn = u;
                    up[n] += d;
                    dn[n] -= d;
                    fill_sens(&mut sens, n, d, &self.derivs(up), &self.derivs(dn));
                }
            }
        }
        (base, sens)
    }

    fn t_latent(&self, u: [f64; 2]) -> [[f64; 3]; 2] {
        self.t_latent_from(u, None)
    }

    /// Latent quantiles at the three ν-levels. The outer levels start from
    /// the central quantile and take one Halley step, whose error is far
    /// below the ν finite-difference step.
    fn t_latent_from(&self, u: [f64; 2], central: Option<[f64; 2]>) -> [[f64; 3]; 2] {
        let Kind::StudentT { consts, .. } = &self.kind else {
            unreachable!("latent quantiles requested for a non-t copula")
        };
        let mut xs = [[0.0; 3]; 2];
        for n in 0..2 {
            let x = central.map_or_else(|| consts[1].dist.quantile(u[n]), |c| c[n]);
            xs[n][1] = x;
            for k in [0, 2] {
                xs[n][k] = halley_from(&consts[k], x, u[n]);
            }
        }
        xs
    }

    fn t_derivs(&self, xs: &[[f64; 3]; 2]) -> Derivs {
        let Kind::StudentT { rho, q, h, consts } = &self.kind else {
            unreachable!("t derivatives requested for a non-t copula")
        };
        let (rho, q, h) = (*rho, *q, *h);
        let v: [f64; 3] = std::array::from_fn(|k| t_value(rho, q, &consts[k], xs[0][k], xs[1][k]));
        let (g_lo, _) = t_rho_derivs(rho, q, consts[0].nu, xs[0][0], xs[1][0]);
        let (g_mid, h_rr) = t_rho_derivs(rho, q, consts[1].nu, xs[0][1], xs[1][1]);
        let (g_hi, _) = t_rho_derivs(rho, q, consts[2].nu, xs[0][2], xs[1][2]);
        let g_nu = (v[2] - v[0]) / (2.0 * h);
        let h_nn = (v[2] - 2.0 * v[1] + v[0]) / (h * h);
        let h_rn = (g_hi - g_lo) / (2.0 * h);
        Derivs { dim: 2, value: v[1], grad: [g_mid, g_nu], hess: [[h_rr, h_rn], [h_rn, h_nn]] }
    }
}

/// `(Σ ln c, Σ ∂ρ ln c, Σ ∂²ρ ln c)` over latent points, Gaussian when `nu`
/// is `None`, Student-t with fixed ν otherwise.
pub(crate) fn elliptical_rho_sums(rho: f64, nu: Option<f64>, xs: &[[f64; 2]]) -> (f64, f64, f64) {
    let q = 1.0 - rho * rho;
    let (mut v, mut g, mut h) = (0.0, 0.0, 0.0);
    match nu {
        None => {
            for x in xs {
                let d = gauss_derivs(rho, q, x[0], x[1]);
                v += d.value;
                g += d.grad[0];
                h += d.hess[0][0];
            }
        }
        Some(nu) => {
            let k = TConsts::new(nu);
            for x in xs {
                v += t_value(rho, q, &k, x[0], x[1]);
                let (gr, hr) = t_rho_derivs(rho, q, nu, x[0], x[1]);
                g += gr;
                h += hr;
            }
        }
    }
    (v, g, h)
}

/// Halley steps towards `F_ν⁻¹(u)` from a nearby `x`. Near the centre one
/// step suffices; far tails take a few more.
fn halley_from(k: &TConsts, mut x: f64, u: f64) -> f64 {
    for _ in 0..4 {
        // upper half through the lower tail, where 1 - u is exact
        let g = if u > 0.5 { (1.0 - u) - k.dist.cdf(-x) } else { k.dist.cdf(x) - u };
        let r = g / k.dist.pdf(x);
        if !r.is_finite() || r.abs() > 0.1 * (1.0 + x.abs()) {
            return k.dist.quantile(u);
        }
        // f'/f for the t density
        let c = -(k.nu + 1.0) * x / (k.nu + x * x);
        x -= r / (1.0 - 0.5 * r * c);
        if r.abs() <= 1e-4 * (1.0 + x.abs()) {
            return x;
        }
    }
    x
}

/// Student-t latent points reduced to what the ρ-profile needs:
/// `[x1² + x2², x1·x2]` per point plus the summed marginal log-densities.
pub(crate) struct TProfile {
    k: TConsts,
    sp: Vec<[f64; 2]>,
    marginal: f64,
}

impl TProfile {
    pub(crate) fn new(nu: f64, xs: &[[f64; 2]]) -> Self {
        let k = TConsts::new(nu);
        let mut marginal = 0.0;
        let sp = xs
            .iter()
            .map(|x| {
                marginal += 2.0 * k.uni - 0.5 * (nu + 1.0) * ((x[0] * x[0] / nu).ln_1p() + (x[1] * x[1] / nu).ln_1p());
                [x[0] * x[0] + x[1] * x[1], x[0] * x[1]]
            })
            .collect();
        TProfile { k, sp, marginal }
    }

    /// Log-likelihood with its first two ρ-derivatives.
    pub(crate) fn sums(&self, rho: f64) -> (f64, f64, f64) {
        let nu = self.k.nu;
        let q = 1.0 - rho * rho;
        let c = 0.5 * (nu + 2.0);
        let (mut lz, mut g, mut h) = (0.0, 0.0, 0.0);
        for &[s, p] in &self.sp {
            let quad = s - 2.0 * rho * p;
            let z = quad / (nu * q);
            let num = rho * quad - p * q;
            let z_r = 2.0 * num / (nu * q * q);
            let z_rr = 2.0 * (quad * q + 4.0 * rho * num) / (nu * q * q * q);
            let inv = 1.0 / (1.0 + z);
            lz += z.ln_1p();
            g += z_r * inv;
            h += z_rr * inv - z_r * z_r * inv * inv;
        }
        let n = self.sp.len() as f64;
        let v = n * (self.k.biv - 0.5 * q.ln()) - c * lz - self.marginal;
        (v, n * rho / q - c * g, n * (1.0 + rho * rho) / (q * q) - c * h)
    }
}

/// Clayton sums over points given as `[ln u1, ln u2]`.
pub(crate) fn clayton_sums(theta: f64, logs: &[[f64; 2]]) -> (f64, f64, f64) {
    let (mut v, mut g, mut h) = (0.0, 0.0, 0.0);
    for l in logs {
        let d = clayton_derivs(theta, l[0], l[1]);
        v += d.value;
        g += d.grad[0];
        h += d.hess[0][0];
    }
    (v, g, h)
}

fn fill_sens(sens: &mut USens, n: usize, d: f64, up: &Derivs, dn: &Derivs) {
    let iu = up.indicator();
    let id = dn.indicator();
    for k in 0..2 {
        sens.dscore[n][k] = (up.grad[k] - dn.grad[k]) / (2.0 * d);
    }
    for j in 0..3 {
        sens.dindicator[n][j] = (iu[j] - id[j]) / (2.0 * d);
    }
}

fn gauss_value(rho: f64, q: f64, x1: f64, x2: f64) -> f64 {
    let s = x1 * x1 + x2 * x2;
    let p = x1 * x2;
    -0.5 * q.ln() - (rho * rho * s - 2.0 * rho * p) / (2.0 * q)
}

fn gauss_derivs(rho: f64, q: f64, x1: f64, x2: f64) -> Derivs {
    let s = x1 * x1 + x2 * x2;
    let p = x1 * x2;
    let num = rho * q + (1.0 + rho * rho) * p - rho * s;
    let dnum = 1.0 - 3.0 * rho * rho + 2.0 * rho * p - s;
    let q2 = q * q;
    Derivs {
        dim: 1,
        value: gauss_value(rho, q, x1, x2),
        grad: [num / q2, 0.0],
        hess: [[dnum / q2 + 4.0 * rho * num / (q2 * q), 0.0], [0.0, 0.0]],
    }
}

fn t_value(rho: f64, q: f64, k: &TConsts, x1: f64, x2: f64) -> f64 {
    let nu = k.nu;
    let quad = x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2;
    let joint = k.biv - 0.5 * q.ln() - 0.5 * (nu + 2.0) * (quad / (nu * q)).ln_1p();
    let m1 = k.uni - 0.5 * (nu + 1.0) * (x1 * x1 / nu).ln_1p();
    let m2 = k.uni - 0.5 * (nu + 1.0) * (x2 * x2 / nu).ln_1p();
    joint - m1 - m2
}

/// Analytic first and second derivative in ρ at fixed latent points.
fn t_rho_derivs(rho: f64, q: f64, nu: f64, x1: f64, x2: f64) -> (f64, f64) {
    let p = x1 * x2;
    let quad = x1 * x1 - 2.0 * rho * p + x2 * x2;
    let z = quad / (nu * q);
    let num = rho * quad - p * q;
    let z_r = 2.0 * num / (nu * q * q);
    let z_rr = 2.0 * (quad * q + 4.0 * rho * num) / (nu * q * q * q);
    let c = 0.5 * (nu + 2.0);
    let g = rho / q - c * z_r / (1.0 + z);
    let h = (1.0 + rho * rho) / (q * q) - c * (z_rr / (1.0 + z) - z_r * z_r / ((1.0 + z) * (1.0 + z)));
    (g, h)
}

fn clayton_derivs(theta: f64, l1: f64, l2: f64) -> Derivs {
    let ln_a = clayton_ln_a(theta, l1, l2);
    let w1 = (-theta * l1 - ln_a).exp();
    let w2 = (-theta * l2 - ln_a).exp();
    let r1 = -(l1 * w1 + l2 * w2);
    let r2 = l1 * l1 * w1 + l2 * l2 * w2;
    let c = 2.0 + 1.0 / theta;
    let t2 = theta * theta;
    let value = theta.ln_1p() - (1.0 + theta) * (l1 + l2) - c * ln_a;
    let grad = 1.0 / (1.0 + theta) - (l1 + l2) + ln_a / t2 - c * r1;
    let hess = -1.0 / ((1.0 + theta) * (1.0 + theta)) - 2.0 * ln_a / (t2 * theta) + 2.0 * r1 / t2 - c * (r2 - r1 * r1);
    Derivs { dim: 1, value, grad: [grad, 0.0], hess: [[hess, 0.0], [0.0, 0.0]] }
}
