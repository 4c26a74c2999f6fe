//! Scalar distribution functions used by the copula families.
//!
//! The Student-t routines split the real line into a central and a tail
//! branch so that both the CDF and its inverse keep full relative accuracy
//! near the median, where the textbook `I_{ν/(ν+x²)}` form cancels.

use libm::erfc;
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step: erfc_inv is only good to ~1e-11 relative
    let (f, d) = if x < 0.0 { (norm_cdf(x) - p, norm_pdf(x)) } else { (p - 1.0 + norm_cdf(-x), norm_pdf(x)) };
    if d > 0.0 {
        x - if x < 0.0 { f } else { -f } / d
    } else {
        x
    }
}

/// Log-normalizing constant of the univariate Student-t density.
pub fn t_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    StudentT::new(nu).ln_pdf(x)
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    StudentT::new(nu).pdf(x)
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    StudentT::new(nu).cdf(x)
}

/// Inverse of [`t_cdf`]; returns ±∞ at 0 and 1.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    StudentT::new(nu).quantile(p)
}

/// Standard Student-t distribution with its normalising constant cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    nu: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Self {
        StudentT { nu, ln_norm: t_log_norm(nu) }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn ln_norm(&self) -> f64 {
        self.ln_norm
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm - 0.5 * (self.nu + 1.0) * (x * x / self.nu).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let nu = self.nu;
        if x.is_nan() {
            return f64::NAN;
        }
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        let x2 = x * x;
        let z = x2 / (nu + x2);
        if z < 0.5 {
            let half = 0.5 * beta_reg(0.5, 0.5 * nu, z);
            if x >= 0.0 {
                0.5 + half
            } else {
                0.5 - half
            }
        } else {
            let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2));
            if x >= 0.0 {
                1.0 - tail
            } else {
                tail
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let centered = 2.0 * p - 1.0;
        let a = centered.abs();
        if a == 0.0 {
            return 0.0;
        }
        let q = p.min(1.0 - p);
        let m = self.polish(hill_magnitude(2.0 * q, self.nu, q), a, q);
        if centered < 0.0 {
            -m
        } else {
            m
        }
    }

    /// Halley iterations on |x| against the two-sided target. The central
    /// branch matches `|2p-1|/2`, the tail branch matches `min(p, 1-p)`.
    fn polish(&self, mut m: f64, a: f64, q: f64) -> f64 {
        let nu = self.nu;
        for _ in 0..6 {
            let m2 = m * m;
            let f = if m2 < nu {
                0.5 * beta_reg(0.5, 0.5 * nu, m2 / (nu + m2)) - 0.5 * a
            } else {
                q - 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + m2))
            };
            let d = self.pdf(m);
            if !(d > 0.0) || !f.is_finite() {
                break;
            }
            let r = f / d;
            let curv = -(nu + 1.0) * m / (nu + m2);
            let step = r / (1.0 - 0.5 * r * curv).max(0.5);
            let next = m - step;
            m = if next > 0.0 { next } else { 0.5 * m };
            // Halley is cubic: a relative step this small leaves ~1e-15
            if step.abs() <= 1e-5 * m {
                break;
            }
        }
        m
    }
}

/// Hill's approximation to the upper two-sided t quantile, `P(|T| > x) = p2`.
fn hill_magnitude(p2: f64, nu: f64, q: f64) -> f64 {
    if nu == 2.0 {
        return (2.0 / (p2 * (2.0 - p2)) - 2.0).max(0.0).sqrt();
    }
    let a = 1.0 / (nu - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * PI / 2.0).sqrt() * nu;
    let mut y = (d * p2).powf(2.0 / nu);
    if y > 0.05 + a {
        let x = norm_quantile(q);
        y = x * x;
        if nu < 5.0 {
            c += 0.3 * (nu - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = a * y * y;
        y = if y > 0.002 { y.exp() - 1.0 } else { 0.5 * y * y + y };
    } else {
        y = ((1.0 / (((nu + 6.0) / (nu * y) - 0.089 * d - 0.822) * (nu + 2.0) * 3.0) + 0.5 / (nu + 4.0)) * y - 1.0)
            * (nu + 1.0)
            / (nu + 2.0)
            + 1.0 / y;
    }
    (nu * y).sqrt()
}
