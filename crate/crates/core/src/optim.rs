//! Small optimisers: Brent's 1-D minimiser, bounded Newton ascent and BFGS.

use nalgebra::{DMatrix, DVector};

const GOLD: f64 = 0.381_966_011_250_105_1;

/// Minimises `f` on `[a, b]`; returns `(x, f(x))`.
pub fn brent_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub x: f64,
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
    pub converged: bool,
    pub at_bound: bool,
    pub iterations: usize,
}

/// Maximises a smooth 1-D function on `[lo, hi]` by damped Newton steps.
/// `f` returns `(value, first derivative, second derivative)`.
pub fn newton_max<F: FnMut(f64) -> (f64, f64, f64)>(
    mut f: F,
    x0: f64,
    lo: f64,
    hi: f64,
    xtol: f64,
    max_iter: usize,
) -> NewtonOutcome {
    let mut x = x0.clamp(lo, hi);
    let (mut v, mut g, mut h) = f(x);
    let max_step = 0.25 * (hi - lo);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        if !v.is_finite() {
            break;
        }
        if (x <= lo && g <= 0.0) || (x >= hi && g >= 0.0) {
            converged = true;
            break;
        }
        let mut step = if h < 0.0 { -g / h } else { g.signum() * 0.1 * (1.0 + x.abs()) };
        step = step.clamp(-max_step, max_step);
        let mut accepted = None;
        for _ in 0..40 {
            let xn = (x + step).clamp(lo, hi);
            if xn == x {
                break;
            }
            let (vn, gn, hn) = f(xn);
            if vn.is_finite() && vn >= v - 1e-12 * v.abs() {
                accepted = Some((xn, vn, gn, hn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, vn, gn, hn)) = accepted else {
            converged = true;
            break;
        };
        let dx = (xn - x).abs();
        (x, v, g, h) = (xn, vn, gn, hn);
        if dx <= xtol * (1.0 + x.abs()) {
            converged = true;
            break;
        }
    }
    NewtonOutcome { x, value: v, grad: g, hess: h, converged, at_bound: x <= lo || x >= hi, iterations }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient with step `h·max(1, |x_i|)`.
pub fn numeric_gradient<F: FnMut(&DVector<f64>) -> f64>(f: &mut F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Central-difference Hessian.
pub fn numeric_hessian<F: FnMut(&DVector<f64>) -> f64>(f: &mut F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let steps: Vec<f64> = (0..n).map(|i| h * x[i].abs().max(1e-3)).collect();
    let f0 = f(x);
    let mut hm = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + steps[i];
        let fp = f(&xp);
        xp[i] = x[i] - steps[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * steps[i];
                xp[j] = x[j] + sj * steps[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v =
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * steps[i] * steps[j]);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// Minimises `f` by BFGS with a numeric gradient and Armijo backtracking.
/// Stops after two consecutive iterations whose relative change in `f` is
/// below `ftol`.
pub fn bfgs_min<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x0: DVector<f64>, ftol: f64, max_iter: usize) -> BfgsOutcome {
    const GRAD_STEP: f64 = 1e-6;
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = numeric_gradient(&mut f, &x, GRAD_STEP);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    let mut small = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut d = -(&hinv * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
        }
        if slope.abs() < 1e-300 {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let xn = &x + step * &d;
            let fnew = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                next = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = next else {
            converged = g.amax() < 1e-4 * (1.0 + fx.abs());
            break;
        };
        let gn = numeric_gradient(&mut f, &xn, GRAD_STEP);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let rel = (fx - fnew).abs() / fx.abs().max(1e-12);
        x = xn;
        g = gn;
        small = if rel < ftol { small + 1 } else { 0 };
        fx = fnew;
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        if small >= 2 {
            converged = true;
            break;
        }
    }
    BfgsOutcome { x, value: fx, iterations, converged }
}
