//! Small statistical helpers shared across modules.

use crate::error::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

pub fn chi2_quantile(dof: usize, alpha: f64) -> Result<f64> {
    if dof == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs dof >= 1 and alpha in (0,1), got ({dof}, {alpha})"
        )));
    }
    let d = ChiSquared::new(dof as f64).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(d.inverse_cdf(alpha))
}

pub fn chi2_sf(dof: usize, x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let d = ChiSquared::new(dof as f64).expect("dof >= 1");
    d.sf(x).clamp(0.0, 1.0)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Median of a copy of `x`; NaN for empty input.
pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Linear-interpolation sample quantile (type 7).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Kendall's τ-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let pairs = |m: u64| m * (m.saturating_sub(1)) / 2;
    let n0 = pairs(n as u64);

    let (mut tx, mut txy) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && p[j][0] == p[i][0] {
            j += 1;
        }
        tx += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && p[l][1] == p[k][1] {
                l += 1;
            }
            txy += pairs((l - k) as u64);
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = p.iter().map(|q| q[1]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ty = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        ty += pairs((j - i) as u64);
        i = j;
    }
    let num = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    num / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt()
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut swaps = merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            buf[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        } else {
            buf[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    k += left.len() - i;
    buf[k..k + right.len() - j].copy_from_slice(&right[j..]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// One-sample Kolmogorov–Smirnov statistic against U(0,1).
pub fn ks_uniform(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n)).fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 1%.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}
