//! Rank transform to pseudo-observations.

use crate::error::{Error, Result};

/// Column-wise ranks scaled by `1/(T+1)`, ties given their average rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    u: Vec<[f64; 2]>,
}

impl PseudoSample {
    /// Wraps points that are already uniforms, e.g. draws from a copula.
    pub fn from_uniforms(u: Vec<[f64; 2]>) -> Result<Self> {
        if u.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: u.len() });
        }
        if let Some(i) = u.iter().position(|p| !p.iter().all(|&v| v > 0.0 && v < 1.0)) {
            return Err(Error::Domain(format!("row {i} is not strictly inside the unit square")));
        }
        Ok(PseudoSample { u })
    }

    pub fn t_len(&self) -> usize {
        self.u.len()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.u
    }

    pub fn into_points(self) -> Vec<[f64; 2]> {
        self.u
    }

    /// Re-ranks a contiguous window `[start, end)`.
    pub fn rerank(&self, start: usize, end: usize) -> Result<PseudoSample> {
        pseudo_observations(&self.u[start..end])
    }
}

pub fn pseudo_observations(data: &[[f64; 2]]) -> Result<PseudoSample> {
    if data.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: data.len() });
    }
    if let Some(i) = data.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let c0 = column_ranks(data.iter().map(|p| p[0]));
    let c1 = column_ranks(data.iter().map(|p| p[1]));
    let scale = 1.0 / (data.len() as f64 + 1.0);
    let u = c0.into_iter().zip(c1).map(|(a, b)| [a * scale, b * scale]).collect();
    Ok(PseudoSample { u })
}

/// 1-based average ranks.
pub fn column_ranks(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = values.collect();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * ((i + 1) + j) as f64;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(ps: &PseudoSample, c: usize) -> Vec<f64> {
        ps.points().iter().map(|p| p[c]).collect()
    }

    #[test]
    fn ranks_scaled_by_t_plus_one() {
        let ps = pseudo_observations(&[[1.0, 5.0], [2.0, 5.0], [3.0, 1.0]]).unwrap();
        assert_eq!(col(&ps, 0), vec![0.25, 0.5, 0.75]);
        assert_eq!(col(&ps, 1), vec![0.625, 0.625, 0.25]);
    }

    #[test]
    fn invariant_to_monotone_transform() {
        let data: Vec<[f64; 2]> = (0..50).map(|i| [((i * 37) % 50) as f64 * 0.1, ((i * 11) % 7) as f64]).collect();
        let exp: Vec<[f64; 2]> = data.iter().map(|p| [p[0].exp(), p[1].exp()]).collect();
        assert_eq!(pseudo_observations(&data).unwrap(), pseudo_observations(&exp).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(pseudo_observations(&[[1.0, 2.0]]), Err(Error::InsufficientData { .. })));
        assert_eq!(pseudo_observations(&[[1.0, 2.0], [f64::NAN, 1.0]]), Err(Error::NonFinite(1)));
        assert!(PseudoSample::from_uniforms(vec![[0.5, 0.5], [1.0, 0.2]]).is_err());
    }
}
