//! Reconstruction and localisation metrics.

use num_complex::Complex64;

use crate::channel::CartesianPoint;
use crate::error::{Error, Result};

/// Reported value for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Default match gate in wavelengths.
pub const MATCH_GATE_LAMBDA: f64 = 100.0;

/// `‖ĥ − h‖² / ‖h‖²`.
pub fn nmse(h_hat: &[Complex64], h: &[Complex64]) -> Result<f64> {
    if h_hat.len() != h.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), got: h_hat.len() });
    }
    let den: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Undefined("NMSE of a zero channel".into()));
    }
    let num: f64 = h_hat.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

pub fn to_db(v: f64) -> f64 {
    if v <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * v.log10()).max(NMSE_FLOOR_DB)
    }
}

pub fn nmse_db(h_hat: &[Complex64], h: &[Complex64]) -> Result<f64> {
    Ok(to_db(nmse(h_hat, h)?))
}

fn dist(a: CartesianPoint, b: CartesianPoint) -> f64 {
    (a.z - b.z).hypot(a.x - b.x)
}

/// Gated minimum-cost assignment between estimates and truth: maximises the
/// number of pairs within `gate`, then minimises their total Euclidean
/// distance. Returns `(est_index, truth_index)` pairs sorted by truth index.
pub fn match_paths(
    est: &[CartesianPoint],
    truth: &[CartesianPoint],
    gate: f64,
) -> Result<Vec<(usize, usize)>> {
    let m = truth.len();
    if m > 16 {
        return Err(Error::InvalidConfig("matching supports at most 16 true paths".into()));
    }
    let states = 1usize << m;
    // best (matched, cost) per truth mask, with back-pointers per estimate
    let worst = (0usize, f64::INFINITY);
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut dp = vec![worst; states];
    dp[0] = (0, 0.0);
    let mut choice: Vec<Vec<Option<usize>>> = Vec::with_capacity(est.len());
    let mut reachable = vec![false; states];
    reachable[0] = true;
    for e in est {
        let mut next = vec![worst; states];
        let mut next_reach = vec![false; states];
        let mut pick = vec![None; states];
        for mask in 0..states {
            if !reachable[mask] {
                continue;
            }
            if !next_reach[mask] || better(dp[mask], next[mask]) {
                next[mask] = dp[mask];
                next_reach[mask] = true;
                pick[mask] = None;
            }
            for (j, t) in truth.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let d = dist(*e, *t);
                if d > gate {
                    continue;
                }
                let nm = mask | (1 << j);
                let cand = (dp[mask].0 + 1, dp[mask].1 + d);
                if !next_reach[nm] || better(cand, next[nm]) {
                    next[nm] = cand;
                    next_reach[nm] = true;
                    pick[nm] = Some(j);
                }
            }
        }
        dp = next;
        reachable = next_reach;
        choice.push(pick);
    }
    let mut mask = (0..states)
        .filter(|&s| reachable[s])
        .fold(0, |b, s| if better(dp[s], dp[b]) { s } else { b });
    let mut pairs = Vec::new();
    for i in (0..est.len()).rev() {
        if let Some(j) = choice[i][mask] {
            pairs.push((i, j));
            mask &= !(1 << j);
        }
    }
    pairs.sort_by_key(|p| p.1);
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchSummary {
    /// Mean `|Δz| + |Δx|` over matched pairs, in wavelengths; `None` when
    /// nothing matched.
    pub l1_lambda: Option<f64>,
    pub matched: usize,
    pub n_est: usize,
    pub n_truth: usize,
}

impl MatchSummary {
    pub fn recall(&self) -> f64 {
        if self.n_truth == 0 {
            1.0
        } else {
            self.matched as f64 / self.n_truth as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.n_est == 0 {
            1.0
        } else {
            self.matched as f64 / self.n_est as f64
        }
    }
}

/// L1 position error in wavelengths over the gated assignment.
pub fn l1_distance(
    est: &[CartesianPoint],
    truth: &[CartesianPoint],
    wavelength: f64,
    gate_lambda: f64,
) -> Result<MatchSummary> {
    let pairs = match_paths(est, truth, gate_lambda * wavelength)?;
    let l1 = if pairs.is_empty() {
        None
    } else {
        let sum: f64 = pairs
            .iter()
            .map(|&(i, j)| (est[i].z - truth[j].z).abs() + (est[i].x - truth[j].x).abs())
            .sum();
        Some(sum / pairs.len() as f64 / wavelength)
    };
    Ok(MatchSummary {
        l1_lambda: l1,
        matched: pairs.len(),
        n_est: est.len(),
        n_truth: truth.len(),
    })
}

/// Wing loss of a residual magnitude: logarithmic below `w`, linear above,
/// continuous at `|x| = w`.
pub fn wing_loss(x: f64, w: f64, eps: f64) -> f64 {
    let a = x.abs();
    if a < w {
        w * (1.0 + a / eps).ln()
    } else {
        a - (w - w * (1.0 + w / eps).ln())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
