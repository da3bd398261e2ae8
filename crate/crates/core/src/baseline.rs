//! Exhaustive near-field NOMP over a full codebook.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codebook::{argmax_row, Codebook};
use crate::error::{Error, Result};
use crate::linalg::norm_sqr;
use crate::refiner::{fit, newton_refine, EstimateSet, Estimate, Provenance, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnompConfig {
    /// Cyclic refinement rounds after each detection.
    pub r_c: usize,
    /// Newton rounds per path per cycle.
    pub r_s: usize,
    /// Stop once residual power falls below this.
    pub tau: f64,
    pub max_paths: usize,
}

impl NnompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidConfig("tau must be non-negative".into()));
        }
        if self.max_paths == 0 {
            return Err(Error::InvalidConfig("max_paths must be positive".into()));
        }
        Ok(())
    }
}

/// Residual power relative to `‖y‖²` below which the loop always stops, so a
/// noiseless exact fit terminates even with `tau = 0`.
const EXACT_FIT_REL: f64 = 1e-20;

/// Greedy detection on the full codebook with cyclic Newton refinement.
///
/// Each iteration scans every codeword against the residual, adds the
/// argmax, re-fits gains, then runs `r_c` cycles in which every path gets
/// `r_s` Newton steps followed by a joint re-fit. Moves that would increase
/// the residual are reverted, so residual power never increases.
pub fn nnomp(space: &SearchSpace, y: &[Complex64], codebook: &Codebook, nc: &NnompConfig) -> Result<EstimateSet> {
    nc.validate()?;
    if codebook.domain != space.domain {
        return Err(Error::InvalidConfig("codebook domain differs from search domain".into()));
    }
    if y.len() != space.array.n_antennas {
        return Err(Error::DimensionMismatch { expected: space.array.n_antennas, got: y.len() });
    }
    let floor = EXACT_FIT_REL * norm_sqr(y);
    let mut set = EstimateSet::empty(space.domain, y);
    let mut positions: Vec<[f64; 2]> = Vec::new();
    let mut gains: Vec<Complex64> = Vec::new();
    while set.residual_power() >= nc.tau && set.residual_power() > floor {
        if positions.len() >= nc.max_paths {
            set.incomplete = true;
            break;
        }
        let scan = codebook.project(&set.residual)?;
        set.counts.codeword_evals += codebook.rows() as u64;
        set.counts.detections += 1;
        let mut trial = positions.clone();
        trial.push(codebook.grid_coords(argmax_row(&scan)));
        let (g, r) = match fit(space, &trial, y) {
            Ok(v) => v,
            Err(Error::RankDeficient) => {
                set.incomplete = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let before = set.residual_power();
        if norm_sqr(&r) >= before {
            set.incomplete = true;
            break;
        }
        positions = trial;
        gains = g;
        set.set_residual(r);
        set.entries.push(Estimate {
            coords: *positions.last().unwrap(),
            gain: Complex64::new(0.0, 0.0),
            history: vec![Provenance::Detected],
        });
        for _ in 0..nc.r_c {
            for s in 0..positions.len() {
                let a = space.steering(positions[s])?;
                let own: Vec<Complex64> = set
                    .residual
                    .iter()
                    .zip(&a)
                    .map(|(r, a)| r + gains[s] * a)
                    .collect();
                let out = newton_refine(space, positions[s], &own, nc.r_s, &mut set.counts);
                if out.aborted {
                    set.newton_aborts += 1;
                }
                if out.accepted_steps == 0 {
                    continue;
                }
                let mut cand = positions.clone();
                cand[s] = out.position;
                if let Ok((g, r)) = fit(space, &cand, y) {
                    if norm_sqr(&r) <= set.residual_power() {
                        positions = cand;
                        gains = g;
                        set.set_residual(r);
                        let hist = &mut set.entries[s].history;
                        if hist.last() != Some(&Provenance::NewtonRefined) {
                            hist.push(Provenance::NewtonRefined);
                        }
                    }
                }
            }
        }
    }
    for ((e, p), g) in set.entries.iter_mut().zip(&positions).zip(&gains) {
        e.coords = *p;
        e.gain = *g;
    }
    Ok(set)
}
