//! Small-scale NOMP refinement and the flexible (residual-detecting) refiner.
//!
//! Coarse positions come from a detector in one of the two domains. Each path
//! is refined by a local phase-only codebook search followed by Newton steps
//! on the single-path objective `J(p) = |a(p)^H y_r|² / ‖a(p)‖²`, where `a` is
//! the full steering vector with its `1/D` amplitude law. Gains are re-fit
//! jointly by least squares after every structural change.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::channel::{model_steering, ArrayConfig};
use crate::codebook::{argmax_row, codeword, Codebook, Domain, RegionSpec};
use crate::cost::OperationCount;
use crate::error::{Error, Result};
use crate::linalg::{dot_conj, dot_plain, least_squares, norm_sqr, residual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineOrder {
    /// Weakest residual correlation first.
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    /// Half-width of the local search box on the first axis (z or r).
    pub delta1: f64,
    /// Half-width on the second axis (x or θ).
    pub delta2: f64,
    /// Local grid pitch per axis.
    pub local_step: [f64; 2],
    /// Newton rounds per path.
    pub r_s: usize,
    pub p_fa: f64,
    pub noise_var: f64,
    pub max_detect: usize,
    #[serde(default = "default_order")]
    pub order: RefineOrder,
    /// Maximum sweeps of the per-path loop in `refine_all`; 1 is a single
    /// pass. Sweeping stops early once positions settle.
    #[serde(default = "default_passes")]
    pub passes: usize,
}

fn default_order() -> RefineOrder {
    RefineOrder::Ascending
}

fn default_passes() -> usize {
    1
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta1 >= 0.0 && self.delta2 >= 0.0) {
            return Err(Error::InvalidConfig("deltas must be non-negative".into()));
        }
        if !(self.local_step[0] > 0.0 && self.local_step[1] > 0.0) {
            return Err(Error::InvalidConfig("local_step must be positive".into()));
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::InvalidConfig("p_fa must lie in (0, 1)".into()));
        }
        if self.noise_var < 0.0 {
            return Err(Error::InvalidConfig("noise_var must be non-negative".into()));
        }
        if self.passes == 0 {
            return Err(Error::InvalidConfig("passes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Array, domain and region bounds a refinement session works in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub array: ArrayConfig,
    pub domain: Domain,
    pub bounds: [(f64, f64); 2],
}

impl SearchSpace {
    pub fn new(array: ArrayConfig, domain: Domain, region: &RegionSpec) -> Self {
        Self {
            array,
            domain,
            bounds: region.bounds(domain),
        }
    }

    pub fn steering(&self, p: [f64; 2]) -> Result<Vec<Complex64>> {
        model_steering(&self.array, self.domain.to_cartesian(p))
    }

    /// Central-difference steps for the Newton objective.
    pub fn fd_steps(&self) -> [f64; 2] {
        let l = self.array.wavelength();
        match self.domain {
            Domain::Cartesian => [l / 100.0, l / 100.0],
            Domain::Polar => [l / 100.0, 1e-4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Coarse,
    Detected,
    GridRefined,
    NewtonRefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Domain coordinates: `[z, x]` or `[r, θ]`.
    pub coords: [f64; 2],
    pub gain: Complex64,
    pub history: Vec<Provenance>,
}

/// Refined path set with its residual kept consistent with `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub domain: Domain,
    pub entries: Vec<Estimate>,
    pub residual: Vec<Complex64>,
    pub counts: OperationCount,
    /// Detection stopped at its cap with residual power still above threshold.
    pub incomplete: bool,
    /// A Newton session hit a non-finite objective and was abandoned.
    pub newton_aborts: usize,
    /// Residual power: `‖y‖²` first, then after every accepted update.
    #[serde(default)]
    pub residual_trace: Vec<f64>,
}

impl EstimateSet {
    /// No paths; the residual is `y` itself.
    pub fn empty(domain: Domain, y: &[Complex64]) -> Self {
        Self {
            domain,
            entries: Vec::new(),
            residual: y.to_vec(),
            counts: OperationCount::default(),
            incomplete: false,
            newton_aborts: 0,
            residual_trace: vec![norm_sqr(y)],
        }
    }

    pub(crate) fn set_residual(&mut self, r: Vec<Complex64>) {
        self.residual_trace.push(norm_sqr(&r));
        self.residual = r;
    }

    pub fn residual_power(&self) -> f64 {
        norm_sqr(&self.residual)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.entries.iter().map(|e| e.coords).collect()
    }

    /// Reconstructed channel contribution `Σ ĝ_s a(p̂_s)` (unscaled by √P).
    pub fn reconstruct(&self, space: &SearchSpace) -> Result<Vec<Complex64>> {
        let mut h = vec![Complex64::new(0.0, 0.0); space.array.n_antennas];
        for e in &self.entries {
            for (hv, av) in h.iter_mut().zip(space.steering(e.coords)?) {
                *hv += e.gain * av;
            }
        }
        Ok(h)
    }
}

/// `|a(p)^H y_r| / ‖a(p)‖`.
pub fn correlation_coeff(space: &SearchSpace, p: [f64; 2], y_r: &[Complex64]) -> Result<f64> {
    let a = space.steering(p)?;
    if a.len() != y_r.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: y_r.len(),
        });
    }
    Ok(dot_conj(&a, y_r).norm() / norm_sqr(&a).sqrt())
}

pub fn ls_gains(space: &SearchSpace, positions: &[[f64; 2]], y: &[Complex64]) -> Result<Vec<Complex64>> {
    let cols = positions
        .iter()
        .map(|p| space.steering(*p))
        .collect::<Result<Vec<_>>>()?;
    least_squares(&cols, y)
}

pub(crate) fn fit(space: &SearchSpace, positions: &[[f64; 2]], y: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let cols = positions
        .iter()
        .map(|p| space.steering(*p))
        .collect::<Result<Vec<_>>>()?;
    let g = least_squares(&cols, y)?;
    let r = residual(&cols, &g, y);
    Ok((g, r))
}

fn axis_offsets(delta: f64, step: f64) -> Vec<f64> {
    let k = (delta / step + 1e-9).floor() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

/// Local phase-only codebook search around `center` (clipped to the region).
/// Returns the best candidate; ties go to the candidate nearest `center`.
pub fn local_grid_refine(
    space: &SearchSpace,
    center: [f64; 2],
    y_r: &[Complex64],
    rc: &RefinerConfig,
    counts: &mut OperationCount,
) -> [f64; 2] {
    let offs1 = axis_offsets(rc.delta1, rc.local_step[0]);
    let offs2 = axis_offsets(rc.delta2, rc.local_step[1]);
    let n = space.array.n_antennas as f64;
    let mut best = center;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_dist = f64::INFINITY;
    for d1 in &offs1 {
        let a = center[0] + d1;
        if a < space.bounds[0].0 || a > space.bounds[0].1 {
            continue;
        }
        for d2 in &offs2 {
            let b = center[1] + d2;
            if b < space.bounds[1].0 || b > space.bounds[1].1 {
                continue;
            }
            let u = codeword(&space.array, space.domain.position(a, b));
            counts.codeword_evals += 1;
            let val = dot_plain(&u, y_r).norm() / n.sqrt();
            let dist = (d1 / rc.local_step[0]).powi(2) + (d2 / rc.local_step[1]).powi(2);
            if val > best_val || (val == best_val && dist < best_dist) {
                best = [a, b];
                best_val = val;
                best_dist = dist;
            }
        }
    }
    best
}

/// Newton objective `|a(p)^H y_r|² / ‖a(p)‖²`; non-finite when `p` is on the
/// array.
pub fn newton_objective(space: &SearchSpace, p: [f64; 2], y_r: &[Complex64]) -> f64 {
    match space.steering(p) {
        Ok(a) => dot_conj(&a, y_r).norm_sqr() / norm_sqr(&a),
        Err(_) => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub position: [f64; 2],
    /// Objective at the start and after every round.
    pub trace: Vec<f64>,
    pub accepted_steps: usize,
    pub aborted: bool,
}

const MAX_BACKTRACK: usize = 30;

/// Relative gain a step must exceed, so rounding noise near a maximum does
/// not count as progress.
const MIN_REL_GAIN: f64 = 1e-14;

/// `rounds` Newton ascent steps on the single-path objective with central
/// finite-difference derivatives. A step is accepted only if it strictly
/// increases the objective; otherwise it is halved until it does or the
/// backtracking budget runs out.
pub fn newton_refine(
    space: &SearchSpace,
    start: [f64; 2],
    y_r: &[Complex64],
    rounds: usize,
    counts: &mut OperationCount,
) -> NewtonOutcome {
    let h = space.fd_steps();
    let trust = [h[0] * 100.0, h[1] * 100.0];
    let mut eval = |p: [f64; 2]| {
        counts.objective_evals += 1;
        newton_objective(space, p, y_r)
    };
    let mut p = start;
    let mut j = eval(p);
    let mut out = NewtonOutcome {
        position: start,
        trace: vec![j],
        accepted_steps: 0,
        aborted: false,
    };
    if !j.is_finite() {
        out.aborted = true;
        return out;
    }
    for _ in 0..rounds {
        let at = |d0: f64, d1: f64| [p[0] + d0 * h[0], p[1] + d1 * h[1]];
        let jp0 = eval(at(1.0, 0.0));
        let jm0 = eval(at(-1.0, 0.0));
        let jp1 = eval(at(0.0, 1.0));
        let jm1 = eval(at(0.0, -1.0));
        let jpp = eval(at(1.0, 1.0));
        let jpm = eval(at(1.0, -1.0));
        let jmp = eval(at(-1.0, 1.0));
        let jmm = eval(at(-1.0, -1.0));
        if ![jp0, jm0, jp1, jm1, jpp, jpm, jmp, jmm].iter().all(|v| v.is_finite()) {
            out.aborted = true;
            break;
        }
        counts.newton_steps += 1;
        let g = [(jp0 - jm0) / (2.0 * h[0]), (jp1 - jm1) / (2.0 * h[1])];
        let h00 = (jp0 - 2.0 * j + jm0) / (h[0] * h[0]);
        let h11 = (jp1 - 2.0 * j + jm1) / (h[1] * h[1]);
        let h01 = (jpp - jpm - jmp + jmm) / (4.0 * h[0] * h[1]);
        let det = h00 * h11 - h01 * h01;
        let step = if h00 < 0.0 && det > 0.0 {
            // −H⁻¹g
            [
                -(h11 * g[0] - h01 * g[1]) / det,
                -(-h01 * g[0] + h00 * g[1]) / det,
            ]
        } else {
            // gradient ascent scaled to one trust length in normalised units
            let gs = [g[0] * trust[0], g[1] * trust[1]];
            let norm = gs[0].hypot(gs[1]);
            if norm == 0.0 {
                [0.0, 0.0]
            } else {
                [gs[0] / norm * trust[0], gs[1] / norm * trust[1]]
            }
        };
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..MAX_BACKTRACK {
            let cand = [p[0] + scale * step[0], p[1] + scale * step[1]];
            let jc = eval(cand);
            if jc.is_finite() && jc > j + MIN_REL_GAIN * j.abs() {
                p = cand;
                j = jc;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        out.trace.push(j);
        if moved {
            out.accepted_steps += 1;
        } else {
            break;
        }
    }
    out.position = p;
    out
}

/// Small-scale NOMP refiner over a set of coarse positions, repeated
/// `rc.passes` times.
pub fn refine_all(
    space: &SearchSpace,
    coarse: &[[f64; 2]],
    y: &[Complex64],
    rc: &RefinerConfig,
) -> Result<EstimateSet> {
    rc.validate()?;
    let entries = coarse
        .iter()
        .map(|c| Estimate {
            coords: *c,
            gain: Complex64::new(0.0, 0.0),
            history: vec![Provenance::Coarse],
        })
        .collect();
    let mut set = EstimateSet { entries, ..EstimateSet::empty(space.domain, y) };
    refine_passes(space, &mut set, y, rc)?;
    Ok(set)
}

/// Up to `rc.passes` sweeps, stopping once a sweep moves no path by more
/// than the finite-difference step on either axis.
fn refine_passes(space: &SearchSpace, set: &mut EstimateSet, y: &[Complex64], rc: &RefinerConfig) -> Result<()> {
    let h = space.fd_steps();
    for _ in 0..rc.passes {
        let before = set.positions();
        refine_in_place(space, set, y, rc)?;
        let settled = before
            .iter()
            .zip(set.positions())
            .all(|(a, b)| (a[0] - b[0]).abs() <= h[0] && (a[1] - b[1]).abs() <= h[1]);
        if settled {
            break;
        }
    }
    Ok(())
}

fn refine_in_place(space: &SearchSpace, set: &mut EstimateSet, y: &[Complex64], rc: &RefinerConfig) -> Result<()> {
    rc.validate()?;
    if set.entries.is_empty() {
        return Err(Error::InvalidConfig("refine_all needs at least one coarse position".into()));
    }
    let mut positions = set.positions();
    let (mut gains, mut y_r) = fit(space, &positions, y)?;
    set.residual_trace.push(norm_sqr(&y_r));

    let corr = positions
        .iter()
        .map(|p| correlation_coeff(space, *p, &y_r))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        let o = corr[a].total_cmp(&corr[b]);
        match rc.order {
            RefineOrder::Ascending => o,
            RefineOrder::Descending => o.reverse(),
        }
    });

    for s in order {
        let before = norm_sqr(&y_r);
        // residual with path s's own contribution restored
        let a_s = space.steering(positions[s])?;
        let mut own = y_r.clone();
        for (v, a) in own.iter_mut().zip(&a_s) {
            *v += gains[s] * a;
        }
        let grid = local_grid_refine(space, positions[s], &own, rc, &mut set.counts);
        let newton = newton_refine(space, grid, &own, rc.r_s, &mut set.counts);
        if newton.aborted {
            set.newton_aborts += 1;
        }
        let mut trial = positions.clone();
        trial[s] = newton.position;
        match fit(space, &trial, y) {
            Ok((g, r)) if norm_sqr(&r) <= before => {
                positions = trial;
                gains = g;
                set.residual_trace.push(norm_sqr(&r));
                y_r = r;
                let moved = grid != set.entries[s].coords;
                let hist = &mut set.entries[s].history;
                if moved {
                    hist.push(Provenance::GridRefined);
                }
                if newton.accepted_steps > 0 {
                    hist.push(Provenance::NewtonRefined);
                }
            }
            // the move made the joint fit worse or degenerate: keep the old position
            _ => {}
        }
        set.entries[s].coords = positions[s];
    }
    for (e, g) in set.entries.iter_mut().zip(&gains) {
        e.gain = *g;
    }
    set.residual = y_r;
    Ok(())
}

/// Greedy selection of `s` paths from a pool of candidate positions.
///
/// Each round scores the unused candidates against the residual with their
/// phase-only codewords, takes the best, refines it by local search and
/// Newton steps, and re-fits all gains. The selected set is then polished by
/// the small-scale refiner.
pub fn select_from_pool(
    space: &SearchSpace,
    pool: &[[f64; 2]],
    s: usize,
    y: &[Complex64],
    rc: &RefinerConfig,
) -> Result<EstimateSet> {
    rc.validate()?;
    let mut set = EstimateSet::empty(space.domain, y);
    let mut used = vec![false; pool.len()];
    while set.entries.len() < s {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in pool.iter().enumerate() {
            if used[i] {
                continue;
            }
            let u = codeword(&space.array, space.domain.position(q[0], q[1]));
            set.counts.codeword_evals += 1;
            let v = dot_plain(&u, &set.residual).norm();
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        let Some((i, _)) = best else {
            set.incomplete = true;
            break;
        };
        used[i] = true;
        let grid = local_grid_refine(space, pool[i], &set.residual, rc, &mut set.counts);
        let newton = newton_refine(space, grid, &set.residual, rc.r_s, &mut set.counts);
        if newton.aborted {
            set.newton_aborts += 1;
        }
        let mut positions = set.positions();
        positions.push(newton.position);
        let (g, r) = match fit(space, &positions, y) {
            Ok(v) => v,
            Err(Error::RankDeficient) => continue,
            Err(e) => return Err(e),
        };
        if norm_sqr(&r) >= set.residual_power() {
            continue;
        }
        set.entries.push(Estimate {
            coords: newton.position,
            gain: Complex64::new(0.0, 0.0),
            history: vec![Provenance::Coarse, Provenance::GridRefined, Provenance::NewtonRefined],
        });
        for (e, gv) in set.entries.iter_mut().zip(&g) {
            e.gain = *gv;
        }
        set.set_residual(r);
    }
    if !set.entries.is_empty() {
        refine_in_place(space, &mut set, y, rc)?;
    }
    Ok(set)
}

/// Residual-power detection threshold `σ²√N·Q⁻¹(P_fa) + σ²N`.
pub fn residual_power_threshold(noise_var: f64, n: usize, p_fa: f64) -> Result<f64> {
    let nf = n as f64;
    Ok(noise_var * nf.sqrt() * q_inverse(p_fa)? + noise_var * nf)
}

/// Flexible refiner: refines the (possibly incomplete) coarse set, then keeps
/// detecting new paths on the full codebook while the residual power stays
/// above threshold, and finally polishes the union.
pub fn flexible_refine(
    space: &SearchSpace,
    coarse: &[[f64; 2]],
    y: &[Complex64],
    codebook: &Codebook,
    rc: &RefinerConfig,
) -> Result<EstimateSet> {
    rc.validate()?;
    if codebook.domain != space.domain {
        return Err(Error::InvalidConfig("codebook domain differs from refiner domain".into()));
    }
    let tau = residual_power_threshold(rc.noise_var, space.array.n_antennas, rc.p_fa)?;
    let mut set = if coarse.is_empty() {
        EstimateSet::empty(space.domain, y)
    } else {
        refine_all(space, coarse, y, rc)?
    };

    let mut detected = 0;
    while set.residual_power() >= tau {
        if detected >= rc.max_detect {
            set.incomplete = true;
            break;
        }
        let scan = codebook.project(&set.residual)?;
        set.counts.codeword_evals += codebook.rows() as u64;
        set.counts.detections += 1;
        let start = codebook.grid_coords(argmax_row(&scan));
        let grid = local_grid_refine(space, start, &set.residual, rc, &mut set.counts);
        let newton = newton_refine(space, grid, &set.residual, rc.r_s, &mut set.counts);
        if newton.aborted {
            set.newton_aborts += 1;
        }
        let mut positions = set.positions();
        positions.push(newton.position);
        let (g, r) = match fit(space, &positions, y) {
            Ok(v) => v,
            Err(Error::RankDeficient) => {
                set.incomplete = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if norm_sqr(&r) >= set.residual_power() {
            set.incomplete = true;
            break;
        }
        set.entries.push(Estimate {
            coords: newton.position,
            gain: Complex64::new(0.0, 0.0),
            history: vec![Provenance::Detected, Provenance::GridRefined, Provenance::NewtonRefined],
        });
        for (e, gv) in set.entries.iter_mut().zip(&g) {
            e.gain = *gv;
        }
        set.set_residual(r);
        detected += 1;
    }
    if detected > 0 && set.entries.len() > 1 {
        refine_passes(space, &mut set, y, rc)?;
    }
    Ok(set)
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] by bracketed bisection to 1e-12 in `x`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("Q⁻¹ needs p in (0, 1), got {p}")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    // Q is strictly decreasing
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
