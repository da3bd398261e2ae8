//! SNR-sweep benchmark harness.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{nnomp, NnompConfig};
use crate::channel::{received_signal, synthesize_channel, CartesianPoint, Scene};
use crate::codebook::{build_codebook, transform, Codebook, Domain};
use crate::cost::OperationCount;
use crate::detect::classical::ranked_peaks;
use crate::detect::{coarse_params, detect_classical, infer, NetArch, OutputMode, WeightBundle};
use crate::error::{Error, Result};
use crate::imaging::{pixel_to_grid_physical, resample, to_image, ChannelImage};
use crate::linalg::least_squares;
use crate::metrics::{l1_distance, mean, median, nmse_db, MATCH_GATE_LAMBDA};
use crate::profile::Profile;
use crate::refiner::{
    flexible_refine, refine_all, residual_power_threshold, select_from_pool, Estimate, EstimateSet, Provenance,
    SearchSpace,
};
use crate::scenegen::{sample_scene, SceneGenConfig};

pub const CSV_HEADER: &str = "method,snr_db,seeds,nmse_db_med,nmse_db_mean,l1_lambda_med,recall,precision,codeword_evals_mean,newton_steps_mean,wall_ms_med";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    ClassicalRefine,
    CknetRefine,
    FlexibleRefine,
    Nnomp,
    CoarseOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ClassicalRefine,
        Method::CknetRefine,
        Method::FlexibleRefine,
        Method::Nnomp,
        Method::CoarseOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ClassicalRefine => "classical+refine",
            Method::CknetRefine => "cknet+refine",
            Method::FlexibleRefine => "flexible+refine",
            Method::Nnomp => "nnomp",
            Method::CoarseOnly => "coarse-only",
        }
    }

    pub fn needs_network(self) -> bool {
        matches!(self, Method::CknetRefine | Method::FlexibleRefine)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// A loaded keypoint network.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: NetArch,
    pub weights: WeightBundle,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub profile: Profile,
    pub domain: Domain,
    pub methods: Vec<Method>,
    pub snr_grid: Vec<f64>,
    pub seeds: usize,
    pub base_seed: u64,
    /// Record wall-clock time; off keeps the CSV reproducible byte for byte.
    pub timing: bool,
    pub cknet: Option<Network>,
    pub flexnet: Option<Network>,
}

/// Codebooks and search space shared by all cells of a run.
pub struct BenchContext {
    pub profile: Profile,
    pub domain: Domain,
    pub space: SearchSpace,
    pub image_codebook: Codebook,
    pub nnomp_codebook: Codebook,
}

impl BenchContext {
    pub fn new(profile: Profile, domain: Domain) -> Result<Self> {
        let image_codebook = build_codebook(&profile.array, &profile.region, domain)?;
        let nnomp_codebook = build_codebook(&profile.array, &profile.nnomp_region(), domain)?;
        Ok(Self {
            space: SearchSpace::new(profile.array, domain, &profile.region),
            profile,
            domain,
            image_codebook,
            nnomp_codebook,
        })
    }

    /// Renders the channel image at the profile's image size.
    pub fn image(&self, y: &[num_complex::Complex64], counts: &mut OperationCount) -> Result<ChannelImage> {
        let img = to_image(&transform(&self.image_codebook, y)?)?;
        counts.transform_rows += self.image_codebook.rows() as u64;
        let (h, w) = self.profile.image;
        if (img.i_h, img.i_w) == (h, w) {
            Ok(img)
        } else {
            resample(&img, w, h)
        }
    }

    /// Peak-picked positions in domain coordinates, strongest `k` peaks.
    pub fn classical_coarse(&self, img: &ChannelImage, k: usize) -> Result<Vec<[f64; 2]>> {
        let pred = detect_classical(img, k);
        pred.points_px
            .iter()
            .map(|p| {
                let pos = pixel_to_grid_physical(img, (p[0], p[1]))?;
                Ok(self.domain.coords(pos.to_cartesian()))
            })
            .collect()
    }

    /// Up to `classical_pool` strongest peaks, without padding.
    pub fn classical_pool(&self, img: &ChannelImage) -> Result<Vec<[f64; 2]>> {
        ranked_peaks(img)
            .into_iter()
            .take(self.profile.classical_pool.max(self.profile.s_fixed))
            .map(|(r, c)| {
                let pos = pixel_to_grid_physical(img, (r as f64, c as f64))?;
                Ok(self.domain.coords(pos.to_cartesian()))
            })
            .collect()
    }

    pub fn nnomp_config(&self, noise_var: f64) -> Result<NnompConfig> {
        let rc = self.profile.refiner;
        Ok(NnompConfig {
            r_c: self.profile.nnomp_r_c,
            r_s: rc.r_s,
            tau: residual_power_threshold(noise_var, self.profile.array.n_antennas, rc.p_fa)?,
            max_paths: rc.max_detect,
        })
    }
}

fn network_coarse(ctx: &BenchContext, net: &Network, mode: OutputMode, img: &ChannelImage) -> Result<Vec<[f64; 2]>> {
    let pred = infer(&net.arch, &net.weights, img, mode, net.tau)?;
    Ok(coarse_params(&pred, img)?
        .into_iter()
        .map(|c| ctx.domain.coords(c.position.to_cartesian()))
        .collect())
}

/// Coarse positions with LS gains and no refinement.
fn coarse_only(space: &SearchSpace, coarse: &[[f64; 2]], y: &[num_complex::Complex64]) -> Result<EstimateSet> {
    let cols = coarse
        .iter()
        .map(|p| space.steering(*p))
        .collect::<Result<Vec<_>>>()?;
    let gains = least_squares(&cols, y)?;
    let residual = crate::linalg::residual(&cols, &gains, y);
    let mut set = EstimateSet::empty(space.domain, y);
    set.entries = coarse
        .iter()
        .zip(gains)
        .map(|(c, g)| Estimate { coords: *c, gain: g, history: vec![Provenance::Coarse] })
        .collect();
    set.residual_trace.push(crate::linalg::norm_sqr(&residual));
    set.residual = residual;
    Ok(set)
}

/// Runs one method on one received signal.
pub fn run_method(
    ctx: &BenchContext,
    cfg: &BenchConfig,
    method: Method,
    y: &[num_complex::Complex64],
    noise_var: f64,
) -> Result<EstimateSet> {
    let rc = ctx.profile.refiner_for(ctx.domain, noise_var);
    let mut pre = OperationCount::default();
    let mut est = match method {
        Method::Nnomp => nnomp(&ctx.space, y, &ctx.nnomp_codebook, &ctx.nnomp_config(noise_var)?)?,
        Method::ClassicalRefine | Method::CoarseOnly => {
            let img = ctx.image(y, &mut pre)?;
            if method == Method::CoarseOnly {
                let coarse = ctx.classical_coarse(&img, ctx.profile.s_fixed)?;
                coarse_only(&ctx.space, &coarse, y)?
            } else {
                let pool = ctx.classical_pool(&img)?;
                select_from_pool(&ctx.space, &pool, ctx.profile.s_fixed, y, &rc)?
            }
        }
        Method::CknetRefine => {
            let net = cfg
                .cknet
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("cknet+refine needs a fixed-mode network".into()))?;
            let img = ctx.image(y, &mut pre)?;
            let coarse = network_coarse(ctx, net, OutputMode::Fixed, &img)?;
            refine_all(&ctx.space, &coarse, y, &rc)?
        }
        Method::FlexibleRefine => {
            let net = cfg
                .flexnet
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("flexible+refine needs a flexible-mode network".into()))?;
            let img = ctx.image(y, &mut pre)?;
            let coarse = network_coarse(ctx, net, OutputMode::Flexible, &img)?;
            flexible_refine(&ctx.space, &coarse, y, &ctx.image_codebook, &rc)?
        }
    };
    est.counts += pre;
    Ok(est)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub nmse_db: f64,
    pub l1_lambda: Option<f64>,
    pub matched: usize,
    pub n_est: usize,
    pub n_truth: usize,
    pub counts: OperationCount,
    pub wall_ms: f64,
}

pub fn score(ctx: &BenchContext, scene: &Scene, est: &EstimateSet) -> Result<(f64, crate::metrics::MatchSummary)> {
    let h = synthesize_channel(&ctx.profile.array, scene)?;
    let h_hat = est.reconstruct(&ctx.space)?;
    let truth: Vec<CartesianPoint> = scene.paths.iter().map(|p| p.position).collect();
    let found: Vec<CartesianPoint> = est.entries.iter().map(|e| ctx.domain.to_cartesian(e.coords)).collect();
    let m = l1_distance(&found, &truth, ctx.profile.wavelength(), MATCH_GATE_LAMBDA)?;
    Ok((nmse_db(&h_hat, &h)?, m))
}

/// Scene for benchmark seed `index` at the requested SNR.
pub fn bench_scene(profile: &Profile, base_seed: u64, index: u64, snr_db: f64) -> Result<(Scene, u64)> {
    let gen = SceneGenConfig {
        snr_range_db: [snr_db, snr_db],
        ..profile.scene_gen(profile.path_count(false), base_seed)
    };
    let s = sample_scene(&gen, &profile.array, index)?;
    Ok((s.scene, s.noise_seed))
}

fn run_seed(ctx: &BenchContext, cfg: &BenchConfig, method: Method, snr_db: f64, index: u64) -> Result<SeedOutcome> {
    let (scene, noise_seed) = bench_scene(&ctx.profile, cfg.base_seed, index, snr_db)?;
    let y = received_signal(&ctx.profile.array, &scene, noise_seed)?;
    let t0 = Instant::now();
    let est = run_method(ctx, cfg, method, &y, scene.noise_var)?;
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let (nmse, m) = score(ctx, &scene, &est)?;
    Ok(SeedOutcome {
        nmse_db: nmse,
        l1_lambda: m.l1_lambda,
        matched: m.matched,
        n_est: m.n_est,
        n_truth: m.n_truth,
        counts: est.counts,
        wall_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub snr_db: f64,
    pub seeds: usize,
    pub failures: usize,
    pub nmse_db_med: Option<f64>,
    pub nmse_db_mean: Option<f64>,
    pub nmse_db_q1: Option<f64>,
    pub nmse_db_q3: Option<f64>,
    pub l1_lambda_med: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub codeword_evals_mean: Option<f64>,
    pub newton_steps_mean: Option<f64>,
    pub wall_ms_med: Option<f64>,
}

fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn aggregate(method: Method, snr_db: f64, seeds: usize, outcomes: &[SeedOutcome], failures: usize, timing: bool) -> BenchRow {
    let nmse: Vec<f64> = outcomes.iter().map(|o| o.nmse_db).collect();
    let l1: Vec<f64> = outcomes.iter().filter_map(|o| o.l1_lambda).collect();
    let matched: usize = outcomes.iter().map(|o| o.matched).sum();
    let n_est: usize = outcomes.iter().map(|o| o.n_est).sum();
    let n_truth: usize = outcomes.iter().map(|o| o.n_truth).sum();
    let evals: Vec<f64> = outcomes.iter().map(|o| o.counts.codeword_evals as f64).collect();
    let newton: Vec<f64> = outcomes.iter().map(|o| o.counts.newton_steps as f64).collect();
    let wall: Vec<f64> = outcomes.iter().map(|o| o.wall_ms).collect();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    BenchRow {
        method: method.name().into(),
        snr_db,
        seeds,
        failures,
        nmse_db_med: median(&nmse),
        nmse_db_mean: mean(&nmse),
        nmse_db_q1: quantile(&nmse, 0.25),
        nmse_db_q3: quantile(&nmse, 0.75),
        l1_lambda_med: median(&l1),
        recall: ratio(matched, n_truth),
        precision: if outcomes.is_empty() { None } else { Some(ratio(matched, n_est).unwrap_or(1.0)) },
        codeword_evals_mean: mean(&evals),
        newton_steps_mean: mean(&newton),
        wall_ms_med: if timing { median(&wall) } else { None },
    }
}

/// Runs every (method, SNR) cell; rows come out in method-then-SNR order.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.seeds == 0 || cfg.snr_grid.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("bench needs methods, SNR points and seeds".into()));
    }
    let ctx = BenchContext::new(cfg.profile.clone(), cfg.domain)?;
    run_bench_with(&ctx, cfg)
}

pub fn run_bench_with(ctx: &BenchContext, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &snr in &cfg.snr_grid {
            let results: Vec<Result<SeedOutcome>> = (0..cfg.seeds as u64)
                .into_par_iter()
                .map(|i| run_seed(ctx, cfg, method, snr, i))
                .collect();
            let mut ok = Vec::with_capacity(results.len());
            let mut failures = 0;
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(o) => ok.push(o),
                    Err(e) => {
                        failures += 1;
                        warn!("{} at {snr} dB, seed {i}: {e}", method.name());
                    }
                }
            }
            rows.push(aggregate(method, snr, cfg.seeds, &ok, failures, cfg.timing));
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.snr_db,
            r.seeds,
            fmt_opt(r.nmse_db_med),
            fmt_opt(r.nmse_db_mean),
            fmt_opt(r.l1_lambda_med),
            fmt_opt(r.recall),
            fmt_opt(r.precision),
            fmt_opt(r.codeword_evals_mean),
            fmt_opt(r.newton_steps_mean),
            fmt_opt(r.wall_ms_med),
        )?;
    }
    Ok(())
}

/// Whitespace-separated data for plotting, one block per method.
pub fn gnuplot_data(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let mut last: Option<&str> = None;
    for r in rows {
        if last != Some(r.method.as_str()) {
            if last.is_some() {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# {}\n# snr_db nmse_med nmse_q1 nmse_q3 l1_med recall failures", r.method);
            last = Some(&r.method);
        }
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NaN".into());
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            r.snr_db,
            f(r.nmse_db_med),
            f(r.nmse_db_q1),
            f(r.nmse_db_q3),
            f(r.l1_lambda_med),
            f(r.recall),
            r.failures
        );
    }
    out
}

/// Parses `lo:step:hi` (inclusive) or a comma-separated list.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("bad SNR grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (lo, step, hi) = (v[0], v[1], v[2]);
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| lo + k as f64 * step).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}
