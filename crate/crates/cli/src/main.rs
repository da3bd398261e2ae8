//! Command-line front end for the near-field reconstruction toolkit.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use nearfield::baseline::nnomp;
use nearfield::bench::{
    gnuplot_data, parse_snr_grid, run_bench, write_csv, BenchConfig, BenchContext, Method, Network,
};
use nearfield::channel::received_signal;
use nearfield::codebook::{build_codebook, Domain};
use nearfield::cost::OperationCount;
use nearfield::detect::{detect_classical, infer, NetArch, OutputMode, WeightBundle};
use nearfield::imaging::ChannelImage;
use nearfield::io::{
    read_cvec, write_cvec, CoarseFile, DetectionFile, EstimateFile, RefineJob, RefineMode, SceneFile,
};
use nearfield::metrics::{l1_distance, nmse_db, MATCH_GATE_LAMBDA};
use nearfield::profile::Profile;
use nearfield::refiner::{flexible_refine, refine_all, select_from_pool, SearchSpace};
use nearfield::scenegen::{emit_dataset, sample_scene, DatasetSpec, SceneGenConfig};

/// Near-field XL-MIMO channel reconstruction from channel images.
///
/// SNR is the array-averaged post-channel ratio
/// 10·log10(P·‖h‖² / (N·σ²)) with unit pilot power P.
#[derive(Parser)]
#[command(name = "nearfield", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a phase-only codebook and write its NFCB0001 cache.
    Codebook {
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labelled image dataset (PGM + JSONL + manifest).
    Dataset {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, value_enum, default_value = "cart")]
        domain: DomainArg,
        /// Split sizes `train:val:test`; defaults to the profile's.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw one random scene and its received signal.
    Simulate {
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, value_enum, default_value = "fixed")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Fixed SNR in dB instead of a draw from the profile range.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        noiseless: bool,
        #[arg(long)]
        scene_out: PathBuf,
        #[arg(long)]
        signal_out: PathBuf,
    },
    /// Render a received signal as a channel image.
    Image {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, value_enum, default_value = "cart")]
        domain: DomainArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect keypoints in a channel image.
    Detect(DetectArgs),
    /// Refine coarse positions against a received signal.
    Refine {
        #[arg(long)]
        coarse: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a baseline estimator.
    Baseline {
        #[command(subcommand)]
        which: BaselineCmd,
    },
    /// Sweep methods over SNR and seeds, writing a CSV summary.
    Bench(BenchArgs),
    /// Score an estimate against its scene.
    Score {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long, default_value = "desk")]
        profile: String,
    },
}

#[derive(Args)]
struct DetectArgs {
    /// CKW1 weight file; omit to use the classical peak detector.
    #[arg(long, requires = "arch")]
    net: Option<PathBuf>,
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Number of peaks for the classical detector.
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    image: PathBuf,
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Exhaustive near-field NOMP on the dense codebook.
    Nnomp {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long, value_enum, default_value = "cart")]
        domain: DomainArg,
        /// Noise variance σ² for the stopping threshold.
        #[arg(long, default_value_t = 0.0, conflicts_with = "scene")]
        noise_var: f64,
        /// Take σ² from a scene file instead.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        counts: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "desk")]
    profile: String,
    /// `all` or a comma-separated list of method names.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long, default_value = "10:2:26")]
    snr: String,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "cart")]
    domain: DomainArg,
    #[arg(long, requires = "cknet_arch")]
    cknet: Option<PathBuf>,
    #[arg(long)]
    cknet_arch: Option<PathBuf>,
    #[arg(long, requires = "flexnet_arch")]
    flexnet: Option<PathBuf>,
    #[arg(long)]
    flexnet_arch: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Record wall-clock medians (makes the CSV run-dependent).
    #[arg(long)]
    timing: bool,
    /// Also write gnuplot-ready data.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Cart,
    Polar,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Cart => Domain::Cartesian,
            DomainArg::Polar => Domain::Polar,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModeArg {
    Fixed,
    Flexible,
}

impl From<ModeArg> for OutputMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => OutputMode::Fixed,
            ModeArg::Flexible => OutputMode::Flexible,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_signal(path: &Path) -> Result<Vec<num_complex::Complex64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_cvec(BufReader::new(f))?)
}

fn load_network(weights: &Path, arch: &Path, tau: f64) -> Result<Network> {
    let arch = NetArch::from_json(&fs::read_to_string(arch)?)?;
    let weights = WeightBundle::read_ckw(BufReader::new(File::open(weights)?))?;
    arch.check_weights(&weights)?;
    Ok(Network { arch, weights, tau })
}

fn parse_split(s: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad split {s:?}"))?;
    match v[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => bail!("split needs three sizes train:val:test, got {s:?}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Codebook { domain, profile, out } => {
            let p = Profile::by_name(&profile)?;
            let cb = build_codebook(&p.array, &p.region, domain.into())?;
            let mut w = BufWriter::new(File::create(&out)?);
            cb.write_cache(&mut w)?;
            w.flush()?;
        }
        Cmd::Dataset { mode, profile, domain, split, seed, out } => {
            let p = Profile::by_name(&profile)?;
            let split = match split {
                Some(s) => parse_split(&s)?,
                None => p.split,
            };
            let cfg = p.scene_gen(p.path_count(mode == ModeArg::Flexible), seed);
            let cb = build_codebook(&p.array, &p.region, domain.into())?;
            let spec = DatasetSpec { split, i_h: p.image.0, i_w: p.image.1 };
            fs::create_dir_all(&out)?;
            emit_dataset(&cfg, &cb, &spec, &out)?;
        }
        Cmd::Simulate { profile, mode, seed, index, snr, noiseless, scene_out, signal_out } => {
            let p = Profile::by_name(&profile)?;
            let mut cfg: SceneGenConfig = p.scene_gen(p.path_count(mode == ModeArg::Flexible), seed);
            if let Some(s) = snr {
                cfg.snr_range_db = [s, s];
            }
            let mut sampled = sample_scene(&cfg, &p.array, index)?;
            if noiseless {
                sampled.scene = nearfield::channel::Scene::noiseless(sampled.scene.paths);
            }
            let y = received_signal(&p.array, &sampled.scene, sampled.noise_seed)?;
            write_json(&scene_out, &SceneFile::from_scene(&sampled.scene, sampled.noise_seed))?;
            let mut w = BufWriter::new(File::create(&signal_out)?);
            write_cvec(&mut w, &y)?;
            w.flush()?;
        }
        Cmd::Image { signal, profile, domain, out } => {
            let p = Profile::by_name(&profile)?;
            let ctx = BenchContext::new(p, domain.into())?;
            let img = ctx.image(&read_signal(&signal)?, &mut OperationCount::default())?;
            let mut w = BufWriter::new(File::create(&out)?);
            img.write_pgm(&mut w)?;
            w.flush()?;
        }
        Cmd::Detect(a) => {
            let img = ChannelImage::read_pgm(BufReader::new(
                File::open(&a.image).with_context(|| format!("opening {}", a.image.display()))?,
            ))?;
            let det = match (&a.net, &a.arch) {
                (Some(net), Some(arch)) => {
                    let n = load_network(net, arch, a.tau)?;
                    let pred = infer(&n.arch, &n.weights, &img, a.mode.into(), a.tau)?;
                    DetectionFile::new(pred, &img, false)?
                }
                _ => DetectionFile::new(detect_classical(&img, a.count), &img, true)?,
            };
            match a.out {
                Some(path) => write_json(&path, &det)?,
                None => println!("{}", serde_json::to_string_pretty(&det)?),
            }
        }
        Cmd::Refine { coarse, signal, config, out } => {
            let coarse: CoarseFile = read_json(&coarse)?;
            let job: RefineJob = read_json(&config)?;
            let (p, rc) = job.resolve(coarse.domain)?;
            let y = read_signal(&signal)?;
            let space = SearchSpace::new(p.array, coarse.domain, &p.region);
            let t0 = Instant::now();
            let est = match job.mode {
                RefineMode::Fixed => refine_all(&space, &coarse.positions, &y, &rc)?,
                RefineMode::Flexible => {
                    let cb = build_codebook(&p.array, &p.region, coarse.domain)?;
                    flexible_refine(&space, &coarse.positions, &y, &cb, &rc)?
                }
                RefineMode::Select => {
                    select_from_pool(&space, &coarse.positions, job.paths.unwrap_or(p.s_fixed), &y, &rc)?
                }
            };
            let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            write_json(&out, &EstimateFile::from_set(&est, wall_ms))?;
        }
        Cmd::Baseline { which: BaselineCmd::Nnomp { signal, profile, domain, noise_var, scene, out, counts } } => {
            let p = Profile::by_name(&profile)?;
            let noise_var = match scene {
                Some(path) => read_json::<SceneFile>(&path)?.to_scene(&p.array)?.noise_var,
                None => noise_var,
            };
            let ctx = BenchContext::new(p, domain.into())?;
            let y = read_signal(&signal)?;
            let t0 = Instant::now();
            let est = nnomp(&ctx.space, &y, &ctx.nnomp_codebook, &ctx.nnomp_config(noise_var)?)?;
            let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            write_json(&out, &EstimateFile::from_set(&est, wall_ms))?;
            if let Some(c) = counts {
                write_json(&c, &est.counts)?;
            }
        }
        Cmd::Bench(a) => bench(a)?,
        Cmd::Score { scene, est, profile } => {
            let p = Profile::by_name(&profile)?;
            let scene = read_json::<SceneFile>(&scene)?.to_scene(&p.array)?;
            let est: EstimateFile = read_json(&est)?;
            let space = SearchSpace::new(p.array, est.domain, &p.region);
            let h = nearfield::channel::synthesize_channel(&p.array, &scene)?;
            let mut h_hat = vec![num_complex::Complex64::new(0.0, 0.0); h.len()];
            for e in &est.entries {
                let g = num_complex::Complex64::new(e.gain_re, e.gain_im);
                for (v, a) in h_hat.iter_mut().zip(space.steering(e.coords)?) {
                    *v += g * a;
                }
            }
            let truth: Vec<_> = scene.paths.iter().map(|q| q.position).collect();
            let m = l1_distance(&est.positions(), &truth, p.wavelength(), MATCH_GATE_LAMBDA)?;
            let report = serde_json::json!({
                "nmse_db": nmse_db(&h_hat, &h)?,
                "l1_lambda": m.l1_lambda,
                "recall": m.recall(),
                "precision": m.precision(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let profile = Profile::by_name(&a.profile)?;
    let cknet = match (&a.cknet, &a.cknet_arch) {
        (Some(w), Some(arch)) => Some(load_network(w, arch, a.tau)?),
        _ => None,
    };
    let flexnet = match (&a.flexnet, &a.flexnet_arch) {
        (Some(w), Some(arch)) => Some(load_network(w, arch, a.tau)?),
        _ => None,
    };
    let available = |m: Method| match m {
        Method::CknetRefine => cknet.is_some(),
        Method::FlexibleRefine => flexnet.is_some(),
        _ => true,
    };
    let methods: Vec<Method> = if a.methods == "all" {
        Method::ALL
            .into_iter()
            .filter(|&m| {
                let ok = available(m);
                if !ok {
                    warn!("skipping {}: no network supplied", m.name());
                }
                ok
            })
            .collect()
    } else {
        let ms = a
            .methods
            .split(',')
            .map(|s| s.trim().parse::<Method>())
            .collect::<nearfield::Result<Vec<_>>>()?;
        if let Some(m) = ms.iter().find(|m| !available(**m)) {
            bail!("{} needs a network (--cknet/--flexnet with an arch file)", m.name());
        }
        ms
    };
    let cfg = BenchConfig {
        profile,
        domain: a.domain.into(),
        methods,
        snr_grid: parse_snr_grid(&a.snr)?,
        seeds: a.seeds,
        base_seed: a.seed,
        timing: a.timing,
        cknet,
        flexnet,
    };
    let rows = run_bench(&cfg)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_csv(&mut w, &rows)?;
    w.flush()?;
    if let Some(plot) = a.plot {
        fs::write(plot, gnuplot_data(&rows))?;
    }
    Ok(())
}
