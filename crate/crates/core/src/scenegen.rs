//! Stratified random scenes and dataset emission.
//!
//! The x-range is split into vertical strips; each path is drawn inside its
//! own strip, shrunk by a guard margin so that neighbouring paths stay apart.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{received_signal, ArrayConfig, CartesianPoint, PathParam, Scene};
use crate::codebook::{transform, Codebook, Domain, RegionSpec};
use crate::error::{Error, Result};
use crate::imaging::{physical_to_pixel_dims, resample, to_image, LabelRecord};

pub const MANIFEST_SCHEMA: &str = "nfds-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum PathCount {
    /// Exactly `s` paths, one per strip.
    Fixed { s: usize },
    /// `S ~ U{1..s_max}` paths in randomly chosen strips out of `s_max`.
    Flexible { s_max: usize },
}

impl PathCount {
    pub fn strips(self) -> usize {
        match self {
            PathCount::Fixed { s } => s,
            PathCount::Flexible { s_max } => s_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGenConfig {
    pub count_mode: PathCount,
    pub h_ratio: f64,
    pub region: RegionSpec,
    pub snr_range_db: [f64; 2],
    /// Magnitude range of non-line-of-sight gains; the LoS gain has magnitude 1.
    pub nlos_gain: [f64; 2],
    pub seed: u64,
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.count_mode.strips();
        if s == 0 {
            return Err(Error::InvalidConfig("need at least one path".into()));
        }
        if !(self.h_ratio > 0.0 && self.h_ratio <= 1.0) {
            return Err(Error::InvalidConfig("h_ratio must lie in (0, 1]".into()));
        }
        if !(self.region.x_max > self.region.x_min && self.region.z_max > 0.0) {
            return Err(Error::InvalidRegion("empty x or z range".into()));
        }
        if self.snr_range_db[0] > self.snr_range_db[1] {
            return Err(Error::InvalidConfig("snr range is reversed".into()));
        }
        let [g0, g1] = self.nlos_gain;
        if !(g0 > 0.0 && g0 <= g1 && g1 <= 1.0) {
            return Err(Error::InvalidConfig("nlos_gain must satisfy 0 < lo <= hi <= 1".into()));
        }
        Ok(())
    }

    /// Width of the sampling interval inside each strip.
    pub fn h_interval(&self) -> f64 {
        let x_span = self.region.x_max - self.region.x_min;
        x_span / self.count_mode.strips() as f64 * self.h_ratio
    }

    /// Guard removed from each side of a strip.
    pub fn guard_margin(&self) -> f64 {
        (1.0 / self.h_ratio - 1.0) / 2.0 * self.h_interval()
    }

    /// Closed x-interval path `s` is drawn from.
    pub fn strip_bounds(&self, s: usize) -> (f64, f64) {
        let width = (self.region.x_max - self.region.x_min) / self.count_mode.strips() as f64;
        let lo = self.region.x_min + s as f64 * width + self.guard_margin();
        (lo, lo + self.h_interval())
    }

    pub fn z_bounds(&self) -> (f64, f64) {
        (0.2 * self.region.z_max, 0.8 * self.region.z_max)
    }
}

/// A generated scene together with the seed of its noise realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledScene {
    pub scene: Scene,
    /// Strip index of each path (parallel to `scene.paths`).
    pub strips: Vec<usize>,
    pub noise_seed: u64,
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws scene `index` of the stream defined by `cfg.seed`; paths are ordered
/// by strip.
pub fn sample_scene(cfg: &SceneGenConfig, array: &ArrayConfig, index: u64) -> Result<SampledScene> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, index);
    let strips: Vec<usize> = match cfg.count_mode {
        PathCount::Fixed { s } => (0..s).collect(),
        PathCount::Flexible { s_max } => {
            let s = rng.random_range(1..=s_max);
            let mut chosen = sample(&mut rng, s_max, s).into_vec();
            chosen.sort_unstable();
            chosen
        }
    };
    let los = rng.random_range(0..strips.len());
    let (z_lo, z_hi) = cfg.z_bounds();
    let paths = strips
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let (x_lo, x_hi) = cfg.strip_bounds(s);
            let z = rng.random_range(z_lo..=z_hi);
            let x = rng.random_range(x_lo..=x_hi);
            let mag = if i == los {
                1.0
            } else {
                rng.random_range(cfg.nlos_gain[0]..=cfg.nlos_gain[1])
            };
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            PathParam {
                position: CartesianPoint::new(z, x),
                gain: Complex64::from_polar(mag, phase),
                is_los: i == los,
            }
        })
        .collect();
    let snr_db = rng.random_range(cfg.snr_range_db[0]..=cfg.snr_range_db[1]);
    let noise_seed = rng.random();
    Ok(SampledScene {
        scene: Scene::with_snr(array, paths, snr_db, 1.0)?,
        strips,
        noise_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: u64,
    pub image: String,
    pub snr_db: f64,
    pub noise_seed: u64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub count: usize,
    pub labels: String,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub generator: SceneGenConfig,
    pub array: ArrayConfig,
    pub domain: Domain,
    pub i_h: usize,
    pub i_w: usize,
    pub train: SplitEntry,
    pub val: SplitEntry,
    pub test: SplitEntry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    /// Train / val / test sizes.
    pub split: [usize; 3],
    pub i_h: usize,
    pub i_w: usize,
}

/// Label record for a sampled scene: strip-ordered slots, one per strip.
pub fn label_for(
    cfg: &SceneGenConfig,
    sampled: &SampledScene,
    domain: Domain,
    i_h: usize,
    i_w: usize,
) -> LabelRecord {
    let slots = cfg.count_mode.strips();
    let mut rec = LabelRecord {
        keypoints_px: vec![[0.0, 0.0]; slots],
        positions: vec![[0.0, 0.0]; slots],
        present: vec![false; slots],
    };
    for (path, &s) in sampled.scene.paths.iter().zip(&sampled.strips) {
        let (r, c) = physical_to_pixel_dims(domain, &cfg.region, i_h, i_w, path.position.into());
        rec.keypoints_px[s] = [r, c];
        rec.positions[s] = [path.position.z, path.position.x];
        rec.present[s] = true;
    }
    rec
}

/// Writes `{train,val,test}/NNNNN.pgm`, per-split `labels.jsonl` and
/// `manifest.json`. Scene indices run consecutively across the splits.
pub fn emit_dataset(
    cfg: &SceneGenConfig,
    codebook: &Codebook,
    spec: &DatasetSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    let array = codebook.array;
    let domain = codebook.domain;
    let mut splits = Vec::with_capacity(3);
    let mut base = 0u64;
    for (name, &count) in ["train", "val", "test"].iter().zip(&spec.split) {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir)?;
        let rendered: Vec<(Vec<u8>, LabelRecord, SampleEntry)> = (0..count as u64)
            .into_par_iter()
            .map(|k| {
                let index = base + k;
                let sampled = sample_scene(cfg, &array, index)?;
                let y = received_signal(&array, &sampled.scene, sampled.noise_seed)?;
                let mut img = to_image(&transform(codebook, &y)?)?;
                if (img.i_h, img.i_w) != (spec.i_h, spec.i_w) {
                    img = resample(&img, spec.i_w, spec.i_h)?;
                }
                let mut pgm = Vec::new();
                img.write_pgm(&mut pgm)?;
                let label = label_for(cfg, &sampled, domain, spec.i_h, spec.i_w);
                let entry = SampleEntry {
                    index,
                    image: format!("{name}/{k:05}.pgm"),
                    snr_db: sampled.scene.snr_db,
                    noise_seed: sampled.noise_seed,
                    paths: sampled.scene.paths.len(),
                };
                Ok((pgm, label, entry))
            })
            .collect::<Result<_>>()?;
        let labels_rel = format!("{name}/labels.jsonl");
        let mut labels = BufWriter::new(fs::File::create(out_dir.join(&labels_rel))?);
        let mut samples = Vec::with_capacity(count);
        for (pgm, label, entry) in rendered {
            fs::write(out_dir.join(&entry.image), pgm)?;
            writeln!(labels, "{}", serde_json::to_string(&label)?)?;
            samples.push(entry);
        }
        labels.flush()?;
        splits.push(SplitEntry { count, labels: labels_rel, samples });
        base += count as u64;
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        seed: cfg.seed,
        generator: *cfg,
        array,
        domain,
        i_h: spec.i_h,
        i_w: spec.i_w,
        train,
        val,
        test,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
