//! File formats shared by the CLI and the Python bindings.
//!
//! Complex vectors (`NFCV0001`): 8-byte magic, `u32` LE length, then
//! interleaved `f64` LE `(re, im)` pairs.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ArrayConfig, CartesianPoint, PathParam, Scene};
use crate::codebook::Domain;
use crate::cost::OperationCount;
use crate::detect::KeypointPrediction;
use crate::imaging::{pixel_to_grid_physical, pixel_to_physical, ChannelImage};
use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::refiner::{EstimateSet, Provenance, RefinerConfig};

const CVEC_MAGIC: &[u8; 8] = b"NFCV0001";

pub fn write_cvec<W: Write>(mut w: W, v: &[Complex64]) -> Result<()> {
    w.write_all(CVEC_MAGIC)?;
    let n = u32::try_from(v.len()).map_err(|_| Error::Format("vector too long".into()))?;
    w.write_all(&n.to_le_bytes())?;
    for c in v {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_cvec<R: Read>(mut r: R) -> Result<Vec<Complex64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CVEC_MAGIC {
        return Err(Error::Format("not an NFCV0001 vector".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        out.push(Complex64::new(re, f64::from_le_bytes(b8)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub z: f64,
    pub x: f64,
    pub gain_re: f64,
    pub gain_im: f64,
}

/// Scene file: `{"paths":[{"z","x","gain_re","gain_im"}],"snr_db","seed"}`.
/// The first path is the line-of-sight one; a noiseless scene stores
/// `"snr_db": null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub paths: Vec<PathRecord>,
    #[serde(with = "snr_or_null")]
    pub snr_db: f64,
    pub seed: u64,
}

mod snr_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, seed: u64) -> Self {
        let mut paths: Vec<&PathParam> = scene.paths.iter().collect();
        paths.sort_by_key(|p| !p.is_los);
        SceneFile {
            paths: paths
                .into_iter()
                .map(|p| PathRecord {
                    z: p.position.z,
                    x: p.position.x,
                    gain_re: p.gain.re,
                    gain_im: p.gain.im,
                })
                .collect(),
            snr_db: scene.snr_db,
            seed,
        }
    }

    /// Rebuilds the scene at unit transmit power.
    pub fn to_scene(&self, cfg: &ArrayConfig) -> Result<Scene> {
        let paths = self
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| PathParam {
                position: CartesianPoint::new(p.z, p.x),
                gain: Complex64::new(p.gain_re, p.gain_im),
                is_los: i == 0,
            })
            .collect();
        if self.snr_db.is_finite() {
            Scene::with_snr(cfg, paths, self.snr_db, 1.0)
        } else {
            Ok(Scene::noiseless(paths))
        }
    }
}

/// Coarse positions in domain coordinates (`coarse.json`). Detector output
/// carries the same two fields and can be passed through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseFile {
    pub domain: Domain,
    pub positions: Vec<[f64; 2]>,
}

/// Detector output: pixel keypoints plus their domain coordinates, readable
/// as a [`CoarseFile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    #[serde(flatten)]
    pub prediction: KeypointPrediction,
    pub domain: Domain,
    pub positions: Vec<[f64; 2]>,
}

impl DetectionFile {
    /// Maps keypoints through the pixel law; `snap` uses the realised grid
    /// instead (classical peaks sit on grid samples).
    pub fn new(prediction: KeypointPrediction, img: &ChannelImage, snap: bool) -> Result<Self> {
        let positions = prediction
            .points_px
            .iter()
            .map(|p| {
                let pos = if snap {
                    pixel_to_grid_physical(img, (p[0], p[1]))?
                } else {
                    pixel_to_physical(img, (p[0], p[1]))?
                };
                Ok(img.domain.coords(pos.to_cartesian()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { prediction, domain: img.domain, positions })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Refine the given paths only.
    Fixed,
    /// Also detect paths left in the residual.
    Flexible,
    /// Treat the positions as a candidate pool and greedily pick `paths`.
    Select,
}

/// Refinement job (`refiner.json`). Unset refiner fields come from the
/// profile preset for the coarse file's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineJob {
    pub profile: String,
    #[serde(default = "default_mode")]
    pub mode: RefineMode,
    /// Noise variance `σ²`; sets the flexible detection threshold.
    #[serde(default)]
    pub noise_var: f64,
    #[serde(default)]
    pub refiner: Option<RefinerConfig>,
    /// Paths to pick in select mode; defaults to the profile's fixed count.
    #[serde(default)]
    pub paths: Option<usize>,
}

fn default_mode() -> RefineMode {
    RefineMode::Fixed
}

impl RefineJob {
    pub fn resolve(&self, domain: Domain) -> Result<(Profile, RefinerConfig)> {
        let profile = Profile::by_name(&self.profile)?;
        let rc = match self.refiner {
            Some(rc) => RefinerConfig { noise_var: self.noise_var, ..rc },
            None => profile.refiner_for(domain, self.noise_var),
        };
        rc.validate()?;
        Ok((profile, rc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    /// Domain coordinates: meters, or meters and radians.
    pub coords: [f64; 2],
    pub z: f64,
    pub x: f64,
    pub gain_re: f64,
    pub gain_im: f64,
    pub history: Vec<Provenance>,
}

/// Refined or baseline estimate (`est.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub domain: Domain,
    pub entries: Vec<EstimateRecord>,
    pub residual_power: f64,
    pub counts: OperationCount,
    pub incomplete: bool,
    pub newton_aborts: usize,
    pub wall_ms: f64,
}

impl EstimateFile {
    pub fn from_set(set: &EstimateSet, wall_ms: f64) -> Self {
        EstimateFile {
            domain: set.domain,
            entries: set
                .entries
                .iter()
                .map(|e| {
                    let c = set.domain.to_cartesian(e.coords);
                    EstimateRecord {
                        coords: e.coords,
                        z: c.z,
                        x: c.x,
                        gain_re: e.gain.re,
                        gain_im: e.gain.im,
                        history: e.history.clone(),
                    }
                })
                .collect(),
            residual_power: set.residual_power(),
            counts: set.counts,
            incomplete: set.incomplete,
            newton_aborts: set.newton_aborts,
            wall_ms,
        }
    }

    pub fn positions(&self) -> Vec<CartesianPoint> {
        self.entries.iter().map(|e| CartesianPoint::new(e.z, e.x)).collect()
    }
}
