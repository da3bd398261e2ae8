//! Near-field geometry and channel synthesis for a uniform linear array.
//!
//! The array lies on the x axis, centred at the origin; the observed region
//! extends along +z. Element `i` (0-based) sits at `x = (i - (N-1)/2) * pitch`,
//! which covers half-integer symmetric indices when `N` is even.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light used throughout, in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_antennas: usize,
    pub carrier_hz: f64,
    /// Physical inter-element pitch in meters.
    pub spacing_m: f64,
}

impl ArrayConfig {
    pub fn new(n_antennas: usize, carrier_hz: f64, spacing_m: f64) -> Result<Self> {
        let cfg = Self {
            n_antennas,
            carrier_hz,
            spacing_m,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Array with half-wavelength pitch at the given carrier.
    pub fn half_wavelength(n_antennas: usize, carrier_hz: f64) -> Result<Self> {
        Self::new(n_antennas, carrier_hz, SPEED_OF_LIGHT / carrier_hz / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_antennas must be >= 2, got {}",
                self.n_antennas
            )));
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return Err(Error::InvalidConfig("spacing_m must be positive".into()));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::InvalidConfig("carrier_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength()
    }

    pub fn rayleigh_m(&self) -> f64 {
        rayleigh_distance(self)
    }

    /// Symmetric element index for array slot `i`, in `[(1-N)/2, (N-1)/2]`.
    pub fn symmetric_index(&self, i: usize) -> f64 {
        i as f64 - (self.n_antennas as f64 - 1.0) / 2.0
    }

    /// x coordinate of array slot `i`.
    pub fn element_x(&self, i: usize) -> f64 {
        self.symmetric_index(i) * self.spacing_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub z: f64,
    pub x: f64,
}

impl CartesianPoint {
    pub fn new(z: f64, x: f64) -> Self {
        Self { z, x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub r: f64,
    pub theta: f64,
}

impl PolarPoint {
    pub fn new(r: f64, theta: f64) -> Self {
        Self { r, theta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Position {
    Cartesian(CartesianPoint),
    Polar(PolarPoint),
}

impl Position {
    pub fn to_cartesian(&self) -> CartesianPoint {
        match *self {
            Position::Cartesian(p) => p,
            Position::Polar(p) => polar_to_cart(p),
        }
    }
}

impl From<CartesianPoint> for Position {
    fn from(p: CartesianPoint) -> Self {
        Position::Cartesian(p)
    }
}

impl From<PolarPoint> for Position {
    fn from(p: PolarPoint) -> Self {
        Position::Polar(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParam {
    pub position: CartesianPoint,
    pub gain: Complex64,
    pub is_los: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub paths: Vec<PathParam>,
    pub snr_db: f64,
    pub tx_power: f64,
    pub noise_var: f64,
}

impl Scene {
    /// Builds a scene whose noise variance realises `snr_db` under the
    /// array-averaged definition `snr = P·‖h‖² / (N·σ²)`.
    pub fn with_snr(
        cfg: &ArrayConfig,
        paths: Vec<PathParam>,
        snr_db: f64,
        tx_power: f64,
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one path".into()));
        }
        let mut scene = Self {
            paths,
            snr_db,
            tx_power,
            noise_var: 0.0,
        };
        let h = synthesize_channel(cfg, &scene)?;
        let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
        scene.noise_var = tx_power * energy / (cfg.n_antennas as f64 * 10f64.powf(snr_db / 10.0));
        Ok(scene)
    }

    /// Same paths, no noise.
    pub fn noiseless(paths: Vec<PathParam>) -> Self {
        Self {
            paths,
            snr_db: f64::INFINITY,
            tx_power: 1.0,
            noise_var: 0.0,
        }
    }
}

pub fn cart_to_polar(p: CartesianPoint) -> Result<PolarPoint> {
    if p.z == 0.0 && p.x == 0.0 {
        return Err(Error::DegeneratePoint("origin has no polar angle".into()));
    }
    let r = p.x.hypot(p.z);
    // atan(x/z) for z > 0; atan2 keeps z = 0 well defined at ±π/2.
    let theta = if p.z > 0.0 {
        (p.x / p.z).atan()
    } else {
        p.x.atan2(p.z)
    };
    Ok(PolarPoint { r, theta })
}

pub fn polar_to_cart(p: PolarPoint) -> CartesianPoint {
    CartesianPoint {
        z: p.r * p.theta.cos(),
        x: p.r * p.theta.sin(),
    }
}

/// Distance from the element at symmetric index `n` to `p`.
pub fn element_distance_cart(cfg: &ArrayConfig, n: f64, p: CartesianPoint) -> f64 {
    p.z.hypot(p.x - n * cfg.spacing_m)
}

/// Distance from the element at symmetric index `n` to a polar point, written
/// in the same element-geometry convention as [`element_distance_cart`].
pub fn element_distance_polar(cfg: &ArrayConfig, n: f64, p: PolarPoint) -> f64 {
    let off = n * cfg.spacing_m;
    let sq = p.r * p.r - 2.0 * off * p.r * p.theta.sin() + off * off;
    sq.max(0.0).sqrt()
}

fn distances(cfg: &ArrayConfig, p: Position) -> Result<Vec<f64>> {
    (0..cfg.n_antennas)
        .map(|i| {
            let n = cfg.symmetric_index(i);
            let d = match p {
                Position::Cartesian(c) => element_distance_cart(cfg, n, c),
                Position::Polar(q) => element_distance_polar(cfg, n, q),
            };
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::OnArray { element: i })
            }
        })
        .collect()
}

/// Array response with `1/D` amplitude decay.
///
/// Cartesian positions use the `exp(-j·k·D)` phase; polar positions use
/// `exp(+j·k·D)`. Both carry identical magnitudes for the same physical point.
pub fn steering_vector(cfg: &ArrayConfig, p: impl Into<Position>) -> Result<Vec<Complex64>> {
    let p = p.into();
    let k = cfg.wavenumber();
    let sign = match p {
        Position::Cartesian(_) => -1.0,
        Position::Polar(_) => 1.0,
    };
    Ok(distances(cfg, p)?
        .into_iter()
        .map(|d| Complex64::from_polar(1.0 / d, sign * k * d))
        .collect())
}

/// The physical propagation model shared by synthesis, least squares and the
/// refiners: the Cartesian-form response of the point, whatever its
/// coordinate representation.
pub fn model_steering(cfg: &ArrayConfig, p: CartesianPoint) -> Result<Vec<Complex64>> {
    steering_vector(cfg, Position::Cartesian(p))
}

pub fn synthesize_channel(cfg: &ArrayConfig, scene: &Scene) -> Result<Vec<Complex64>> {
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.n_antennas];
    for path in &scene.paths {
        let a = model_steering(cfg, path.position)?;
        for (hn, an) in h.iter_mut().zip(a) {
            *hn += path.gain * an;
        }
    }
    Ok(h)
}

/// `y = √P·h + n` for an all-ones pilot; `n` is circularly-symmetric Gaussian
/// with total per-entry variance `noise_var`.
pub fn received_signal(cfg: &ArrayConfig, scene: &Scene, rng_seed: u64) -> Result<Vec<Complex64>> {
    let h = synthesize_channel(cfg, scene)?;
    let amp = scene.tx_power.sqrt();
    let mut y: Vec<Complex64> = h.into_iter().map(|v| v * amp).collect();
    if scene.noise_var > 0.0 {
        add_noise(&mut y, scene.noise_var, rng_seed);
    }
    Ok(y)
}

pub(crate) fn add_noise(y: &mut [Complex64], noise_var: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (noise_var / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re * sd, im * sd);
    }
}

pub fn rayleigh_distance(cfg: &ArrayConfig) -> f64 {
    let aperture = (cfg.n_antennas as f64 - 1.0) * cfg.spacing_m;
    2.0 * aperture * aperture / cfg.wavelength()
}
