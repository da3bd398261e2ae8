//! Named parameter presets.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::channel::ArrayConfig;
use crate::codebook::{Domain, RegionSpec};
use crate::error::{Error, Result};
use crate::refiner::{RefineOrder, RefinerConfig};
use crate::scenegen::{PathCount, SceneGenConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub array: ArrayConfig,
    pub region: RegionSpec,
    /// Network input / image size `(I_H, I_W)`.
    pub image: (usize, usize),
    pub s_fixed: usize,
    pub s_max: usize,
    pub h_ratio: f64,
    pub snr_range_db: [f64; 2],
    /// Default train/val/test sizes.
    pub split: [usize; 3],
    /// Refiner defaults; `noise_var` is filled per scene.
    pub refiner: RefinerConfig,
    /// Baseline codebook density relative to the image codebook, per axis.
    pub nnomp_density: usize,
    pub nnomp_r_c: usize,
    /// Candidate peaks the classical detector hands to greedy selection.
    pub classical_pool: usize,
}

impl Profile {
    /// Small-scale preset: N = 128, 128×128 grid over 640λ × 640λ.
    pub fn desk() -> Self {
        let array = ArrayConfig::half_wavelength(128, 6.0e9).expect("valid desk array");
        let l = array.wavelength();
        Profile {
            name: "desk".into(),
            array,
            region: RegionSpec {
                z_min: 0.0,
                z_max: 640.0 * l,
                x_min: -320.0 * l,
                x_max: 320.0 * l,
                r_min: 12.5 * l,
                r_max: 640.0 * l,
                theta_min: -FRAC_PI_2,
                theta_max: FRAC_PI_2,
                n_z: 128,
                n_x: 128,
                n_r: 128,
                n_theta: 128,
                include_max: false,
            },
            image: (128, 128),
            s_fixed: 3,
            s_max: 4,
            h_ratio: 0.5,
            snr_range_db: [10.0, 26.0],
            split: [1800, 600, 120],
            refiner: RefinerConfig {
                delta1: 10.0 * l,
                delta2: 10.0 * l,
                local_step: [l, l],
                r_s: 5,
                p_fa: 1e-2,
                noise_var: 0.0,
                max_detect: 8,
                order: RefineOrder::Ascending,
                passes: 3,
            },
            nnomp_density: 2,
            nnomp_r_c: 3,
            classical_pool: 24,
        }
    }

    /// Full-scale preset: N = 1024, 512×512 grid at 10λ.
    pub fn paper() -> Self {
        let array = ArrayConfig::half_wavelength(1024, 6.0e9).expect("valid paper array");
        let l = array.wavelength();
        Profile {
            name: "paper".into(),
            array,
            region: RegionSpec {
                z_min: 0.0,
                z_max: 5120.0 * l,
                x_min: -2560.0 * l,
                x_max: 2560.0 * l,
                r_min: 100.0 * l,
                r_max: 5120.0 * l,
                theta_min: -FRAC_PI_2,
                theta_max: FRAC_PI_2,
                n_z: 512,
                n_x: 512,
                n_r: 512,
                n_theta: 500,
                include_max: false,
            },
            image: (512, 512),
            s_fixed: 4,
            s_max: 6,
            h_ratio: 0.5,
            snr_range_db: [10.0, 26.0],
            split: [1800, 600, 120],
            refiner: RefinerConfig {
                delta1: 20.0 * l,
                delta2: 20.0 * l,
                local_step: [l, l],
                r_s: 5,
                p_fa: 1e-2,
                noise_var: 0.0,
                max_detect: 12,
                order: RefineOrder::Ascending,
                passes: 1,
            },
            nnomp_density: 2,
            nnomp_r_c: 3,
            classical_pool: 24,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }

    pub fn wavelength(&self) -> f64 {
        self.array.wavelength()
    }

    pub fn refiner_with_noise(&self, noise_var: f64) -> RefinerConfig {
        RefinerConfig { noise_var, ..self.refiner }
    }

    /// Polar refiner box: the Cartesian half-widths expressed as a radial
    /// half-width and an angular half-width at mid-range.
    pub fn polar_refiner(&self, noise_var: f64) -> RefinerConfig {
        let mid = 0.5 * (self.region.r_min + self.region.r_max);
        let rc = self.refiner;
        RefinerConfig {
            delta2: rc.delta2 / mid,
            local_step: [rc.local_step[0], rc.local_step[1] / mid],
            noise_var,
            ..rc
        }
    }

    pub fn refiner_for(&self, domain: Domain, noise_var: f64) -> RefinerConfig {
        match domain {
            Domain::Cartesian => self.refiner_with_noise(noise_var),
            Domain::Polar => self.polar_refiner(noise_var),
        }
    }

    /// Path-count law: `S` fixed paths, or `U{1..S_max}` in flexible mode.
    pub fn path_count(&self, flexible: bool) -> PathCount {
        if flexible {
            PathCount::Flexible { s_max: self.s_max }
        } else {
            PathCount::Fixed { s: self.s_fixed }
        }
    }

    /// Scene generator over the profile region and SNR range.
    pub fn scene_gen(&self, count_mode: PathCount, seed: u64) -> SceneGenConfig {
        SceneGenConfig {
            count_mode,
            h_ratio: self.h_ratio,
            region: self.region,
            snr_range_db: self.snr_range_db,
            nlos_gain: [0.3, 0.9],
            seed,
        }
    }

    /// Region with the baseline's denser sampling.
    pub fn nnomp_region(&self) -> RegionSpec {
        let d = self.nnomp_density;
        RegionSpec {
            n_z: self.region.n_z * d,
            n_x: self.region.n_x * d,
            n_r: self.region.n_r * d,
            n_theta: self.region.n_theta * d,
            ..self.region
        }
    }
}
