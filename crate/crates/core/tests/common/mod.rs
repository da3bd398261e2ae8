#![allow(dead_code)]

use nearfield::channel::{model_steering, ArrayConfig, CartesianPoint};
use nearfield::codebook::RegionSpec;
use num_complex::Complex64;

/// 16-element array at 6 GHz (λ = 0.05 m).
pub fn small_array() -> ArrayConfig {
    ArrayConfig::half_wavelength(16, 6e9).unwrap()
}

/// Small region with `n` samples per axis.
pub fn small_region(n: usize) -> RegionSpec {
    RegionSpec {
        z_min: 0.0,
        z_max: 8.0,
        x_min: -4.0,
        x_max: 4.0,
        r_min: 0.5,
        r_max: 8.0,
        theta_min: -1.5,
        theta_max: 1.5,
        n_z: n,
        n_x: n,
        n_r: n,
        n_theta: n,
        include_max: false,
    }
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `Σ g·a(p)` over the given paths.
pub fn channel(array: &ArrayConfig, paths: &[(CartesianPoint, Complex64)]) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); array.n_antennas];
    for (p, g) in paths {
        for (hv, av) in h.iter_mut().zip(model_steering(array, *p).unwrap()) {
            *hv += g * av;
        }
    }
    h
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}
