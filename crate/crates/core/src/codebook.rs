//! Phase-only Cartesian and Polar codebooks and the domain transform.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    element_distance_cart, element_distance_polar, ArrayConfig, CartesianPoint, PolarPoint,
    Position,
};
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 8] = b"NFCB0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[serde(alias = "cart")]
    Cartesian,
    Polar,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cart" | "cartesian" => Ok(Domain::Cartesian),
            "polar" => Ok(Domain::Polar),
            other => Err(Error::InvalidConfig(format!("unknown domain {other:?}"))),
        }
    }
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Cartesian => 0,
            Domain::Polar => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Domain::Cartesian),
            1 => Ok(Domain::Polar),
            t => Err(Error::Format(format!("unknown domain tag {t}"))),
        }
    }

    /// Position from domain coordinates `(first, second)` = `(z, x)` or `(r, θ)`.
    pub fn position(self, first: f64, second: f64) -> Position {
        match self {
            Domain::Cartesian => Position::Cartesian(CartesianPoint::new(first, second)),
            Domain::Polar => Position::Polar(PolarPoint::new(first, second)),
        }
    }

    /// Domain coordinates of a Cartesian point.
    pub fn coords(self, p: CartesianPoint) -> [f64; 2] {
        match self {
            Domain::Cartesian => [p.z, p.x],
            Domain::Polar => {
                let r = p.x.hypot(p.z);
                [r, p.x.atan2(p.z)]
            }
        }
    }

    pub fn to_cartesian(self, c: [f64; 2]) -> CartesianPoint {
        self.position(c[0], c[1]).to_cartesian()
    }
}

/// Observed region and sampling density for both domains.
///
/// Sample counts are interval counts: the step on each axis is
/// `(max - min) / n`. With `include_max == false` an axis has `n` samples
/// (`min .. max - step`); with `include_max == true` it has `n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_z: usize,
    pub n_x: usize,
    pub n_r: usize,
    pub n_theta: usize,
    #[serde(default)]
    pub include_max: bool,
}

impl RegionSpec {
    pub fn validate(&self, domain: Domain) -> Result<()> {
        let axes: [(&str, f64, f64, usize); 2] = match domain {
            Domain::Cartesian => [
                ("z", self.z_min, self.z_max, self.n_z),
                ("x", self.x_min, self.x_max, self.n_x),
            ],
            Domain::Polar => [
                ("r", self.r_min, self.r_max, self.n_r),
                ("theta", self.theta_min, self.theta_max, self.n_theta),
            ],
        };
        for (name, lo, hi, n) in axes {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidRegion(format!("{name}: max must exceed min")));
            }
            if n < 2 {
                return Err(Error::InvalidRegion(format!("{name}: need at least 2 samples")));
            }
        }
        if domain == Domain::Polar && self.r_min <= 0.0 {
            return Err(Error::InvalidRegion("r_min must be positive".into()));
        }
        Ok(())
    }

    pub fn bounds(&self, domain: Domain) -> [(f64, f64); 2] {
        match domain {
            Domain::Cartesian => [(self.z_min, self.z_max), (self.x_min, self.x_max)],
            Domain::Polar => [(self.r_min, self.r_max), (self.theta_min, self.theta_max)],
        }
    }

    pub fn counts(&self, domain: Domain) -> [usize; 2] {
        match domain {
            Domain::Cartesian => [self.n_z, self.n_x],
            Domain::Polar => [self.n_r, self.n_theta],
        }
    }

    /// Uniform step in domain coordinates per axis; for the Polar distance
    /// axis this is the step in `log10(r)`.
    pub fn steps(&self, domain: Domain) -> [f64; 2] {
        let [n1, n2] = self.counts(domain);
        match domain {
            Domain::Cartesian => [
                (self.z_max - self.z_min) / n1 as f64,
                (self.x_max - self.x_min) / n2 as f64,
            ],
            Domain::Polar => [
                (self.r_max.log10() - self.r_min.log10()) / n1 as f64,
                (self.theta_max - self.theta_min) / n2 as f64,
            ],
        }
    }

    fn points_on(&self, n: usize) -> usize {
        if self.include_max {
            n + 1
        } else {
            n
        }
    }

    /// Realised sample values on both axes.
    pub fn axis_samples(&self, domain: Domain) -> [Vec<f64>; 2] {
        let [n1, n2] = self.counts(domain);
        let [s1, s2] = self.steps(domain);
        let [(lo1, hi1), (lo2, hi2)] = self.bounds(domain);
        let uniform = |lo: f64, hi: f64, step: f64, n: usize| -> Vec<f64> {
            (0..self.points_on(n))
                .map(|k| if k == n { hi } else { lo + k as f64 * step })
                .collect()
        };
        match domain {
            Domain::Cartesian => [uniform(lo1, hi1, s1, n1), uniform(lo2, hi2, s2, n2)],
            Domain::Polar => {
                let lg_lo = lo1.log10();
                let r = (0..self.points_on(n1))
                    .map(|k| {
                        if k == 0 {
                            lo1
                        } else if k == n1 {
                            hi1
                        } else {
                            10f64.powf(lg_lo + k as f64 * s1)
                        }
                    })
                    .collect();
                [r, uniform(lo2, hi2, s2, n2)]
            }
        }
    }
}

/// Phase-only codebook: one row per grid point, row-major with the distance
/// (z or r) axis as the slow index.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub domain: Domain,
    pub region: RegionSpec,
    pub array: ArrayConfig,
    pub axes: [Vec<f64>; 2],
    codewords: Vec<Complex64>,
}

/// Phase-only codeword `exp(+j·k·d_n)` for a Cartesian grid point.
pub fn codeword_cart(cfg: &ArrayConfig, p: CartesianPoint) -> Vec<Complex64> {
    let k = cfg.wavenumber();
    (0..cfg.n_antennas)
        .map(|i| {
            let d = element_distance_cart(cfg, cfg.symmetric_index(i), p);
            Complex64::from_polar(1.0, k * d)
        })
        .collect()
}

/// Phase-only codeword for a polar grid point.
pub fn codeword_polar(cfg: &ArrayConfig, p: PolarPoint) -> Vec<Complex64> {
    let k = cfg.wavenumber();
    (0..cfg.n_antennas)
        .map(|i| {
            let d = element_distance_polar(cfg, cfg.symmetric_index(i), p);
            Complex64::from_polar(1.0, k * d)
        })
        .collect()
}

pub fn codeword(cfg: &ArrayConfig, p: Position) -> Vec<Complex64> {
    match p {
        Position::Cartesian(c) => codeword_cart(cfg, c),
        Position::Polar(q) => codeword_polar(cfg, q),
    }
}

fn build(cfg: &ArrayConfig, region: &RegionSpec, domain: Domain) -> Result<Codebook> {
    cfg.validate()?;
    region.validate(domain)?;
    let axes = region.axis_samples(domain);
    let n = cfg.n_antennas;
    let cols = axes[1].len();
    let rows = axes[0].len() * cols;
    let mut codewords = vec![Complex64::new(0.0, 0.0); rows * n];
    codewords
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(row, out)| {
            let p = domain.position(axes[0][row / cols], axes[1][row % cols]);
            out.copy_from_slice(&codeword(cfg, p));
        });
    Ok(Codebook {
        domain,
        region: *region,
        array: *cfg,
        axes,
        codewords,
    })
}

pub fn build_cartesian_codebook(cfg: &ArrayConfig, region: &RegionSpec) -> Result<Codebook> {
    build(cfg, region, Domain::Cartesian)
}

pub fn build_polar_codebook(cfg: &ArrayConfig, region: &RegionSpec) -> Result<Codebook> {
    build(cfg, region, Domain::Polar)
}

pub fn build_codebook(cfg: &ArrayConfig, region: &RegionSpec, domain: Domain) -> Result<Codebook> {
    build(cfg, region, domain)
}

#[derive(Debug, Clone)]
pub struct TransformedSignal {
    /// Row-major `rows × cols` values.
    pub values: Vec<Complex64>,
    pub rows: usize,
    pub cols: usize,
    pub domain: Domain,
    pub region: RegionSpec,
    pub axes: [Vec<f64>; 2],
}

impl TransformedSignal {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.cols + col]
    }
}

impl Codebook {
    pub fn rows(&self) -> usize {
        self.axes[0].len() * self.axes[1].len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].len(), self.axes[1].len())
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        let n = self.array.n_antennas;
        &self.codewords[i * n..(i + 1) * n]
    }

    pub fn grid_coords(&self, row: usize) -> [f64; 2] {
        let cols = self.axes[1].len();
        [self.axes[0][row / cols], self.axes[1][row % cols]]
    }

    pub fn grid_point(&self, row: usize) -> Position {
        let [a, b] = self.grid_coords(row);
        self.domain.position(a, b)
    }

    /// `U·y` for every row, no conjugation.
    pub fn project(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.array.n_antennas;
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        Ok(self
            .codewords
            .par_chunks(n)
            .map(|row| row.iter().zip(y).map(|(u, v)| u * v).sum())
            .collect())
    }

    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&[self.domain.tag()])?;
        for (lo, hi) in self.region.bounds(self.domain) {
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&hi.to_le_bytes())?;
        }
        for axis in &self.axes {
            w.write_all(&(axis.len() as u32).to_le_bytes())?;
        }
        w.write_all(&(self.array.n_antennas as u32).to_le_bytes())?;
        w.write_all(&self.array.carrier_hz.to_le_bytes())?;
        w.write_all(&self.array.spacing_m.to_le_bytes())?;
        for axis in &self.axes {
            for v in axis {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for c in &self.codewords {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a cache written by [`Codebook::write_cache`]. `region` supplies
    /// the fields of the other domain, which the cache does not carry.
    pub fn read_cache<R: Read>(mut r: R, region: RegionSpec) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("bad codebook magic".into()));
        }
        let domain = Domain::from_tag(read_u8(&mut r)?)?;
        let mut region = region;
        let b = [read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?];
        match domain {
            Domain::Cartesian => {
                (region.z_min, region.z_max, region.x_min, region.x_max) = (b[0], b[1], b[2], b[3])
            }
            Domain::Polar => {
                (region.r_min, region.r_max, region.theta_min, region.theta_max) =
                    (b[0], b[1], b[2], b[3])
            }
        }
        let n1 = read_u32(&mut r)? as usize;
        let n2 = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let array = ArrayConfig::new(n, read_f64(&mut r)?, read_f64(&mut r)?)?;
        let mut axes = [Vec::with_capacity(n1), Vec::with_capacity(n2)];
        for (axis, len) in axes.iter_mut().zip([n1, n2]) {
            for _ in 0..len {
                axis.push(read_f64(&mut r)?);
            }
        }
        let mut codewords = Vec::with_capacity(n1 * n2 * n);
        for _ in 0..n1 * n2 * n {
            let re = read_f64(&mut r)?;
            let im = read_f64(&mut r)?;
            codewords.push(Complex64::new(re, im));
        }
        Ok(Self {
            domain,
            region,
            array,
            axes,
            codewords,
        })
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn transform(codebook: &Codebook, y: &[Complex64]) -> Result<TransformedSignal> {
    let values = codebook.project(y)?;
    let (rows, cols) = codebook.shape();
    Ok(TransformedSignal {
        values,
        rows,
        cols,
        domain: codebook.domain,
        region: codebook.region,
        axes: codebook.axes.clone(),
    })
}

/// Row index of the largest `|y_T|` entry; ties go to the lowest index.
pub fn argmax_row(values: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    best
}

/// Grid point whose codeword responds most strongly to `y`.
pub fn property1_argmax(codebook: &Codebook, y: &[Complex64]) -> Result<Position> {
    let yt = codebook.project(y)?;
    Ok(codebook.grid_point(argmax_row(&yt)))
}
