//! Grayscale channel images and the pixel ↔ physical coordinate maps.
//!
//! Orientation: image rows follow the first transform axis (z or r), columns
//! the second (x or θ). Pixel `(i, j)` of an image rendered at codebook
//! resolution is the codebook grid point `(i, j)`; no half-pixel offset.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{CartesianPoint, Position};
use crate::codebook::{Domain, RegionSpec, TransformedSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    /// Row-major pixels; 0 marks the strongest response, 255 no response.
    pub pixels: Vec<u8>,
    pub i_h: usize,
    pub i_w: usize,
    pub domain: Domain,
    pub region: RegionSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageMeta {
    domain: Domain,
    region: RegionSpec,
    i_w: usize,
    i_h: usize,
}

impl ChannelImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.i_w + col]
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = ImageMeta {
            domain: self.domain,
            region: self.region,
            i_w: self.i_w,
            i_h: self.i_h,
        };
        write!(w, "P5\n# {}\n{} {}\n255\n", serde_json::to_string(&meta)?, self.i_w, self.i_h)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut meta: Option<ImageMeta> = None;
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let line = line.trim_end_matches(['\n', '\r']);
            if let Some(comment) = line.strip_prefix('#') {
                if let Ok(m) = serde_json::from_str::<ImageMeta>(comment.trim()) {
                    meta = Some(m);
                }
                continue;
            }
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P5" {
            return Err(Error::Format("not a binary PGM".into()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
        };
        let (i_w, i_h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::Format("only maxval 255 is supported".into()));
        }
        let meta = meta.ok_or_else(|| Error::Format("missing metadata comment".into()))?;
        if meta.i_w != i_w || meta.i_h != i_h {
            return Err(Error::Format("metadata dims disagree with PGM header".into()));
        }
        let mut pixels = vec![0u8; i_w * i_h];
        r.read_exact(&mut pixels)?;
        Ok(Self {
            pixels,
            i_h,
            i_w,
            domain: meta.domain,
            region: meta.region,
        })
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

pub fn to_image(t: &TransformedSignal) -> Result<ChannelImage> {
    let mags: Vec<f64> = t.values.iter().map(|v| v.norm()).collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateImage);
    }
    let pixels = mags
        .iter()
        .map(|m| round_half_up((1.0 - m / max) * 255.0).clamp(0.0, 255.0) as u8)
        .collect();
    Ok(ChannelImage {
        pixels,
        i_h: t.rows,
        i_w: t.cols,
        domain: t.domain,
        region: t.region,
    })
}

/// Bilinear resampling with corner-aligned sample positions.
pub fn resample(img: &ChannelImage, i_w: usize, i_h: usize) -> Result<ChannelImage> {
    if i_w < 2 || i_h < 2 {
        return Err(Error::InvalidConfig("resample target must be at least 2x2".into()));
    }
    if i_w == img.i_w && i_h == img.i_h {
        return Ok(img.clone());
    }
    let scale = |dst: usize, src: usize| (src as f64 - 1.0) / (dst as f64 - 1.0);
    let (sy, sx) = (scale(i_h, img.i_h), scale(i_w, img.i_w));
    let mut pixels = Vec::with_capacity(i_w * i_h);
    for row in 0..i_h {
        let fy = row as f64 * sy;
        let y0 = (fy.floor() as usize).min(img.i_h - 1);
        let y1 = (y0 + 1).min(img.i_h - 1);
        let wy = fy - y0 as f64;
        for col in 0..i_w {
            let fx = col as f64 * sx;
            let x0 = (fx.floor() as usize).min(img.i_w - 1);
            let x1 = (x0 + 1).min(img.i_w - 1);
            let wx = fx - x0 as f64;
            let p = |r: usize, c: usize| img.get(r, c) as f64;
            let v = (1.0 - wy) * ((1.0 - wx) * p(y0, x0) + wx * p(y0, x1))
                + wy * ((1.0 - wx) * p(y1, x0) + wx * p(y1, x1));
            pixels.push(round_half_up(v).clamp(0.0, 255.0) as u8);
        }
    }
    Ok(ChannelImage {
        pixels,
        i_h,
        i_w,
        domain: img.domain,
        region: img.region,
    })
}

fn check_px(img: &ChannelImage, row: f64, col: f64) -> Result<()> {
    let inside = (0.0..=img.i_h as f64).contains(&row) && (0.0..=img.i_w as f64).contains(&col);
    if inside {
        Ok(())
    } else {
        Err(Error::PixelOutOfRange { row, col })
    }
}

/// De-normalises detector output coordinates to physical coordinates.
///
/// Cartesian: `z = row/I_W·(Zmax-Zmin)+Zmin`, `x = col/I_H·(Xmax-Xmin)+Xmin`.
/// Polar: `θ = col/I_W·(Θmax-Θmin)+Θmin`, `r = row/I_H·(Rmax-Rmin)+Rmin`
/// (linear in r).
pub fn pixel_to_physical(img: &ChannelImage, px: (f64, f64)) -> Result<Position> {
    let (row, col) = px;
    check_px(img, row, col)?;
    let reg = &img.region;
    let (h, w) = (img.i_h as f64, img.i_w as f64);
    Ok(match img.domain {
        Domain::Cartesian => Position::Cartesian(CartesianPoint::new(
            row / w * (reg.z_max - reg.z_min) + reg.z_min,
            col / h * (reg.x_max - reg.x_min) + reg.x_min,
        )),
        Domain::Polar => img.domain.position(
            row / h * (reg.r_max - reg.r_min) + reg.r_min,
            col / w * (reg.theta_max - reg.theta_min) + reg.theta_min,
        ),
    })
}

/// Inverse of [`pixel_to_physical`]; used to place training labels.
pub fn physical_to_pixel(img: &ChannelImage, p: Position) -> (f64, f64) {
    physical_to_pixel_dims(img.domain, &img.region, img.i_h, img.i_w, p)
}

pub fn physical_to_pixel_dims(
    domain: Domain,
    reg: &RegionSpec,
    i_h: usize,
    i_w: usize,
    p: Position,
) -> (f64, f64) {
    let (h, w) = (i_h as f64, i_w as f64);
    let [a, b] = domain.coords(p.to_cartesian());
    match domain {
        Domain::Cartesian => (
            (a - reg.z_min) / (reg.z_max - reg.z_min) * w,
            (b - reg.x_min) / (reg.x_max - reg.x_min) * h,
        ),
        Domain::Polar => (
            (a - reg.r_min) / (reg.r_max - reg.r_min) * h,
            (b - reg.theta_min) / (reg.theta_max - reg.theta_min) * w,
        ),
    }
}

/// Maps a pixel to the codebook sampling law it was rendered from: identical
/// to [`pixel_to_physical`] for square Cartesian images, logarithmic in r for
/// Polar images. Used by the classical detector, whose peaks sit on grid
/// samples.
pub fn pixel_to_grid_physical(img: &ChannelImage, px: (f64, f64)) -> Result<Position> {
    let (row, col) = px;
    check_px(img, row, col)?;
    let reg = &img.region;
    let (h, w) = (img.i_h as f64, img.i_w as f64);
    Ok(match img.domain {
        Domain::Cartesian => Position::Cartesian(CartesianPoint::new(
            row / h * (reg.z_max - reg.z_min) + reg.z_min,
            col / w * (reg.x_max - reg.x_min) + reg.x_min,
        )),
        Domain::Polar => {
            let lg = reg.r_min.log10() + row / h * (reg.r_max.log10() - reg.r_min.log10());
            img.domain.position(
                10f64.powf(lg),
                col / w * (reg.theta_max - reg.theta_min) + reg.theta_min,
            )
        }
    })
}

/// One line of the label sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub keypoints_px: Vec<[f64; 2]>,
    /// Cartesian `[z, x]` in meters.
    pub positions: Vec<[f64; 2]>,
    pub present: Vec<bool>,
}
