//! Forward-only inference for the keypoint networks.
//!
//! Architecture files are JSON (`"schema": "ckarch-1"`). Parameter names are
//! derived from layer position:
//!
//! * `CB`: `layers.{i}.conv.weight` `[out, in, 3, 3]`, `layers.{i}.conv.bias`
//! * `IRB`: `layers.{i}.expand.*` `[in*t, in, 1, 1]` (absent when `t == 1`),
//!   `layers.{i}.dw.*` `[in*t, 1, 3, 3]`, `layers.{i}.project.*` `[out, in*t, 1, 1]`
//! * `IRBU`: as `IRB` under `layers.{i}.blocks.{k}.`
//! * `FC`: `layers.{i}.weight` `[out, in]`, `layers.{i}.bias`
//!
//! Batch norm is expected to be folded into the convolutions. Inputs are
//! pixel values scaled to `[0, 1]`. Fixed-mode outputs are `S` normalised
//! `(row, col)` pairs; flexible-mode outputs are `S_max` triples
//! `(row, col, score_logit)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::WeightBundle;
use super::{filter_by_score, KeypointPrediction};
use crate::error::{Error, Result};
use crate::imaging::ChannelImage;

pub const ARCH_SCHEMA: &str = "ckarch-1";

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Layer {
    CB {
        out_ch: usize,
        stride: usize,
    },
    IRB {
        t: usize,
        out_ch: usize,
        stride: usize,
    },
    /// `repeat` stacked IRBs; only the first uses `stride`.
    IRBU {
        t: usize,
        out_ch: usize,
        repeat: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    AvgPool,
    FC {
        out: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Fixed,
    Flexible,
}

impl OutputMode {
    pub fn values_per_point(self) -> usize {
        match self {
            OutputMode::Fixed => 2,
            OutputMode::Flexible => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub schema: String,
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// One inverted residual block as seen by the parameter layout.
#[derive(Debug, Clone, Copy)]
struct Irb {
    t: usize,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

impl Irb {
    fn hidden(&self) -> usize {
        self.in_ch * self.t
    }

    fn slots(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>)>) {
        let hid = self.hidden();
        if self.t != 1 {
            out.push((format!("{prefix}expand.weight"), vec![hid, self.in_ch, 1, 1]));
            out.push((format!("{prefix}expand.bias"), vec![hid]));
        }
        out.push((format!("{prefix}dw.weight"), vec![hid, 1, 3, 3]));
        out.push((format!("{prefix}dw.bias"), vec![hid]));
        out.push((format!("{prefix}project.weight"), vec![self.out_ch, hid, 1, 1]));
        out.push((format!("{prefix}project.bias"), vec![self.out_ch]));
    }
}

impl NetArch {
    pub fn from_json(s: &str) -> Result<Self> {
        let arch: NetArch = serde_json::from_str(s)?;
        arch.shapes()?;
        Ok(arch)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch serialises")
    }

    /// Consistent desk-scale preset for a 128×128 input.
    pub fn desk(mode: OutputMode, s: usize) -> Self {
        Self::desk_sized(128, 128, mode, s)
    }

    pub fn desk_sized(i_h: usize, i_w: usize, mode: OutputMode, s: usize) -> Self {
        NetArch {
            schema: ARCH_SCHEMA.into(),
            input: [1, i_h, i_w],
            layers: vec![
                Layer::CB { out_ch: 64, stride: 2 },
                Layer::CB { out_ch: 64, stride: 1 },
                Layer::IRB { t: 2, out_ch: 64, stride: 2 },
                Layer::IRBU { t: 2, out_ch: 64, repeat: 2, stride: 2 },
                Layer::IRB { t: 4, out_ch: 128, stride: 1 },
                Layer::IRBU { t: 4, out_ch: 128, repeat: 2, stride: 1 },
                Layer::AvgPool,
                Layer::FC { out: 256 },
                Layer::FC { out: mode.values_per_point() * s },
            ],
        }
    }

    /// Full-scale 512×512 preset; widths and strides chosen so every layer
    /// chains consistently.
    pub fn paper(mode: OutputMode, s: usize) -> Self {
        NetArch {
            schema: ARCH_SCHEMA.into(),
            input: [1, 512, 512],
            layers: vec![
                Layer::CB { out_ch: 64, stride: 2 },
                Layer::CB { out_ch: 64, stride: 1 },
                Layer::IRB { t: 2, out_ch: 64, stride: 1 },
                Layer::IRBU { t: 2, out_ch: 64, repeat: 4, stride: 2 },
                Layer::IRB { t: 2, out_ch: 128, stride: 2 },
                Layer::IRB { t: 4, out_ch: 128, stride: 1 },
                Layer::IRBU { t: 4, out_ch: 64, repeat: 6, stride: 1 },
                Layer::IRB { t: 2, out_ch: 128, stride: 1 },
                Layer::CB { out_ch: 16, stride: 1 },
                Layer::CB { out_ch: 32, stride: 2 },
                Layer::AvgPool,
                Layer::FC { out: 256 },
                Layer::FC { out: mode.values_per_point() * s },
            ],
        }
    }

    /// Output shape after every layer; fails on an inconsistent chain.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.schema != ARCH_SCHEMA {
            return Err(Error::Format(format!("unknown arch schema {:?}", self.schema)));
        }
        let [c, h, w] = self.input;
        if c != 1 || h == 0 || w == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: c });
        }
        let mut cur = Shape::Map { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: &str| Error::InvalidConfig(format!("layer {i}: {msg}"));
            cur = match (*layer, cur) {
                (Layer::CB { out_ch, stride }, Shape::Map { h, w, .. })
                | (Layer::IRB { out_ch, stride, .. }, Shape::Map { h, w, .. })
                | (Layer::IRBU { out_ch, stride, .. }, Shape::Map { h, w, .. }) => {
                    if stride == 0 || out_ch == 0 {
                        return Err(bad("stride and channels must be positive"));
                    }
                    if let Layer::IRB { t: 0, .. } | Layer::IRBU { t: 0, .. } | Layer::IRBU { repeat: 0, .. } =
                        layer
                    {
                        return Err(bad("expansion and repeat must be positive"));
                    }
                    Shape::Map { c: out_ch, h: conv_out(h, stride), w: conv_out(w, stride) }
                }
                (Layer::AvgPool, Shape::Map { c, .. }) => Shape::Map { c, h: 1, w: 1 },
                (Layer::FC { out }, _) => {
                    if out == 0 {
                        return Err(bad("FC width must be positive"));
                    }
                    Shape::Flat(out)
                }
                (_, Shape::Flat(_)) => return Err(bad("spatial layer after flatten")),
            };
            out.push(cur);
        }
        match cur {
            Shape::Flat(_) => Ok(out),
            _ => Err(Error::InvalidConfig("architecture must end with FC".into())),
        }
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(|s| s.len()).unwrap_or(0))
    }

    /// Number of keypoints for the given mode.
    pub fn points(&self, mode: OutputMode) -> Result<usize> {
        let n = self.output_len()?;
        let k = mode.values_per_point();
        if n % k != 0 {
            return Err(Error::DimensionMismatch { expected: k * (n / k + 1), got: n });
        }
        Ok(n / k)
    }

    fn irbs(&self) -> Result<Vec<(usize, Option<usize>, Irb)>> {
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let in_ch = if i == 0 {
                self.input[0]
            } else {
                match shapes[i - 1] {
                    Shape::Map { c, .. } => c,
                    Shape::Flat(n) => n,
                }
            };
            match *layer {
                Layer::IRB { t, out_ch, stride } => {
                    out.push((i, None, Irb { t, in_ch, out_ch, stride }))
                }
                Layer::IRBU { t, out_ch, repeat, stride } => {
                    for k in 0..repeat {
                        let (cin, s) = if k == 0 { (in_ch, stride) } else { (out_ch, 1) };
                        out.push((i, Some(k), Irb { t, in_ch: cin, out_ch, stride: s }));
                    }
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Every parameter slot with its expected dims, in layer order.
    pub fn param_slots(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let shapes = self.shapes()?;
        let irbs = self.irbs()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = if i == 0 {
                Shape::Map { c: self.input[0], h: self.input[1], w: self.input[2] }
            } else {
                shapes[i - 1]
            };
            match *layer {
                Layer::CB { out_ch, .. } => {
                    let Shape::Map { c, .. } = prev else { unreachable!() };
                    out.push((format!("layers.{i}.conv.weight"), vec![out_ch, c, 3, 3]));
                    out.push((format!("layers.{i}.conv.bias"), vec![out_ch]));
                }
                Layer::IRB { .. } | Layer::IRBU { .. } => {
                    for (li, k, b) in irbs.iter().filter(|(li, ..)| *li == i) {
                        let prefix = match k {
                            None => format!("layers.{li}."),
                            Some(k) => format!("layers.{li}.blocks.{k}."),
                        };
                        b.slots(&prefix, &mut out);
                    }
                }
                Layer::AvgPool => {}
                Layer::FC { out: o } => {
                    out.push((format!("layers.{i}.weight"), vec![o, prev.len()]));
                    out.push((format!("layers.{i}.bias"), vec![o]));
                }
            }
        }
        Ok(out)
    }

    /// Checks that `w` fills every slot exactly once with matching dims.
    pub fn check_weights(&self, w: &WeightBundle) -> Result<()> {
        let slots = self.param_slots()?;
        for (name, dims) in &slots {
            let t = w.get(name)?;
            if &t.dims != dims {
                return Err(Error::WeightMismatch(format!(
                    "{name}: expected dims {dims:?}, got {:?}",
                    t.dims
                )));
            }
        }
        if w.tensors.len() != slots.len() {
            let extra: Vec<&String> = w
                .tensors
                .keys()
                .filter(|k| !slots.iter().any(|(n, _)| n == *k))
                .collect();
            return Err(Error::WeightMismatch(format!("unexpected tensors {extra:?}")));
        }
        Ok(())
    }

    /// Zero-initialised bundle matching this architecture.
    pub fn zero_weights(&self) -> Result<WeightBundle> {
        let mut w = WeightBundle::default();
        for (name, dims) in self.param_slots()? {
            w.insert(name, super::weights::Tensor::zeros(dims));
        }
        Ok(w)
    }
}

struct Act {
    data: Vec<f32>,
    c: usize,
    h: usize,
    w: usize,
}

fn relu(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn conv3x3(x: &Act, weight: &[f32], bias: &[f32], out_ch: usize, stride: usize) -> Act {
    let (oh, ow) = (conv_out(x.h, stride), conv_out(x.w, stride));
    let plane = x.h * x.w;
    let mut data = vec![0f32; out_ch * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(o, dst)| {
        for (r, row) in dst.chunks_mut(ow).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let mut acc = bias[o];
                for i in 0..x.c {
                    let k = &weight[(o * x.c + i) * 9..(o * x.c + i + 1) * 9];
                    let src = &x.data[i * plane..(i + 1) * plane];
                    for dr in 0..3 {
                        let rr = (r * stride + dr) as isize - 1;
                        if rr < 0 || rr as usize >= x.h {
                            continue;
                        }
                        for dc in 0..3 {
                            let cc = (c * stride + dc) as isize - 1;
                            if cc < 0 || cc as usize >= x.w {
                                continue;
                            }
                            acc += k[dr * 3 + dc] * src[rr as usize * x.w + cc as usize];
                        }
                    }
                }
                *v = acc;
            }
        }
    });
    Act { data, c: out_ch, h: oh, w: ow }
}

fn depthwise3x3(x: &Act, weight: &[f32], bias: &[f32], stride: usize) -> Act {
    let (oh, ow) = (conv_out(x.h, stride), conv_out(x.w, stride));
    let plane = x.h * x.w;
    let mut data = vec![0f32; x.c * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(ch, dst)| {
        let k = &weight[ch * 9..(ch + 1) * 9];
        let src = &x.data[ch * plane..(ch + 1) * plane];
        for (r, row) in dst.chunks_mut(ow).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let mut acc = bias[ch];
                for dr in 0..3 {
                    let rr = (r * stride + dr) as isize - 1;
                    if rr < 0 || rr as usize >= x.h {
                        continue;
                    }
                    for dc in 0..3 {
                        let cc = (c * stride + dc) as isize - 1;
                        if cc < 0 || cc as usize >= x.w {
                            continue;
                        }
                        acc += k[dr * 3 + dc] * src[rr as usize * x.w + cc as usize];
                    }
                }
                *v = acc;
            }
        }
    });
    Act { data, c: x.c, h: oh, w: ow }
}

fn pointwise(x: &Act, weight: &[f32], bias: &[f32], out_ch: usize) -> Act {
    let plane = x.h * x.w;
    let mut data = vec![0f32; out_ch * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..x.c {
            let k = weight[o * x.c + i];
            let src = &x.data[i * plane..(i + 1) * plane];
            for (v, s) in dst.iter_mut().zip(src) {
                *v += k * s;
            }
        }
    });
    Act { data, c: out_ch, h: x.h, w: x.w }
}

fn irb_forward(x: &Act, b: &Irb, prefix: &str, w: &WeightBundle) -> Result<Act> {
    let hid = b.hidden();
    let mut h = if b.t != 1 {
        let mut e = pointwise(
            x,
            &w.get(&format!("{prefix}expand.weight"))?.data,
            &w.get(&format!("{prefix}expand.bias"))?.data,
            hid,
        );
        relu(&mut e.data);
        e
    } else {
        Act { data: x.data.clone(), c: x.c, h: x.h, w: x.w }
    };
    h = depthwise3x3(
        &h,
        &w.get(&format!("{prefix}dw.weight"))?.data,
        &w.get(&format!("{prefix}dw.bias"))?.data,
        b.stride,
    );
    relu(&mut h.data);
    let mut y = pointwise(
        &h,
        &w.get(&format!("{prefix}project.weight"))?.data,
        &w.get(&format!("{prefix}project.bias"))?.data,
        b.out_ch,
    );
    if b.stride == 1 && b.in_ch == b.out_ch {
        for (v, s) in y.data.iter_mut().zip(&x.data) {
            *v += s;
        }
    }
    Ok(y)
}

fn check_finite(x: &[f32], layer: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::CorruptedWeights(layer.to_string()))
    }
}

/// Raw network output for a `[1, H, W]` input.
pub fn forward(arch: &NetArch, w: &WeightBundle, input: &[f32]) -> Result<Vec<f32>> {
    arch.check_weights(w)?;
    let [c, h, wd] = arch.input;
    if input.len() != c * h * wd {
        return Err(Error::DimensionMismatch { expected: c * h * wd, got: input.len() });
    }
    check_finite(input, 0)?;
    let irbs = arch.irbs()?;
    let mut x = Act { data: input.to_vec(), c, h, w: wd };
    for (i, layer) in arch.layers.iter().enumerate() {
        x = match *layer {
            Layer::CB { out_ch, stride } => {
                let mut y = conv3x3(
                    &x,
                    &w.get(&format!("layers.{i}.conv.weight"))?.data,
                    &w.get(&format!("layers.{i}.conv.bias"))?.data,
                    out_ch,
                    stride,
                );
                relu(&mut y.data);
                y
            }
            Layer::IRB { .. } | Layer::IRBU { .. } => {
                for (_, k, b) in irbs.iter().filter(|(li, ..)| *li == i) {
                    let prefix = match k {
                        None => format!("layers.{i}."),
                        Some(k) => format!("layers.{i}.blocks.{k}."),
                    };
                    x = irb_forward(&x, b, &prefix, w)?;
                }
                x
            }
            Layer::AvgPool => {
                let plane = (x.h * x.w) as f32;
                let data = x
                    .data
                    .chunks(x.h * x.w)
                    .map(|ch| ch.iter().sum::<f32>() / plane)
                    .collect();
                Act { data, c: x.c, h: 1, w: 1 }
            }
            Layer::FC { out } => {
                let wt = &w.get(&format!("layers.{i}.weight"))?.data;
                let bias = &w.get(&format!("layers.{i}.bias"))?.data;
                let n = x.data.len();
                let mut y: Vec<f32> = (0..out)
                    .map(|o| {
                        wt[o * n..(o + 1) * n]
                            .iter()
                            .zip(&x.data)
                            .fold(bias[o], |acc, (a, b)| acc + a * b)
                    })
                    .collect();
                if i + 1 != arch.layers.len() {
                    relu(&mut y);
                }
                Act { data: y, c: out, h: 1, w: 1 }
            }
        };
        check_finite(&x.data, i)?;
    }
    Ok(x.data)
}

/// Network input tensor for an image: pixels scaled to `[0, 1]`.
pub fn image_tensor(img: &ChannelImage) -> Vec<f32> {
    img.pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Runs the network and converts outputs to keypoints.
pub fn infer(
    arch: &NetArch,
    w: &WeightBundle,
    img: &ChannelImage,
    mode: OutputMode,
    tau: f64,
) -> Result<KeypointPrediction> {
    if img.i_h != arch.input[1] || img.i_w != arch.input[2] {
        return Err(Error::DimensionMismatch {
            expected: arch.input[1] * arch.input[2],
            got: img.i_h * img.i_w,
        });
    }
    let s = arch.points(mode)?;
    let raw = forward(arch, w, &image_tensor(img))?;
    let (ih, iw) = (img.i_h as f64, img.i_w as f64);
    let k = mode.values_per_point();
    let mut pts: Vec<([f64; 2], Option<f64>)> = (0..s)
        .map(|i| {
            let o = &raw[i * k..(i + 1) * k];
            let p = [
                (o[0] as f64 * ih).clamp(0.0, ih),
                (o[1] as f64 * iw).clamp(0.0, iw),
            ];
            (p, (k == 3).then(|| logistic(o[2] as f64)))
        })
        .collect();
    pts.sort_by(|a, b| {
        a.0[1]
            .total_cmp(&b.0[1])
            .then(a.0[0].total_cmp(&b.0[0]))
    });
    let pred = KeypointPrediction {
        points_px: pts.iter().map(|p| p.0).collect(),
        scores: match mode {
            OutputMode::Fixed => None,
            OutputMode::Flexible => Some(pts.iter().map(|p| p.1.unwrap()).collect()),
        },
        low_confidence: false,
    };
    Ok(filter_by_score(&pred, tau))
}

/// Recorded forward outputs for one image, used to check engine parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub image_path: String,
    pub outputs: Vec<f64>,
    pub tolerance: f64,
}

impl Fixture {
    /// Largest absolute deviation between recorded and computed outputs.
    pub fn max_deviation(&self, computed: &[f32]) -> Result<f64> {
        if computed.len() != self.outputs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.outputs.len(),
                got: computed.len(),
            });
        }
        Ok(self
            .outputs
            .iter()
            .zip(computed)
            .map(|(a, b)| (a - *b as f64).abs())
            .fold(0.0, f64::max))
    }
}
