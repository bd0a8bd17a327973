//! Input-preprocessing defenses: impulse noise, lossy DCT round-trip, and
//! fast-marching inpainting, plus a parser for `NAME@PARAMS` specs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{average_blur, gaussian_blur, median_blur, Image, Mask};
use crate::error::{invalid, Error, Result};

/// Sets `round(fraction * pixels)` distinct pixels to 1 (salt) or 0
/// (pepper), half each with the odd one going to salt.
pub fn salt_pepper(image: &Image, fraction: f64, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(format!("salt & pepper fraction {fraction} outside [0, 1]")));
    }
    let (h, w) = image.dims();
    let n = (fraction * (h * w) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, h * w, n);
    let salt = n.div_ceil(2);
    let mut data = image.data().to_vec();
    for (i, idx) in picks.into_iter().enumerate() {
        data[idx] = if i < salt { 1.0 } else { 0.0 };
    }
    Image::new(h, w, data)
}

const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Luminance quantization table scaled by the IJG quality rule.
pub(crate) fn quant_table(quality: u8) -> [f64; 64] {
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &base) in out.iter_mut().zip(&LUMA_QUANT) {
        *o = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut b = [[0.0; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let c = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = c * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
        }
    }
    b
}

/// Lossy JPEG-style round trip without entropy coding: 8x8 orthonormal
/// DCT-II on level-shifted 8-bit samples, quantize and dequantize with the
/// scaled luminance table, inverse DCT, round back to 8 bits.
pub fn compress_roundtrip(image: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(invalid(format!("quality {quality} outside [1, 100]")));
    }
    let table = quant_table(quality);
    let basis = dct_basis();
    let (h, w) = image.dims();
    let mut out = vec![0.0; h * w];
    let mut block = [0.0f64; 64];
    let mut tmp = [0.0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    let v = image.get_clamped((by + y) as isize, (bx + x) as isize);
                    block[y * 8 + x] = (v * 255.0).round() - 128.0;
                }
            }
            // Forward: rows then columns.
            for y in 0..8 {
                for u in 0..8 {
                    tmp[y * 8 + u] = (0..8).map(|x| basis[u][x] * block[y * 8 + x]).sum();
                }
            }
            for v in 0..8 {
                for u in 0..8 {
                    let coef: f64 = (0..8).map(|y| basis[v][y] * tmp[y * 8 + u]).sum();
                    let q = table[v * 8 + u];
                    block[v * 8 + u] = (coef / q).round() * q;
                }
            }
            // Inverse.
            for v in 0..8 {
                for x in 0..8 {
                    tmp[v * 8 + x] = (0..8).map(|u| basis[u][x] * block[v * 8 + u]).sum();
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let (py, px) = (by + y, bx + x);
                    if py < h && px < w {
                        let s: f64 = (0..8).map(|v| basis[v][y] * tmp[v * 8 + x]).sum();
                        out[py * w + px] = (s + 128.0).round().clamp(0.0, 255.0) / 255.0;
                    }
                }
            }
        }
    }
    Image::new(h, w, out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Min-heap on arrival time, ties by index for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

fn solve_eikonal(t: &[f64], flags: &[Flag], a: Option<usize>, b: Option<usize>) -> f64 {
    let known = |i: Option<usize>| i.filter(|&i| flags[i] != Flag::Inside).map(|i| t[i]);
    match (known(a), known(b)) {
        (Some(t1), Some(t2)) => {
            let d = t1 - t2;
            if d.abs() < 1.0 {
                let r = (2.0 - d * d).sqrt();
                (t1 + t2 + r) / 2.0
            } else {
                1.0 + t1.min(t2)
            }
        }
        (Some(t1), None) | (None, Some(t1)) => 1.0 + t1,
        (None, None) => f64::INFINITY,
    }
}

/// Fast-marching inpainting.
///
/// Masked pixels are filled in order of their distance from the mask
/// boundary. Each one becomes the normalized weighted average of already
/// known pixels within `radius`, weighted by a direction term (alignment
/// with the distance-field gradient), an inverse-cube distance term, and a
/// level-set term `1 / (1 + |dT|)`. Pixels outside the mask are untouched.
pub fn inpaint(image: &Image, mask: &Mask, radius: usize) -> Result<Image> {
    mask.check_dims(image)?;
    if radius == 0 {
        return Err(invalid("inpainting radius must be at least 1"));
    }
    if mask.is_empty() {
        return Ok(image.clone());
    }
    if mask.count() == mask.data().len() {
        return Err(invalid("inpainting mask covers the whole image"));
    }
    let (h, w) = image.dims();
    let mut values = image.data().to_vec();
    let mut flags: Vec<Flag> = mask
        .data()
        .iter()
        .map(|&m| if m { Flag::Inside } else { Flag::Known })
        .collect();
    let mut t: Vec<f64> = mask.data().iter().map(|&m| if m { f64::INFINITY } else { 0.0 }).collect();
    let neighbors = |i: usize| {
        let (y, x) = (i / w, i % w);
        [
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
        ]
    };

    let mut heap = BinaryHeap::new();
    for i in 0..h * w {
        if flags[i] == Flag::Known && neighbors(i).iter().flatten().any(|&n| flags[n] == Flag::Inside) {
            flags[i] = Flag::Band;
            heap.push(HeapItem(0.0, i));
        }
    }

    let r = radius as isize;
    while let Some(HeapItem(_, i)) = heap.pop() {
        if flags[i] == Flag::Known {
            continue;
        }
        flags[i] = Flag::Known;
        for n in neighbors(i).into_iter().flatten() {
            if flags[n] != Flag::Inside {
                continue;
            }
            let [up, down, left, right] = neighbors(n);
            let tn = [
                solve_eikonal(&t, &flags, up, left),
                solve_eikonal(&t, &flags, up, right),
                solve_eikonal(&t, &flags, down, left),
                solve_eikonal(&t, &flags, down, right),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            t[n] = tn;

            // Distance-field gradient at n from whichever neighbors are known.
            let (ny, nx) = ((n / w) as isize, (n % w) as isize);
            let known_t = |idx: Option<usize>| idx.filter(|&j| flags[j] != Flag::Inside).map(|j| t[j]);
            let grad_axis = |lo: Option<usize>, hi: Option<usize>| match (known_t(lo), known_t(hi)) {
                (Some(a), Some(b)) => (b - a) / 2.0,
                (Some(a), None) => tn - a,
                (None, Some(b)) => b - tn,
                (None, None) => 0.0,
            };
            let gy = grad_axis(up, down);
            let gx = grad_axis(left, right);

            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (qy, qx) = (ny + dy, nx + dx);
                    if qy < 0 || qx < 0 || qy >= h as isize || qx >= w as isize || (dy == 0 && dx == 0) {
                        continue;
                    }
                    let d2 = (dy * dy + dx * dx) as f64;
                    if d2 > (r * r) as f64 {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    if flags[q] == Flag::Inside {
                        continue;
                    }
                    let (ry, rx) = (-dy as f64, -dx as f64);
                    let mut dir = (ry * gy + rx * gx) / d2.sqrt();
                    if dir.abs() <= 0.01 {
                        dir = 1e-6;
                    }
                    let dst = 1.0 / (d2 * d2.sqrt());
                    let lev = 1.0 / (1.0 + (t[q] - tn).abs());
                    let wt = (dir * dst * lev).abs();
                    acc += wt * values[q];
                    wsum += wt;
                }
            }
            if wsum > 0.0 {
                values[n] = (acc / wsum).clamp(0.0, 1.0);
            }
            flags[n] = Flag::Band;
            heap.push(HeapItem(tn, n));
        }
    }
    Image::new(h, w, values)
}

/// A defense from the evaluation battery, written `NAME@PARAMS`.
#[derive(Clone, Debug, PartialEq)]
pub enum Defense {
    None,
    AverageBlur { k: usize },
    MedianBlur { k: usize },
    GaussianBlur { k: usize, sigma: f64 },
    SaltPepper { fraction: f64 },
    Compress { quality: u8 },
    Inpaint { radius: usize },
}

impl serde::Serialize for Defense {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Defense {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Defense {
    /// The six preprocessing defenses at their standard settings.
    pub fn standard_battery() -> Vec<Defense> {
        vec![
            Defense::AverageBlur { k: 2 },
            Defense::MedianBlur { k: 3 },
            Defense::GaussianBlur { k: 3, sigma: 0.0 },
            Defense::SaltPepper { fraction: 0.02 },
            Defense::Compress { quality: 20 },
            Defense::Inpaint { radius: 2 },
        ]
    }

    pub fn needs_mask(&self) -> bool {
        matches!(self, Defense::Inpaint { .. })
    }

    /// Applies the defense. Inpainting requires the watermark mask; salt and
    /// pepper draws its pixels from `seed`.
    pub fn apply(&self, image: &Image, mask: Option<&Mask>, seed: u64) -> Result<Image> {
        match *self {
            Defense::None => Ok(image.clone()),
            Defense::AverageBlur { k } => average_blur(image, k),
            Defense::MedianBlur { k } => median_blur(image, k),
            Defense::GaussianBlur { k, sigma } => gaussian_blur(image, k, sigma),
            Defense::SaltPepper { fraction } => salt_pepper(image, fraction, seed),
            Defense::Compress { quality } => compress_roundtrip(image, quality),
            Defense::Inpaint { radius } => {
                let mask = mask.ok_or_else(|| invalid("inpainting needs the watermark mask"))?;
                inpaint(image, mask, radius)
            }
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::None => write!(f, "none"),
            Defense::AverageBlur { k } => write!(f, "AvgBlur@{k}x{k}"),
            Defense::MedianBlur { k } => write!(f, "MedianBlur@{k}x{k}"),
            Defense::GaussianBlur { k, sigma } => write!(f, "GaussianBlur@{k}x{k},{sigma}"),
            Defense::SaltPepper { fraction } => write!(f, "Salt&Pepper@{}%", fraction * 100.0),
            Defense::Compress { quality } => write!(f, "Compress@{quality}"),
            Defense::Inpaint { radius } => write!(f, "inpainting@{radius}"),
        }
    }
}

fn parse_kernel(s: &str) -> Option<usize> {
    match s.split_once('x') {
        Some((a, b)) if a == b => a.parse().ok(),
        Some(_) => None,
        None => s.parse().ok(),
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, params) = s.split_once('@').unwrap_or((s, ""));
        let name: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let bad = || invalid(format!("cannot parse defense {s:?}"));
        let d = match name.as_str() {
            "none" => Defense::None,
            "avgblur" | "averageblur" | "average" => Defense::AverageBlur {
                k: parse_kernel(params).ok_or_else(bad)?,
            },
            "medianblur" | "median" => Defense::MedianBlur {
                k: parse_kernel(params).ok_or_else(bad)?,
            },
            "gaussianblur" | "gaussian" => {
                let (k, sigma) = params.split_once(',').unwrap_or((params, "0"));
                Defense::GaussianBlur {
                    k: parse_kernel(k).ok_or_else(bad)?,
                    sigma: sigma.trim().parse().map_err(|_| bad())?,
                }
            }
            "saltpepper" | "sp" => {
                let fraction = match params.strip_suffix('%') {
                    Some(p) => p.parse::<f64>().map_err(|_| bad())? / 100.0,
                    None => params.parse().map_err(|_| bad())?,
                };
                Defense::SaltPepper { fraction }
            }
            "compress" | "jpeg" => Defense::Compress {
                quality: params.parse().map_err(|_| bad())?,
            },
            "inpainting" | "inpaint" => Defense::Inpaint {
                radius: params.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(d)
    }
}
