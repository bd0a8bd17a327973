use serde::{Deserialize, Serialize};

use super::{same_dims, Image};
use crate::error::Result;

/// Noise between an original and a perturbed image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mse: f64,
    /// dB with unit dynamic range; `+inf` when the images are identical.
    #[serde(with = "lenient_f64")]
    pub psnr: f64,
    /// dB with D = 255 on 8-bit quantized copies of both images.
    #[serde(with = "lenient_f64")]
    pub psnr_8bit: f64,
    pub ssim: f64,
}

/// JSON has no infinities, so non-finite values travel as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod lenient_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

/// Mean of squared pixel differences.
pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    same_dims(x, y)?;
    let n = x.data().len().max(1) as f64;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(D^2 / MSE)`, or `+inf` when the images are identical.
pub fn psnr(x: &Image, y: &Image, dynamic_range: f64) -> Result<f64> {
    let m = mse(x, y)?;
    Ok(psnr_from_mse(m, dynamic_range))
}

pub(crate) fn psnr_from_mse(mse: f64, dynamic_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (dynamic_range * dynamic_range / mse).log10()
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully-contained window position.
fn valid_filter(data: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity over local windows.
///
/// Uses an 11x11 Gaussian window (sigma 1.5) with `C1 = (0.01)^2` and
/// `C2 = (0.03)^2` for unit range. Images smaller than 11 pixels on a side
/// fall back to a uniform window of `min(7, smallest side)`.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_dims(x, y)?;
    let (h, w) = x.dims();
    let win = if h.min(w) >= 11 {
        gaussian_window(11, 1.5)
    } else {
        let k = 7.min(h.min(w)).max(1);
        vec![1.0 / k as f64; k]
    };
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let xs = x.data();
    let ys = y.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    let (mx, _, _) = valid_filter(xs, h, w, &win);
    let (my, _, _) = valid_filter(ys, h, w, &win);
    let (mxx, _, _) = valid_filter(&xx, h, w, &win);
    let (myy, _, _) = valid_filter(&yy, h, w, &win);
    let (mxy, _, _) = valid_filter(&xy, h, w, &win);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n)
}

pub fn quality_report(original: &Image, perturbed: &Image) -> Result<QualityReport> {
    let m = mse(original, perturbed)?;
    let m8 = mse(&original.quantized(), &perturbed.quantized())? * 255.0 * 255.0;
    Ok(QualityReport {
        mse: m,
        psnr: psnr_from_mse(m, 1.0),
        psnr_8bit: psnr_from_mse(m8, 255.0),
        ssim: ssim(original, perturbed)?,
    })
}
