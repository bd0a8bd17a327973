//! Sliding-window filters. Borders replicate the nearest edge pixel.

use super::Image;
use crate::error::{invalid, Result};

/// Window offsets for a kernel of size `k`: `[-(k-1)/2, k/2]`. Odd sizes are
/// centered; even sizes put the anchor at the top-left of the center block.
fn window(k: usize) -> std::ops::RangeInclusive<isize> {
    let lo = -(((k - 1) / 2) as isize);
    lo..=lo + k as isize - 1
}

fn map_windows<F>(image: &Image, kh: usize, kw: usize, mut f: F) -> Image
where
    F: FnMut(&mut dyn Iterator<Item = f64>) -> f64,
{
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut it = window(kh).flat_map(|dy| window(kw).map(move |dx| (dy, dx))).map(|(dy, dx)| image.get_clamped(y + dy, x + dx));
            out.push(f(&mut it));
        }
    }
    Image::from_clamped(h, w, out).expect("filter output stays finite")
}

/// Grayscale erosion: the minimum over a `kh x kw` rectangle.
pub fn erode(image: &Image, kh: usize, kw: usize) -> Result<Image> {
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(format!("erosion kernel must be odd, got {kh}x{kw}")));
    }
    Ok(map_windows(image, kh, kw, |it| it.fold(f64::INFINITY, f64::min)))
}

/// Box filter. `k` may be even (2x2 appears in the defense battery).
pub fn average_blur(image: &Image, k: usize) -> Result<Image> {
    if k < 2 {
        return Err(invalid("average blur kernel must be at least 2"));
    }
    let n = (k * k) as f64;
    Ok(map_windows(image, k, k, |it| it.sum::<f64>() / n))
}

pub fn median_blur(image: &Image, k: usize) -> Result<Image> {
    if k < 3 || k % 2 == 0 {
        return Err(invalid(format!("median kernel must be odd and at least 3, got {k}")));
    }
    let mut buf = Vec::with_capacity(k * k);
    Ok(map_windows(image, k, k, |it| {
        buf.clear();
        buf.extend(it);
        buf.sort_by(f64::total_cmp);
        buf[buf.len() / 2]
    }))
}

/// Sigma used when a Gaussian blur is requested with `sigma <= 0`.
pub fn gaussian_sigma_for(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Separable Gaussian blur; `sigma <= 0` derives sigma from `k`.
pub fn gaussian_blur(image: &Image, k: usize, sigma: f64) -> Result<Image> {
    if k < 3 || k % 2 == 0 {
        return Err(invalid(format!("gaussian kernel must be odd and at least 3, got {k}")));
    }
    let sigma = if sigma > 0.0 { sigma } else { gaussian_sigma_for(k) };
    let c = (k / 2) as f64;
    let mut taps: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);

    let (h, w) = image.dims();
    let half = (k / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * image.get_clamped(y as isize, x as isize + i as isize - half))
                .sum();
        }
    }
    let tmp = Image::from_clamped(h, w, rows)?;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp.get_clamped(y as isize + i as isize - half, x as isize))
                .sum();
        }
    }
    Image::from_clamped(h, w, out)
}
