//! Binary PGM (P5) reading and writing. Files are written with maxval 255
//! and `gray = round(value * 255)`; 16-bit files are accepted on read.

use std::fs;
use std::path::Path;

use super::{Image, Mask};
use crate::error::{Error, Result};

pub fn encode(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments between header tokens.
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(format!("bad maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < width * height * bytes_per {
        return Err(format!(
            "raster has {} bytes, need {}",
            raster.len(),
            width * height * bytes_per
        ));
    }
    let scale = maxval as f64;
    let data = (0..width * height)
        .map(|i| {
            let raw = if bytes_per == 1 {
                raster[i] as usize
            } else {
                ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
            };
            (raw as f64 / scale).min(1.0)
        })
        .collect();
    Image::new(height, width, data).map_err(|e| e.to_string())
}

pub fn write(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode(image))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write(path, &mask.to_image())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(Mask::from_image(&read(path)?))
}
