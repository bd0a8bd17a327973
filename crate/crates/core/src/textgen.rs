//! Synthetic text lines from the embedded bitmap font, training datasets,
//! watermark and text-edge masks, watermark pasting, and confusable-pair
//! mining.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::Charset;
use crate::error::{invalid, Error, Result};
use crate::font::GLYPHS;
use crate::imaging::{erode, pgm, Image};

pub use crate::imaging::Mask;

/// Height of every rendered text line.
pub const LINE_HEIGHT: usize = 32;
/// Text/background threshold.
pub const DEFAULT_TAU: f64 = 0.5;
/// Gray level of a pasted watermark.
pub const DEFAULT_LAMBDA: f64 = 0.3;

const GLYPH_COLS: usize = 5;
const GLYPH_ROWS: usize = 7;

/// 5x7 glyph bitmaps drawn at an integer scale, with `pad` blank pixels on
/// either side of every glyph cell.
#[derive(Clone, Debug)]
pub struct FontAtlas {
    glyphs: HashMap<char, [u8; 7]>,
    scale: usize,
    pad: usize,
}

impl Default for FontAtlas {
    fn default() -> Self {
        Self::with_scale(4)
    }
}

impl FontAtlas {
    pub fn with_scale(scale: usize) -> Self {
        Self {
            glyphs: GLYPHS.iter().copied().collect(),
            scale: scale.max(1),
            pad: 2,
        }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn glyph_width(&self) -> usize {
        GLYPH_COLS * self.scale
    }

    pub fn glyph_height(&self) -> usize {
        GLYPH_ROWS * self.scale
    }

    /// Horizontal advance per character.
    pub fn cell_width(&self) -> usize {
        self.glyph_width() + 2 * self.pad
    }

    pub fn has_glyph(&self, c: char) -> bool {
        self.glyphs.contains_key(&c)
    }

    /// Unscaled 5x7 bitmap, row-major.
    pub fn bitmap(&self, c: char) -> Result<[bool; 35]> {
        let rows = self.glyphs.get(&c).ok_or(Error::UnknownCharacter(c))?;
        let mut out = [false; 35];
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_COLS {
                out[r * GLYPH_COLS + col] = bits & (1 << (GLYPH_COLS - 1 - col)) != 0;
            }
        }
        Ok(out)
    }

    /// Scaled coverage of `text` laid out cell by cell, as
    /// `(height, width, data)` with no vertical margin.
    fn coverage(&self, text: &str) -> Result<(usize, usize, Vec<bool>)> {
        let chars: Vec<char> = text.chars().collect();
        let (gh, cw) = (self.glyph_height(), self.cell_width());
        let w = cw * chars.len();
        let mut data = vec![false; gh * w];
        for (i, &c) in chars.iter().enumerate() {
            let bm = self.bitmap(c)?;
            let x0 = i * cw + self.pad;
            for y in 0..gh {
                for x in 0..self.glyph_width() {
                    if bm[(y / self.scale) * GLYPH_COLS + x / self.scale] {
                        data[y * w + x0 + x] = true;
                    }
                }
            }
        }
        Ok((gh, w, data))
    }
}

/// One line of text to render.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSpec {
    pub text: String,
    pub foreground: f64,
    pub background: f64,
    /// When set: a baseline shift in `{-1, 0, 1}` px and gray jitter of up to
    /// 0.05 on both foreground and background.
    pub jitter_seed: Option<u64>,
}

impl LineSpec {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            foreground: 0.0,
            background: 1.0,
            jitter_seed: None,
        }
    }

    pub fn jittered(text: impl Into<String>, seed: u64) -> Self {
        Self {
            jitter_seed: Some(seed),
            ..Self::new(text)
        }
    }
}

/// Width of a rendered line: the cell advance sum rounded up to a multiple of 4.
pub fn line_width(text: &str, atlas: &FontAtlas) -> usize {
    (text.chars().count() * atlas.cell_width()).div_ceil(4) * 4
}

/// Renders a 32-px-high line of dark text on a light ground.
pub fn render_line(spec: &LineSpec, atlas: &FontAtlas) -> Result<Image> {
    if spec.text.is_empty() {
        return Err(invalid("cannot render empty text"));
    }
    if !(spec.foreground < spec.background) {
        return Err(invalid("foreground must be darker than background"));
    }
    if atlas.glyph_height() + 2 > LINE_HEIGHT {
        return Err(invalid(format!("glyph scale {} is too tall for a text line", atlas.scale)));
    }
    let (mut fg, mut bg, mut shift) = (spec.foreground, spec.background, 0isize);
    if let Some(seed) = spec.jitter_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shift = rng.gen_range(-1..=1);
        fg = (fg + rng.gen_range(-0.05..=0.05)).clamp(0.0, 1.0);
        bg = (bg + rng.gen_range(-0.05..=0.05)).clamp(0.0, 1.0);
    }
    let (gh, gw, cov) = atlas.coverage(&spec.text)?;
    let width = line_width(&spec.text, atlas);
    let top = ((LINE_HEIGHT - gh) / 2) as isize + shift;
    let mut data = vec![bg; LINE_HEIGHT * width];
    for y in 0..gh {
        let yy = (top + y as isize) as usize;
        for x in 0..gw {
            if cov[y * gw + x] {
                data[yy * width + x] = fg;
            }
        }
    }
    Image::new(LINE_HEIGHT, width, data)
}

/// Random strings over `charset` with lengths in `[min_len, max_len]`.
/// Spaces never lead, trail, or repeat, since they would be invisible or
/// ambiguous in the rendered line.
pub fn random_strings(charset: &Charset, count: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible: Vec<char> = charset.chars().iter().copied().filter(|&c| c != ' ').collect();
    let has_space = charset.contains(' ');
    (0..count)
        .map(|_| {
            let n = rng.gen_range(min_len..=max_len.max(min_len));
            let mut s = String::with_capacity(n);
            let mut prev_space = true;
            for i in 0..n {
                let edge = i == 0 || i + 1 == n;
                let c = if has_space && !edge && !prev_space && rng.gen_range(0..charset.len()) == 0 {
                    ' '
                } else {
                    visible[rng.gen_range(0..visible.len())]
                };
                prev_space = c == ' ';
                s.push(c);
            }
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub text: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    file: String,
    text: String,
    split: Split,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn hash_str(s: &str) -> u64 {
    fnv1a(s.bytes())
}

/// Renders `count` jittered lines cycling through `corpus`. Item `i` uses
/// jitter seed `seed ^ i`. The tenth of items with the smallest
/// `hash(text, seed)` (ties by index) forms the validation split.
pub fn build_dataset(corpus: &[String], count: usize, seed: u64, atlas: &FontAtlas) -> Result<Dataset> {
    if corpus.is_empty() {
        return Err(invalid("dataset corpus is empty"));
    }
    let texts: Vec<&String> = (0..count).map(|i| &corpus[i % corpus.len()]).collect();
    let mut order: Vec<(u64, usize)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| (fnv1a(t.bytes().chain(seed.to_le_bytes())), i))
        .collect();
    order.sort_unstable();
    let mut split = vec![Split::Train; count];
    for &(_, i) in order.iter().take(count / 10) {
        split[i] = Split::Val;
    }
    let samples = texts
        .iter()
        .zip(split)
        .enumerate()
        .map(|(i, (text, split))| {
            let image = render_line(&LineSpec::jittered(text.as_str(), seed ^ i as u64), atlas)?;
            Ok(Sample {
                image,
                text: (*text).clone(),
                split,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == which)
    }

    /// Writes `NNNNNN.pgm` files plus `manifest.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
        for (i, s) in self.samples.iter().enumerate() {
            let file = format!("{i:06}.pgm");
            pgm::write(dir.join(&file), &s.image)?;
            let line = ManifestLine {
                file,
                text: s.text.clone(),
                split: s.split,
            };
            serde_json::to_writer(&mut manifest, &line)?;
            manifest.write_all(b"\n")?;
        }
        manifest.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let reader = BufReader::new(File::open(dir.join("manifest.jsonl"))?);
        let mut samples = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestLine = serde_json::from_str(&line)?;
            samples.push(Sample {
                image: pgm::read(dir.join(&entry.file))?,
                text: entry.text,
                split: entry.split,
            });
        }
        Ok(Self { samples })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    Center,
    /// Top-left corner of the watermark's glyph cells.
    TopLeft { y: usize, x: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatermarkSpec {
    pub text: String,
    pub scale: usize,
    pub anchor: Anchor,
    /// Pixels of 3x3 dilation applied to the glyph coverage.
    pub dilation: usize,
}

impl Default for WatermarkSpec {
    fn default() -> Self {
        Self {
            text: "DRAFT".into(),
            scale: 4,
            anchor: Anchor::Center,
            dilation: 1,
        }
    }
}

/// Binary region covered by the rendered watermark text, dilated so thin
/// strokes connect.
pub fn watermark_mask(spec: &WatermarkSpec, height: usize, width: usize) -> Result<Mask> {
    if spec.text.is_empty() {
        return Err(invalid("watermark text is empty"));
    }
    let atlas = FontAtlas::with_scale(spec.scale);
    let (gh, gw, cov) = atlas.coverage(&spec.text)?;
    let d = spec.dilation;
    let (need_h, need_w) = (gh + 2 * d, gw);
    let fits = |oy: usize, ox: usize| oy >= d && oy + gh + d <= height && ox + gw <= width;
    let (oy, ox) = match spec.anchor {
        Anchor::Center if need_h <= height && need_w <= width => ((height - gh) / 2, (width - gw) / 2),
        Anchor::TopLeft { y, x } if fits(y, x) => (y, x),
        _ => {
            return Err(Error::WatermarkDoesNotFit {
                needed_height: need_h,
                needed_width: need_w,
                height,
                width,
            })
        }
    };
    let mut mask = Mask::empty(height, width);
    for y in 0..gh {
        for x in 0..gw {
            if cov[y * gw + x] {
                mask.set(oy + y, ox + x, true);
            }
        }
    }
    for _ in 0..d {
        mask = dilate3x3(&mask);
    }
    Ok(mask)
}

fn dilate3x3(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    let mut out = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            let hit = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| mask.get(yy, xx)));
            out.set(y, x, hit);
        }
    }
    out
}

/// One-pixel shell around dark strokes: pixels whose 3x3 erosion is at or
/// below `tau` while the pixel itself is above it.
pub fn edge_mask(image: &Image, tau: f64) -> Result<Mask> {
    let eroded = erode(image, 3, 3)?;
    let (h, w) = image.dims();
    let data = image
        .data()
        .iter()
        .zip(eroded.data())
        .map(|(&v, &e)| e <= tau && v > tau)
        .collect();
    let mask = Mask::new(h, w, data)?;
    mask.require_nonempty()?;
    Ok(mask)
}

/// Sets background pixels (above `tau`) inside the mask to gray `lambda`;
/// text pixels and everything outside the mask are untouched.
pub fn paste_watermark(image: &Image, mask: &Mask, lambda: f64, tau: f64) -> Result<Image> {
    mask.check_dims(image)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid(format!("watermark gray {lambda} outside (0, 1)")));
    }
    let data = image
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m && v > tau { lambda } else { v })
        .collect();
    Image::new(image.height(), image.width(), data)
}

/// `1 - hamming / 35` between two glyph bitmaps.
pub fn glyph_similarity(atlas: &FontAtlas, a: char, b: char) -> Result<f64> {
    let (x, y) = (atlas.bitmap(a)?, atlas.bitmap(b)?);
    let diff = x.iter().zip(&y).filter(|(p, q)| p != q).count();
    Ok(1.0 - diff as f64 / 35.0)
}

/// Character pairs whose glyphs are more similar than `threshold`, most
/// similar first (ties in charset order).
pub fn mine_confusable_pairs(charset: &Charset, atlas: &FontAtlas, threshold: f64) -> Result<Vec<(char, char, f64)>> {
    if charset.len() < 2 {
        return Err(invalid("need at least two characters to mine pairs"));
    }
    let chars = charset.chars();
    let mut pairs = Vec::new();
    for i in 0..chars.len() {
        for j in i + 1..chars.len() {
            let s = glyph_similarity(atlas, chars[i], chars[j])?;
            if s > threshold {
                pairs.push((i, j, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    Ok(pairs.into_iter().map(|(i, j, s)| (chars[i], chars[j], s)).collect())
}
