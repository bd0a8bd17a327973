//! Flat `key = value` files for training runs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use wmocr_core::model::TrainConfig;
use wmocr_core::Charset;

/// Everything `train` needs: which data to synthesize and how to optimize.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainJob {
    pub charset: Charset,
    pub samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub data_seed: u64,
    pub hp: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            charset: Charset::compact(),
            samples: 20_000,
            min_len: 1,
            max_len: 10,
            data_seed: 1,
            hp: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

/// `compact`, `alphanumeric`, or a literal list of characters.
pub fn parse_charset(value: &str) -> Result<Charset> {
    Ok(match value {
        "compact" => Charset::compact(),
        "alphanumeric" => Charset::alphanumeric(),
        literal => Charset::new(literal.trim_matches('"'))?,
    })
}

impl TrainJob {
    /// Keys: `charset`, `samples`, `min_len`, `max_len`, `data_seed`, `seed`,
    /// `learning_rate`, `momentum`, `batch_size`, `max_epochs`,
    /// `halve_every`, `target_accuracy`, `clip_norm` (`none` disables).
    pub fn parse(text: &str) -> Result<Self> {
        let mut job = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: bad value for {key}: {value:?}", n + 1);
            match key {
                "charset" => job.charset = parse_charset(value).with_context(ctx)?,
                "samples" => job.samples = value.parse().with_context(ctx)?,
                "min_len" => job.min_len = value.parse().with_context(ctx)?,
                "max_len" => job.max_len = value.parse().with_context(ctx)?,
                "data_seed" => job.data_seed = value.parse().with_context(ctx)?,
                "seed" => job.hp.seed = value.parse().with_context(ctx)?,
                "learning_rate" => job.hp.learning_rate = value.parse().with_context(ctx)?,
                "momentum" => job.hp.momentum = value.parse().with_context(ctx)?,
                "batch_size" => job.hp.batch_size = value.parse().with_context(ctx)?,
                "max_epochs" => job.hp.max_epochs = value.parse().with_context(ctx)?,
                "halve_every" => job.hp.halve_every = value.parse().with_context(ctx)?,
                "target_accuracy" => job.hp.target_accuracy = value.parse().with_context(ctx)?,
                "clip_norm" => {
                    job.hp.clip_norm = if value == "none" {
                        None
                    } else {
                        Some(value.parse().with_context(ctx)?)
                    }
                }
                _ => bail!("line {}: unknown key {key:?}", n + 1),
            }
        }
        if job.min_len == 0 || job.min_len > job.max_len {
            bail!("need 1 <= min_len <= max_len");
        }
        Ok(job)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
