//! Targeted gradient-sign attacks on the recognizer.
//!
//! Every variant runs through one constrained iteration: take the CTC loss
//! toward the target string, accumulate (optionally momentum-normalized)
//! gradients, step *against* the gradient by `alpha` on the masked pixels,
//! project back into the L-inf ball of radius `epsilon` around the start
//! image, and clamp to `[0, 1]`. The loop stops as soon as the greedy decode
//! equals the target.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctc::min_steps;
use crate::error::{invalid, Error, Result};
use crate::imaging::{pgm, quality_report, Image, Mask, QualityReport};
use crate::model::{Decoder, ModelWeights};
use crate::tensor::sign;
use crate::textgen::{edge_mask, paste_watermark, watermark_mask, Anchor, WatermarkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "FGSM")]
    Fgsm,
    #[serde(rename = "BIM")]
    Bim,
    #[serde(rename = "MIM")]
    Mim,
    #[serde(rename = "WM")]
    Wm,
    #[serde(rename = "WM-init")]
    WmInit,
    #[serde(rename = "WM-neg")]
    WmNeg,
    #[serde(rename = "WM-edge")]
    WmEdge,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Fgsm,
        Variant::Bim,
        Variant::Mim,
        Variant::Wm,
        Variant::WmInit,
        Variant::WmNeg,
        Variant::WmEdge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fgsm => "FGSM",
            Variant::Bim => "BIM",
            Variant::Mim => "MIM",
            Variant::Wm => "WM",
            Variant::WmInit => "WM-init",
            Variant::WmNeg => "WM-neg",
            Variant::WmEdge => "WM-edge",
        }
    }

    /// Variants whose perturbation is confined to a watermark-shaped mask.
    pub fn is_watermark(self) -> bool {
        matches!(self, Variant::Wm | Variant::WmInit | Variant::WmNeg | Variant::WmEdge)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "fgsm" => Variant::Fgsm,
            "bim" => Variant::Bim,
            "mim" => Variant::Mim,
            "wm" | "watermark" => Variant::Wm,
            "wminit" => Variant::WmInit,
            "wmneg" => Variant::WmNeg,
            "wmedge" => Variant::WmEdge,
            _ => return Err(invalid(format!("unknown attack variant {s:?}"))),
        })
    }
}

/// Attack parameters. `alpha = None` means `epsilon / iterations`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub variant: Variant,
    pub epsilon: f64,
    pub iterations: usize,
    pub alpha: Option<f64>,
    /// Momentum decay.
    pub mu: f64,
    /// Norm order used to normalize each gradient before it enters the
    /// momentum buffer (`f64::INFINITY` for the max norm).
    pub norm_p: f64,
    pub watermark: WatermarkSpec,
    /// Gray level of the pasted watermark.
    pub lambda: f64,
    /// Text/background threshold.
    pub tau: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Wm,
            epsilon: 0.2,
            iterations: 1000,
            alpha: None,
            mu: 1.0,
            norm_p: 1.0,
            watermark: WatermarkSpec::default(),
            lambda: crate::textgen::DEFAULT_LAMBDA,
            tau: crate::textgen::DEFAULT_TAU,
        }
    }
}

impl AttackConfig {
    pub fn step_size(&self) -> f64 {
        self.alpha.unwrap_or(if self.iterations == 0 {
            0.0
        } else {
            self.epsilon / self.iterations as f64
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        // WM-init with zero iterations is the paste-only baseline.
        if self.iterations == 0 && self.variant != Variant::WmInit {
            return Err(invalid("iterations must be at least 1"));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) {
                return Err(invalid("alpha must be positive"));
            }
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(invalid("mu must be a finite non-negative number"));
        }
        if !(self.norm_p >= 1.0) {
            return Err(invalid("norm order p must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) || !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("lambda and tau must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. Blank lines and `#` comments are
    /// ignored; unknown keys are errors. Keys: `variant`, `epsilon`,
    /// `iterations`, `alpha`, `mu`, `p`, `lambda`, `tau`, `watermark_text`,
    /// `watermark_scale`, `watermark_dilation`, `watermark_anchor`
    /// (`center` or `Y,X`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| invalid(format!("line {}: bad {what} value {value:?}", n + 1));
            let float = || value.parse::<f64>().map_err(|_| bad(key));
            let int = || value.parse::<usize>().map_err(|_| bad(key));
            match key {
                "variant" => cfg.variant = value.parse()?,
                "epsilon" => cfg.epsilon = float()?,
                "iterations" => cfg.iterations = int()?,
                "alpha" => cfg.alpha = if value == "auto" { None } else { Some(float()?) },
                "mu" => cfg.mu = float()?,
                "p" => cfg.norm_p = if value == "inf" { f64::INFINITY } else { float()? },
                "lambda" => cfg.lambda = float()?,
                "tau" => cfg.tau = float()?,
                "watermark_text" => cfg.watermark.text = value.to_string(),
                "watermark_scale" => cfg.watermark.scale = int()?,
                "watermark_dilation" => cfg.watermark.dilation = int()?,
                "watermark_anchor" => {
                    cfg.watermark.anchor = if value.eq_ignore_ascii_case("center") {
                        Anchor::Center
                    } else {
                        let (y, x) = value.split_once(',').ok_or_else(|| bad(key))?;
                        Anchor::TopLeft {
                            y: y.trim().parse().map_err(|_| bad(key))?,
                            x: x.trim().parse().map_err(|_| bad(key))?,
                        }
                    }
                }
                _ => return Err(invalid(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Inverse of [`Self::parse`].
    pub fn to_kv(&self) -> String {
        let anchor = match self.watermark.anchor {
            Anchor::Center => "center".to_string(),
            Anchor::TopLeft { y, x } => format!("{y},{x}"),
        };
        let alpha = self.alpha.map_or("auto".to_string(), |a| a.to_string());
        let p = if self.norm_p.is_infinite() {
            "inf".to_string()
        } else {
            self.norm_p.to_string()
        };
        format!(
            "variant = {}\nepsilon = {}\niterations = {}\nalpha = {alpha}\nmu = {}\np = {p}\nlambda = {}\ntau = {}\n\
             watermark_text = {}\nwatermark_scale = {}\nwatermark_dilation = {}\nwatermark_anchor = {anchor}\n",
            self.variant,
            self.epsilon,
            self.iterations,
            self.mu,
            self.lambda,
            self.tau,
            self.watermark.text,
            self.watermark.scale,
            self.watermark.dilation,
        )
    }
}

/// How the raw gradient becomes a step direction.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Direction {
    /// `sign(grad)`.
    Plain,
    /// `sign(g)` with `g <- mu * g + grad / ||grad||_p`.
    Momentum { mu: f64, p: f64 },
}

#[derive(Clone, Debug)]
struct Engine<'a> {
    epsilon: f64,
    alpha: f64,
    iterations: usize,
    direction: Direction,
    /// Keep only steps that darken pixels.
    darken_only: bool,
    mask: Option<&'a Mask>,
}

/// Output of the iteration loop.
#[derive(Clone, Debug)]
struct Trajectory {
    best: Image,
    best_decode: Vec<usize>,
    success: bool,
    steps: usize,
    losses: Vec<f64>,
}

fn p_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

impl Engine<'_> {
    /// Iterates from `start`. The loss trace holds one entry per evaluated
    /// iterate. On success the successful iterate is returned; otherwise the
    /// lowest-loss iterate after the first step (or `start` when no step was
    /// taken).
    fn run(&self, model: &ModelWeights, start: &Image, target: &[usize]) -> Result<Trajectory> {
        let (h, w) = start.dims();
        if let Some(m) = self.mask {
            m.check_dims(start)?;
            m.require_nonempty()?;
        }
        let x0 = start.data();
        let mut x = x0.to_vec();
        let mut momentum = vec![0.0; x.len()];
        let mut losses = Vec::with_capacity(self.iterations + 1);
        let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;

        let mut i = 0;
        loop {
            let img = Image::new(h, w, x.clone())?;
            let (loss, grad, decoded) = model.loss_gradient_and_decode(&img, target)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("attack loss at iteration {i}")));
            }
            losses.push(loss);
            if decoded == target {
                return Ok(Trajectory {
                    best: img,
                    best_decode: decoded,
                    success: true,
                    steps: i,
                    losses,
                });
            }
            if (i > 0 || self.iterations == 0) && best.as_ref().map_or(true, |b| loss < b.0) {
                best = Some((loss, x.clone(), decoded));
            }
            if i == self.iterations {
                break;
            }

            let g = grad.data();
            if let Direction::Momentum { mu, p } = self.direction {
                let norm = p_norm(g, p);
                for (m, gv) in momentum.iter_mut().zip(g) {
                    *m = mu * *m + if norm > 0.0 { gv / norm } else { 0.0 };
                }
            }
            let dir: &[f64] = match self.direction {
                Direction::Plain => g,
                Direction::Momentum { .. } => &momentum,
            };
            for (j, xv) in x.iter_mut().enumerate() {
                if self.mask.is_some_and(|m| !m.data()[j]) {
                    continue;
                }
                let mut step = -self.alpha * sign(dir[j]);
                if self.darken_only {
                    step = step.min(0.0);
                }
                if step == 0.0 {
                    continue;
                }
                let delta = (*xv + step - x0[j]).clamp(-self.epsilon, self.epsilon);
                *xv = (x0[j] + delta).clamp(0.0, 1.0);
            }
            i += 1;
        }
        let (_, data, decode) = best.expect("at least one iterate is evaluated");
        Ok(Trajectory {
            best: Image::new(h, w, data)?,
            best_decode: decode,
            success: false,
            steps: self.iterations,
            losses,
        })
    }
}

/// Result of one attack run.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub variant: Variant,
    pub original: Image,
    /// Iteration start: the clean image, or the watermark-pasted image for WM-init.
    pub start: Image,
    pub adversarial: Image,
    /// Pixels the attack was allowed to modify.
    pub mask: Mask,
    pub source_text: String,
    pub target_text: String,
    pub clean_prediction: String,
    pub prediction: String,
    pub iterations: usize,
    pub time_s: f64,
    pub quality: QualityReport,
    pub loss_trace: Vec<f64>,
}

impl AttackResult {
    /// `f(x') = t`.
    pub fn targeted_success(&self) -> bool {
        self.prediction == self.target_text
    }

    /// `f(x') != f(x)`.
    pub fn output_changed(&self) -> bool {
        self.prediction != self.clean_prediction
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            variant: self.variant,
            source_text: self.source_text.clone(),
            target_text: self.target_text.clone(),
            clean_prediction: self.clean_prediction.clone(),
            prediction: self.prediction.clone(),
            targeted_success: self.targeted_success(),
            untargeted_success: self.output_changed(),
            iterations: self.iterations,
            time_s: self.time_s,
            quality: self.quality,
            loss_trace: self.loss_trace.clone(),
            defense: None,
        }
    }

    /// Writes `<stem>.pgm` (adversarial), `<stem>.orig.pgm`,
    /// `<stem>.mask.pgm` and `<stem>.json`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        pgm::write(dir.join(format!("{stem}.pgm")), &self.adversarial)?;
        pgm::write(dir.join(format!("{stem}.orig.pgm")), &self.original)?;
        pgm::write_mask(dir.join(format!("{stem}.mask.pgm")), &self.mask)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}

/// JSON record stored next to every adversarial image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub variant: Variant,
    pub source_text: String,
    pub target_text: String,
    pub clean_prediction: String,
    pub prediction: String,
    pub targeted_success: bool,
    pub untargeted_success: bool,
    pub iterations: usize,
    pub time_s: f64,
    pub quality: QualityReport,
    pub loss_trace: Vec<f64>,
    /// Set when the image was post-processed by a defense after the attack;
    /// the predictions then describe the undefended image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<String>,
}

/// Running minimum of a loss trace.
pub fn best_so_far(trace: &[f64]) -> Vec<f64> {
    trace
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect()
}

fn encode_target(model: &ModelWeights, image: &Image, target: &str) -> Result<Vec<usize>> {
    let labels = model.charset().encode(target)?;
    let steps = ModelWeights::steps_for_width(image.width());
    if min_steps(&labels) > steps {
        return Err(Error::InfeasibleTarget {
            target_len: labels.len(),
            steps,
        });
    }
    Ok(labels)
}

/// One signed step of size `epsilon` against the gradient.
pub fn fgsm(model: &ModelWeights, x: &Image, target: &str, epsilon: f64) -> Result<AttackResult> {
    let cfg = AttackConfig {
        variant: Variant::Fgsm,
        epsilon,
        ..AttackConfig::default()
    };
    run_attack(model, x, target, &cfg)
}

pub fn bim(model: &ModelWeights, x: &Image, target: &str, epsilon: f64, iterations: usize, alpha: f64) -> Result<AttackResult> {
    let cfg = AttackConfig {
        variant: Variant::Bim,
        epsilon,
        iterations,
        alpha: Some(alpha),
        ..AttackConfig::default()
    };
    run_attack(model, x, target, &cfg)
}

pub fn mim(model: &ModelWeights, x: &Image, target: &str, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, x, target, &AttackConfig { variant: Variant::Mim, ..config.clone() })
}

/// Momentum attack whose updates are confined to `mask`.
pub fn wm_attack(model: &ModelWeights, x: &Image, target: &str, mask: &Mask, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let labels = encode_target(model, x, target)?;
    attack_with(model, x, x.clone(), mask.clone(), target, &labels, config, Variant::Wm, false)
}

/// Mask used by `variant` on `x`: the full image for the classic attacks,
/// the watermark region, or the text-edge shell.
pub fn attack_mask(variant: Variant, x: &Image, config: &AttackConfig) -> Result<Mask> {
    match variant {
        Variant::Fgsm | Variant::Bim | Variant::Mim => Ok(Mask::full(x.height(), x.width())),
        Variant::Wm | Variant::WmInit | Variant::WmNeg => watermark_mask(&config.watermark, x.height(), x.width()),
        Variant::WmEdge => edge_mask(x, config.tau),
    }
}

/// Runs `config.variant` against `x` toward the `target` transcription.
pub fn run_attack(model: &ModelWeights, x: &Image, target: &str, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let labels = encode_target(model, x, target)?;
    let variant = config.variant;
    let mask = attack_mask(variant, x, config)?;
    let start = if variant == Variant::WmInit {
        paste_watermark(x, &mask, config.lambda, config.tau)?
    } else {
        x.clone()
    };
    attack_with(model, x, start, mask, target, &labels, config, variant, variant == Variant::WmNeg)
}

#[allow(clippy::too_many_arguments)]
fn attack_with(
    model: &ModelWeights,
    x: &Image,
    start: Image,
    mask: Mask,
    target: &str,
    labels: &[usize],
    config: &AttackConfig,
    variant: Variant,
    darken_only: bool,
) -> Result<AttackResult> {
    let timer = Instant::now();
    let clean_prediction = model.recognize(x, Decoder::Greedy)?;
    let (iterations, alpha, direction) = match variant {
        Variant::Fgsm => (1, config.epsilon, Direction::Plain),
        Variant::Bim => (config.iterations, config.step_size(), Direction::Plain),
        _ => (
            config.iterations,
            config.step_size(),
            Direction::Momentum {
                mu: config.mu,
                p: config.norm_p,
            },
        ),
    };
    let full = variant.is_watermark().then_some(&mask);
    let engine = Engine {
        epsilon: config.epsilon,
        alpha,
        iterations,
        direction,
        darken_only,
        mask: full,
    };
    let traj = engine.run(model, &start, labels)?;
    let time_s = timer.elapsed().as_secs_f64();
    Ok(AttackResult {
        variant,
        quality: quality_report(x, &traj.best)?,
        original: x.clone(),
        start,
        prediction: model.charset().decode(&traj.best_decode),
        adversarial: traj.best,
        mask,
        source_text: String::new(),
        target_text: target.to_string(),
        clean_prediction,
        iterations: traj.steps,
        time_s,
        loss_trace: traj.losses,
    })
    .map(|mut r| {
        debug_assert_eq!(traj.success, r.targeted_success());
        r.source_text = r.clean_prediction.clone();
        r
    })
}
