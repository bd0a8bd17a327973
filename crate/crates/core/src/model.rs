//! The micro text-line recognizer: two conv blocks feeding a per-column dense
//! layer that emits one softmax row per 4-pixel column.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::charset::Charset;
use crate::ctc::{beam_decode, ctc_grad, ctc_loss, greedy_decode, min_steps, LogProbMatrix};
use crate::error::{invalid, Error, Result};
use crate::imaging::Image;
use crate::tensor::{
    conv2d, conv2d_backward_parts, dense, dense_backward, maxpool2x2, maxpool_backward, relu, relu_backward, Pooled,
    Tensor,
};
use crate::textgen::{hash_str, Dataset, Split};

const CONV_BIAS_INIT: f64 = 0.1;

/// Architecture and identity of a recognizer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub charset: String,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(charset: &Charset, seed: u64) -> Self {
        Self {
            height: 32,
            conv1_filters: 8,
            conv2_filters: 16,
            charset: charset.as_string(),
            seed,
        }
    }

    /// Width of the per-column feature vector fed to the dense layer.
    pub fn column_features(&self) -> usize {
        (self.height / 4) * self.conv2_filters
    }

    fn validate(&self) -> Result<Charset> {
        if self.height == 0 || self.height % 4 != 0 {
            return Err(invalid(format!("input height {} must be a positive multiple of 4", self.height)));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 {
            return Err(invalid("conv blocks need at least one filter"));
        }
        Charset::new(&self.charset)
    }

    /// Hash of the architecture and seed (the charset is hashed separately).
    pub fn hash(&self) -> u64 {
        hash_str(&format!(
            "h={};c1={};c2={};seed={}",
            self.height, self.conv1_filters, self.conv2_filters, self.seed
        ))
    }
}

/// Learned parameters plus training provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    charset: Charset,
    /// conv1 kernels, conv1 bias, conv2 kernels, conv2 bias, dense matrix, dense bias.
    params: Vec<Tensor>,
    pub epochs: usize,
    pub val_accuracy: f64,
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    input: Tensor,
    conv1: Tensor,
    pool1: Pooled,
    conv2: Tensor,
    pool2: Pooled,
    features: Tensor,
    logits: Tensor,
}

/// How per-timestep outputs are turned into a label sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoder {
    Greedy,
    Beam(usize),
}

impl ModelWeights {
    /// Seeded He-normal initialization. Conv biases start slightly positive
    /// so blank regions still produce nonzero features.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let charset = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c1, c2, d, k) = (
            config.conv1_filters,
            config.conv2_filters,
            config.column_features(),
            charset.len() + 1,
        );
        let mut he = |shape: Vec<usize>, fan_in: usize| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| normal.sample(&mut rng)).collect()).expect("finite")
        };
        let params = vec![
            he(vec![3, 3, 1, c1], 9),
            Tensor::filled(vec![c1], CONV_BIAS_INIT),
            he(vec![3, 3, c1, c2], 9 * c1),
            Tensor::filled(vec![c2], CONV_BIAS_INIT),
            he(vec![d, k], d),
            Tensor::zeros(vec![k]),
        ];
        Ok(Self {
            config,
            charset,
            params,
            epochs: 0,
            val_accuracy: 0.0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn charset(&self) -> &Charset {
        &self.charset
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn classes(&self) -> usize {
        self.charset.len() + 1
    }

    /// Number of output timesteps for an input of the given width.
    pub fn steps_for_width(width: usize) -> usize {
        width / 4
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let (h, w) = image.dims();
        if h != self.config.height || w == 0 || w % 4 != 0 {
            return Err(invalid(format!(
                "image must be {} px high with a width divisible by 4, got {h}x{w}",
                self.config.height
            )));
        }
        Ok(())
    }

    fn trace(&self, image: &Image) -> Result<Trace> {
        self.check_image(image)?;
        let (h, w) = image.dims();
        let p = &self.params;
        // The network sees ink density, so the white background is zero.
        let input = Tensor::new(vec![h, w, 1], image.data().iter().map(|v| 1.0 - v).collect())?;
        let conv1 = conv2d(&input, &p[0], &p[1])?;
        let pool1 = maxpool2x2(&relu(&conv1))?;
        let conv2 = conv2d(&pool1.output, &p[2], &p[3])?;
        let pool2 = maxpool2x2(&relu(&conv2))?;
        let features = columns_to_rows(&pool2.output)?;
        let logits = dense(&features, &p[4], &p[5])?;
        Ok(Trace {
            input,
            conv1,
            pool1,
            conv2,
            pool2,
            features,
            logits,
        })
    }

    /// Per-timestep log-probabilities, `width / 4` rows.
    pub fn forward(&self, image: &Image) -> Result<LogProbMatrix> {
        LogProbMatrix::from_logits(&self.trace(image)?.logits)
    }

    /// Backpropagates logit gradients. Returns the input gradient (when
    /// asked) and the parameter gradients (when asked), in parameter order.
    fn backward(
        &self,
        trace: &Trace,
        dlogits: Tensor,
        want_input: bool,
        want_params: bool,
    ) -> Result<(Option<Tensor>, Option<Vec<Tensor>>)> {
        let p = &self.params;
        let dense_g = dense_backward(&trace.features, &p[4], &dlogits)?;
        let dpool2 = rows_to_columns(&dense_g.input, trace.pool2.output.shape())?;
        let drelu2 = maxpool_backward(trace.conv2.shape(), &trace.pool2, &dpool2)?;
        let dconv2 = relu_backward(&trace.conv2, &drelu2)?;
        let (dpool1, g2) = conv2d_backward_parts(&trace.pool1.output, &p[2], &dconv2, true, want_params)?;
        let drelu1 = maxpool_backward(trace.conv1.shape(), &trace.pool1, &dpool1.expect("requested"))?;
        let dconv1 = relu_backward(&trace.conv1, &drelu1)?;
        let (dinput, g1) = conv2d_backward_parts(&trace.input, &p[0], &dconv1, want_input, want_params)?;
        let params = if want_params {
            let (k1, b1) = g1.expect("requested");
            let (k2, b2) = g2.expect("requested");
            let mut dp = dense_g.params.into_iter();
            let (dw, db) = (dp.next().expect("dense weight"), dp.next().expect("dense bias"));
            Some(vec![k1, b1, k2, b2, dw, db])
        } else {
            None
        };
        Ok((dinput, params))
    }

    fn target_loss_grad(&self, trace: &Trace, target: &[usize]) -> Result<(f64, Tensor)> {
        let y = LogProbMatrix::from_logits(&trace.logits)?;
        let (loss, g) = ctc_grad(&y, target)?;
        Ok((loss, Tensor::new(trace.logits.shape().to_vec(), g)?))
    }

    /// CTC loss toward `target` and its gradient with respect to every input
    /// pixel, shaped `[height, width]`.
    pub fn loss_and_input_gradient(&self, image: &Image, target: &[usize]) -> Result<(f64, Tensor)> {
        self.loss_gradient_and_decode(image, target).map(|(l, g, _)| (l, g))
    }

    /// Like [`Self::loss_and_input_gradient`], also returning the greedy
    /// decode of the same forward pass.
    pub fn loss_gradient_and_decode(&self, image: &Image, target: &[usize]) -> Result<(f64, Tensor, Vec<usize>)> {
        let trace = self.trace(image)?;
        let (loss, dlogits) = self.target_loss_grad(&trace, target)?;
        let decoded = greedy_decode(&LogProbMatrix::from_logits(&trace.logits)?);
        let (dinput, _) = self.backward(&trace, dlogits, true, false)?;
        let mut g = dinput.expect("requested").reshape(vec![image.height(), image.width()])?;
        g.data_mut().iter_mut().for_each(|v| *v = -*v);
        Ok((loss, g, decoded))
    }

    /// CTC loss without a gradient; `+inf` for an infeasible target.
    pub fn loss(&self, image: &Image, target: &[usize]) -> Result<f64> {
        ctc_loss(&self.forward(image)?, target)
    }

    fn param_gradients(&self, image: &Image, target: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let trace = self.trace(image)?;
        let (loss, dlogits) = self.target_loss_grad(&trace, target)?;
        let (_, params) = self.backward(&trace, dlogits, false, true)?;
        Ok((loss, params.expect("requested")))
    }

    pub fn decode_labels(&self, image: &Image, decoder: Decoder) -> Result<Vec<usize>> {
        let y = self.forward(image)?;
        match decoder {
            Decoder::Greedy => Ok(greedy_decode(&y)),
            Decoder::Beam(width) => beam_decode(&y, width),
        }
    }

    pub fn recognize(&self, image: &Image, decoder: Decoder) -> Result<String> {
        Ok(self.charset.decode(&self.decode_labels(image, decoder)?))
    }

    /// Fraction of samples whose greedy transcription matches exactly.
    pub fn sequence_accuracy<'a>(&self, samples: impl IntoIterator<Item = (&'a Image, &'a str)>) -> Result<f64> {
        let (mut hits, mut total) = (0usize, 0usize);
        for (image, text) in samples {
            total += 1;
            hits += (self.recognize(image, Decoder::Greedy)? == text) as usize;
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }
}

/// `[R, M, C]` pooled map to `[M, R*C]` rows, one per column.
fn columns_to_rows(t: &Tensor) -> Result<Tensor> {
    let (r, m, c) = match t.shape() {
        &[r, m, c] => (r, m, c),
        s => return Err(invalid(format!("expected a rank-3 map, got {s:?}"))),
    };
    let src = t.data();
    let mut out = vec![0.0; m * r * c];
    for row in 0..r {
        for col in 0..m {
            let s = (row * m + col) * c;
            let d = col * r * c + row * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(vec![m, r * c], out)
}

fn rows_to_columns(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (r, m, c) = (shape[0], shape[1], shape[2]);
    let src = t.data();
    let mut out = vec![0.0; r * m * c];
    for row in 0..r {
        for col in 0..m {
            let d = (row * m + col) * c;
            let s = col * r * c + row * c;
            out[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Optimizer settings and stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// The learning rate halves after every this many epochs.
    pub halve_every: usize,
    /// Stop once validation sequence accuracy reaches this value.
    pub target_accuracy: f64,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Seed for both initialization and shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 15,
            halve_every: 3,
            target_accuracy: 0.98,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

/// Per-epoch summary passed to the progress callback.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

/// Mini-batch SGD with momentum on the train split; validation accuracy is
/// measured on the val split after every epoch.
pub fn train(charset: &Charset, dataset: &Dataset, hp: &TrainConfig) -> Result<ModelWeights> {
    train_with_progress(charset, dataset, hp, |_| {})
}

pub fn train_with_progress(
    charset: &Charset,
    dataset: &Dataset,
    hp: &TrainConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<ModelWeights> {
    if hp.batch_size == 0 || !(hp.learning_rate > 0.0) || !(0.0..1.0).contains(&hp.momentum) {
        return Err(invalid("batch size and learning rate must be positive, momentum in [0, 1)"));
    }
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for s in &dataset.samples {
        let labels = charset.encode(&s.text)?;
        let steps = ModelWeights::steps_for_width(s.image.width());
        if min_steps(&labels) > steps {
            return Err(Error::InfeasibleTarget {
                target_len: labels.len(),
                steps,
            });
        }
        match s.split {
            Split::Train => train_set.push((&s.image, labels)),
            Split::Val => val_set.push((&s.image, s.text.as_str())),
        }
    }
    if train_set.is_empty() {
        return Err(invalid("training split is empty"));
    }

    let mut model = ModelWeights::init(ModelConfig::new(charset, hp.seed))?;
    let mut velocity: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed_0f_7a1);
    let mut lr = hp.learning_rate;

    for epoch in 0..hp.max_epochs {
        if epoch > 0 && hp.halve_every > 0 && epoch % hp.halve_every == 0 {
            lr *= 0.5;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(hp.batch_size).enumerate() {
            let mut grads: Vec<Tensor> = velocity.iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (image, labels) = &train_set[i];
                let (loss, g) = model.param_gradients(image, labels)?;
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(max) = hp.clip_norm {
                let norm = scale * grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > max {
                    scale *= max / norm;
                }
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = hp.momentum * *vv - lr * gv * scale;
                    *pv += *vv;
                }
            }
            if model.params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss,
                });
            }
        }
        let acc = model.sequence_accuracy(val_set.iter().map(|(i, t)| (*i, *t)))?;
        model.epochs = epoch + 1;
        model.val_accuracy = acc;
        let report = EpochReport {
            epoch: epoch + 1,
            learning_rate: lr,
            mean_loss: loss_sum / train_set.len() as f64,
            val_accuracy: acc,
        };
        log::info!(
            "epoch {} lr {:.5} loss {:.4} val acc {:.4}",
            report.epoch,
            report.learning_rate,
            report.mean_loss,
            report.val_accuracy
        );
        progress(&report);
        if acc >= hp.target_accuracy {
            break;
        }
    }
    Ok(model)
}

const MAGIC: &[u8; 3] = b"OMW";
const VERSION: u8 = b'1';

impl ModelWeights {
    /// Serializes to the `OMW1` binary format.
    ///
    /// Layout (little-endian): magic and version byte, config hash (u64),
    /// charset hash (u64), tensor count (u32), then per tensor its rank (u32),
    /// dims (u32 each) and raw f64 values, then a metadata block (height,
    /// filter counts, seed, epochs, validation accuracy bits, charset UTF-8),
    /// and finally a CRC32 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.config.hash().to_le_bytes());
        out.extend_from_slice(&hash_str(&self.config.charset).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for t in &self.params {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let c = &self.config;
        for v in [c.height, c.conv1_filters, c.conv2_filters] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(self.epochs as u32).to_le_bytes());
        out.extend_from_slice(&self.val_accuracy.to_bits().to_le_bytes());
        out.extend_from_slice(&(c.charset.len() as u32).to_le_bytes());
        out.extend_from_slice(c.charset.as_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::WeightsFormat(m.to_string());
        if bytes.len() < 4 || &bytes[..3] != MAGIC {
            return Err(fail("bad magic bytes"));
        }
        if bytes[3] != VERSION {
            return Err(Error::WeightsFormat(format!(
                "unsupported version tag {:?}, expected {:?}",
                bytes[3] as char, VERSION as char
            )));
        }
        if bytes.len() < 4 + 8 + 8 + 4 + 4 {
            return Err(fail("file is truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch (file is corrupted or truncated)"));
        }

        let mut r = Reader { buf: body, pos: 4 };
        let config_hash = r.u64()?;
        let charset_hash = r.u64()?;
        let count = r.u32()? as usize;
        if count != 6 {
            return Err(Error::WeightsFormat(format!("expected 6 tensors, found {count}")));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::WeightsFormat(format!("bad tensor rank {rank}")));
            }
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fail("tensor size overflows"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| fail("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(dims, data).map_err(|e| Error::WeightsFormat(e.to_string()))?);
        }
        let height = r.u32()? as usize;
        let conv1_filters = r.u32()? as usize;
        let conv2_filters = r.u32()? as usize;
        let seed = r.u64()?;
        let epochs = r.u32()? as usize;
        let val_accuracy = f64::from_bits(r.u64()?);
        let len = r.u32()? as usize;
        let charset_str = std::str::from_utf8(r.take(len)?)
            .map_err(|_| fail("charset is not UTF-8"))?
            .to_string();
        if r.pos != body.len() {
            return Err(fail("trailing bytes after metadata"));
        }
        let config = ModelConfig {
            height,
            conv1_filters,
            conv2_filters,
            charset: charset_str,
            seed,
        };
        if config.hash() != config_hash {
            return Err(fail("config hash does not match metadata"));
        }
        if hash_str(&config.charset) != charset_hash {
            return Err(fail("charset hash does not match metadata"));
        }
        let charset = config.validate().map_err(|e| Error::WeightsFormat(e.to_string()))?;
        let template = ModelWeights::init(ModelConfig { seed: 0, ..config.clone() })?;
        for (got, want) in params.iter().zip(&template.params) {
            if got.shape() != want.shape() {
                return Err(Error::WeightsFormat(format!(
                    "tensor shape {:?} does not match architecture {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self {
            config,
            charset,
            params,
            epochs,
            val_accuracy,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::WeightsFormat("file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::log_sum_exp;
    use crate::tensor::finite_difference_check;
    use crate::textgen::{build_dataset, random_strings, render_line, FontAtlas, LineSpec};
    use rand::Rng;

    fn untrained(seed: u64) -> ModelWeights {
        ModelWeights::init(ModelConfig::new(&Charset::compact(), seed)).unwrap()
    }

    fn noisy(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = render_line(&LineSpec::jittered("C4", seed), &FontAtlas::default()).unwrap();
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let v = if x < base.width() { base.get(y, x) } else { 1.0 };
                (0.9 * v + 0.05 + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0)
            })
            .collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let m = untrained(1);
        let img = noisy(32, 48, 2);
        let y = m.forward(&img).unwrap();
        assert_eq!((y.steps(), y.classes()), (12, 17));
        for t in 0..y.steps() {
            assert!(log_sum_exp(y.row(t)).abs() < 1e-9);
        }
        assert_eq!(m.forward(&img).unwrap(), y);
        assert!(m.forward(&noisy(32, 48, 2)).is_ok());
        assert!(m.forward(&Image::filled(32, 30, 1.0)).is_err());
        assert!(m.forward(&Image::filled(28, 32, 1.0)).is_err());
    }

    #[test]
    fn column_reordering_round_trips() {
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let rows = columns_to_rows(&t).unwrap();
        assert_eq!(rows.shape(), &[3, 8]);
        // Column 1, row 1, channel 2 sits at feature 1*4 + 2.
        assert_eq!(rows.data()[8 + 6], t.data()[(3 + 1) * 4 + 2]);
        assert_eq!(rows_to_columns(&rows, &[2, 3, 4]).unwrap(), t);
    }

    #[test]
    fn loss_matches_ctc_of_forward() {
        let m = untrained(3);
        let img = noisy(32, 32, 4);
        let target = Charset::compact().encode("C4").unwrap();
        let (loss, g) = m.loss_and_input_gradient(&img, &target).unwrap();
        assert_eq!(loss, ctc_loss(&m.forward(&img).unwrap(), &target).unwrap());
        assert_eq!(g.shape(), &[32, 32]);
        let too_long = Charset::compact().encode("CCCCC").unwrap();
        assert!(matches!(
            m.loss_and_input_gradient(&img, &too_long),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn white_image_gradient_is_finite() {
        let m = untrained(5);
        let (_, g) = m.loss_and_input_gradient(&Image::filled(32, 32, 1.0), &[1, 2]).unwrap();
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = untrained(7);
        let target = Charset::compact().encode("C4").unwrap();
        for seed in 0..3 {
            let img = noisy(32, 32, 100 + seed);
            let (_, g) = m.loss_and_input_gradient(&img, &target).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..32 * 32)).collect();
            let base = img.data().to_vec();
            let f = |sub: &[f64]| {
                let mut d = base.clone();
                for (&p, &v) in pixels.iter().zip(sub) {
                    d[p] = v;
                }
                m.loss(&Image::from_clamped(32, 32, d).unwrap(), &target).unwrap()
            };
            let point: Vec<f64> = pixels.iter().map(|&p| base[p]).collect();
            let analytic: Vec<f64> = pixels.iter().map(|&p| g.data()[p]).collect();
            let err = finite_difference_check(f, &point, &analytic, 1e-6).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let m = untrained(11);
        let img = noisy(32, 32, 12);
        let target = Charset::compact().encode("C4").unwrap();
        let (_, grads) = m.param_gradients(&img, &target).unwrap();
        for (pi, idx) in [(0, 4), (1, 3), (2, 100), (3, 7), (4, 500), (5, 16)] {
            let base = m.params[pi].data()[idx];
            let f = |v: &[f64]| {
                let mut mm = m.clone();
                mm.params[pi].data_mut()[idx] = v[0];
                mm.loss(&img, &target).unwrap()
            };
            let err = finite_difference_check(f, &[base], &[grads[pi].data()[idx]], 1e-6).unwrap();
            assert!(err < 1e-4, "param {pi}[{idx}]: {err}");
        }
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let mut m = untrained(13);
        m.epochs = 4;
        m.val_accuracy = 0.987654321;
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"OMW1");
        assert_eq!(ModelWeights::from_bytes(&bytes).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.omw");
        m.save(&path).unwrap();
        assert_eq!(ModelWeights::load(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_weights_are_rejected() {
        let bytes = untrained(14).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelWeights::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut v2 = bytes.clone();
        v2[3] = b'2';
        assert!(ModelWeights::from_bytes(&v2).unwrap_err().to_string().contains("version"));
        let mut flip = bytes.clone();
        flip[100] ^= 1;
        assert!(ModelWeights::from_bytes(&flip).unwrap_err().to_string().contains("checksum"));
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(ModelWeights::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn blank_only_output_decodes_to_empty() {
        let mut m = untrained(15);
        let blank = m.charset.blank();
        let bias = m.params[5].data_mut();
        bias[blank] = 1e3;
        assert_eq!(m.recognize(&Image::filled(32, 16, 1.0), Decoder::Greedy).unwrap(), "");
        assert_eq!(m.recognize(&Image::filled(32, 16, 1.0), Decoder::Beam(4)).unwrap(), "");
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cs = Charset::new("01L").unwrap();
        let corpus = random_strings(&cs, 120, 1, 3, 3);
        let ds = build_dataset(&corpus, 120, 3, &FontAtlas::default()).unwrap();
        let hp = TrainConfig {
            max_epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut losses = Vec::new();
        let a = train_with_progress(&cs, &ds, &hp, |r| losses.push(r.mean_loss)).unwrap();
        let b = train(&cs, &ds, &hp).unwrap();
        assert_eq!(a, b);
        assert!(losses[1] < losses[0], "{losses:?}");
        assert!(train(&cs, &Dataset::default(), &hp).is_err());
    }
}
