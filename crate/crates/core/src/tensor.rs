//! Dense row-major tensors with hand-written forward and backward passes for
//! the handful of layers the recognizer uses.
//!
//! Spatial tensors use `[height, width, channels]` layout; convolution
//! kernels are `[kh, kw, in_channels, out_channels]` so the innermost loop
//! runs over contiguous output channels. Everything is `f64`.

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting a length mismatch or any non-finite value.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(invalid(format!("expected rank-3 tensor, got {:?}", self.shape))),
        }
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(invalid(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }
}

/// Gradients produced by a backward pass: one entry per parameter tensor
/// (in the layer's parameter order) plus the gradient for the layer input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    pub params: Vec<Tensor>,
}

fn expect_shape(t: &Tensor, expected: &[usize]) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn conv_dims(input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (h, w, c) = input.dims3()?;
    let (kh, kw, kc, f) = match kernels.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(invalid(format!("kernels must be rank 4, got {:?}", kernels.shape))),
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(format!("kernel dims must be odd, got {kh}x{kw}")));
    }
    if kc != c {
        return Err(Error::ShapeMismatch {
            expected: vec![kh, kw, c, f],
            actual: kernels.shape.clone(),
        });
    }
    Ok((h, w, c, kh, kw, f))
}

/// "Same" cross-correlation with zero padding, plus per-filter bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (h, w, c, kh, kw, f) = conv_dims(input, kernels)?;
    expect_shape(bias, &[f])?;
    let (ph, pw) = (kh / 2, kw / 2);
    let k = kernels.data();
    let src = input.data();
    let mut out = vec![0.0; h * w * f];
    for y in 0..h {
        for x in 0..w {
            let px = &mut out[(y * w + x) * f..][..f];
            px.copy_from_slice(bias.data());
            for ky in 0..kh {
                let Some(iy) = (y + ky).checked_sub(ph).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (x + kx).checked_sub(pw).filter(|&v| v < w) else {
                        continue;
                    };
                    let inp = &src[(iy * w + ix) * c..][..c];
                    let kbase = (ky * kw + kx) * c * f;
                    for (ci, &v) in inp.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let krow = &k[kbase + ci * f..][..f];
                        for (o, &kv) in px.iter_mut().zip(krow) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![h, w, f],
        data: out,
    })
}

/// Gradients of [`conv2d`]: `params = [d_kernels, d_bias]`.
pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let (d_input, d_params) = conv2d_backward_parts(input, kernels, upstream, true, true)?;
    let (dk, db) = d_params.expect("requested");
    Ok(LayerGrads {
        input: d_input.expect("requested"),
        params: vec![dk, db],
    })
}

/// Backward pass that only computes the requested pieces. Training skips the
/// input gradient of the first layer; attacks skip every parameter gradient.
pub(crate) fn conv2d_backward_parts(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    want_input: bool,
    want_params: bool,
) -> Result<(Option<Tensor>, Option<(Tensor, Tensor)>)> {
    let (h, w, c, kh, kw, f) = conv_dims(input, kernels)?;
    expect_shape(upstream, &[h, w, f])?;
    let (ph, pw) = (kh / 2, kw / 2);
    let k = kernels.data();
    let src = input.data();
    let up = upstream.data();
    let mut din = if want_input { vec![0.0; h * w * c] } else { Vec::new() };
    let mut dk = if want_params { vec![0.0; k.len()] } else { Vec::new() };
    let mut db = if want_params { vec![0.0; f] } else { Vec::new() };

    for y in 0..h {
        for x in 0..w {
            let g = &up[(y * w + x) * f..][..f];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            if want_params {
                for (d, &v) in db.iter_mut().zip(g) {
                    *d += v;
                }
            }
            for ky in 0..kh {
                let Some(iy) = (y + ky).checked_sub(ph).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (x + kx).checked_sub(pw).filter(|&v| v < w) else {
                        continue;
                    };
                    let ibase = (iy * w + ix) * c;
                    let kbase = (ky * kw + kx) * c * f;
                    for ci in 0..c {
                        let krow = kbase + ci * f;
                        if want_input {
                            let s: f64 = g.iter().zip(&k[krow..krow + f]).map(|(a, b)| a * b).sum();
                            din[ibase + ci] += s;
                        }
                        if want_params {
                            let v = src[ibase + ci];
                            if v != 0.0 {
                                for (d, &gv) in dk[krow..krow + f].iter_mut().zip(g) {
                                    *d += v * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let d_input = want_input.then(|| Tensor {
        shape: vec![h, w, c],
        data: din,
    });
    let d_params = want_params.then(|| {
        (
            Tensor {
                shape: kernels.shape.clone(),
                data: dk,
            },
            Tensor {
                shape: vec![f],
                data: db,
            },
        )
    });
    Ok((d_input, d_params))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Passes the upstream gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    expect_shape(upstream, input.shape())?;
    Ok(Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    })
}

/// Output of [`maxpool2x2`]: pooled values and, for every output element,
/// the flat index of the winning input element.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling over `[H, W, C]`. Ties go to the first
/// element in row-major window order.
pub fn maxpool2x2(input: &Tensor) -> Result<Pooled> {
    let (h, w, c) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(format!("maxpool2x2 needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = vec![0.0; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((2 * oy + dy) * w + (2 * ox + dx)) * c + ch;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok(Pooled {
        output: Tensor {
            shape: vec![oh, ow, c],
            data: out,
        },
        argmax,
    })
}

/// Routes each upstream value to the input position that won the forward max.
pub fn maxpool_backward(input_shape: &[usize], pooled: &Pooled, upstream: &Tensor) -> Result<Tensor> {
    expect_shape(upstream, pooled.output.shape())?;
    let mut grad = Tensor::zeros(input_shape.to_vec());
    for (&idx, &g) in pooled.argmax.iter().zip(upstream.data()) {
        if idx >= grad.data.len() {
            return Err(invalid("argmax index outside input"));
        }
        grad.data[idx] += g;
    }
    Ok(grad)
}

/// Affine map `[N, D] x [D, K] + [K] -> [N, K]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = input.dims2()?;
    let (wd, k) = weights.dims2()?;
    if wd != d {
        return Err(Error::ShapeMismatch {
            expected: vec![d, k],
            actual: weights.shape.clone(),
        });
    }
    expect_shape(bias, &[k])?;
    let mut out = vec![0.0; n * k];
    for r in 0..n {
        let row = &mut out[r * k..][..k];
        row.copy_from_slice(bias.data());
        for (i, &v) in input.data[r * d..][..d].iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&weights.data[i * k..][..k]) {
                *o += v * wv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![n, k],
        data: out,
    })
}

/// Gradients of [`dense`]: `params = [d_weights, d_bias]`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let (n, d) = input.dims2()?;
    let (_, k) = weights.dims2()?;
    expect_shape(weights, &[d, k])?;
    expect_shape(upstream, &[n, k])?;
    let mut din = vec![0.0; n * d];
    let mut dw = vec![0.0; d * k];
    let mut db = vec![0.0; k];
    for r in 0..n {
        let g = &upstream.data[r * k..][..k];
        for (acc, &v) in db.iter_mut().zip(g) {
            *acc += v;
        }
        let x = &input.data[r * d..][..d];
        for i in 0..d {
            let wrow = &weights.data[i * k..][..k];
            din[r * d + i] = g.iter().zip(wrow).map(|(a, b)| a * b).sum();
            if x[i] != 0.0 {
                for (acc, &gv) in dw[i * k..][..k].iter_mut().zip(g) {
                    *acc += x[i] * gv;
                }
            }
        }
    }
    Ok(LayerGrads {
        input: Tensor {
            shape: vec![n, d],
            data: din,
        },
        params: vec![
            Tensor {
                shape: vec![d, k],
                data: dw,
            },
            Tensor {
                shape: vec![k],
                data: db,
            },
        ],
    })
}

pub fn softmax_rows(input: &Tensor) -> Result<Tensor> {
    let mut out = log_softmax_rows(input)?;
    for v in &mut out.data {
        *v = v.exp();
    }
    Ok(out)
}

pub fn log_softmax_rows(input: &Tensor) -> Result<Tensor> {
    let (n, k) = input.dims2()?;
    let mut out = input.data.clone();
    for r in 0..n {
        let row = &mut out[r * k..][..k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(Tensor {
        shape: vec![n, k],
        data: out,
    })
}

/// Max over coordinates of `|central difference - analytic| / (|analytic| + 1e-8)`.
pub fn finite_difference_check<F>(mut f: F, point: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    if point.len() != analytic.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![point.len()],
            actual: vec![analytic.len()],
        });
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max((numeric - analytic[i]).abs() / (analytic[i].abs() + 1e-8));
    }
    Ok(worst)
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn with_data(t: &Tensor, data: &[f64]) -> Tensor {
        Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let input = Tensor::zeros(vec![1, 1, 1]);
        let k = Tensor::new(vec![3, 3, 1, 2], (0..18).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        assert_eq!(conv2d(&input, &k, &b).unwrap().data(), &[0.5, -1.5]);
    }

    #[test]
    fn conv_all_ones_counts_neighbors() {
        let input = Tensor::filled(vec![3, 3, 1], 1.0);
        let k = Tensor::filled(vec![3, 3, 1, 1], 1.0);
        let out = conv2d(&input, &k, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_identity_kernel_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(vec![5, 7, 3], &mut rng);
        let mut k = Tensor::zeros(vec![3, 3, 3, 3]);
        for c in 0..3 {
            k.data_mut()[(4 * 3 + c) * 3 + c] = 1.0;
        }
        let out = conv2d(&input, &k, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_rejects_mismatch_and_even_kernels() {
        let input = Tensor::zeros(vec![4, 4, 2]);
        let k = Tensor::zeros(vec![3, 3, 1, 2]);
        assert!(conv2d(&input, &k, &Tensor::zeros(vec![2])).is_err());
        let even = Tensor::zeros(vec![2, 2, 2, 2]);
        assert!(conv2d(&input, &even, &Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn conv_backward_zero_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random(vec![4, 4, 2], &mut rng);
        let k = random(vec![3, 3, 2, 3], &mut rng);
        let g = conv2d_backward(&input, &k, &Tensor::zeros(vec![4, 4, 3])).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.params.iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn conv_backward_scalar_case() {
        // out = x*k + b, so d/dx = k*g, d/dk = x*g, d/db = g.
        let input = Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![-2.0]).unwrap();
        let g = conv2d_backward(&input, &k, &Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[-1.0]);
        assert_eq!(g.params[0].data(), &[1.5]);
        assert_eq!(g.params[1].data(), &[0.5]);
    }

    // Scalar objective sum(out * probe) so every backward can be checked
    // against central differences of its forward.
    fn probe_loss(out: &Tensor, probe: &Tensor) -> f64 {
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let input = random(vec![4, 4, 2], &mut rng);
            let k = random(vec![3, 3, 2, 3], &mut rng);
            let b = random(vec![3], &mut rng);
            let probe = random(vec![4, 4, 3], &mut rng);
            let g = conv2d_backward(&input, &k, &probe).unwrap();

            let err = finite_difference_check(
                |x| probe_loss(&conv2d(&with_data(&input, x), &k, &b).unwrap(), &probe),
                input.data(),
                g.input.data(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "input grad seed {seed}: {err}");
            let err = finite_difference_check(
                |x| probe_loss(&conv2d(&input, &with_data(&k, x), &b).unwrap(), &probe),
                k.data(),
                g.params[0].data(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "kernel grad seed {seed}: {err}");
            let err = finite_difference_check(
                |x| probe_loss(&conv2d(&input, &k, &with_data(&b, x)).unwrap(), &probe),
                b.data(),
                g.params[1].data(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "bias grad seed {seed}: {err}");
        }
    }

    #[test]
    fn relu_values() {
        let t = Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 2.0]);
        let g = relu_backward(&t, &Tensor::new(vec![2], vec![5.0, 7.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let input = Tensor::new(vec![2, 2, 1], vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let pooled = maxpool2x2(&input).unwrap();
        assert_eq!(pooled.output.data(), &[0.9]);
        let g = maxpool_backward(input.shape(), &pooled, &Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let input = random(vec![4, 6, 2], &mut rng);
            let probe = random(vec![2, 3, 2], &mut rng);
            let pooled = maxpool2x2(&input).unwrap();
            let g = maxpool_backward(input.shape(), &pooled, &probe).unwrap();
            let err = finite_difference_check(
                |x| probe_loss(&maxpool2x2(&with_data(&input, x)).unwrap().output, &probe),
                input.data(),
                g.data(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let input = random(vec![3, 5], &mut rng);
            let w = random(vec![5, 4], &mut rng);
            let b = random(vec![4], &mut rng);
            let probe = random(vec![3, 4], &mut rng);
            let g = dense_backward(&input, &w, &probe).unwrap();
            let checks = [
                finite_difference_check(
                    |x| probe_loss(&dense(&with_data(&input, x), &w, &b).unwrap(), &probe),
                    input.data(),
                    g.input.data(),
                    1e-5,
                ),
                finite_difference_check(
                    |x| probe_loss(&dense(&input, &with_data(&w, x), &b).unwrap(), &probe),
                    w.data(),
                    g.params[0].data(),
                    1e-5,
                ),
                finite_difference_check(
                    |x| probe_loss(&dense(&input, &w, &with_data(&b, x)).unwrap(), &probe),
                    b.data(),
                    g.params[1].data(),
                    1e-5,
                ),
            ];
            for err in checks {
                assert!(err.unwrap() < 1e-4, "seed {seed}");
            }
        }
    }

    #[test]
    fn relu_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let input = random(vec![3, 4, 2], &mut rng);
            let probe = random(vec![3, 4, 2], &mut rng);
            let g = relu_backward(&input, &probe).unwrap();
            let err = finite_difference_check(
                |x| probe_loss(&relu(&with_data(&input, x)), &probe),
                input.data(),
                g.data(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn softmax_rows_properties() {
        let uniform = Tensor::filled(vec![2, 4], 3.0);
        let s = softmax_rows(&uniform).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random(vec![6, 9], &mut rng);
        let s = softmax_rows(&t).unwrap();
        for row in s.data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn finite_difference_check_basics() {
        let lin = finite_difference_check(|x| 3.0 * x[0] - 2.0 * x[1], &[0.3, 0.7], &[3.0, -2.0], 1e-5).unwrap();
        assert!(lin < 1e-9);
        let quad = finite_difference_check(|x| x[0] * x[0], &[1.0], &[2.0], 1e-5).unwrap();
        assert!(quad < 1e-8, "{quad}");
        assert!(finite_difference_check(|_| f64::NAN, &[1.0], &[0.0], 1e-5).is_err());
        assert!(finite_difference_check(|x| x[0], &[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-3.0), -1.0);
        assert_eq!(sign(1e-300), 1.0);
    }
}
