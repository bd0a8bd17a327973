use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wmocr_core::attacks::{run_attack, AttackConfig, Variant};
use wmocr_core::ctc::{ctc_grad, LogProbMatrix};
use wmocr_core::imaging::{inpaint, median_blur, ssim};
use wmocr_core::model::{ModelConfig, ModelWeights};
use wmocr_core::tensor::{conv2d, Tensor};
use wmocr_core::textgen::{render_line, watermark_mask, FontAtlas, LineSpec, WatermarkSpec};
use wmocr_core::Charset;

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn model() -> ModelWeights {
    ModelWeights::init(ModelConfig::new(&Charset::compact(), 3)).unwrap()
}

fn tensor_ops(c: &mut Criterion) {
    let input = random_tensor(vec![32, 96, 8], 1);
    let kernels = random_tensor(vec![3, 3, 8, 16], 2);
    let bias = random_tensor(vec![16], 3);
    c.bench_function("conv2d 32x96x8 -> 16", |b| {
        b.iter(|| conv2d(black_box(&input), &kernels, &bias).unwrap())
    });

    let logits = random_tensor(vec![48, 17], 4);
    let y = LogProbMatrix::from_logits(&logits).unwrap();
    let target: Vec<usize> = (0..10).map(|i| i % 16).collect();
    c.bench_function("ctc_grad M=48 L=10", |b| b.iter(|| ctc_grad(black_box(&y), &target).unwrap()));
}

fn model_ops(c: &mut Criterion) {
    let m = model();
    let x = render_line(&LineSpec::new("CAST 2019"), &FontAtlas::default()).unwrap();
    let target = Charset::compact().encode("CAST 2018").unwrap();
    c.bench_function("forward 9-char line", |b| b.iter(|| m.forward(black_box(&x)).unwrap()));
    c.bench_function("loss + input gradient 9-char line", |b| {
        b.iter(|| m.loss_and_input_gradient(black_box(&x), &target).unwrap())
    });
    let cfg = AttackConfig {
        variant: Variant::Wm,
        iterations: 20,
        ..AttackConfig::default()
    };
    c.bench_function("WM attack 20 iterations", |b| {
        b.iter(|| run_attack(&m, black_box(&x), "CAST 2018", &cfg).unwrap())
    });
}

fn image_ops(c: &mut Criterion) {
    let x = render_line(&LineSpec::jittered("COAST 1837", 5), &FontAtlas::default()).unwrap();
    let (h, w) = x.dims();
    let mask = watermark_mask(&WatermarkSpec::default(), h, w).unwrap();
    let y = median_blur(&x, 3).unwrap();
    c.bench_function("median_blur 3x3", |b| b.iter(|| median_blur(black_box(&x), 3).unwrap()));
    c.bench_function("ssim", |b| b.iter(|| ssim(black_box(&x), &y).unwrap()));
    c.bench_function("inpaint radius 2", |b| b.iter(|| inpaint(black_box(&x), &mask, 2).unwrap()));
}

criterion_group!(benches, tensor_ops, model_ops, image_ops);
criterion_main!(benches);
