//! Shared test oracles: central finite differences in f64 against the
//! layers' analytic adjoints, and the Mann-Whitney pair statistic.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cle_triage::metrics::ScoredItem;
use cle_triage::nn::{
    concat_channels, softmax_cross_entropy, split_channels, Conv2d, Dense, GlobalAvgPool,
    LayerParams, Lrn, MaxPool2d, Tensor,
};

pub const FD_STEP: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Central difference gradient of a scalar function, f64 end to end.
pub fn fd_gradient(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let original = x.data()[i];
        probe.data_mut()[i] = original + FD_STEP;
        let plus = f(&probe);
        probe.data_mut()[i] = original - FD_STEP;
        let minus = f(&probe);
        probe.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    grad
}

/// `max_i |a_i - b_i| / max(|a_i| + |b_i|, 1e-6)`.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Scalar test functional: a fixed random projection of the output.
pub fn weighted_sum(y: &Tensor<f64>, weights: &[f64]) -> f64 {
    y.data()
        .iter()
        .zip(weights)
        .map(|(&v, &c)| v * c)
        .sum()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn direction(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values with pairwise gaps far larger than the FD step, so max-pool
/// argmax choices cannot flip under perturbation.
fn well_separated(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut levels: Vec<usize> = (0..len).collect();
    levels.shuffle(rng);
    let mut i = 0;
    Tensor::from_fn(shape, |_| {
        let v = levels[i] as f64 * 0.037 + rng.gen_range(0.0..0.004);
        i += 1;
        v
    })
}

/// Gradient check of one conv configuration (input, weights, bias).
/// Returns the worst relative error across the three.
pub fn check_conv(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The canonical case (2x3x5x5 input, four 3x3 kernels) plus random
    // shapes, strides and pads.
    let (n, cin, cout, k, stride, pad, h, w) = if seed.is_multiple_of(5) {
        (2, 3, 4, 3, 1, 0, 5, 5)
    } else {
        let k = *[1, 2, 3, 5].choose(&mut rng).unwrap();
        let pad = rng.gen_range(0..=2.min(k - 1));
        let h = rng.gen_range(k.max(3)..=7);
        let w = rng.gen_range(k.max(3)..=7);
        (
            rng.gen_range(1..=2),
            rng.gen_range(1..=3),
            rng.gen_range(1..=4),
            k,
            rng.gen_range(1..=2),
            pad,
            h,
            w,
        )
    };
    let x = random_tensor(&mut rng, vec![n, cin, h, w], -1.0, 1.0);
    let w0 = random_tensor(&mut rng, vec![cout, cin, k, k], -0.7, 0.7);
    let b0 = random_tensor(&mut rng, vec![cout], -0.3, 0.3);

    let forward = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> Tensor<f64> {
        let mut conv = Conv2d::new(LayerParams::new(w.clone(), b.clone()), stride, pad).unwrap();
        conv.forward(x).unwrap()
    };
    let y = forward(&x, &w0, &b0);
    let c = direction(&mut rng, y.len());

    let mut conv = Conv2d::new(LayerParams::new(w0.clone(), b0.clone()), stride, pad).unwrap();
    conv.forward(&x).unwrap();
    let upstream = Tensor::new(y.shape().to_vec(), c.clone()).unwrap();
    let grad_in = conv.backward(&upstream, true).unwrap();

    let e_input = max_relative_error(
        &grad_in,
        &fd_gradient(&x, |x| weighted_sum(&forward(x, &w0, &b0), &c)),
    );
    let e_weights = max_relative_error(
        &conv.params.weight_grad,
        &fd_gradient(&w0, |w| weighted_sum(&forward(&x, w, &b0), &c)),
    );
    let e_bias = max_relative_error(
        &conv.params.bias_grad,
        &fd_gradient(&b0, |b| weighted_sum(&forward(&x, &w0, b), &c)),
    );
    e_input.max(e_weights).max(e_bias)
}

/// Gradient check of max pooling, overlapping windows included.
pub fn check_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Window 3 stride 2 (overlapping) is pinned in the rotation.
    let (window, stride, pad) = if seed.is_multiple_of(3) {
        (3, 2, 0)
    } else {
        let window = rng.gen_range(1..=3);
        (window, rng.gen_range(1..=3), rng.gen_range(0..window))
    };
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(window.max(3)..=7);
    let w = rng.gen_range(window.max(3)..=7);
    let x = well_separated(&mut rng, vec![n, c, h, w]);

    let forward = |x: &Tensor<f64>| -> Tensor<f64> {
        let mut pool = MaxPool2d::new(window, stride, pad).unwrap();
        pool.forward(x).unwrap()
    };
    let y = forward(&x);
    let cvec = direction(&mut rng, y.len());

    let mut pool = MaxPool2d::new(window, stride, pad).unwrap();
    pool.forward(&x).unwrap();
    let grad_in = pool
        .backward(&Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap())
        .unwrap();

    max_relative_error(&grad_in, &fd_gradient(&x, |x| weighted_sum(&forward(x), &cvec)))
}

/// Gradient check of ReLU on inputs bounded away from the kink.
pub fn check_relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(4..=64);
    let x = Tensor::from_fn(vec![len], |_| {
        let magnitude = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    });
    let forward = |x: &Tensor<f64>| -> Tensor<f64> {
        cle_triage::nn::Relu::new().forward(x)
    };
    let y = forward(&x);
    let cvec = direction(&mut rng, y.len());

    let mut relu = cle_triage::nn::Relu::new();
    relu.forward(&x);
    let grad_in = relu
        .backward(&Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap())
        .unwrap();
    max_relative_error(&grad_in, &fd_gradient(&x, |x| weighted_sum(&forward(x), &cvec)))
}

/// Gradient check of LRN.
pub fn check_lrn(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The 2x8x4x4 case is pinned in the rotation.
    let (n, c, h, w) = if seed.is_multiple_of(4) {
        (2, 8, 4, 4)
    } else {
        (
            rng.gen_range(1..=2),
            rng.gen_range(1..=8),
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
        )
    };
    let radius = rng.gen_range(0..=3);
    let x = random_tensor(&mut rng, vec![n, c, h, w], -1.2, 1.2);
    let forward = |x: &Tensor<f64>| -> Tensor<f64> {
        Lrn::new(radius, 2.0, 1e-2, 0.75).forward(x).unwrap()
    };
    let y = forward(&x);
    let cvec = direction(&mut rng, y.len());

    let mut lrn = Lrn::new(radius, 2.0, 1e-2, 0.75);
    lrn.forward(&x).unwrap();
    let grad_in = lrn
        .backward(&Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap())
        .unwrap();
    max_relative_error(&grad_in, &fd_gradient(&x, |x| weighted_sum(&forward(x), &cvec)))
}

/// Gradient check of the fully connected layer (input, weights, bias).
pub fn check_dense(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The [3,7] -> [3,4] case is pinned in the rotation.
    let (n, d, m) = if seed.is_multiple_of(4) {
        (3, 7, 4)
    } else {
        (
            rng.gen_range(1..=4),
            rng.gen_range(1..=9),
            rng.gen_range(1..=5),
        )
    };
    let x = random_tensor(&mut rng, vec![n, d], -1.0, 1.0);
    let w0 = random_tensor(&mut rng, vec![m, d], -0.8, 0.8);
    let b0 = random_tensor(&mut rng, vec![m], -0.4, 0.4);

    let forward = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> Tensor<f64> {
        let mut dense = Dense::new(LayerParams::new(w.clone(), b.clone())).unwrap();
        dense.forward(x).unwrap()
    };
    let y = forward(&x, &w0, &b0);
    let cvec = direction(&mut rng, y.len());

    let mut dense = Dense::new(LayerParams::new(w0.clone(), b0.clone())).unwrap();
    dense.forward(&x).unwrap();
    let grad_in = dense
        .backward(&Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap())
        .unwrap();

    let e_input = max_relative_error(
        &grad_in,
        &fd_gradient(&x, |x| weighted_sum(&forward(x, &w0, &b0), &cvec)),
    );
    let e_weights = max_relative_error(
        &dense.params.weight_grad,
        &fd_gradient(&w0, |w| weighted_sum(&forward(&x, w, &b0), &cvec)),
    );
    let e_bias = max_relative_error(
        &dense.params.bias_grad,
        &fd_gradient(&b0, |b| weighted_sum(&forward(&x, &w0, b), &cvec)),
    );
    e_input.max(e_weights).max(e_bias)
}

/// Gradient check of channel concatenation over 2-4 branches.
pub fn check_concat(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branches = rng.gen_range(2..=4);
    let n = rng.gen_range(1..=2);
    let h = rng.gen_range(1..=4);
    let w = rng.gen_range(1..=4);
    let channels: Vec<usize> = (0..branches).map(|_| rng.gen_range(1..=3)).collect();
    let inputs: Vec<Tensor<f64>> = channels
        .iter()
        .map(|&c| random_tensor(&mut rng, vec![n, c, h, w], -1.0, 1.0))
        .collect();

    let forward = |inputs: &[Tensor<f64>]| -> Tensor<f64> {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        concat_channels(&refs).unwrap()
    };
    let y = forward(&inputs);
    let cvec = direction(&mut rng, y.len());
    let upstream = Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap();
    let grads = split_channels(&upstream, &channels).unwrap();

    let mut worst = 0.0f64;
    for b in 0..branches {
        let fd = fd_gradient(&inputs[b], |varied| {
            let mut probe: Vec<Tensor<f64>> = inputs.clone();
            probe[b] = varied.clone();
            weighted_sum(&forward(&probe), &cvec)
        });
        worst = worst.max(max_relative_error(&grads[b], &fd));
    }
    worst
}

/// Gradient check of global average pooling.
pub fn check_global_avg_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = vec![
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
    ];
    let x = random_tensor(&mut rng, shape, -1.0, 1.0);
    let forward = |x: &Tensor<f64>| GlobalAvgPool::new().forward(x).unwrap();
    let y = forward(&x);
    let cvec = direction(&mut rng, y.len());

    let mut gap = GlobalAvgPool::new();
    gap.forward(&x).unwrap();
    let grad_in = gap
        .backward(&Tensor::new(y.shape().to_vec(), cvec.clone()).unwrap())
        .unwrap();
    max_relative_error(&grad_in, &fd_gradient(&x, |x| weighted_sum(&forward(x), &cvec)))
}

/// Gradient check of softmax cross-entropy against its logits.
pub fn check_loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The [5, 2] case is pinned in the rotation.
    let (n, c) = if seed.is_multiple_of(3) {
        (5, 2)
    } else {
        (rng.gen_range(1..=6), rng.gen_range(2..=4))
    };
    let logits = random_tensor(&mut rng, vec![n, c], -2.0, 2.0);
    let mut targets = Tensor::zeros(vec![n, c]);
    for row in 0..n {
        let class = rng.gen_range(0..c);
        targets.data_mut()[row * c + class] = 1.0;
    }
    let loss = softmax_cross_entropy(&logits, &targets).unwrap();
    let fd = fd_gradient(&logits, |l| softmax_cross_entropy(l, &targets).unwrap().value);
    max_relative_error(&loss.gradient, &fd)
}

/// Fraction of (positive, negative) pairs where the positive outscores
/// the negative, ties counted one half.
pub fn mann_whitney(items: &[ScoredItem]) -> f64 {
    let positives: Vec<f64> = items
        .iter()
        .filter(|i| i.truth.is_diagnostic())
        .map(|i| i.score)
        .collect();
    let negatives: Vec<f64> = items
        .iter()
        .filter(|i| !i.truth.is_diagnostic())
        .map(|i| i.score)
        .collect();
    let mut wins = 0.0f64;
    for &p in &positives {
        for &n in &negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() as f64 * negatives.len() as f64)
}
