//! Property tests for the structural invariants: shape laws, codec round
//! trips, splitter partitions, ROC geometry, and spec validation.

mod common;

use proptest::prelude::*;

use cle_triage::data::{encode_pgm, parse_pgm, stratified_kfold, GrayImage, Label};
use cle_triage::metrics::{roc_curve, ScoredItem};
use cle_triage::nets::{build_mini_alexnet, build_mini_inception_net, LayerSpec, NetSpec};
use cle_triage::nn::{Conv2d, LayerParams, MaxPool2d, Tensor};

fn label_vec(diag: usize, nondiag: usize) -> Vec<Label> {
    let mut v = vec![Label::Diagnostic; diag];
    v.extend(std::iter::repeat_n(Label::Nondiagnostic, nondiag));
    v
}

proptest! {
    /// floor((in + 2 pad - k)/stride) + 1 equals the number of window
    /// origins that fit, for both conv and pool.
    #[test]
    fn windowed_shape_law(
        h in 1usize..24,
        w in 1usize..24,
        k in 1usize..6,
        stride in 1usize..4,
        pad in 0usize..3,
    ) {
        let padded_h = h + 2 * pad;
        let padded_w = w + 2 * pad;
        let origins = |padded: usize| {
            (0..padded.saturating_sub(k - 1))
                .step_by(stride)
                .filter(|&o| o + k <= padded)
                .count()
        };
        let (expect_h, expect_w) = (origins(padded_h), origins(padded_w));

        let mut conv = Conv2d::new(
            LayerParams::new(Tensor::<f32>::zeros(vec![2, 1, k, k]), Tensor::zeros(vec![2])),
            stride,
            pad,
        ).unwrap();
        let conv_out = conv.forward(&Tensor::zeros(vec![1, 1, h, w]));
        if expect_h == 0 || expect_w == 0 {
            prop_assert!(conv_out.is_err());
        } else {
            let out = conv_out.unwrap();
            prop_assert_eq!(out.shape(), &[1, 2, expect_h, expect_w]);
        }

        if pad < k {
            let mut pool = MaxPool2d::<f32>::new(k, stride, pad).unwrap();
            let pool_out = pool.forward(&Tensor::zeros(vec![1, 1, h, w]));
            if expect_h == 0 || expect_w == 0 {
                prop_assert!(pool_out.is_err());
            } else {
                let out = pool_out.unwrap();
                prop_assert_eq!(out.shape(), &[1, 1, expect_h, expect_w]);
            }
        }
    }

    /// Encode -> parse is pixel-identical for every valid image.
    #[test]
    fn pgm_round_trip(
        w in 1usize..24,
        h in 1usize..24,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<u8> = (0..w * h).map(|_| rng.gen()).collect();
        let image = GrayImage::new(w, h, pixels).unwrap();
        let parsed = parse_pgm(&encode_pgm(&image)).unwrap();
        prop_assert_eq!(parsed, image);
    }

    /// Folds partition the items; within a class, fold sizes differ by at
    /// most one and the larger folds come last.
    #[test]
    fn stratified_folds_partition(
        diag in 2usize..150,
        nondiag in 2usize..150,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(diag >= k && nondiag >= k);
        let labels = label_vec(diag, nondiag);
        let folds = stratified_kfold(&labels, k, seed).unwrap();
        prop_assert_eq!(folds.len(), labels.len());
        prop_assert!(folds.iter().all(|&f| f < k));
        for class in Label::ALL {
            let sizes: Vec<usize> = (0..k)
                .map(|f| {
                    (0..labels.len())
                        .filter(|&i| folds[i] == f && labels[i] == class)
                        .count()
                })
                .collect();
            let total: usize = sizes.iter().sum();
            prop_assert_eq!(total, if class.is_diagnostic() { diag } else { nondiag });
            let min = *sizes.iter().min().unwrap();
            let max = *sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
            // Remainder goes to the last folds: sizes are non-decreasing.
            prop_assert!(sizes.windows(2).all(|p| p[0] <= p[1]));
        }
    }

    /// ROC endpoints, monotonicity, AUC bounds and the Mann-Whitney
    /// equivalence on arbitrary score sets (ties likely).
    #[test]
    fn roc_geometry(
        seed in any::<u64>(),
        n in 2usize..120,
        grid in 2usize..12,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut items: Vec<ScoredItem> = (0..n)
            .map(|_| ScoredItem {
                score: rng.gen_range(0..grid) as f64 / (grid - 1) as f64,
                truth: if rng.gen_bool(0.5) { Label::Diagnostic } else { Label::Nondiagnostic },
            })
            .collect();
        items.push(ScoredItem { score: rng.gen(), truth: Label::Diagnostic });
        items.push(ScoredItem { score: rng.gen(), truth: Label::Nondiagnostic });

        let curve = roc_curve(&items).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        let monotone = curve
            .points
            .windows(2)
            .all(|p| p[1].fpr >= p[0].fpr && p[1].tpr >= p[0].tpr);
        prop_assert!(monotone);
        prop_assert!((0.0..=1.0).contains(&curve.auc));
        prop_assert!((curve.auc - common::mann_whitney(&items)).abs() < 1e-12);
    }

    /// Every hand-mutated inconsistent spec is rejected by validation.
    #[test]
    fn mutated_specs_are_rejected(
        base in 0usize..2,
        mutation in 0usize..5,
        layer_seed in any::<u64>(),
    ) {
        let mut spec = if base == 0 { build_mini_alexnet() } else { build_mini_inception_net() };
        prop_assert!(spec.validate().is_ok());
        apply_breaking_mutation(&mut spec, mutation, layer_seed);
        prop_assert!(spec.validate().is_err(), "mutation {mutation} was accepted");
    }
}

/// Mutations that each violate a documented spec constraint.
fn apply_breaking_mutation(spec: &mut NetSpec, mutation: usize, layer_seed: u64) {
    match mutation {
        // Head emits the wrong number of logits.
        0 => *spec.layers.last_mut().unwrap() = LayerSpec::Dense { out_features: 3 },
        // A kernel that cannot fit any activation of this net.
        1 => {
            let conv_positions: Vec<usize> = spec
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
                .map(|(i, _)| i)
                .collect();
            let at = conv_positions[layer_seed as usize % conv_positions.len()];
            if let LayerSpec::Conv { kernel, .. } = &mut spec.layers[at] {
                *kernel = 999;
            }
        }
        // Spatial layer after the activations went flat.
        2 => spec.layers.push(LayerSpec::Conv { out_channels: 4, kernel: 1, stride: 1, pad: 0 }),
        // Dropout probability outside [0, 1).
        3 => spec.layers.insert(0, LayerSpec::Dropout { rate: 1.5 }),
        // Zero-extent input.
        _ => spec.input = [0, 64, 64],
    }
}
