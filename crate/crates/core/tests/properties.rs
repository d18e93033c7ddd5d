mod common;

use ffc_core::data::{encode_cifar10, encode_idx_images, encode_idx_labels, parse_cifar10, parse_mnist, Dataset};
use ffc_core::ffc::{active_units, filter_step, FilterStage, DEFAULT_LN_EPS};
use ffc_core::nn::Linear;
use ffc_core::tensor::matmul;
use ffc_core::{combine_heads, ensemble_predict, EnsembleRule, FfcHead, Model, ModelSpec, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn identity_head(channels: usize, classes: usize, depth: usize, seed: u64) -> FfcHead<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = (0..depth)
        .map(|s| FilterStage::identity(&format!("ln{s}"), channels))
        .collect();
    let classifier = Linear::new("fc", channels, classes, &mut rng);
    FfcHead::from_parts(stages, classifier, DEFAULT_LN_EPS)
}

fn tensor(shape: [usize; 2], values: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        (m, k, l, n) in (1usize..6, 1usize..6, 1usize..6, 1usize..6),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| Tensor::<f64>::from_fn([r, c], |_| rng.random_range(-1.0..1.0));
        let (a, b, c) = (draw(m, k), draw(k, l), draw(l, n));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
        }
    }

    #[test]
    fn head_yields_two_d_plus_one_logit_matrices(
        n in 1usize..5, c in 1usize..9, k in 1usize..6, d in 0usize..4, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = FfcHead::<f64>::new(c, k, d, DEFAULT_LN_EPS, &mut rng);
        let x = Tensor::from_fn([n, c], |i| ((i as u64 ^ seed) % 13) as f64 - 6.0);
        let out = head.infer(&x).unwrap();
        prop_assert_eq!(out.logits.len(), 2 * d + 1);
        for l in &out.logits {
            prop_assert_eq!(l.shape(), &[n, k]);
        }
        prop_assert_eq!(out.features.len(), d + 1);
        prop_assert_eq!(out.active_counts.len(), d + 1);
    }

    #[test]
    fn active_units_never_increase_from_nonnegative_input(
        values in proptest::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..5.0], 1..40),
    ) {
        let c = values.len();
        let head = identity_head(c, 2, 3, 0);
        let out = head.infer(&tensor([1, c], &values)).unwrap();
        let counts: Vec<usize> = out.active_counts.iter().map(|v| v[0]).collect();
        for w in counts.windows(2) {
            prop_assert!(w[1] <= w[0], "{counts:?}");
        }
    }

    #[test]
    fn single_active_unit_lands_on_sqrt_c_minus_one(c in 2usize..300, j in 0usize..300, a in 0.5f64..50.0) {
        let j = j % c;
        let mut x = vec![0.0; c];
        x[j] = a;
        let target = ((c - 1) as f64).sqrt();
        // without epsilon the first step is exact
        let y = filter_step(&tensor([1, c], &x), &Tensor::full([c], 1.0), &Tensor::zeros([c]), 0.0).unwrap();
        prop_assert!((y.data()[j] - target).abs() < 1e-9 * target.max(1.0));
        prop_assert_eq!(active_units(&y), vec![1]);
    }

    #[test]
    fn sqrt_c_minus_one_is_a_fixed_point(c in 4usize..3000, j in 0usize..3000) {
        // the default epsilon moves the value by eps * C^2 / (2 (C-1)^2) relative,
        // which is below 1e-5 from C = 4 on
        let j = j % c;
        let target = ((c - 1) as f64).sqrt();
        let mut x = vec![0.0; c];
        x[j] = target;
        let mut y = tensor([1, c], &x);
        for _ in 0..3 {
            y = filter_step(&y, &Tensor::full([c], 1.0), &Tensor::zeros([c]), DEFAULT_LN_EPS).unwrap();
            prop_assert!((y.data()[j] - target).abs() / target < 1e-5);
            prop_assert_eq!(active_units(&y), vec![1]);
        }
    }

    #[test]
    fn shifting_one_heads_logits_keeps_the_vote(
        grid in proptest::collection::vec(-4i32..=4, 7 * 6 * 5),
        shift in -8i32..=8,
        head in 0usize..7,
    ) {
        // half-integer logits and integer shifts stay exact in f32
        let logits: Vec<Tensor<f32>> = grid
            .chunks(6 * 5)
            .map(|h| Tensor::new([6, 5], h.iter().map(|&v| v as f32 * 0.5).collect()).unwrap())
            .collect();
        let before = combine_heads(&logits, EnsembleRule::Vote);
        let mut shifted = logits.clone();
        shifted[head] = shifted[head].map(|v| v + shift as f32);
        prop_assert_eq!(combine_heads(&shifted, EnsembleRule::Vote), before);
    }

    #[test]
    fn vote_matches_the_revote_oracle(seed in any::<u64>(), k in 1usize..11, d in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = common::random_outputs(&mut rng, 4, k, d);
        prop_assert_eq!(ensemble_predict(&out, EnsembleRule::Vote), common::revote_all(&out.logits));
    }

    #[test]
    fn extra_parameters_are_exactly_two_d_c(
        widths in proptest::collection::vec(1usize..12, 1..4),
        d in 0usize..5,
        classes in 1usize..12,
    ) {
        let spec = |depth| ModelSpec { widths: widths.clone(), ..ModelSpec::small_conv_net(1, classes, depth) };
        let ffc = Model::<f32>::new(spec(d), 0).unwrap().param_count();
        let plain = Model::<f32>::new(spec(0), 0).unwrap().param_count();
        prop_assert_eq!(ffc - plain, 2 * d * widths.last().unwrap());
    }

    #[test]
    fn idx_files_round_trip(
        (n, h, w) in (1usize..6, 1usize..9, 1usize..9),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = vec![0u8; 16];
        images[..4].copy_from_slice(&0x0803u32.to_be_bytes());
        for (i, dim) in [n, h, w].iter().enumerate() {
            images[4 + 4 * i..8 + 4 * i].copy_from_slice(&(*dim as u32).to_be_bytes());
        }
        images.extend((0..n * h * w).map(|_| rng.random::<u8>()));
        let mut labels = 0x0801u32.to_be_bytes().to_vec();
        labels.extend((n as u32).to_be_bytes());
        labels.extend((0..n).map(|_| rng.random_range(0u8..10)));
        let ds = parse_mnist(&images, &labels).unwrap();
        prop_assert_eq!(encode_idx_images(&ds).unwrap(), images);
        prop_assert_eq!(encode_idx_labels(&ds.labels), labels);
    }

    #[test]
    fn cifar_records_round_trip(records in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bytes = Vec::new();
        for _ in 0..records {
            bytes.push(rng.random_range(0u8..10));
            bytes.extend((0..3072).map(|_| rng.random::<u8>()));
        }
        let ds: Dataset = parse_cifar10(&bytes).unwrap();
        prop_assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(encode_cifar10(&ds).unwrap(), bytes);
    }
}

#[test]
fn forced_identical_heads_make_every_rule_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = common::random_outputs(&mut rng, 50, 6, 0).logits.remove(0);
    let logits = vec![base.clone(); 7];
    let single = combine_heads(&[base], EnsembleRule::AvgLogits);
    for rule in EnsembleRule::ALL {
        assert_eq!(combine_heads(&logits, rule), single, "{rule}");
    }
}
