use approx::assert_relative_eq;
use orderflow::features::{NormStats, Variant};
use orderflow::net::{
    adam_step, batch_gradient, dropout_mask, predict, softmax, AdamConfig, AdamState, Hyper,
    LabelledSequence, ModelConfig, ModelParams, Sequence,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(variant: Variant, seed: u64) -> ModelParams {
    let hyper = Hyper {
        lstm_sizes: vec![5, 4],
        dense_layers: 2,
        head_width: 3,
        ..Hyper::default()
    };
    let cfg = ModelConfig::new(variant, 2, &hyper).unwrap();
    let width = cfg.numeric_width;
    ModelParams::init(
        cfg,
        NormStats::identity(width),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn sequence(params: &ModelParams, steps: usize, rng: &mut ChaCha8Rng) -> Sequence {
    let width = params.config.numeric_width;
    Sequence {
        steps,
        cats: if params.config.categorical() {
            (0..steps)
                .map(|_| {
                    [
                        rng.gen_range(0..3),
                        rng.gen_range(0..2),
                        rng.gen_range(0..24),
                    ]
                })
                .collect()
        } else {
            Vec::new()
        },
        numeric: (0..steps * width)
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect(),
    }
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(a in -700.0f64..700.0, b in -700.0f64..700.0) {
        let p = softmax(&[a, b]);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        // shift invariance
        let q = softmax(&[a + 3.5, b + 3.5]);
        prop_assert!((p[0] - q[0]).abs() <= 1e-12);
    }

    #[test]
    fn predictions_are_distributions(seed in 0u64..200, steps in 1usize..12, v in 0usize..3) {
        let params = model(Variant::ALL[v], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let p = predict(&params, &sequence(&params, steps, &mut rng)).unwrap();
        prop_assert_eq!(p.len(), 2);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    /// The batch gradient is a mean: it does not depend on sample order.
    #[test]
    fn gradient_ignores_batch_order(seed in 0u64..100, n in 2usize..6) {
        let params = model(Variant::OrderFlow, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let batch: Vec<LabelledSequence> = (0..n)
            .map(|i| LabelledSequence { sequence: sequence(&params, 3, &mut rng), label: (i % 2) as u8 })
            .collect();
        let mut rev = batch.clone();
        rev.reverse();
        let (la, ga) = batch_gradient(&params, &batch, None).unwrap();
        let (lb, gb) = batch_gradient(&params, &rev, None).unwrap();
        prop_assert!((la - lb).abs() <= 1e-12);
        for (x, y) in ga.iter().zip(&gb) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn dropout_masks_are_inverted(rate in 0.0f64..0.9, seed in 0u64..1000) {
        let mask = dropout_mask(64, rate, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let keep = 1.0 / (1.0 - rate);
        prop_assert!(mask.iter().all(|&m| m == 0.0 || (m - keep).abs() <= 1e-12));
    }
}

#[test]
fn adam_moves_against_the_gradient() {
    let mut params = vec![1.0, -2.0, 0.5];
    let grads = vec![0.3, -0.1, 0.0];
    let mut state = AdamState::new(3);
    adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
    assert_relative_eq!(params[0], 1.0 - 1e-3, epsilon = 1e-9);
    assert_relative_eq!(params[1], -2.0 + 1e-3, epsilon = 1e-9);
    assert_eq!(params[2], 0.5);
}

#[test]
fn random_init_loss_is_near_ln2() {
    let params = model(Variant::Bench1, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let batch: Vec<LabelledSequence> = (0..200)
        .map(|i| LabelledSequence {
            sequence: sequence(&params, 6, &mut rng),
            label: (i % 2) as u8,
        })
        .collect();
    let (loss, _) = batch_gradient(&params, &batch, None).unwrap();
    assert_relative_eq!(loss, std::f64::consts::LN_2, epsilon = 0.05);
}
