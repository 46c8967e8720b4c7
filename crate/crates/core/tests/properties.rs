use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use dpcsgp::compression::{CompressorKind, CompressorSpec};
use dpcsgp::privacy::clip_gradient;
use dpcsgp::topology::{build_graph, build_mixing, estimate_constants, GraphKind, MixingMatrix};

fn kind() -> impl Strategy<Value = CompressorKind> {
    prop_oneof![
        Just(CompressorKind::Identity),
        (0.05f64..1.0).prop_map(|a| CompressorKind::Rand { a }),
        (6u32..=20).prop_map(|b| CompressorKind::Gsgd { b }),
    ]
}

fn random_graph() -> impl Strategy<Value = MixingMatrix> {
    (2usize..9, prop::collection::vec((0usize..9, 0usize..9), 0..20)).prop_map(|(n, extra)| {
        // a ring keeps every sample strongly connected
        let mut edges: Vec<(usize, usize)> = (0..n).map(|j| (j, (j + 1) % n)).collect();
        edges.extend(extra.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b));
        build_mixing(&build_graph(&GraphKind::Custom(edges), n).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compression_is_deterministic_and_respects_support(
        k in kind(),
        x in prop::collection::vec(-10.0f64..10.0, 8..40),
        seed in any::<u64>(),
    ) {
        let spec = match CompressorSpec::new(k, x.len()) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let a = spec.compress(&x, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        let b = spec.compress(&x, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a.payload, &b.payload);
        prop_assert_eq!(a.bits, spec.bits());
        for (q, v) in a.payload.iter().zip(&x) {
            // zero stays zero and no sign is flipped
            prop_assert!(*v != 0.0 || *q == 0.0);
            prop_assert!(q * v >= 0.0);
        }
        let zero = spec.compress(&vec![0.0; x.len()], &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(zero.payload.iter().all(|q| *q == 0.0));
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(
        g in prop::collection::vec(-100.0f64..100.0, 1..30),
        bound in 0.01f64..50.0,
    ) {
        let once = clip_gradient(&g, bound);
        let twice = clip_gradient(&once, bound);
        let norm = once.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= bound * (1.0 + 1e-12));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn mixing_constants_are_consistent(a in random_graph()) {
        prop_assert!(a.max_column_defect() <= 1e-12);
        let k = estimate_constants(&a, 400).unwrap();
        prop_assert!(k.perron_defect(&a) <= 1e-10);
        prop_assert!(k.beta > 0.0);
        prop_assert!(k.lambda > 0.0 && k.lambda < 1.0);
        for w in k.residuals.windows(2) {
            // the residual is monotone up to a small transient
            prop_assert!(w[1] <= w[0] * 1.05 + 1e-12);
        }
    }
}
