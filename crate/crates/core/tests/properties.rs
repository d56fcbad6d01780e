use proptest::prelude::*;
use tuplelab::contrast::{
    naive_disturb_negatives, sample_negatives, tuple_info_nce_loss, CriticConfig, FusionEncoder, EncoderArch,
    NegativeCategory, NegativeProposal, Score,
};
use tuplelab::mi::exact_discrete_mi;
use tuplelab::numerics::{gradcheck, Activation, GradcheckConfig, Matrix, Mlp, Parameters, SeededRng};
use tuplelab::sampleopt::{dirichlet_candidates, simplex_grid, simplex_normalize};
use tuplelab::synthdata::{
    decode_dataset, encode_dataset, gen_discrete_tuples, gen_latent_factor, DiscreteJoint, LatentFactorConfig,
    MissingSet, ModalitySpec,
};

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Relu), Just(Activation::Identity)]
}

fn latent_dataset(k: usize, n: usize, seed: u64) -> tuplelab::synthdata::MultiModalDataset {
    let specs = (0..k).map(|m| ModalitySpec::gaussian(format!("m{m}"), 1 + m % 3, 1.0)).collect();
    gen_latent_factor(&LatentFactorConfig::new(specs, 2, 2), n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mlp_gradient_matches_finite_differences(
        dims in prop::collection::vec(1usize..5, 2..5),
        act in activation(),
        seed in 0u64..1000,
    ) {
        let mut rng = SeededRng::new(seed);
        let mlp = Mlp::random(&dims, act, &mut rng).unwrap();
        let rows = 3;
        let input = Matrix::from_vec(rows, dims[0], (0..rows * dims[0]).map(|_| rng.normal()).collect()).unwrap();
        let target: Vec<f64> = (0..rows * dims[dims.len() - 1]).map(|_| rng.normal()).collect();
        let loss_fn = |flat: &[f64]| {
            let mut m = mlp.clone();
            m.set_flat(flat)?;
            let (out, cache) = m.forward(&input)?;
            let diff: Vec<f64> = out.data().iter().zip(&target).map(|(o, t)| o - t).collect();
            let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
            let (grads, _) = m.backward(&cache, &Matrix::from_vec(out.rows(), out.cols(), diff)?)?;
            Ok((loss, grads.to_flat()))
        };
        let report = gradcheck(loss_fn, &mlp.to_flat(), &GradcheckConfig { seed, ..GradcheckConfig::default() }).unwrap();
        prop_assert!(report.pass, "rel err {:.2e}", report.max_rel_err);
    }

    #[test]
    fn encoder_embeddings_are_unit_length(k in 1usize..4, seed in 0u64..1000, mask_bits in 0u32..8) {
        let ds = latent_dataset(k, 5, seed);
        let dims: Vec<usize> = ds.specs().iter().map(|s| s.dim).collect();
        let enc = FusionEncoder::new(&EncoderArch::default(), &dims, &mut SeededRng::new(seed)).unwrap();
        let mut missing = MissingSet::from_bits(mask_bits & ((1 << k) - 1));
        if missing.covers_all(k) {
            missing = MissingSet::from_bits(0);
        }
        let e = enc.encode(&ds.tuple(0), missing).unwrap();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dataset_round_trips_through_bytes(k in 1usize..4, n in 2usize..40, seed in 0u64..1000) {
        let ds = latent_dataset(k, n, seed);
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn discrete_mi_is_symmetric_and_bounded(a in 2usize..5, b in 2usize..5, seed in 0u64..1000) {
        let mut rng = SeededRng::new(seed);
        let weights: Vec<f64> = (0..a * b).map(|_| rng.uniform() + 1e-3).collect();
        let joint = DiscreteJoint::from_weights(vec![a, b], weights).unwrap();
        let ab = exact_discrete_mi(&joint, &[0], &[1]).unwrap();
        let ba = exact_discrete_mi(&joint, &[1], &[0]).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= (a.min(b) as f64).ln() + 1e-12);
    }

    #[test]
    fn cosine_critic_ignores_scale(
        v in prop::collection::vec(-3.0f64..3.0, 4),
        w in prop::collection::vec(-3.0f64..3.0, 4),
        s in 0.1f64..10.0,
    ) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3) && w.iter().any(|x| x.abs() > 1e-3));
        let critic = CriticConfig { score: Score::Cosine, temperature: 0.1 };
        let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
        prop_assert!((critic.score(&v, &w) - critic.score(&scaled, &w)).abs() < 1e-9);
    }

    #[test]
    fn loss_is_nonnegative_and_logit_gradient_balances(
        seed in 0u64..1000,
        negs in 1usize..8,
        temperature in 0.05f64..2.0,
    ) {
        let mut rng = SeededRng::new(seed);
        let mut v = |d: usize| -> Vec<f64> { (0..d).map(|_| rng.normal()).collect() };
        let anchor = v(3);
        let positive = v(3);
        let negatives: Vec<Vec<f64>> = (0..negs).map(|_| v(3)).collect();
        let refs: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
        let critic = CriticConfig { score: Score::Dot, temperature };
        let terms = tuple_info_nce_loss(&critic, &anchor, &positive, &refs).unwrap();
        prop_assert!(terms.loss >= 0.0);
        prop_assert_eq!(terms.n_softmax(), negs + 1);
        // with a dot critic, d loss / d candidate = (softmax - onehot) * anchor / tau,
        // and the softmax weights minus the one-hot sum to zero
        let mut total = terms.grad_positive.clone();
        for g in &terms.grad_negatives {
            for (t, x) in total.iter_mut().zip(g) {
                *t += x;
            }
        }
        prop_assert!(total.iter().all(|x| x.abs() < 1e-9), "{:?}", total);
    }

    #[test]
    fn disturbed_negatives_differ_from_their_base_only_in_one_modality(
        k in 2usize..5,
        seed in 0u64..1000,
    ) {
        let pool = latent_dataset(k, 20, seed);
        let mut rng = SeededRng::new(seed);
        let negs = sample_negatives(&pool, &NegativeProposal::uniform(k), 50, &mut rng).unwrap();
        for n in &negs {
            match n.category {
                NegativeCategory::Regular => prop_assert!(n.sources.iter().all(|s| *s == n.sources[0])),
                NegativeCategory::Disturbed(m) => {
                    let base = n.sources[(m + 1) % k];
                    for (j, s) in n.sources.iter().enumerate() {
                        if j != m {
                            prop_assert_eq!(*s, base);
                        }
                    }
                }
                NegativeCategory::Naive => prop_assert!(false, "naive negative from the mixture proposal"),
            }
            for (j, s) in n.sources.iter().enumerate() {
                prop_assert_eq!(&n.tuple.views[j][..], pool.view(j, *s));
            }
        }
        let naive = naive_disturb_negatives(&pool, 10, &mut rng).unwrap();
        prop_assert!(naive.iter().all(|n| n.category == NegativeCategory::Naive && n.sources.len() == k));
    }

    #[test]
    fn proposals_live_on_the_simplex(
        weights in prop::collection::vec(0.0f64..5.0, 2..6),
        seed in 0u64..1000,
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-6);
        let p = simplex_normalize(&weights).unwrap();
        prop_assert!((p.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = SeededRng::new(seed);
        for c in dirichlet_candidates(weights.len(), 3, &mut rng).unwrap() {
            prop_assert!((c.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(c.alpha().iter().all(|a| *a >= 0.0));
        }
    }

    #[test]
    fn discrete_samples_stay_in_their_alphabets(seed in 0u64..1000) {
        let joint = DiscreteJoint::uniform(vec![2, 3, 4]).unwrap();
        let ds = gen_discrete_tuples(&joint, 50, seed).unwrap();
        for (k, size) in [2usize, 3, 4].into_iter().enumerate() {
            for i in 0..ds.len() {
                let v = ds.view(k, i);
                prop_assert_eq!(v.len(), 1);
                prop_assert!(v[0].fract() == 0.0 && v[0] >= 0.0 && (v[0] as usize) < size);
            }
        }
    }
}

#[test]
fn simplex_grid_sizes_follow_stars_and_bars() {
    // C(r + m - 1, m - 1) points at resolution r over m weights
    assert_eq!(simplex_grid(3, 2).unwrap().len(), 6);
    assert_eq!(simplex_grid(4, 3).unwrap().len(), 20);
}
