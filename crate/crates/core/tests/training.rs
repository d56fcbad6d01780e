use tuplelab::contrast::{train_contrastive, ContrastiveData, EncoderArch, NegativeProposal, TrainConfig};
use tuplelab::eval::{linear_probe, raw_features, ProbeSplit};
use tuplelab::mi::gaussian_covariance_mi;
use tuplelab::numerics::{Activation, Matrix, OptimizerConfig, Parameters, SeededRng};
use tuplelab::sampleopt::{crossmodal_reward, RewardConfig};
use tuplelab::synthdata::{gen_latent_factor, gen_latent_views, LatentFactorConfig, ModalitySpec, MultiModalDataset};

fn two_modalities() -> LatentFactorConfig {
    let specs = vec![ModalitySpec::gaussian("a", 2, 1.5), ModalitySpec::gaussian("b", 2, 1.5)];
    LatentFactorConfig::new(specs, 2, 2)
}

fn quick_train(k: usize, steps: usize) -> TrainConfig {
    let mut t = TrainConfig::new(k, steps);
    t.arch = EncoderArch {
        modality_hidden: 16,
        modality_out: 8,
        fusion_hidden: 16,
        embedding_dim: 8,
        activation: Activation::Relu,
    };
    t.optimizer = OptimizerConfig::adam(0.003);
    t.batch_size = 64;
    t.anchors_per_step = 32;
    t.pool_size = 128;
    t
}

/// MI between the two views' tuples under a Gaussian fit of their joint covariance.
fn view_mi(a: &MultiModalDataset, b: &MultiModalDataset) -> f64 {
    let x = Matrix::hconcat(&a.views().iter().chain(b.views()).collect::<Vec<_>>()).unwrap();
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|c| (0..n).map(|r| x.get(r, c)).sum::<f64>() / n as f64).collect();
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        for i in 0..d {
            for j in 0..d {
                let v = cov.get(i, j) + (x.get(r, i) - mean[i]) * (x.get(r, j) - mean[j]) / (n - 1) as f64;
                cov.set(i, j, v);
            }
        }
    }
    let da: usize = a.specs().iter().map(|s| s.dim).sum();
    gaussian_covariance_mi(&cov, &(0..da).collect::<Vec<_>>(), &(da..d).collect::<Vec<_>>()).unwrap()
}

#[test]
fn training_recovers_a_good_share_of_the_view_information() {
    let (a, b) = gen_latent_views(&two_modalities(), 3000, 1).unwrap();
    let mi = view_mi(&a, &b);
    let mut cfg = quick_train(2, 500);
    cfg.proposal = NegativeProposal::regular_only(2);
    let out = train_contrastive(&ContrastiveData::paired(a, b).unwrap(), &cfg).unwrap();
    let tail = &out.curve[out.curve.len() - 50..];
    let bound = tail.iter().map(|p| p.bound).sum::<f64>() / tail.len() as f64;
    let target = 0.5 * mi.min((64f64).ln());
    assert!(bound > target, "bound {bound:.3}, view MI {mi:.3}");
}

#[test]
fn training_is_deterministic() {
    let (a, b) = gen_latent_views(&two_modalities(), 400, 2).unwrap();
    let data = ContrastiveData::paired(a, b).unwrap();
    let mut cfg = quick_train(2, 40);
    cfg.dropout = 0.5;
    let first = train_contrastive(&data, &cfg).unwrap();
    let second = train_contrastive(&data, &cfg).unwrap();
    assert_eq!(first.curve, second.curve);
    assert_eq!(first.encoder.to_flat(), second.encoder.to_flat());
    cfg.seed = 1;
    let other = train_contrastive(&data, &cfg).unwrap();
    assert_ne!(first.encoder.to_flat(), other.encoder.to_flat());
}

#[test]
fn zero_steps_leave_the_initialisation_alone() {
    let (a, b) = gen_latent_views(&two_modalities(), 200, 3).unwrap();
    let data = ContrastiveData::paired(a, b).unwrap();
    let zero = train_contrastive(&data, &quick_train(2, 0)).unwrap();
    assert!(zero.curve.is_empty());
    // the initialisation does not depend on the sampling or optimisation settings
    let mut other = quick_train(2, 0);
    other.proposal = NegativeProposal::regular_only(2);
    other.optimizer = OptimizerConfig::adam(0.5);
    assert_eq!(zero.encoder.to_flat(), train_contrastive(&data, &other).unwrap().encoder.to_flat());
    let one = train_contrastive(&data, &quick_train(2, 1)).unwrap();
    assert_ne!(zero.encoder.to_flat(), one.encoder.to_flat());
}

#[test]
fn raw_probe_accuracy_follows_signal_to_noise() {
    let specs = [("strong", 2.0), ("mid", 1.0), ("weak", 0.5)]
        .iter()
        .map(|(n, s)| ModalitySpec::gaussian(*n, 16, *s))
        .collect();
    // each modality sees only the label coordinate, through a map wide enough
    // that its norm barely varies between modalities
    let mut cfg = LatentFactorConfig::new(specs, 4, 4);
    cfg.observed = vec![vec![0]; 3];
    let mut ordered = 0;
    for seed in 0..3 {
        let ds = gen_latent_factor(&cfg, 5000, seed).unwrap();
        let split = ProbeSplit::holdout(ds.len(), 0.3, seed).unwrap();
        let labels = ds.labels().unwrap();
        let acc: Vec<f64> = (0..3)
            .map(|k| linear_probe(&raw_features(&ds, &[k]).unwrap(), labels, &split, 200).unwrap().accuracy)
            .collect();
        ordered += usize::from(acc[0] > acc[1] && acc[1] > acc[2]);
    }
    assert!(ordered >= 2, "ordered on {ordered}/3 seeds");
}

#[test]
fn single_distractor_reward_lies_between_chance_and_perfect() {
    let (a, b) = gen_latent_views(&two_modalities(), 1500, 4).unwrap();
    let out = train_contrastive(&ContrastiveData::paired(a, b).unwrap(), &quick_train(2, 300)).unwrap();
    let (eval, _) = gen_latent_views(&two_modalities(), 500, 40).unwrap();
    let mut reward = RewardConfig::new(eval);
    reward.distractors = 1;
    let r = crossmodal_reward(&out.encoder, &reward, &mut SeededRng::new(0)).unwrap();
    assert!(r > 0.5 && r < 1.0, "reward {r}");
}
