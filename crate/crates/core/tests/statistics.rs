use tuplelab::contrast::{sample_negatives, NegativeCategory, NegativeProposal};
use tuplelab::numerics::SeededRng;
use tuplelab::synthdata::{gen_discrete_tuples, gen_latent_factor, DiscreteJoint, LatentFactorConfig, ModalitySpec};

fn chi_square(observed: &[usize], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

#[test]
fn discrete_sampler_matches_its_table() {
    let mut rng = SeededRng::new(11);
    let weights: Vec<f64> = (0..24).map(|_| 0.2 + rng.uniform()).collect();
    let joint = DiscreteJoint::from_weights(vec![2, 3, 4], weights).unwrap();
    let n = 100_000;
    let ds = gen_discrete_tuples(&joint, n, 3).unwrap();
    let mut counts = vec![0usize; joint.num_cells()];
    for i in 0..n {
        let symbols: Vec<usize> = (0..3).map(|k| ds.view(k, i)[0] as usize).collect();
        counts[joint.encode(&symbols).unwrap()] += 1;
    }
    let expected: Vec<f64> = joint.probs().iter().map(|p| p * n as f64).collect();
    // 23 degrees of freedom, upper 0.1% point
    let stat = chi_square(&counts, &expected);
    assert!(stat < 49.728, "chi-square {stat:.2}");
}

#[test]
fn negative_categories_follow_alpha() {
    let specs = (0..3).map(|m| ModalitySpec::gaussian(format!("m{m}"), 2, 1.0)).collect();
    let pool = gen_latent_factor(&LatentFactorConfig::new(specs, 2, 0), 30, 1).unwrap();
    let proposal = NegativeProposal::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let n = 100_000;
    let negs = sample_negatives(&pool, &proposal, n, &mut SeededRng::new(4)).unwrap();
    let mut counts = [0usize; 4];
    for neg in &negs {
        let slot = match neg.category {
            NegativeCategory::Regular => 0,
            NegativeCategory::Disturbed(k) => k + 1,
            NegativeCategory::Naive => panic!("naive negative from the mixture"),
        };
        counts[slot] += 1;
    }
    let expected: Vec<f64> = proposal.alpha().iter().map(|a| a * n as f64).collect();
    // 3 degrees of freedom, upper 0.1% point
    let stat = chi_square(&counts, &expected);
    assert!(stat < 16.266, "chi-square {stat:.2}, counts {counts:?}");
}

#[test]
fn zero_weight_categories_never_appear() {
    let specs = (0..2).map(|m| ModalitySpec::gaussian(format!("m{m}"), 1, 1.0)).collect();
    let pool = gen_latent_factor(&LatentFactorConfig::new(specs, 1, 0), 10, 1).unwrap();
    let proposal = NegativeProposal::new(vec![0.5, 0.0, 0.5]).unwrap();
    let negs = sample_negatives(&pool, &proposal, 20_000, &mut SeededRng::new(8)).unwrap();
    assert!(negs.iter().all(|n| n.category != NegativeCategory::Disturbed(0)));
}
