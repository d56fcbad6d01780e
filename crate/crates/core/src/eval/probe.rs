use crate::contrast::FusionEncoder;
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Activation, Matrix, Mlp, Optimizer, OptimizerConfig, SeededRng};
use crate::synthdata::{MissingSet, MultiModalDataset};

/// Disjoint train and held-out test indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl ProbeSplit {
    /// Random split holding out `round(test_fraction * n)` samples.
    pub fn holdout(n: usize, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
        }
        let n_test = (test_fraction * n as f64).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::Config(format!("split of {n} samples leaves an empty side")));
        }
        let mut rng = SeededRng::new(seed).derive(7);
        let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
        Ok(Self {
            test: perm[..n_test].to_vec(),
            train: perm[n_test..].to_vec(),
            seed,
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("probe split has an empty side".into()));
        }
        let mut side = vec![0u8; n];
        for (tag, idx) in [(1u8, &self.train), (2u8, &self.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Config(format!("split index {i} out of range for {n} samples")));
                }
                if side[i] != 0 {
                    return Err(Error::Config(format!("sample {i} appears twice in the split")));
                }
                side[i] = tag;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Linear,
    Knn(usize),
}

impl ProbeKind {
    pub fn name(self) -> String {
        match self {
            ProbeKind::Linear => "linear".into(),
            ProbeKind::Knn(k) => format!("knn{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// Accuracy on the held-out side only.
    pub accuracy: f64,
    pub kind: ProbeKind,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

fn check_inputs(features: &Matrix, labels: &[usize], split: &ProbeSplit) -> Result<usize> {
    if labels.len() != features.rows() {
        return Err(Error::shape("labels", features.rows(), labels.len()));
    }
    split.validate(labels.len())?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[split.train[0]];
    if split.train.iter().all(|&i| labels[i] == first) {
        return Err(Error::DegenerateLabels(format!(
            "every training label is {first}; a probe needs at least two classes"
        )));
    }
    Ok(classes)
}

/// Affine softmax classifier on standardised frozen features, trained by
/// full-batch Adam for `epochs` iterations; reports held-out accuracy.
pub fn linear_probe(features: &Matrix, labels: &[usize], split: &ProbeSplit, epochs: usize) -> Result<ProbeResult> {
    let classes = check_inputs(features, labels, split)?;
    let d = features.cols();
    let train = features.select_rows(&split.train);
    let (mean, std) = column_stats(&train);
    let standardise = |m: &Matrix| {
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
        out
    };
    let x = standardise(&train);
    let y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let mut model = Mlp::zeros(&[d, classes], Activation::Identity)?;
    let mut opt = Optimizer::new(OptimizerConfig {
        weight_decay: 1e-4,
        ..OptimizerConfig::adam(0.05)
    })?;
    let inv_n = 1.0 / y.len() as f64;
    for _ in 0..epochs {
        let (logits, cache) = model.forward(&x)?;
        let mut upstream = Matrix::zeros(logits.rows(), classes);
        for (r, &label) in y.iter().enumerate() {
            let (_, g) = softmax_cross_entropy(logits.row(r), label)?;
            for (u, gv) in upstream.row_mut(r).iter_mut().zip(g) {
                *u = gv * inv_n;
            }
        }
        let (grads, _) = model.backward(&cache, &upstream)?;
        opt.step(&mut model, &grads)?;
    }
    let test = standardise(&features.select_rows(&split.test));
    let (logits, _) = model.forward(&test)?;
    let correct = split
        .test
        .iter()
        .enumerate()
        .filter(|(r, &i)| argmax(logits.row(*r)) == labels[i])
        .count();
    Ok(ProbeResult {
        accuracy: correct as f64 / split.test.len() as f64,
        kind: ProbeKind::Linear,
        train_size: split.train.len(),
        test_size: split.test.len(),
        seed: split.seed,
    })
}

/// Majority vote among the `k` nearest training points (Euclidean, on
/// standardised features); ties go to the smaller label.
pub fn knn_probe(features: &Matrix, labels: &[usize], split: &ProbeSplit, k: usize) -> Result<ProbeResult> {
    let classes = check_inputs(features, labels, split)?;
    if k == 0 || k > split.train.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={}",
            split.train.len()
        )));
    }
    let train = features.select_rows(&split.train);
    let (mean, std) = column_stats(&train);
    let z = |row: &[f64]| -> Vec<f64> { row.iter().enumerate().map(|(c, v)| (v - mean[c]) / std[c]).collect() };
    let train_z: Vec<Vec<f64>> = split.train.iter().map(|&i| z(features.row(i))).collect();
    let mut correct = 0;
    for &i in &split.test {
        let q = z(features.row(i));
        let mut dists: Vec<(f64, usize)> = train_z
            .iter()
            .zip(&split.train)
            .map(|(t, &j)| (t.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum(), labels[j]))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; classes];
        for (_, l) in &dists[..k] {
            votes[*l] += 1;
        }
        let pred = (0..classes).max_by_key(|&c| (votes[c], std::cmp::Reverse(c))).unwrap_or(0);
        if pred == labels[i] {
            correct += 1;
        }
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / split.test.len() as f64,
        kind: ProbeKind::Knn(k),
        train_size: split.train.len(),
        test_size: split.test.len(),
        seed: split.seed,
    })
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows().max(1) as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (acc, v) in mean.iter_mut().zip(r) {
            *acc += v / n;
        }
    }
    let mut var = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for ((acc, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (v - mu).powi(2) / n;
        }
    }
    // constant columns stay at zero after centring
    let std = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Embeds every sample of `ds` with the same missing set.
pub fn embed_dataset(encoder: &FusionEncoder, ds: &MultiModalDataset, missing: MissingSet) -> Result<Matrix> {
    let tuples: Vec<_> = (0..ds.len()).map(|i| ds.tuple(i)).collect();
    let items: Vec<_> = tuples.iter().map(|t| (t, missing)).collect();
    encoder.encode_batch(&items)
}

/// Raw views of the listed modalities, concatenated.
pub fn raw_features(ds: &MultiModalDataset, modalities: &[usize]) -> Result<Matrix> {
    let parts = modalities
        .iter()
        .map(|&k| {
            ds.views()
                .get(k)
                .ok_or_else(|| Error::Config(format!("modality {k} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::hconcat(&parts)
}
