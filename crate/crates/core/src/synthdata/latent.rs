use super::types::{ModalitySpec, MultiModalDataset, Provenance, ViewKind};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

/// Shared-latent generator: every modality observes a fixed random linear
/// map of one latent vector, scaled by its snr, plus unit noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorConfig {
    pub specs: Vec<ModalitySpec>,
    pub latent_dim: usize,
    /// Labels are equal-mass buckets of `z[label_coordinate]`; 0 disables labels.
    pub num_classes: usize,
    pub label_coordinate: usize,
    /// Per-modality std of an extra sample-specific nuisance vector that is
    /// independent of the latent and of every other modality, and shared by
    /// every view of a sample. Empty means none.
    pub nuisance_std: Vec<f64>,
    /// Latent coordinates each modality observes; the map is zero elsewhere.
    /// Empty means every modality observes the whole latent.
    pub observed: Vec<Vec<usize>>,
}

impl LatentFactorConfig {
    pub fn new(specs: Vec<ModalitySpec>, latent_dim: usize, num_classes: usize) -> Self {
        Self {
            specs,
            latent_dim,
            num_classes,
            label_coordinate: 0,
            nuisance_std: Vec::new(),
            observed: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.specs.is_empty() {
            return Err(Error::Config("need at least one modality".into()));
        }
        for s in &self.specs {
            s.validate()?;
        }
        if self.num_classes == 1 {
            return Err(Error::Config("num_classes must be 0 (no labels) or >= 2".into()));
        }
        if self.num_classes > 0 && self.label_coordinate >= self.latent_dim {
            return Err(Error::Config(format!(
                "label_coordinate {} outside latent_dim {}",
                self.label_coordinate, self.latent_dim
            )));
        }
        if !self.nuisance_std.is_empty() && self.nuisance_std.len() != self.specs.len() {
            return Err(Error::shape(
                "nuisance_std entries",
                self.specs.len(),
                self.nuisance_std.len(),
            ));
        }
        if !self.observed.is_empty() {
            if self.observed.len() != self.specs.len() {
                return Err(Error::shape("observed entries", self.specs.len(), self.observed.len()));
            }
            for (k, obs) in self.observed.iter().enumerate() {
                if obs.is_empty() || obs.iter().any(|&c| c >= self.latent_dim) {
                    return Err(Error::Config(format!(
                        "modality {k} must observe a non-empty set of latent coordinates below {}",
                        self.latent_dim
                    )));
                }
            }
        }
        if self.nuisance_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("nuisance_std entries must be >= 0".into()));
        }
        Ok(())
    }

    /// Unit-norm map rows, oriented so their first observed latent component is >= 0.
    pub fn linear_maps(&self, seed: u64) -> Vec<Matrix> {
        let mut rng = SeededRng::new(seed).derive(1);
        self.specs
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let rows = if s.kind == ViewKind::Discrete { 1 } else { s.dim };
                let seen = |c: usize| self.observed.get(k).is_none_or(|obs| obs.contains(&c));
                let lead = (0..self.latent_dim).find(|&c| seen(c)).unwrap_or(0);
                let mut m = Matrix::zeros(rows, self.latent_dim);
                for r in 0..rows {
                    let row = m.row_mut(r);
                    for (c, v) in row.iter_mut().enumerate() {
                        let draw = rng.normal();
                        *v = if seen(c) { draw } else { 0.0 };
                    }
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                    let sign = if row[lead] < 0.0 { -1.0 } else { 1.0 };
                    for v in row.iter_mut() {
                        *v *= sign / norm;
                    }
                }
                m
            })
            .collect()
    }
}

pub fn gen_latent_factor(config: &LatentFactorConfig, n: usize, seed: u64) -> Result<MultiModalDataset> {
    let latent = draw_latent(config, n, seed)?;
    render(config, &latent, seed, SeededRng::new(seed), "latent_factor")
}

/// Two datasets sharing latents, maps and labels whose per-modality noise is
/// drawn independently, so row `i` of each is a natural pair of observations
/// of the same underlying sample.
pub fn gen_latent_views(
    config: &LatentFactorConfig,
    n: usize,
    seed: u64,
) -> Result<(MultiModalDataset, MultiModalDataset)> {
    let latent = draw_latent(config, n, seed)?;
    let first = render(config, &latent, seed, SeededRng::new(seed), "latent_factor")?;
    let second = render(config, &latent, seed, SeededRng::new(seed).derive(5), "latent_factor_view")?;
    Ok((first, second))
}

fn draw_latent(config: &LatentFactorConfig, n: usize, seed: u64) -> Result<Matrix> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let mut latent_rng = SeededRng::new(seed).derive(2);
    Matrix::from_vec(
        n,
        config.latent_dim,
        (0..n * config.latent_dim).map(|_| latent_rng.normal()).collect(),
    )
}

fn render(
    config: &LatentFactorConfig,
    latent: &Matrix,
    seed: u64,
    root: SeededRng,
    generator: &str,
) -> Result<MultiModalDataset> {
    let n = latent.rows();
    let maps = config.linear_maps(seed);

    let mut views = Vec::with_capacity(config.specs.len());
    for (k, (spec, map)) in config.specs.iter().zip(&maps).enumerate() {
        let mut noise_rng = root.derive(3).derive(k as u64);
        // the nuisance belongs to the sample, so every view of it shares the draw
        let mut nuisance_rng = SeededRng::new(seed).derive(4).derive(k as u64);
        let nuisance = config.nuisance_std.get(k).copied().unwrap_or(0.0);
        let mut clean = latent.matmul_t(map)?;
        for v in clean.data_mut() {
            *v = spec.snr * *v + noise_rng.normal();
        }
        if nuisance > 0.0 {
            for v in clean.data_mut() {
                *v += nuisance * nuisance_rng.normal();
            }
        }
        let view = match spec.kind {
            ViewKind::Gaussian | ViewKind::Coords2d => clean,
            ViewKind::Discrete => {
                let symbols = equal_mass_buckets(clean.data(), spec.alphabet_size);
                Matrix::from_vec(n, 1, symbols.into_iter().map(|s| s as f64).collect())?
            }
        };
        views.push(view);
    }

    let labels = if config.num_classes >= 2 {
        let coord: Vec<f64> = (0..n)
            .map(|i| latent.get(i, config.label_coordinate))
            .collect();
        Some(equal_mass_buckets(&coord, config.num_classes))
    } else {
        None
    };

    let mut params = vec![
        ("n".to_string(), n.to_string()),
        ("latent_dim".to_string(), config.latent_dim.to_string()),
        ("num_classes".to_string(), config.num_classes.to_string()),
        ("label_coordinate".to_string(), config.label_coordinate.to_string()),
    ];
    if !config.observed.is_empty() {
        params.push((
            "observed".to_string(),
            config
                .observed
                .iter()
                .map(|o| o.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join(","),
        ));
    }
    if !config.nuisance_std.is_empty() {
        params.push((
            "nuisance_std".to_string(),
            config
                .nuisance_std
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(","),
        ));
    }
    MultiModalDataset::new(
        config.specs.clone(),
        views,
        labels,
        Provenance {
            generator: generator.into(),
            seed,
            params,
        },
    )
}

/// Rank-based bucketing into `buckets` classes of (near) equal size.
pub(crate) fn equal_mass_buckets(values: &[f64], buckets: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = rank * buckets / n;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        cov / (va * vb).sqrt()
    }

    #[test]
    fn zero_latent_dim_is_config_error() {
        let cfg = LatentFactorConfig::new(vec![ModalitySpec::gaussian("a", 1, 1.0)], 0, 0);
        assert!(matches!(gen_latent_factor(&cfg, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cross_modal_correlation_matches_closed_form() {
        // v_k = s z + e_k with unit maps: rho = s^2 / (s^2 + 1) = 0.8 at s = 2
        let specs = vec![
            ModalitySpec::gaussian("a", 1, 2.0),
            ModalitySpec::gaussian("b", 1, 2.0),
        ];
        let cfg = LatentFactorConfig::new(specs, 1, 0);
        let ds = gen_latent_factor(&cfg, 100_000, 11).unwrap();
        let rho = corr(ds.views()[0].data(), ds.views()[1].data());
        assert!((rho - 0.8).abs() < 0.02, "rho = {rho}");
    }

    #[test]
    fn zero_snr_views_are_uncorrelated() {
        let specs = vec![
            ModalitySpec::gaussian("a", 1, 0.0),
            ModalitySpec::gaussian("b", 1, 0.0),
        ];
        let ds = gen_latent_factor(&LatentFactorConfig::new(specs, 1, 0), 50_000, 3).unwrap();
        let rho = corr(ds.views()[0].data(), ds.views()[1].data());
        assert!(rho.abs() < 0.02, "rho = {rho}");
    }

    #[test]
    fn huge_snr_is_a_deterministic_map_of_the_latent() {
        let specs = vec![ModalitySpec::gaussian("a", 1, 1e6)];
        let ds = gen_latent_factor(&LatentFactorConfig::new(specs.clone(), 1, 0), 2000, 5).unwrap();
        // Same seed with a different modality set shares the latent draw.
        let specs2 = vec![specs[0].clone(), ModalitySpec::gaussian("b", 1, 1e6)];
        let ds2 = gen_latent_factor(&LatentFactorConfig::new(specs2, 1, 0), 2000, 5).unwrap();
        let rho = corr(ds.views()[0].data(), ds2.views()[1].data());
        assert!(rho > 1.0 - 1e-9, "rho = {rho}");
    }

    #[test]
    fn labels_are_balanced_and_seeded() {
        let specs = vec![ModalitySpec::gaussian("a", 3, 1.0)];
        let cfg = LatentFactorConfig::new(specs, 2, 4);
        let a = gen_latent_factor(&cfg, 1000, 9).unwrap();
        let b = gen_latent_factor(&cfg, 1000, 9).unwrap();
        assert_eq!(a, b);
        let labels = a.labels().unwrap();
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 250);
        }
    }

    #[test]
    fn discrete_views_use_the_alphabet() {
        let specs = vec![ModalitySpec::discrete("d", 3)];
        let mut cfg = LatentFactorConfig::new(specs, 1, 0);
        cfg.specs[0].snr = 1.0;
        let ds = gen_latent_factor(&cfg, 300, 2).unwrap();
        let mut counts = [0usize; 3];
        for &v in ds.views()[0].data() {
            counts[v as usize] += 1;
        }
        assert_eq!(counts, [100, 100, 100]);
    }

    #[test]
    fn disjoint_observed_coordinates_decouple_modalities() {
        let specs = vec![
            ModalitySpec::gaussian("a", 2, 1e3),
            ModalitySpec::gaussian("b", 2, 1e3),
        ];
        let mut cfg = LatentFactorConfig::new(specs, 2, 0);
        cfg.observed = vec![vec![0], vec![1]];
        let ds = gen_latent_factor(&cfg, 20_000, 4).unwrap();
        let col = |k: usize| ds.views()[k].data().iter().step_by(2).copied().collect::<Vec<_>>();
        assert!(corr(&col(0), &col(1)).abs() < 0.03);
        cfg.observed = vec![vec![0]];
        assert!(gen_latent_factor(&cfg, 10, 4).is_err());
        cfg.observed = vec![vec![0], vec![2]];
        assert!(matches!(gen_latent_factor(&cfg, 10, 4), Err(Error::Config(_))));
    }

    #[test]
    fn paired_views_share_latent_and_nuisance_but_not_noise() {
        let specs = vec![
            ModalitySpec::gaussian("a", 1, 0.0),
            ModalitySpec::gaussian("b", 1, 0.0),
        ];
        let mut cfg = LatentFactorConfig::new(specs, 1, 2);
        let (a, b) = gen_latent_views(&cfg, 20_000, 8).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a, gen_latent_factor(&cfg, 20_000, 8).unwrap());
        assert!(corr(a.views()[0].data(), b.views()[0].data()).abs() < 0.03);
        // nuisance variance 25 against unit noise: rho = 25 / 26
        cfg.nuisance_std = vec![5.0, 0.0];
        let (a, b) = gen_latent_views(&cfg, 20_000, 8).unwrap();
        let rho = corr(a.views()[0].data(), b.views()[0].data());
        assert!((rho - 25.0 / 26.0).abs() < 0.01, "rho = {rho}");
        assert!(corr(a.views()[1].data(), b.views()[1].data()).abs() < 0.03);
    }
}
