use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Gaussian,
    /// One symbol per sample, stored as its index in `0..alphabet_size`.
    Discrete,
    /// Interleaved 2-D points `(x0, y0, x1, y1, …)`.
    Coords2d,
}

impl ViewKind {
    pub fn name(self) -> &'static str {
        match self {
            ViewKind::Gaussian => "gaussian",
            ViewKind::Discrete => "discrete",
            ViewKind::Coords2d => "coords2d",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(ViewKind::Gaussian),
            "discrete" => Some(ViewKind::Discrete),
            "coords2d" => Some(ViewKind::Coords2d),
            _ => None,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            ViewKind::Gaussian => 0,
            ViewKind::Discrete => 1,
            ViewKind::Coords2d => 2,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(ViewKind::Gaussian),
            1 => Some(ViewKind::Discrete),
            2 => Some(ViewKind::Coords2d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
    pub kind: ViewKind,
    /// Scale of the shared latent signal relative to unit observation noise.
    pub snr: f64,
    /// Only meaningful for discrete views.
    pub alphabet_size: usize,
}

impl ModalitySpec {
    pub fn gaussian(name: impl Into<String>, dim: usize, snr: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            kind: ViewKind::Gaussian,
            snr,
            alphabet_size: 0,
        }
    }

    pub fn coords2d(name: impl Into<String>, points: usize, snr: f64) -> Self {
        Self {
            name: name.into(),
            dim: 2 * points,
            kind: ViewKind::Coords2d,
            snr,
            alphabet_size: 0,
        }
    }

    pub fn discrete(name: impl Into<String>, alphabet_size: usize) -> Self {
        Self {
            name: name.into(),
            dim: 1,
            kind: ViewKind::Discrete,
            snr: 0.0,
            alphabet_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config(format!("modality {:?} has dim 0", self.name)));
        }
        if !(self.snr >= 0.0) {
            return Err(Error::Config(format!(
                "modality {:?} has negative or NaN snr {}",
                self.name, self.snr
            )));
        }
        match self.kind {
            ViewKind::Discrete if self.alphabet_size < 2 || self.dim != 1 => {
                Err(Error::Config(format!(
                    "discrete modality {:?} needs alphabet_size >= 2 and dim 1 (got {} and {})",
                    self.name, self.alphabet_size, self.dim
                )))
            }
            ViewKind::Coords2d if self.dim % 2 != 0 => Err(Error::Config(format!(
                "coords2d modality {:?} needs an even dim, got {}",
                self.name, self.dim
            ))),
            _ => Ok(()),
        }
    }
}

/// One multi-modal sample: one real vector per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub views: Vec<Vec<f64>>,
}

impl Tuple {
    pub fn new(views: Vec<Vec<f64>>) -> Self {
        Self { views }
    }

    pub fn num_modalities(&self) -> usize {
        self.views.len()
    }
}

/// Set of missing modalities, one bit per modality index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MissingSet(u32);

pub const MAX_MODALITIES: usize = 32;

impl MissingSet {
    pub const NONE: MissingSet = MissingSet(0);

    pub fn from_bits(bits: u32) -> Self {
        MissingSet(bits)
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        MissingSet(indices.iter().fold(0, |acc, &k| acc | (1 << k)))
    }

    /// Every modality except `k` is missing.
    pub fn only(k: usize, num_modalities: usize) -> Self {
        MissingSet(Self::full_bits(num_modalities) & !(1 << k))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 & (1 << k) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn covers_all(self, num_modalities: usize) -> bool {
        self.0 & Self::full_bits(num_modalities) == Self::full_bits(num_modalities)
    }

    pub fn complement(self, num_modalities: usize) -> Self {
        MissingSet(!self.0 & Self::full_bits(num_modalities))
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        (0..MAX_MODALITIES).filter(move |&k| self.contains(k))
    }

    fn full_bits(num_modalities: usize) -> u32 {
        if num_modalities >= 32 {
            u32::MAX
        } else {
            (1u32 << num_modalities) - 1
        }
    }
}

/// How a dataset was produced; enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    specs: Vec<ModalitySpec>,
    /// One `n x dim_k` matrix per modality.
    views: Vec<Matrix>,
    labels: Option<Vec<usize>>,
    provenance: Provenance,
}

impl MultiModalDataset {
    pub fn new(
        specs: Vec<ModalitySpec>,
        views: Vec<Matrix>,
        labels: Option<Vec<usize>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("dataset needs at least one modality".into()));
        }
        if specs.len() > MAX_MODALITIES {
            return Err(Error::Config(format!(
                "at most {MAX_MODALITIES} modalities are supported, got {}",
                specs.len()
            )));
        }
        if specs.len() != views.len() {
            return Err(Error::shape("view matrices", specs.len(), views.len()));
        }
        for s in &specs {
            s.validate()?;
        }
        let n = views[0].rows();
        for (k, (s, v)) in specs.iter().zip(&views).enumerate() {
            if v.cols() != s.dim || v.rows() != n {
                return Err(Error::shape(
                    format!("modality {k} ({}) views", s.name),
                    format!("{n} x {}", s.dim),
                    format!("{} x {}", v.rows(), v.cols()),
                ));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("labels", n, l.len()));
            }
        }
        Ok(Self {
            specs,
            views,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.views[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_modalities(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[ModalitySpec] {
        &self.specs
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn view(&self, modality: usize, sample: usize) -> &[f64] {
        self.views[modality].row(sample)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn tuple(&self, i: usize) -> Tuple {
        Tuple::new(self.views.iter().map(|v| v.row(i).to_vec()).collect())
    }

    /// Keeps only the listed modalities, in the given order.
    pub fn select_modalities(&self, modalities: &[usize]) -> Result<Self> {
        if let Some(&bad) = modalities.iter().find(|&&k| k >= self.num_modalities()) {
            return Err(Error::Config(format!(
                "modality index {bad} out of range for {} modalities",
                self.num_modalities()
            )));
        }
        let mut provenance = self.provenance.clone();
        provenance.params.push((
            "selected_modalities".into(),
            modalities
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ));
        Self::new(
            modalities.iter().map(|&k| self.specs[k].clone()).collect(),
            modalities.iter().map(|&k| self.views[k].clone()).collect(),
            self.labels.clone(),
            provenance,
        )
    }

    /// Keeps the listed samples, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Self {
        Self {
            specs: self.specs.clone(),
            views: self.views.iter().map(|v| v.select_rows(indices)).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// Empirical variance of each modality, pooled over its coordinates.
    pub fn view_variances(&self) -> Vec<f64> {
        self.views
            .iter()
            .map(|m| {
                let d = m.data();
                if d.is_empty() {
                    return 0.0;
                }
                let cols = m.cols();
                let n = m.rows() as f64;
                let mut total = 0.0;
                for c in 0..cols {
                    let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / n;
                    total += (0..m.rows()).map(|r| (m.get(r, c) - mean).powi(2)).sum::<f64>() / n;
                }
                total / cols as f64
            })
            .collect()
    }
}
