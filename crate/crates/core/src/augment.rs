//! Per-modality positive-sample augmentation and its search space.
//!
//! Each view is transformed independently: coordinate masking, then an exact
//! 2-D rotation (point-pair views only), then additive Gaussian noise.

use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::synthdata::{MissingSet, ModalitySpec, MultiModalDataset, Tuple, ViewKind};
use rand::seq::index::sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAugment {
    pub noise_variance: f64,
    /// Fraction of coordinates zeroed; `floor(fraction * dim)` coordinates.
    pub mask_fraction: f64,
    pub rotation_deg: f64,
    pub enabled: bool,
}

impl ViewAugment {
    pub const IDENTITY: ViewAugment = ViewAugment {
        noise_variance: 0.0,
        mask_fraction: 0.0,
        rotation_deg: 0.0,
        enabled: false,
    };

    pub fn new(noise_variance: f64, mask_fraction: f64, rotation_deg: f64) -> Self {
        let mut v = Self {
            noise_variance,
            mask_fraction,
            rotation_deg,
            enabled: true,
        };
        v.enabled = !v.is_noop();
        v
    }

    fn is_noop(&self) -> bool {
        self.noise_variance == 0.0 && self.mask_fraction == 0.0 && self.rotation_deg == 0.0
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled || self.is_noop()
    }

    fn validate(&self, k: usize) -> Result<()> {
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Policy(format!(
                "modality {k}: noise variance {} must be finite and >= 0",
                self.noise_variance
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::Policy(format!(
                "modality {k}: mask fraction {} outside [0, 1]",
                self.mask_fraction
            )));
        }
        if !(-180.0..=180.0).contains(&self.rotation_deg) {
            return Err(Error::Policy(format!(
                "modality {k}: rotation {} outside [-180, 180] degrees",
                self.rotation_deg
            )));
        }
        Ok(())
    }
}

/// The parameters β of the positive-sample distribution, one entry per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub entries: Vec<ViewAugment>,
}

impl AugmentationPolicy {
    pub fn identity(num_modalities: usize) -> Self {
        Self {
            entries: vec![ViewAugment::IDENTITY; num_modalities],
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.entries.len()
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().all(ViewAugment::is_identity)
    }

    /// Checks ranges and that rotations only target point-pair views.
    pub fn validate(&self, specs: &[ModalitySpec]) -> Result<()> {
        if self.entries.len() != specs.len() {
            return Err(Error::Policy(format!(
                "policy covers {} modalities, data has {}",
                self.entries.len(),
                specs.len()
            )));
        }
        for (k, (e, s)) in self.entries.iter().zip(specs).enumerate() {
            e.validate(k)?;
            if e.is_identity() {
                continue;
            }
            if e.rotation_deg != 0.0 && s.kind != ViewKind::Coords2d {
                return Err(Error::Policy(format!(
                    "modality {k} ({}) is {}, rotation needs a coords2d view",
                    s.name,
                    s.kind.name()
                )));
            }
            if e.noise_variance > 0.0 && s.kind == ViewKind::Discrete {
                return Err(Error::Policy(format!(
                    "modality {k} ({}) is discrete, additive noise is undefined",
                    s.name
                )));
            }
        }
        Ok(())
    }

    /// Compact description, e.g. `n0.5/m0/r0 | id | id`.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                if e.is_identity() {
                    "id".to_string()
                } else {
                    format!("n{}/m{}/r{}", e.noise_variance, e.mask_fraction, e.rotation_deg)
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

/// Draws `t2 ~ p_beta(t2 | t1)`. Views listed in `missing` pass through untouched.
pub fn apply_policy(
    policy: &AugmentationPolicy,
    specs: &[ModalitySpec],
    tuple: &Tuple,
    missing: MissingSet,
    rng: &mut SeededRng,
) -> Result<Tuple> {
    policy.validate(specs)?;
    if tuple.num_modalities() != specs.len() {
        return Err(Error::Policy(format!(
            "tuple has {} views, policy expects {}",
            tuple.num_modalities(),
            specs.len()
        )));
    }
    let mut views = tuple.views.clone();
    for (k, ((view, entry), spec)) in views.iter_mut().zip(&policy.entries).zip(specs).enumerate() {
        if missing.contains(k) || entry.is_identity() {
            continue;
        }
        if view.len() != spec.dim {
            return Err(Error::shape(format!("view {k}"), spec.dim, view.len()));
        }
        augment_view(view, entry, spec.kind, rng);
    }
    Ok(Tuple::new(views))
}

fn augment_view(view: &mut [f64], entry: &ViewAugment, kind: ViewKind, rng: &mut SeededRng) {
    let dim = view.len();
    let masked = ((entry.mask_fraction * dim as f64).floor() as usize).min(dim);
    if masked > 0 {
        match kind {
            ViewKind::Coords2d => {
                // Center crop: keep a contiguous block of points.
                let points = dim / 2;
                let drop = ((entry.mask_fraction * points as f64).floor() as usize).min(points);
                let front = drop / 2;
                let back = drop - front;
                for p in (0..front).chain(points - back..points) {
                    view[2 * p] = 0.0;
                    view[2 * p + 1] = 0.0;
                }
            }
            ViewKind::Gaussian | ViewKind::Discrete => {
                for i in sample(rng, dim, masked) {
                    view[i] = 0.0;
                }
            }
        }
    }
    if entry.rotation_deg != 0.0 && kind == ViewKind::Coords2d {
        rotate_points(view, entry.rotation_deg);
    }
    if entry.noise_variance > 0.0 {
        let std = entry.noise_variance.sqrt();
        for v in view.iter_mut() {
            *v += std * rng.normal();
        }
    }
}

/// Rotates every `(x, y)` pair counter-clockwise by `degrees`.
pub fn rotate_points(view: &mut [f64], degrees: f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    for p in view.chunks_exact_mut(2) {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub noise_variance: Vec<f64>,
    pub mask_fraction: Vec<f64>,
    pub rotation_deg: Vec<f64>,
}

impl ParamGrid {
    pub fn identity_only() -> Self {
        Self {
            noise_variance: vec![0.0],
            mask_fraction: vec![0.0],
            rotation_deg: vec![0.0],
        }
    }

    fn size(&self) -> usize {
        self.noise_variance.len() * self.mask_fraction.len() * self.rotation_deg.len()
    }
}

/// Default noise levels, as a fraction (percent / 100) of each view's variance.
pub const DEFAULT_NOISE_LEVELS: [f64; 4] = [0.0, 10.0, 30.0, 50.0];

/// Candidate grids for each modality's augmentation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpace {
    pub grids: Vec<ParamGrid>,
}

impl PolicySpace {
    /// Noise levels {0, 10, 30, 50} percent of each view's empirical variance,
    /// no masking, and rotations {0, 40} degrees on point-pair views.
    pub fn default_for(ds: &MultiModalDataset) -> Self {
        let variances = ds.view_variances();
        let grids = ds
            .specs()
            .iter()
            .zip(variances)
            .map(|(s, var)| match s.kind {
                ViewKind::Discrete => ParamGrid::identity_only(),
                kind => ParamGrid {
                    noise_variance: DEFAULT_NOISE_LEVELS.iter().map(|l| l / 100.0 * var).collect(),
                    mask_fraction: vec![0.0],
                    rotation_deg: if kind == ViewKind::Coords2d {
                        vec![0.0, 40.0]
                    } else {
                        vec![0.0]
                    },
                },
            })
            .collect();
        Self { grids }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::Policy("policy space has no modalities".into()));
        }
        for (k, g) in self.grids.iter().enumerate() {
            for (name, values) in [
                ("noise_variance", &g.noise_variance),
                ("mask_fraction", &g.mask_fraction),
                ("rotation_deg", &g.rotation_deg),
            ] {
                if values.is_empty() {
                    return Err(Error::Policy(format!("modality {k}: empty {name} grid")));
                }
                if !values.contains(&0.0) {
                    return Err(Error::Policy(format!(
                        "modality {k}: {name} grid must contain 0 so the identity policy is a member"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full Cartesian product, modality 0 varying slowest; within a modality the
/// order is noise, then mask, then rotation. Fails when the count exceeds `cap`.
pub fn enumerate_policies(space: &PolicySpace, cap: usize) -> Result<Vec<AugmentationPolicy>> {
    space.validate()?;
    let mut count: usize = 1;
    for g in &space.grids {
        count = count
            .checked_mul(g.size())
            .filter(|&c| c <= cap)
            .ok_or_else(|| {
                Error::Budget(format!(
                    "policy grid exceeds the cap of {cap} policies; coarsen the grids"
                ))
            })?;
    }
    let per_modality: Vec<Vec<ViewAugment>> = space
        .grids
        .iter()
        .map(|g| {
            let mut opts = Vec::with_capacity(g.size());
            for &n in &g.noise_variance {
                for &m in &g.mask_fraction {
                    for &r in &g.rotation_deg {
                        opts.push(ViewAugment::new(n, m, r));
                    }
                }
            }
            opts
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; per_modality.len()];
    loop {
        out.push(AugmentationPolicy {
            entries: idx.iter().zip(&per_modality).map(|(&i, o)| o[i]).collect(),
        });
        let mut k = per_modality.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_modality[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}
