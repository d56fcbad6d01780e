use super::types::{ModalitySpec, MultiModalDataset, Provenance};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use rand::distr::weighted::WeightedIndex;
use rand_distr::Distribution;

/// Enumeration cap on the product alphabet.
pub const MAX_JOINT_CELLS: usize = 1_000_000;

/// Probability table over a product of finite alphabets, row-major with the
/// last variable varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    alphabet_sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(alphabet_sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if alphabet_sizes.is_empty() {
            return Err(Error::Config("joint needs at least one variable".into()));
        }
        if let Some(a) = alphabet_sizes.iter().find(|&&a| a < 2) {
            return Err(Error::Config(format!("alphabet size {a} < 2")));
        }
        let cells = cell_count(&alphabet_sizes)?;
        if probs.len() != cells {
            return Err(Error::shape("probability table", cells, probs.len()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Config(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "probability table sums to {total}, not 1"
            )));
        }
        Ok(Self {
            alphabet_sizes,
            probs,
        })
    }

    /// Normalises non-negative weights into a table.
    pub fn from_weights(alphabet_sizes: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Config(format!("weights sum to {total}")));
        }
        Self::new(alphabet_sizes, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(alphabet_sizes: Vec<usize>, symbols: &[usize]) -> Result<Self> {
        let cells = cell_count(&alphabet_sizes)?;
        let mut probs = vec![0.0; cells];
        let joint = Self {
            alphabet_sizes,
            probs: vec![],
        };
        probs[joint.encode(symbols)?] = 1.0;
        Self::new(joint.alphabet_sizes, probs)
    }

    pub fn uniform(alphabet_sizes: Vec<usize>) -> Result<Self> {
        let cells = cell_count(&alphabet_sizes)?;
        Self::new(alphabet_sizes, vec![1.0 / cells as f64; cells])
    }

    /// `(v1, v2, v1 xor v2)` with uniform independent bits `v1`, `v2`.
    pub fn xor_triple() -> Self {
        let mut probs = vec![0.0; 8];
        for a in 0..2 {
            for b in 0..2 {
                probs[a * 4 + b * 2 + (a ^ b)] = 0.25;
            }
        }
        Self::new(vec![2, 2, 2], probs).expect("valid xor table")
    }

    /// Joint over an (anchor, positive) pair of `K`-tuples: `2K` variables,
    /// anchor first. The anchor tuple follows a random Dirichlet(1) table; each
    /// positive modality copies the anchor symbol with probability `keep[k]`
    /// and is otherwise uniform.
    pub fn random_pair(alphabets: &[usize], keep: &[f64], rng: &mut SeededRng) -> Result<Self> {
        if keep.len() != alphabets.len() {
            return Err(Error::shape("keep probabilities", alphabets.len(), keep.len()));
        }
        if let Some(p) = keep.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("keep probability {p} outside [0, 1]")));
        }
        let single = cell_count(alphabets)?;
        let mut pair_sizes = alphabets.to_vec();
        pair_sizes.extend_from_slice(alphabets);
        let cells = cell_count(&pair_sizes)?;
        let mut anchor_w: Vec<f64> = (0..single).map(|_| -rng.uniform().max(1e-300).ln()).collect();
        let total: f64 = anchor_w.iter().sum();
        anchor_w.iter_mut().for_each(|w| *w /= total);

        let anchor_table = Self {
            alphabet_sizes: alphabets.to_vec(),
            probs: vec![],
        };
        let mut probs = vec![0.0; cells];
        for (a_cell, &pa) in anchor_w.iter().enumerate() {
            let a_sym = anchor_table.decode(a_cell);
            for p_cell in 0..single {
                let p_sym = anchor_table.decode(p_cell);
                let mut cond = 1.0;
                for k in 0..alphabets.len() {
                    let uniform = (1.0 - keep[k]) / alphabets[k] as f64;
                    cond *= if a_sym[k] == p_sym[k] {
                        keep[k] + uniform
                    } else {
                        uniform
                    };
                }
                probs[a_cell * single + p_cell] = pa * cond;
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(pair_sizes, probs)
    }

    pub fn num_vars(&self) -> usize {
        self.alphabet_sizes.len()
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.alphabet_sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_cells(&self) -> usize {
        self.probs.len()
    }

    pub fn decode(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.alphabet_sizes.len()];
        for (slot, &a) in out.iter_mut().zip(&self.alphabet_sizes).rev() {
            *slot = cell % a;
            cell /= a;
        }
        out
    }

    pub fn encode(&self, symbols: &[usize]) -> Result<usize> {
        if symbols.len() != self.alphabet_sizes.len() {
            return Err(Error::shape("symbol tuple", self.alphabet_sizes.len(), symbols.len()));
        }
        let mut cell = 0;
        for (&s, &a) in symbols.iter().zip(&self.alphabet_sizes) {
            if s >= a {
                return Err(Error::Config(format!("symbol {s} outside alphabet of size {a}")));
            }
            cell = cell * a + s;
        }
        Ok(cell)
    }

    /// Marginal over `vars`, in the given order.
    pub fn marginal(&self, vars: &[usize]) -> Result<DiscreteJoint> {
        if vars.is_empty() {
            return Err(Error::Config("marginal over no variables".into()));
        }
        let mut seen = vec![false; self.num_vars()];
        for &v in vars {
            if v >= self.num_vars() || std::mem::replace(&mut seen[v], true) {
                return Err(Error::Config(format!("invalid or repeated variable {v}")));
            }
        }
        let sizes: Vec<usize> = vars.iter().map(|&v| self.alphabet_sizes[v]).collect();
        let out_shape = Self {
            alphabet_sizes: sizes.clone(),
            probs: vec![],
        };
        let mut probs = vec![0.0; cell_count(&sizes)?];
        for (cell, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let sym = self.decode(cell);
            let sub: Vec<usize> = vars.iter().map(|&v| sym[v]).collect();
            probs[out_shape.encode(&sub)?] += p;
        }
        // Re-normalise away summation drift.
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(sizes, probs)
    }

    /// Same distribution with the symbols of `var` renamed by `perm`.
    pub fn relabel(&self, var: usize, perm: &[usize]) -> Result<DiscreteJoint> {
        if var >= self.num_vars() || perm.len() != self.alphabet_sizes[var] {
            return Err(Error::Config("relabel permutation does not fit".into()));
        }
        let mut probs = vec![0.0; self.probs.len()];
        for (cell, &p) in self.probs.iter().enumerate() {
            let mut sym = self.decode(cell);
            sym[var] = perm[sym[var]];
            probs[self.encode(&sym)?] = p;
        }
        Self::new(self.alphabet_sizes.clone(), probs)
    }
}

fn cell_count(sizes: &[usize]) -> Result<usize> {
    let mut cells: usize = 1;
    for &a in sizes {
        cells = cells
            .checked_mul(a)
            .filter(|&c| c <= MAX_JOINT_CELLS)
            .ok_or_else(|| {
                Error::Budget(format!(
                    "product alphabet {sizes:?} exceeds {MAX_JOINT_CELLS} cells"
                ))
            })?;
    }
    Ok(cells)
}

/// I.i.d. draws from the table; modality `k` is the `k`-th variable as a discrete view.
pub fn gen_discrete_tuples(joint: &DiscreteJoint, n: usize, seed: u64) -> Result<MultiModalDataset> {
    // Tables built through `new` are already normalised; re-checked for
    // joints assembled by hand inside the crate.
    let total: f64 = joint.probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("probability table sums to {total}, not 1")));
    }
    let sampler = WeightedIndex::new(&joint.probs)
        .map_err(|e| Error::Config(format!("cannot sample table: {e}")))?;
    let mut rng = SeededRng::new(seed).derive(5);
    let k = joint.num_vars();
    let mut cols = vec![Vec::with_capacity(n); k];
    for _ in 0..n {
        let sym = joint.decode(sampler.sample(&mut rng));
        for (col, s) in cols.iter_mut().zip(sym) {
            col.push(s as f64);
        }
    }
    let specs = joint
        .alphabet_sizes
        .iter()
        .enumerate()
        .map(|(i, &a)| ModalitySpec::discrete(format!("v{}", i + 1), a))
        .collect();
    let views = cols
        .into_iter()
        .map(|c| Matrix::from_vec(n, 1, c))
        .collect::<Result<Vec<_>>>()?;
    MultiModalDataset::new(
        specs,
        views,
        None,
        Provenance {
            generator: "discrete_table".into(),
            seed,
            params: vec![
                ("n".into(), n.to_string()),
                (
                    "alphabet_sizes".into(),
                    joint
                        .alphabet_sizes
                        .iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ),
                (
                    "probs".into(),
                    joint
                        .probs
                        .iter()
                        .map(|p| format!("{p:?}"))
                        .collect::<Vec<_>>()
                        .join(","),
                ),
            ],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_must_sum_to_one() {
        assert!(matches!(
            DiscreteJoint::new(vec![2], vec![0.5, 0.4]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn enumeration_cap() {
        assert!(matches!(
            DiscreteJoint::uniform(vec![100, 100, 101]),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn point_mass_gives_identical_samples() {
        let j = DiscreteJoint::point_mass(vec![3, 2], &[2, 1]).unwrap();
        let ds = gen_discrete_tuples(&j, 50, 1).unwrap();
        for i in 0..50 {
            assert_eq!(ds.tuple(i).views, vec![vec![2.0], vec![1.0]]);
        }
    }

    #[test]
    fn independent_bits_frequencies() {
        let j = DiscreteJoint::uniform(vec![2, 2]).unwrap();
        let ds = gen_discrete_tuples(&j, 10_000, 4).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..ds.len() {
            let a = ds.view(0, i)[0] as usize;
            let b = ds.view(1, i)[0] as usize;
            counts[a * 2 + b] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn encode_decode_and_marginals() {
        let j = DiscreteJoint::xor_triple();
        for cell in 0..8 {
            assert_eq!(j.encode(&j.decode(cell)).unwrap(), cell);
        }
        let m = j.marginal(&[2]).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);
        let m = j.marginal(&[0, 2]).unwrap();
        assert_eq!(m.probs(), &[0.25; 4]);
    }

    #[test]
    fn random_pair_is_a_valid_table() {
        let mut rng = SeededRng::new(8);
        let j = DiscreteJoint::random_pair(&[2, 3], &[0.9, 0.5], &mut rng).unwrap();
        assert_eq!(j.alphabet_sizes(), &[2, 3, 2, 3]);
        assert!((j.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
