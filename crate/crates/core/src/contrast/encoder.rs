use crate::error::{Error, Result};
use crate::numerics::{Activation, ForwardCache, Matrix, Mlp, MlpGrads, Parameters, SeededRng};
use crate::synthdata::{MissingSet, Tuple};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderArch {
    pub modality_hidden: usize,
    pub modality_out: usize,
    pub fusion_hidden: usize,
    pub embedding_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            modality_hidden: 64,
            modality_out: 32,
            fusion_hidden: 64,
            embedding_dim: 32,
            activation: Activation::Relu,
        }
    }
}

/// Per-modality MLPs feeding a fusion MLP; the output is L2-normalised.
///
/// A missing view is replaced by the zero vector before its modality MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionEncoder {
    modality: Vec<Mlp>,
    fusion: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub modality: Vec<MlpGrads>,
    pub fusion: MlpGrads,
}

impl FusionEncoder {
    pub fn new(arch: &EncoderArch, input_dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if input_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one modality".into()));
        }
        let modality = input_dims
            .iter()
            .map(|&d| Mlp::random(&[d, arch.modality_hidden, arch.modality_out], arch.activation, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = Mlp::random(
            &[
                arch.modality_out * input_dims.len(),
                arch.fusion_hidden,
                arch.embedding_dim,
            ],
            arch.activation,
            rng,
        )?;
        Ok(Self { modality, fusion })
    }

    pub fn from_parts(modality: Vec<Mlp>, fusion: Mlp) -> Result<Self> {
        let total: usize = modality.iter().map(Mlp::output_dim).sum();
        if modality.is_empty() || fusion.input_dim() != total {
            return Err(Error::shape(
                "fusion input",
                total,
                fusion.input_dim(),
            ));
        }
        Ok(Self { modality, fusion })
    }

    pub fn modality_encoders(&self) -> &[Mlp] {
        &self.modality
    }

    pub fn fusion(&self) -> &Mlp {
        &self.fusion
    }

    pub fn num_modalities(&self) -> usize {
        self.modality.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.modality.iter().map(Mlp::input_dim).collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.fusion.output_dim()
    }

    pub fn arch(&self) -> EncoderArch {
        let m = &self.modality[0];
        EncoderArch {
            modality_hidden: m.layer_dims()[1],
            modality_out: m.output_dim(),
            fusion_hidden: self.fusion.layer_dims()[1],
            embedding_dim: self.fusion.output_dim(),
            activation: self.fusion.hidden_activation(),
        }
    }

    /// Unit-norm embedding of one tuple.
    pub fn encode(&self, tuple: &Tuple, missing: MissingSet) -> Result<Vec<f64>> {
        let plan = EncodePlan::new(self.num_modalities(), &[(tuple, missing)])?;
        Ok(self.forward(&plan)?.0.row(0).to_vec())
    }

    /// Unit-norm embeddings, one row per item.
    pub fn encode_batch(&self, items: &[(&Tuple, MissingSet)]) -> Result<Matrix> {
        let plan = EncodePlan::new(self.num_modalities(), items)?;
        let (emb, _) = self.forward(&plan)?;
        Ok(emb.select_rows(plan.item_rows()))
    }

    /// Embeds every distinct tuple row of `plan`.
    pub fn forward(&self, plan: &EncodePlan) -> Result<(Matrix, EncoderCache)> {
        if plan.views.len() != self.num_modalities() {
            return Err(Error::shape(
                "plan modalities",
                self.num_modalities(),
                plan.views.len(),
            ));
        }
        let mut modality_out = Vec::with_capacity(self.modality.len());
        let mut modality_caches = Vec::with_capacity(self.modality.len());
        for (mlp, views) in self.modality.iter().zip(&plan.views) {
            let (out, cache) = mlp.forward(views)?;
            modality_out.push(out);
            modality_caches.push(cache);
        }
        let widths: Vec<usize> = self.modality.iter().map(Mlp::output_dim).collect();
        let total: usize = widths.iter().sum();
        let mut fused_in = Matrix::zeros(plan.rows.len(), total);
        for (r, row) in plan.rows.iter().enumerate() {
            let dst = fused_in.row_mut(r);
            let mut off = 0;
            for (k, &vi) in row.iter().enumerate() {
                dst[off..off + widths[k]].copy_from_slice(modality_out[k].row(vi));
                off += widths[k];
            }
        }
        let (mut h, fusion_cache) = self.fusion.forward(&fused_in)?;
        let mut norms = Vec::with_capacity(h.rows());
        for r in 0..h.rows() {
            let row = h.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Numeric(format!(
                    "pre-normalisation embedding has norm {norm}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        Ok((
            h.clone(),
            EncoderCache {
                modality_caches,
                fusion_cache,
                unit: h,
                norms,
                rows: plan.rows.clone(),
                view_counts: plan.views.iter().map(Matrix::rows).collect(),
            },
        ))
    }

    /// Gradients of a loss given its gradient with respect to the unit embeddings.
    pub fn backward(&self, cache: &EncoderCache, grad_unit: &Matrix) -> Result<EncoderGrads> {
        if grad_unit.shape() != cache.unit.shape() {
            return Err(Error::shape(
                "embedding gradient",
                format!("{} x {}", cache.unit.rows(), cache.unit.cols()),
                format!("{} x {}", grad_unit.rows(), grad_unit.cols()),
            ));
        }
        let mut grad_h = grad_unit.clone();
        for r in 0..grad_h.rows() {
            let e = cache.unit.row(r);
            let g = grad_h.row_mut(r);
            let proj: f64 = g.iter().zip(e).map(|(a, b)| a * b).sum();
            let inv = 1.0 / cache.norms[r];
            for (gi, ei) in g.iter_mut().zip(e) {
                *gi = (*gi - proj * ei) * inv;
            }
        }
        let (fusion_grads, grad_in) = self.fusion.backward(&cache.fusion_cache, &grad_h)?;
        let widths: Vec<usize> = self.modality.iter().map(Mlp::output_dim).collect();
        let mut grad_views: Vec<Matrix> = cache
            .view_counts
            .iter()
            .zip(&widths)
            .map(|(&n, &w)| Matrix::zeros(n, w))
            .collect();
        for (r, row) in cache.rows.iter().enumerate() {
            let src = grad_in.row(r);
            let mut off = 0;
            for (k, &vi) in row.iter().enumerate() {
                let dst = grad_views[k].row_mut(vi);
                for (d, s) in dst.iter_mut().zip(&src[off..off + widths[k]]) {
                    *d += s;
                }
                off += widths[k];
            }
        }
        let modality = self
            .modality
            .iter()
            .zip(&cache.modality_caches)
            .zip(&grad_views)
            .map(|((mlp, c), g)| mlp.backward(c, g).map(|(grads, _)| grads))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderGrads {
            modality,
            fusion: fusion_grads,
        })
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            modality: self.modality.iter().map(Mlp::zero_grads).collect(),
            fusion: self.fusion.zero_grads(),
        }
    }
}

impl Parameters for FusionEncoder {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.modality.iter().flat_map(|m| m.slices()).collect();
        out.extend(self.fusion.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.modality.iter_mut().flat_map(|m| m.slices_mut()).collect();
        out.extend(self.fusion.slices_mut());
        out
    }
}

impl Parameters for EncoderGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.modality.iter().flat_map(|m| m.slices()).collect();
        out.extend(self.fusion.slices());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.modality.iter_mut().flat_map(|m| m.slices_mut()).collect();
        out.extend(self.fusion.slices_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    modality_caches: Vec<ForwardCache>,
    fusion_cache: ForwardCache,
    unit: Matrix,
    norms: Vec<f64>,
    rows: Vec<Vec<usize>>,
    view_counts: Vec<usize>,
}

/// Deduplicated inputs for one batched encoder pass.
///
/// Identical views (bit-for-bit, placeholder zeros included) share one row
/// of their modality encoder; identical view combinations share one fusion
/// row. `item_rows[i]` is the fusion row of the i-th input item.
#[derive(Debug, Clone)]
pub struct EncodePlan {
    views: Vec<Matrix>,
    rows: Vec<Vec<usize>>,
    item_rows: Vec<usize>,
}

impl EncodePlan {
    pub fn new(num_modalities: usize, items: &[(&Tuple, MissingSet)]) -> Result<Self> {
        let mut builder = PlanBuilder::new(num_modalities);
        for (t, m) in items {
            builder.push(t, *m)?;
        }
        builder.finish()
    }

    pub fn item_rows(&self) -> &[usize] {
        &self.item_rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

pub struct PlanBuilder {
    num_modalities: usize,
    dims: Vec<Option<usize>>,
    view_index: Vec<HashMap<Vec<u64>, usize>>,
    view_data: Vec<Vec<f64>>,
    row_index: HashMap<Vec<usize>, usize>,
    rows: Vec<Vec<usize>>,
    item_rows: Vec<usize>,
}

impl PlanBuilder {
    pub fn new(num_modalities: usize) -> Self {
        Self {
            num_modalities,
            dims: vec![None; num_modalities],
            view_index: vec![HashMap::new(); num_modalities],
            view_data: vec![Vec::new(); num_modalities],
            row_index: HashMap::new(),
            rows: Vec::new(),
            item_rows: Vec::new(),
        }
    }

    /// Adds one item and returns its fusion row.
    pub fn push(&mut self, tuple: &Tuple, missing: MissingSet) -> Result<usize> {
        if tuple.num_modalities() != self.num_modalities {
            return Err(Error::shape(
                "tuple modalities",
                self.num_modalities,
                tuple.num_modalities(),
            ));
        }
        if missing.covers_all(self.num_modalities) {
            return Err(Error::Mask(format!(
                "all {} modalities are missing",
                self.num_modalities
            )));
        }
        let mut row = Vec::with_capacity(self.num_modalities);
        for (k, view) in tuple.views.iter().enumerate() {
            match self.dims[k] {
                None => self.dims[k] = Some(view.len()),
                Some(d) if d != view.len() => {
                    return Err(Error::shape(format!("view {k}"), d, view.len()));
                }
                _ => {}
            }
            let key: Vec<u64> = if missing.contains(k) {
                vec![0u64; view.len()]
            } else {
                // +0.0 and -0.0 encode the same input
                view.iter().map(|v| (v + 0.0).to_bits()).collect()
            };
            let next = self.view_index[k].len();
            let idx = *self.view_index[k].entry(key).or_insert_with(|| {
                if missing.contains(k) {
                    self.view_data[k].extend(std::iter::repeat_n(0.0, view.len()));
                } else {
                    self.view_data[k].extend_from_slice(view);
                }
                next
            });
            row.push(idx);
        }
        let next = self.rows.len();
        let r = match self.row_index.get(&row) {
            Some(&r) => r,
            None => {
                self.row_index.insert(row.clone(), next);
                self.rows.push(row);
                next
            }
        };
        self.item_rows.push(r);
        Ok(r)
    }

    pub fn finish(self) -> Result<EncodePlan> {
        let mut views = Vec::with_capacity(self.num_modalities);
        for (k, data) in self.view_data.into_iter().enumerate() {
            let dim = self.dims[k].unwrap_or(0);
            let n = if dim == 0 { 0 } else { data.len() / dim };
            views.push(Matrix::from_vec(n, dim, data)?);
        }
        Ok(EncodePlan {
            views,
            rows: self.rows,
            item_rows: self.item_rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> EncoderArch {
        EncoderArch {
            modality_hidden: 16,
            modality_out: 4,
            fusion_hidden: 16,
            embedding_dim: 3,
            activation: Activation::Relu,
        }
    }

    fn tuple() -> Tuple {
        Tuple::new(vec![vec![0.3, -1.0], vec![2.0, 0.5, -0.7]])
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let mut rng = SeededRng::new(1);
        let enc = FusionEncoder::new(&arch(), &[2, 3], &mut rng).unwrap();
        let a = enc.encode(&tuple(), MissingSet::NONE).unwrap();
        let b = enc.encode(&tuple(), MissingSet::NONE).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn masked_view_contributes_its_zero_input_embedding() {
        let mut rng = SeededRng::new(2);
        let enc = FusionEncoder::new(&arch(), &[2, 3], &mut rng).unwrap();
        let mut zeroed = tuple();
        zeroed.views[1] = vec![0.0; 3];
        let masked = enc.encode(&tuple(), MissingSet::from_indices(&[1])).unwrap();
        let explicit = enc.encode(&zeroed, MissingSet::NONE).unwrap();
        assert_eq!(masked, explicit);
    }

    #[test]
    fn different_masks_give_different_embeddings() {
        let mut rng = SeededRng::new(3);
        let enc = FusionEncoder::new(&arch(), &[2, 3], &mut rng).unwrap();
        let a = enc.encode(&tuple(), MissingSet::from_indices(&[0])).unwrap();
        let b = enc.encode(&tuple(), MissingSet::from_indices(&[1])).unwrap();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn all_missing_is_a_mask_error() {
        let mut rng = SeededRng::new(4);
        let enc = FusionEncoder::new(&arch(), &[2, 3], &mut rng).unwrap();
        assert!(matches!(
            enc.encode(&tuple(), MissingSet::from_indices(&[0, 1])),
            Err(Error::Mask(_))
        ));
    }

    #[test]
    fn plan_dedups_views_and_rows() {
        let t = tuple();
        let mut u = tuple();
        u.views[1][0] = 9.0;
        let items = [
            (&t, MissingSet::NONE),
            (&u, MissingSet::NONE),
            (&t, MissingSet::NONE),
            (&u, MissingSet::from_indices(&[1])),
        ];
        let plan = EncodePlan::new(2, &items).unwrap();
        assert_eq!(plan.num_rows(), 3);
        assert_eq!(plan.item_rows(), &[0, 1, 0, 2]);
        assert_eq!(plan.views[0].rows(), 1);
        assert_eq!(plan.views[1].rows(), 3);
    }

    #[test]
    fn batch_matches_single_encodes() {
        let mut rng = SeededRng::new(5);
        let enc = FusionEncoder::new(&arch(), &[2, 3], &mut rng).unwrap();
        let t = tuple();
        let mut u = tuple();
        u.views[0][1] = 4.0;
        let batch = enc
            .encode_batch(&[(&t, MissingSet::NONE), (&u, MissingSet::from_indices(&[0])), (&t, MissingSet::NONE)])
            .unwrap();
        assert_eq!(batch.row(0), enc.encode(&t, MissingSet::NONE).unwrap().as_slice());
        assert_eq!(batch.row(1), enc.encode(&u, MissingSet::from_indices(&[0])).unwrap().as_slice());
        assert_eq!(batch.row(2), batch.row(0));
    }
}
