use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, softmax_cross_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Score {
    Dot,
    Cosine,
}

impl Score {
    pub fn name(self) -> &'static str {
        match self {
            Score::Dot => "dot",
            Score::Cosine => "cosine",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dot" => Some(Score::Dot),
            "cosine" => Some(Score::Cosine),
            _ => None,
        }
    }
}

/// Critic `f(t2, t1) = score(e2, e1) / temperature`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub score: Score,
    pub temperature: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            score: Score::Cosine,
            temperature: 0.1,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn score(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.score {
            Score::Dot => dot(a, b),
            Score::Cosine => dot(a, b) / (l2_norm(a) * l2_norm(b)),
        }
    }

}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceTerms {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

impl InfoNceTerms {
    /// Softmax cardinality: the positive plus every negative.
    pub fn n_softmax(&self) -> usize {
        1 + self.grad_negatives.len()
    }
}

/// Cross-entropy of picking the positive among `[positive, negatives…]` with
/// logits `score / temperature`.
pub fn tuple_info_nce_loss(
    critic: &CriticConfig,
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
) -> Result<InfoNceTerms> {
    critic.validate()?;
    if negatives.is_empty() {
        return Err(Error::Config("need at least one negative".into()));
    }
    let dim = anchor.len();
    for (what, len) in std::iter::once(("positive", positive.len()))
        .chain(negatives.iter().map(|n| ("negative", n.len())))
    {
        if len != dim {
            return Err(Error::shape(format!("{what} embedding"), dim, len));
        }
    }
    let mut grad_anchor = vec![0.0; dim];
    let mut cand = vec![0.0; (1 + negatives.len()) * dim];
    let mut scratch = Vec::new();
    let loss = info_nce_into(critic, anchor, positive, negatives, &mut grad_anchor, &mut cand, &mut scratch)?;
    let mut rows = cand.chunks(dim).map(<[f64]>::to_vec);
    let grad_positive = rows.next().unwrap_or_default();
    Ok(InfoNceTerms {
        loss,
        grad_anchor,
        grad_positive,
        grad_negatives: rows.collect(),
    })
}

/// Allocation-free core of [`tuple_info_nce_loss`]. Adds the anchor gradient
/// into `grad_anchor` and writes candidate gradients (positive first) into
/// `grad_candidates`, one `dim`-wide row each. Shapes are the caller's job.
pub(crate) fn info_nce_into(
    critic: &CriticConfig,
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    grad_anchor: &mut [f64],
    grad_candidates: &mut [f64],
    logits: &mut Vec<f64>,
) -> Result<f64> {
    let dim = anchor.len();
    let inv_t = 1.0 / critic.temperature;
    let cosine = critic.score == Score::Cosine;
    let na = if cosine { l2_norm(anchor) } else { 1.0 };
    let cands = || std::iter::once(positive).chain(negatives.iter().copied());
    logits.clear();
    let mut norms = Vec::with_capacity(1 + negatives.len());
    for c in cands() {
        let nc = if cosine { l2_norm(c) } else { 1.0 };
        norms.push(nc);
        logits.push(dot(anchor, c) / (na * nc) * inv_t);
    }
    let (loss, dlogits) = softmax_cross_entropy(logits, 0)?;
    for (j, c) in cands().enumerate() {
        let w = dlogits[j] * inv_t;
        let g = &mut grad_candidates[j * dim..(j + 1) * dim];
        if cosine {
            let nc = norms[j];
            let cs = logits[j] * critic.temperature;
            let inv = 1.0 / (na * nc);
            for i in 0..dim {
                grad_anchor[i] += w * (c[i] * inv - cs * anchor[i] / (na * na));
                g[i] = w * (anchor[i] * inv - cs * c[i] / (nc * nc));
            }
        } else {
            for i in 0..dim {
                grad_anchor[i] += w * c[i];
                g[i] = w * anchor[i];
            }
        }
    }
    Ok(loss)
}
