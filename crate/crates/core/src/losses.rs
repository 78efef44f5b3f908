//! Alignment losses over target-encoder (`π`) and frozen-encoder (`π0`)
//! embeddings, each returning its value and the gradient with respect to
//! every target-side vector.
//!
//! * dialect learning: `1/N Σ (1 - cos(π(p^d_i), π0(p^s_i)))`
//! * polysemy control: `1/N Σ (1 - cos(π(p^m_i), π0(p^m_i)))`
//! * KL regularization: `1/M Σ KL(softmax(s^π_i) || softmax(s^π0_i))`, where
//!   `s_i[j] = cos(anchor_j, caption embedding i) / T`
//!
//! All reductions run in index order so results are bit-reproducible.

use crate::embedding_store::{dot, norm, AnchorSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("batch length mismatch: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector at batch index {0}")]
    ZeroVector(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty vector")]
    EmptyVector,
    #[error("non-finite logit")]
    NonFinite,
    #[error("q entry {0} is not strictly positive")]
    NonPositiveQ(usize),
    #[error("image anchors requested but the anchor set has none")]
    MissingImageAnchors,
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("loss weights must be finite and nonnegative with at least one positive, got {0:?}")]
    BadWeights([f64; 3]),
    #[error("component losses must be finite")]
    NonFiniteComponent,
}

const ZERO_NORM: f64 = 1e-12;

/// A loss value with one gradient per target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Cosine similarity and its gradient with respect to `u`:
/// `v / (|u||v|) - cos * u / |u|^2`. Unclamped, so the gradient stays
/// consistent with the value.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    let c = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let self_term = c / (nu * nu);
    let g = u.iter().zip(v).map(|(ui, vi)| vi * inv - self_term * ui).collect();
    (c, g)
}

fn check_pairs(targets: &[Vec<f64>], frozen: &[Vec<f64>]) -> Result<(), LossError> {
    if targets.len() != frozen.len() {
        return Err(LossError::BatchMismatch(targets.len(), frozen.len()));
    }
    if targets.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let dim = targets[0].len();
    for (i, (t, f)) in targets.iter().zip(frozen).enumerate() {
        if t.len() != dim {
            return Err(LossError::DimMismatch(t.len(), dim));
        }
        if f.len() != dim {
            return Err(LossError::DimMismatch(f.len(), dim));
        }
        if norm(t) <= ZERO_NORM || norm(f) <= ZERO_NORM {
            return Err(LossError::ZeroVector(i));
        }
    }
    Ok(())
}

/// Mean cosine distance between aligned rows, with gradient wrt `targets`.
pub fn mean_cosine_distance(targets: &[Vec<f64>], frozen: &[Vec<f64>]) -> Result<LossGrad, LossError> {
    check_pairs(targets, frozen)?;
    let scale = 1.0 / targets.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    for (t, f) in targets.iter().zip(frozen) {
        let (c, g) = cosine_with_grad(t, f);
        value += 1.0 - c.clamp(-1.0, 1.0);
        grads.push(g.into_iter().map(|x| -scale * x).collect());
    }
    Ok(LossGrad {
        value: value * scale,
        grads,
    })
}

/// Pulls target embeddings of dialect prompts toward frozen embeddings of
/// their SAE partners.
pub fn dialect_learning_loss(target_dialect: &[Vec<f64>], frozen_sae: &[Vec<f64>]) -> Result<LossGrad, LossError> {
    mean_cosine_distance(target_dialect, frozen_sae)
}

/// Keeps target embeddings of SAE polysemy prompts at their frozen values.
pub fn polysemy_control_loss(
    target_polysemy: &[Vec<f64>],
    frozen_polysemy: &[Vec<f64>],
) -> Result<LossGrad, LossError> {
    mean_cosine_distance(target_polysemy, frozen_polysemy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLogits {
    pub values: Vec<f64>,
    pub temperature: f64,
}

fn check_temperature(t: f64) -> Result<(), LossError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(LossError::BadTemperature(t))
    }
}

/// Anchor rows used for the surrogate logits: image rows for image KL,
/// frozen caption rows for text KL.
pub fn anchor_rows(anchors: &AnchorSet, use_images: bool) -> Result<Vec<Vec<f64>>, LossError> {
    if use_images {
        anchors
            .images()
            .map(|s| s.matrix().rows())
            .ok_or(LossError::MissingImageAnchors)
    } else {
        Ok(anchors.captions().matrix().rows())
    }
}

fn logits_against(embedding: &[f64], rows: &[Vec<f64>], temperature: f64) -> Result<SurrogateLogits, LossError> {
    let n = norm(embedding);
    if n <= ZERO_NORM {
        return Err(LossError::ZeroVector(0));
    }
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        if r.len() != embedding.len() {
            return Err(LossError::DimMismatch(embedding.len(), r.len()));
        }
        let c = (dot(r, embedding) / (norm(r) * n)).clamp(-1.0, 1.0);
        values.push(c / temperature);
    }
    Ok(SurrogateLogits { values, temperature })
}

/// `values[j] = cos(anchor_j, embedding) / temperature`.
pub fn surrogate_logits(
    embedding: &[f64],
    anchors: &AnchorSet,
    use_images: bool,
    temperature: f64,
) -> Result<SurrogateLogits, LossError> {
    check_temperature(temperature)?;
    logits_against(embedding, &anchor_rows(anchors, use_images)?, temperature)
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, LossError> {
    if v.is_empty() {
        return Err(LossError::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `ln softmax(v)`, computed without exponentiating back.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>, LossError> {
    if v.is_empty() {
        return Err(LossError::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    Ok(v.iter().map(|x| x - lse).collect())
}

/// `Σ p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, LossError> {
    if p.len() != q.len() {
        return Err(LossError::BatchMismatch(p.len(), q.len()));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi.is_nan() || qi <= 0.0 {
            return Err(LossError::NonPositiveQ(i));
        }
        if pi > 0.0 {
            acc += pi * (pi.ln() - qi.ln());
        }
    }
    // Rounding can leave a tiny negative residue when p == q.
    Ok(acc.max(0.0))
}

/// Frozen-side surrogate logits for every caption anchor, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLogitCache {
    logits: Vec<SurrogateLogits>,
    log_probs: Vec<Vec<f64>>,
    use_images: bool,
}

impl FrozenLogitCache {
    pub fn build(anchors: &AnchorSet, use_images: bool, temperature: f64) -> Result<Self, LossError> {
        check_temperature(temperature)?;
        let rows = anchor_rows(anchors, use_images)?;
        let mut logits = Vec::with_capacity(anchors.len());
        let mut log_probs = Vec::with_capacity(anchors.len());
        for i in 0..anchors.len() {
            let s = logits_against(&anchors.captions().row(i), &rows, temperature)?;
            log_probs.push(log_softmax(&s.values)?);
            logits.push(s);
        }
        Ok(FrozenLogitCache {
            logits,
            log_probs,
            use_images,
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self, i: usize) -> &SurrogateLogits {
        &self.logits[i]
    }

    pub fn use_images(&self) -> bool {
        self.use_images
    }

    pub fn temperature(&self) -> f64 {
        self.logits.first().map_or(1.0, |s| s.temperature)
    }
}

/// KL regularization over the anchors named by `indices` (all anchors when
/// `indices` is `None`). `targets[k]` is the target embedding of caption
/// `indices[k]`; the returned gradients align with `targets`.
pub fn kl_regularization_loss(
    targets: &[Vec<f64>],
    indices: Option<&[usize]>,
    cache: &FrozenLogitCache,
    anchors: &AnchorSet,
) -> Result<LossGrad, LossError> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..cache.len()).collect();
            &all
        }
    };
    if targets.len() != indices.len() {
        return Err(LossError::BatchMismatch(targets.len(), indices.len()));
    }
    if targets.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let rows = anchor_rows(anchors, cache.use_images)?;
    if rows.len() != cache.len() {
        return Err(LossError::BatchMismatch(rows.len(), cache.len()));
    }
    let temperature = cache.temperature();
    let scale = 1.0 / targets.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    for (k, (target, &i)) in targets.iter().zip(indices).enumerate() {
        if norm(target) <= ZERO_NORM {
            return Err(LossError::ZeroVector(k));
        }
        // Unclamped cosines keep the gradient consistent with the value.
        let mut logits = Vec::with_capacity(rows.len());
        let mut cos_grads = Vec::with_capacity(rows.len());
        for r in &rows {
            if r.len() != target.len() {
                return Err(LossError::DimMismatch(target.len(), r.len()));
            }
            let (c, g) = cosine_with_grad(target, r);
            logits.push(c / temperature);
            cos_grads.push(g);
        }
        let log_p = log_softmax(&logits)?;
        let log_q = &cache.log_probs[i];
        let mut kl = 0.0;
        for (lpj, lqj) in log_p.iter().zip(log_q) {
            let pj = lpj.exp();
            if pj > 0.0 {
                kl += pj * (lpj - lqj);
            }
        }
        // d KL / d z_j = p_j (ln p_j - ln q_j - KL)
        let mut g = vec![0.0; target.len()];
        for ((lpj, lqj), cg) in log_p.iter().zip(log_q).zip(&cos_grads) {
            let dz = lpj.exp() * (lpj - lqj - kl) / temperature;
            for (gi, ci) in g.iter_mut().zip(cg) {
                *gi += dz * ci;
            }
        }
        value += kl.max(0.0);
        grads.push(g.into_iter().map(|x| x * scale).collect());
    }
    Ok(LossGrad {
        value: value * scale,
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dialect: f64,
    pub polysemy: f64,
    pub kl: f64,
}

impl LossWeights {
    pub const UNIT: LossWeights = LossWeights {
        dialect: 1.0,
        polysemy: 1.0,
        kl: 1.0,
    };

    pub fn new(dialect: f64, polysemy: f64, kl: f64) -> Result<Self, LossError> {
        let w = LossWeights { dialect, polysemy, kl };
        w.validate()?;
        Ok(w)
    }

    /// Zero disables a component (ablation); negatives are rejected.
    pub fn validate(&self) -> Result<(), LossError> {
        let arr = [self.dialect, self.polysemy, self.kl];
        if arr.iter().any(|w| !w.is_finite() || *w < 0.0) || arr.iter().all(|w| *w == 0.0) {
            return Err(LossError::BadWeights(arr));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::UNIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_dl: f64,
    pub l_pc: f64,
    pub l_kl: f64,
    pub total: f64,
}

/// Weighted sum of the three components.
pub fn total_loss(l_dl: f64, l_pc: f64, l_kl: f64, weights: LossWeights) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    if ![l_dl, l_pc, l_kl].iter().all(|x| x.is_finite()) {
        return Err(LossError::NonFiniteComponent);
    }
    Ok(LossBreakdown {
        l_dl,
        l_pc,
        l_kl,
        total: weights.dialect * l_dl + weights.polysemy * l_pc + weights.kl * l_kl,
    })
}
