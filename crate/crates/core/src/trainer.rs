//! Training loop for the linear adapter: seeded batching, combined
//! objective, AdamW with per-epoch cosine annealing, epoch-end validation
//! and best-checkpoint selection.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::LinearAdapter;
use crate::dataset::{Split, SplitAssignment};
use crate::embedding_store::{dot, norm, AnchorSet, EmbeddingStore, StoreError};
use crate::losses::{
    dialect_learning_loss, kl_regularization_loss, polysemy_control_loss, total_loss, FrozenLogitCache, LossBreakdown,
    LossError, LossWeights,
};
use crate::optim::{adamw_step, cosine_annealed_lr, AdamWParams, OptimError, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlAnchorBatching {
    /// Every anchor on every step.
    Full,
    /// Anchors are reshuffled each epoch and consumed in chunks of this size,
    /// one chunk per step, cycling when the epoch has more steps than chunks.
    Minibatch(usize),
}

impl std::fmt::Display for KlAnchorBatching {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KlAnchorBatching::Full => f.write_str("full"),
            KlAnchorBatching::Minibatch(n) => write!(f, "minibatch:{n}"),
        }
    }
}

impl std::str::FromStr for KlAnchorBatching {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(KlAnchorBatching::Full);
        }
        s.strip_prefix("minibatch:")
            .and_then(|n| n.parse().ok())
            .filter(|n| *n > 0)
            .map(KlAnchorBatching::Minibatch)
            .ok_or_else(|| format!("expected `full` or `minibatch:<size>`, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub anchor_count: usize,
    pub kl_anchor_batching: KlAnchorBatching,
    pub loss_weights: LossWeights,
    pub temperature: f64,
    pub use_image_anchors: bool,
    pub seed: u64,
    pub lr_min: f64,
    /// Use the first `anchor_count` anchors when more are supplied instead
    /// of failing.
    pub truncate_anchors: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 32,
            anchor_count: 1024,
            kl_anchor_batching: KlAnchorBatching::Full,
            loss_weights: LossWeights::UNIT,
            temperature: 1.0,
            use_image_anchors: false,
            seed: 0,
            lr_min: 0.0,
            truncate_anchors: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be nonnegative");
        }
        if !(self.lr_min >= 0.0 && self.lr_min.is_finite()) {
            return bad("lr_min must be nonnegative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.anchor_count == 0 {
            return bad("epochs, batch size and anchor count must be positive");
        }
        if let KlAnchorBatching::Minibatch(0) = self.kl_anchor_batching {
            return bad("anchor minibatch size must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        self.loss_weights.validate()?;
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no {store} embedding for pair {id}")]
    MissingEmbedding { store: &'static str, id: String },
    #[error("embedding dimension {found} does not match {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("expected {expected} anchors, found {found}")]
    AnchorCount { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("epoch {epoch}, step {step}: {source}")]
    Optim {
        epoch: usize,
        step: usize,
        #[source]
        source: OptimError,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<OptimError> for TrainError {
    fn from(source: OptimError) -> Self {
        TrainError::Optim {
            epoch: 0,
            step: 0,
            source,
        }
    }
}

/// Frozen embeddings of one prompt pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbedding {
    pub id: String,
    pub sae: Vec<f64>,
    pub dialect: Vec<f64>,
    pub polysemy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub train: Vec<PairEmbedding>,
    pub val: Vec<PairEmbedding>,
}

impl TrainingData {
    pub fn new(train: Vec<PairEmbedding>, val: Vec<PairEmbedding>) -> Result<Self, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("val"));
        }
        let dim = train[0].sae.len();
        for p in train.iter().chain(&val) {
            for v in [&p.sae, &p.dialect].into_iter().chain(p.polysemy.as_ref()) {
                if v.len() != dim {
                    return Err(TrainError::DimMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
            }
        }
        Ok(TrainingData { train, val })
    }

    /// Gathers frozen embeddings for the train and val pairs of `split`.
    /// Pairs present in `polysemy` carry a polysemy embedding.
    pub fn from_stores(
        sae: &EmbeddingStore,
        dialect: &EmbeddingStore,
        polysemy: Option<&EmbeddingStore>,
        split: &SplitAssignment,
    ) -> Result<Self, TrainError> {
        let sae_ix = sae.index();
        let dia_ix = dialect.index();
        let poly_ix = polysemy.map(|p| p.index());
        let gather = |which: Split| -> Result<Vec<PairEmbedding>, TrainError> {
            split
                .ids(which)
                .into_iter()
                .map(|id| {
                    let missing = |store| TrainError::MissingEmbedding {
                        store,
                        id: id.to_string(),
                    };
                    let s = *sae_ix.get(id).ok_or_else(|| missing("sae"))?;
                    let d = *dia_ix.get(id).ok_or_else(|| missing("dialect"))?;
                    let m = match (&poly_ix, polysemy) {
                        (Some(ix), Some(store)) => ix.get(id).map(|&i| store.row(i)),
                        _ => None,
                    };
                    Ok(PairEmbedding {
                        id: id.to_string(),
                        sae: sae.row(s),
                        dialect: dialect.row(d),
                        polysemy: m,
                    })
                })
                .collect()
        };
        Self::new(gather(Split::Train)?, gather(Split::Val)?)
    }

    pub fn dim(&self) -> usize {
        self.train[0].sae.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub best_adapter: LinearAdapter,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Validation losses of the identity adapter, before any step.
    pub initial_validation: LossBreakdown,
}

impl TrainResult {
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_dl,train_pc,train_kl,train_total,val_dl,val_pc,val_kl,val_total";

/// Full-precision history CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.epoch,
            r.lr,
            r.train.l_dl,
            r.train.l_pc,
            r.train.l_kl,
            r.train.total,
            r.val.l_dl,
            r.val.l_pc,
            r.val.l_kl,
            r.val.total
        );
    }
    out
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, history_csv(history))
}

/// Anchor set with its frozen logit cache and caption rows.
pub struct AnchorContext<'a> {
    pub anchors: &'a AnchorSet,
    pub cache: FrozenLogitCache,
    captions: Vec<Vec<f64>>,
}

impl<'a> AnchorContext<'a> {
    pub fn new(anchors: &'a AnchorSet, use_images: bool, temperature: f64) -> Result<Self, LossError> {
        Ok(AnchorContext {
            anchors,
            cache: FrozenLogitCache::build(anchors, use_images, temperature)?,
            captions: anchors.captions().matrix().rows(),
        })
    }
}

/// Combined objective on one batch and, when `grad` is given, its gradient
/// with respect to the flattened adapter parameters (added into `grad`).
/// L_PC is 0 when no pair in the batch carries a polysemy prompt.
pub fn batch_objective(
    adapter: &LinearAdapter,
    pairs: &[&PairEmbedding],
    anchor_indices: Option<&[usize]>,
    ctx: &AnchorContext<'_>,
    weights: LossWeights,
    grad: Option<&mut [f64]>,
) -> Result<LossBreakdown, LossError> {
    let dialect_in: Vec<&[f64]> = pairs.iter().map(|p| p.dialect.as_slice()).collect();
    let sae: Vec<Vec<f64>> = pairs.iter().map(|p| p.sae.clone()).collect();
    let targets: Vec<Vec<f64>> = dialect_in.iter().map(|x| adapter.apply(x)).collect();
    let dl = dialect_learning_loss(&targets, &sae)?;

    let poly_in: Vec<&[f64]> = pairs.iter().filter_map(|p| p.polysemy.as_deref()).collect();
    let pc = if poly_in.is_empty() {
        None
    } else {
        let frozen: Vec<Vec<f64>> = poly_in.iter().map(|x| x.to_vec()).collect();
        let t: Vec<Vec<f64>> = poly_in.iter().map(|x| adapter.apply(x)).collect();
        Some(polysemy_control_loss(&t, &frozen)?)
    };

    let all: Vec<usize>;
    let ix = match anchor_indices {
        Some(ix) => ix,
        None => {
            all = (0..ctx.captions.len()).collect();
            &all
        }
    };
    let kl_in: Vec<&[f64]> = ix.iter().map(|&i| ctx.captions[i].as_slice()).collect();
    let kl_targets: Vec<Vec<f64>> = kl_in.iter().map(|x| adapter.apply(x)).collect();
    let kl = kl_regularization_loss(&kl_targets, Some(ix), &ctx.cache, ctx.anchors)?;

    let breakdown = total_loss(dl.value, pc.as_ref().map_or(0.0, |l| l.value), kl.value, weights)?;
    if let Some(acc) = grad {
        adapter.accumulate_grad(&dialect_in, &dl.grads, weights.dialect, acc);
        if let Some(pc) = &pc {
            adapter.accumulate_grad(&poly_in, &pc.grads, weights.polysemy, acc);
        }
        adapter.accumulate_grad(&kl_in, &kl.grads, weights.kl, acc);
    }
    Ok(breakdown)
}

/// Validation losses over all `pairs` and every anchor of `ctx`.
pub fn evaluate(
    adapter: &LinearAdapter,
    pairs: &[PairEmbedding],
    ctx: &AnchorContext<'_>,
    weights: LossWeights,
) -> Result<LossBreakdown, LossError> {
    let refs: Vec<&PairEmbedding> = pairs.iter().collect();
    batch_objective(adapter, &refs, None, ctx, weights, None)
}

/// Mean `cos(π(p^d), π0(p^s))`.
pub fn dialect_alignment(adapter: &LinearAdapter, pairs: &[PairEmbedding]) -> f64 {
    let sum: f64 = pairs.iter().map(|p| cos(&adapter.apply(&p.dialect), &p.sae)).sum();
    sum / pairs.len() as f64
}

/// Mean `cos(π(C_i), C_i)` over caption anchors.
pub fn anchor_preservation(adapter: &LinearAdapter, anchors: &AnchorSet) -> f64 {
    let rows = anchors.captions().matrix().rows();
    let sum: f64 = rows.iter().map(|c| cos(&adapter.apply(c), c)).sum();
    sum / rows.len() as f64
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn resolve_anchors(anchors: &AnchorSet, config: &TrainerConfig) -> Result<AnchorSet, TrainError> {
    let found = anchors.len();
    if found == config.anchor_count || (found > config.anchor_count && config.truncate_anchors) {
        Ok(anchors.truncated(config.anchor_count))
    } else {
        Err(TrainError::AnchorCount {
            expected: config.anchor_count,
            found,
        })
    }
}

/// Runs the full recipe. Validation uses `val_anchors` when given, otherwise
/// the training anchors; the validation total includes all three losses.
pub fn train(
    config: &TrainerConfig,
    data: &TrainingData,
    anchors: &AnchorSet,
    val_anchors: Option<&AnchorSet>,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let dim = data.dim();
    if anchors.dim() != dim {
        return Err(TrainError::DimMismatch {
            expected: dim,
            found: anchors.dim(),
        });
    }
    let train_anchors = resolve_anchors(anchors, config)?;
    let val_anchors = match val_anchors {
        Some(v) if v.dim() != dim => {
            return Err(TrainError::DimMismatch {
                expected: dim,
                found: v.dim(),
            })
        }
        Some(v) => v.clone(),
        None => train_anchors.clone(),
    };
    let train_ctx = AnchorContext::new(&train_anchors, config.use_image_anchors, config.temperature)?;
    let val_ctx = AnchorContext::new(&val_anchors, config.use_image_anchors, config.temperature)?;

    let weights = config.loss_weights;
    let hp = config.adamw();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adapter = LinearAdapter::identity(dim);
    let mut state = OptimizerState::for_adapter(&adapter);
    let initial_validation = evaluate(&adapter, &data.val, &val_ctx, weights)?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, LinearAdapter)> = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut anchor_order: Vec<usize> = (0..train_anchors.len()).collect();

    for epoch in 0..config.epochs {
        let lr = cosine_annealed_lr(epoch, config.epochs, config.learning_rate, config.lr_min)?;
        order.shuffle(&mut rng);
        let anchor_chunks: Vec<&[usize]> = match config.kl_anchor_batching {
            KlAnchorBatching::Full => Vec::new(),
            KlAnchorBatching::Minibatch(size) => {
                anchor_order.shuffle(&mut rng);
                anchor_order.chunks(size).collect()
            }
        };

        let mut sums = LossBreakdown::default();
        let mut steps = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<&PairEmbedding> = batch.iter().map(|&i| &data.train[i]).collect();
            let anchor_ix = if anchor_chunks.is_empty() {
                None
            } else {
                Some(anchor_chunks[step % anchor_chunks.len()])
            };
            let mut grad = vec![0.0; adapter.param_count()];
            let b = batch_objective(&adapter, &pairs, anchor_ix, &train_ctx, weights, Some(&mut grad)).map_err(
                |e| match e {
                    LossError::NonFinite | LossError::NonFiniteComponent => TrainError::NonFiniteLoss { epoch, step },
                    other => TrainError::Loss(other),
                },
            )?;
            if !b.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            adamw_step(&mut adapter, &grad, &mut state, lr, &hp).map_err(|source| TrainError::Optim {
                epoch,
                step,
                source,
            })?;
            sums.l_dl += b.l_dl;
            sums.l_pc += b.l_pc;
            sums.l_kl += b.l_kl;
            sums.total += b.total;
            steps += 1;
        }
        let n = steps as f64;
        let train_mean = LossBreakdown {
            l_dl: sums.l_dl / n,
            l_pc: sums.l_pc / n,
            l_kl: sums.l_kl / n,
            total: sums.total / n,
        };
        let val = evaluate(&adapter, &data.val, &val_ctx, weights).map_err(|e| match e {
            LossError::NonFinite | LossError::NonFiniteComponent => TrainError::NonFiniteLoss { epoch, step: steps },
            other => TrainError::Loss(other),
        })?;
        if best.as_ref().is_none_or(|(_, v, _)| val.total < *v) {
            best = Some((epoch, val.total, adapter.clone()));
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train: train_mean,
            val,
        });
    }

    let (best_epoch, _, best_adapter) = best.expect("at least one epoch");
    Ok(TrainResult {
        best_adapter,
        best_epoch,
        history,
        initial_validation,
    })
}
