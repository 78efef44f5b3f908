//! Central-difference check of the analytic adapter gradients on random
//! small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapter::LinearAdapter;
use crate::embedding_store::{AnchorSet, EmbeddingKind, EmbeddingStore};
use crate::losses::{LossError, LossWeights};
use crate::trainer::{batch_objective, AnchorContext, PairEmbedding};

pub const MAX_DIM: usize = 16;
pub const MAX_PAIRS: usize = 8;
pub const MAX_ANCHORS: usize = 8;
pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true
/// gradient is zero are judged on absolute error.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub pairs: usize,
    pub anchors: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Start from the identity adapter instead of a random one.
    pub identity: bool,
    /// Perturb the analytic gradient before comparing (detector sanity).
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            dim: 8,
            pairs: 4,
            anchors: 6,
            seed: 7,
            temperature: 1.0,
            identity: false,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradcheckError {
    #[error("gradcheck bounds: dim <= {MAX_DIM}, pairs <= {MAX_PAIRS}, anchors <= {MAX_ANCHORS}, all positive")]
    Bounds,
    #[error("non-finite loss while perturbing {0}")]
    NonFinite(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    DialectLearning,
    PolysemyControl,
    KlText,
    KlImage,
    CombinedText,
    CombinedImage,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::DialectLearning,
        Component::PolysemyControl,
        Component::KlText,
        Component::KlImage,
        Component::CombinedText,
        Component::CombinedImage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::DialectLearning => "dialect_learning",
            Component::PolysemyControl => "polysemy_control",
            Component::KlText => "kl_text",
            Component::KlImage => "kl_image",
            Component::CombinedText => "combined_text",
            Component::CombinedImage => "combined_image",
        }
    }

    fn weights(self) -> LossWeights {
        match self {
            Component::DialectLearning => LossWeights {
                dialect: 1.0,
                polysemy: 0.0,
                kl: 0.0,
            },
            Component::PolysemyControl => LossWeights {
                dialect: 0.0,
                polysemy: 1.0,
                kl: 0.0,
            },
            Component::KlText | Component::KlImage => LossWeights {
                dialect: 0.0,
                polysemy: 0.0,
                kl: 1.0,
            },
            Component::CombinedText | Component::CombinedImage => LossWeights::UNIT,
        }
    }

    fn uses_images(self) -> bool {
        matches!(self, Component::KlImage | Component::CombinedImage)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentError {
    pub component: Component,
    pub max_rel_error: f64,
    /// Parameter attaining the maximum.
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub components: Vec<ComponentError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < TOLERANCE
    }

    pub fn get(&self, component: Component) -> Option<&ComponentError> {
        self.components.iter().find(|c| c.component == component)
    }
}

/// A random instance: adapter, pairs (all carrying polysemy prompts) and an
/// anchor set with both caption and image rows.
pub struct Instance {
    pub adapter: LinearAdapter,
    pub pairs: Vec<PairEmbedding>,
    pub anchors: AnchorSet,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_instance(config: &GradcheckConfig) -> Instance {
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let adapter = if config.identity {
        LinearAdapter::identity(d)
    } else {
        let mut w = LinearAdapter::identity(d).weight().to_vec();
        for x in w.iter_mut() {
            *x += 0.3 * rng.gen_range(-1.0..1.0);
        }
        let b = uniform(&mut rng, d).into_iter().map(|x| 0.3 * x).collect();
        LinearAdapter::from_parts(d, w, b).expect("finite")
    };
    let pairs = (0..config.pairs)
        .map(|i| PairEmbedding {
            id: format!("g{i}"),
            sae: uniform(&mut rng, d),
            dialect: uniform(&mut rng, d),
            polysemy: Some(uniform(&mut rng, d)),
        })
        .collect();
    let ids: Vec<String> = (0..config.anchors).map(|i| format!("a{i}")).collect();
    let caps: Vec<Vec<f64>> = (0..config.anchors).map(|_| uniform(&mut rng, d)).collect();
    let imgs: Vec<Vec<f64>> = (0..config.anchors).map(|_| uniform(&mut rng, d)).collect();
    // Stores hold f32, so the instance lives at f32-representable points.
    let caps = EmbeddingStore::from_rows(ids.clone(), EmbeddingKind::Text, d, &caps).expect("shape");
    let imgs = EmbeddingStore::from_rows(ids, EmbeddingKind::Image, d, &imgs).expect("shape");
    Instance {
        adapter,
        pairs,
        anchors: AnchorSet::new(caps, Some(imgs)).expect("aligned"),
    }
}

fn check_component(
    instance: &Instance,
    component: Component,
    config: &GradcheckConfig,
) -> Result<ComponentError, GradcheckError> {
    let ctx = AnchorContext::new(&instance.anchors, component.uses_images(), config.temperature)?;
    let weights = component.weights();
    let pairs: Vec<&PairEmbedding> = instance.pairs.iter().collect();
    let mut analytic = vec![0.0; instance.adapter.param_count()];
    batch_objective(&instance.adapter, &pairs, None, &ctx, weights, Some(&mut analytic))?;
    if config.corrupt {
        analytic[0] = analytic[0] * 1.5 + 1e-3;
    }

    let base = instance.adapter.params();
    let mut probe = instance.adapter.clone();
    let mut worst = (0.0, 0usize);
    for k in 0..base.len() {
        let mut eval = |delta: f64| -> Result<f64, GradcheckError> {
            let mut p = base.clone();
            p[k] += delta;
            probe.set_params(&p);
            let v = batch_objective(&probe, &pairs, None, &ctx, weights, None)
                .map_err(|e| match e {
                    LossError::NonFinite | LossError::NonFiniteComponent => {
                        GradcheckError::NonFinite(instance.adapter.param_name(k))
                    }
                    other => GradcheckError::Loss(other),
                })?
                .total;
            if !v.is_finite() {
                return Err(GradcheckError::NonFinite(instance.adapter.param_name(k)));
            }
            Ok(v)
        };
        let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
        let a = analytic[k];
        if !a.is_finite() {
            return Err(GradcheckError::NonFinite(instance.adapter.param_name(k)));
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if rel > worst.0 {
            worst = (rel, k);
        }
    }
    Ok(ComponentError {
        component,
        max_rel_error: worst.0,
        worst: instance.adapter.param_name(worst.1),
    })
}

/// Compares analytic and central-difference gradients over every entry of
/// `W` and `b` for each loss component and the combined objective.
pub fn finite_difference_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport, GradcheckError> {
    if config.dim == 0
        || config.pairs == 0
        || config.anchors == 0
        || config.dim > MAX_DIM
        || config.pairs > MAX_PAIRS
        || config.anchors > MAX_ANCHORS
    {
        return Err(GradcheckError::Bounds);
    }
    let instance = random_instance(config);
    let components = Component::ALL
        .iter()
        .map(|&c| check_component(&instance, c, config))
        .collect::<Result<_, _>>()?;
    Ok(GradcheckReport { components })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let r = finite_difference_gradcheck(&GradcheckConfig::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.components.len(), 6);
    }

    #[test]
    fn smallest_instance_passes() {
        for seed in 0..5 {
            let c = GradcheckConfig {
                dim: 2,
                pairs: 1,
                anchors: 2,
                seed,
                ..GradcheckConfig::default()
            };
            let r = finite_difference_gradcheck(&c).unwrap();
            assert!(r.passed(), "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn identity_polysemy_gradient_is_finite_zero() {
        let c = GradcheckConfig {
            identity: true,
            ..GradcheckConfig::default()
        };
        let r = finite_difference_gradcheck(&c).unwrap();
        assert!(r.get(Component::PolysemyControl).unwrap().max_rel_error < TOLERANCE);
        assert!(r.get(Component::KlText).unwrap().max_rel_error < TOLERANCE);
    }

    #[test]
    fn corruption_is_detected() {
        let c = GradcheckConfig {
            corrupt: true,
            ..GradcheckConfig::default()
        };
        assert!(!finite_difference_gradcheck(&c).unwrap().passed());
    }

    #[test]
    fn bounds_enforced() {
        let c = GradcheckConfig {
            dim: 17,
            ..GradcheckConfig::default()
        };
        assert_eq!(finite_difference_gradcheck(&c), Err(GradcheckError::Bounds));
    }
}
