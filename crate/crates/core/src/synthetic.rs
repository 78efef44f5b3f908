//! Synthetic training task: frozen dialect embeddings are unit-norm
//! perturbations of their SAE partners along a shared dialect direction,
//! with random caption/image anchors and polysemy embeddings.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{split_dataset, DialectId, PairSet, PromptPair, PromptStyle, SplitAssignment, SplitRatios};
use crate::embedding_store::{write_store, AnchorSet, EmbeddingKind, EmbeddingStore, StoreError};
use crate::trainer::{TrainError, TrainingData};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub pairs: usize,
    pub anchors: usize,
    /// Length of the shared dialect shift added before renormalizing.
    pub shift: f64,
    /// Per-pair isotropic noise scale on top of the shift.
    pub noise: f64,
    /// Every `polysemy_every`-th pair carries a polysemy embedding.
    pub polysemy_every: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            dim: 32,
            pairs: 200,
            anchors: 64,
            shift: 0.18,
            noise: 0.01,
            polysemy_every: 4,
            seed: 0,
        }
    }
}

pub struct SyntheticTask {
    pub dataset: PairSet,
    pub split: SplitAssignment,
    pub sae: EmbeddingStore,
    pub dialect: EmbeddingStore,
    pub polysemy: EmbeddingStore,
    pub anchors: AnchorSet,
}

const DIALECTS: [&str; 5] = ["AAE", "BrE", "ChE", "InE", "SgE"];

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the generator self-contained.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| gaussian(rng)).collect())
}

impl SyntheticTask {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self, StoreError> {
        let d = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // Spread evenly over coordinates.
        let direction = vec![1.0 / (d as f64).sqrt(); d];

        let mut pairs = Vec::with_capacity(spec.pairs);
        let (mut sae, mut dia, mut poly, mut poly_ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..spec.pairs {
            let id = format!("syn-{i:04}");
            let s = random_unit(&mut rng, d);
            let dv: Vec<f64> = s
                .iter()
                .zip(&direction)
                .map(|(si, ui)| si + spec.shift * ui + spec.noise * gaussian(&mut rng))
                .collect();
            let has_poly = spec.polysemy_every > 0 && i % spec.polysemy_every == 0;
            if has_poly {
                poly.push(random_unit(&mut rng, d));
                poly_ids.push(id.clone());
            }
            let (lex_s, lex_d) = (format!("sae{i}"), format!("dia{i}"));
            pairs.push(PromptPair {
                id: id.clone(),
                dialect: DialectId::new(DIALECTS[i % DIALECTS.len()]),
                sae_prompt: format!("a photo of a {lex_s}"),
                dialect_prompt: format!("a photo of a {lex_d}"),
                polysemy_prompt: has_poly.then(|| format!("the word {lex_d} in another sense")),
                lexeme_sae: lex_s,
                lexeme_dialect: lex_d,
                style: PromptStyle::Concise,
            });
            sae.push(s);
            dia.push(unit(dv));
        }
        let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
        let caps: Vec<Vec<f64>> = (0..spec.anchors).map(|_| random_unit(&mut rng, d)).collect();
        // Image anchors sit near their captions.
        let imgs: Vec<Vec<f64>> = caps
            .iter()
            .map(|c| {
                unit(
                    c.iter()
                        .map(|x| x + 0.3 * gaussian(&mut rng) / (d as f64).sqrt())
                        .collect(),
                )
            })
            .collect();
        let anchor_ids: Vec<String> = (0..spec.anchors).map(|i| format!("anchor-{i:04}")).collect();

        let dataset = PairSet::new(pairs).expect("synthetic pairs are valid");
        let split = split_dataset(&dataset, SplitRatios::DEFAULT, spec.seed).expect("nonempty");
        Ok(SyntheticTask {
            dataset,
            split,
            sae: EmbeddingStore::from_rows(ids.clone(), EmbeddingKind::Text, d, &sae)?,
            dialect: EmbeddingStore::from_rows(ids, EmbeddingKind::Text, d, &dia)?,
            polysemy: EmbeddingStore::from_rows(poly_ids, EmbeddingKind::Text, d, &poly)?,
            anchors: AnchorSet::new(
                EmbeddingStore::from_rows(anchor_ids.clone(), EmbeddingKind::Text, d, &caps)?,
                Some(EmbeddingStore::from_rows(anchor_ids, EmbeddingKind::Image, d, &imgs)?),
            )?,
        })
    }

    pub fn training_data(&self) -> Result<TrainingData, TrainError> {
        TrainingData::from_stores(&self.sae, &self.dialect, Some(&self.polysemy), &self.split)
    }

    /// Writes `prompts.jsonl`, `split.tsv`, `embeddings/{sae,dialect,polysemy}`
    /// and `anchors/{captions,images}` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("embeddings"))?;
        fs::create_dir_all(dir.join("anchors"))?;
        let mut jsonl = String::new();
        for p in self.dataset.iter() {
            let mut rec = serde_json::json!({
                "id": p.id,
                "dialect": p.dialect.code(),
                "lexeme_sae": p.lexeme_sae,
                "lexeme_dialect": p.lexeme_dialect,
                "sae_prompt": p.sae_prompt,
                "dialect_prompt": p.dialect_prompt,
                "style": p.style.as_str(),
            });
            if let Some(m) = &p.polysemy_prompt {
                rec["polysemy_prompt"] = m.as_str().into();
            }
            jsonl.push_str(&rec.to_string());
            jsonl.push('\n');
        }
        fs::write(dir.join("prompts.jsonl"), jsonl)?;
        self.split.write(dir.join("split.tsv"))?;
        let io = |e: StoreError| std::io::Error::other(e.to_string());
        write_store(&self.sae, dir.join("embeddings/sae")).map_err(io)?;
        write_store(&self.dialect, dir.join("embeddings/dialect")).map_err(io)?;
        write_store(&self.polysemy, dir.join("embeddings/polysemy")).map_err(io)?;
        write_store(self.anchors.captions(), dir.join("anchors/captions")).map_err(io)?;
        if let Some(img) = self.anchors.images() {
            write_store(img, dir.join("anchors/images")).map_err(io)?;
        }
        Ok(())
    }
}
