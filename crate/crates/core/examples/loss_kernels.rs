// Evaluate the three alignment losses and their weighted total.

use std::error::Error;

use dialign::embedding_store::{AnchorSet, EmbeddingKind, EmbeddingStore};
use dialign::losses::{
    dialect_learning_loss, kl_divergence, kl_regularization_loss, polysemy_control_loss, softmax, total_loss,
    FrozenLogitCache, LossWeights,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dl = dialect_learning_loss(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![0.0, 1.0], vec![-1.0, 0.0]])?;
    println!("dialect learning, mixed batch: {}", dl.value);

    let pc = polysemy_control_loss(&[vec![1.0, 2.0, 2.0]], &[vec![2.0, 1.0, 2.0]])?;
    println!("polysemy control, cos 8/9: {:.12}", pc.value);
    println!("  gradient: {:?}", pc.grads[0]);

    println!(
        "KL((1,0) || (0.5,0.5)) = {:.12}",
        kl_divergence(&[1.0, 0.0], &[0.5, 0.5])?
    );
    println!("softmax(1, 2, 3) = {:?}", softmax(&[1.0, 2.0, 3.0])?);

    let ids: Vec<String> = (0..3).map(|i| format!("a{i}")).collect();
    let rows = [vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.2], vec![0.3, 0.0, 1.0]];
    let anchors = AnchorSet::new(EmbeddingStore::from_rows(ids, EmbeddingKind::Text, 3, &rows)?, None)?;
    let cache = FrozenLogitCache::build(&anchors, false, 1.0)?;
    let unchanged: Vec<Vec<f64>> = rows.to_vec();
    let rotated: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[1], r[2], r[0]]).collect();
    let kl0 = kl_regularization_loss(&unchanged, None, &cache, &anchors)?;
    let kl1 = kl_regularization_loss(&rotated, None, &cache, &anchors)?;
    println!("text KL, unchanged encoder: {:.3e}", kl0.value);
    println!("text KL, rotated encoder: {:.6}", kl1.value);

    let total = total_loss(dl.value, pc.value, kl1.value, LossWeights::UNIT)?;
    println!(
        "total: {:.6} = {:.6} + {:.6} + {:.6}",
        total.total, total.l_dl, total.l_pc, total.l_kl
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
