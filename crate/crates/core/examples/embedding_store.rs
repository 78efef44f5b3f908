// Write and read `.emb`/`.ids` embedding stores and build an anchor set.

use std::error::Error;
use std::path::Path;

use dialign::embedding_store::{
    cosine_similarity, read_anchor_set, read_store, write_store, EmbeddingKind, EmbeddingStore,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let known = read_store(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/stores/known3x4"))?;
    println!(
        "known3x4: {} rows of dim {} ({:?})",
        known.count(),
        known.dim(),
        known.kind()
    );
    for (i, id) in known.ids().iter().enumerate() {
        println!("  {id}: {:?}", known.matrix().raw_row(i));
    }

    let dir = std::env::temp_dir().join(format!("dialign-store-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let ids: Vec<String> = ["cat", "dog", "car"].iter().map(|s| s.to_string()).collect();
    let captions = [vec![1.0, 0.2, 0.0], vec![0.9, 0.4, 0.1], vec![0.0, 0.1, 1.0]];
    let images = [vec![0.8, 0.3, 0.1], vec![0.7, 0.5, 0.0], vec![0.1, 0.0, 0.9]];
    let caps = EmbeddingStore::from_rows(ids.clone(), EmbeddingKind::Text, 3, &captions)?;
    let imgs = EmbeddingStore::from_rows(ids, EmbeddingKind::Image, 3, &images)?;
    write_store(&caps, dir.join("captions"))?;
    write_store(&imgs, dir.join("images"))?;

    let anchors = read_anchor_set(dir.join("captions"), Some(&dir.join("images")))?;
    println!("anchor set: {} pairs, dim {}", anchors.len(), anchors.dim());
    let images = anchors.images().expect("images were written");
    for i in 0..anchors.len() {
        let c = cosine_similarity(&anchors.captions().row(i), &images.row(i))?;
        println!("  cos(caption, image) for {}: {c:.4}", anchors.captions().ids()[i]);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
