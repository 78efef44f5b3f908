// Load the benchmark prompt pairs, apply the annotation filter and split.

use std::error::Error;
use std::path::Path;

use dialign::dataset::{
    apply_annotation_filter, load_annotations, load_dataset, split_dataset, split_dataset_with, SplitGranularity,
    SplitRatios,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let corpus = load_dataset(fixtures.join("corpus/prompts.jsonl"))?;
    println!("{} pairs, {} prompts", corpus.len(), corpus.prompt_count());
    for (dialect, n) in corpus.per_dialect() {
        println!("  {dialect}: {n}");
    }
    println!("style warnings: {}", corpus.style_warnings().len());

    let split = split_dataset(&corpus, SplitRatios::DEFAULT, 42)?;
    let (train, val, test) = split.sizes();
    println!("split by pair: {train}/{val}/{test}");
    let grouped = split_dataset_with(&corpus, SplitRatios::DEFAULT, 42, SplitGranularity::Lexeme)?;
    let (train, val, test) = grouped.sizes();
    println!("split by lexeme: {train}/{val}/{test}");

    let small = load_dataset(fixtures.join("small/prompts.jsonl"))?;
    let notes = load_annotations(fixtures.join("small/annotations.jsonl"))?;
    let outcome = apply_annotation_filter(&small, &notes)?;
    for (reason, ids) in &outcome.rejected {
        println!("rejected as {reason}: {}", ids.join(", "));
    }
    println!(
        "retained {} / rejected {}",
        outcome.retained.len(),
        outcome.rejected_count()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
