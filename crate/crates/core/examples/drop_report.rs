// Build dialect-drop reports from per-generation scores in both
// aggregation modes.

use std::error::Error;
use std::path::Path;

use dialign::dataset::load_dataset;
use dialign::evaluation::{build_report, metrics_in, read_scores, report_csv, report_markdown, AggregationMode};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scores");
    let scores = read_scores(dir.join("two_pairs.csv"))?;
    let dataset = load_dataset(dir.join("two_pairs_prompts.jsonl"))?;

    let mut reports = Vec::new();
    for mode in [AggregationMode::RatioOfAverages, AggregationMode::MeanOfPairDrops] {
        for metric in metrics_in(&scores) {
            let mut r = build_report(&scores, &dataset, &metric, None, mode, mode.as_str())?;
            println!("{} {}: overall {:.6}%", mode.as_str(), metric, r.overall);
            r.model = format!("two pairs ({})", mode.as_str());
            reports.push(r);
        }
    }
    print!("{}", report_csv(&reports));
    print!("{}", report_markdown(&reports));
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
