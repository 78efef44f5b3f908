// Recompute per-dialect and overall drops for every benchmarked model from
// per-dialect mean scores and compare them with the published drops.

use std::collections::BTreeMap;
use std::error::Error;
use std::path::Path;

use dialign::evaluation::{read_mean_rows, report_markdown, reports_from_means, AggregationMode};

#[derive(serde::Deserialize)]
struct Published {
    model: String,
    style: String,
    metric: String,
    dialect: String,
    drop_pct: f64,
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/published");
    let rows = read_mean_rows(dir.join("dialect_means.csv"))?;
    let reports = reports_from_means(&rows, AggregationMode::RatioOfAverages)?;

    let mut published = BTreeMap::new();
    for rec in csv::Reader::from_path(dir.join("published_drops.csv"))?.deserialize() {
        let p: Published = rec?;
        published.insert((p.model, p.style, p.metric, p.dialect), p.drop_pct);
    }

    let mut checked = 0;
    let mut off = Vec::new();
    for r in &reports {
        let style = r.style.map_or("all", |s| s.as_str()).to_string();
        let cells = r
            .per_dialect
            .iter()
            .map(|(d, v)| (d.code().to_string(), *v, 0.02))
            .chain([("overall".to_string(), r.overall, 0.01)]);
        for (dialect, value, tol) in cells {
            let key = (r.model.clone(), style.clone(), r.metric.to_string(), dialect);
            if let Some(&want) = published.get(&key) {
                checked += 1;
                if (value - want).abs() > tol {
                    off.push((key, value, want));
                }
            }
        }
    }
    println!("{checked} published cells compared");
    for ((model, style, metric, dialect), got, want) in &off {
        println!("  {model} {style} {metric} {dialect}: computed {got:.2}, published {want:.2}");
    }

    let concise: Vec<_> = reports
        .iter()
        .filter(|r| r.metric.as_str() == "vqascore" && r.style.is_some_and(|s| s.as_str() == "concise"))
        .cloned()
        .collect();
    print!("{}", report_markdown(&concise[..3]));
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
