// Train the adapter on the synthetic dialect-shift task, with and without
// KL regularization. Pass a directory to also write the task files there
// for `dialign train`.

use std::error::Error;

use dialign::adapter::LinearAdapter;
use dialign::losses::LossWeights;
use dialign::synthetic::{SyntheticSpec, SyntheticTask};
use dialign::trainer::{anchor_preservation, dialect_alignment, train, TrainerConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run(None)
}

fn run(out_dir: Option<String>) -> Result<(), Box<dyn Error>> {
    let task = SyntheticTask::generate(&SyntheticSpec::default())?;
    if let Some(dir) = out_dir {
        task.write_to(&dir)?;
        println!("wrote synthetic task to {dir}");
    }
    let data = task.training_data()?;
    let identity = LinearAdapter::identity(data.dim());
    println!(
        "{} train / {} val pairs, dim {}, {} anchors",
        data.train.len(),
        data.val.len(),
        data.dim(),
        task.anchors.len()
    );
    println!(
        "before training: val alignment {:.5}",
        dialect_alignment(&identity, &data.val)
    );

    for (label, kl) in [("full objective", 1.0), ("without KL", 0.0)] {
        let config = TrainerConfig {
            anchor_count: task.anchors.len(),
            loss_weights: LossWeights {
                dialect: 1.0,
                polysemy: 1.0,
                kl,
            },
            ..TrainerConfig::default()
        };
        let result = train(&config, &data, &task.anchors, None)?;
        let best = &result.history[result.best_epoch];
        println!(
            "{label}: best epoch {}, val total {:.5e}, val alignment {:.5}, anchor preservation {:.6}",
            result.best_epoch,
            best.val.total,
            dialect_alignment(&result.best_adapter, &data.val),
            anchor_preservation(&result.best_adapter, &task.anchors)
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run(std::env::args().nth(1))
}
