// Check analytic adapter gradients against central differences.

use std::error::Error;

use dialign::gradcheck::{finite_difference_gradcheck, GradcheckConfig, TOLERANCE};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    for (dim, pairs, anchors, seed) in [(8, 4, 6, 7), (2, 1, 2, 0), (16, 8, 8, 11)] {
        let config = GradcheckConfig {
            dim,
            pairs,
            anchors,
            seed,
            ..GradcheckConfig::default()
        };
        let report = finite_difference_gradcheck(&config)?;
        println!("dim {dim}, {pairs} pairs, {anchors} anchors, seed {seed}");
        for c in &report.components {
            println!("  {:<18} {:.2e}", c.component.name(), c.max_rel_error);
        }
        println!("  passed (< {TOLERANCE:e}): {}", report.passed());
    }

    let corrupted = GradcheckConfig {
        corrupt: true,
        ..GradcheckConfig::default()
    };
    let report = finite_difference_gradcheck(&corrupted)?;
    println!("corrupted gradient detected: {}", !report.passed());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
