// Round trip through CSV, with standardization and interaction columns.

use honest_otr::data::{load_csv, modify_response, standardize, write_csv, ColumnSchema, ResponseMode};
use honest_otr::estimator::{fit_cv, EstimatorConfig};
use honest_otr::simulation::{generate, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("honest-otr-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trial.csv");
    let d = generate(&ScenarioSpec::setting_a(150, 5, 1), 0)?;
    write_csv(&d, std::fs::File::create(&path)?)?;

    let loaded = load_csv(&path, &ColumnSchema::default())?;
    let expanded = standardize(&loaded.with_interactions())?;
    println!("{} rows, {} covariates after interactions", expanded.n(), expanded.p());
    let ytilde = modify_response(&expanded, ResponseMode::Randomized, None)?;
    let (fit, _) = fit_cv(&expanded, &ytilde, None, &EstimatorConfig::default())?;
    for (j, b) in fit.beta.full().iter().enumerate().filter(|(_, b)| **b != 0.0) {
        println!("  {:<8} {:>8.4}", expanded.column_name(j), b);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() {
    run_example().expect("CSV example failed");
}
