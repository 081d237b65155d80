// Fit the sparse index coefficient on simulated randomized-trial data.
//
// ```bash
// cargo run --release --example fit_index_model
// ```

use honest_otr::data::{modify_response, ResponseMode};
use honest_otr::estimator::{fit_cv, EstimatorConfig};
use honest_otr::simulation::{generate, support_metrics, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::setting_a(200, 20, 7);
    let d = generate(&spec, 0)?;
    let ytilde = modify_response(&d, ResponseMode::Randomized, None)?;
    let (fit, cv) = fit_cv(&d, &ytilde, None, &EstimatorConfig::default())?;

    println!("lambda chosen by CV: {:.4} (grid of {})", cv.lambda, cv.grid.len());
    println!("iterations: {}, converged: {}", fit.iterations, fit.converged);
    for (j, (b, t)) in fit.beta.full().iter().zip(spec.beta0.full().iter()).enumerate() {
        if *b != 0.0 || *t != 0.0 {
            println!("  beta_{:<2} {:>8.4}   truth {:>5.2}", j + 1, b, t);
        }
    }
    let m = support_metrics(&fit.beta, &spec.beta0)?;
    println!("l1 {:.3}  l2 {:.3}  FN {}  FP {}", m.l1, m.l2, m.false_negatives, m.false_positives);
    assert_eq!(fit.beta.first(), 1.0);
    Ok(())
}

fn main() {
    run_example().expect("fit example failed");
}
