// Observational data: L1 logistic propensity model and the modified
// response `4(A - pi)Y`.

use honest_otr::estimator::EstimatorConfig;
use honest_otr::observational::{obs_pipeline, PropensityConfig};
use honest_otr::simulation::{generate, support_metrics, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::observational(300, 10, 9);
    let d = generate(&spec, 1)?;
    let out = obs_pipeline(&d, None, &EstimatorConfig::default(), &PropensityConfig::default())?;
    let prop = &out.propensity;
    println!("propensity penalty {:.4} after {} iterations", prop.lambda_p, prop.iterations);
    println!("intercept {:.3}, slopes {:.3?}", prop.xi[0], &prop.xi.as_slice()[1..4]);
    println!("min pi(1 - pi) = {:.4}, poor overlap: {}", out.min_overlap, out.poor_overlap);
    let m = support_metrics(&out.fit.beta, &spec.beta0)?;
    println!("index coefficient l2 error {:.3}, FP {}", m.l2, m.false_positives);
    Ok(())
}

fn main() {
    run_example().expect("observational example failed");
}
