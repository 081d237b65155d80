// Value of the estimated rule and its agreement with the optimal rule.

use honest_otr::data::{modify_response, ResponseMode};
use honest_otr::estimator::{fit_cv, EstimatorConfig};
use honest_otr::simulation::{generate, match_ratio, value_estimate, IndexRule, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::setting_a(300, 20, 11);
    let d = generate(&spec, 0)?;
    let ytilde = modify_response(&d, ResponseMode::Randomized, None)?;
    let (fit, _) = fit_cv(&d, &ytilde, None, &EstimatorConfig::default())?;

    let rule = IndexRule::new(&fit.beta, &d, &ytilde.values);
    let v = value_estimate(&d, &rule.recommend(d.covariates())?)?;
    let treat_all = value_estimate(&d, &vec![true; d.n()])?;
    let treat_none = value_estimate(&d, &vec![false; d.n()])?;
    println!("value: estimated rule {v:.3}, treat all {treat_all:.3}, treat none {treat_none:.3}");
    println!("optimal value {:.3}", spec.reference_value().unwrap_or(f64::NAN));
    let mr = match_ratio(&spec, |x| rule.recommend(x), 10_000, 1)?;
    println!("match ratio on 10^4 fresh points: {:.2}%", 100.0 * mr);
    Ok(())
}

fn main() {
    run_example().expect("value example failed");
}
