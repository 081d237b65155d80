// Simultaneous test that a group of coefficients is zero, with the
// Gaussian multiplier bootstrap.

use honest_otr::bootstrap::{group_test, BootstrapContext, GroupTestSpec};
use honest_otr::data::{modify_response, ResponseMode};
use honest_otr::debias::{build_theta, infer, Eta};
use honest_otr::estimator::{fit_cv, EstimatorConfig};
use honest_otr::simulation::{generate, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::setting_a(300, 15, 5);
    let d = generate(&spec, 0)?;
    let ytilde = modify_response(&d, ResponseMode::Randomized, None)?;
    let (fit, _) = fit_cv(&d, &ytilde, None, &EstimatorConfig::default())?;
    let inv = build_theta(&fit.beta, &d, &ytilde, Eta::default())?;
    let ctx = BootstrapContext::new(&inv, &infer(&fit.beta, &inv, 0.05)?);

    // coefficient positions; 6..9 are null, 2 carries a signal
    for group in [vec![6, 7, 8, 9], vec![2, 6, 7, 8, 9]] {
        let t = group_test(&ctx, &GroupTestSpec { draws: 500, ..GroupTestSpec::new(group) })?;
        println!(
            "G = {:?}: T = {:.3}, c* = {:.3}, p = {:.3}, reject = {}",
            t.group, t.statistic, t.c_star, t.p_value, t.reject
        );
    }
    Ok(())
}

fn main() {
    run_example().expect("group test example failed");
}
