// Debiased estimates and 95% marginal confidence intervals.

use honest_otr::data::{modify_response, ResponseMode};
use honest_otr::debias::{build_theta, infer, Eta};
use honest_otr::estimator::{fit_cv, EstimatorConfig};
use honest_otr::simulation::{generate, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::setting_a(300, 12, 3);
    let d = generate(&spec, 0)?;
    let ytilde = modify_response(&d, ResponseMode::Randomized, None)?;
    let (fit, _) = fit_cv(&d, &ytilde, None, &EstimatorConfig::default())?;

    // the Dantzig tolerance is a multiple of the kernel bandwidth
    let inv = build_theta(&fit.beta, &d, &ytilde, Eta::default())?;
    let r = infer(&fit.beta, &inv, 0.05)?;
    println!("bandwidth {:.3}, eta {:.3}", inv.smoother.bandwidth, inv.eta);
    println!("coef   lasso  debiased          95% CI");
    let truth = spec.beta0.full();
    for k in 0..r.beta_tilde.len() {
        let (lo, hi) = r.intervals[k];
        println!(
            "b{:<3} {:>7.3} {:>9.3}   [{:>7.3}, {:>7.3}]  truth {:>5.2}",
            k + 2,
            fit.beta.rest()[k],
            r.beta_tilde[k],
            lo,
            hi,
            truth[k + 1]
        );
    }
    println!("max off-diagonal excess of Theta'J1: {:.2e}", inv.max_row_excess());
    Ok(())
}

fn main() {
    run_example().expect("interval example failed");
}
