// A small seeded Monte Carlo campaign with inference.

use honest_otr::simulation::{run_monte_carlo, write_report_csv, InferenceSettings, MonteCarloConfig, ScenarioSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::setting_a(200, 12, 2024);
    let cfg = MonteCarloConfig {
        reps: 4,
        inference: Some(InferenceSettings {
            eta_multiples: vec![15.0, 25.0],
            draws: 200,
            ..InferenceSettings::default()
        }),
        eval_n: 2000,
        ..MonteCarloConfig::default()
    };
    let c = run_monte_carlo(&spec, &cfg)?;
    let r = &c.report;
    if let Some(l2) = r.l2 {
        println!("{} reps, {} failures; l2 {:.3} ({:.3})", r.reps, r.failures, l2.mean, l2.se);
    }
    for e in &r.inference {
        println!("eta {}h: rejection rates {:?}, coverage {:?}", e.eta_multiple, e.rejection_rate, e.coverage);
    }
    write_report_csv(std::slice::from_ref(r), std::io::stdout())?;
    Ok(())
}

fn main() {
    run_example().expect("Monte Carlo example failed");
}
