// The linear programs behind the nodewise Dantzig step.

use honest_otr::debias::{nodewise_dantzig, nodewise_program, nodewise_residual};
use honest_otr::lp::{solve_dual, solve_lp, LinearProgram, Relation};
use nalgebra::DMatrix;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // min x + 2y  s.t.  x + y >= 1,  x - y <= 0.5,  x, y >= 0
    let lp = LinearProgram::new(vec![1.0, 2.0])
        .constrain(vec![1.0, 1.0], Relation::Ge, 1.0)
        .constrain(vec![1.0, -1.0], Relation::Le, 0.5);
    let s = solve_lp(&lp)?;
    println!("two-phase simplex: x = {:?}, objective {:.4}, {} pivots", s.x, s.objective, s.pivots);

    // a weighted Gram matrix with strong dependence between coordinates
    let j1 = DMatrix::from_row_slice(4, 4, &[
        2.0, 0.9, 0.5, 0.1, //
        0.9, 1.5, 0.3, 0.2, //
        0.5, 0.3, 1.2, 0.4, //
        0.1, 0.2, 0.4, 1.0,
    ]);
    for eta in [0.05, 0.3, 1.0] {
        let d = nodewise_dantzig(&j1, 0, eta)?;
        let prog = nodewise_program(&j1, 0, eta);
        let primal = solve_lp(&prog)?;
        let dual = solve_dual(&prog)?;
        println!(
            "eta {eta:<4}: d = [{}], |d|_1 = {:.4} (primal {:.4}, dual {:.4}), residual {:.4}",
            d.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
            d.lp_norm(1),
            primal.objective,
            dual.objective,
            nodewise_residual(&j1, 0, d.as_slice())
        );
    }
    Ok(())
}

fn main() {
    run_example().expect("LP example failed");
}
