// Leave-one-out Nadaraya-Watson smoothing along an index.

use honest_otr::kernel::{bandwidth, loo_smooth, nw_predict};
use nalgebra::{DMatrix, DVector};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 200;
    let u = DVector::from_fn(n, |i, _| -3.0 + 6.0 * i as f64 / (n - 1) as f64);
    let y = u.map(|t| t.sin());
    let x = DMatrix::from_fn(n, 2, |i, j| u[i] * (j + 1) as f64);
    let h = bandwidth(u.as_slice(), 1e-6);
    let s = loo_smooth(&u, &y, &x, h)?;
    println!("bandwidth {h:.4}");
    for i in [20, 100, 180] {
        println!(
            "t = {:>6.3}: G = {:>7.4} (sin {:>7.4}), G' = {:>7.4} (cos {:>7.4})",
            u[i],
            s.ghat[i],
            u[i].sin(),
            s.g1hat[i],
            u[i].cos()
        );
    }
    println!("prediction at 0.5: {:.4}", nw_predict(0.5, u.as_slice(), y.as_slice(), h)?);
    Ok(())
}

fn main() {
    run_example().expect("kernel example failed");
}
