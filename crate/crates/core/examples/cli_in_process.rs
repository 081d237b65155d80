// Drive the command-line interface from Rust.

use honest_otr::cli::run;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(
        ["honest-otr", "simulate", "--n", "120", "--p", "8", "--reps", "2", "--eval-n", "500"],
        &mut out,
        &mut err,
    );
    println!("exit {code}\n{}", String::from_utf8(out)?);
    if code != 0 {
        return Err(String::from_utf8(err)?.into());
    }
    Ok(())
}

fn main() {
    run_example().expect("CLI example failed");
}
