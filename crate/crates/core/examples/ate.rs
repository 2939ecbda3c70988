//! Absolute trajectory error between two TUM trajectory files.
//!
//! cargo run --release --example ate -- <estimate.txt> <reference.txt>

use splitfusion::dataset::Trajectory;
use splitfusion::eval::ate_rmse;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [est, reference] = args.as_slice() else {
        anyhow::bail!("usage: ate <estimate.txt> <reference.txt>");
    };
    let report = ate_rmse(&Trajectory::read_tum(est)?, &Trajectory::read_tum(reference)?)?;
    println!("matched {} poses", report.matched);
    println!("rmse   {:.6} m", report.rmse);
    println!("mean   {:.6} m", report.mean);
    println!("median {:.6} m", report.median);
    println!("max    {:.6} m", report.max);
    Ok(())
}
