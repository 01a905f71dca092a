//! For contractive systems, restarting the bound on short intervals beats
//! the whole-horizon tube away from the final time.
//!
//! ```bash
//! cargo run --release --example contractive_split
//! ```

use probtube::model::EpsilonConstants;
use probtube::tubes::{ct_am_radius, ct_contractive_radius, optimize_split, SplitObjective};
use probtube::{CtSystemBounds, System};

pub fn run() -> probtube::Result<()> {
    let sys = CtSystemBounds::linear(1, -0.5, 0.1f64.sqrt())?;
    let eps = EpsilonConstants::new(1.0 / 16.0)?;
    let (delta, horizon, split) = (1e-3, 5.0, 0.05);
    println!("{:>5} {:>12} {:>12} {:>8}", "t", "whole", "split 0.05", "ratio");
    for k in 0..=10 {
        let t = 0.5 * k as f64;
        let whole = ct_am_radius(&sys, &eps, delta, horizon, t)?;
        let parts = ct_contractive_radius(&sys, &eps, delta, horizon, split, t)?;
        println!("{t:>5.1} {whole:>12.4} {parts:>12.4} {:>8.4}", parts / whole);
    }
    let best = optimize_split(&System::Ct(sys), &eps, delta, horizon, SplitObjective::SupOverT)?;
    println!(
        "optimal split for the radius at T: dt = {:.4} (r_T = {:.4})",
        best.split_dt, best.radius
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
