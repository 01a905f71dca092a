//! Radius at the horizon against the discrete splitting interval.
//!
//! Mildly contractive maps favour longer intervals only once the horizon is
//! long compared with 1 / (1 - L).
//!
//! ```bash
//! cargo run --release --example dt_split_sweep
//! ```

use probtube::model::EpsilonConstants;
use probtube::tubes::{dt_contractive_radius, optimize_split, SplitObjective};
use probtube::{DtSystemBounds, System};

pub fn run() -> probtube::Result<()> {
    let eps = EpsilonConstants::new(1.0 / 16.0)?;
    let delta = 0.01;
    for (l, horizon) in [(0.99, 40u64), (0.9999, 450), (0.9999, 2_000_000)] {
        let sys = DtSystemBounds::new(1, l, 0.01 * (1.0 - l))?;
        let best = optimize_split(&System::Dt(sys.clone()), &eps, delta, horizon as f64, SplitObjective::SupOverT)?;
        let at = |dt: u64| dt_contractive_radius(&sys, &eps, delta, horizon, dt, horizon);
        println!(
            "L = {l}, T = {horizon}: best dt = {} (r_T = {:.5}); r_T at dt = 1, 10, 40: {:.5}, {:.5}, {:.5}",
            best.split_dt,
            best.radius,
            at(1)?,
            at(10.min(horizon))?,
            at(40.min(horizon))?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
