//! Smallest interval [-R, R] that a contractive scalar SDE provably stays in.
//!
//! ```bash
//! cargo run --release --example min_safe_interval
//! ```

use probtube::model::{EpsilonChoice, EpsilonConstants, SplitChoice};
use probtube::verify::{rmin_interval, VerifyOptions};
use probtube::{verify_safety, CtNoise, CtSystemBounds, NoiseModel, ReachBall, SafeSet, SafetyProblem, System, TubeQuery};

pub fn run() -> probtube::Result<()> {
    let sigma = 0.1f64.sqrt();
    let sys = CtSystemBounds::linear(1, -1.0, sigma)?;
    // ε → 1 gives eps1 = 2 ln 2 and eps2 = 2.
    let (eps1, eps2) = (2.0 * 2f64.ln(), 2.0);
    let eps = EpsilonConstants::from_overrides(eps1, eps2)?;
    for horizon in [2.0, 5.0] {
        for delta in [1e-1, 1e-3, 1e-6] {
            let rmin = rmin_interval(&sys, delta, horizon, 0.01, &eps)?;
            let verdict = |r: f64| -> probtube::Result<&'static str> {
                let problem = SafetyProblem::new(
                    System::Ct(sys.clone()),
                    NoiseModel::Ct(CtNoise::isotropic(1, sigma)),
                    ReachBall::point(vec![0.0]),
                    SafeSet::interval(r)?,
                    TubeQuery::new(delta, horizon)
                        .with_uniform_grid(201)
                        .with_epsilon(EpsilonChoice::Overrides { eps1, eps2 })
                        .with_split(SplitChoice::Fixed(0.01)),
                );
                Ok(verify_safety(&problem, &VerifyOptions::default())?.verdict.as_str())
            };
            println!(
                "T = {horizon}, delta = {delta:e}: R_min = {rmin:.6}; at R_min + 1e-6: {}, at R_min - 1e-6: {}",
                verdict(rmin + 1e-6)?,
                verdict(rmin - 1e-6)?
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
