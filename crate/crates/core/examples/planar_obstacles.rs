//! Safety verification of a planar robot driving past three obstacles,
//! followed by a Monte-Carlo cross-check.
//!
//! ```bash
//! cargo run --release --example planar_obstacles
//! ```

use probtube::cli::{planar_obstacle_set, planar_obstacle_system};
use probtube::model::EpsilonChoice;
use probtube::simulate::DisturbanceDomain;
use probtube::verify::{DisturbanceBound, VerifyOptions};
use probtube::{
    verify_safety, CtNoise, DisturbanceSignal, NoiseModel, ReachBall, SafetyProblem, System, TubeQuery,
};

pub fn run() -> probtube::Result<()> {
    let sigma = 0.02;
    let problem = |eps: EpsilonChoice| -> probtube::Result<SafetyProblem> {
        Ok(SafetyProblem::new(
            System::Ct(planar_obstacle_system(1.0, [0.5, 0.0], sigma)?),
            NoiseModel::Ct(CtNoise::isotropic(2, sigma)),
            ReachBall::new(vec![5.0, 5.0], 0.1)?,
            planar_obstacle_set()?,
            TubeQuery::new(1e-3, 5.0).with_uniform_grid(501).with_epsilon(eps),
        )
        .with_disturbance(
            DisturbanceBound {
                lipschitz_d: 1.0,
                radius_d: 0.05,
            },
            DisturbanceSignal::Constant(vec![0.0, 0.0]),
            Some(DisturbanceDomain {
                nominal: vec![0.0, 0.0],
                radius: 0.05,
            }),
        ))
    };
    let report = verify_safety(
        &problem(EpsilonChoice::Auto)?,
        &VerifyOptions {
            mc_validate: true,
            mc_trajectories: Some(1000),
            falsify_samples: 100,
            seed: 1,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_text());

    // The fixed ε = 1/16 trades a tiny eps1 for a large eps2 and loses here.
    let fixed = verify_safety(&problem(EpsilonChoice::Fixed(1.0 / 16.0))?, &VerifyOptions::default())?;
    println!(
        "with eps = 1/16: verdict {}, sup r = {:.4}, min margin = {:.4}",
        fixed.verdict.as_str(),
        fixed.tube.sup(),
        fixed.min_margin_over_time
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
