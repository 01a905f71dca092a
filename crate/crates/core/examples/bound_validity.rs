//! Monte-Carlo check that simulated paths stay inside the tube with
//! probability at least 1 - delta.
//!
//! ```bash
//! cargo run --release --example bound_validity
//! ```

use probtube::model::{EpsilonChoice, TubeMethod};
use probtube::simulate::simulate_ensemble_ct;
use probtube::{
    deviation_stats, select_radius, CtNoise, CtSystemBounds, DisturbanceSignal, EnsembleConfig, Scenario, System,
    TubeQuery,
};

pub fn run() -> probtube::Result<()> {
    let sigma = 0.1f64.sqrt();
    let n_traj = 2000;
    for c in [1.0, 0.0, -1.0] {
        let sys = CtSystemBounds::linear(1, c, sigma)?;
        let ens = simulate_ensemble_ct(
            &sys,
            &CtNoise::isotropic(1, sigma),
            &Scenario::fixed(vec![0.0], DisturbanceSignal::zero()),
            &EnsembleConfig::new(n_traj, 42, 2.0, 1e-3).with_record_stride(10),
            None,
        )?;
        for delta in [0.2, 1e-2, 1e-3] {
            let q = TubeQuery::new(delta, 2.0)
                .with_grid(ens.times.clone())
                .with_epsilon(EpsilonChoice::Auto)
                .with_method(TubeMethod::CtAm);
            let curve = select_radius(&System::Ct(sys.clone()), &q)?;
            let st = deviation_stats(&ens, &curve)?;
            println!(
                "c = {c:+.1}, delta = {delta:<6}: r_T = {:.4}, worst dev/r quantile = {:.3}; {}",
                curve.radii.last().copied().unwrap_or(0.0),
                st.empirical_sup_quantile,
                st.verdict_line()
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
