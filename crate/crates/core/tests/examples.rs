//! Every runnable example doubles as a smoke test.

#[path = "../examples/tube_curves.rs"]
mod tube_curves;
#[path = "../examples/bound_validity.rs"]
mod bound_validity;
#[path = "../examples/contractive_split.rs"]
mod contractive_split;
#[path = "../examples/dt_split_sweep.rs"]
mod dt_split_sweep;
#[path = "../examples/min_safe_interval.rs"]
mod min_safe_interval;
#[path = "../examples/planar_obstacles.rs"]
mod planar_obstacles;
#[path = "../examples/mpc_tightening.rs"]
mod mpc_tightening;
#[path = "../examples/amgf_properties.rs"]
mod amgf_properties;

#[test]
fn tube_curves_runs() {
    tube_curves::run().unwrap();
}

#[test]
fn bound_validity_runs() {
    bound_validity::run().unwrap();
}

#[test]
fn contractive_split_runs() {
    contractive_split::run().unwrap();
}

#[test]
fn dt_split_sweep_runs() {
    dt_split_sweep::run().unwrap();
}

#[test]
fn min_safe_interval_runs() {
    min_safe_interval::run().unwrap();
}

#[test]
fn planar_obstacles_runs() {
    planar_obstacles::run().unwrap();
}

#[test]
fn mpc_tightening_runs() {
    mpc_tightening::run().unwrap();
}

#[test]
fn amgf_properties_runs() {
    amgf_properties::run().unwrap();
}
