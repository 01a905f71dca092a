//! Radius curves from every tube formula for one scalar system.
//!
//! ```bash
//! cargo run --release --example tube_curves
//! ```

use probtube::model::{EpsilonChoice, SplitChoice, TubeMethod};
use probtube::{select_radius, CtSystemBounds, DtSystemBounds, System, TubeQuery};

pub fn run() -> probtube::Result<()> {
    let sigma = 0.1f64.sqrt();
    println!("continuous time, sigma = {sigma:.4}, delta = 1e-3, T = 5");
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "c=+0.5", "c=0", "c=-0.5 split");
    let grid: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
    let mut cols = Vec::new();
    for (c, split) in [(0.5, SplitChoice::None), (0.0, SplitChoice::None), (-0.5, SplitChoice::Auto)] {
        let q = TubeQuery::new(1e-3, 5.0)
            .with_grid(grid.clone())
            .with_epsilon(EpsilonChoice::Auto)
            .with_split(split);
        cols.push(select_radius(&System::Ct(CtSystemBounds::linear(1, c, sigma)?), &q)?);
    }
    for (i, t) in grid.iter().enumerate() {
        println!("{t:>6.2} {:>10.4} {:>10.4} {:>10.4}", cols[0].radii[i], cols[1].radii[i], cols[2].radii[i]);
    }

    println!("\ndiscrete time, variance proxy = 1e-2, delta = 1e-3, T = 30");
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "union", "L=1.05", "L=0.9 split");
    let cases = [
        (0.9, Some(TubeMethod::DtUnion)),
        (1.05, None),
        (0.9, None),
    ];
    let mut cols = Vec::new();
    for (l, method) in cases {
        let mut q = TubeQuery::new(1e-3, 30.0).with_integer_grid().with_epsilon(EpsilonChoice::Auto);
        if let Some(m) = method {
            q = q.with_method(m);
        }
        cols.push(select_radius(&System::Dt(DtSystemBounds::new(1, l, 1e-2)?), &q)?);
    }
    for t in (0..=30).step_by(5) {
        println!("{t:>6} {:>10.4} {:>10.4} {:>10.4}", cols[0].radii[t], cols[1].radii[t], cols[2].radii[t]);
    }
    for c in &cols {
        println!("{:<15} eps1 = {:.4}, eps2 = {:.4}", c.method.as_str(), c.eps.eps1, c.eps.eps2);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
