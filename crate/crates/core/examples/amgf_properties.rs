//! The sphere-averaged exponential moment behind every tube: values, growth
//! bound, and Monte-Carlo checks of the two inequalities it relies on.
//!
//! ```bash
//! cargo run --release --example amgf_properties
//! ```

use probtube::amgf::{check_drift_inequality, check_growth_bound, check_subgaussian_decoupling, phi, AmgfEval};
use probtube::{CtSystemBounds, DtNoise};

pub fn run() -> probtube::Result<()> {
    println!("{:>4} {:>6} {:>14} {:>14}", "n", "r", "phi(r)", "growth, eps=0.5");
    for n in [1usize, 2, 3, 10] {
        for r in [0.0, 1.0, 5.0] {
            let e = AmgfEval::new(n, 1.0);
            let ok = check_growth_bound(&e, r, 0.5);
            println!("{n:>4} {r:>6.1} {:>14.6e} {:>14}", phi(&e, r)?, if ok { "holds" } else { "FAILS" });
        }
    }

    let x = [0.8, -0.3, 0.2];
    for noise in [
        DtNoise::Gaussian { variance: 0.2 },
        DtNoise::UniformBox { half_width: 0.5 },
    ] {
        let rep = check_subgaussian_decoupling(&AmgfEval::new(3, 1.5), &x, &noise, 20_000, 3)?;
        println!(
            "decoupling with {noise:?}: E[phi(x + w)] = {:.5} <= {:.5} ({})",
            rep.lhs_estimate,
            rep.rhs,
            if rep.holds { "holds" } else { "violated" }
        );
    }

    let sys = CtSystemBounds::new(2, -0.7, 0.2)?.with_drift(|x, _, _, out| {
        out[0] = -x[0] + 0.3 * x[1].sin() + 0.5 * x[1];
        out[1] = -x[1] - 0.5 * x[0];
    });
    let rep = check_drift_inequality(&sys, &[1.0, 0.5], &[-0.2, 0.1], &[], 0.0, 2.0, 20_000, 4)?;
    println!(
        "drift inequality: estimate {:.4} (stderr {:.1e}) {}",
        rep.estimate,
        rep.stderr,
        if rep.holds { "holds" } else { "violated" }
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> probtube::Result<()> {
    run()
}
