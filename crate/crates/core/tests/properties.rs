use probtube::amgf::{check_affine_martingale_step, phi, AmgfEval};
use probtube::model::{optimize_epsilon, EpsilonChoice, EpsilonConstants, SplitChoice, TubeMethod};
use probtube::rng;
use probtube::simulate::{nominal_states_ct, simulate_ensemble_ct, DisturbanceDomain};
use probtube::tubes::{
    ct_am_radius, ct_contractive_radius, ct_integral, ct_state_radius, dt_am_radius, dt_contractive_radius,
    dt_state_radius, dt_sum, dt_union_radius, select_radius,
};
use probtube::verify::{reach_overapprox, DisturbanceBound, VerifyOptions};
use probtube::{
    deviation_stats, Constraint, CtNoise, CtSystemBounds, DisturbanceSignal, DtSystemBounds, EnsembleConfig,
    NoiseModel, ReachBall, SafeSet, SafetyProblem, Scenario, System, TubeQuery, Verdict,
};
use proptest::prelude::*;
use rand::Rng;

fn all_radii(n: usize, c: f64, l: f64, sigma: f64, delta: f64, eps: f64) -> Vec<f64> {
    let e = EpsilonConstants::new(eps).unwrap();
    let ct = CtSystemBounds::new(n, c, sigma).unwrap();
    let ctc = CtSystemBounds::new(n, -c.abs() - 0.1, sigma).unwrap();
    let dt = DtSystemBounds::new(n, l, sigma * sigma).unwrap();
    let dtc = DtSystemBounds::new(n, l.min(0.95), sigma * sigma).unwrap();
    vec![
        ct_state_radius(&ct, &e, delta, 1.5).unwrap(),
        ct_am_radius(&ct, &e, delta, 3.0, 1.5).unwrap(),
        ct_contractive_radius(&ctc, &e, delta, 3.0, 0.2, 1.5).unwrap(),
        dt_state_radius(&dt, &e, delta, 7).unwrap(),
        dt_union_radius(&dt, &e, delta, 12, 7).unwrap(),
        dt_am_radius(&dt, &e, delta, 12, 7).unwrap(),
        dt_contractive_radius(&dtc, &e, delta, 12, 3, 7).unwrap(),
    ]
}

proptest! {
    #[test]
    fn epsilon_constants_exceed_their_floors(eps in 1e-4f64..0.9999) {
        let e = EpsilonConstants::new(eps).unwrap();
        prop_assert!(e.eps1 > 1.0);
        prop_assert!(e.eps2 > 2.0);
    }

    #[test]
    fn epsilon_constants_are_monotone(a in 1e-3f64..0.999, b in 1e-3f64..0.999) {
        prop_assume!(a < b);
        let (ea, eb) = (EpsilonConstants::new(a).unwrap(), EpsilonConstants::new(b).unwrap());
        prop_assert!(ea.eps1 < eb.eps1);
        prop_assert!(ea.eps2 > eb.eps2);
    }

    #[test]
    fn optimized_epsilon_beats_fixed_candidates(n in 1usize..20, log_delta in -12.0f64..-0.05) {
        let delta = 10f64.powf(log_delta);
        let best = optimize_epsilon(n, delta).unwrap();
        let log_term = (1.0 / delta).ln();
        let got = best.objective(n, log_term);
        for eps in [0.01, 1.0 / 16.0, 0.5, 0.9, 0.99] {
            let other = EpsilonConstants::new(eps).unwrap().objective(n, log_term);
            prop_assert!(got <= other * (1.0 + 1e-12), "ε={eps}: {got} > {other}");
        }
    }

    #[test]
    fn radii_shrink_as_delta_grows(
        n in 1usize..6, c in -2.0f64..2.0, l in 0.1f64..1.5, sigma in 0.01f64..3.0,
        d1 in 1e-6f64..0.5, gap in 1e-3f64..0.4, eps in 0.02f64..0.98,
    ) {
        let small = all_radii(n, c, l, sigma, d1, eps);
        let large = all_radii(n, c, l, sigma, d1 + gap, eps);
        for (a, b) in small.iter().zip(&large) {
            prop_assert!(b < a, "{b} !< {a}");
        }
    }

    #[test]
    fn radii_scale_linearly_in_sigma(
        n in 1usize..6, c in -2.0f64..2.0, l in 0.1f64..1.5, sigma in 0.01f64..3.0,
        k in 0.1f64..10.0, delta in 1e-6f64..0.5, eps in 0.02f64..0.98,
    ) {
        let base = all_radii(n, c, l, sigma, delta, eps);
        let scaled = all_radii(n, c, l, k * sigma, delta, eps);
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((b - k * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn radii_grow_with_dimension(
        n in 1usize..20, c in -2.0f64..2.0, l in 0.1f64..1.5, sigma in 0.01f64..3.0,
        delta in 1e-6f64..0.5, eps in 0.02f64..0.98,
    ) {
        let a = all_radii(n, c, l, sigma, delta, eps);
        let b = all_radii(n + 1, c, l, sigma, delta, eps);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn whole_horizon_tube_dominates_pointwise_bound(
        c in 1e-3f64..3.0, horizon in 0.01f64..5.0, frac in 0.0f64..=1.0,
        sigma in 0.01f64..2.0, delta in 1e-6f64..0.5,
    ) {
        let e = EpsilonConstants::new(1.0 / 16.0).unwrap();
        let sys = CtSystemBounds::new(2, c, sigma).unwrap();
        let t = frac * horizon;
        let am = ct_am_radius(&sys, &e, delta, horizon, t).unwrap();
        let st = ct_state_radius(&sys, &e, delta, t).unwrap();
        prop_assert!(am >= st * (1.0 - 1e-12));
    }

    #[test]
    fn phi_is_monotone_in_norm(n in 1usize..12, lambda in -5.0f64..5.0, r1 in 0.0f64..10.0, dr in 0.0f64..10.0) {
        let e = AmgfEval::new(n, lambda);
        prop_assert!(phi(&e, r1).unwrap() <= phi(&e, r1 + dr).unwrap() * (1.0 + 1e-13));
    }

    #[test]
    fn phi_is_even_in_lambda(n in 1usize..12, lambda in 0.0f64..5.0, r in 0.0f64..10.0) {
        let a = phi(&AmgfEval::new(n, lambda), r).unwrap();
        let b = phi(&AmgfEval::new(n, -lambda), r).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn phi_depends_only_on_the_norm(
        n in 2usize..6, lambda in -3.0f64..3.0, theta in 0.0f64..std::f64::consts::TAU,
        x in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        // A Givens rotation in the first two coordinates.
        let x = &x[..n];
        let mut y = x.to_vec();
        y[0] = theta.cos() * x[0] - theta.sin() * x[1];
        y[1] = theta.sin() * x[0] + theta.cos() * x[1];
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((nx - ny).abs() <= 1e-12 * nx.max(1.0));
        let e = AmgfEval::new(n, lambda);
        let (a, b) = (phi(&e, nx).unwrap(), phi(&e, ny).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }
}

fn random_set(seed: u64) -> SafeSet {
    let mut r = rng::stream(seed, 0);
    let mut cs = Vec::new();
    for _ in 0..3 {
        let a: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        cs.push(Constraint::half_space(a, r.random_range(0.5..3.0)).unwrap());
    }
    cs.push(
        Constraint::disk_complement(
            vec![0, 2],
            vec![r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)],
            r.random_range(0.1..1.0),
        )
        .unwrap(),
    );
    SafeSet::new(3, "random", cs).unwrap()
}


proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn erosion_is_monotone_and_dual_to_margin(
        seed in any::<u64>(), r1 in 0.0f64..2.0, dr in 0.0f64..2.0,
        x in proptest::collection::vec(-4.0f64..4.0, 3),
    ) {
        let s = random_set(seed);
        let (e1, e2) = (s.erode(r1).unwrap(), s.erode(r1 + dr).unwrap());
        if e2.contains(&x).unwrap() {
            prop_assert!(e1.contains(&x).unwrap());
        }
        if e1.contains(&x).unwrap() {
            prop_assert!(s.contains(&x).unwrap());
        }
        let m = s.margin(&x).unwrap();
        prop_assert!((e1.margin(&x).unwrap() - (m - r1)).abs() <= 1e-12);
        prop_assert_eq!(&s.erode(0.0).unwrap().constraints, &s.constraints);
    }

    #[test]
    fn erosion_composes(seed in any::<u64>(), r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
        let s = random_set(seed);
        let twice = s.erode(r1).unwrap().erode(r2).unwrap();
        let once = s.erode(r1 + r2).unwrap();
        for (a, b) in twice.constraints.iter().zip(&once.constraints) {
            match (a, b) {
                (Constraint::HalfSpace { offset: p, .. }, Constraint::HalfSpace { offset: q, .. }) => {
                    prop_assert!((p - q).abs() <= 1e-12)
                }
                (Constraint::DiskComplement { radius: p, .. }, Constraint::DiskComplement { radius: q, .. }) => {
                    prop_assert!((p - q).abs() <= 1e-12)
                }
                _ => prop_assert!(false, "constraint kinds diverged"),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enlarging_the_safe_set_never_worsens_the_verdict(
        c in -1.5f64..0.5, radius in 0.2f64..3.0, grow in 0.0f64..1.0, log_delta in -6.0f64..-1.0,
    ) {
        let verdict = |r: f64| {
            let p = SafetyProblem::new(
                System::Ct(CtSystemBounds::linear(1, c, 0.2).unwrap()),
                NoiseModel::Ct(CtNoise::isotropic(1, 0.2)),
                ReachBall::point(vec![0.0]),
                SafeSet::interval(r).unwrap(),
                TubeQuery::new(10f64.powf(log_delta), 2.0).with_uniform_grid(101),
            );
            probtube::verify_safety(&p, &VerifyOptions::default()).unwrap().verdict
        };
        let small = verdict(radius);
        let big = verdict(radius + grow);
        if small == Verdict::SafeWithGuarantee {
            prop_assert_eq!(big, Verdict::SafeWithGuarantee);
        }
    }
}

#[test]
fn removable_singularities_are_continuous() {
    // Reference values from the Taylor series and from explicit summation.
    let series = |c: f64, t: f64| {
        let (mut term, mut sum) = (t, t);
        for k in 2..30 {
            term *= 2.0 * c * t / k as f64;
            sum += term;
        }
        sum
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    for t in [0.1, 1.0, 7.5] {
        for c in [1e-5, -1e-5, 1e-9, -1e-9, 0.0] {
            assert!(rel(ct_integral(c, t), series(c, t)) <= 1e-9, "c={c}, t={t}");
        }
        // Either side of the switch between the two branches.
        let edge = 1e-6 / (2.0 * t);
        for c in [edge * (1.0 - 1e-9), edge * (1.0 + 1e-9)] {
            assert!(rel(ct_integral(c, t), series(c, t)) <= 1e-9);
        }
    }
    for l in [1.0f64 - 1e-5, 1.0 + 1e-5, 1.0 - 1e-9, 1.0 + 1e-9, 1.0] {
        for k in [1u64, 5, 40] {
            let direct: f64 = (0..k).map(|j| l.powi(2 * j as i32)).sum();
            assert!(rel(dt_sum(l, k), direct) <= 1e-9, "L={l}, k={k}");
        }
    }
}

#[test]
fn reach_overapproximation_dominates_sampled_paths() {
    let (a, b) = (1.2, 0.5);
    let sys = CtSystemBounds::new(2, -a + b, 0.1).unwrap().with_drift(move |x, d, _, out| {
        out[0] = -a * x[0] + b * x[1].sin() + d[0];
        out[1] = -a * x[1] + b * x[0].sin() + d[1];
    });
    let system = System::Ct(sys.clone());
    let ball = ReachBall::new(vec![1.0, -0.5], 0.3).unwrap();
    let domain = DisturbanceDomain {
        nominal: vec![0.2, 0.0],
        radius: 0.15,
    };
    let bound = DisturbanceBound {
        lipschitz_d: 1.0,
        radius_d: domain.radius,
    };
    let horizon = 3.0;
    let times = probtube::model::uniform_grid(horizon, 61);
    let nominal = DisturbanceSignal::Constant(domain.nominal.clone());
    let balls = reach_overapprox(&system, &ball, &bound, &nominal, &times, 1e-3).unwrap();
    for k in 0..1000u64 {
        let mut r = rng::stream(77, k);
        let mut x0 = vec![0.0; 2];
        rng::uniform_ball(&mut r, &ball.center, ball.radius, &mut x0);
        let dist = domain.sample_piecewise(&mut r, horizon, 0.25);
        let path = nominal_states_ct(&sys, &dist, &x0, &times, 1e-3).unwrap();
        for (x, rb) in path.iter().zip(&balls) {
            let gap = ((x[0] - rb.center[0]).powi(2) + (x[1] - rb.center[1]).powi(2)).sqrt();
            assert!(gap <= rb.radius + 1e-9, "sample {k}: {gap} > {}", rb.radius);
        }
    }
}

#[test]
fn affine_martingale_step_holds_on_linear_pairs() {
    let sys = CtSystemBounds::linear(2, -0.3, 0.4).unwrap();
    let noise = CtNoise::isotropic(2, 0.4);
    for (k, (x, y)) in [([0.5, -0.2], [0.1, 0.0]), ([2.0, 1.0], [0.0, 0.0]), ([0.0, 0.0], [0.0, 0.0])]
        .into_iter()
        .enumerate()
    {
        let rep = check_affine_martingale_step(&sys, &noise, &x, &y, &[], 0.0, 1.3, 1e-3, 50_000, 900 + k as u64)
            .unwrap();
        assert!(rep.holds, "{rep:?}");
    }
}

fn fig2_ensemble(seed: u64, step_dt: f64) -> probtube::TrajectoryEnsemble {
    let sigma = 0.1f64.sqrt();
    simulate_ensemble_ct(
        &CtSystemBounds::linear(1, 0.0, sigma).unwrap(),
        &CtNoise::isotropic(1, sigma),
        &Scenario::fixed(vec![0.0], DisturbanceSignal::zero()),
        &EnsembleConfig::new(2000, seed, 2.0, step_dt).with_record_stride((0.02 / step_dt).round() as usize),
        None,
    )
    .unwrap()
}

#[test]
fn ensembles_are_seed_and_thread_deterministic() {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| fig2_ensemble(5, 1e-3));
    let b = three.install(|| fig2_ensemble(5, 1e-3));
    assert_eq!(a.deviations, b.deviations);
    assert_eq!(a.terminal_states, b.terminal_states);
    let c = fig2_ensemble(6, 1e-3);
    assert_ne!(a.deviations, c.deviations);
}

#[test]
fn step_halving_keeps_violations_within_noise() {
    let curve_for = |ens: &probtube::TrajectoryEnsemble| {
        let q = TubeQuery::new(0.2, 2.0)
            .with_grid(ens.times.clone())
            .with_epsilon(EpsilonChoice::Auto)
            .with_method(TubeMethod::CtAm);
        select_radius(&System::Ct(CtSystemBounds::linear(1, 0.0, 0.1f64.sqrt()).unwrap()), &q).unwrap()
    };
    let coarse = fig2_ensemble(11, 2e-3);
    let fine = fig2_ensemble(11, 1e-3);
    let a = deviation_stats(&coarse, &curve_for(&coarse)).unwrap();
    let b = deviation_stats(&fine, &curve_for(&fine)).unwrap();
    // Both are binomial(2000, p ≤ 0.2); allow four standard deviations of the difference.
    let band = 4.0 * (2.0 * 2000.0 * 0.2 * 0.8f64).sqrt();
    assert!(
        (a.violation_count as f64 - b.violation_count as f64).abs() <= band,
        "{} vs {}",
        a.violation_count,
        b.violation_count
    );
}

#[test]
fn freidlin_wentzell_ratio_is_reported_in_unit_interval() {
    let ens = fig2_ensemble(12, 1e-3);
    let q = TubeQuery::new(0.05, 2.0)
        .with_grid(ens.times.clone())
        .with_epsilon(EpsilonChoice::Auto)
        .with_split(SplitChoice::None)
        .with_method(TubeMethod::CtAm);
    let curve = select_radius(&System::Ct(CtSystemBounds::linear(1, 0.0, 0.1f64.sqrt()).unwrap()), &q).unwrap();
    let st = deviation_stats(&ens, &curve).unwrap();
    assert!(st.empirical_sup_quantile > 0.0 && st.empirical_sup_quantile <= 1.0, "{}", st.empirical_sup_quantile);
}
