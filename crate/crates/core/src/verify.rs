//! Reachability-based safety verification on eroded safe sets.
//!
//! The deterministic reachable set is over-approximated by a ball that
//! follows the nominal trajectory and grows with the contraction constant.
//! If at every grid time that ball fits inside the safe set eroded by the
//! tube radius, the stochastic system stays safe with probability `1 - δ`.
//! Continuous-time checks cover grid points only; use `grid_refinement` to
//! tighten the gap between them.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::SafeSet;
use crate::model::{CtSystemBounds, DtSystemBounds, EpsilonConstants, System, TubeCurve, TubeQuery};
use crate::noise::NoiseModel;
use crate::rng;
use crate::simulate::{
    deterministic_path_dt, deviation_stats, nominal_states_ct, simulate_ensemble_ct, simulate_ensemble_dt,
    DeviationStats, DisturbanceDomain, DisturbanceSignal, EnsembleConfig, Scenario,
};
use crate::stats::{clopper_pearson, fmt_sig17, BinomialCi};
use crate::tubes::{ct_contractive_radius, resample_curve, select_radius};

const FALSIFY_STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Ball over-approximating the deterministic reachable set at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ReachBall {
    pub fn point(center: Vec<f64>) -> Self {
        Self { center, radius: 0.0 }
    }

    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(domain(format!("ball radius must be finite and ≥ 0, got {radius}")));
        }
        Ok(Self { center, radius })
    }
}

/// `‖f(x,d,t) - f(x,d',t)‖ ≤ lipschitz_d ‖d - d'‖` with the disturbance
/// within `radius_d` of its nominal signal. Zero means no disturbance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceBound {
    pub lipschitz_d: f64,
    pub radius_d: f64,
}

/// Radius of the reach ball at time `t` for an initial ball of radius `r0`.
///
/// Continuous time: `e^{ct} r₀ + L_d ρ_d (e^{ct} - 1)/c`.
/// Discrete time: `L^t r₀ + L_d ρ_d (L^t - 1)/(L - 1)`.
pub fn reach_radius(sys: &System, r0: f64, dist: &DisturbanceBound, t: f64) -> f64 {
    let w = dist.lipschitz_d * dist.radius_d;
    match sys {
        System::Ct(s) => {
            let ct = s.c * t;
            let growth = if ct.abs() < 1e-8 { t * (1.0 + ct / 2.0) } else { ct.exp_m1() / s.c };
            ct.exp() * r0 + w * growth
        }
        System::Dt(s) => {
            let l = s.lipschitz;
            let lt = l.powf(t);
            let sum = if l == 0.0 {
                if t >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            } else if (l - 1.0).abs() < 1e-8 {
                t * (1.0 + (t - 1.0) * (l - 1.0) / 2.0)
            } else {
                (t * l.ln()).exp_m1() / (l - 1.0)
            };
            lt * r0 + w * sum
        }
    }
}

/// Reach balls at `times`. Centers follow the deterministic system from
/// `x0_ball.center` under `nominal`; `max_step` bounds the RK4 step in
/// continuous time. Discrete-time `times` must be integers.
pub fn reach_overapprox(
    sys: &System,
    x0_ball: &ReachBall,
    dist: &DisturbanceBound,
    nominal: &DisturbanceSignal,
    times: &[f64],
    max_step: f64,
) -> Result<Vec<ReachBall>> {
    let centers = nominal_centers(sys, &x0_ball.center, nominal, times, max_step)?;
    Ok(centers
        .into_iter()
        .zip(times)
        .map(|(center, &t)| ReachBall {
            center,
            radius: reach_radius(sys, x0_ball.radius, dist, t),
        })
        .collect())
}

/// Source of deterministic reach over-approximations. [`BallPropagation`]
/// is the built-in implementation; other set representations plug in here.
pub trait ReachBackend: Sync {
    fn reach(
        &self,
        sys: &System,
        x0_ball: &ReachBall,
        dist: &DisturbanceBound,
        nominal: &DisturbanceSignal,
        times: &[f64],
        max_step: f64,
    ) -> Result<Vec<ReachBall>>;
}

/// Balls grown by the contraction constant around the nominal trajectory.
#[derive(Debug, Clone, Copy, Default)]
pub struct BallPropagation;

impl ReachBackend for BallPropagation {
    fn reach(
        &self,
        sys: &System,
        x0_ball: &ReachBall,
        dist: &DisturbanceBound,
        nominal: &DisturbanceSignal,
        times: &[f64],
        max_step: f64,
    ) -> Result<Vec<ReachBall>> {
        reach_overapprox(sys, x0_ball, dist, nominal, times, max_step)
    }
}

fn nominal_centers(
    sys: &System,
    x0: &[f64],
    dist: &DisturbanceSignal,
    times: &[f64],
    max_step: f64,
) -> Result<Vec<Vec<f64>>> {
    match sys {
        System::Ct(s) => nominal_states_ct(s, dist, x0, times, max_step),
        System::Dt(s) => {
            let last = times.iter().copied().fold(0.0, f64::max);
            if times.iter().any(|t| t.fract() != 0.0 || *t < 0.0) {
                return Err(domain("discrete-time grid points must be nonnegative integers"));
            }
            let path = deterministic_path_dt(s, dist, x0, last as u64)?;
            Ok(times.iter().map(|&t| path[t as usize].clone()).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SafeWithGuarantee,
    Inconclusive,
    FalsifiedDeterministic,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::SafeWithGuarantee => "safe_with_guarantee",
            Verdict::Inconclusive => "inconclusive",
            Verdict::FalsifiedDeterministic => "falsified_deterministic",
        }
    }
}

/// Everything a safety check needs besides tuning knobs.
#[derive(Debug, Clone)]
pub struct SafetyProblem {
    pub system: System,
    pub noise: NoiseModel,
    pub x0_ball: ReachBall,
    pub safe_set: SafeSet,
    pub query: TubeQuery,
    pub dist_bound: DisturbanceBound,
    pub nominal_disturbance: DisturbanceSignal,
    /// Disturbance domain used by falsification and Monte-Carlo sampling.
    pub disturbance_domain: Option<DisturbanceDomain>,
}

impl SafetyProblem {
    pub fn new(system: System, noise: NoiseModel, x0_ball: ReachBall, safe_set: SafeSet, query: TubeQuery) -> Self {
        Self {
            system,
            noise,
            x0_ball,
            safe_set,
            query,
            dist_bound: DisturbanceBound::default(),
            nominal_disturbance: DisturbanceSignal::zero(),
            disturbance_domain: None,
        }
    }

    pub fn with_disturbance(
        mut self,
        bound: DisturbanceBound,
        nominal: DisturbanceSignal,
        domain: Option<DisturbanceDomain>,
    ) -> Self {
        self.dist_bound = bound;
        self.nominal_disturbance = nominal;
        self.disturbance_domain = domain;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub mc_validate: bool,
    /// Defaults to `⌈10/δ⌉`.
    pub mc_trajectories: Option<usize>,
    pub falsify_samples: usize,
    pub seed: u64,
    /// Integration step for continuous time.
    pub step_dt: f64,
    /// Continuous-time grid points per query interval (1 keeps the query grid).
    pub grid_refinement: usize,
    /// Switching period of sampled disturbances; defaults to `T/20`.
    pub switch_dt: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mc_validate: false,
            mc_trajectories: None,
            falsify_samples: 0,
            seed: 0,
            step_dt: 1e-3,
            grid_refinement: 1,
            switch_dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub t: f64,
    pub margin: f64,
    pub r_t: f64,
    pub reach_radius: f64,
}

/// A deterministic trajectory that leaves the eroded set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub sample: usize,
    pub t: f64,
    pub state: Vec<f64>,
    pub eroded_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McValidation {
    pub n_traj: usize,
    pub seed: u64,
    pub unsafe_count: usize,
    /// 99% Clopper–Pearson interval on the probability of leaving the safe set.
    pub unsafe_ci: BinomialCi,
    pub deviation: DeviationStats,
}

impl McValidation {
    pub fn consistent_with_delta(&self, delta: f64) -> bool {
        self.unsafe_ci.lower <= delta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub delta: f64,
    /// `min_t [margin(center_t) - r_t - reach_t]`.
    pub min_margin_over_time: f64,
    pub witness: Option<Witness>,
    pub tube: TubeCurve,
    pub rows: Vec<MarginRow>,
    pub eroded_set: String,
    pub monte_carlo: Option<McValidation>,
    pub grid_refinement: usize,
    pub notes: Vec<String>,
}

impl VerificationReport {
    /// CSV with columns `t,margin,r_t,reach_radius`.
    pub fn margins_csv(&self) -> String {
        let mut s = String::from("t,margin,r_t,reach_radius\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt_sig17(r.t),
                fmt_sig17(r.margin),
                fmt_sig17(r.r_t),
                fmt_sig17(r.reach_radius)
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict: {}", self.verdict.as_str());
        let _ = writeln!(s, "delta: {}", self.delta);
        let _ = writeln!(s, "tube_method: {}", self.tube.method);
        let _ = writeln!(s, "eps1: {}", self.tube.eps.eps1);
        let _ = writeln!(s, "eps2: {}", self.tube.eps.eps2);
        if let Some(dt) = self.tube.split_dt {
            let _ = writeln!(s, "split_dt: {dt}");
        }
        let _ = writeln!(s, "sup_radius: {}", self.tube.sup());
        let _ = writeln!(s, "min_margin_over_time: {}", self.min_margin_over_time);
        let _ = writeln!(s, "grid_points: {}", self.rows.len());
        let _ = writeln!(s, "grid_refinement: {}", self.grid_refinement);
        let _ = writeln!(s, "eroded_set: {}", self.eroded_set);
        if let Some(w) = &self.witness {
            let _ = writeln!(
                s,
                "witness: sample {} at t = {} state {:?} (eroded margin {})",
                w.sample, w.t, w.state, w.eroded_margin
            );
        }
        if let Some(mc) = &self.monte_carlo {
            let _ = writeln!(
                s,
                "monte_carlo: {} trajectories (seed {}), {} left the safe set; 99% CI [{:.3e}, {:.3e}]",
                mc.n_traj, mc.seed, mc.unsafe_count, mc.unsafe_ci.lower, mc.unsafe_ci.upper
            );
            let _ = writeln!(s, "tube_check: {}", mc.deviation.verdict_line());
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

fn refine_grid(grid: &[f64], factor: usize) -> Vec<f64> {
    if factor <= 1 || grid.len() < 2 {
        return grid.to_vec();
    }
    let mut out = Vec::with_capacity((grid.len() - 1) * factor + 1);
    for w in grid.windows(2) {
        for j in 0..factor {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
        }
    }
    out.push(*grid.last().unwrap());
    out
}

fn scenario_for(problem: &SafetyProblem, horizon: f64, switch_dt: f64) -> Scenario {
    let ball = &problem.x0_ball;
    match (&problem.disturbance_domain, ball.radius > 0.0) {
        (None, false) => Scenario::fixed(ball.center.clone(), problem.nominal_disturbance.clone()),
        (None, true) => {
            let center = ball.center.clone();
            let radius = ball.radius;
            let dist = problem.nominal_disturbance.clone();
            Scenario::Sampled(std::sync::Arc::new(move |_, rng| {
                let mut x0 = vec![0.0; center.len()];
                rng::uniform_ball(rng, &center, radius, &mut x0);
                (x0, dist.clone())
            }))
        }
        (Some(dom), _) => Scenario::sampled_ball(ball.center.clone(), ball.radius, dom.clone(), horizon, switch_dt),
    }
}

/// Checks the reach balls against the eroded safe set, optionally hunts for
/// deterministic counterexamples and validates by simulation.
pub fn verify_safety(problem: &SafetyProblem, options: &VerifyOptions) -> Result<VerificationReport> {
    verify_safety_with(problem, options, &BallPropagation)
}

/// [`verify_safety`] with a custom reach backend.
pub fn verify_safety_with(
    problem: &SafetyProblem,
    options: &VerifyOptions,
    backend: &dyn ReachBackend,
) -> Result<VerificationReport> {
    let sys = &problem.system;
    match (sys, &problem.noise) {
        (System::Ct(_), NoiseModel::Ct(_)) | (System::Dt(_), NoiseModel::Dt(_)) => {}
        _ => return Err(domain("system and noise model must both be continuous or both discrete")),
    }
    let ball = &problem.x0_ball;
    if ball.center.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: ball.center.len(),
        });
    }
    let m0 = problem.safe_set.margin(&ball.center)?;
    if m0 < ball.radius {
        return Err(Error::InitialSetUnsafe {
            margin: m0,
            radius: ball.radius,
        });
    }
    let mut query = problem.query.clone();
    let mut notes = Vec::new();
    if !sys.is_dt() {
        query = query.clone().with_grid(refine_grid(&query.time_grid, options.grid_refinement));
        notes.push(format!(
            "containment is checked at {} grid times only; behaviour between grid points is not certified",
            query.time_grid.len()
        ));
    }
    let tube = select_radius(sys, &query)?;
    let balls = backend.reach(
        sys,
        ball,
        &problem.dist_bound,
        &problem.nominal_disturbance,
        &tube.times,
        options.step_dt,
    )?;
    let mut rows = Vec::with_capacity(balls.len());
    let mut min_margin = f64::INFINITY;
    for ((b, &t), &r_t) in balls.iter().zip(&tube.times).zip(&tube.radii) {
        let margin = problem.safe_set.margin(&b.center)?;
        min_margin = min_margin.min(margin - r_t - b.radius);
        rows.push(MarginRow {
            t,
            margin,
            r_t,
            reach_radius: b.radius,
        });
    }
    let safe = rows.iter().all(|r| r.margin >= r.r_t + r.reach_radius);

    let horizon = query.horizon;
    let switch_dt = options.switch_dt.unwrap_or(horizon / 20.0).max(f64::MIN_POSITIVE);
    let mut witness = None;
    if !safe && options.falsify_samples > 0 {
        let scenario = scenario_for(problem, horizon, switch_dt);
        let found: Vec<Option<Witness>> = (0..options.falsify_samples)
            .into_par_iter()
            .map(|k| -> Result<Option<Witness>> {
                let (x0, dist) = if k == 0 {
                    (ball.center.clone(), problem.nominal_disturbance.clone())
                } else {
                    draw_sample(&scenario, options.seed ^ FALSIFY_STREAM_SALT, k as u64)
                };
                let path = nominal_centers(sys, &x0, &dist, &tube.times, options.step_dt)?;
                for ((x, &t), &r) in path.iter().zip(&tube.times).zip(&tube.radii) {
                    let em = problem.safe_set.margin(x)? - r;
                    if em < 0.0 {
                        return Ok(Some(Witness {
                            sample: k,
                            t,
                            state: x.clone(),
                            eroded_margin: em,
                        }));
                    }
                }
                Ok(None)
            })
            .collect::<Result<_>>()?;
        witness = found.into_iter().flatten().next();
    }
    let verdict = if safe {
        Verdict::SafeWithGuarantee
    } else if witness.is_some() {
        notes.push(
            "a deterministic trajectory leaves the eroded set; this refutes the sufficient condition, not stochastic safety itself"
                .into(),
        );
        Verdict::FalsifiedDeterministic
    } else {
        Verdict::Inconclusive
    };

    let monte_carlo = if options.mc_validate {
        Some(validate_by_simulation(problem, &tube, options, switch_dt)?)
    } else {
        None
    };

    Ok(VerificationReport {
        verdict,
        delta: query.delta,
        min_margin_over_time: min_margin,
        witness,
        eroded_set: format!(
            "{} eroded by r_t in [{:.6e}, {:.6e}]",
            problem.safe_set.label,
            tube.radii.iter().copied().fold(f64::INFINITY, f64::min),
            tube.sup()
        ),
        tube,
        rows,
        monte_carlo,
        grid_refinement: options.grid_refinement.max(1),
        notes,
    })
}

fn draw_sample(scenario: &Scenario, seed: u64, k: u64) -> (Vec<f64>, DisturbanceSignal) {
    match scenario {
        Scenario::Fixed { x0, dist } => (x0.clone(), dist.clone()),
        Scenario::Sampled(f) => {
            let mut rng = rng::stream(seed, k);
            f(k, &mut rng)
        }
    }
}

fn validate_by_simulation(
    problem: &SafetyProblem,
    tube: &TubeCurve,
    options: &VerifyOptions,
    switch_dt: f64,
) -> Result<McValidation> {
    let q = &problem.query;
    let n_traj = options
        .mc_trajectories
        .unwrap_or_else(|| (10.0 / q.delta).ceil() as usize)
        .max(1);
    let scenario = scenario_for(problem, q.horizon, switch_dt);
    let ens = match (&problem.system, &problem.noise) {
        (System::Ct(s), NoiseModel::Ct(noise)) => {
            let steps = (q.horizon / options.step_dt).ceil() as usize;
            let cfg = EnsembleConfig::new(n_traj, options.seed, q.horizon, options.step_dt)
                .with_record_stride((steps / 200).max(1));
            simulate_ensemble_ct(s, noise, &scenario, &cfg, Some(&problem.safe_set))?
        }
        (System::Dt(s), NoiseModel::Dt(noise)) => {
            let cfg = EnsembleConfig::new(n_traj, options.seed, q.horizon, 1.0);
            simulate_ensemble_dt(s, noise, &scenario, &cfg, Some(&problem.safe_set))?
        }
        _ => unreachable!("checked by verify_safety"),
    };
    let curve = resample_curve(&problem.system, tube, &ens.times)?;
    let deviation = deviation_stats(&ens, &curve)?;
    let unsafe_count = ens.unsafe_count().unwrap_or(0);
    Ok(McValidation {
        n_traj,
        seed: options.seed,
        unsafe_count,
        unsafe_ci: clopper_pearson(unsafe_count as u64, n_traj as u64, 0.99),
        deviation,
    })
}

/// Smallest interval half-width `R` for which `{|x| ≤ R}` is certified safe
/// for a scalar contractive system whose nominal trajectory stays at 0:
/// the interval-splitting radius at `t = T`, where it peaks.
pub fn rmin_interval(
    sys: &CtSystemBounds,
    delta: f64,
    horizon: f64,
    split_dt: f64,
    eps: &EpsilonConstants,
) -> Result<f64> {
    if sys.dim != 1 {
        return Err(domain(format!("R_min is defined for scalar systems, got dimension {}", sys.dim)));
    }
    ct_contractive_radius(sys, eps, delta, horizon, split_dt, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TighteningStep {
    pub t: usize,
    pub margin: f64,
    pub radius: f64,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TighteningReport {
    pub steps: Vec<TighteningStep>,
    pub all_ok: bool,
    pub tube: TubeCurve,
}

/// Per-step check `margin(f(x_t, u_t)) ≥ r_{t+1}` for a nominal plan.
///
/// `states` holds `x_0, …` (either one entry per input or one extra for the
/// terminal state); `inputs` enter the map as its disturbance argument.
pub fn tightening_check(
    sys: &DtSystemBounds,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    safe_set: &SafeSet,
    query: &TubeQuery,
) -> Result<TighteningReport> {
    let n = inputs.len();
    if !(states.len() == n || states.len() == n + 1) {
        return Err(Error::LengthMismatch(format!(
            "{} states for {} inputs; expected {n} or {}",
            states.len(),
            n,
            n + 1
        )));
    }
    if (n as f64) > query.horizon {
        return Err(Error::LengthMismatch(format!(
            "{n} steps exceed the tube horizon {}",
            query.horizon
        )));
    }
    let tube = select_radius(&System::Dt(sys.clone()), &query.clone().with_integer_grid())?;
    let mut next = vec![0.0; sys.dim];
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        sys.step(&states[t], &inputs[t], t, &mut next);
        if let Some(x) = states.get(t + 1) {
            let gap = next.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > 1e-9 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                log::warn!("state {} differs from f(x_{t}, u_{t}) by {gap:.3e}", t + 1);
            }
        }
        let margin = safe_set.margin(&next)?;
        let radius = tube.radii[t + 1];
        let slack = margin - radius;
        steps.push(TighteningStep {
            t,
            margin,
            radius,
            slack,
            ok: slack >= 0.0,
        });
    }
    Ok(TighteningReport {
        all_ok: steps.iter().all(|s| s.ok),
        steps,
        tube,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Constraint;
    use crate::model::{EpsilonChoice, SplitChoice};
    use crate::noise::{CtNoise, DtNoise};
    use crate::tubes::dt_contractive_radius;
    use approx::assert_relative_eq;

    fn scalar(c: f64) -> CtSystemBounds {
        CtSystemBounds::linear(1, c, 0.1f64.sqrt()).unwrap()
    }

    fn rmin_query(horizon: f64) -> TubeQuery {
        TubeQuery::new(1e-3, horizon)
            .with_uniform_grid(201)
            .with_epsilon(EpsilonChoice::Overrides {
                eps1: 2.0 * 2f64.ln(),
                eps2: 2.0,
            })
            .with_split(SplitChoice::Fixed(0.01))
    }

    fn interval_problem(r: f64, horizon: f64) -> SafetyProblem {
        SafetyProblem::new(
            System::Ct(scalar(-1.0)),
            NoiseModel::Ct(CtNoise::isotropic(1, 0.1f64.sqrt())),
            ReachBall::point(vec![0.0]),
            SafeSet::interval(r).unwrap(),
            rmin_query(horizon),
        )
    }

    #[test]
    fn reach_radius_limits() {
        let none = DisturbanceBound::default();
        assert_eq!(reach_radius(&System::Ct(scalar(1.0)), 0.0, &none, 3.0), 0.0);
        assert!(reach_radius(&System::Ct(scalar(-1.0)), 0.1, &none, 50.0) < 1e-20);
        let d = DisturbanceBound {
            lipschitz_d: 1.0,
            radius_d: 0.2,
        };
        assert_relative_eq!(reach_radius(&System::Ct(scalar(0.0)), 0.0, &d, 2.0), 0.4);
        let dt = System::Dt(DtSystemBounds::new(1, 0.5, 0.01).unwrap());
        assert_relative_eq!(reach_radius(&dt, 1.0, &d, 3.0), 0.125 + 0.2 * 1.75);
    }

    #[test]
    fn reach_radius_matches_extremal_disturbance() {
        // x' = -x + d with |d| ≤ 0.2; the extremal input d ≡ 0.2 attains the bound.
        let sys = scalar(-1.0);
        let d = DisturbanceBound {
            lipschitz_d: 1.0,
            radius_d: 0.2,
        };
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.1).collect();
        let xs = nominal_states_ct(&sys, &DisturbanceSignal::Constant(vec![0.2]), &[0.0], &times, 1e-3).unwrap();
        for (x, &t) in xs.iter().zip(&times) {
            let r = reach_radius(&System::Ct(sys.clone()), 0.0, &d, t);
            assert_relative_eq!(r, 0.2 * (1.0 - (-t).exp()), max_relative = 1e-12);
            assert_relative_eq!(x[0], r, epsilon = 1e-12);
        }
    }

    #[test]
    fn rmin_matches_closed_form() {
        let eps = EpsilonConstants::from_overrides(2.0 * 2f64.ln(), 2.0).unwrap();
        let r = rmin_interval(&scalar(-1.0), 1e-3, 2.0, 0.01, &eps).unwrap();
        let want = 0.1f64.sqrt() / 2f64.sqrt()
            * ((1.0 - (-4.0f64).exp()).sqrt() + (0.02f64.exp() - 1.0).sqrt())
            * (2.0 * 2f64.ln() + 2.0 * (2.0 * 2.0 / (1e-3 * 0.01f64)).ln()).sqrt();
        assert_relative_eq!(r, want, max_relative = 1e-12);
        assert_relative_eq!(r, 1.320_842_738_486_858_6, max_relative = 1e-12);
    }

    #[test]
    fn verdict_flips_at_rmin() {
        let eps = EpsilonConstants::from_overrides(2.0 * 2f64.ln(), 2.0).unwrap();
        for horizon in [2.0, 5.0] {
            let r = rmin_interval(&scalar(-1.0), 1e-3, horizon, 0.01, &eps).unwrap();
            let opts = VerifyOptions::default();
            let above = verify_safety(&interval_problem(r + 1e-9, horizon), &opts).unwrap();
            let below = verify_safety(&interval_problem(r - 1e-9, horizon), &opts).unwrap();
            assert_eq!(above.verdict, Verdict::SafeWithGuarantee);
            assert!(above.min_margin_over_time >= 0.0);
            assert_ne!(below.verdict, Verdict::SafeWithGuarantee);
        }
    }

    #[test]
    fn half_rmin_is_falsified_by_nominal() {
        let eps = EpsilonConstants::from_overrides(2.0 * 2f64.ln(), 2.0).unwrap();
        let r = rmin_interval(&scalar(-1.0), 1e-3, 2.0, 0.01, &eps).unwrap();
        let opts = VerifyOptions {
            falsify_samples: 4,
            ..Default::default()
        };
        let rep = verify_safety(&interval_problem(0.5 * r, 2.0), &opts).unwrap();
        assert_eq!(rep.verdict, Verdict::FalsifiedDeterministic);
        assert_eq!(rep.witness.as_ref().unwrap().sample, 0);
        assert!(rep.to_text().contains("falsified_deterministic"));
    }

    #[test]
    fn initial_set_outside_is_an_error() {
        let mut p = interval_problem(1.0, 2.0);
        p.x0_ball = ReachBall::new(vec![0.95], 0.1).unwrap();
        assert!(matches!(
            verify_safety(&p, &VerifyOptions::default()),
            Err(Error::InitialSetUnsafe { .. })
        ));
    }

    #[test]
    fn nearly_noise_free_system_is_safe() {
        let sys = CtSystemBounds::linear(1, -1.0, 1e-12).unwrap();
        let p = SafetyProblem::new(
            System::Ct(sys),
            NoiseModel::Ct(CtNoise::isotropic(1, 1e-12)),
            ReachBall::point(vec![0.5]),
            SafeSet::interval(0.6).unwrap(),
            TubeQuery::new(1e-3, 1.0).with_uniform_grid(11),
        );
        let rep = verify_safety(&p, &VerifyOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::SafeWithGuarantee);
        assert!(rep.tube.sup() < 1e-10);
        assert!(rep.margins_csv().lines().count() == 12);
    }

    #[test]
    fn refinement_adds_points() {
        assert_eq!(refine_grid(&[0.0, 1.0, 2.0], 4).len(), 9);
        assert_eq!(refine_grid(&[0.0, 1.0], 1), vec![0.0, 1.0]);
    }

    #[test]
    fn tightening_zero_noise_passes_and_grazing_fails() {
        let sys = DtSystemBounds::new(1, 0.9, 1e-300).unwrap();
        let set = SafeSet::new(1, "x >= -1", vec![Constraint::lower_bound(1, 0, -1.0).unwrap()]).unwrap();
        let states = vec![vec![0.0]; 11];
        let inputs = vec![vec![0.0]; 10];
        let q = TubeQuery::new(0.005, 10.0).with_split(SplitChoice::Fixed(1.0));
        let rep = tightening_check(&sys, &states, &inputs, &set, &q).unwrap();
        assert!(rep.all_ok);

        let noisy = DtSystemBounds::new(1, 0.9, 0.01).unwrap();
        let states = vec![vec![-1.0]; 3];
        let inputs = vec![vec![-0.1]; 2];
        // f(-1, -0.1) = -1.0 sits on the boundary.
        let rep = tightening_check(&noisy, &states, &inputs, &set, &q).unwrap();
        assert!(!rep.steps[0].ok);
    }

    #[test]
    fn tightening_matches_recomputed_tube() {
        let sys = DtSystemBounds::new(1, 0.9, 0.01).unwrap();
        let set = SafeSet::new(1, "x >= -1", vec![Constraint::lower_bound(1, 0, -1.0).unwrap()]).unwrap();
        let q = TubeQuery::new(0.005, 20.0)
            .with_epsilon(EpsilonChoice::Fixed(0.5))
            .with_split(SplitChoice::Fixed(4.0));
        let rep = tightening_check(&sys, &vec![vec![0.0]; 21], &vec![vec![0.0]; 20], &set, &q).unwrap();
        let eps = EpsilonConstants::new(0.5).unwrap();
        let mut all = true;
        for s in &rep.steps {
            let r = dt_contractive_radius(&sys, &eps, 0.005, 20, 4, s.t as u64 + 1).unwrap();
            assert_relative_eq!(s.radius, r, max_relative = 1e-12);
            all &= r <= 1.0;
        }
        assert_eq!(rep.all_ok, all);
    }

    #[test]
    fn tightening_length_mismatch() {
        let sys = DtSystemBounds::new(1, 0.9, 0.01).unwrap();
        let set = SafeSet::interval(1.0).unwrap();
        let q = TubeQuery::new(0.005, 10.0);
        let err = tightening_check(&sys, &vec![vec![0.0]; 5], &vec![vec![0.0]; 2], &set, &q).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(_)));
    }

    #[test]
    fn dt_verification_runs_with_monte_carlo() {
        let sys = DtSystemBounds::new(1, 0.5, 0.01).unwrap();
        let p = SafetyProblem::new(
            System::Dt(sys),
            NoiseModel::Dt(DtNoise::Gaussian { variance: 0.01 }),
            ReachBall::point(vec![0.0]),
            SafeSet::interval(2.0).unwrap(),
            TubeQuery::new(0.01, 20.0).with_integer_grid(),
        );
        let rep = verify_safety(
            &p,
            &VerifyOptions {
                mc_validate: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::SafeWithGuarantee);
        let mc = rep.monte_carlo.unwrap();
        assert_eq!(mc.n_traj, 1000);
        assert_eq!(mc.unsafe_count, 0);
        assert!(mc.deviation.consistent_with_delta());
    }
}
