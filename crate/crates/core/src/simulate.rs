//! Seeded Monte-Carlo ensembles of associated trajectory pairs.
//!
//! Each stochastic trajectory `X_t` shares its initial state and disturbance
//! signal with a deterministic companion `x_t`; the ensemble records
//! `‖X_t - x_t‖` on a time grid. Continuous time uses Euler–Maruyama for `X`
//! and classical RK4 for `x` on the same grid. Discrete time iterates both
//! maps exactly.
//!
//! Trajectory `i` draws its noise from stream `(seed, i)`, so an ensemble is
//! a pure function of its configuration regardless of thread count.
//! Suprema are taken over grid points only.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::SafeSet;
use crate::model::{CtSystemBounds, DtSystemBounds, TubeCurve};
use crate::noise::{CtNoise, DtNoise};
use crate::rng::{self, fill_standard_normal, StreamRng};
use crate::stats::{clopper_pearson, empirical_quantile, fmt_sig17, BinomialCi};

/// Offset mixed into the seed for scenario sampling so that initial states
/// and disturbances never share a stream with the process noise.
const SCENARIO_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub type DisturbanceFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
pub type ScenarioSampler = Arc<dyn Fn(u64, &mut StreamRng) -> (Vec<f64>, DisturbanceSignal) + Send + Sync>;

/// Deterministic disturbance `d_t`. Discrete-time systems read it at integer
/// times.
#[derive(Clone)]
pub enum DisturbanceSignal {
    Zero { dim: usize },
    Constant(Vec<f64>),
    /// `values[k]` on `[k·switch_dt, (k+1)·switch_dt)`; the last value is held.
    PiecewiseConstant { values: Vec<Vec<f64>>, switch_dt: f64 },
    Callback {
        dim: usize,
        f: DisturbanceFn,
    },
}

impl DisturbanceSignal {
    pub fn zero() -> Self {
        DisturbanceSignal::Zero { dim: 0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSignal::Zero { dim } => *dim,
            DisturbanceSignal::Constant(v) => v.len(),
            DisturbanceSignal::PiecewiseConstant { values, .. } => values.first().map_or(0, Vec::len),
            DisturbanceSignal::Callback { dim, .. } => *dim,
        }
    }

    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        match self {
            DisturbanceSignal::Zero { .. } => out.fill(0.0),
            DisturbanceSignal::Constant(v) => out.copy_from_slice(v),
            DisturbanceSignal::PiecewiseConstant { values, switch_dt } => {
                let k = ((t / switch_dt).floor().max(0.0) as usize).min(values.len() - 1);
                out.copy_from_slice(&values[k]);
            }
            DisturbanceSignal::Callback { f, .. } => f(t, out),
        }
    }
}

impl fmt::Debug for DisturbanceSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisturbanceSignal::Zero { dim } => write!(f, "Zero({dim})"),
            DisturbanceSignal::Constant(v) => write!(f, "Constant({v:?})"),
            DisturbanceSignal::PiecewiseConstant { values, switch_dt } => {
                write!(f, "PiecewiseConstant({} pieces, switch_dt = {switch_dt})", values.len())
            }
            DisturbanceSignal::Callback { dim, .. } => write!(f, "Callback({dim})"),
        }
    }
}

/// Disturbance domain: a closed ball of radius `radius` around `nominal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceDomain {
    pub nominal: Vec<f64>,
    pub radius: f64,
}

impl DisturbanceDomain {
    pub fn contains(&self, d: &[f64]) -> bool {
        d.len() == self.nominal.len()
            && d.iter()
                .zip(&self.nominal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                <= self.radius * (1.0 + 1e-12)
    }

    /// Random piecewise-constant signal with values drawn uniformly from the ball.
    pub fn sample_piecewise<R: Rng + ?Sized>(&self, rng: &mut R, horizon: f64, switch_dt: f64) -> DisturbanceSignal {
        if self.nominal.is_empty() {
            return DisturbanceSignal::zero();
        }
        let pieces = ((horizon / switch_dt).ceil() as usize).max(1) + 1;
        let values = (0..pieces)
            .map(|_| {
                let mut v = vec![0.0; self.nominal.len()];
                rng::uniform_ball(rng, &self.nominal, self.radius, &mut v);
                v
            })
            .collect();
        DisturbanceSignal::PiecewiseConstant { values, switch_dt }
    }
}

/// Initial state and disturbance for each trajectory.
#[derive(Clone)]
pub enum Scenario {
    Fixed { x0: Vec<f64>, dist: DisturbanceSignal },
    /// `(trajectory index, rng) ↦ (x0, d)`.
    Sampled(ScenarioSampler),
}

impl Scenario {
    pub fn fixed(x0: Vec<f64>, dist: DisturbanceSignal) -> Self {
        Scenario::Fixed { x0, dist }
    }

    /// `x0` uniform in a ball and random piecewise-constant disturbances.
    pub fn sampled_ball(
        center: Vec<f64>,
        radius: f64,
        domain: DisturbanceDomain,
        horizon: f64,
        switch_dt: f64,
    ) -> Self {
        Scenario::Sampled(Arc::new(move |_, rng| {
            let mut x0 = vec![0.0; center.len()];
            rng::uniform_ball(rng, &center, radius, &mut x0);
            (x0, domain.sample_piecewise(rng, horizon, switch_dt))
        }))
    }

    fn draw(&self, seed: u64, index: u64) -> (Vec<f64>, DisturbanceSignal) {
        match self {
            Scenario::Fixed { x0, dist } => (x0.clone(), dist.clone()),
            Scenario::Sampled(f) => {
                let mut rng = rng::stream(seed ^ SCENARIO_STREAM_SALT, index);
                f(index, &mut rng)
            }
        }
    }
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Fixed { x0, dist } => write!(f, "Fixed({x0:?}, {dist:?})"),
            Scenario::Sampled(_) => write!(f, "Sampled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedTrajectory {
    pub times: Vec<f64>,
    pub stochastic: Vec<Vec<f64>>,
    pub deterministic: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Integration step for continuous time; ignored for discrete time.
    pub step_dt: f64,
    /// Keep every `record_stride`-th grid point (the final point is always kept).
    pub record_stride: usize,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, seed: u64, horizon: f64, step_dt: f64) -> Self {
        Self {
            n_traj,
            seed,
            horizon,
            step_dt,
            record_stride: 1,
        }
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub step_dt: f64,
    pub steps: usize,
    pub method: String,
}

/// Deviations `‖X_t - x_t‖` for a batch of associated pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub seed: u64,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `n_traj × times.len()`.
    pub deviations: Vec<f64>,
    /// Supremum over every integration step, not only recorded ones.
    pub sup_deviation: Vec<f64>,
    /// Row-major `n_traj × dim` stochastic states at the horizon.
    pub terminal_states: Vec<f64>,
    /// Row-major `n_traj × dim` deterministic states at the horizon.
    pub terminal_nominal: Vec<f64>,
    /// Minimum safe-set margin of each stochastic path, when monitored.
    pub min_safe_margin: Option<Vec<f64>>,
    pub meta: EnsembleMeta,
}

impl TrajectoryEnsemble {
    pub fn deviation_row(&self, i: usize) -> &[f64] {
        let w = self.times.len();
        &self.deviations[i * w..(i + 1) * w]
    }

    pub fn terminal_state(&self, i: usize) -> &[f64] {
        &self.terminal_states[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of monitored trajectories that left the safe set.
    pub fn unsafe_count(&self) -> Option<usize> {
        self.min_safe_margin
            .as_ref()
            .map(|m| m.iter().filter(|&&v| v < 0.0).count())
    }
}

struct TrajOutput {
    devs: Vec<f64>,
    sup: f64,
    terminal: Vec<f64>,
    terminal_nominal: Vec<f64>,
    min_margin: f64,
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn ct_grid(horizon: f64, step_dt: f64) -> Result<(usize, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(domain(format!("horizon must be positive, got {horizon}")));
    }
    if !(step_dt > 0.0 && step_dt.is_finite()) {
        return Err(domain(format!("step_dt must be positive, got {step_dt}")));
    }
    let steps = ((horizon / step_dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

fn recorded(k: usize, steps: usize, stride: usize) -> bool {
    k.is_multiple_of(stride) || k == steps
}

fn check_x0(dim: usize, x0: &[f64]) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    Ok(())
}

struct Rk4 {
    d: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize, m: usize) -> Self {
        Self {
            d: vec![0.0; m],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, sys: &CtSystemBounds, dist: &DisturbanceSignal, x: &mut [f64], t: f64, h: f64) -> Result<()> {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let (d, tmp) = (&mut self.d, &mut self.tmp);
        dist.value_at(t, d);
        sys.drift(x, d, t, k1);
        dist.value_at(t + h / 2.0, d);
        for i in 0..n {
            tmp[i] = x[i] + h / 2.0 * k1[i];
        }
        sys.drift(tmp, d, t + h / 2.0, k2);
        for i in 0..n {
            tmp[i] = x[i] + h / 2.0 * k2[i];
        }
        sys.drift(tmp, d, t + h / 2.0, k3);
        dist.value_at(t + h, d);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        sys.drift(tmp, d, t + h, k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: t + h,
                trajectory: u64::MAX,
            });
        }
        Ok(())
    }
}

/// RK4 path of the deterministic system on `steps` equal steps of size `h`.
fn rk4_path(sys: &CtSystemBounds, dist: &DisturbanceSignal, x0: &[f64], steps: usize, h: f64) -> Result<Vec<Vec<f64>>> {
    let mut rk = Rk4::new(sys.dim, dist.dim());
    let mut x = x0.to_vec();
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x.clone());
    for k in 0..steps {
        rk.step(sys, dist, &mut x, k as f64 * h, h)?;
        path.push(x.clone());
    }
    Ok(path)
}

/// Deterministic continuous-time states at increasing `times` (starting at
/// 0), integrated with RK4 using steps no longer than `max_step`.
pub fn nominal_states_ct(
    sys: &CtSystemBounds,
    dist: &DisturbanceSignal,
    x0: &[f64],
    times: &[f64],
    max_step: f64,
) -> Result<Vec<Vec<f64>>> {
    check_x0(sys.dim, x0)?;
    if !(max_step > 0.0 && max_step.is_finite()) {
        return Err(domain(format!("max_step must be positive, got {max_step}")));
    }
    let mut rk = Rk4::new(sys.dim, dist.dim());
    let mut x = x0.to_vec();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            return Err(domain("times must be nondecreasing and start at or after 0"));
        }
        let span = t - now;
        if span > 0.0 {
            let sub = ((span / max_step) - 1e-9).ceil().max(1.0) as usize;
            let h = span / sub as f64;
            for k in 0..sub {
                rk.step(sys, dist, &mut x, now + k as f64 * h, h)?;
            }
        }
        now = t;
        out.push(x.clone());
    }
    Ok(out)
}

/// Deterministic continuous-time path on a uniform grid with RK4.
pub fn deterministic_path_ct(
    sys: &CtSystemBounds,
    dist: &DisturbanceSignal,
    x0: &[f64],
    horizon: f64,
    step_dt: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_x0(sys.dim, x0)?;
    let (steps, h) = ct_grid(horizon, step_dt)?;
    let path = rk4_path(sys, dist, x0, steps, h)?;
    let times = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    Ok((times, path))
}

/// Deterministic discrete-time path `x_0, …, x_T`.
pub fn deterministic_path_dt(
    sys: &DtSystemBounds,
    dist: &DisturbanceSignal,
    x0: &[f64],
    horizon: u64,
) -> Result<Vec<Vec<f64>>> {
    check_x0(sys.dim, x0)?;
    let mut d = vec![0.0; dist.dim()];
    let mut path = Vec::with_capacity(horizon as usize + 1);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; sys.dim];
    path.push(x.clone());
    for t in 0..horizon as usize {
        dist.value_at(t as f64, &mut d);
        sys.step(&x, &d, t, &mut next);
        std::mem::swap(&mut x, &mut next);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: (t + 1) as f64,
                trajectory: u64::MAX,
            });
        }
        path.push(x.clone());
    }
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
fn run_ct_trajectory(
    sys: &CtSystemBounds,
    noise: &CtNoise,
    dist: &DisturbanceSignal,
    x0: &[f64],
    nominal: &[Vec<f64>],
    steps: usize,
    h: f64,
    stride: usize,
    seed: u64,
    index: u64,
    monitor: Option<&SafeSet>,
    keep_path: bool,
) -> Result<(TrajOutput, Vec<Vec<f64>>)> {
    let n = sys.dim;
    let m = noise.cols;
    let mut rng = rng::stream(seed, index);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    let mut z = vec![0.0; m];
    let mut d = vec![0.0; dist.dim()];
    let sq = h.sqrt();
    let mut devs = Vec::with_capacity(steps / stride + 2);
    let mut path = Vec::new();
    let mut sup = 0.0f64;
    let mut min_margin = f64::INFINITY;
    let mut observe = |k: usize, x: &[f64], devs: &mut Vec<f64>, path: &mut Vec<Vec<f64>>| -> Result<()> {
        let dev = norm_diff(x, &nominal[k]);
        sup = sup.max(dev);
        if let Some(s) = monitor {
            min_margin = min_margin.min(s.margin(x)?);
        }
        if recorded(k, steps, stride) {
            devs.push(dev);
            if keep_path {
                path.push(x.to_vec());
            }
        }
        Ok(())
    };
    observe(0, &x, &mut devs, &mut path)?;
    for k in 0..steps {
        let t = k as f64 * h;
        dist.value_at(t, &mut d);
        sys.drift(&x, &d, t, &mut f);
        noise.eval(&x, t, &mut g);
        fill_standard_normal(&mut rng, &mut z);
        for i in 0..n {
            let mut inc = 0.0;
            for j in 0..m {
                inc += g[i * m + j] * z[j];
            }
            x[i] += f[i] * h + inc * sq;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: t + h,
                trajectory: index,
            });
        }
        observe(k + 1, &x, &mut devs, &mut path)?;
    }
    Ok((
        TrajOutput {
            devs,
            sup,
            terminal: x,
            terminal_nominal: nominal[steps].clone(),
            min_margin,
        },
        path,
    ))
}

/// One associated pair in continuous time, using noise stream `(seed, 0)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_pair_ct(
    sys: &CtSystemBounds,
    noise: &CtNoise,
    dist: &DisturbanceSignal,
    x0: &[f64],
    horizon: f64,
    step_dt: f64,
    seed: u64,
) -> Result<PairedTrajectory> {
    check_x0(sys.dim, x0)?;
    check_noise_dims(sys, noise)?;
    let (steps, h) = ct_grid(horizon, step_dt)?;
    let nominal = rk4_path(sys, dist, x0, steps, h)?;
    let (_, stochastic) = run_ct_trajectory(sys, noise, dist, x0, &nominal, steps, h, 1, seed, 0, None, true)?;
    Ok(PairedTrajectory {
        times: (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect(),
        stochastic,
        deterministic: nominal,
    })
}

fn check_noise_dims(sys: &CtSystemBounds, noise: &CtNoise) -> Result<()> {
    if noise.dim != sys.dim {
        return Err(Error::DimensionMismatch {
            expected: sys.dim,
            got: noise.dim,
        });
    }
    Ok(())
}

/// One associated pair in discrete time, using noise stream `(seed, 0)`.
pub fn simulate_pair_dt(
    sys: &DtSystemBounds,
    noise: &DtNoise,
    dist: &DisturbanceSignal,
    x0: &[f64],
    horizon: u64,
    seed: u64,
) -> Result<PairedTrajectory> {
    let nominal = deterministic_path_dt(sys, dist, x0, horizon)?;
    let (_, stochastic) = run_dt_trajectory(sys, noise, dist, x0, &nominal, horizon as usize, seed, 0, None, true)?;
    Ok(PairedTrajectory {
        times: (0..=horizon).map(|k| k as f64).collect(),
        stochastic,
        deterministic: nominal,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_dt_trajectory(
    sys: &DtSystemBounds,
    noise: &DtNoise,
    dist: &DisturbanceSignal,
    x0: &[f64],
    nominal: &[Vec<f64>],
    steps: usize,
    seed: u64,
    index: u64,
    monitor: Option<&SafeSet>,
    keep_path: bool,
) -> Result<(TrajOutput, Vec<Vec<f64>>)> {
    let n = sys.dim;
    let mut rng = rng::stream(seed, index);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut d = vec![0.0; dist.dim()];
    let mut devs = Vec::with_capacity(steps + 1);
    let mut path = Vec::new();
    let mut sup = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for (k, nom) in nominal.iter().enumerate().take(steps + 1) {
        if k > 0 {
            let t = k - 1;
            dist.value_at(t as f64, &mut d);
            sys.step(&x, &d, t, &mut next);
            noise.sample(&mut rng, &mut w);
            for ((xi, ni), wi) in x.iter_mut().zip(&next).zip(&w) {
                *xi = ni + wi;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    t: k as f64,
                    trajectory: index,
                });
            }
        }
        let dev = norm_diff(&x, nom);
        sup = sup.max(dev);
        if let Some(s) = monitor {
            min_margin = min_margin.min(s.margin(&x)?);
        }
        devs.push(dev);
        if keep_path {
            path.push(x.clone());
        }
    }
    Ok((
        TrajOutput {
            devs,
            sup,
            terminal: x,
            terminal_nominal: nominal[steps].clone(),
            min_margin,
        },
        path,
    ))
}

fn assemble(
    outputs: Vec<TrajOutput>,
    cfg: &EnsembleConfig,
    dim: usize,
    times: Vec<f64>,
    monitored: bool,
    meta: EnsembleMeta,
) -> TrajectoryEnsemble {
    let w = times.len();
    let mut deviations = Vec::with_capacity(outputs.len() * w);
    let mut sup_deviation = Vec::with_capacity(outputs.len());
    let mut terminal_states = Vec::with_capacity(outputs.len() * dim);
    let mut terminal_nominal = Vec::with_capacity(outputs.len() * dim);
    let mut margins = Vec::with_capacity(outputs.len());
    for o in outputs {
        deviations.extend_from_slice(&o.devs);
        sup_deviation.push(o.sup);
        terminal_states.extend_from_slice(&o.terminal);
        terminal_nominal.extend_from_slice(&o.terminal_nominal);
        margins.push(o.min_margin);
    }
    TrajectoryEnsemble {
        n_traj: cfg.n_traj,
        seed: cfg.seed,
        dim,
        times,
        deviations,
        sup_deviation,
        terminal_states,
        terminal_nominal,
        min_safe_margin: monitored.then_some(margins),
        meta,
    }
}

/// Continuous-time ensemble. With `monitor`, also tracks each stochastic
/// path's minimum margin to the safe set over every integration step.
pub fn simulate_ensemble_ct(
    sys: &CtSystemBounds,
    noise: &CtNoise,
    scenario: &Scenario,
    cfg: &EnsembleConfig,
    monitor: Option<&SafeSet>,
) -> Result<TrajectoryEnsemble> {
    check_noise_dims(sys, noise)?;
    let (steps, h) = ct_grid(cfg.horizon, cfg.step_dt)?;
    let stride = cfg.record_stride.max(1);
    let shared = match scenario {
        Scenario::Fixed { x0, dist } => {
            check_x0(sys.dim, x0)?;
            Some(rk4_path(sys, dist, x0, steps, h)?)
        }
        Scenario::Sampled(_) => None,
    };
    let outputs = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let (x0, dist) = scenario.draw(cfg.seed, i);
            check_x0(sys.dim, &x0)?;
            let own;
            let nominal = match &shared {
                Some(p) => p,
                None => {
                    own = rk4_path(sys, &dist, &x0, steps, h)?;
                    &own
                }
            };
            run_ct_trajectory(sys, noise, &dist, &x0, nominal, steps, h, stride, cfg.seed, i, monitor, false)
                .map(|(o, _)| o)
        })
        .collect::<Result<Vec<_>>>()?;
    let times = (0..=steps)
        .filter(|&k| recorded(k, steps, stride))
        .map(|k| cfg.horizon * k as f64 / steps as f64)
        .collect();
    let meta = EnsembleMeta {
        step_dt: h,
        steps,
        method: "euler_maruyama/rk4".into(),
    };
    Ok(assemble(outputs, cfg, sys.dim, times, monitor.is_some(), meta))
}

/// Discrete-time ensemble over `t = 0, …, horizon` (horizon must be an integer).
pub fn simulate_ensemble_dt(
    sys: &DtSystemBounds,
    noise: &DtNoise,
    scenario: &Scenario,
    cfg: &EnsembleConfig,
    monitor: Option<&SafeSet>,
) -> Result<TrajectoryEnsemble> {
    if !(cfg.horizon >= 0.0 && cfg.horizon.fract() == 0.0) {
        return Err(domain(format!("discrete horizon must be an integer, got {}", cfg.horizon)));
    }
    noise.validate()?;
    let steps = cfg.horizon as usize;
    let shared = match scenario {
        Scenario::Fixed { x0, dist } => Some(deterministic_path_dt(sys, dist, x0, steps as u64)?),
        Scenario::Sampled(_) => None,
    };
    let outputs = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let (x0, dist) = scenario.draw(cfg.seed, i);
            let own;
            let nominal = match &shared {
                Some(p) => p,
                None => {
                    own = deterministic_path_dt(sys, &dist, &x0, steps as u64)?;
                    &own
                }
            };
            run_dt_trajectory(sys, noise, &dist, &x0, nominal, steps, cfg.seed, i, monitor, false).map(|(o, _)| o)
        })
        .collect::<Result<Vec<_>>>()?;
    let times = (0..=steps).map(|k| k as f64).collect();
    let meta = EnsembleMeta {
        step_dt: 1.0,
        steps,
        method: "dt_exact".into(),
    };
    Ok(assemble(outputs, cfg, sys.dim, times, monitor.is_some(), meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeExceedance {
    pub t: f64,
    pub r_t: f64,
    pub exceed_count: usize,
}

/// How an ensemble compares against a tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub n_traj: usize,
    pub delta: f64,
    pub violation_count: usize,
    pub violation_rate: f64,
    /// 99% Clopper–Pearson interval on the violation probability.
    pub binomial_ci: BinomialCi,
    pub per_time_exceedance: Vec<TimeExceedance>,
    /// Empirical `(1 - δ)`-quantile of `sup_t ‖X_t - x_t‖ / r_t`.
    pub empirical_sup_quantile: f64,
}

impl DeviationStats {
    /// Observed violation rate is consistent with `P(violation) ≤ δ`.
    pub fn consistent_with_delta(&self) -> bool {
        self.binomial_ci.lower <= self.delta
    }

    pub fn verdict_line(&self) -> String {
        format!(
            "{} violations / {} trajectories (rate {:.3e}); 99% CI [{:.3e}, {:.3e}] vs delta {:.3e}: {}",
            self.violation_count,
            self.n_traj,
            self.violation_rate,
            self.binomial_ci.lower,
            self.binomial_ci.upper,
            self.delta,
            if self.consistent_with_delta() { "PASS" } else { "FAIL" }
        )
    }

    /// CSV with columns `t,r_t,exceed_count,n_traj`.
    pub fn exceedance_csv(&self) -> String {
        let mut s = String::from("t,r_t,exceed_count,n_traj\n");
        for e in &self.per_time_exceedance {
            s.push_str(&format!(
                "{},{},{},{}\n",
                fmt_sig17(e.t),
                fmt_sig17(e.r_t),
                e.exceed_count,
                self.n_traj
            ));
        }
        s
    }
}

/// Compares each trajectory against the curve at every curve time; a
/// trajectory violates when `‖X_t - x_t‖ > r_t` at any of them.
pub fn deviation_stats(ensemble: &TrajectoryEnsemble, curve: &TubeCurve) -> Result<DeviationStats> {
    if ensemble.n_traj == 0 {
        return Err(domain("empty ensemble"));
    }
    let mut cols = Vec::with_capacity(curve.len());
    for &t in &curve.times {
        let tol = 1e-9 * t.abs().max(1.0);
        let i = ensemble.times.partition_point(|&s| s < t - tol);
        if i >= ensemble.times.len() || (ensemble.times[i] - t).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "curve time {t} is not on the ensemble grid"
            )));
        }
        cols.push(i);
    }
    let mut exceed = vec![0usize; cols.len()];
    let mut violations = 0usize;
    let mut ratios = Vec::with_capacity(ensemble.n_traj);
    for k in 0..ensemble.n_traj {
        let row = ensemble.deviation_row(k);
        let mut violated = false;
        let mut ratio = 0.0f64;
        for (j, (&col, &r)) in cols.iter().zip(&curve.radii).enumerate() {
            let dev = row[col];
            if dev > r {
                exceed[j] += 1;
                violated = true;
            }
            let q = if r > 0.0 {
                dev / r
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            ratio = ratio.max(q);
        }
        violations += violated as usize;
        ratios.push(ratio);
    }
    let delta = curve.query.delta;
    Ok(DeviationStats {
        n_traj: ensemble.n_traj,
        delta,
        violation_count: violations,
        violation_rate: violations as f64 / ensemble.n_traj as f64,
        binomial_ci: clopper_pearson(violations as u64, ensemble.n_traj as u64, 0.99),
        per_time_exceedance: curve
            .times
            .iter()
            .zip(&curve.radii)
            .zip(&exceed)
            .map(|((&t, &r_t), &c)| TimeExceedance {
                t,
                r_t,
                exceed_count: c,
            })
            .collect(),
        empirical_sup_quantile: empirical_quantile(&ratios, 1.0 - delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EpsilonChoice, SplitChoice, System, TubeQuery};
    use crate::tubes::select_radius;

    #[test]
    fn noise_free_pair_coincides() {
        let sys = CtSystemBounds::new(2, 0.0, 0.1).unwrap();
        let p = simulate_pair_ct(&sys, &CtNoise::zero(2), &DisturbanceSignal::zero(), &[1.0, -2.0], 1.0, 0.01, 3)
            .unwrap();
        assert_eq!(p.stochastic, p.deterministic);
        assert!(p.stochastic.iter().all(|x| x == &vec![1.0, -2.0]));
        assert_eq!(p.times.len(), 101);
        assert_eq!(*p.times.last().unwrap(), 1.0);
    }

    #[test]
    fn dt_noise_free_pair_coincides() {
        let sys = DtSystemBounds::new(1, 0.7, 0.01).unwrap();
        let p = simulate_pair_dt(&sys, &DtNoise::Zero, &DisturbanceSignal::zero(), &[1.0], 5, 3).unwrap();
        assert_eq!(p.stochastic, p.deterministic);
        assert!((p.deterministic[5][0] - 0.7f64.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let sys = CtSystemBounds::linear(1, -1.0, 0.3).unwrap();
        let noise = CtNoise::isotropic(1, 0.3);
        let sc = Scenario::fixed(vec![0.0], DisturbanceSignal::zero());
        let cfg = EnsembleConfig::new(64, 11, 1.0, 0.01);
        let a = simulate_ensemble_ct(&sys, &noise, &sc, &cfg, None).unwrap();
        let b = simulate_ensemble_ct(&sys, &noise, &sc, &cfg, None).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| simulate_ensemble_ct(&sys, &noise, &sc, &cfg, None).unwrap());
        assert_eq!(a, c);
        let d = simulate_ensemble_ct(&sys, &noise, &sc, &EnsembleConfig { seed: 12, ..cfg }, None).unwrap();
        assert_ne!(a.deviations, d.deviations);
    }

    #[test]
    fn record_stride_subsamples_grid() {
        let sys = CtSystemBounds::linear(1, -1.0, 0.3).unwrap();
        let noise = CtNoise::isotropic(1, 0.3);
        let sc = Scenario::fixed(vec![0.0], DisturbanceSignal::zero());
        let full = simulate_ensemble_ct(&sys, &noise, &sc, &EnsembleConfig::new(8, 1, 1.0, 0.01), None).unwrap();
        let sub = simulate_ensemble_ct(
            &sys,
            &noise,
            &sc,
            &EnsembleConfig::new(8, 1, 1.0, 0.01).with_record_stride(7),
            None,
        )
        .unwrap();
        assert_eq!(full.sup_deviation, sub.sup_deviation);
        assert_eq!(*sub.times.last().unwrap(), 1.0);
        assert_eq!(sub.times.len(), 100 / 7 + 2);
    }

    #[test]
    fn infinite_and_zero_curves() {
        let sys = CtSystemBounds::linear(1, 0.0, 0.3).unwrap();
        let noise = CtNoise::isotropic(1, 0.3);
        let sc = Scenario::fixed(vec![0.0], DisturbanceSignal::zero());
        let ens = simulate_ensemble_ct(&sys, &noise, &sc, &EnsembleConfig::new(200, 5, 1.0, 0.01), None).unwrap();
        let mut curve = select_radius(
            &System::Ct(sys),
            &TubeQuery::new(0.01, 1.0)
                .with_grid(ens.times.clone())
                .with_epsilon(EpsilonChoice::Fixed(0.5))
                .with_split(SplitChoice::None),
        )
        .unwrap();
        curve.radii.iter_mut().for_each(|r| *r = 1e12);
        assert_eq!(deviation_stats(&ens, &curve).unwrap().violation_count, 0);
        curve.radii.iter_mut().for_each(|r| *r = 0.0);
        let st = deviation_stats(&ens, &curve).unwrap();
        assert_eq!(st.violation_count, 200);
        assert!(!st.consistent_with_delta());
        assert!(st.exceedance_csv().starts_with("t,r_t,exceed_count,n_traj\n0.0000000000000000e0,"));
    }

    #[test]
    fn grid_mismatch_detected() {
        let sys = CtSystemBounds::linear(1, 0.0, 0.3).unwrap();
        let ens = simulate_ensemble_ct(
            &sys,
            &CtNoise::isotropic(1, 0.3),
            &Scenario::fixed(vec![0.0], DisturbanceSignal::zero()),
            &EnsembleConfig::new(4, 5, 1.0, 0.1),
            None,
        )
        .unwrap();
        let curve = select_radius(&System::Ct(sys), &TubeQuery::new(0.01, 1.0).with_grid(vec![0.0, 0.55, 1.0])).unwrap();
        assert!(matches!(deviation_stats(&ens, &curve), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn non_finite_aborts() {
        let sys = CtSystemBounds::new(1, 0.0, 0.1)
            .unwrap()
            .with_drift(|x, _, _, out| out[0] = x[0] * x[0] * 1e10);
        let err = simulate_pair_ct(&sys, &CtNoise::zero(1), &DisturbanceSignal::zero(), &[10.0], 1.0, 0.1, 0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn piecewise_signal_holds_last_value() {
        let s = DisturbanceSignal::PiecewiseConstant {
            values: vec![vec![1.0], vec![2.0]],
            switch_dt: 0.5,
        };
        let mut d = [0.0];
        s.value_at(0.49, &mut d);
        assert_eq!(d[0], 1.0);
        s.value_at(0.5, &mut d);
        assert_eq!(d[0], 2.0);
        s.value_at(9.0, &mut d);
        assert_eq!(d[0], 2.0);
    }

    #[test]
    fn sampled_disturbances_stay_in_domain() {
        let dom = DisturbanceDomain {
            nominal: vec![0.1, -0.1],
            radius: 0.05,
        };
        let mut rng = rng::stream(1, 1);
        if let DisturbanceSignal::PiecewiseConstant { values, .. } = dom.sample_piecewise(&mut rng, 2.0, 0.1) {
            assert!(values.iter().all(|v| dom.contains(v)));
            assert!(values.len() >= 21);
        } else {
            panic!("expected piecewise signal");
        }
    }

    #[test]
    fn monitor_counts_unsafe_paths() {
        let sys = CtSystemBounds::linear(1, 0.0, 1.0).unwrap();
        let set = SafeSet::interval(0.5).unwrap();
        let ens = simulate_ensemble_ct(
            &sys,
            &CtNoise::isotropic(1, 1.0),
            &Scenario::fixed(vec![0.0], DisturbanceSignal::zero()),
            &EnsembleConfig::new(500, 2, 1.0, 0.01),
            Some(&set),
        )
        .unwrap();
        // P(sup_{t≤1} |W_t| ≥ 0.5) is close to 1.
        assert!(ens.unsafe_count().unwrap() > 450);
    }
}
