//! Config-driven front end for the `probtube` binary.
//!
//! An experiment is one TOML file with the blocks `system`, `noise`,
//! `safe_set`, `tube`, `initial`, `disturbance`, `run` and `sweep`. Unknown
//! keys are rejected. Every command is a pure function of the file and the
//! flags, and CSV numbers use `{:.16e}` so reruns are byte-identical.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 safety or tube
//! validity not established, 4 numeric failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Constraint, SafeSet};
use crate::model::{
    CtSystemBounds, DtSystemBounds, EpsilonChoice, SplitChoice, System, TubeCurve, TubeMethod, TubeQuery,
};
use crate::noise::{CtNoise, DtNoise, NoiseModel};
use crate::simulate::{
    deviation_stats, simulate_ensemble_ct, simulate_ensemble_dt, DisturbanceDomain, DisturbanceSignal,
    EnsembleConfig, Scenario, TrajectoryEnsemble,
};
use crate::stats::{empirical_quantile, fmt_sig17, kahan_sum};
use crate::tubes::{resample_curve, select_radius};
use crate::verify::{verify_safety, DisturbanceBound, ReachBall, SafetyProblem, Verdict, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_ESTABLISHED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Obstacles `(x, y, radius)` of the planar demo.
pub const DEMO_OBSTACLES: [[f64; 3]; 3] = [[1.3, 3.5, 0.9], [-1.0, 2.2, 0.72], [6.2, 0.5, 0.75]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDomain {
    Ct,
    Dt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// `c·x + d` (continuous) or `L·x + d` (discrete), any dimension.
    ScalarLinear,
    /// Planar point attracted to a goal: `ẋ = -k (x - goal) + d`.
    PlanarObstacleDemo,
    /// Three-mass chain with a nonlinear damper; inputs enter as `d`.
    SpringChainDemo,
    /// `A x + b + d`.
    Affine,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: Option<TimeDomain>,
    pub dynamics: Option<Dynamics>,
    pub dim: Option<usize>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub lipschitz: Option<f64>,
    pub variance_proxy: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub gain: Option<f64>,
    pub goal: Option<Vec<f64>>,
    pub masses: Option<[f64; 3]>,
    pub stiffness: Option<f64>,
    pub damping: Option<f64>,
    pub damping_nonlinear: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Isotropic,
    Gaussian,
    UniformBox,
    TruncatedGaussian,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub sigma: Option<f64>,
    pub variance: Option<f64>,
    pub half_width: Option<f64>,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeSetKind {
    Interval,
    Box,
    Constraints,
    Obstacles,
    SpringChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetConfig {
    pub kind: SafeSetKind,
    pub radius: Option<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub constraints: Option<Vec<Constraint>>,
    /// `[x, y, radius]` per obstacle; defaults to the demo obstacles.
    pub obstacles: Option<Vec<[f64; 3]>>,
    /// Coordinates the obstacles live in (default `[0, 1]`).
    pub indices: Option<Vec<usize>>,
    /// Spring-chain gap and velocity limits (default 1.2 and 2).
    pub min_gap: Option<f64>,
    pub max_velocity: Option<f64>,
}

/// `"auto"`, a number for `ε`, or a table `{ eps1, eps2 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Keyword(String),
    Value(f64),
    Overrides { eps1: f64, eps2: f64 },
}

/// `"auto"`, `"none"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Keyword(String),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub delta: f64,
    pub horizon: f64,
    pub epsilon: Option<EpsilonSpec>,
    pub split: Option<SplitSpec>,
    /// Uniform grid size for continuous time (default 201).
    pub grid_points: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub method: Option<TubeMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub center: Vec<f64>,
    #[serde(default)]
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub nominal: Option<Vec<f64>>,
    #[serde(default)]
    pub radius_d: f64,
    pub lipschitz_d: Option<f64>,
    pub switch_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_traj: usize,
    pub seed: u64,
    pub step_dt: f64,
    pub record_stride: usize,
    pub mc_validate: bool,
    pub mc_trajectories: Option<usize>,
    pub falsify_samples: usize,
    pub grid_refinement: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_traj: 1000,
            seed: 0,
            step_dt: 1e-3,
            record_stride: 1,
            mc_validate: false,
            mc_trajectories: None,
            falsify_samples: 0,
            grid_refinement: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Delta,
    SplitDt,
    Epsilon,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    #[serde(default)]
    pub log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    pub values: Option<Vec<f64>>,
    pub range: Option<SweepRange>,
    /// Evaluation times; defaults to the tube grid.
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub noise: Option<NoiseConfig>,
    pub safe_set: Option<SafeSetConfig>,
    pub tube: TubeConfig,
    pub initial: Option<InitialConfig>,
    pub disturbance: Option<DisturbanceConfig>,
    #[serde(default)]
    pub run: RunConfig,
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn need(v: Option<f64>, key: &str) -> Result<f64> {
    v.ok_or_else(|| cfg_err(format!("system.{key} is required for this system")))
}

fn positive(v: f64, key: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(cfg_err(format!("{key} must be positive and finite, got {v}")))
    }
}

fn reject_keys(cfg: &SystemConfig, allowed: &[&str]) -> Result<()> {
    let present = [
        ("dim", cfg.dim.is_some()),
        ("c", cfg.c.is_some()),
        ("sigma", cfg.sigma.is_some()),
        ("lipschitz", cfg.lipschitz.is_some()),
        ("variance_proxy", cfg.variance_proxy.is_some()),
        ("a", cfg.a.is_some()),
        ("b", cfg.b.is_some()),
        ("gain", cfg.gain.is_some()),
        ("goal", cfg.goal.is_some()),
        ("masses", cfg.masses.is_some()),
        ("stiffness", cfg.stiffness.is_some()),
        ("damping", cfg.damping.is_some()),
        ("damping_nonlinear", cfg.damping_nonlinear.is_some()),
        ("step", cfg.step.is_some()),
    ];
    for (k, set) in present {
        if set && !allowed.contains(&k) {
            return Err(cfg_err(format!("system.{k} does not apply to this system")));
        }
    }
    Ok(())
}

/// Planar point `ẋ = -k (x - goal) + d` with `c = -k`.
pub fn planar_obstacle_system(gain: f64, goal: [f64; 2], sigma: f64) -> Result<CtSystemBounds> {
    Ok(CtSystemBounds::new(2, -gain, sigma)?.with_drift(move |x, d, _, out| {
        for i in 0..2 {
            out[i] = -gain * (x[i] - goal[i]) + if d.len() == 2 { d[i] } else { 0.0 };
        }
    }))
}

/// The demo safe set: the plane minus the demo obstacles.
pub fn planar_obstacle_set() -> Result<SafeSet> {
    obstacle_set(&DEMO_OBSTACLES, &[0, 1], 2)
}

fn obstacle_set(obstacles: &[[f64; 3]], indices: &[usize], dim: usize) -> Result<SafeSet> {
    let cs = obstacles
        .iter()
        .map(|o| Constraint::disk_complement(indices.to_vec(), vec![o[0], o[1]], o[2]))
        .collect::<Result<Vec<_>>>()?;
    SafeSet::new(dim, "plane minus obstacles", cs)
}

/// Parameters of the three-mass chain `x⁺ = x + η F(x, u)` with state
/// `(p₁, p₂, p₃, v₁, v₂, v₃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringChain {
    pub masses: [f64; 3],
    pub stiffness: f64,
    pub damping: f64,
    pub damping_nonlinear: f64,
    pub step: f64,
}

impl Default for SpringChain {
    fn default() -> Self {
        Self {
            masses: [1.0, 1.0, 1.0],
            stiffness: 1.0,
            damping: 1.0,
            damping_nonlinear: 1.0,
            step: 0.1,
        }
    }
}

impl SpringChain {
    pub fn step_map(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let [m1, m2, m3] = self.masses;
        let (k, b1, b2, h) = (self.stiffness, self.damping, self.damping_nonlinear, self.step);
        let (p, v) = (&x[..3], &x[3..]);
        let ui = |i: usize| if u.len() == 3 { u[i] } else { 0.0 };
        let a1 = (k * (p[1] - p[0]) + b1 * (v[1] - v[0]) - (b2 * v[0]).tanh()) / m1 + ui(0);
        let a2 = (k * (p[2] - p[1]) + b1 * (v[2] - v[1]) - (b2 * v[1]).tanh()) / m2 + ui(1);
        let a3 = -(k * p[2] + b1 * v[2] + (b2 * v[2]).tanh()) / m3 + ui(2);
        for i in 0..3 {
            out[i] = p[i] + h * v[i];
        }
        out[3] = v[0] + h * a1;
        out[4] = v[1] + h * a2;
        out[5] = v[2] + h * a3;
    }

    fn jacobian(&self, s: [f64; 3]) -> DMatrix<f64> {
        let [m1, m2, m3] = self.masses;
        let (k, b1, b2, h) = (self.stiffness, self.damping, self.damping_nonlinear, self.step);
        let mut j = DMatrix::<f64>::zeros(6, 6);
        for i in 0..3 {
            j[(i, 3 + i)] = 1.0;
        }
        j[(3, 0)] = -k / m1;
        j[(3, 1)] = k / m1;
        j[(3, 3)] = -(b1 + b2 * s[0]) / m1;
        j[(3, 4)] = b1 / m1;
        j[(4, 1)] = -k / m2;
        j[(4, 2)] = k / m2;
        j[(4, 4)] = -(b1 + b2 * s[1]) / m2;
        j[(4, 5)] = b1 / m2;
        j[(5, 2)] = -k / m3;
        j[(5, 5)] = -(b1 + b2 * s[2]) / m3;
        DMatrix::identity(6, 6) + j * h
    }

    /// Global Lipschitz constant in ℓ₂. The Jacobian is affine in the
    /// damper slopes `s ∈ [0, 1]³`, so the spectral norm peaks at a vertex.
    pub fn lipschitz(&self) -> f64 {
        let mut best = 0.0f64;
        for mask in 0..8u32 {
            let s = [0, 1, 2].map(|i| f64::from((mask >> i) & 1));
            best = best.max(spectral_norm(&self.jacobian(s)));
        }
        best
    }

    /// Constant input keeping the chain at rest at `positions`.
    pub fn equilibrium_input(&self, positions: [f64; 3]) -> [f64; 3] {
        let [m1, m2, m3] = self.masses;
        let k = self.stiffness;
        [
            -k * (positions[1] - positions[0]) / m1,
            -k * (positions[2] - positions[1]) / m2,
            k * positions[2] / m3,
        ]
    }

    pub fn system(&self, lipschitz: Option<f64>, variance_proxy: f64) -> Result<DtSystemBounds> {
        let chain = *self;
        let l = lipschitz.unwrap_or_else(|| self.lipschitz());
        Ok(DtSystemBounds::new(6, l, variance_proxy)?.with_map(move |x, u, _, out| chain.step_map(x, u, out)))
    }

    /// `p₁ ≥ g`, `p₂ - p₁ ≥ g`, `p₃ - p₂ ≥ g`, `v₃ ≤ v_max`.
    pub fn safe_set(min_gap: f64, max_velocity: f64) -> Result<SafeSet> {
        SafeSet::new(
            6,
            "spring chain limits",
            vec![
                Constraint::lower_bound(6, 0, min_gap)?,
                Constraint::difference_lower_bound(6, 1, 0, min_gap)?,
                Constraint::difference_lower_bound(6, 2, 1, min_gap)?,
                Constraint::upper_bound(6, 5, max_velocity)?,
            ],
        )
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(cfg_err(format!("{key} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Affine drift `A x + b + d`; `c` defaults to the largest eigenvalue of
/// the symmetric part of `A` and may only be raised.
pub fn affine_ct_system(a: &[Vec<f64>], b: &[f64], c: Option<f64>, sigma: f64) -> Result<CtSystemBounds> {
    let am = matrix(a, "system.a")?;
    let n = am.nrows();
    if b.len() != n {
        return Err(cfg_err(format!("system.b has length {} but A is {n}×{n}", b.len())));
    }
    let sym = (&am + am.transpose()) * 0.5;
    let mu = SymmetricEigen::new(sym).eigenvalues.max();
    let c = match c {
        Some(c) if c < mu - 1e-12 * mu.abs().max(1.0) => {
            return Err(cfg_err(format!(
                "system.c = {c} is below the matrix measure {mu} of A"
            )))
        }
        Some(c) => c,
        None => mu,
    };
    let b = b.to_vec();
    Ok(CtSystemBounds::new(n, c, sigma)?.with_drift(move |x, d, _, out| {
        for i in 0..n {
            let mut s = b[i] + if d.len() == n { d[i] } else { 0.0 };
            for j in 0..n {
                s += am[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }))
}

/// Affine map `A x + b + d`; `L` defaults to `‖A‖₂` and may only be raised.
pub fn affine_dt_system(a: &[Vec<f64>], b: &[f64], lipschitz: Option<f64>, variance_proxy: f64) -> Result<DtSystemBounds> {
    let am = matrix(a, "system.a")?;
    let n = am.nrows();
    if b.len() != n {
        return Err(cfg_err(format!("system.b has length {} but A is {n}×{n}", b.len())));
    }
    let norm = spectral_norm(&am);
    let l = match lipschitz {
        Some(l) if l < norm * (1.0 - 1e-12) => {
            return Err(cfg_err(format!("system.lipschitz = {l} is below ‖A‖₂ = {norm}")))
        }
        Some(l) => l,
        None => norm,
    };
    let b = b.to_vec();
    Ok(DtSystemBounds::new(n, l, variance_proxy)?.with_map(move |x, d, _, out| {
        for i in 0..n {
            let mut s = b[i] + if d.len() == n { d[i] } else { 0.0 };
            for j in 0..n {
                s += am[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }))
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: System,
    pub noise: NoiseModel,
    pub safe_set: Option<SafeSet>,
    pub query: TubeQuery,
    pub initial: ReachBall,
    pub nominal_disturbance: DisturbanceSignal,
    pub dist_bound: DisturbanceBound,
    pub disturbance_domain: Option<DisturbanceDomain>,
    pub switch_dt: Option<f64>,
    pub run: RunConfig,
    pub sweep: Option<SweepConfig>,
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let s = &cfg.system;
        let dynamics = s.dynamics.unwrap_or(Dynamics::ScalarLinear);
        let kind = match (s.kind, dynamics) {
            (Some(k), _) => k,
            (None, Dynamics::PlanarObstacleDemo) => TimeDomain::Ct,
            (None, Dynamics::SpringChainDemo) => TimeDomain::Dt,
            (None, _) => return Err(cfg_err("system.kind must be \"ct\" or \"dt\"")),
        };
        let mut chain = None;
        let system = match (kind, dynamics) {
            (TimeDomain::Ct, Dynamics::ScalarLinear) => {
                reject_keys(s, &["dim", "c", "sigma"])?;
                System::Ct(CtSystemBounds::linear(
                    s.dim.unwrap_or(1),
                    need(s.c, "c")?,
                    positive(need(s.sigma, "sigma")?, "system.sigma")?,
                )?)
            }
            (TimeDomain::Dt, Dynamics::ScalarLinear) => {
                reject_keys(s, &["dim", "lipschitz", "variance_proxy"])?;
                System::Dt(DtSystemBounds::new(
                    s.dim.unwrap_or(1),
                    need(s.lipschitz, "lipschitz")?,
                    positive(need(s.variance_proxy, "variance_proxy")?, "system.variance_proxy")?,
                )?)
            }
            (TimeDomain::Ct, Dynamics::PlanarObstacleDemo) => {
                reject_keys(s, &["gain", "goal", "sigma"])?;
                let goal = match &s.goal {
                    Some(g) if g.len() == 2 => [g[0], g[1]],
                    Some(_) => return Err(cfg_err("system.goal must have two entries")),
                    None => [0.5, 0.0],
                };
                System::Ct(planar_obstacle_system(
                    positive(s.gain.unwrap_or(1.0), "system.gain")?,
                    goal,
                    positive(s.sigma.unwrap_or(0.02), "system.sigma")?,
                )?)
            }
            (TimeDomain::Dt, Dynamics::SpringChainDemo) => {
                reject_keys(
                    s,
                    &["masses", "stiffness", "damping", "damping_nonlinear", "step", "lipschitz", "variance_proxy"],
                )?;
                let d = SpringChain::default();
                let c = SpringChain {
                    masses: s.masses.unwrap_or(d.masses),
                    stiffness: s.stiffness.unwrap_or(d.stiffness),
                    damping: s.damping.unwrap_or(d.damping),
                    damping_nonlinear: s.damping_nonlinear.unwrap_or(d.damping_nonlinear),
                    step: positive(s.step.unwrap_or(d.step), "system.step")?,
                };
                if c.masses.iter().any(|m| !(*m > 0.0)) {
                    return Err(cfg_err("system.masses must be positive"));
                }
                if let Some(l) = s.lipschitz {
                    let auto = c.lipschitz();
                    if l < auto * (1.0 - 1e-12) {
                        return Err(cfg_err(format!("system.lipschitz = {l} is below the chain's constant {auto}")));
                    }
                }
                chain = Some(c);
                System::Dt(c.system(s.lipschitz, positive(s.variance_proxy.unwrap_or(1e-5), "system.variance_proxy")?)?)
            }
            (TimeDomain::Ct, Dynamics::Affine) => {
                reject_keys(s, &["a", "b", "c", "sigma"])?;
                let a = s.a.as_ref().ok_or_else(|| cfg_err("system.a is required for affine dynamics"))?;
                let b = s.b.clone().unwrap_or_else(|| vec![0.0; a.len()]);
                System::Ct(affine_ct_system(a, &b, s.c, positive(need(s.sigma, "sigma")?, "system.sigma")?)?)
            }
            (TimeDomain::Dt, Dynamics::Affine) => {
                reject_keys(s, &["a", "b", "lipschitz", "variance_proxy"])?;
                let a = s.a.as_ref().ok_or_else(|| cfg_err("system.a is required for affine dynamics"))?;
                let b = s.b.clone().unwrap_or_else(|| vec![0.0; a.len()]);
                System::Dt(affine_dt_system(
                    a,
                    &b,
                    s.lipschitz,
                    positive(need(s.variance_proxy, "variance_proxy")?, "system.variance_proxy")?,
                )?)
            }
            (k, d) => return Err(cfg_err(format!("dynamics {d:?} is not available for kind {k:?}"))),
        };
        let noise = build_noise(cfg.noise.as_ref(), &system)?;
        let safe_set = cfg
            .safe_set
            .as_ref()
            .map(|c| build_safe_set(c, system.dim()))
            .transpose()?;
        let query = build_query(&cfg.tube, &system)?;

        let n = system.dim();
        let initial = match (&cfg.initial, dynamics) {
            (Some(i), _) => {
                if i.center.len() != n {
                    return Err(cfg_err(format!("initial.center has length {} but the state has {n}", i.center.len())));
                }
                ReachBall::new(i.center.clone(), i.radius).map_err(|e| cfg_err(format!("initial.radius: {e}")))?
            }
            (None, Dynamics::PlanarObstacleDemo) => ReachBall::new(vec![5.0, 5.0], 0.1)?,
            (None, Dynamics::SpringChainDemo) => ReachBall::point(vec![3.0, 5.0, 7.0, 0.0, 0.0, 0.0]),
            (None, _) => ReachBall::point(vec![0.0; n]),
        };

        let dcfg = cfg.disturbance.clone().unwrap_or_default();
        let nominal = match (&dcfg.nominal, chain) {
            (Some(v), _) => v.clone(),
            (None, Some(c)) => {
                let p = &initial.center;
                c.equilibrium_input([p[0], p[1], p[2]]).to_vec()
            }
            (None, None) => Vec::new(),
        };
        if dcfg.radius_d < 0.0 {
            return Err(cfg_err("disturbance.radius_d must be ≥ 0"));
        }
        let lipschitz_d = dcfg.lipschitz_d.unwrap_or(match chain {
            Some(c) => c.step,
            None => 1.0,
        });
        let (dist_bound, domain) = if dcfg.radius_d > 0.0 {
            if nominal.is_empty() {
                return Err(cfg_err("disturbance.nominal is required when radius_d > 0"));
            }
            (
                DisturbanceBound {
                    lipschitz_d,
                    radius_d: dcfg.radius_d,
                },
                Some(DisturbanceDomain {
                    nominal: nominal.clone(),
                    radius: dcfg.radius_d,
                }),
            )
        } else {
            (DisturbanceBound::default(), None)
        };
        let nominal_disturbance = if nominal.is_empty() {
            DisturbanceSignal::zero()
        } else {
            DisturbanceSignal::Constant(nominal)
        };
        let run = cfg.run.clone();
        if run.n_traj == 0 {
            return Err(cfg_err("run.n_traj must be at least 1"));
        }
        positive(run.step_dt, "run.step_dt")?;
        Ok(Self {
            system,
            noise,
            safe_set,
            query,
            initial,
            nominal_disturbance,
            dist_bound,
            disturbance_domain: domain,
            switch_dt: dcfg.switch_dt,
            run,
            sweep: cfg.sweep.clone(),
        })
    }

    pub fn scenario(&self) -> Scenario {
        let ball = &self.initial;
        match &self.disturbance_domain {
            None if ball.radius == 0.0 => Scenario::fixed(ball.center.clone(), self.nominal_disturbance.clone()),
            None => {
                let (center, radius, dist) = (ball.center.clone(), ball.radius, self.nominal_disturbance.clone());
                Scenario::Sampled(Arc::new(move |_, rng| {
                    let mut x0 = vec![0.0; center.len()];
                    crate::rng::uniform_ball(rng, &center, radius, &mut x0);
                    (x0, dist.clone())
                }))
            }
            Some(dom) => Scenario::sampled_ball(
                ball.center.clone(),
                ball.radius,
                dom.clone(),
                self.query.horizon,
                self.switch_dt.unwrap_or(self.query.horizon / 20.0),
            ),
        }
    }

    pub fn safety_problem(&self) -> Result<SafetyProblem> {
        let set = self
            .safe_set
            .clone()
            .ok_or_else(|| cfg_err("a [safe_set] block is required for verification"))?;
        Ok(SafetyProblem::new(
            self.system.clone(),
            self.noise.clone(),
            self.initial.clone(),
            set,
            self.query.clone(),
        )
        .with_disturbance(
            self.dist_bound,
            self.nominal_disturbance.clone(),
            self.disturbance_domain.clone(),
        ))
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            mc_validate: self.run.mc_validate,
            mc_trajectories: self.run.mc_trajectories,
            falsify_samples: self.run.falsify_samples,
            seed: self.run.seed,
            step_dt: self.run.step_dt,
            grid_refinement: self.run.grid_refinement.max(1),
            switch_dt: self.switch_dt,
        }
    }

    pub fn simulate(&self) -> Result<TrajectoryEnsemble> {
        let cfg = EnsembleConfig::new(self.run.n_traj, self.run.seed, self.query.horizon, self.run.step_dt)
            .with_record_stride(self.run.record_stride);
        let sc = self.scenario();
        match (&self.system, &self.noise) {
            (System::Ct(s), NoiseModel::Ct(n)) => simulate_ensemble_ct(s, n, &sc, &cfg, self.safe_set.as_ref()),
            (System::Dt(s), NoiseModel::Dt(n)) => simulate_ensemble_dt(s, n, &sc, &cfg, self.safe_set.as_ref()),
            _ => Err(cfg_err("noise block does not match the system kind")),
        }
    }
}

fn build_noise(cfg: Option<&NoiseConfig>, sys: &System) -> Result<NoiseModel> {
    match sys {
        System::Ct(s) => {
            let noise = match cfg {
                None => CtNoise::isotropic(s.dim, s.sigma),
                Some(c) => match c.kind {
                    NoiseKind::Isotropic => {
                        let sigma = c.sigma.unwrap_or(s.sigma);
                        if !(sigma >= 0.0) || sigma > s.sigma * (1.0 + 1e-12) {
                            return Err(cfg_err(format!(
                                "noise.sigma = {sigma} must lie in [0, system.sigma = {}]",
                                s.sigma
                            )));
                        }
                        CtNoise::isotropic(s.dim, sigma)
                    }
                    NoiseKind::Zero => CtNoise::zero(s.dim),
                    k => return Err(cfg_err(format!("noise kind {k:?} is for discrete-time systems"))),
                },
            };
            Ok(NoiseModel::Ct(noise))
        }
        System::Dt(s) => {
            let noise = match cfg {
                None => DtNoise::Gaussian {
                    variance: s.variance_proxy,
                },
                Some(c) => {
                    let get = |v: Option<f64>, k: &str| v.ok_or_else(|| cfg_err(format!("noise.{k} is required")));
                    match c.kind {
                        NoiseKind::Gaussian => DtNoise::Gaussian {
                            variance: c.variance.unwrap_or(s.variance_proxy),
                        },
                        NoiseKind::UniformBox => DtNoise::UniformBox {
                            half_width: get(c.half_width, "half_width")?,
                        },
                        NoiseKind::TruncatedGaussian => DtNoise::TruncatedGaussian {
                            variance: c.variance.unwrap_or(s.variance_proxy),
                            bound: get(c.bound, "bound")?,
                        },
                        NoiseKind::Zero => DtNoise::Zero,
                        NoiseKind::Isotropic => {
                            return Err(cfg_err("noise kind isotropic is for continuous-time systems"))
                        }
                    }
                }
            };
            noise.validate().map_err(|e| cfg_err(format!("noise: {e}")))?;
            if noise.proxy() > s.variance_proxy * (1.0 + 1e-12) {
                return Err(cfg_err(format!(
                    "noise variance proxy {} exceeds system.variance_proxy = {}",
                    noise.proxy(),
                    s.variance_proxy
                )));
            }
            Ok(NoiseModel::Dt(noise))
        }
    }
}

fn build_safe_set(cfg: &SafeSetConfig, dim: usize) -> Result<SafeSet> {
    let set = match cfg.kind {
        SafeSetKind::Interval => {
            if dim != 1 {
                return Err(cfg_err("safe_set kind interval needs a scalar system"));
            }
            SafeSet::interval(cfg.radius.ok_or_else(|| cfg_err("safe_set.radius is required"))?)?
        }
        SafeSetKind::Box => SafeSet::boxed(
            cfg.lower.as_deref().ok_or_else(|| cfg_err("safe_set.lower is required"))?,
            cfg.upper.as_deref().ok_or_else(|| cfg_err("safe_set.upper is required"))?,
        )?,
        SafeSetKind::Constraints => {
            let cs = cfg
                .constraints
                .as_ref()
                .ok_or_else(|| cfg_err("safe_set.constraints is required"))?
                .iter()
                .map(|c| match c {
                    Constraint::HalfSpace { normal, offset } => Constraint::half_space(normal.clone(), *offset),
                    Constraint::DiskComplement { indices, center, radius } => {
                        Constraint::disk_complement(indices.clone(), center.clone(), *radius)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            SafeSet::new(dim, "constraints", cs)?
        }
        SafeSetKind::Obstacles => {
            let obs = cfg.obstacles.clone().unwrap_or_else(|| DEMO_OBSTACLES.to_vec());
            let idx = cfg.indices.clone().unwrap_or_else(|| vec![0, 1]);
            obstacle_set(&obs, &idx, dim)?
        }
        SafeSetKind::SpringChain => {
            if dim != 6 {
                return Err(cfg_err("safe_set kind spring_chain needs the six-state chain"));
            }
            SpringChain::safe_set(cfg.min_gap.unwrap_or(1.2), cfg.max_velocity.unwrap_or(2.0))?
        }
    };
    if set.dim != dim {
        return Err(cfg_err(format!("safe_set has dimension {} but the state has {dim}", set.dim)));
    }
    Ok(set)
}

fn epsilon_choice(spec: Option<&EpsilonSpec>) -> Result<EpsilonChoice> {
    Ok(match spec {
        None => EpsilonChoice::Auto,
        Some(EpsilonSpec::Keyword(k)) if k == "auto" => EpsilonChoice::Auto,
        Some(EpsilonSpec::Keyword(k)) => return Err(cfg_err(format!("tube.epsilon: unknown keyword {k:?}"))),
        Some(EpsilonSpec::Value(v)) => EpsilonChoice::Fixed(*v),
        Some(EpsilonSpec::Overrides { eps1, eps2 }) => EpsilonChoice::Overrides {
            eps1: *eps1,
            eps2: *eps2,
        },
    })
}

fn split_choice(spec: Option<&SplitSpec>) -> Result<SplitChoice> {
    Ok(match spec {
        None => SplitChoice::Auto,
        Some(SplitSpec::Keyword(k)) if k == "auto" => SplitChoice::Auto,
        Some(SplitSpec::Keyword(k)) if k == "none" => SplitChoice::None,
        Some(SplitSpec::Keyword(k)) => return Err(cfg_err(format!("tube.split: unknown keyword {k:?}"))),
        Some(SplitSpec::Value(v)) => SplitChoice::Fixed(*v),
    })
}

fn build_query(cfg: &TubeConfig, sys: &System) -> Result<TubeQuery> {
    let mut q = TubeQuery::new(cfg.delta, cfg.horizon)
        .with_epsilon(epsilon_choice(cfg.epsilon.as_ref())?)
        .with_split(split_choice(cfg.split.as_ref())?);
    q.method = cfg.method;
    q = match (&cfg.grid, sys.is_dt()) {
        (Some(g), _) => q.with_grid(g.clone()),
        (None, true) => q.with_integer_grid(),
        (None, false) => q.with_uniform_grid(cfg.grid_points.unwrap_or(201)),
    };
    q.validate(sys.is_dt()).map_err(|e| cfg_err(format!("tube: {e}")))?;
    Ok(q)
}

/// Result of one command: exit code, human summary and files written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| Error::Io(format!("cannot write {}: {e}", p.display())))?;
    files.push(p);
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Bumped whenever a CSV header or column meaning changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

fn curve_meta(curve: &TubeCurve) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "csv_schema: {CSV_SCHEMA_VERSION}");
    let _ = writeln!(s, "method: {}", curve.method);
    let _ = writeln!(s, "delta: {}", curve.query.delta);
    let _ = writeln!(s, "horizon: {}", curve.query.horizon);
    match curve.eps.epsilon {
        Some(e) => {
            let _ = writeln!(s, "epsilon: {e}");
        }
        None => {
            let _ = writeln!(s, "epsilon: overridden");
        }
    }
    let _ = writeln!(s, "eps1: {}", curve.eps.eps1);
    let _ = writeln!(s, "eps2: {}", curve.eps.eps2);
    match curve.split_dt {
        Some(dt) => {
            let _ = writeln!(s, "split_dt: {dt}");
        }
        None => {
            let _ = writeln!(s, "split_dt: none");
        }
    }
    let _ = writeln!(s, "sup_radius: {}", curve.sup());
    s
}

/// `tube.csv` with `t,r_t` and `tube_meta.txt` with the resolved choices.
pub fn cmd_tube(exp: &Experiment, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let curve = select_radius(&exp.system, &exp.query)?;
    let mut csv = String::from("t,r_t\n");
    for (t, r) in curve.times.iter().zip(&curve.radii) {
        let _ = writeln!(csv, "{},{}", fmt_sig17(*t), fmt_sig17(*r));
    }
    let meta = curve_meta(&curve);
    let mut files = Vec::new();
    write_file(out, "tube.csv", &csv, &mut files)?;
    write_file(out, "tube_meta.txt", &meta, &mut files)?;
    Ok(Outcome {
        exit_code: EXIT_OK,
        summary: meta,
        files,
    })
}

/// Simulates the ensemble, compares it with the tube on the simulation grid
/// and writes `exceedance.csv`, `deviation_summary.csv` and `verdict.txt`.
pub fn cmd_simulate(exp: &Experiment, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let base = select_radius(&exp.system, &exp.query)?;
    let ens = exp.simulate()?;
    let curve = resample_curve(&exp.system, &base, &ens.times)?;
    let stats = deviation_stats(&ens, &curve)?;
    let w = ens.times.len();
    let mut summary_csv = String::from("t,r_t,mean_dev,q50_dev,q99_dev,max_dev\n");
    let mut col = vec![0.0; ens.n_traj];
    for j in 0..w {
        for (i, c) in col.iter_mut().enumerate() {
            *c = ens.deviations[i * w + j];
        }
        let _ = writeln!(
            summary_csv,
            "{},{},{},{},{},{}",
            fmt_sig17(ens.times[j]),
            fmt_sig17(curve.radii[j]),
            fmt_sig17(kahan_sum(col.iter().copied()) / ens.n_traj as f64),
            fmt_sig17(empirical_quantile(&col, 0.5)),
            fmt_sig17(empirical_quantile(&col, 0.99)),
            fmt_sig17(col.iter().copied().fold(0.0, f64::max)),
        );
    }
    let mut verdict = stats.verdict_line();
    verdict.push('\n');
    let _ = writeln!(verdict, "method: {}", curve.method);
    let _ = writeln!(verdict, "sup_ratio_quantile: {}", stats.empirical_sup_quantile);
    if let Some(k) = ens.unsafe_count() {
        let _ = writeln!(verdict, "left_safe_set: {k} / {}", ens.n_traj);
    }
    let mut files = Vec::new();
    write_file(out, "exceedance.csv", &stats.exceedance_csv(), &mut files)?;
    write_file(out, "deviation_summary.csv", &summary_csv, &mut files)?;
    write_file(out, "verdict.txt", &verdict, &mut files)?;
    Ok(Outcome {
        exit_code: if stats.consistent_with_delta() {
            EXIT_OK
        } else {
            EXIT_NOT_ESTABLISHED
        },
        summary: verdict,
        files,
    })
}

/// Writes `report.json`, `report.txt` and `margins.csv`.
pub fn cmd_verify(exp: &Experiment, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let report = verify_safety(&exp.safety_problem()?, &exp.verify_options())?;
    let text = report.to_text();
    let mut files = Vec::new();
    write_file(out, "report.json", &report.to_json()?, &mut files)?;
    write_file(out, "report.txt", &text, &mut files)?;
    write_file(out, "margins.csv", &report.margins_csv(), &mut files)?;
    let mc_ok = report
        .monte_carlo
        .as_ref()
        .is_none_or(|mc| mc.consistent_with_delta(report.delta));
    Ok(Outcome {
        exit_code: if report.verdict == Verdict::SafeWithGuarantee && mc_ok {
            EXIT_OK
        } else {
            EXIT_NOT_ESTABLISHED
        },
        summary: text,
        files,
    })
}

fn sweep_values(cfg: &SweepConfig) -> Result<Vec<f64>> {
    match (&cfg.values, &cfg.range) {
        (Some(v), None) if !v.is_empty() => Ok(v.clone()),
        (None, Some(r)) => {
            if r.points < 2 {
                return Err(cfg_err("sweep.range.points must be at least 2"));
            }
            if r.log && !(r.from > 0.0 && r.to > 0.0) {
                return Err(cfg_err("a log sweep needs positive endpoints"));
            }
            Ok((0..r.points)
                .map(|i| {
                    let f = i as f64 / (r.points - 1) as f64;
                    let v = if r.log {
                        (r.from.ln() + f * (r.to.ln() - r.from.ln())).exp()
                    } else {
                        r.from + f * (r.to - r.from)
                    };
                    // Integer-valued sweeps (DT steps) must land exactly on integers.
                    let k = v.round();
                    if (v - k).abs() <= 1e-9 * k.abs().max(1.0) {
                        k
                    } else {
                        v
                    }
                })
                .collect())
        }
        _ => Err(cfg_err("sweep needs exactly one of `values` or `range`")),
    }
}

/// Long-format sweep: `sweep.csv` holds one row per (value, t); `sweep_argmin.csv`
/// holds, per evaluation time, the value with the smallest radius.
pub fn cmd_sweep(exp: &Experiment, out: &Path) -> Result<Outcome> {
    ensure_dir(out)?;
    let sweep = exp.sweep.as_ref().ok_or_else(|| cfg_err("a [sweep] block is required"))?;
    let values = sweep_values(sweep)?;
    let dt = exp.system.is_dt();
    let mut csv = String::from("param,value,t,r_t,method,eps1,eps2,split_dt\n");
    let mut best: Vec<(f64, f64, f64)> = Vec::new();
    for &v in &values {
        let mut q = exp.query.clone();
        match sweep.param {
            SweepParam::Delta => q.delta = v,
            SweepParam::SplitDt => q.split = SplitChoice::Fixed(v),
            SweepParam::Epsilon => q.epsilon = EpsilonChoice::Fixed(v),
            SweepParam::Horizon => {
                q.horizon = v;
                q = if dt {
                    q.with_integer_grid()
                } else {
                    q.with_uniform_grid(exp.query.time_grid.len())
                };
            }
        }
        if let Some(ts) = &sweep.times {
            q.time_grid = ts.iter().copied().filter(|&t| t <= q.horizon).collect();
        }
        q.validate(dt).map_err(|e| cfg_err(format!("sweep value {v}: {e}")))?;
        let curve = select_radius(&exp.system, &q)?;
        for (j, (t, r)) in curve.times.iter().zip(&curve.radii).enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                sweep_name(sweep.param),
                fmt_sig17(v),
                fmt_sig17(*t),
                fmt_sig17(*r),
                curve.method,
                fmt_sig17(curve.eps.eps1),
                fmt_sig17(curve.eps.eps2),
                curve.split_dt.map_or_else(|| "none".to_string(), fmt_sig17),
            );
            match best.iter_mut().find(|b| b.0 == *t) {
                Some(b) if *r < b.2 => *b = (*t, v, *r),
                Some(_) => {}
                None if j < curve.len() => best.push((*t, v, *r)),
                None => {}
            }
        }
    }
    best.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut argmin = format!("t,argmin_{},min_r_t\n", sweep_name(sweep.param));
    for (t, v, r) in &best {
        let _ = writeln!(argmin, "{},{},{}", fmt_sig17(*t), fmt_sig17(*v), fmt_sig17(*r));
    }
    let mut files = Vec::new();
    write_file(out, "sweep.csv", &csv, &mut files)?;
    write_file(out, "sweep_argmin.csv", &argmin, &mut files)?;
    let summary = format!(
        "swept {} over {} values; argmin at the last time: {}\n",
        sweep_name(sweep.param),
        values.len(),
        best.last().map_or_else(|| "n/a".into(), |b| format!("{} (r = {})", b.1, b.2))
    );
    Ok(Outcome {
        exit_code: EXIT_OK,
        summary,
        files,
    })
}

fn sweep_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Delta => "delta",
        SweepParam::SplitDt => "split_dt",
        SweepParam::Epsilon => "epsilon",
        SweepParam::Horizon => "horizon",
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Overflow { .. } | Error::NonFinite { .. } => EXIT_NUMERIC,
        Error::InitialSetUnsafe { .. } => EXIT_NOT_ESTABLISHED,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "probtube", version, about = "Probabilistic tubes and safety verification for stochastic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radius curve r_t and the resolved tube parameters.
    Tube(CommonArgs),
    /// Monte-Carlo ensemble checked against the tube.
    Simulate(CommonArgs),
    /// Safety verification report.
    Verify(CommonArgs),
    /// Parameter sweep of the radius curve.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

type CommandFn = fn(&Experiment, &Path) -> Result<Outcome>;

/// Runs one parsed command and returns its outcome.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let (args, f): (&CommonArgs, CommandFn) = match &cli.command {
        Command::Tube(a) => (a, cmd_tube),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Verify(a) => (a, cmd_verify),
        Command::Sweep(a) => (a, cmd_sweep),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    let exp = Experiment::from_config(&cfg).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| cfg_err(format!("cannot build a {n}-thread pool: {e}")))?
            .install(|| f(&exp, &args.out)),
        None => f(&exp, &args.out),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(o) => {
            print!("{}", o.summary);
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
[system]
kind = "ct"
dynamics = "scalar_linear"
c = 1.0
sigma = 0.31622776601683794

[tube]
delta = 1e-3
horizon = 2.0
epsilon = 0.0625
grid_points = 21
"#;

    #[test]
    fn parses_scalar_config() {
        let cfg = ExperimentConfig::from_toml(SCALAR).unwrap();
        let exp = Experiment::from_config(&cfg).unwrap();
        assert_eq!(exp.query.time_grid.len(), 21);
        assert_eq!(exp.query.epsilon, EpsilonChoice::Fixed(0.0625));
        assert!(matches!(exp.noise, NoiseModel::Ct(_)));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = SCALAR.replace("c = 1.0", "c = 1.0\nbogus = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn inapplicable_keys_are_rejected() {
        let bad = SCALAR.replace("c = 1.0", "c = 1.0\ngain = 3.0");
        let err = Experiment::from_config(&ExperimentConfig::from_toml(&bad).unwrap()).unwrap_err();
        assert!(err.to_string().contains("gain"));
    }

    #[test]
    fn noise_above_bound_is_rejected() {
        let bad = format!("{SCALAR}\n[noise]\nkind = \"isotropic\"\nsigma = 1.0\n");
        assert!(Experiment::from_config(&ExperimentConfig::from_toml(&bad).unwrap()).is_err());
    }

    #[test]
    fn affine_measure_is_computed_and_checked() {
        let sys = affine_ct_system(&[vec![-1.0, 2.0], vec![0.0, -1.0]], &[0.0, 0.0], None, 0.1).unwrap();
        assert!((sys.c - 0.0).abs() < 1e-12);
        assert!(affine_ct_system(&[vec![-1.0, 2.0], vec![0.0, -1.0]], &[0.0, 0.0], Some(-0.5), 0.1).is_err());
        let dt = affine_dt_system(&[vec![0.5, 0.0], vec![0.0, 0.25]], &[1.0, 0.0], None, 0.01).unwrap();
        assert!((dt.lipschitz - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spring_chain_equilibrium_is_fixed_point() {
        let c = SpringChain::default();
        let x = [2.0, 3.5, 5.0, 0.0, 0.0, 0.0];
        let u = c.equilibrium_input([2.0, 3.5, 5.0]);
        let mut y = [0.0; 6];
        c.step_map(&x, &u, &mut y);
        for i in 0..6 {
            assert!((x[i] - y[i]).abs() < 1e-14);
        }
        let l = c.lipschitz();
        assert!((1.0..1.5).contains(&l), "{l}");
    }

    #[test]
    fn spring_chain_lipschitz_bounds_random_pairs() {
        use rand::Rng;
        let c = SpringChain::default();
        let l = c.lipschitz();
        let mut rng = crate::rng::stream(3, 0);
        let u = [0.3, -0.2, 0.1];
        for _ in 0..2000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (mut fx, mut fy) = ([0.0; 6], [0.0; 6]);
            c.step_map(&x, &u, &mut fx);
            c.step_map(&y, &u, &mut fy);
            let num: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(num <= l * den * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sweep_range_is_log_spaced() {
        let s = SweepConfig {
            param: SweepParam::Delta,
            values: None,
            range: Some(SweepRange {
                from: 1e-6,
                to: 1e-1,
                points: 6,
                log: true,
            }),
            times: None,
        };
        let v = sweep_values(&s).unwrap();
        assert!((v[1] / 1e-5 - 1.0).abs() < 1e-12);
        assert!((v[5] / 1e-1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code(&Error::NonFinite {
                t: 0.0,
                trajectory: 0
            }),
            EXIT_NUMERIC
        );
    }
}
