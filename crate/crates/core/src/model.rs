//! Domain types shared by every module: system bounds, the ε-constants of the
//! concentration bounds, tube queries and the radius curves they produce.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Drift `f(x, d, t)` of a continuous-time system, written into `out`.
pub type Drift = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;

/// Map `f(x, d, t)` of a discrete-time system, written into `out`.
pub type StepMap = Arc<dyn Fn(&[f64], &[f64], usize, &mut [f64]) + Send + Sync>;

/// Continuous-time system `dX = f(X, d, t) dt + g_t(X) dW` together with the
/// constants the tube bounds need: a matrix-measure bound `c` on `∂f/∂x` and
/// a diffusion bound `g gᵀ ⪯ σ² I`.
#[derive(Clone)]
pub struct CtSystemBounds {
    pub dim: usize,
    pub c: f64,
    pub sigma: f64,
    pub diffusion_cols: usize,
    drift: Drift,
}

impl CtSystemBounds {
    /// Bounds with a zero drift. Attach dynamics with [`Self::with_drift`].
    pub fn new(dim: usize, c: f64, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(domain("state dimension must be at least 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain(format!("sigma must be positive and finite, got {sigma}")));
        }
        if !c.is_finite() {
            return Err(domain(format!("c must be finite, got {c}")));
        }
        Ok(Self {
            dim,
            c,
            sigma,
            diffusion_cols: dim,
            drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        })
    }

    /// `f(x, d) = c·x + d` where `d` is added only when it has the state's
    /// dimension. The matrix measure of `∂f/∂x` is exactly `c`.
    pub fn linear(dim: usize, c: f64, sigma: f64) -> Result<Self> {
        Ok(Self::new(dim, c, sigma)?.with_drift(move |x, d, _, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = c * x[i] + if d.len() == x.len() { d[i] } else { 0.0 };
            }
        }))
    }

    pub fn with_drift<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion_cols(mut self, m: usize) -> Self {
        self.diffusion_cols = m.max(1);
        self
    }

    #[inline]
    pub fn drift(&self, x: &[f64], d: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, d, t, out)
    }

    pub fn is_contractive(&self) -> bool {
        self.c < 0.0
    }
}

impl fmt::Debug for CtSystemBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CtSystemBounds")
            .field("dim", &self.dim)
            .field("c", &self.c)
            .field("sigma", &self.sigma)
            .field("diffusion_cols", &self.diffusion_cols)
            .finish_non_exhaustive()
    }
}

/// Discrete-time system `X_{t+1} = f(X_t, d_t, t) + w_t` with Lipschitz
/// constant `L` and sub-Gaussian noise of variance proxy `ϑ²`.
#[derive(Clone)]
pub struct DtSystemBounds {
    pub dim: usize,
    pub lipschitz: f64,
    pub variance_proxy: f64,
    map: StepMap,
}

impl DtSystemBounds {
    /// Bounds with the linear map `x ↦ L·x (+ d when dimensions match)`.
    pub fn new(dim: usize, lipschitz: f64, variance_proxy: f64) -> Result<Self> {
        if dim == 0 {
            return Err(domain("state dimension must be at least 1"));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(domain(format!("Lipschitz constant must be ≥ 0, got {lipschitz}")));
        }
        if !(variance_proxy > 0.0 && variance_proxy.is_finite()) {
            return Err(domain(format!(
                "variance proxy must be positive, got {variance_proxy}"
            )));
        }
        let l = lipschitz;
        Ok(Self {
            dim,
            lipschitz,
            variance_proxy,
            map: Arc::new(move |x, d, _, out: &mut [f64]| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = l * x[i] + if d.len() == x.len() { d[i] } else { 0.0 };
                }
            }),
        })
    }

    pub fn with_map<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    {
        self.map = Arc::new(f);
        self
    }

    #[inline]
    pub fn step(&self, x: &[f64], d: &[f64], t: usize, out: &mut [f64]) {
        (self.map)(x, d, t, out)
    }

    /// Noise scale used by the tube formulas (`σ ≔ ϑ`).
    pub fn sigma(&self) -> f64 {
        self.variance_proxy.sqrt()
    }

    pub fn is_contractive(&self) -> bool {
        self.lipschitz < 1.0
    }
}

impl fmt::Debug for DtSystemBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DtSystemBounds")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("variance_proxy", &self.variance_proxy)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum System {
    Ct(CtSystemBounds),
    Dt(DtSystemBounds),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Ct(s) => s.dim,
            System::Dt(s) => s.dim,
        }
    }

    pub fn is_dt(&self) -> bool {
        matches!(self, System::Dt(_))
    }

    pub fn is_contractive(&self) -> bool {
        match self {
            System::Ct(s) => s.is_contractive(),
            System::Dt(s) => s.is_contractive(),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            System::Ct(s) => s.sigma,
            System::Dt(s) => s.sigma(),
        }
    }
}

/// The constants `ε₁ = log(1/(1-ε²))/ε²` and `ε₂ = 2/ε²`.
///
/// `epsilon` is `None` when the pair was supplied directly as overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonConstants {
    pub epsilon: Option<f64>,
    pub eps1: f64,
    pub eps2: f64,
}

impl EpsilonConstants {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(domain(format!("ε must lie in (0, 1), got {epsilon}")));
        }
        let e2 = epsilon * epsilon;
        Ok(Self {
            epsilon: Some(epsilon),
            eps1: -(-e2).ln_1p() / e2,
            eps2: 2.0 / e2,
        })
    }

    /// Use `ε₁`, `ε₂` as given instead of deriving them from a single ε.
    pub fn from_overrides(eps1: f64, eps2: f64) -> Result<Self> {
        if !(eps1 > 0.0 && eps2 > 0.0 && eps1.is_finite() && eps2.is_finite()) {
            return Err(domain(format!(
                "ε₁ and ε₂ overrides must be positive and finite, got ({eps1}, {eps2})"
            )));
        }
        Ok(Self {
            epsilon: None,
            eps1,
            eps2,
        })
    }

    /// `ε₁·n + ε₂·log_term`, the quantity under the square root of every
    /// radius formula.
    #[inline]
    pub fn objective(&self, n: usize, log_term: f64) -> f64 {
        self.eps1 * n as f64 + self.eps2 * log_term
    }
}

/// Search domain for [`optimize_epsilon`].
pub const EPSILON_LO: f64 = 1e-6;
pub const EPSILON_HI: f64 = 1.0 - 1e-9;

const EPSILON_REFERENCES: [f64; 5] = [0.01, 1.0 / 16.0, 0.5, 0.9, 0.99];

/// ε minimising `ε₁·n + ε₂·log(1/δ)`.
pub fn optimize_epsilon(n: usize, delta: f64) -> Result<EpsilonConstants> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(optimize_epsilon_for_log(n.max(1), (1.0 / delta).ln()))
}

/// ε minimising `ε₁·n + ε₂·log_term` for an arbitrary nonnegative log term.
pub fn optimize_epsilon_for_log(n: usize, log_term: f64) -> EpsilonConstants {
    let log_term = log_term.max(0.0);
    let objective = |e: f64| {
        EpsilonConstants::new(e)
            .map(|k| k.objective(n, log_term))
            .unwrap_or(f64::INFINITY)
    };

    // Bracket on a grid dense at both ends of (0, 1), then golden-section.
    let half = 200;
    let mut grid = Vec::with_capacity(2 * half);
    for i in 0..half {
        let s = i as f64 / (half - 1) as f64;
        grid.push(EPSILON_LO * (0.5 / EPSILON_LO).powf(s));
    }
    for i in (0..half).rev() {
        let s = i as f64 / (half - 1) as f64;
        grid.push(1.0 - (1.0 - EPSILON_HI) * (0.5 / (1.0 - EPSILON_HI)).powf(s));
    }
    grid.dedup();
    let values: Vec<f64> = grid.iter().map(|&e| objective(e)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let mut eps = golden_section(objective, lo, hi, 1e-14);
    if objective(grid[best]) < objective(eps) {
        eps = grid[best];
    }
    for r in EPSILON_REFERENCES {
        if objective(r) < objective(eps) {
            eps = r;
        }
    }
    EpsilonConstants::new(eps).expect("search domain lies inside (0, 1)")
}

/// Minimiser of a unimodal function on `[a, b]`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        c
    } else {
        d
    }
}

/// How ε is resolved for a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonChoice {
    Fixed(f64),
    Overrides { eps1: f64, eps2: f64 },
    Auto,
}

/// How the interval-splitting length Δt is resolved for contractive systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    /// No splitting: contractive systems fall back to the whole-horizon bound.
    None,
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMethod {
    /// Whole-horizon affine-martingale tube, continuous time.
    CtAm,
    /// Interval-splitting tube for `c < 0`.
    CtContractive,
    DtAm,
    DtContractive,
    /// Single-time state bound (not a trajectory-level tube).
    CtState,
    DtState,
    /// Per-step state bounds stitched with a union bound.
    DtUnion,
}

impl TubeMethod {
    pub fn is_dt(self) -> bool {
        matches!(
            self,
            TubeMethod::DtAm | TubeMethod::DtContractive | TubeMethod::DtState | TubeMethod::DtUnion
        )
    }

    /// Whether the curve bounds the whole trajectory rather than one instant.
    pub fn is_trajectory_level(self) -> bool {
        !matches!(self, TubeMethod::CtState | TubeMethod::DtState)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TubeMethod::CtAm => "ct_am",
            TubeMethod::CtContractive => "ct_contractive",
            TubeMethod::DtAm => "dt_am",
            TubeMethod::DtContractive => "dt_contractive",
            TubeMethod::CtState => "ct_state",
            TubeMethod::DtState => "dt_state",
            TubeMethod::DtUnion => "dt_union",
        }
    }
}

impl fmt::Display for TubeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TubeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ct_am" => TubeMethod::CtAm,
            "ct_contractive" => TubeMethod::CtContractive,
            "dt_am" => TubeMethod::DtAm,
            "dt_contractive" => TubeMethod::DtContractive,
            "ct_state" => TubeMethod::CtState,
            "dt_state" => TubeMethod::DtState,
            "dt_union" => TubeMethod::DtUnion,
            other => return Err(Error::Config(format!("unknown tube method `{other}`"))),
        })
    }
}

/// A request for a radius curve `r_{δ,t}` on `time_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeQuery {
    pub delta: f64,
    pub horizon: f64,
    pub epsilon: EpsilonChoice,
    pub split: SplitChoice,
    pub time_grid: Vec<f64>,
    /// Force a specific formula instead of the default dispatch.
    pub method: Option<TubeMethod>,
}

impl TubeQuery {
    /// Query with automatic ε and Δt, sampled only at `t = 0` and `t = T`.
    pub fn new(delta: f64, horizon: f64) -> Self {
        Self {
            delta,
            horizon,
            epsilon: EpsilonChoice::Auto,
            split: SplitChoice::Auto,
            time_grid: vec![0.0, horizon],
            method: None,
        }
    }

    pub fn with_epsilon(mut self, e: EpsilonChoice) -> Self {
        self.epsilon = e;
        self
    }

    pub fn with_split(mut self, s: SplitChoice) -> Self {
        self.split = s;
        self
    }

    pub fn with_method(mut self, m: TubeMethod) -> Self {
        self.method = Some(m);
        self
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.time_grid = grid;
        self
    }

    /// `points` equally spaced times from 0 to T inclusive.
    pub fn with_uniform_grid(mut self, points: usize) -> Self {
        self.time_grid = uniform_grid(self.horizon, points);
        self
    }

    /// Every integer step `0, 1, …, T`.
    pub fn with_integer_grid(mut self) -> Self {
        let t = self.horizon.round() as usize;
        self.time_grid = (0..=t).map(|k| k as f64).collect();
        self
    }

    pub fn validate(&self, discrete: bool) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(domain(format!("δ must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        if discrete && self.horizon.fract() != 0.0 {
            return Err(domain(format!(
                "discrete-time horizon must be an integer, got {}",
                self.horizon
            )));
        }
        if self.time_grid.is_empty() {
            return Err(Error::GridMismatch("time grid is empty".into()));
        }
        for w in self.time_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::GridMismatch(format!(
                    "time grid must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let first = self.time_grid[0];
        let last = *self.time_grid.last().unwrap();
        if first < 0.0 || last > self.horizon {
            return Err(Error::GridMismatch(format!(
                "time grid [{first}, {last}] leaves [0, {}]",
                self.horizon
            )));
        }
        if discrete && self.time_grid.iter().any(|t| t.fract() != 0.0) {
            return Err(Error::GridMismatch(
                "discrete-time grid must contain integer steps only".into(),
            ));
        }
        match self.split {
            SplitChoice::Fixed(dt) if discrete => {
                if dt.fract() != 0.0 || dt < 1.0 || dt > self.horizon {
                    return Err(domain(format!("Δt must be in {{1, …, T}}, got {dt}")));
                }
            }
            SplitChoice::Fixed(dt)
                if !(dt > 0.0 && dt <= self.horizon) => {
                    return Err(domain(format!("Δt must be in (0, T], got {dt}")));
                }
            _ => {}
        }
        match self.epsilon {
            EpsilonChoice::Fixed(e) => {
                EpsilonConstants::new(e)?;
            }
            EpsilonChoice::Overrides { eps1, eps2 } => {
                EpsilonConstants::from_overrides(eps1, eps2)?;
            }
            EpsilonChoice::Auto => {}
        }
        Ok(())
    }
}

pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            if i + 1 == points {
                horizon
            } else {
                horizon * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

/// A sampled radius curve and the choices that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeCurve {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub method: TubeMethod,
    pub query: TubeQuery,
    pub eps: EpsilonConstants,
    pub split_dt: Option<f64>,
}

impl TubeCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest radius on the grid.
    pub fn sup(&self) -> f64 {
        self.radii.iter().copied().fold(0.0, f64::max)
    }

    /// Radius at a grid time, matched to within `1e-9·max(1, |t|)`.
    pub fn radius_at(&self, t: f64) -> Option<f64> {
        let tol = 1e-9 * t.abs().max(1.0);
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then(|| self.radii[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn epsilon_constants_match_high_precision_values() {
        // mpmath at 30 digits.
        let k = EpsilonConstants::new(1.0 / 16.0).unwrap();
        assert_relative_eq!(k.eps1, 1.001_958_226_210_900_2, max_relative = 1e-12);
        assert_relative_eq!(k.eps2, 512.0, max_relative = 1e-12);
        let k = EpsilonConstants::new(0.99).unwrap();
        assert_relative_eq!(k.eps1, 3.996_567_235_232_823_5, max_relative = 1e-12);
        assert_relative_eq!(k.eps2, 2.040_608_101_214_161_8, max_relative = 1e-12);
    }

    #[test]
    fn epsilon_small_limit() {
        let k = EpsilonConstants::new(1e-7).unwrap();
        assert_relative_eq!(k.eps1, 1.0, max_relative = 1e-12);
        assert!(k.eps2 > 1e13);
    }

    #[test]
    fn epsilon_domain_errors() {
        for e in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(EpsilonConstants::new(e), Err(Error::Domain(_))));
        }
        assert!(EpsilonConstants::from_overrides(0.0, 2.0).is_err());
        assert!(EpsilonConstants::from_overrides(2.0 * 2f64.ln(), 2.0).is_ok());
    }

    #[test]
    fn epsilon_strict_lower_bounds_and_monotonicity() {
        let mut prev: Option<EpsilonConstants> = None;
        for i in 1..1000 {
            let k = EpsilonConstants::new(i as f64 / 1000.0).unwrap();
            assert!(k.eps1 > 1.0 && k.eps2 > 2.0);
            if let Some(p) = prev {
                assert!(k.eps1 > p.eps1, "ε₁ not increasing at {i}");
                assert!(k.eps2 < p.eps2, "ε₂ not decreasing at {i}");
            }
            prev = Some(k);
        }
    }

    fn grid_min(n: usize, log_term: f64, points: usize) -> f64 {
        (1..points)
            .map(|i| {
                let e = i as f64 / points as f64;
                EpsilonConstants::new(e).unwrap().objective(n, log_term)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn optimize_epsilon_beats_reference_value() {
        let k = optimize_epsilon(1, 1e-3).unwrap();
        let obj = k.objective(1, 1000f64.ln());
        assert!(obj <= 18.093, "objective {obj}");
        assert!(obj <= grid_min(1, 1000f64.ln(), 1_000_000) * (1.0 + 1e-9));
    }

    #[test]
    fn optimize_epsilon_matches_grid_oracle() {
        let lt = 1e6f64.ln();
        let k = optimize_epsilon(3, 1e-6).unwrap();
        let oracle = grid_min(3, lt, 1_000_000);
        let obj = k.objective(3, lt);
        assert!((obj - oracle).abs() / oracle <= 1e-6, "{obj} vs {oracle}");
    }

    #[test]
    fn optimize_epsilon_without_log_term_goes_to_lower_clamp() {
        let k = optimize_epsilon_for_log(1, 0.0);
        assert!(k.epsilon.unwrap() < 1e-3);
        assert_relative_eq!(k.objective(1, 0.0), 1.0, max_relative = 1e-6);
        let k = optimize_epsilon(1, 1.0 - 1e-15).unwrap();
        assert!(k.objective(1, 0.0) < 1.0 + 1e-6);
    }

    #[test]
    fn query_validation() {
        let q = TubeQuery::new(1e-3, 2.0).with_uniform_grid(11);
        assert!(q.validate(false).is_ok());
        assert!(q.validate(true).is_err());
        assert!(TubeQuery::new(0.0, 1.0).validate(false).is_err());
        assert!(TubeQuery::new(0.1, 1.0)
            .with_grid(vec![0.0, 0.5, 0.5])
            .validate(false)
            .is_err());
        assert!(TubeQuery::new(0.1, 1.0)
            .with_split(SplitChoice::Fixed(2.0))
            .validate(false)
            .is_err());
        let q = TubeQuery::new(0.1, 10.0).with_integer_grid();
        assert!(q.validate(true).is_ok());
        assert!(q.clone().with_split(SplitChoice::Fixed(2.5)).validate(true).is_err());
        assert!(q.with_split(SplitChoice::Fixed(3.0)).validate(true).is_ok());
    }

    #[test]
    fn uniform_grid_hits_horizon_exactly() {
        let g = uniform_grid(0.3, 4);
        assert_eq!(g.len(), 4);
        assert_eq!(*g.last().unwrap(), 0.3);
        assert_eq!(g[0], 0.0);
    }
}
