//! Probabilistic-tube radius formulas.
//!
//! Every radius has the shape `σ · coefficient(t) · √(ε₁ n + ε₂ log(·))`.
//! The coefficients are built from two growth helpers with removable
//! singularities, [`ct_integral`] at `c = 0` and [`dt_sum`] at `L = 1`.
//!
//! | system              | trajectory-level tube            |
//! |---------------------|----------------------------------|
//! | CT, `c ≥ 0`         | [`ct_am_radius`]                 |
//! | CT, `c < 0`         | [`ct_contractive_radius`]        |
//! | DT, `L ≥ 1`         | [`dt_am_radius`]                 |
//! | DT, `0 < L < 1`     | [`dt_contractive_radius`]        |
//!
//! [`select_radius`] implements this dispatch and resolves automatic ε and Δt.

use log::warn;

use crate::error::{domain, Error, Result};
use crate::model::{
    optimize_epsilon_for_log, CtSystemBounds, DtSystemBounds, EpsilonChoice, EpsilonConstants,
    SplitChoice, System, TubeCurve, TubeMethod, TubeQuery,
};

/// `(e^{2ct} - 1) / (2c)`, equal to `t` at `c = 0`.
pub fn ct_integral(c: f64, t: f64) -> f64 {
    let x = 2.0 * c * t;
    if x.abs() < 1e-6 {
        t * (1.0 + c * t + (2.0 / 3.0) * c * c * t * t)
    } else {
        x.exp_m1() / (2.0 * c)
    }
}

/// `(L^{2k} - 1) / (L² - 1) = Σ_{j<k} L^{2j}`, equal to `k` at `L = 1`.
pub fn dt_sum(l: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if l == 0.0 {
        return 1.0;
    }
    let kf = k as f64;
    if (l - 1.0).abs() < 1e-8 {
        let u = l * l - 1.0;
        return kf + kf * (kf - 1.0) / 2.0 * u + kf * (kf - 1.0) * (kf - 2.0) / 6.0 * u * u;
    }
    let ln = l.ln();
    (2.0 * kf * ln).exp_m1() / (2.0 * ln).exp_m1()
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("δ must lie in (0, 1), got {delta}")))
    }
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(domain(format!("t must be ≥ 0, got {t}")));
    }
    if t > horizon * (1.0 + 1e-12) {
        return Err(domain(format!("t = {t} exceeds the horizon {horizon}")));
    }
    Ok(())
}

/// `log(arg)` clamped at zero. Only absurd `δ·Δt/T` combinations make the
/// argument drop below one.
fn clamped_log(arg: f64) -> f64 {
    let v = arg.ln();
    if v < 0.0 {
        warn!("log argument {arg} < 1 clamped to 0");
        0.0
    } else {
        v
    }
}

/// Single-time bound for continuous time: `‖X_t - x_t‖ ≤ r` with probability
/// `1 - δ` at one fixed `t`.
pub fn ct_state_radius(sys: &CtSystemBounds, eps: &EpsilonConstants, delta: f64, t: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(t >= 0.0) {
        return Err(domain(format!("t must be ≥ 0, got {t}")));
    }
    let obj = eps.objective(sys.dim, (1.0 / delta).ln());
    Ok(sys.sigma * (ct_integral(sys.c, t) * obj).sqrt())
}

/// Single-time bound for discrete time.
pub fn dt_state_radius(sys: &DtSystemBounds, eps: &EpsilonConstants, delta: f64, t: u64) -> Result<f64> {
    check_delta(delta)?;
    let obj = eps.objective(sys.dim, (1.0 / delta).ln());
    Ok(sys.sigma() * (dt_sum(sys.lipschitz, t) * obj).sqrt())
}

/// Per-step bounds at level `δ/T` stitched by a union bound over `t ≤ T`.
pub fn dt_union_radius(
    sys: &DtSystemBounds,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: u64,
    t: u64,
) -> Result<f64> {
    check_delta(delta)?;
    if horizon == 0 || t > horizon {
        return Err(domain(format!("need 1 ≤ t ≤ T, got t = {t}, T = {horizon}")));
    }
    let obj = eps.objective(sys.dim, clamped_log(horizon as f64 / delta));
    Ok(sys.sigma() * (dt_sum(sys.lipschitz, t) * obj).sqrt())
}

/// Whole-horizon tube for continuous time:
/// `r_{δ,t} = e^{ct} σ √( (1 - e^{-2cT})/(2c) · (ε₁n + ε₂ log(1/δ)) )`.
pub fn ct_am_radius(
    sys: &CtSystemBounds,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: f64,
    t: f64,
) -> Result<f64> {
    check_delta(delta)?;
    check_time(t, horizon)?;
    let obj = eps.objective(sys.dim, (1.0 / delta).ln());
    Ok((sys.c * t).exp() * sys.sigma * (ct_integral(-sys.c, horizon) * obj).sqrt())
}

/// Interval-splitting tube for `c < 0`:
/// `σ (√(1 - e^{2ct}) + √(e^{-2cΔt} - 1)) / √(-2c) · √(ε₁n + ε₂ log(2T/(δΔt)))`.
pub fn ct_contractive_radius(
    sys: &CtSystemBounds,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: f64,
    split_dt: f64,
    t: f64,
) -> Result<f64> {
    check_delta(delta)?;
    if sys.c >= 0.0 {
        return Err(domain(format!(
            "interval splitting needs c < 0 (got c = {}); use the whole-horizon tube",
            sys.c
        )));
    }
    if !(split_dt > 0.0 && split_dt <= horizon) {
        return Err(domain(format!("Δt must lie in (0, T], got {split_dt}")));
    }
    check_time(t, horizon)?;
    let coef = ct_integral(sys.c, t).sqrt() + ct_integral(-sys.c, split_dt).sqrt();
    let obj = eps.objective(sys.dim, clamped_log(2.0 * horizon / (delta * split_dt)));
    Ok(sys.sigma * coef * obj.sqrt())
}

/// Whole-horizon tube for discrete time:
/// `L^{t-1} σ √( (L^{-2T} - 1)/(L^{-2} - 1) · (ε₁n + ε₂ log(1/δ)) )`, which equals the
/// single-time radius at `t = T`.
pub fn dt_am_radius(
    sys: &DtSystemBounds,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: u64,
    t: u64,
) -> Result<f64> {
    check_delta(delta)?;
    let l = sys.lipschitz;
    if l <= 0.0 {
        return Err(domain(
            "the whole-horizon DT tube needs L > 0; use the state or union bound for L = 0",
        ));
    }
    if t > horizon {
        return Err(domain(format!("t = {t} exceeds the horizon {horizon}")));
    }
    let obj = eps.objective(sys.dim, (1.0 / delta).ln());
    // L^{t-1} √Σ_{k<T} L^{-2k} = L^{t-T} √Σ_{k<T} L^{2k}; pick the form whose sum cannot overflow.
    let (log_scale, sum) = if l < 1.0 {
        ((t as f64 - horizon as f64) * l.ln(), dt_sum(l, horizon))
    } else {
        ((t as f64 - 1.0) * l.ln(), dt_sum(1.0 / l, horizon))
    };
    let r = (log_scale + 0.5 * (sum * obj).ln()).exp() * sys.sigma();
    if !r.is_finite() {
        return Err(Error::Overflow {
            arg: log_scale,
            limit: f64::MAX.ln(),
        });
    }
    Ok(r)
}

/// Number of splitting intervals; rounds up when Δt does not divide T.
pub fn dt_interval_count(horizon: u64, split_dt: u64) -> u64 {
    horizon.div_ceil(split_dt)
}

/// Interval-splitting tube for `0 < L < 1`:
/// `σ (√((L^{2t}-1)/(L²-1)) + √((L^{-2(Δt-1)}-1)/(L^{-2}-1))) · √(ε₁n + ε₂ log(2N/δ))`
/// with `N = ⌈T/Δt⌉`.
pub fn dt_contractive_radius(
    sys: &DtSystemBounds,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: u64,
    split_dt: u64,
    t: u64,
) -> Result<f64> {
    check_delta(delta)?;
    let l = sys.lipschitz;
    if !(l > 0.0 && l < 1.0) {
        return Err(domain(format!(
            "interval splitting needs 0 < L < 1 (got L = {l}); use the whole-horizon tube"
        )));
    }
    if split_dt == 0 || split_dt > horizon {
        return Err(domain(format!("Δt must be in {{1, …, T}}, got {split_dt}")));
    }
    if t > horizon {
        return Err(domain(format!("t = {t} exceeds the horizon {horizon}")));
    }
    let coef = dt_sum(l, t).sqrt() + dt_sum(1.0 / l, split_dt - 1).sqrt();
    let n_int = dt_interval_count(horizon, split_dt) as f64;
    let obj = eps.objective(sys.dim, clamped_log(2.0 * n_int / delta));
    Ok(sys.sigma() * coef * obj.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitObjective {
    /// Radius at `t = T`, which is the supremum since the curve increases in `t`.
    SupOverT,
    AtTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalSplit {
    pub split_dt: f64,
    pub radius: f64,
}

const CT_SPLIT_CANDIDATES: usize = 200;

/// Δt minimising the contractive radius at the objective time.
///
/// Continuous time scans 200 log-spaced candidates in `[T·10⁻⁴, T]` and
/// refines around the best one; discrete time checks every `Δt ∈ {1, …, T}`.
pub fn optimize_split(
    sys: &System,
    eps: &EpsilonConstants,
    delta: f64,
    horizon: f64,
    objective: SplitObjective,
) -> Result<OptimalSplit> {
    let t_eval = match objective {
        SplitObjective::SupOverT => horizon,
        SplitObjective::AtTime(t) => t,
    };
    match sys {
        System::Ct(ct) => {
            let r = |dt: f64| ct_contractive_radius(ct, eps, delta, horizon, dt, t_eval);
            r(horizon)?;
            let lo = horizon * 1e-4;
            let cands: Vec<f64> = (0..CT_SPLIT_CANDIDATES)
                .map(|i| {
                    if i + 1 == CT_SPLIT_CANDIDATES {
                        horizon
                    } else {
                        lo * (horizon / lo).powf(i as f64 / (CT_SPLIT_CANDIDATES - 1) as f64)
                    }
                })
                .collect();
            let vals: Vec<f64> = cands.iter().map(|&d| r(d).unwrap_or(f64::INFINITY)).collect();
            let best = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let a = cands[best.saturating_sub(1)].ln();
            let b = cands[(best + 1).min(cands.len() - 1)].ln();
            let f = |u: f64| r(u.exp()).unwrap_or(f64::INFINITY);
            let u = crate::model::golden_section(f, a, b, 1e-12);
            let refined = u.exp().min(horizon);
            let rv = r(refined)?;
            Ok(if rv < vals[best] {
                OptimalSplit {
                    split_dt: refined,
                    radius: rv,
                }
            } else {
                OptimalSplit {
                    split_dt: cands[best],
                    radius: vals[best],
                }
            })
        }
        System::Dt(dt) => {
            let big_t = as_step(horizon)?;
            let t = as_step(t_eval)?;
            let mut best: Option<OptimalSplit> = None;
            for k in 1..=big_t {
                let radius = dt_contractive_radius(dt, eps, delta, big_t, k, t)?;
                if best.is_none_or(|b| radius < b.radius) {
                    best = Some(OptimalSplit {
                        split_dt: k as f64,
                        radius,
                    });
                }
            }
            best.ok_or_else(|| domain("empty Δt candidate set"))
        }
    }
}

fn as_step(t: f64) -> Result<u64> {
    if t >= 0.0 && t.fract() == 0.0 {
        Ok(t as u64)
    } else {
        Err(domain(format!("discrete time must be a nonnegative integer, got {t}")))
    }
}

/// Trajectory-level method for a system when nothing is forced.
pub fn default_method(sys: &System, split: SplitChoice) -> TubeMethod {
    match sys {
        System::Ct(s) if s.c < 0.0 && split != SplitChoice::None => TubeMethod::CtContractive,
        System::Ct(_) => TubeMethod::CtAm,
        System::Dt(s) if s.lipschitz == 0.0 => TubeMethod::DtUnion,
        System::Dt(s) if s.lipschitz < 1.0 && split != SplitChoice::None => TubeMethod::DtContractive,
        System::Dt(_) => TubeMethod::DtAm,
    }
}

/// Log term each method puts behind `ε₂` (Δt only matters for splitting).
fn method_log_term(method: TubeMethod, delta: f64, horizon: f64, split_dt: f64) -> f64 {
    match method {
        TubeMethod::CtAm | TubeMethod::DtAm | TubeMethod::CtState | TubeMethod::DtState => {
            (1.0 / delta).ln()
        }
        TubeMethod::DtUnion => (horizon / delta).ln().max(0.0),
        TubeMethod::CtContractive => (2.0 * horizon / (delta * split_dt)).ln().max(0.0),
        TubeMethod::DtContractive => {
            let n = dt_interval_count(horizon as u64, split_dt as u64) as f64;
            (2.0 * n / delta).ln().max(0.0)
        }
    }
}

fn radius_at(
    sys: &System,
    method: TubeMethod,
    eps: &EpsilonConstants,
    q: &TubeQuery,
    split_dt: Option<f64>,
    t: f64,
) -> Result<f64> {
    let split = || split_dt.ok_or_else(|| domain("missing Δt"));
    match (sys, method) {
        (System::Ct(s), TubeMethod::CtAm) => ct_am_radius(s, eps, q.delta, q.horizon, t),
        (System::Ct(s), TubeMethod::CtContractive) => {
            ct_contractive_radius(s, eps, q.delta, q.horizon, split()?, t)
        }
        (System::Ct(s), TubeMethod::CtState) => ct_state_radius(s, eps, q.delta, t),
        (System::Dt(s), TubeMethod::DtAm) => {
            dt_am_radius(s, eps, q.delta, as_step(q.horizon)?, as_step(t)?)
        }
        (System::Dt(s), TubeMethod::DtContractive) => dt_contractive_radius(
            s,
            eps,
            q.delta,
            as_step(q.horizon)?,
            as_step(split()?)?,
            as_step(t)?,
        ),
        (System::Dt(s), TubeMethod::DtState) => dt_state_radius(s, eps, q.delta, as_step(t)?),
        (System::Dt(s), TubeMethod::DtUnion) => {
            dt_union_radius(s, eps, q.delta, as_step(q.horizon)?, as_step(t)?)
        }
        (sys, m) => Err(domain(format!(
            "method {m} does not apply to a {} system",
            if sys.is_dt() { "discrete-time" } else { "continuous-time" }
        ))),
    }
}

/// Radius curve for `query` using the tube appropriate for `sys`.
///
/// Automatic ε is chosen once per curve from the method's time-independent
/// objective. When both ε and Δt are automatic they are refined alternately
/// until Δt stops moving.
pub fn select_radius(sys: &System, query: &TubeQuery) -> Result<TubeCurve> {
    query.validate(sys.is_dt())?;
    let method = query.method.unwrap_or_else(|| default_method(sys, query.split));
    let n = sys.dim();
    let splits = matches!(method, TubeMethod::CtContractive | TubeMethod::DtContractive);

    let fixed_eps = match query.epsilon {
        EpsilonChoice::Fixed(e) => Some(EpsilonConstants::new(e)?),
        EpsilonChoice::Overrides { eps1, eps2 } => Some(EpsilonConstants::from_overrides(eps1, eps2)?),
        EpsilonChoice::Auto => None,
    };
    let auto_eps = |split_dt: f64| {
        optimize_epsilon_for_log(n, method_log_term(method, query.delta, query.horizon, split_dt))
    };

    let (eps, split_dt) = if splits {
        match (query.split, fixed_eps) {
            (SplitChoice::Fixed(dt), Some(e)) => (e, Some(dt)),
            (SplitChoice::Fixed(dt), None) => (auto_eps(dt), Some(dt)),
            (_, Some(e)) => {
                let best = optimize_split(sys, &e, query.delta, query.horizon, SplitObjective::SupOverT)?;
                (e, Some(best.split_dt))
            }
            (_, None) => {
                let mut e = optimize_epsilon_for_log(n, (1.0 / query.delta).ln());
                let mut dt = f64::NAN;
                for _ in 0..8 {
                    let best =
                        optimize_split(sys, &e, query.delta, query.horizon, SplitObjective::SupOverT)?;
                    let moved = best.split_dt != dt;
                    dt = best.split_dt;
                    e = auto_eps(dt);
                    if !moved {
                        break;
                    }
                }
                (e, Some(dt))
            }
        }
    } else {
        (fixed_eps.unwrap_or_else(|| auto_eps(f64::NAN)), None)
    };

    let radii = query
        .time_grid
        .iter()
        .map(|&t| radius_at(sys, method, &eps, query, split_dt, t))
        .collect::<Result<Vec<f64>>>()?;
    if radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite radius from {method}; parameters overflow f64"
        )));
    }
    Ok(TubeCurve {
        times: query.time_grid.clone(),
        radii,
        method,
        query: query.clone(),
        eps,
        split_dt,
    })
}

/// `curve` re-evaluated on `times` with its resolved method, ε and Δt, so
/// no automatic choice is redone.
pub fn resample_curve(sys: &System, curve: &TubeCurve, times: &[f64]) -> Result<TubeCurve> {
    let query = TubeQuery {
        time_grid: times.to_vec(),
        epsilon: EpsilonChoice::Overrides {
            eps1: curve.eps.eps1,
            eps2: curve.eps.eps2,
        },
        split: curve.split_dt.map_or(SplitChoice::None, SplitChoice::Fixed),
        method: Some(curve.method),
        ..curve.query.clone()
    };
    let mut out = select_radius(sys, &query)?;
    out.eps.epsilon = curve.eps.epsilon;
    Ok(out)
}
