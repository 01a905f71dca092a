//! The averaged moment generating function (AMGF)
//!
//! ```text
//! Φ_{n,λ}(x) = E_{ℓ ∼ Unif(S^{n-1})} exp(λ ⟨ℓ, x⟩)
//! ```
//!
//! is the energy function behind every trajectory-level tube. It depends on
//! `x` only through `‖x‖`, so [`phi`] takes the norm directly and rotation
//! invariance holds by construction. Two independent evaluation routes are
//! kept side by side:
//!
//! - quadrature of `Z_n ∫₀^π e^{λr cos θ} sin^{n-2}θ dθ` with
//!   `1/Z_n = ∫₀^π sin^{n-2}θ dθ` (Wallis recursion), and
//! - the power series `Σ_k (λ²r²/4)^k / (k! (n/2)_k)`, which is
//!   `Γ(n/2) (2/(λr))^{n/2-1} I_{n/2-1}(λr)` written without gamma functions.
//!
//! The `check_*` functions turn the inequalities the tube bounds rely on into
//! runtime checks. The Monte-Carlo ones report `(estimate, stderr)` and pass
//! with a three-sigma one-sided slack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CtSystemBounds;
use crate::noise::{CtNoise, DtNoise};
use crate::rng::{self, fill_standard_normal};
use crate::stats::MeanEstimate;

/// Largest `|λ|·‖x‖` for which [`phi`] returns a finite `f64`.
pub const OVERFLOW_LIMIT: f64 = 700.0;

/// Independent random streams per Monte-Carlo check, fixed so results do
/// not depend on the thread count.
const SHARDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmgfMethod {
    Quadrature,
    BesselSeries,
    Exact1D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmgfEval {
    pub n: usize,
    pub lambda: f64,
    pub method: AmgfMethod,
}

impl AmgfEval {
    /// Quadrature for `n ≥ 2`, `cosh` for `n = 1`.
    pub fn new(n: usize, lambda: f64) -> Self {
        let n = n.max(1);
        let method = if n == 1 {
            AmgfMethod::Exact1D
        } else {
            AmgfMethod::Quadrature
        };
        Self { n, lambda, method }
    }

    /// Selects an evaluation route; `n = 1` always uses the exact form.
    pub fn with_method(mut self, method: AmgfMethod) -> Self {
        self.method = if self.n == 1 {
            AmgfMethod::Exact1D
        } else {
            method
        };
        self
    }
}

/// `Φ_{n,λ}(x)` for `‖x‖ = norm_x`.
pub fn phi(eval: &AmgfEval, norm_x: f64) -> Result<f64> {
    let arg = check_arg(eval, norm_x)?;
    if arg > OVERFLOW_LIMIT {
        return Err(Error::Overflow {
            arg,
            limit: OVERFLOW_LIMIT,
        });
    }
    Ok(match eval.method {
        AmgfMethod::Exact1D => arg.cosh(),
        AmgfMethod::BesselSeries => bessel_series(eval.n, arg),
        AmgfMethod::Quadrature => log_phi_quadrature(eval.n, arg).exp(),
    })
}

/// `log Φ_{n,λ}(x)`, finite for every finite argument.
pub fn log_phi(eval: &AmgfEval, norm_x: f64) -> Result<f64> {
    let arg = check_arg(eval, norm_x)?;
    Ok(match eval.method {
        _ if eval.n == 1 => log_cosh(arg),
        AmgfMethod::BesselSeries if arg <= OVERFLOW_LIMIT => bessel_series(eval.n, arg).ln(),
        _ => log_phi_quadrature(eval.n, arg),
    })
}

fn check_arg(eval: &AmgfEval, norm_x: f64) -> Result<f64> {
    if !(norm_x >= 0.0 && norm_x.is_finite()) {
        return Err(Error::Domain(format!("‖x‖ must be finite and ≥ 0, got {norm_x}")));
    }
    if !eval.lambda.is_finite() {
        return Err(Error::Domain("λ must be finite".into()));
    }
    if eval.n == 0 {
        return Err(Error::Domain("dimension must be ≥ 1".into()));
    }
    Ok(eval.lambda.abs() * norm_x)
}

fn log_cosh(x: f64) -> f64 {
    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
}

fn bessel_series(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let nu1 = n as f64 / 2.0; // ν + 1
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    loop {
        term *= q / ((k + 1.0) * (k + nu1));
        sum += term;
        k += 1.0;
        if term <= 1e-17 * sum && k * k + k * nu1 > q {
            break;
        }
        if k > 1e5 {
            break;
        }
    }
    sum
}

/// `∫₀^π sin^k θ dθ` by the Wallis recursion.
fn wallis(k: usize) -> f64 {
    let mut w = if k.is_multiple_of(2) {
        std::f64::consts::PI
    } else {
        2.0
    };
    let mut j = if k.is_multiple_of(2) { 2 } else { 3 };
    while j <= k {
        w *= (j - 1) as f64 / j as f64;
        j += 2;
    }
    w
}

fn log_phi_quadrature(n: usize, x: f64) -> f64 {
    if n == 1 {
        return log_cosh(x);
    }
    if x == 0.0 {
        return 0.0;
    }
    let p = (n - 2) as i32;
    // Scaled by e^{-x} so the integrand never exceeds 1.
    let f = |theta: f64| (x * (theta.cos() - 1.0)).exp() * theta.sin().powi(p);
    let integral = adaptive_gauss_legendre(&f, 0.0, std::f64::consts::PI, 1e-13);
    integral.ln() - wallis(n - 2).ln() + x
}

const GL_POINTS: usize = 20;

fn gauss_legendre_rule() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = Vec::with_capacity(n);
        for i in 1..=n {
            // Newton iteration on P_n from the Chebyshev initial guess.
            let mut z = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            rule.push((z, 2.0 / ((1.0 - z * z) * dp * dp)));
        }
        rule
    })
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    half * gauss_legendre_rule()
        .iter()
        .map(|&(z, w)| w * f(mid + half * z))
        .sum::<f64>()
}

/// Adaptive bisection on 20-point Gauss–Legendre panels, relative tolerance
/// `rel_tol` on the whole integral.
pub(crate) fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    const START_PANELS: usize = 16;
    let h = (b - a) / START_PANELS as f64;
    let panels: Vec<(f64, f64, f64)> = (0..START_PANELS)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            (lo, hi, gl_panel(f, lo, hi))
        })
        .collect();
    let rough: f64 = panels.iter().map(|p| p.2.abs()).sum();
    let abs_tol = (rel_tol * rough).max(f64::MIN_POSITIVE);
    panels
        .into_iter()
        .map(|(lo, hi, whole)| refine(f, lo, hi, whole, abs_tol / START_PANELS as f64, 0))
        .sum()
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = (a + b) / 2.0;
    let left = gl_panel(f, a, m);
    let right = gl_panel(f, m, b);
    if (left + right - whole).abs() <= tol || depth >= 30 {
        return left + right;
    }
    refine(f, a, m, left, tol / 2.0, depth + 1) + refine(f, m, b, right, tol / 2.0, depth + 1)
}

/// Whether `Φ_{n,λ}(x) ≥ (1 - ε²)^{n/2} e^{ε|λ|‖x‖}`, compared in log space.
pub fn check_growth_bound(eval: &AmgfEval, norm_x: f64, epsilon: f64) -> bool {
    let Ok(lhs) = log_phi(eval, norm_x) else {
        return false;
    };
    let rhs = 0.5 * eval.n as f64 * (-epsilon * epsilon).ln_1p()
        + epsilon * eval.lambda.abs() * norm_x;
    lhs >= rhs - 1e-12 * rhs.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecouplingReport {
    /// Monte-Carlo estimate of `E_w Φ(x + w)`.
    pub lhs_estimate: f64,
    /// `e^{λ²ϑ²/2} Φ(x)`.
    pub rhs: f64,
    pub margin: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// Estimates `E_w Φ_{n,λ}(x + w)` against `e^{λ²ϑ²/2} Φ_{n,λ}(x)` where `ϑ²`
/// is the sampler's declared proxy.
pub fn check_subgaussian_decoupling(
    eval: &AmgfEval,
    x: &[f64],
    noise: &DtNoise,
    n_samples: usize,
    seed: u64,
) -> Result<DecouplingReport> {
    if x.len() != eval.n {
        return Err(Error::DimensionMismatch {
            expected: eval.n,
            got: x.len(),
        });
    }
    let fast = eval.with_method(AmgfMethod::BesselSeries);
    let per_shard = n_samples.div_ceil(SHARDS);
    let shards: Vec<Result<Vec<f64>>> = (0..SHARDS)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, s as u64);
            let mut w = vec![0.0; x.len()];
            let mut out = Vec::with_capacity(per_shard);
            for _ in 0..per_shard {
                noise.sample(&mut rng, &mut w);
                let r = x
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| (a + b) * (a + b))
                    .sum::<f64>()
                    .sqrt();
                out.push(phi(&fast, r)?);
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(per_shard * SHARDS);
    for s in shards {
        values.extend(s?);
    }
    let est = MeanEstimate::from_values(&values);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rhs = (eval.lambda * eval.lambda * noise.proxy() / 2.0).exp() * phi(&fast, norm)?;
    Ok(DecouplingReport {
        lhs_estimate: est.mean,
        rhs,
        margin: rhs - est.mean,
        stderr: est.stderr,
        holds: est.mean <= rhs + 3.0 * est.stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub estimate: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// Recentred drift `f̃(x̃) = -c x̃ + e^{-ct} f(e^{ct} x̃, d, t)` evaluated at the
/// original-coordinate state `x`; returns `(x̃, f̃(x̃))`.
fn recentred(sys: &CtSystemBounds, x: &[f64], d: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let scale = (-sys.c * t).exp();
    let xt: Vec<f64> = x.iter().map(|v| v * scale).collect();
    let mut fx = vec![0.0; x.len()];
    sys.drift(x, d, t, &mut fx);
    let ft = xt
        .iter()
        .zip(&fx)
        .map(|(a, b)| -sys.c * a + scale * b)
        .collect();
    (xt, ft)
}

/// Sphere-averaged drift term `E_ℓ[e^{λ⟨ℓ,S⟩} λ ℓᵀβ]` of the recentred pair
/// `S = x̃ - ỹ`, `β = f̃(x̃) - f̃(ỹ)`; nonpositive whenever the declared `c`
/// bounds the matrix measure of `∂f/∂x`.
#[allow(clippy::too_many_arguments)]
pub fn check_drift_inequality(
    sys: &CtSystemBounds,
    x: &[f64],
    y: &[f64],
    d: &[f64],
    t: f64,
    lambda: f64,
    n_sphere_samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    let n = sys.dim;
    for v in [x, y] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let (xt, fx) = recentred(sys, x, d, t);
    let (yt, fy) = recentred(sys, y, d, t);
    let s: Vec<f64> = xt.iter().zip(&yt).map(|(a, b)| a - b).collect();
    let beta: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if lambda.abs() * s_norm > OVERFLOW_LIMIT {
        return Err(Error::Overflow {
            arg: lambda.abs() * s_norm,
            limit: OVERFLOW_LIMIT,
        });
    }
    if beta.iter().all(|&b| b == 0.0) {
        return Ok(DriftReport {
            estimate: 0.0,
            stderr: 0.0,
            holds: true,
        });
    }
    let per_shard = n_sphere_samples.div_ceil(SHARDS);
    let values: Vec<f64> = (0..SHARDS)
        .into_par_iter()
        .flat_map_iter(|sh| {
            let mut rng = rng::stream(seed, sh as u64);
            let mut l = vec![0.0; n];
            let (s, beta) = (&s, &beta);
            (0..per_shard).map(move |_| {
                rng::unit_sphere(&mut rng, &mut l);
                let proj: f64 = l.iter().zip(s).map(|(a, b)| a * b).sum();
                let lb: f64 = l.iter().zip(beta).map(|(a, b)| a * b).sum();
                // antithetic pair (ℓ, -ℓ)
                lambda * lb * (lambda * proj).sinh()
            })
        })
        .collect();
    let est = MeanEstimate::from_values(&values);
    Ok(DriftReport {
        estimate: est.mean,
        stderr: est.stderr,
        holds: est.mean <= 3.0 * est.stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmStepReport {
    /// Estimate of `(E[Φ(S_{t+Δ}) | S_t] - Φ(S_t)) / Δ`.
    pub estimate: f64,
    /// `(λ² σ̃_t² / 2) Φ(S_t)` with `σ̃_t = e^{-ct} σ`.
    pub bound: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// One Euler–Maruyama step of the recentred pair from `(x, y)`: checks that
/// `Φ_{n,λ}(S_t)` grows at most like an affine martingale with
/// `a_t = λ²σ̃_t²/2`, `b_t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn check_affine_martingale_step(
    sys: &CtSystemBounds,
    noise: &CtNoise,
    x: &[f64],
    y: &[f64],
    d: &[f64],
    t: f64,
    lambda: f64,
    step: f64,
    n_samples: usize,
    seed: u64,
) -> Result<AmStepReport> {
    let n = sys.dim;
    let m = noise.cols;
    let (xt, fx) = recentred(sys, x, d, t);
    let (yt, fy) = recentred(sys, y, d, t);
    let scale = (-sys.c * t).exp();
    let mut g = vec![0.0; n * m];
    noise.eval(x, t, &mut g);
    g.iter_mut().for_each(|v| *v *= scale);
    let base: Vec<f64> = (0..n)
        .map(|i| (xt[i] - yt[i]) + (fx[i] - fy[i]) * step)
        .collect();
    let eval = AmgfEval::new(n, lambda).with_method(AmgfMethod::BesselSeries);
    let s_norm = xt
        .iter()
        .zip(&yt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let phi0 = phi(&eval, s_norm)?;
    let per_shard = n_samples.div_ceil(SHARDS);
    let shards: Vec<Result<Vec<f64>>> = (0..SHARDS)
        .into_par_iter()
        .map(|sh| {
            let mut rng = rng::stream(seed, sh as u64);
            let mut z = vec![0.0; m];
            let mut out = Vec::with_capacity(per_shard);
            let sq = step.sqrt();
            for _ in 0..per_shard {
                fill_standard_normal(&mut rng, &mut z);
                let mut plus = 0.0;
                let mut minus = 0.0;
                for i in 0..n {
                    let inc: f64 = (0..m).map(|j| g[i * m + j] * z[j]).sum::<f64>() * sq;
                    plus += (base[i] + inc).powi(2);
                    minus += (base[i] - inc).powi(2);
                }
                let v = 0.5 * (phi(&eval, plus.sqrt())? + phi(&eval, minus.sqrt())?);
                out.push((v - phi0) / step);
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(per_shard * SHARDS);
    for s in shards {
        values.extend(s?);
    }
    let est = MeanEstimate::from_values(&values);
    let sigma_t = scale * sys.sigma;
    let bound = lambda * lambda * sigma_t * sigma_t / 2.0 * phi0;
    Ok(AmStepReport {
        estimate: est.mean,
        bound,
        stderr: est.stderr,
        holds: est.mean <= bound + 3.0 * est.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_dimensional_is_cosh() {
        let e = AmgfEval::new(1, 2.0);
        assert_relative_eq!(phi(&e, 1.0).unwrap(), 3.762_195_691_083_631_4, max_relative = 1e-14);
        let e = AmgfEval::new(1, 2.0).with_method(AmgfMethod::BesselSeries);
        assert_eq!(e.method, AmgfMethod::Exact1D);
    }

    #[test]
    fn zero_argument_is_one() {
        for n in 1..8 {
            for m in [AmgfMethod::Quadrature, AmgfMethod::BesselSeries] {
                let e = AmgfEval::new(n, 3.7).with_method(m);
                assert_eq!(phi(&e, 0.0).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn three_dimensional_closed_form() {
        // On S², ⟨ℓ, e₁⟩ is uniform on [-1, 1], so Φ = sinh(λr)/(λr).
        let e = AmgfEval::new(3, 1.0);
        assert_relative_eq!(phi(&e, 2.0).unwrap(), 1.813_430_203_923_509_4, max_relative = 1e-12);
        let e = e.with_method(AmgfMethod::BesselSeries);
        assert_relative_eq!(phi(&e, 2.0).unwrap(), 1.813_430_203_923_509_4, max_relative = 1e-13);
    }

    #[test]
    fn two_dimensional_matches_bessel_i0() {
        // Φ_{2,λ}(r) = I₀(λr); I₀(1) = 1.2660658777520082.
        let e = AmgfEval::new(2, 1.0);
        assert_relative_eq!(phi(&e, 1.0).unwrap(), 1.266_065_877_752_008_3, max_relative = 1e-13);
    }

    #[test]
    fn overflow_is_rejected_but_log_phi_is_finite() {
        let e = AmgfEval::new(4, 10.0);
        assert!(matches!(phi(&e, 80.0), Err(Error::Overflow { .. })));
        let lp = log_phi(&e, 80.0).unwrap();
        assert!(lp.is_finite() && lp > 700.0);
        let e1 = AmgfEval::new(1, 10.0);
        assert_relative_eq!(log_phi(&e1, 80.0).unwrap(), 800.0 - 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn routes_agree_across_grid() {
        for n in 2..=10 {
            for i in 0..=50 {
                let x = i as f64;
                let q = phi(&AmgfEval::new(n, 1.0), x).unwrap();
                let b = phi(&AmgfEval::new(n, 1.0).with_method(AmgfMethod::BesselSeries), x).unwrap();
                assert!(((q - b) / b).abs() <= 1e-10, "n={n} x={x}: {q} vs {b}");
            }
        }
    }

    #[test]
    fn even_in_lambda() {
        for n in 1..6 {
            let a = phi(&AmgfEval::new(n, 2.5), 1.3).unwrap();
            let b = phi(&AmgfEval::new(n, -2.5), 1.3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn growth_bound_examples() {
        assert!(check_growth_bound(&AmgfEval::new(1, 2.0), 1.0, 0.5));
        assert!(check_growth_bound(&AmgfEval::new(3, 2.0), 0.0, 0.9));
        assert!(check_growth_bound(&AmgfEval::new(5, 3.0), 4.0, 0.9));
        // Deliberately wrong inequality direction must fail: Φ < e^{|λ|r}.
        let e = AmgfEval::new(5, 3.0);
        assert!(log_phi(&e, 4.0).unwrap() < 12.0);
    }

    #[test]
    fn wallis_values() {
        assert_relative_eq!(wallis(0), std::f64::consts::PI);
        assert_relative_eq!(wallis(1), 2.0);
        assert_relative_eq!(wallis(2), std::f64::consts::PI / 2.0);
        assert_relative_eq!(wallis(3), 4.0 / 3.0);
    }

    #[test]
    fn decoupling_degenerate_noise() {
        let e = AmgfEval::new(2, 1.0);
        let noise = DtNoise::Custom {
            proxy: 0.01,
            sampler: std::sync::Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
        };
        let rep = check_subgaussian_decoupling(&e, &[0.6, 0.8], &noise, 1000, 1).unwrap();
        assert_eq!(rep.stderr, 0.0);
        assert_relative_eq!(rep.lhs_estimate, phi(&e, 1.0).unwrap(), max_relative = 1e-14);
        assert!(rep.holds && rep.margin > 0.0);
    }

    #[test]
    fn drift_zero_when_states_coincide() {
        let sys = CtSystemBounds::linear(3, -1.0, 0.1).unwrap();
        let r = check_drift_inequality(&sys, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[], 0.5, 2.0, 100, 0)
            .unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn drift_nonpositive_for_contraction() {
        let sys = CtSystemBounds::new(2, -1.0, 0.1)
            .unwrap()
            .with_drift(|x, _, _, out| {
                out[0] = -x[0];
                out[1] = -x[1];
            });
        let r = check_drift_inequality(&sys, &[1.0, 0.5], &[-0.3, 0.2], &[], 0.0, 1.5, 100_000, 3)
            .unwrap();
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn drift_check_detects_understated_c() {
        // f(x) = x with declared c = -1: recentred drift is 2x, clearly positive.
        let sys = CtSystemBounds::new(2, -1.0, 0.1)
            .unwrap()
            .with_drift(|x, _, _, out| out.copy_from_slice(x));
        let r = check_drift_inequality(&sys, &[1.0, 0.0], &[0.0, 0.0], &[], 0.0, 1.0, 20_000, 3).unwrap();
        assert!(!r.holds, "{r:?}");
    }
}
