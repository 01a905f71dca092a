//! Noise models: diffusion fields for continuous time and sub-Gaussian
//! samplers for discrete time.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{domain, Result};
use crate::model::CtSystemBounds;
use crate::rng::{self, fill_standard_normal};

/// Diffusion `g_t(x)` as an `n × m` row-major matrix written into `out`.
pub type Diffusion = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

pub type CustomSampler = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct CtNoise {
    pub dim: usize,
    pub cols: usize,
    diffusion: Diffusion,
}

impl CtNoise {
    pub fn new<F>(dim: usize, cols: usize, g: F) -> Self
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            cols,
            diffusion: Arc::new(g),
        }
    }

    /// `g ≡ σ I_n`.
    pub fn isotropic(dim: usize, sigma: f64) -> Self {
        Self::new(dim, dim, move |_, _, out| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = sigma;
            }
        })
    }

    /// `g ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, dim, |_, _, out| out.fill(0.0))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, t, out)
    }

    /// Largest eigenvalue of `g gᵀ` over `samples` states drawn uniformly
    /// from the ball of radius `radius` around `center`, at times in `[0, horizon]`.
    pub fn max_covariance_eigenvalue(
        &self,
        center: &[f64],
        radius: f64,
        horizon: f64,
        samples: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = rng::stream(seed, 0);
        let mut x = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim * self.cols];
        let mut worst = 0.0f64;
        for _ in 0..samples.max(1) {
            rng::uniform_ball(&mut rng, center, radius, &mut x);
            let t = horizon * rng.random::<f64>();
            self.eval(&x, t, &mut g);
            let gm = DMatrix::from_row_slice(self.dim, self.cols, &g);
            let cov = &gm * gm.transpose();
            let top = cov.symmetric_eigenvalues().max();
            worst = worst.max(top);
        }
        worst
    }

    /// Checks `g gᵀ ⪯ σ² I` at sampled states; returns the observed maximum
    /// eigenvalue on success.
    pub fn check_bound(
        &self,
        sys: &CtSystemBounds,
        center: &[f64],
        radius: f64,
        horizon: f64,
        samples: usize,
        seed: u64,
    ) -> Result<f64> {
        let top = self.max_covariance_eigenvalue(center, radius, horizon, samples, seed);
        let bound = sys.sigma * sys.sigma;
        if top > bound * (1.0 + 1e-12) {
            return Err(domain(format!(
                "diffusion violates the declared bound: λmax(g gᵀ) = {top} > σ² = {bound}"
            )));
        }
        Ok(top)
    }
}

impl fmt::Debug for CtNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CtNoise")
            .field("dim", &self.dim)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

/// Additive discrete-time noise `w_t` with a declared sub-Gaussian variance proxy.
#[derive(Clone)]
pub enum DtNoise {
    /// `N(0, variance·I)`; proxy equals the variance.
    Gaussian { variance: f64 },
    /// Independent coordinates uniform on `[-a, a]`. Each coordinate has
    /// range `2a`, so Hoeffding's lemma gives the proxy `a²` for every
    /// direction regardless of dimension.
    UniformBox { half_width: f64 },
    /// Independent coordinates `N(0, variance)` conditioned on `|w_i| ≤ bound`;
    /// symmetric truncation cannot increase `E cosh(λ w_i)`, so the proxy is
    /// the untruncated variance.
    TruncatedGaussian { variance: f64, bound: f64 },
    /// User sampler with a user-declared proxy.
    Custom { proxy: f64, sampler: CustomSampler },
    /// No noise. The proxy reported is 0 and the sampler writes zeros.
    Zero,
}

impl DtNoise {
    pub fn proxy(&self) -> f64 {
        match self {
            DtNoise::Gaussian { variance } => *variance,
            DtNoise::UniformBox { half_width } => half_width * half_width,
            DtNoise::TruncatedGaussian { variance, .. } => *variance,
            DtNoise::Custom { proxy, .. } => *proxy,
            DtNoise::Zero => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DtNoise::Gaussian { variance } => *variance > 0.0,
            DtNoise::UniformBox { half_width } => *half_width > 0.0,
            DtNoise::TruncatedGaussian { variance, bound } => *variance > 0.0 && *bound > 0.0,
            DtNoise::Custom { proxy, .. } => *proxy > 0.0,
            DtNoise::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(domain("noise parameters must be positive"))
        }
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            DtNoise::Gaussian { variance } => {
                fill_standard_normal(rng, out);
                let s = variance.sqrt();
                out.iter_mut().for_each(|v| *v *= s);
            }
            DtNoise::UniformBox { half_width } => {
                for o in out.iter_mut() {
                    *o = rng.random_range(-*half_width..=*half_width);
                }
            }
            DtNoise::TruncatedGaussian { variance, bound } => {
                let s = variance.sqrt();
                for o in out.iter_mut() {
                    *o = loop {
                        let z: f64 = rng.sample::<f64, _>(StandardNormal) * s;
                        if z.abs() <= *bound {
                            break z;
                        }
                    };
                }
            }
            DtNoise::Custom { sampler, .. } => sampler(rng, out),
            DtNoise::Zero => out.fill(0.0),
        }
    }
}

impl fmt::Debug for DtNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DtNoise::Gaussian { variance } => write!(f, "Gaussian({variance})"),
            DtNoise::UniformBox { half_width } => write!(f, "UniformBox({half_width})"),
            DtNoise::TruncatedGaussian { variance, bound } => {
                write!(f, "TruncatedGaussian({variance}, {bound})")
            }
            DtNoise::Custom { proxy, .. } => write!(f, "Custom(proxy = {proxy})"),
            DtNoise::Zero => write!(f, "Zero"),
        }
    }
}

/// Noise paired with a [`crate::model::System`] of the same time domain.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    Ct(CtNoise),
    Dt(DtNoise),
}
