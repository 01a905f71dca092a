//! Safe sets as conjunctions of erodable constraints.
//!
//! Erosion by an ℓ₂ ball of radius `r` acts per constraint: a half-space
//! `a·x ≤ b` with `‖a‖ = 1` becomes `a·x ≤ b - r`, and the complement of a
//! disk on a coordinate projection becomes the complement of the disk
//! inflated by `r`. For these classes the per-constraint result is exactly
//! the Minkowski difference of the intersection or a subset of it, so the
//! eroded set is never larger than the true erosion. Projected disks use the
//! full-state ball, which dominates the projected deviation since
//! `‖proj(y)‖ ≤ ‖y‖`.
//!
//! Constraints are closed: boundary points are inside.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::TubeCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// `normal · x ≤ offset` with a unit normal.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `‖x[indices] - center‖ ≥ radius`.
    DiskComplement {
        indices: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
    },
}

impl Constraint {
    /// `a · x ≤ b`; the pair is rescaled so that `‖a‖ = 1`.
    pub fn half_space(a: Vec<f64>, b: f64) -> Result<Self> {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite() && b.is_finite()) {
            return Err(domain("half-space normal must be nonzero and finite"));
        }
        Ok(Constraint::HalfSpace {
            normal: a.into_iter().map(|v| v / norm).collect(),
            offset: b / norm,
        })
    }

    /// `x[i] ≤ value` in a `dim`-dimensional state.
    pub fn upper_bound(dim: usize, i: usize, value: f64) -> Result<Self> {
        let mut a = vec![0.0; dim];
        *a.get_mut(i).ok_or_else(|| domain("coordinate index out of range"))? = 1.0;
        Self::half_space(a, value)
    }

    /// `x[i] ≥ value`.
    pub fn lower_bound(dim: usize, i: usize, value: f64) -> Result<Self> {
        let mut a = vec![0.0; dim];
        *a.get_mut(i).ok_or_else(|| domain("coordinate index out of range"))? = -1.0;
        Self::half_space(a, -value)
    }

    /// `x[i] - x[j] ≥ value`.
    pub fn difference_lower_bound(dim: usize, i: usize, j: usize, value: f64) -> Result<Self> {
        if i >= dim || j >= dim || i == j {
            return Err(domain("difference constraint needs two distinct in-range coordinates"));
        }
        let mut a = vec![0.0; dim];
        a[i] = -1.0;
        a[j] = 1.0;
        Self::half_space(a, -value)
    }

    pub fn disk_complement(indices: Vec<usize>, center: Vec<f64>, radius: f64) -> Result<Self> {
        if indices.is_empty() || indices.len() != center.len() {
            return Err(domain("disk projection indices and center must match and be nonempty"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(domain(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Constraint::DiskComplement {
            indices,
            center,
            radius,
        })
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Constraint::HalfSpace { normal, .. } if normal.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                got: normal.len(),
            }),
            Constraint::DiskComplement { indices, .. } if indices.iter().any(|&i| i >= dim) => {
                Err(domain(format!("disk projection index out of range for dimension {dim}")))
            }
            _ => Ok(()),
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::HalfSpace { normal, offset } => {
                offset - normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            Constraint::DiskComplement {
                indices,
                center,
                radius,
            } => {
                let d = indices
                    .iter()
                    .zip(center)
                    .map(|(&i, c)| (x[i] - c) * (x[i] - c))
                    .sum::<f64>()
                    .sqrt();
                d - radius
            }
        }
    }

    pub fn erode(&self, r: f64) -> Self {
        match self {
            Constraint::HalfSpace { normal, offset } => Constraint::HalfSpace {
                normal: normal.clone(),
                offset: offset - r,
            },
            Constraint::DiskComplement {
                indices,
                center,
                radius,
            } => Constraint::DiskComplement {
                indices: indices.clone(),
                center: center.clone(),
                radius: radius + r,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeSet {
    pub dim: usize,
    pub label: String,
    pub constraints: Vec<Constraint>,
}

impl SafeSet {
    pub fn new(dim: usize, label: impl Into<String>, constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(domain("a safe set needs at least one constraint"));
        }
        for c in &constraints {
            c.check_dim(dim)?;
        }
        Ok(Self {
            dim,
            label: label.into(),
            constraints,
        })
    }

    /// `{x ∈ ℝ : |x| ≤ R}`.
    pub fn interval(radius: f64) -> Result<Self> {
        Self::new(
            1,
            format!("|x| <= {radius}"),
            vec![
                Constraint::upper_bound(1, 0, radius)?,
                Constraint::lower_bound(1, 0, -radius)?,
            ],
        )
    }

    /// Axis-aligned box `lower ≤ x ≤ upper`.
    pub fn boxed(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        let n = lower.len();
        let mut cs = Vec::with_capacity(2 * n);
        for i in 0..n {
            cs.push(Constraint::upper_bound(n, i, upper[i])?);
            cs.push(Constraint::lower_bound(n, i, lower[i])?);
        }
        Self::new(n, "box", cs)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_point(x)?;
        Ok(self.constraints.iter().all(|c| c.margin(x) >= 0.0))
    }

    /// Minimum signed boundary distance over all constraints.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| c.margin(x))
            .fold(f64::INFINITY, f64::min))
    }

    /// `self ⊖ B(r, 0)`.
    pub fn erode(&self, r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(domain(format!("erosion radius must be finite and ≥ 0, got {r}")));
        }
        Ok(Self {
            dim: self.dim,
            label: format!("{} eroded by {r}", self.label),
            constraints: self.constraints.iter().map(|c| c.erode(r)).collect(),
        })
    }
}

/// A safe set paired with a radius curve; `eroded_at(i)` is the set eroded
/// by the radius at grid index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErodedSet {
    pub base: SafeSet,
    pub radius_curve: TubeCurve,
}

impl ErodedSet {
    pub fn new(base: SafeSet, radius_curve: TubeCurve) -> Self {
        Self { base, radius_curve }
    }

    pub fn eroded_at(&self, index: usize) -> Result<SafeSet> {
        let r = *self
            .radius_curve
            .radii
            .get(index)
            .ok_or_else(|| Error::GridMismatch(format!("grid index {index} out of range")))?;
        self.base.erode(r)
    }

    pub fn eroded_at_time(&self, t: f64) -> Result<SafeSet> {
        let r = self
            .radius_curve
            .radius_at(t)
            .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not on the curve grid")))?;
        self.base.erode(r)
    }

    /// Whether `x` lies in the eroded set at grid index `index`.
    pub fn contains(&self, index: usize, x: &[f64]) -> Result<bool> {
        self.eroded_at(index)?.contains(x)
    }
}
