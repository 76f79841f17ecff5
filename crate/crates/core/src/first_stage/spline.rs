//! Cubic truncated-power spline bases and their tensor / additive combinations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of basis columns a design may have.
pub const DEFAULT_BASIS_CAP: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Tensor,
    Additive,
}

/// Cubic truncated-power basis `(1, z, z², z³, (z−t₁)³₊, …, (z−t_K)³₊)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub degree: usize,
    pub knots: Vec<f64>,
    pub domain: (f64, f64),
    pub interaction: Interaction,
}

impl SplineSpec {
    pub fn new(knots: Vec<f64>, domain: (f64, f64), interaction: Interaction) -> Result<Self> {
        let spec = Self { degree: 3, knots, domain, interaction };
        spec.validate()?;
        Ok(spec)
    }

    /// `count` knots equally spaced strictly inside `domain`.
    pub fn equally_spaced(count: usize, domain: (f64, f64), interaction: Interaction) -> Result<Self> {
        let (lo, hi) = domain;
        let step = (hi - lo) / (count + 1) as f64;
        let knots = (1..=count).map(|k| lo + k as f64 * step).collect();
        Self::new(knots, domain, interaction)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if self.degree != 3 {
            return Err(Error::Domain(format!("only cubic splines are supported, got degree {}", self.degree)));
        }
        if !(lo < hi) {
            return Err(Error::Domain(format!("empty spline domain [{lo}, {hi}]")));
        }
        if self.knots.iter().any(|t| !(*t > lo && *t < hi)) {
            return Err(Error::Domain("knots must lie strictly inside the domain".into()));
        }
        if self.knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("knots must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Length of the univariate basis.
    pub fn univariate_len(&self) -> usize {
        4 + self.knots.len()
    }

    /// Number of columns for a `d`-dimensional input (saturating on overflow).
    pub fn design_len(&self, d: usize) -> usize {
        let k = self.univariate_len();
        match self.interaction {
            Interaction::Additive => d * k,
            Interaction::Tensor => {
                let mut total: usize = 1;
                for _ in 0..d {
                    total = total.saturating_mul(k);
                }
                total
            }
        }
    }

    pub fn basis(&self, zrow: &[f64], cap: usize) -> Result<Vec<f64>> {
        match self.interaction {
            Interaction::Tensor => tensor_basis(zrow, self, cap),
            Interaction::Additive => Ok(additive_basis(zrow, self)),
        }
    }
}

/// Univariate basis at `z`. The hinge is closed at zero: `(t − t)³₊ = 0`.
pub fn spline_basis_1d(z: f64, spec: &SplineSpec) -> Vec<f64> {
    let mut b = Vec::with_capacity(spec.univariate_len());
    b.extend_from_slice(&[1.0, z, z * z, z * z * z]);
    for &t in &spec.knots {
        let h = z - t;
        b.push(if h > 0.0 { h * h * h } else { 0.0 });
    }
    b
}

/// Full outer product of the per-coordinate bases, first coordinate varying slowest.
pub fn tensor_basis(zrow: &[f64], spec: &SplineSpec, cap: usize) -> Result<Vec<f64>> {
    let size = spec.design_len(zrow.len());
    if size > cap {
        return Err(Error::BasisTooLarge { size, cap });
    }
    let mut out = vec![1.0];
    for &z in zrow {
        let b = spline_basis_1d(z, spec);
        let mut next = Vec::with_capacity(out.len() * b.len());
        for &prefix in &out {
            next.extend(b.iter().map(|v| prefix * v));
        }
        out = next;
    }
    Ok(out)
}

/// Concatenation of the per-coordinate bases in coordinate order.
pub fn additive_basis(zrow: &[f64], spec: &SplineSpec) -> Vec<f64> {
    zrow.iter().flat_map(|&z| spline_basis_1d(z, spec)).collect()
}
