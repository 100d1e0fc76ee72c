//! Conformal charts of the space forms `Q^p(k)`.
//!
//! For `k != 0` the chart is the stereographic (k > 0) or Poincaré-ball
//! (k < 0) model `g = 4/(1 + k|x|^2)^2 δ`, which has sectional curvature
//! exactly `k`. For `k = 0` it is the identity chart.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Conformal chart of a space form, restricted to the coordinate ball of
/// the given radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceFormChart {
    pub dim: usize,
    pub curvature: f64,
    pub radius: f64,
}

impl SpaceFormChart {
    /// Chart with the default radius: `0.5/sqrt(|k|)` for `k != 0`, and 1
    /// for the flat chart.
    pub fn new(dim: usize, curvature: f64) -> Result<Self> {
        Self::with_radius(dim, curvature, Self::default_radius(curvature))
    }

    pub fn default_radius(curvature: f64) -> f64 {
        if curvature == 0.0 {
            1.0
        } else {
            0.5 / curvature.abs().sqrt()
        }
    }

    pub fn with_radius(dim: usize, curvature: f64, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(GeomError::Invalid("space form dimension must be >= 1".into()));
        }
        if !curvature.is_finite() || !(radius > 0.0) {
            return Err(GeomError::Invalid(format!(
                "bad chart parameters: curvature {curvature}, radius {radius}"
            )));
        }
        if curvature < 0.0 && radius >= 1.0 / (-curvature).sqrt() {
            return Err(GeomError::Invalid(format!(
                "chart radius {radius} reaches the ideal boundary of Q({curvature})"
            )));
        }
        Ok(Self { dim, curvature, radius })
    }

    /// Half-width of the largest coordinate cube inside the chart ball.
    pub fn box_half_width(&self) -> f64 {
        self.radius / (self.dim as f64).sqrt()
    }

    /// Conformal factor `σ(x)` with `g = σ(x) δ`.
    pub fn conformal_factor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(GeomError::WrongShape(format!(
                "expected a {}-dimensional point, got {}",
                self.dim,
                x.len()
            )));
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2.sqrt() >= self.radius {
            return Err(GeomError::Domain {
                value: r2.sqrt(),
                domain: format!("chart ball of radius {}", self.radius),
            });
        }
        Ok(self.factor_unchecked(r2))
    }

    /// Conformal factor from `|x|^2` without bounds checks.
    #[inline]
    pub(crate) fn factor_unchecked(&self, r2: f64) -> f64 {
        if self.curvature == 0.0 {
            1.0
        } else {
            let d = 1.0 + self.curvature * r2;
            4.0 / (d * d)
        }
    }
}

/// Metric matrix of the chart at `x`.
pub fn space_form_metric(chart: &SpaceFormChart, x: &[f64]) -> Result<DMatrix<f64>> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if chart.curvature != 0.0 && 1.0 + chart.curvature * r2 <= 0.0 {
        return Err(GeomError::Domain {
            value: r2.sqrt(),
            domain: format!("1 + k|x|^2 > 0 with k = {}", chart.curvature),
        });
    }
    let sigma = chart.conformal_factor(x)?;
    Ok(DMatrix::identity(chart.dim, chart.dim) * sigma)
}
