//! Tensor-product sample grids over coordinate boxes.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// How to lay out sample points inside a coordinate box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    /// Fraction of each axis width kept clear at both ends.
    pub margin_fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points_per_axis: 5, margin_fraction: 0.1 }
    }
}

/// Tensor-product grid given by one coordinate list per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    axes: Vec<Vec<f64>>,
}

impl SampleGrid {
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(GeomError::Invalid("grid axes must be non-empty".into()));
        }
        Ok(Self { axes })
    }

    /// Evenly spaced points on each axis of `bounds`, inset by
    /// `max(margin_fraction * width, min_margin)` at both ends.
    pub fn tensor(bounds: &[(f64, f64)], spec: GridSpec, min_margin: f64) -> Result<Self> {
        if spec.points_per_axis == 0 {
            return Err(GeomError::Invalid("points_per_axis must be >= 1".into()));
        }
        let mut axes = Vec::with_capacity(bounds.len());
        for &(lo, hi) in bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(GeomError::Invalid(format!("grid needs a finite box, got [{lo}, {hi}]")));
            }
            let inset = (spec.margin_fraction * (hi - lo)).max(min_margin);
            let (a, b) = (lo + inset, hi - inset);
            if a > b {
                return Err(GeomError::Invalid(format!(
                    "margin {inset} leaves no room on axis [{lo}, {hi}]"
                )));
            }
            let k = spec.points_per_axis;
            let axis = if k == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
            };
            axes.push(axis);
        }
        Self::from_axes(axes)
    }

    /// Single point.
    pub fn point(x: &[f64]) -> Self {
        Self { axes: x.iter().map(|&v| vec![v]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points, last axis varying fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.axes.len()];
        loop {
            out.push(idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect());
            let mut d = self.axes.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn describe(&self) -> String {
        let per_axis: Vec<String> = self
            .axes
            .iter()
            .map(|a| match a.len() {
                1 => format!("{{{:.4}}}", a[0]),
                k => format!("{k}@[{:.4},{:.4}]", a[0], a[k - 1]),
            })
            .collect();
        format!("tensor grid {} points: {}", self.len(), per_axis.join(" x "))
    }
}
