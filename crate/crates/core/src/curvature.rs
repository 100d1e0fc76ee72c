//! Curvature of coordinate metrics.
//!
//! Two independent routes are provided:
//!
//! * [`curvature_oracle`] works for any [`CoordinateMetric`]: Christoffel
//!   symbols come from second-order central differences of `g`, and the
//!   Riemann tensor from central differences of the Christoffel symbols.
//! * [`mwp_sectional_closed_form`] evaluates the sectional curvatures of a
//!   multiply warped product `ds^2 + φ_1(s)^2 g_1 + φ_2(s)^2 g_2` over
//!   space-form fibers directly from the warping functions.
//!
//! # Conventions
//!
//! The curvature operator is `R(X,Y)Z = ∇_X ∇_Y Z - ∇_Y ∇_X Z - ∇_[X,Y] Z`
//! and the (0,4) tensor is `R(X,Y,Z,W) = <R(X,Y)Z, W>`. With this ordering
//! a space form of curvature `k` has `R(X,Y,Z,W) = k(<Y,Z><X,W> - <X,Z><Y,W>)`,
//! the sectional curvature is `R(X,Y,Y,X)/(|X|^2|Y|^2 - <X,Y>^2)`, and the
//! Ricci tensor is the trace `Ric(Y,Z) = Σ_i R(e_i,Y,Z,e_i)` over a
//! g-orthonormal frame. The ordering is forced: tracing the Gauss equation of
//! a hypersurface in `I ×_f Q^n(c)` over the first and last slots reproduces
//! the usual Ricci identity `-((n-1)a + |T|^2 b)<X,Y> - …` term by term,
//! while any other pairing of slots flips the sign of the `a` term.
//!
//! Components are stored flat and row-major: `R_ijkl` lives at
//! `((i*n + j)*n + k)*n + l`, and `Γ^k_ij` at `(k*n + i)*n + j`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::scalarfun::{IntervalDomain, SmoothFn};
use crate::spaceform::SpaceFormChart;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// How finite-difference curvature is refined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extrapolation {
    /// Plain second-order central differences at the given step.
    None,
    /// `(4 D(h) - D(2h)) / 3` applied to the metric derivatives, cancelling
    /// the `h^2` truncation term. The stencil reaches `2h` from the point.
    #[default]
    Richardson,
}

/// Something that produces metric components at coordinate points.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes the row-major `dim x dim` metric matrix at `x` into `out`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> MetricField for FnField<F>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let g = (self.f)(x)?;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i * self.dim + j] = g[(i, j)];
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    ClosedForm,
    FiniteDifferenceOnly,
}

/// Metric tensor field on a coordinate box.
#[derive(Clone)]
pub struct CoordinateMetric {
    field: Arc<dyn MetricField>,
    bounds: Vec<(f64, f64)>,
    smoothness: Smoothness,
}

impl std::fmt::Debug for CoordinateMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoordinateMetric")
            .field("dim", &self.dim())
            .field("bounds", &self.bounds)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl CoordinateMetric {
    pub fn new(field: Arc<dyn MetricField>, bounds: Vec<(f64, f64)>, smoothness: Smoothness) -> Result<Self> {
        if bounds.len() != field.dim() {
            return Err(GeomError::WrongShape(format!(
                "{} bounds for a {}-dimensional metric",
                bounds.len(),
                field.dim()
            )));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(GeomError::Invalid(format!("empty coordinate box {bounds:?}")));
        }
        Ok(Self { field, bounds, smoothness })
    }

    /// Metric from a closure returning the full matrix.
    pub fn from_fn<F>(dim: usize, bounds: Vec<(f64, f64)>, smoothness: Smoothness, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnField { dim, f }), bounds, smoothness)
    }

    /// Euclidean metric on a box.
    pub fn flat(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let n = bounds.len();
        Self::from_fn(n, bounds, Smoothness::ClosedForm, move |_| Ok(DMatrix::identity(n, n)))
    }

    /// Conformal chart of a space form on the largest cube inside its ball.
    pub fn space_form(chart: SpaceFormChart) -> Result<Self> {
        let h = chart.box_half_width();
        Self::from_fn(chart.dim, vec![(-h, h); chart.dim], Smoothness::ClosedForm, move |x| {
            crate::spaceform::space_form_metric(&chart, x)
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn field(&self) -> &Arc<dyn MetricField> {
        &self.field
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.field.eval_into(x, out)
    }

    pub fn matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(GeomError::WrongShape(format!("expected {n} coordinates, got {}", x.len())));
        }
        let mut buf = vec![0.0; n * n];
        self.field.eval_into(x, &mut buf)?;
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    /// Fails unless every coordinate of `x` is at least `margin` inside the box.
    pub fn check_margin(&self, x: &[f64], margin: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GeomError::WrongShape(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        for (&v, &(lo, hi)) in x.iter().zip(&self.bounds) {
            if v - margin < lo || v + margin > hi {
                return Err(GeomError::Margin { point: x.to_vec(), margin });
            }
        }
        Ok(())
    }
}

/// One fiber `(N_i^{p_i}, g_i)` of a multiply warped product with warping `φ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    pub dim: usize,
    pub curvature: f64,
    pub warping: SmoothFn,
    /// Chart ball radius; defaults to [`SpaceFormChart::default_radius`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl FiberSpec {
    pub fn new(dim: usize, curvature: f64, warping: SmoothFn) -> Self {
        Self { dim, curvature, warping, radius: None }
    }

    pub fn chart(&self) -> Result<SpaceFormChart> {
        let radius = self.radius.unwrap_or_else(|| SpaceFormChart::default_radius(self.curvature));
        SpaceFormChart::with_radius(self.dim, self.curvature, radius)
    }
}

/// `J ×_{φ_1} N_1 ×_{φ_2} N_2` with at most two space-form fibers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwpSpec {
    pub base: IntervalDomain,
    pub fibers: Vec<FiberSpec>,
}

impl MwpSpec {
    pub fn total_dim(&self) -> usize {
        1 + self.fibers.iter().map(|f| f.dim).sum::<usize>()
    }

    /// Coordinate offset of fiber `i` in `(s, x^(1), x^(2))`.
    pub fn fiber_offset(&self, i: usize) -> usize {
        1 + self.fibers[..i].iter().map(|f| f.dim).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fibers.is_empty() || self.fibers.len() > 2 {
            return Err(GeomError::WrongShape(format!(
                "expected 1 or 2 fibers, got {}",
                self.fibers.len()
            )));
        }
        if !self.base.is_bounded() {
            return Err(GeomError::Invalid(format!(
                "base interval {} must be bounded; truncate it to a window",
                self.base
            )));
        }
        for fiber in &self.fibers {
            fiber.chart()?;
            fiber.warping.check_positive_on(&self.base, 64)?;
        }
        Ok(())
    }
}

struct MwpField {
    base: IntervalDomain,
    fibers: Vec<(SpaceFormChart, SmoothFn)>,
    dim: usize,
}

impl MetricField for MwpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim;
        let s = x[0];
        if !self.base.contains(s) {
            return Err(GeomError::Domain { value: s, domain: self.base.to_string() });
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = 1.0;
        let mut offset = 1;
        for (chart, warping) in &self.fibers {
            let phi = warping.value(s);
            if !(phi > 0.0) {
                return Err(GeomError::Positivity { t: s, value: phi });
            }
            let sigma = chart.conformal_factor(&x[offset..offset + chart.dim])?;
            let w = phi * phi * sigma;
            for a in offset..offset + chart.dim {
                out[a * n + a] = w;
            }
            offset += chart.dim;
        }
        Ok(())
    }
}

/// Block-diagonal metric `ds^2 + φ_1(s)^2 g_1 + φ_2(s)^2 g_2` in product
/// coordinates `(s, x^(1), x^(2))`; fibers use their conformal charts.
pub fn build_mwp_metric(spec: &MwpSpec) -> Result<CoordinateMetric> {
    spec.validate()?;
    let mut bounds = vec![(spec.base.t_min, spec.base.t_max)];
    let mut fibers = Vec::new();
    for fiber in &spec.fibers {
        let chart = fiber.chart()?;
        let h = chart.box_half_width();
        bounds.extend(std::iter::repeat((-h, h)).take(chart.dim));
        fibers.push((chart, fiber.warping.clone()));
    }
    let field = MwpField { base: spec.base, fibers, dim: spec.total_dim() };
    CoordinateMetric::new(Arc::new(field), bounds, Smoothness::ClosedForm)
}

/// Plane classes of a multiply warped product; fiber indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneClass {
    BaseFiber(usize),
    WithinFiber(usize),
    Mixed,
}

/// Sectional curvature of a plane class at base parameter `s`:
/// `-φ_i''/φ_i`, `(k_i - φ_i'^2)/φ_i^2`, or `-φ_1'φ_2'/(φ_1φ_2)`.
pub fn mwp_sectional_closed_form(spec: &MwpSpec, s: f64, class: PlaneClass) -> Result<f64> {
    if !spec.base.contains(s) {
        return Err(GeomError::Domain { value: s, domain: spec.base.to_string() });
    }
    let fiber = |i: usize| {
        spec.fibers
            .get(i)
            .ok_or_else(|| GeomError::PlaneClass(format!("fiber {i} does not exist")))
    };
    let positive = |f: &SmoothFn| {
        let v = f.value(s);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(GeomError::Positivity { t: s, value: v })
        }
    };
    match class {
        PlaneClass::BaseFiber(i) => {
            let w = &fiber(i)?.warping;
            Ok(-w.d2(s) / positive(w)?)
        }
        PlaneClass::WithinFiber(i) => {
            let fb = fiber(i)?;
            if fb.dim < 2 {
                return Err(GeomError::PlaneClass(format!(
                    "fiber {i} is {}-dimensional and has no tangent 2-planes",
                    fb.dim
                )));
            }
            let phi = positive(&fb.warping)?;
            let dphi = fb.warping.d1(s);
            Ok((fb.curvature - dphi * dphi) / (phi * phi))
        }
        PlaneClass::Mixed => {
            let (a, b) = (&fiber(0)?.warping, &fiber(1)?.warping);
            Ok(-a.d1(s) * b.d1(s) / (positive(a)? * positive(b)?))
        }
    }
}

/// Curvature data at a single point, in coordinate components.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub dim: usize,
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub metric_inv: DMatrix<f64>,
    /// `Γ^k_ij` at `(k*n + i)*n + j`.
    pub christoffel: Vec<f64>,
    /// `R_ijkl = <R(∂_i,∂_j)∂_k, ∂_l>`.
    pub riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
}

#[inline]
fn idx4(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * n + j) * n + k) * n + l
}

/// Inverse of a symmetric positive definite row-major matrix through its
/// Cholesky factor.
fn invert_spd(g: &[f64], n: usize, at: &[f64]) -> Result<Vec<f64>> {
    let singular = || GeomError::Singular(at.to_vec());
    // Lower factor L with g = L L^T.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = g[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(singular());
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = g[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    // L^{-1}, lower triangular.
    let mut li = vec![0.0; n * n];
    for j in 0..n {
        li[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut v = 0.0;
            for k in j..i {
                v -= l[i * n + k] * li[k * n + j];
            }
            li[i * n + j] = v / l[i * n + i];
        }
    }
    // g^{-1} = L^{-T} L^{-1}
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut v = 0.0;
            for k in j..n {
                v += li[k * n + i] * li[k * n + j];
            }
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// `Γ_{l,ij} = ⟨∇_i ∂_j, ∂_l⟩` from `dg[m*n*n + a*n + b] = ∂_m g_ab`.
fn christoffel_first_kind(dg: &[f64], n: usize) -> Vec<f64> {
    let nn = n * n;
    let mut first = vec![0.0; n * nn];
    for l in 0..n {
        for i in 0..n {
            for j in i..n {
                let v = 0.5 * (dg[i * nn + j * n + l] + dg[j * nn + i * n + l] - dg[l * nn + i * n + j]);
                first[l * nn + i * n + j] = v;
                first[l * nn + j * n + i] = v;
            }
        }
    }
    first
}

/// `Γ^k_ij = g^{kl} Γ_{l,ij}`.
fn raise_first_kind(ginv: &[f64], first: &[f64], n: usize) -> Vec<f64> {
    let nn = n * n;
    let mut gamma = vec![0.0; n * nn];
    for k in 0..n {
        for l in 0..n {
            let gkl = ginv[k * n + l];
            if gkl == 0.0 {
                continue;
            }
            let src = &first[l * nn..(l + 1) * nn];
            let dst = &mut gamma[k * nn..(k + 1) * nn];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += gkl * s;
            }
        }
    }
    gamma
}

/// `Γ^k_ij` from the metric inverse and first derivatives.
fn christoffel_from(ginv: &[f64], dg: &[f64], n: usize) -> Vec<f64> {
    raise_first_kind(ginv, &christoffel_first_kind(dg, n), n)
}

/// Metric, its inverse and the Christoffel symbols at `y`.
fn christoffel_at(metric: &CoordinateMetric, y: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let nn = n * n;
    let mut g = vec![0.0; nn];
    metric.eval_into(y, &mut g)?;
    let ginv = invert_spd(&g, n, y)?;
    let mut dg = vec![0.0; n * nn];
    let mut yp = y.to_vec();
    let mut gp = vec![0.0; nn];
    let mut gm = vec![0.0; nn];
    let inv2h = 0.5 / h;
    for m in 0..n {
        yp[m] = y[m] + h;
        metric.eval_into(&yp, &mut gp)?;
        yp[m] = y[m] - h;
        metric.eval_into(&yp, &mut gm)?;
        yp[m] = y[m];
        for ab in 0..nn {
            dg[m * nn + ab] = (gp[ab] - gm[ab]) * inv2h;
        }
    }
    let gamma = christoffel_from(&ginv, &dg, n);
    Ok((g, ginv, gamma))
}

/// Metric values at `x`, `x ± h e_a` and `x ± h e_a ± h e_b` (`a < b`),
/// each evaluated once.
struct MetricStencil {
    n: usize,
    values: Vec<f64>,
}

impl MetricStencil {
    fn sample(metric: &CoordinateMetric, x: &[f64], h: f64) -> Result<Self> {
        let n = x.len();
        let nn = n * n;
        let count = 1 + 2 * n + 2 * n * n.saturating_sub(1);
        let mut values = vec![0.0; count * nn];
        let mut y = x.to_vec();
        metric.eval_into(&y, &mut values[..nn])?;
        for m in 0..n {
            for sign in [false, true] {
                y[m] = if sign { x[m] + h } else { x[m] - h };
                let id = Self::axis_id(m, sign);
                metric.eval_into(&y, &mut values[id * nn..(id + 1) * nn])?;
            }
            y[m] = x[m];
        }
        for a in 0..n {
            for b in (a + 1)..n {
                for (pa, pb) in [(false, false), (false, true), (true, false), (true, true)] {
                    y[a] = if pa { x[a] + h } else { x[a] - h };
                    y[b] = if pb { x[b] + h } else { x[b] - h };
                    let id = Self::pair_id(n, a, b, pa, pb);
                    metric.eval_into(&y, &mut values[id * nn..(id + 1) * nn])?;
                }
                y[a] = x[a];
                y[b] = x[b];
            }
        }
        Ok(Self { n, values })
    }

    fn axis_id(m: usize, plus: bool) -> usize {
        1 + 2 * m + plus as usize
    }

    fn pair_id(n: usize, a: usize, b: usize, pa: bool, pb: bool) -> usize {
        // Pairs (a, b) with a < b in lexicographic order.
        let index = a * (2 * n - a - 1) / 2 + (b - a - 1);
        1 + 2 * n + 4 * index + 2 * pa as usize + pb as usize
    }

    fn slot(&self, id: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[id * nn..(id + 1) * nn]
    }

    /// `dg[m*n*n + a*n + b] = ∂_m g_ab`.
    fn first_derivatives(&self, h: f64) -> Vec<f64> {
        let n = self.n;
        let nn = n * n;
        let inv2h = 0.5 / h;
        let mut dg = vec![0.0; n * nn];
        for m in 0..n {
            let (p, q) = (self.slot(Self::axis_id(m, true)), self.slot(Self::axis_id(m, false)));
            for ab in 0..nn {
                dg[m * nn + ab] = (p[ab] - q[ab]) * inv2h;
            }
        }
        dg
    }

    /// `ddg[(p*n + q)*n*n + a*n + b] = ∂_p ∂_q g_ab`.
    fn second_derivatives(&self, h: f64) -> Vec<f64> {
        let n = self.n;
        let nn = n * n;
        let inv_h2 = 1.0 / (h * h);
        let inv_4h2 = 0.25 * inv_h2;
        let mut ddg = vec![0.0; nn * nn];
        let center = self.slot(0);
        for p in 0..n {
            let (plus, minus) = (self.slot(Self::axis_id(p, true)), self.slot(Self::axis_id(p, false)));
            let dst = (p * n + p) * nn;
            for ab in 0..nn {
                ddg[dst + ab] = (plus[ab] - 2.0 * center[ab] + minus[ab]) * inv_h2;
            }
            for q in (p + 1)..n {
                let pp = self.slot(Self::pair_id(n, p, q, true, true));
                let pm = self.slot(Self::pair_id(n, p, q, true, false));
                let mp = self.slot(Self::pair_id(n, p, q, false, true));
                let mm = self.slot(Self::pair_id(n, p, q, false, false));
                for ab in 0..nn {
                    let v = (pp[ab] - pm[ab] - mp[ab] + mm[ab]) * inv_4h2;
                    ddg[(p * n + q) * nn + ab] = v;
                    ddg[(q * n + p) * nn + ab] = v;
                }
            }
        }
        ddg
    }
}

/// Metric matrix and Christoffel symbols `Γ^k_ij` (flat index `(k*n+i)*n+j`)
/// at `x` by central differences of the metric.
pub fn christoffel_symbols(metric: &CoordinateMetric, x: &[f64], step: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(step > 0.0) {
        return Err(GeomError::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    metric.check_margin(x, step)?;
    let n = x.len();
    let (g, _, gamma) = christoffel_at(metric, x, step)?;
    Ok((DMatrix::from_row_slice(n, n, &g), gamma))
}

/// Finite-difference curvature of `metric` at `x` with central step `step`.
///
/// Requires `x` to be at least `2·step` inside the coordinate box.
pub fn curvature_oracle(metric: &CoordinateMetric, x: &[f64], step: f64) -> Result<CurvatureBundle> {
    curvature_oracle_with(metric, x, step, Extrapolation::None)
}

/// [`curvature_oracle`] with an explicit refinement. Richardson uses the
/// steps `step` and `2·step`, which the margin requirement already covers.
pub fn curvature_oracle_with(
    metric: &CoordinateMetric,
    x: &[f64],
    step: f64,
    extrapolation: Extrapolation,
) -> Result<CurvatureBundle> {
    if !(step > 0.0) {
        return Err(GeomError::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    metric.check_margin(x, 2.0 * step)?;
    let (g, ginv, gamma, riemann) = raw_curvature(metric, x, step, extrapolation)?;
    Ok(assemble_bundle(x, g, ginv, gamma, riemann))
}

type RawCurvature = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Metric with first and second coordinate derivatives, from central
/// differences at `step`, or from the `2 step`/`step` Richardson combination.
fn metric_jet(metric: &CoordinateMetric, x: &[f64], step: f64, extrapolation: Extrapolation) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let fine = MetricStencil::sample(metric, x, step)?;
    let g = fine.slot(0).to_vec();
    let mut dg = fine.first_derivatives(step);
    let mut ddg = fine.second_derivatives(step);
    if extrapolation == Extrapolation::Richardson {
        let coarse = MetricStencil::sample(metric, x, 2.0 * step)?;
        let combine = |f: &mut [f64], c: Vec<f64>| {
            for (f, c) in f.iter_mut().zip(c) {
                *f = (4.0 * *f - c) / 3.0;
            }
        };
        combine(&mut dg, coarse.first_derivatives(2.0 * step));
        combine(&mut ddg, coarse.second_derivatives(2.0 * step));
    }
    Ok((g, dg, ddg))
}

/// Metric, inverse, `Γ` and `R_ijkl` (flat row-major).
fn raw_curvature(metric: &CoordinateMetric, x: &[f64], step: f64, extrapolation: Extrapolation) -> Result<RawCurvature> {
    let n = x.len();
    let nn = n * n;
    let (g, dg, ddg) = metric_jet(metric, x, step, extrapolation)?;
    let ginv = invert_spd(&g, n, x)?;
    let first = christoffel_first_kind(&dg, n);
    let gamma = raise_first_kind(&ginv, &first, n);
    let d2 = |p: usize, q: usize, a: usize, b: usize| ddg[(p * n + q) * nn + a * n + b];

    // R_ijkl = ½(∂_i∂_k g_jl + ∂_j∂_l g_ik - ∂_i∂_l g_jk - ∂_j∂_k g_il)
    //        + Γ_{p,jl} Γ^p_ik - Γ_{p,il} Γ^p_jk,
    // filled for i < j, k < l and extended by antisymmetry.
    let mut riemann = vec![0.0; nn * nn];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                for l in (k + 1)..n {
                    let mut v = 0.5 * (d2(i, k, j, l) + d2(j, l, i, k) - d2(i, l, j, k) - d2(j, k, i, l));
                    for p in 0..n {
                        v += first[p * nn + j * n + l] * gamma[p * nn + i * n + k]
                            - first[p * nn + i * n + l] * gamma[p * nn + j * n + k];
                    }
                    riemann[idx4(n, i, j, k, l)] = v;
                    riemann[idx4(n, j, i, k, l)] = -v;
                    riemann[idx4(n, i, j, l, k)] = -v;
                    riemann[idx4(n, j, i, l, k)] = v;
                }
            }
        }
    }

    Ok((g, ginv, gamma, riemann))
}

fn assemble_bundle(x: &[f64], g: Vec<f64>, ginv: Vec<f64>, gamma: Vec<f64>, riemann: Vec<f64>) -> CurvatureBundle {
    let n = x.len();
    // Ric_jk = Σ_a R(e_a, ∂_j, ∂_k, e_a) = g^{il} R_ijkl for any orthonormal {e_a}.
    let mut ric = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let block = &riemann[idx4(n, i, j, 0, 0)..idx4(n, i, j, n - 1, n - 1) + 1];
            let gi = &ginv[i * n..(i + 1) * n];
            for k in 0..n {
                let row = &block[k * n..(k + 1) * n];
                ric[j * n + k] += row.iter().zip(gi).map(|(r, g)| r * g).sum::<f64>();
            }
        }
    }
    let ricci = DMatrix::from_row_slice(n, n, &ric);
    let metric_m = DMatrix::from_row_slice(n, n, &g);
    let metric_inv = DMatrix::from_row_slice(n, n, &ginv);
    let scalar = (0..n)
        .flat_map(|j| (0..n).map(move |k| (j, k)))
        .map(|(j, k)| metric_inv[(j, k)] * ricci[(j, k)])
        .sum();

    CurvatureBundle {
        dim: n,
        point: x.to_vec(),
        metric: metric_m,
        metric_inv,
        christoffel: gamma,
        riemann,
        ricci,
        scalar,
    }
}

/// `W = R - P ∧ g` with Schouten tensor `P = (Ric - scal/(2(n-1)) g)/(n-2)`
/// and `(h ∧ g)_ijkl = h_il g_jk + h_jk g_il - h_ik g_jl - h_jl g_ik`, which
/// matches the slot order of `R_ijkl`. Zero below dimension 4.
fn weyl_tensor(riemann: &[f64], ricci: &DMatrix<f64>, scalar: f64, g: &DMatrix<f64>) -> Vec<f64> {
    let n = g.nrows();
    let mut w = vec![0.0; riemann.len()];
    if n < 4 {
        return w;
    }
    let nf = n as f64;
    let p = (ricci - g * (scalar / (2.0 * (nf - 1.0)))) / (nf - 2.0);
    // Row-major copies; both are symmetric.
    let p: Vec<f64> = p.iter().copied().collect();
    let gs: Vec<f64> = g.iter().copied().collect();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (gjk, pjk, gik, pik) = (gs[j * n + k], p[j * n + k], gs[i * n + k], p[i * n + k]);
                let base = idx4(n, i, j, k, 0);
                for l in 0..n {
                    let kn = p[i * n + l] * gjk + pjk * gs[i * n + l] - pik * gs[j * n + l] - p[j * n + l] * gik;
                    w[base + l] = riemann[base + l] - kn;
                }
            }
        }
    }
    w
}

/// g-orthonormal frame as matrix columns, by Gram–Schmidt over the coordinate
/// vectors with pivoting on the largest remaining norm (ties to the lowest
/// coordinate index).
pub fn orthonormal_frame(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    // Candidate columns start as coordinate vectors and are kept
    // g-orthogonal to the accepted frame vectors.
    let mut cand = DMatrix::<f64>::identity(n, n);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut frame = DMatrix::zeros(n, n);
    let quad = |v: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let mut r = 0.0;
            for j in 0..n {
                r += g[(i, j)] * v[j];
            }
            s += v[i] * r;
        }
        s
    };
    for col in 0..n {
        let mut best = (0, f64::NEG_INFINITY);
        for (pos, &c) in remaining.iter().enumerate() {
            let norm2 = quad(cand.column(c).as_slice());
            if norm2 > best.1 {
                best = (pos, norm2);
            }
        }
        let (pos, norm2) = best;
        if !(norm2 > 1e-300) {
            return Err(GeomError::Singular(vec![]));
        }
        let c = remaining.remove(pos);
        let e = cand.column(c) / norm2.sqrt();
        let ge = g * &e;
        for &r in &remaining {
            let proj = ge.dot(&cand.column(r));
            let mut v = cand.column_mut(r);
            v.axpy(-proj, &e, 1.0);
        }
        frame.set_column(col, &e);
    }
    Ok(frame)
}

/// Components `T(E_a, E_b, E_c, E_d)` of a (0,4) tensor in the frame whose
/// vectors are the columns of `frame`.
pub fn tensor4_in_frame(t: &[f64], frame: &DMatrix<f64>) -> Vec<f64> {
    let n = frame.nrows();
    let n3 = n * n * n;
    let mut cur = t.to_vec();
    let mut acc = vec![0.0; cur.len()];
    // Contract the leading slot into acc[a*n3 + rest] with contiguous axpy
    // passes, then rotate it to the back so the same loop handles every slot.
    for _ in 0..4 {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..n {
            let dst = &mut acc[a * n3..(a + 1) * n3];
            for i in 0..n {
                let f = frame[(i, a)];
                if f == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&cur[i * n3..(i + 1) * n3]) {
                    *d += f * s;
                }
            }
        }
        for a in 0..n {
            for rest in 0..n3 {
                cur[rest * n + a] = acc[a * n3 + rest];
            }
        }
    }
    cur
}

/// Index pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn index_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

/// Frame components `T(E_a, E_b, E_c, E_d)` with `a < b`, `c < d` of a
/// (0,4) tensor antisymmetric in each slot pair, as a matrix indexed by
/// [`index_pairs`]. Cheaper than [`tensor4_in_frame`] by working on
/// bivectors.
pub fn tensor4_pairs_in_frame(t: &[f64], frame: &DMatrix<f64>) -> DMatrix<f64> {
    let n = frame.nrows();
    let pairs = index_pairs(n);
    let m = pairs.len();
    let coord = DMatrix::from_fn(m, m, |p, q| {
        let ((i, j), (k, l)) = (pairs[p], pairs[q]);
        t[idx4(n, i, j, k, l)]
    });
    // bivector[(ij), (ab)] = E_a^i E_b^j - E_a^j E_b^i
    let bivector = DMatrix::from_fn(m, m, |p, q| {
        let ((i, j), (a, b)) = (pairs[p], pairs[q]);
        frame[(i, a)] * frame[(j, b)] - frame[(j, a)] * frame[(i, b)]
    });
    bivector.transpose() * coord * bivector
}

impl CurvatureBundle {
    #[inline]
    pub fn riemann_at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.riemann[idx4(self.dim, i, j, k, l)]
    }

    #[inline]
    pub fn christoffel_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.christoffel[(k * self.dim + i) * self.dim + j]
    }

    /// `R(X,Y,Z,W)` for coordinate vectors.
    pub fn riemann_form(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        contract4(&self.riemann, self.dim, x, y, z, w)
    }

    /// Weyl (0,4) tensor in the slot convention of `riemann`; all zero for
    /// `dim < 4`. Computed on each call.
    pub fn weyl(&self) -> Vec<f64> {
        weyl_tensor(&self.riemann, &self.ricci, self.scalar, &self.metric)
    }

    pub fn weyl_form(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        contract4(&self.weyl(), self.dim, x, y, z, w)
    }

    pub fn ricci_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim;
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| x[i] * self.ricci[(i, j)] * y[j]).sum()
    }

    /// Largest violation of `R_ijkl = -R_jikl = -R_ijlk = R_klij`.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.riemann_at(i, j, k, l);
                        worst = worst
                            .max((r + self.riemann_at(j, i, k, l)).abs())
                            .max((r + self.riemann_at(i, j, l, k)).abs())
                            .max((r - self.riemann_at(k, l, i, j)).abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest `|R_ijkl + R_jkil + R_kijl|`.
    pub fn bianchi_residual(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self.riemann_at(i, j, k, l) + self.riemann_at(j, k, i, l) + self.riemann_at(k, i, j, l);
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
        worst
    }

    /// Largest `|g^{il} W_ijkl|`.
    pub fn weyl_trace_residual(&self) -> f64 {
        let n = self.dim;
        let weyl = self.weyl();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for i in 0..n {
                    for l in 0..n {
                        v += self.metric_inv[(i, l)] * weyl[idx4(n, i, j, k, l)];
                    }
                }
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    pub fn sectional(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        sectional_curvature(self, &self.metric, x, y)
    }
}

fn contract4(t: &[f64], n: usize, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if y[j] == 0.0 {
                continue;
            }
            for k in 0..n {
                if z[k] == 0.0 {
                    continue;
                }
                let xyz = x[i] * y[j] * z[k];
                for l in 0..n {
                    total += xyz * t[idx4(n, i, j, k, l)] * w[l];
                }
            }
        }
    }
    total
}

fn quad(g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let n = g.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += u[i] * g[(i, j)] * v[j];
        }
    }
    s
}

/// `R(X,Y,Y,X) / (|X|^2|Y|^2 - <X,Y>^2)`.
pub fn sectional_curvature(bundle: &CurvatureBundle, metric: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<f64> {
    let xx = quad(metric, x, x);
    let yy = quad(metric, y, y);
    let xy = quad(metric, x, y);
    let area2 = xx * yy - xy * xy;
    if !(area2 > 1e-12 * xx * yy) {
        return Err(GeomError::DegeneratePlane);
    }
    Ok(bundle.riemann_form(x, y, y, x) / area2)
}

/// `|W| = sqrt(W_ijkl W^ijkl)`; zero below dimension 4.
pub fn weyl_norm(bundle: &CurvatureBundle, metric: &DMatrix<f64>) -> Result<f64> {
    if bundle.dim < 4 {
        return Ok(0.0);
    }
    let frame = orthonormal_frame(metric)?;
    let w = tensor4_in_frame(&bundle.weyl(), &frame);
    Ok(w.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(m: &CoordinateMetric, x: &[f64]) -> CurvatureBundle {
        curvature_oracle_with(m, x, DEFAULT_STEP, Extrapolation::Richardson).unwrap()
    }
    use crate::scalarfun::Expr;
    use std::f64::consts::PI;

    fn sphere_spec(p: usize) -> MwpSpec {
        MwpSpec {
            base: IntervalDomain::open(0.0, PI).unwrap(),
            fibers: vec![FiberSpec::new(p, 1.0, SmoothFn::new(Expr::sin(Expr::Var)))],
        }
    }

    fn example_spec() -> MwpSpec {
        let phi = SmoothFn::new(Expr::sin(Expr::Var).scaled(1.0 / 3f64.sqrt()));
        MwpSpec {
            base: IntervalDomain::open(0.0, PI).unwrap(),
            fibers: vec![FiberSpec::new(2, 1.0, phi.clone()), FiberSpec::new(2, 1.0, phi)],
        }
    }

    fn unit(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let m = CoordinateMetric::flat(vec![(-1.0, 1.0); 4]).unwrap();
        let b = oracle(&m, &[0.1, 0.2, -0.3, 0.0]);
        assert!(b.riemann.iter().all(|v| v.abs() < 1e-12));
        assert!(b.scalar.abs() < 1e-12);
        assert_eq!(b.sectional(&unit(4, 0), &unit(4, 3)).unwrap(), 0.0);
    }

    #[test]
    fn unit_three_sphere_at_origin() {
        let m = CoordinateMetric::space_form(SpaceFormChart::new(3, 1.0).unwrap()).unwrap();
        let b = oracle(&m, &[0.0; 3]);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((b.sectional(&unit(3, i), &unit(3, j)).unwrap() - 1.0).abs() < 1e-6);
        }
        assert!((b.scalar - 6.0).abs() < 1e-6);
    }

    #[test]
    fn two_sphere_weyl_is_zero_by_convention() {
        let m = CoordinateMetric::space_form(SpaceFormChart::new(2, 1.0).unwrap()).unwrap();
        let b = oracle(&m, &[0.05, 0.1]);
        assert!(b.weyl().iter().all(|&v| v == 0.0));
        assert_eq!(weyl_norm(&b, &b.metric).unwrap(), 0.0);
    }

    #[test]
    fn margin_and_singularity_errors() {
        let m = CoordinateMetric::flat(vec![(0.0, 1.0); 2]).unwrap();
        assert!(matches!(curvature_oracle(&m, &[0.001, 0.5], 1e-3), Err(GeomError::Margin { .. })));
        let degenerate = CoordinateMetric::from_fn(2, vec![(-1.0, 1.0); 2], Smoothness::ClosedForm, |_| {
            Ok(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]))
        })
        .unwrap();
        assert!(matches!(curvature_oracle(&degenerate, &[0.0, 0.0], 1e-3), Err(GeomError::Singular(_))));
    }

    #[test]
    fn degenerate_plane_is_rejected() {
        let m = CoordinateMetric::flat(vec![(-1.0, 1.0); 3]).unwrap();
        let b = oracle(&m, &[0.0; 3]);
        assert_eq!(b.sectional(&[1.0, 2.0, 0.0], &[2.0, 4.0, 0.0]), Err(GeomError::DegeneratePlane));
    }

    #[test]
    fn closed_form_reference_values() {
        let spec = example_spec();
        let s = PI / 2.0;
        assert!((mwp_sectional_closed_form(&spec, s, PlaneClass::BaseFiber(0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((mwp_sectional_closed_form(&spec, s, PlaneClass::WithinFiber(1)).unwrap() - 3.0).abs() < 1e-12);
        assert!(mwp_sectional_closed_form(&spec, s, PlaneClass::Mixed).unwrap().abs() < 1e-12);

        let flat = MwpSpec {
            base: IntervalDomain::open(-1.0, 1.0).unwrap(),
            fibers: vec![FiberSpec::new(2, 0.0, SmoothFn::constant(1.0))],
        };
        for class in [PlaneClass::BaseFiber(0), PlaneClass::WithinFiber(0)] {
            assert_eq!(mwp_sectional_closed_form(&flat, 0.3, class).unwrap(), 0.0);
        }
        assert!(matches!(
            mwp_sectional_closed_form(&flat, 0.3, PlaneClass::Mixed),
            Err(GeomError::PlaneClass(_))
        ));

        let sphere = sphere_spec(3);
        for s in [0.4, 1.1, 2.9] {
            for class in [PlaneClass::BaseFiber(0), PlaneClass::WithinFiber(0)] {
                assert!((mwp_sectional_closed_form(&sphere, s, class).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        let circle = MwpSpec {
            base: IntervalDomain::open(0.0, PI).unwrap(),
            fibers: vec![FiberSpec::new(1, 0.0, SmoothFn::new(Expr::sin(Expr::Var)))],
        };
        assert!(matches!(
            mwp_sectional_closed_form(&circle, 1.0, PlaneClass::WithinFiber(0)),
            Err(GeomError::PlaneClass(_))
        ));
    }

    #[test]
    fn product_of_flats_is_flat() {
        let spec = MwpSpec {
            base: IntervalDomain::open(-1.0, 1.0).unwrap(),
            fibers: vec![FiberSpec::new(3, 0.0, SmoothFn::constant(1.0))],
        };
        let m = build_mwp_metric(&spec).unwrap();
        let b = oracle(&m, &[0.1, 0.2, -0.1, 0.3]);
        assert!(b.riemann.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn round_sphere_as_warped_product() {
        let m = build_mwp_metric(&sphere_spec(3)).unwrap();
        let b = oracle(&m, &[1.0, 0.1, -0.05, 0.2]);
        let e = |i| unit(4, i);
        for (i, j) in [(0, 1), (0, 3), (1, 2), (2, 3)] {
            assert!((b.sectional(&e(i), &e(j)).unwrap() - 1.0).abs() < 1e-6);
        }
        assert!(weyl_norm(&b, &b.metric).unwrap() < 1e-6);
    }

    #[test]
    fn example_metric_matches_closed_form_and_is_not_conformally_flat() {
        let spec = example_spec();
        let m = build_mwp_metric(&spec).unwrap();
        let b = oracle(&m, &[PI / 2.0, 0.1, 0.0, -0.1, 0.05]);
        let e = |i| unit(5, i);
        assert!((b.sectional(&e(0), &e(1)).unwrap() - 1.0).abs() < 1e-6);
        assert!((b.sectional(&e(1), &e(2)).unwrap() - 3.0).abs() < 1e-6);
        assert!(b.sectional(&e(2), &e(3)).unwrap().abs() < 1e-6);
        assert!(weyl_norm(&b, &b.metric).unwrap() > 0.1);
    }

    #[test]
    fn ricci_is_frame_trace_and_scalar_is_its_trace() {
        let spec = example_spec();
        let m = build_mwp_metric(&spec).unwrap();
        let b = oracle(&m, &[1.2, 0.1, 0.05, -0.1, 0.02]);
        let frame = orthonormal_frame(&b.metric).unwrap();
        let n = b.dim;
        let y = [0.3, -0.2, 0.5, 0.1, 0.7];
        let z = [0.1, 0.4, -0.3, 0.2, 0.0];
        let trace: f64 = (0..n)
            .map(|a| {
                let e: Vec<f64> = frame.column(a).iter().copied().collect();
                b.riemann_form(&e, &y, &z, &e)
            })
            .sum();
        assert!((trace - b.ricci_form(&y, &z)).abs() < 1e-10);
        let tr: f64 = (0..n).map(|a| {
            let e: Vec<f64> = frame.column(a).iter().copied().collect();
            b.ricci_form(&e, &e)
        }).sum();
        assert!((tr - b.scalar).abs() < 1e-8);
    }

    #[test]
    fn riemann_symmetries_and_weyl_trace() {
        let spec = MwpSpec {
            base: IntervalDomain::open(0.5, 2.0).unwrap(),
            fibers: vec![
                FiberSpec::new(2, -1.0, SmoothFn::new(Expr::add(Expr::Const(1.0), Expr::powi(Expr::Var, 2)))),
                FiberSpec::new(2, 0.5, SmoothFn::new(Expr::cosh(Expr::Var))),
            ],
        };
        let m = build_mwp_metric(&spec).unwrap();
        let b = oracle(&m, &[1.1, 0.05, -0.1, 0.2, 0.1]);
        assert!(b.symmetry_residual() < 1e-6);
        assert!(b.bianchi_residual() < 1e-6);
        assert!(b.weyl_trace_residual() < 1e-6);
    }

    #[test]
    fn halving_step_quarters_the_error() {
        let m = CoordinateMetric::space_form(SpaceFormChart::with_radius(3, 1.0, 0.9).unwrap()).unwrap();
        let x = [0.2, -0.15, 0.1];
        let err = |h: f64| {
            let b = curvature_oracle(&m, &x, h).unwrap();
            (b.scalar - 6.0).abs()
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn plain_stencil_meets_tolerance_at_small_step() {
        let m = CoordinateMetric::space_form(SpaceFormChart::new(3, 1.0).unwrap()).unwrap();
        let b = curvature_oracle(&m, &[0.05, -0.1, 0.02], 2e-4).unwrap();
        assert!((b.sectional(&[1.0, 0.3, 0.0], &[0.0, 1.0, -0.5]).unwrap() - 1.0).abs() < 1e-6);
        // At the default step only the extrapolated oracle reaches 1e-6.
        let coarse = curvature_oracle(&m, &[0.0; 3], DEFAULT_STEP).unwrap();
        assert!((coarse.sectional(&unit(3, 0), &unit(3, 1)).unwrap() - 1.0).abs() > 1e-6);
    }

    #[test]
    fn richardson_cancels_leading_term() {
        let m = CoordinateMetric::space_form(SpaceFormChart::with_radius(3, 1.0, 0.9).unwrap()).unwrap();
        let x = [0.2, -0.15, 0.1];
        let plain = (curvature_oracle(&m, &x, 1e-2).unwrap().scalar - 6.0).abs();
        let refined = (curvature_oracle_with(&m, &x, 1e-2, Extrapolation::Richardson).unwrap().scalar - 6.0).abs();
        assert!(refined < plain / 100.0, "{refined} vs {plain}");
    }

    #[test]
    fn pair_transform_matches_full_contraction() {
        let m = build_mwp_metric(&example_spec()).unwrap();
        let b = oracle(&m, &[1.2, 0.1, -0.2, 0.05, 0.15]);
        let frame = orthonormal_frame(&b.metric).unwrap();
        let full = tensor4_in_frame(&b.riemann, &frame);
        let pairs = tensor4_pairs_in_frame(&b.riemann, &frame);
        let idx = index_pairs(5);
        for (p, &(i, j)) in idx.iter().enumerate() {
            for (q, &(k, l)) in idx.iter().enumerate() {
                assert!((pairs[(p, q)] - full[idx4(5, i, j, k, l)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let e = orthonormal_frame(&g).unwrap();
        let gram = e.transpose() * &g * &e;
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        // Pivot picks the largest diagonal first.
        assert!(e[(2, 0)].abs() > 0.0 && e[(0, 0)] == 0.0 && e[(1, 0)] == 0.0);
    }

    #[test]
    fn mwp_json_schema() {
        let json = r#"{"base":{"min":0.0,"max":3.14159},"fibers":[
            {"dim":2,"curvature":1.0,"warping":{"op":"sin","args":[{"op":"var","args":[]}]}}]}"#;
        let spec: MwpSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.total_dim(), 3);
        assert!(build_mwp_metric(&spec).is_ok());
        let bad = MwpSpec {
            base: IntervalDomain::open(-1.0, 1.0).unwrap(),
            fibers: vec![FiberSpec::new(2, 1.0, SmoothFn::new(Expr::Var))],
        };
        assert!(matches!(build_mwp_metric(&bad), Err(GeomError::Positivity { .. })));
    }
}
