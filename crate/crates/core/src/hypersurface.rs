//! Structure conditions (A)–(F) for a hypersurface datum `(g, A, T, θ, π, f, c)`
//! of `I ×_f Q^n(c)`, and the algebraic identities satisfied by Einstein
//! hypersurfaces: the principal-curvature quadratics, the multiplicity laws,
//! the warping-function system and the involutivity of the eigendistributions.
//!
//! Everything is intrinsic: the datum lives on coordinates of `M` and the
//! immersion itself is never constructed. Field derivatives are second-order
//! central differences of coordinate components, corrected with the
//! Christoffel symbols of the metric.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    build_mwp_metric, christoffel_symbols, curvature_oracle_with, index_pairs, orthonormal_frame, tensor4_pairs_in_frame,
    CoordinateMetric, CurvatureBundle, Extrapolation, MwpSpec, DEFAULT_STEP,
};
use crate::error::{GeomError, Result};
use crate::exec::{map_collect, Execution};
use crate::grid::SampleGrid;
use crate::report::{ResidualReport, Tolerances};
use crate::scalarfun::{eval_with_derivatives, SmoothFn};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
/// Endomorphism field; column `j` holds the components of `A ∂_j`.
pub type EndoField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// The warped-product ambient `I ×_f Q^n(c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ambient {
    pub f: SmoothFn,
    pub c: i32,
}

/// Which unit normal the datum was written for. Flipping the normal sends
/// `(A, θ)` to `(-A, -θ)` and leaves every structure condition invariant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Supplied,
    Flipped,
}

/// Intrinsic hypersurface datum on a coordinate patch of `M`.
#[derive(Clone)]
pub struct StructureData {
    pub metric: CoordinateMetric,
    pub shape: EndoField,
    pub tangent: VectorField,
    pub angle: ScalarField,
    pub height: ScalarField,
    pub ambient: Ambient,
    pub orientation: Orientation,
}

impl std::fmt::Debug for StructureData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StructureData")
            .field("metric", &self.metric)
            .field("ambient", &self.ambient)
            .field("orientation", &self.orientation)
            .finish_non_exhaustive()
    }
}

impl StructureData {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// The same hypersurface described with the opposite unit normal.
    pub fn flipped(&self) -> StructureData {
        let shape = self.shape.clone();
        let angle = self.angle.clone();
        StructureData {
            shape: Arc::new(move |x| -shape(x)),
            angle: Arc::new(move |x| -angle(x)),
            orientation: match self.orientation {
                Orientation::Supplied => Orientation::Flipped,
                Orientation::Flipped => Orientation::Supplied,
            },
            ..self.clone()
        }
    }

    /// Replaces the shape operator.
    pub fn with_shape(&self, shape: EndoField) -> StructureData {
        StructureData { shape, ..self.clone() }
    }

    pub fn with_angle(&self, angle: ScalarField) -> StructureData {
        StructureData { angle, ..self.clone() }
    }

    fn ambient_at(&self, x: &[f64]) -> Result<AmbientInvariants> {
        ambient_invariants(&self.ambient.f, self.ambient.c, (self.height)(x))
    }
}

/// Shape operator components as functions of the base coordinate `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSpec {
    /// Diagonal entries `A^i_i`.
    Diagonal(Vec<SmoothFn>),
    /// Rows `i` of `A^i_j`; column `j` is `A ∂_j`.
    Matrix(Vec<Vec<SmoothFn>>),
}

/// JSON form of a [`StructureData`] on a multiply warped product chart whose
/// components depend on the base coordinate `s = x[0]` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDataSpec {
    pub metric: MwpSpec,
    pub shape: ShapeSpec,
    pub tangent: Vec<SmoothFn>,
    pub angle: SmoothFn,
    pub height: SmoothFn,
    pub ambient: Ambient,
    #[serde(default)]
    pub orientation: Orientation,
}

impl StructureDataSpec {
    pub fn build(&self) -> Result<StructureData> {
        let metric = build_mwp_metric(&self.metric)?;
        let n = metric.dim();
        let wrong = |what: &str, got: usize| GeomError::WrongShape(format!("{what} has {got} entries, metric dimension is {n}"));
        match &self.shape {
            ShapeSpec::Diagonal(d) if d.len() != n => return Err(wrong("shape diagonal", d.len())),
            ShapeSpec::Matrix(rows) => {
                if rows.len() != n {
                    return Err(wrong("shape matrix", rows.len()));
                }
                if let Some(r) = rows.iter().find(|r| r.len() != n) {
                    return Err(wrong("shape matrix row", r.len()));
                }
            }
            _ => {}
        }
        if self.tangent.len() != n {
            return Err(wrong("tangent", self.tangent.len()));
        }
        if ![-1, 0, 1].contains(&self.ambient.c) {
            return Err(GeomError::Invalid(format!("ambient curvature c must be -1, 0 or 1, got {}", self.ambient.c)));
        }
        let shape: EndoField = match self.shape.clone() {
            ShapeSpec::Diagonal(d) => Arc::new(move |x: &[f64]| {
                DMatrix::from_fn(n, n, |i, j| if i == j { d[i].value(x[0]) } else { 0.0 })
            }),
            ShapeSpec::Matrix(rows) => Arc::new(move |x: &[f64]| DMatrix::from_fn(n, n, |i, j| rows[i][j].value(x[0]))),
        };
        let tangent_fns = self.tangent.clone();
        let tangent: VectorField = Arc::new(move |x: &[f64]| DVector::from_fn(n, |i, _| tangent_fns[i].value(x[0])));
        let (angle_fn, height_fn) = (self.angle.clone(), self.height.clone());
        Ok(StructureData {
            metric,
            shape,
            tangent,
            angle: Arc::new(move |x: &[f64]| angle_fn.value(x[0])),
            height: Arc::new(move |x: &[f64]| height_fn.value(x[0])),
            ambient: self.ambient.clone(),
            orientation: self.orientation,
        })
    }
}

/// `a = ((f')^2 - c)/f^2` and `b = f''/f - (f')^2/f^2 + c/f^2` at `t`, along
/// with `f'/f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientInvariants {
    pub a: f64,
    pub b: f64,
    pub log_derivative: f64,
}

pub fn ambient_invariants(f: &SmoothFn, c: i32, t: f64) -> Result<AmbientInvariants> {
    let v = eval_with_derivatives(f, t, 2)?;
    let (f0, f1, f2) = (v[0], v[1], v[2]);
    if !(f0 > 0.0) {
        return Err(GeomError::Positivity { t, value: f0 });
    }
    let c = c as f64;
    let f0sq = f0 * f0;
    Ok(AmbientInvariants {
        a: (f1 * f1 - c) / f0sq,
        b: f2 / f0 - f1 * f1 / f0sq + c / f0sq,
        log_derivative: f1 / f0,
    })
}

/// Knobs shared by the grid checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    pub step: f64,
    pub extrapolation: Extrapolation,
    /// Absolute eigenvalue clustering tolerance; `None` means
    /// `1e-6 * (1 + max|λ|)` at each point.
    pub cluster_tol: Option<f64>,
    /// Random constant-coefficient vector pairs added to the coordinate frame.
    pub random_pairs: usize,
    pub seed: u64,
    pub execution: Execution,
    pub tolerances: Tolerances,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            extrapolation: Extrapolation::default(),
            cluster_tol: None,
            random_pairs: 10,
            seed: 0,
            execution: Execution::default(),
            tolerances: Tolerances::default(),
        }
    }
}

fn g_inner(g: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for j in 0..n {
        if v[j] == 0.0 {
            continue;
        }
        let mut r = 0.0;
        for i in 0..n {
            r += u[i] * g[(i, j)];
        }
        s += r * v[j];
    }
    s
}

fn g_norm(g: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    g_inner(g, u, u).max(0.0).sqrt()
}

/// Random constant-coefficient vectors, unit length in coordinates.
fn random_directions(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 1e-8 {
                v / norm
            } else {
                DVector::from_element(n, 1.0 / (n as f64).sqrt())
            }
        })
        .collect()
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// `gamma[j]` is the matrix `(Γ_j)^k_m = Γ^k_jm`.
fn gamma_matrices(n: usize, gamma: &[f64]) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|j| DMatrix::from_fn(n, n, |k, m| gamma[(k * n + j) * n + m]))
        .collect()
}

/// Values and first derivatives of the datum at a point.
struct PointJet {
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    a_op: DMatrix<f64>,
    /// `nabla_a[j] = ∇_{∂_j} A` for the supplied orientation.
    nabla_a: Vec<DMatrix<f64>>,
    t: DVector<f64>,
    /// `∇_X T = nabla_t · X`
    nabla_t: DMatrix<f64>,
    theta: f64,
    d_theta: DVector<f64>,
    d_pi: DVector<f64>,
    amb: AmbientInvariants,
}

fn central<T, F>(x: &[f64], h: f64, mut f: F) -> Vec<T>
where
    F: FnMut(&[f64], &[f64]) -> T,
{
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            let r = f(&xp, &xm);
            xp[j] = x[j];
            xm[j] = x[j];
            r
        })
        .collect()
}

/// Coordinate partials of `f` at `x`: central differences, optionally
/// combined over `h` and `h/2` to cancel the `h^2` term.
fn partials<T, F>(x: &[f64], h: f64, extrapolation: Extrapolation, f: F) -> Vec<T>
where
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    F: Fn(&[f64]) -> T,
{
    let at = |step: f64| central(x, step, |p, m| (f(p) - f(m)) * (0.5 / step));
    match extrapolation {
        Extrapolation::None => at(h),
        Extrapolation::Richardson => {
            let coarse = at(h);
            let fine = at(0.5 * h);
            fine.into_iter().zip(coarse).map(|(f, c)| (f * 4.0 - c) * (1.0 / 3.0)).collect()
        }
    }
}

impl PointJet {
    fn new(data: &StructureData, x: &[f64], bundle: &CurvatureBundle, h: f64, extrapolation: Extrapolation) -> Result<Self> {
        let n = x.len();
        let a_op = (data.shape)(x);
        let t = (data.tangent)(x);
        if a_op.nrows() != n || a_op.ncols() != n || t.len() != n {
            return Err(GeomError::WrongShape(format!("shape/tangent fields do not match dimension {n}")));
        }
        let d_a = partials(x, h, extrapolation, |p| (data.shape)(p));
        let d_t = partials(x, h, extrapolation, |p| (data.tangent)(p));
        let d_theta = DVector::from_vec(partials(x, h, extrapolation, |p| (data.angle)(p)));
        let d_pi = DVector::from_vec(partials(x, h, extrapolation, |p| (data.height)(p)));

        let gammas = gamma_matrices(n, &bundle.christoffel);
        let mut nabla_t = DMatrix::zeros(n, n);
        let mut nabla_a = Vec::with_capacity(n);
        for (j, (da, dt)) in d_a.into_iter().zip(&d_t).enumerate() {
            let gj = &gammas[j];
            nabla_t.set_column(j, &(dt + gj * &t));
            nabla_a.push(da + gj * &a_op - &a_op * gj);
        }
        Ok(Self {
            g: bundle.metric.clone(),
            ginv: bundle.metric_inv.clone(),
            a_op,
            nabla_a,
            t,
            nabla_t,
            theta: (data.angle)(x),
            d_theta,
            d_pi,
            amb: data.ambient_at(x)?,
        })
    }

    /// `(∇_U A)V - (∇_V A)U` for the supplied orientation, written to `out`.
    fn a_curl_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, nj) in self.nabla_a.iter().enumerate() {
            if u[j] != 0.0 {
                mat_vec_acc(nj, v, u[j], out);
            }
            if v[j] != 0.0 {
                mat_vec_acc(nj, u, -v[j], out);
            }
        }
    }
}

/// `out += scale · m v` without allocating.
fn mat_vec_acc(m: &DMatrix<f64>, v: &[f64], scale: f64, out: &mut [f64]) {
    let n = out.len();
    for (j, col) in m.as_slice().chunks_exact(n).enumerate() {
        let c = v[j] * scale;
        if c != 0.0 {
            for (o, mij) in out.iter_mut().zip(col) {
                *o += mij * c;
            }
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `sqrt(<u, u>_g)` for a symmetric `g`.
fn norm_with(g: &DMatrix<f64>, u: &[f64]) -> f64 {
    let n = u.len();
    let mut s = 0.0;
    for (j, col) in g.as_slice().chunks_exact(n).enumerate() {
        if u[j] != 0.0 {
            s += u[j] * dot(col, u);
        }
    }
    s.max(0.0).sqrt()
}

/// Per-point residuals of (A)–(F) and `T = ∇π`, for the supplied and flipped
/// orientations.
struct PointResiduals {
    supplied: [f64; 7],
    flipped: [f64; 7],
}

fn structure_point(
    data: &StructureData,
    x: &[f64],
    bundle: &CurvatureBundle,
    singles: &[DVector<f64>],
    pairs: &[(DVector<f64>, DVector<f64>)],
    cfg: &CheckConfig,
) -> Result<PointResiduals> {
    let n = x.len();
    let jet = PointJet::new(data, x, bundle, cfg.step, cfg.extrapolation)?;
    let g = &jet.g;
    let AmbientInvariants { a, b, log_derivative: fl } = jet.amb;

    // Orientation-independent pieces.
    let frame = orthonormal_frame(g)?;
    let gt = g * &jet.t;
    let t_frame: Vec<f64> = (0..n).map(|i| frame.column(i).dot(&gt)).collect();
    let ga = g * &jet.a_op;
    let s_frame = frame.transpose() * &ga * &frame;
    // <AU, V> - <U, AV> = V^T (gA - (gA)^T) U
    let skew = &ga - ga.transpose();
    let a_sym = skew.abs().max();
    let mut skew_u = vec![0.0; n];
    let a_pairs = pairs
        .iter()
        .map(|(u, v)| {
            skew_u.fill(0.0);
            mat_vec_acc(&skew, u.as_slice(), 1.0, &mut skew_u);
            dot(&skew_u, v.as_slice()).abs()
        })
        .fold(0.0, f64::max);
    let t2 = g_inner(g, &jet.t, &jet.t);
    let grad_pi = &jet.ginv * &jet.d_pi;
    let res_pi = g_norm(g, &(&jet.t - grad_pi));
    let gat = &ga * &jet.t;
    // Per-direction data shared by both orientations.
    let (ns, np) = (singles.len(), pairs.len());
    let mut singles_nt = vec![0.0; ns * n];
    let mut singles_ax = vec![0.0; ns * n];
    let mut singles_scalars = Vec::with_capacity(ns);
    for (s_i, xv) in singles.iter().enumerate() {
        let xv = xv.as_slice();
        mat_vec_acc(&jet.nabla_t, xv, 1.0, &mut singles_nt[s_i * n..(s_i + 1) * n]);
        mat_vec_acc(&jet.a_op, xv, 1.0, &mut singles_ax[s_i * n..(s_i + 1) * n]);
        singles_scalars.push((dot(gt.as_slice(), xv), dot(jet.d_theta.as_slice(), xv), dot(gat.as_slice(), xv)));
    }
    let mut curls = vec![0.0; np * n];
    let mut pair_t = Vec::with_capacity(np);
    for (p_i, (u, v)) in pairs.iter().enumerate() {
        jet.a_curl_into(u.as_slice(), v.as_slice(), &mut curls[p_i * n..(p_i + 1) * n]);
        pair_t.push((dot(gt.as_slice(), u.as_slice()), dot(gt.as_slice(), v.as_slice())));
    }

    // (F) over frame 4-tuples i < j, k < l; s_ab = <A e_a, e_b>. Both sides
    // are even in A, so the flipped orientation shares this value.
    let r_frame = tensor4_pairs_in_frame(&bundle.riemann, &frame);
    let sh = |p: usize, q: usize| s_frame[(q, p)];
    let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    let t_ = &t_frame;
    let idx = index_pairs(n);
    let mut res_f: f64 = 0.0;
    for (p, &(i, j)) in idx.iter().enumerate() {
        for (q, &(k, l)) in idx.iter().enumerate() {
            let rhs = a * (d(i, k) * d(j, l) - d(j, k) * d(i, l))
                + b * (d(i, k) * t_[j] * t_[l] - d(j, k) * t_[i] * t_[l] - d(i, l) * t_[j] * t_[k]
                    + d(j, l) * t_[i] * t_[k])
                + sh(j, k) * sh(i, l)
                - sh(j, l) * sh(i, k);
            res_f = res_f.max((r_frame[(p, q)] - rhs).abs());
        }
    }

    let eval = |sign: f64| -> [f64; 7] {
        let theta = jet.theta * sign;

        // (A) is invariant under A -> -A.
        let res_a = a_sym.max(a_pairs);

        // (B)
        let res_b = (t2 + theta * theta - 1.0).abs();

        // (C), (D)
        let mut scratch = vec![0.0; n];
        let mut res_c: f64 = 0.0;
        let mut res_d: f64 = 0.0;
        for (s_i, (xv, &(xt, x_theta, atx))) in singles.iter().zip(&singles_scalars).enumerate() {
            let nt = &singles_nt[s_i * n..(s_i + 1) * n];
            let ax = &singles_ax[s_i * n..(s_i + 1) * n];
            for k in 0..n {
                scratch[k] = nt[k] - (xv[k] - jet.t[k] * xt) * fl - ax[k] * (sign * theta);
            }
            res_c = res_c.max(norm_with(g, &scratch));
            res_d = res_d.max((sign * x_theta + sign * atx + fl * theta * xt).abs());
        }

        // (E)
        let mut res_e: f64 = 0.0;
        for (p_i, ((u, v), &(tu, tv))) in pairs.iter().zip(&pair_t).enumerate() {
            let curl = &curls[p_i * n..(p_i + 1) * n];
            for k in 0..n {
                scratch[k] = curl[k] * sign - (v[k] * tu - u[k] * tv) * (theta * b);
            }
            res_e = res_e.max(norm_with(g, &scratch));
        }

        [res_a, res_b, res_c, res_d, res_e, res_f, res_pi]
    };
    Ok(PointResiduals { supplied: eval(1.0), flipped: eval(-1.0) })
}

const STRUCTURE_NAMES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "T_grad_pi"];

/// Sample vectors for the structure checks: coordinate frame plus
/// `random_pairs` random constant-coefficient pairs.
fn sample_directions(n: usize, cfg: &CheckConfig) -> (Vec<DVector<f64>>, Vec<(DVector<f64>, DVector<f64>)>) {
    let random = random_directions(n, 2 * cfg.random_pairs, cfg.seed);
    let mut singles: Vec<DVector<f64>> = (0..n).map(|i| unit(n, i)).collect();
    singles.extend(random.iter().step_by(2).cloned());
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((unit(n, i), unit(n, j)));
        }
    }
    pairs.extend(random.chunks(2).map(|c| (c[0].clone(), c[1].clone())));
    (singles, pairs)
}

/// Structure residuals and oracle curvature bundles together, so callers
/// needing both evaluate the curvature oracle only once per point.
pub(crate) struct StructureSweep {
    pub report: ResidualReport,
    pub einstein_sup: Option<f64>,
}

pub(crate) fn structure_sweep(
    data: &StructureData,
    grid: &SampleGrid,
    cfg: &CheckConfig,
    rho: Option<f64>,
) -> Result<StructureSweep> {
    let n = data.dim();
    if grid.dim() != n {
        return Err(GeomError::WrongShape(format!("grid is {}-dimensional, datum is {n}", grid.dim())));
    }
    let (singles, pairs) = sample_directions(n, cfg);
    let points = grid.points();
    let per_point = map_collect(cfg.execution, &points, |x| -> Result<(PointResiduals, Option<f64>)> {
        let bundle = curvature_oracle_with(&data.metric, x, cfg.step, cfg.extrapolation)?;
        let res = structure_point(data, x, &bundle, &singles, &pairs, cfg)?;
        let ein = rho.map(|r| einstein_point(&bundle, r)).transpose()?;
        Ok((res, ein))
    });
    let mut sup = [0.0f64; 7];
    let mut flip_dev: f64 = 0.0;
    let mut ein_sup: Option<f64> = rho.map(|_| 0.0);
    for r in per_point {
        let (res, ein) = r?;
        for i in 0..7 {
            sup[i] = sup[i].max(res.supplied[i]);
            if i >= 2 {
                flip_dev = flip_dev.max((res.supplied[i] - res.flipped[i]).abs());
            }
        }
        if let (Some(s), Some(e)) = (ein_sup.as_mut(), ein) {
            *s = s.max(e);
        }
    }
    let desc = format!(
        "{}; {} coordinate + {} random directions, {} pairs",
        grid.describe(),
        n,
        cfg.random_pairs,
        pairs.len()
    );
    let mut report = ResidualReport::new();
    for (name, value) in STRUCTURE_NAMES.iter().zip(sup) {
        report.push_with(&cfg.tolerances, name, value, desc.clone());
    }
    report.push_with(&cfg.tolerances, "orientation_flip", flip_dev, desc.clone());
    report.note(format!("orientation supplied: {:?}", data.orientation).to_lowercase());
    report.note("(E) quantified over coordinate pairs plus random constant-coefficient pairs");
    Ok(StructureSweep { report, einstein_sup: ein_sup })
}

/// Sup-norm residuals of conditions (A)–(F) (plus `T = ∇π` and the
/// orientation-flip consistency) over `grid`.
pub fn structure_residuals(data: &StructureData, grid: &SampleGrid, cfg: &CheckConfig) -> Result<ResidualReport> {
    Ok(structure_sweep(data, grid, cfg, None)?.report)
}

/// Largest orthonormal-frame component of `Ric - ρ g`.
fn einstein_point(bundle: &CurvatureBundle, rho: f64) -> Result<f64> {
    let frame = orthonormal_frame(&bundle.metric)?;
    let defect = &bundle.ricci - &bundle.metric * rho;
    Ok((frame.transpose() * defect * &frame).abs().max())
}

/// `sup |Ric - ρ g|` over `grid`, measured in orthonormal frames.
pub fn einstein_residual(metric: &CoordinateMetric, rho: f64, grid: &SampleGrid, cfg: &CheckConfig) -> Result<ResidualReport> {
    let points = grid.points();
    let values = map_collect(cfg.execution, &points, |x| {
        curvature_oracle_with(metric, x, cfg.step, cfg.extrapolation).and_then(|b| einstein_point(&b, rho))
    });
    let mut sup: f64 = 0.0;
    for v in values {
        sup = sup.max(v?);
    }
    let mut report = ResidualReport::new();
    report.push_with(&cfg.tolerances, "einstein_residual", sup, format!("{}; rho = {rho}", grid.describe()));
    Ok(report)
}

/// `Ric(X,Y)` from the traced Gauss equation:
/// `-((n-1)a + |T|^2 b)<X,Y> - (n-2)b<X,T><Y,T> + nH<AX,Y> - <AX,AY>`.
pub fn ricci_via_corollary(data: &StructureData, x: &[f64], xv: &DVector<f64>, yv: &DVector<f64>) -> Result<f64> {
    let g = data.metric.matrix(x)?;
    let m = ricci_corollary_matrix(data, x, &g)?;
    Ok((xv.transpose() * m * yv)[(0, 0)])
}

fn ricci_corollary_matrix(data: &StructureData, x: &[f64], g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.len() as f64;
    let AmbientInvariants { a, b, .. } = data.ambient_at(x)?;
    let a_op = (data.shape)(x);
    let t = (data.tangent)(x);
    let t2 = g_inner(g, &t, &t);
    let n_h = a_op.trace();
    let gt = g * &t;
    let ga = g * &a_op;
    Ok(g * (-((n - 1.0) * a + t2 * b)) - &gt * gt.transpose() * ((n - 2.0) * b) + &ga * n_h
        - a_op.transpose() * g * &a_op)
}

/// Sup over `grid` of the orthonormal-frame difference between the oracle
/// Ricci tensor and the traced Gauss equation.
pub fn ricci_corollary_consistency(data: &StructureData, grid: &SampleGrid, cfg: &CheckConfig) -> Result<ResidualReport> {
    let points = grid.points();
    let values = map_collect(cfg.execution, &points, |x| -> Result<f64> {
        let bundle = curvature_oracle_with(&data.metric, x, cfg.step, cfg.extrapolation)?;
        let via = ricci_corollary_matrix(data, x, &bundle.metric)?;
        let frame = orthonormal_frame(&bundle.metric)?;
        Ok((frame.transpose() * (&bundle.ricci - via) * &frame).abs().max())
    });
    let mut sup: f64 = 0.0;
    for v in values {
        sup = sup.max(v?);
    }
    let mut report = ResidualReport::new();
    report.push_with(&cfg.tolerances, "ricci_corollary", sup, grid.describe());
    Ok(report)
}

/// One eigenvalue cluster of the shape operator with a g-orthonormal basis
/// of its eigenspace (coordinate components).
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub value: f64,
    pub multiplicity: usize,
    pub basis: Vec<DVector<f64>>,
}

/// Clustered principal curvatures. `clusters` are in ascending order; the
/// role accessors follow the labelling `λ_n` (the cluster containing `T`)
/// and `λ_1 < λ_2` for the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalSpectrum {
    pub clusters: Vec<Cluster>,
    pub normal_index: Option<usize>,
    pub cluster_tol: f64,
    /// More than three distinct principal curvatures.
    pub classification_violation: bool,
    /// Some pair of clusters is closer than ten times the clustering tolerance.
    pub poorly_separated: bool,
}

impl PrincipalSpectrum {
    pub fn dim(&self) -> usize {
        self.clusters.iter().map(|c| c.multiplicity).sum()
    }

    /// `nH = tr A`.
    pub fn trace(&self) -> f64 {
        self.clusters.iter().map(|c| c.value * c.multiplicity as f64).sum()
    }

    pub fn lambda_n(&self) -> Option<&Cluster> {
        self.normal_index.map(|i| &self.clusters[i])
    }

    /// Tangential clusters in ascending order: `λ_1`, `λ_2`.
    pub fn tangential(&self) -> Vec<&Cluster> {
        self.clusters
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.normal_index)
            .map(|(_, c)| c)
            .collect()
    }

    /// `λ_1` (`role = 1`) or `λ_2` (`role = 2`).
    pub fn lambda(&self, role: usize) -> Option<&Cluster> {
        role.checked_sub(1).and_then(|r| self.tangential().get(r).copied())
    }

    /// Index into `clusters` for role 0 (`λ_n`), 1 or 2.
    fn role_index(&self, role: usize) -> Option<usize> {
        if role == 0 {
            return self.normal_index;
        }
        let tangential: Vec<usize> = (0..self.clusters.len()).filter(|&i| Some(i) != self.normal_index).collect();
        tangential.get(role - 1).copied()
    }
}

/// Generalized eigenproblem `A v = λ v` with `A` g-self-adjoint, eigenvalues
/// clustered within `cluster_tol`.
pub fn decompose(
    g: &DMatrix<f64>,
    a_op: &DMatrix<f64>,
    t: Option<&DVector<f64>>,
    cluster_tol: Option<f64>,
) -> Result<PrincipalSpectrum> {
    let n = g.nrows();
    let chol = g.clone().cholesky().ok_or_else(|| GeomError::Singular(vec![]))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| GeomError::Singular(vec![]))?;
    let s = g * a_op;
    let s = (&s + s.transpose()) * 0.5;
    let m = &l_inv * s * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = cluster_tol.unwrap_or(1e-6 * (1.0 + max_abs));
    let back = l_inv.transpose();

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut members: Vec<Vec<f64>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &i in &order {
        let lam = eig.eigenvalues[i];
        let v = &back * eig.eigenvectors.column(i);
        if clusters.is_empty() || lam - last > tol {
            clusters.push(Cluster { value: lam, multiplicity: 0, basis: Vec::new() });
            members.push(Vec::new());
        }
        let c = clusters.last_mut().unwrap();
        c.multiplicity += 1;
        c.basis.push(v);
        members.last_mut().unwrap().push(lam);
        last = lam;
    }
    for (c, vals) in clusters.iter_mut().zip(&members) {
        c.value = vals.iter().sum::<f64>() / vals.len() as f64;
    }
    let poorly_separated = clusters.windows(2).any(|w| w[1].value - w[0].value <= 10.0 * tol);

    let normal_index = t.and_then(|t| {
        let tn = g_norm(g, t);
        if tn <= 1e-12 {
            return None;
        }
        clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.basis.iter().map(|e| g_inner(g, e, t).powi(2)).sum::<f64>()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    });
    Ok(PrincipalSpectrum {
        classification_violation: clusters.len() > 3,
        poorly_separated,
        clusters,
        normal_index,
        cluster_tol: tol,
    })
}

/// Principal curvatures of the datum at `x`.
pub fn principal_decomposition(data: &StructureData, x: &[f64], cluster_tol: Option<f64>) -> Result<PrincipalSpectrum> {
    let g = data.metric.matrix(x)?;
    let a_op = (data.shape)(x);
    let t = (data.tangent)(x);
    decompose(&g, &a_op, Some(&t), cluster_tol)
}

/// `|AT - (<AT,T>/|T|^2) T| / |T|`.
pub fn check_t_principal(data: &StructureData, x: &[f64]) -> Result<f64> {
    let g = data.metric.matrix(x)?;
    let t = (data.tangent)(x);
    let t2 = g_inner(&g, &t, &t);
    if !(t2 > 1e-24) {
        return Err(GeomError::UndefinedDirection("T vanishes".into()));
    }
    let at = (data.shape)(x) * &t;
    let lam = g_inner(&g, &at, &t) / t2;
    Ok(g_norm(&g, &(at - &t * lam)) / t2.sqrt())
}

/// Residuals of the principal-curvature quadratics
/// `λ_i^2 - nHλ_i + ρ + (n-1)a + |T|^2 b = 0` (i = 1, 2) and
/// `λ_n^2 - nHλ_n + ρ + (n-1)(a + |T|^2 b) = 0`.
pub fn check_quadratics(spectrum: &PrincipalSpectrum, rho: f64, a: f64, b: f64, t_norm2: f64, tol: &Tolerances) -> ResidualReport {
    let n = spectrum.dim() as f64;
    let nh = spectrum.trace();
    let mut report = ResidualReport::new();
    for (role, name) in [(1, "eq1_lambda1"), (2, "eq1_lambda2")] {
        if let Some(c) = spectrum.lambda(role) {
            let l = c.value;
            report.push_with(tol, name, (l * l - nh * l + rho + (n - 1.0) * a + t_norm2 * b).abs(), "point");
        }
    }
    if let Some(c) = spectrum.lambda_n() {
        let l = c.value;
        report.push_with(tol, "eq2_lambda_n", (l * l - nh * l + rho + (n - 1.0) * (a + t_norm2 * b)).abs(), "point");
    } else {
        report.note("no cluster contains T; the λ_n quadratic was not evaluated");
    }
    report
}

/// Multiplicity laws when `λ_n = 0`.
///
/// For `b > 0`: `λ_1λ_2 = -(n-2)|T|^2 b`, `(p_1-1)λ_1 + (p_2-1)λ_2 = 0` and
/// `λ_i^2 = (p_j-1)(n-2)/(p_i-1) |T|^2 b`, with `p_1, p_2 >= 2`.
/// For `b < 0`: a single tangential cluster of multiplicity `n-1` with
/// `λ_1^2 = -|T|^2 b`.
pub fn check_multiplicity_laws(spectrum: &PrincipalSpectrum, b: f64, t_norm2: f64, n: usize, tol: &Tolerances) -> ResidualReport {
    let mut report = ResidualReport::new();
    let nf = n as f64;
    if let Some(ln) = spectrum.lambda_n() {
        if ln.value.abs() > spectrum.cluster_tol.max(1e-9) {
            report.flag(format!("lambda_n = {} is not zero; multiplicity laws do not apply", ln.value));
        }
    } else {
        report.flag("no cluster contains T");
    }
    let tangential = spectrum.tangential();
    if b > 0.0 {
        if tangential.len() != 2 || tangential.iter().any(|c| c.multiplicity < 2) {
            let mults: Vec<usize> = tangential.iter().map(|c| c.multiplicity).collect();
            report.flag(format!("classification violation: b > 0 needs p1, p2 >= 2, got {mults:?}"));
        }
        if tangential.len() == 2 {
            let (l1, l2) = (tangential[0].value, tangential[1].value);
            let (p1, p2) = (tangential[0].multiplicity as f64, tangential[1].multiplicity as f64);
            report.push_with(tol, "product_law", (l1 * l2 + (nf - 2.0) * t_norm2 * b).abs(), "point");
            report.push_with(tol, "sum_law", ((p1 - 1.0) * l1 + (p2 - 1.0) * l2).abs(), "point");
            if p1 > 1.0 && p2 > 1.0 {
                let sq1 = (p2 - 1.0) * (nf - 2.0) / (p1 - 1.0) * t_norm2 * b;
                let sq2 = (p1 - 1.0) * (nf - 2.0) / (p2 - 1.0) * t_norm2 * b;
                report.push_with(tol, "square_law_1", (l1 * l1 - sq1).abs(), "point");
                report.push_with(tol, "square_law_2", (l2 * l2 - sq2).abs(), "point");
            }
        }
    } else if b < 0.0 {
        if tangential.len() != 1 || tangential[0].multiplicity != n - 1 {
            let mults: Vec<usize> = tangential.iter().map(|c| c.multiplicity).collect();
            report.flag(format!("classification violation: b < 0 needs p1 = n-1, p2 = 0, got {mults:?}"));
        }
        if let Some(c) = tangential.first() {
            report.push_with(tol, "negative_branch_square", (c.value * c.value + t_norm2 * b).abs(), "point");
        }
    } else {
        report.flag("b = 0: ambient has constant curvature; laws not applicable");
    }
    report
}

/// Christoffel matrices and metric at `x`.
fn connection_at(metric: &CoordinateMetric, x: &[f64], h: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let (g, gamma) = christoffel_symbols(metric, x, h)?;
    let n = x.len();
    Ok((g, gamma_matrices(n, &gamma)))
}

/// Residuals of `∇θ + (λ_n + (f'/f)θ) T` on the grid and of the geodesic
/// equation for `T/|T|` along short integral curves started at grid points.
pub fn check_theta_gradient(data: &StructureData, grid: &SampleGrid, cfg: &CheckConfig) -> Result<ResidualReport> {
    let h = cfg.step;
    let points = grid.points();
    let total = points.len();
    let unit_t = |y: &[f64], g: &DMatrix<f64>| -> Option<DVector<f64>> {
        let t = (data.tangent)(y);
        let tn = g_norm(g, &t);
        (tn > 1e-12).then(|| t / tn)
    };
    let (lo_box, hi_box): (Vec<f64>, Vec<f64>) = data.metric.bounds().iter().copied().unzip();
    let width = lo_box.iter().zip(&hi_box).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    let dt = 0.02 * width;
    let steps = 8;

    struct PointOut {
        grad: Option<f64>,
        geo: f64,
        truncated: bool,
    }
    let outs = map_collect(cfg.execution, &points, |x| -> Result<PointOut> {
        data.metric.check_margin(x, h)?;
        let g = data.metric.matrix(x)?;
        let t = (data.tangent)(x);
        let t2 = g_inner(&g, &t, &t);
        if !(t2 > 1e-24) {
            return Ok(PointOut { grad: None, geo: 0.0, truncated: false });
        }
        let ginv = g.clone().cholesky().ok_or_else(|| GeomError::Singular(x.to_vec()))?.inverse();
        let amb = data.ambient_at(x)?;
        let a_op = (data.shape)(x);
        let lambda_n = g_inner(&g, &(&a_op * &t), &t) / t2;
        let theta = (data.angle)(x);
        let d_theta = DVector::from_vec(central(x, h, |p, m| ((data.angle)(p) - (data.angle)(m)) * (0.5 / h)));
        let grad = &ginv * d_theta + &t * (lambda_n + amb.log_derivative * theta);
        let grad_res = g_norm(&g, &grad);

        // Integrate dγ/dτ = T/|T| with RK4, checking ∇_U U along the way.
        let mut geo: f64 = 0.0;
        let mut truncated = false;
        let mut y = x.to_vec();
        let field = |p: &[f64]| -> Option<DVector<f64>> {
            data.metric.check_margin(p, 2.0 * h).ok()?;
            let gp = data.metric.matrix(p).ok()?;
            unit_t(p, &gp)
        };
        for step in 0..=steps {
            if step > 0 {
                let k1 = field(&y);
                let adv = |base: &[f64], k: &DVector<f64>, c: f64| -> Vec<f64> {
                    base.iter().zip(k.iter()).map(|(b, v)| b + c * v).collect()
                };
                let next = k1.and_then(|k1| {
                    let k2 = field(&adv(&y, &k1, 0.5 * dt))?;
                    let k3 = field(&adv(&y, &k2, 0.5 * dt))?;
                    let k4 = field(&adv(&y, &k3, dt))?;
                    let inc = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
                    Some(adv(&y, &inc, 1.0))
                });
                match next {
                    Some(p) if data.metric.check_margin(&p, 2.0 * h).is_ok() => y = p,
                    _ => {
                        truncated = true;
                        break;
                    }
                }
            }
            let (gy, gam) = connection_at(&data.metric, &y, h)?;
            let Some(u) = unit_t(&y, &gy) else {
                truncated = true;
                break;
            };
            let du = central(&y, h, |p, m| {
                let gp = data.metric.matrix(p).unwrap_or_else(|_| gy.clone());
                let gm = data.metric.matrix(m).unwrap_or_else(|_| gy.clone());
                let up = unit_t(p, &gp).unwrap_or_else(|| u.clone());
                let um = unit_t(m, &gm).unwrap_or_else(|| u.clone());
                (up - um) * (0.5 / h)
            });
            let mut acc = DVector::zeros(u.len());
            for (j, gj) in gam.iter().enumerate() {
                acc += (&du[j] + gj * &u) * u[j];
            }
            geo = geo.max(g_norm(&gy, &acc));
        }
        Ok(PointOut { grad: Some(grad_res), geo, truncated })
    });

    let mut grad_sup: f64 = 0.0;
    let mut geo_sup: f64 = 0.0;
    let mut used = 0;
    let mut truncated = 0;
    for o in outs {
        let o = o?;
        if let Some(gr) = o.grad {
            used += 1;
            grad_sup = grad_sup.max(gr);
            geo_sup = geo_sup.max(o.geo);
            truncated += o.truncated as usize;
        }
    }
    if used == 0 {
        return Err(GeomError::UndefinedDirection("T vanishes at every grid point".into()));
    }
    let mut report = ResidualReport::new();
    let desc = grid.describe();
    report.push_with(&cfg.tolerances, "theta_gradient", grad_sup, desc.clone()).coverage = Some((used, total));
    report
        .push_with(&cfg.tolerances, "geodesic", geo_sup, format!("{desc}; {steps} RK4 steps of {dt:.4}"))
        .coverage = Some((used, total));
    if truncated > 0 {
        report.note(format!("{truncated} integral curves left the domain and were truncated"));
    }
    Ok(report)
}

/// Residual of `φ_i'/φ_i = (1/(|T|^2 f)) df/ds + θλ_i/|T|` with
/// `df/ds = |T| f'(π)`, for each supplied warping `φ_i` (`phis[0]` pairs with
/// `λ_1`, `phis[1]` with `λ_2`).
pub fn check_log_derivative_link(
    data: &StructureData,
    phis: &[SmoothFn],
    grid: &SampleGrid,
    cfg: &CheckConfig,
) -> Result<ResidualReport> {
    let points = grid.points();
    let total = points.len();
    let outs = map_collect(cfg.execution, &points, |x| -> Result<Option<Vec<f64>>> {
        let g = data.metric.matrix(x)?;
        let t = (data.tangent)(x);
        let tn = g_norm(&g, &t);
        if !(tn > 1e-12) {
            return Ok(None);
        }
        let spectrum = decompose(&g, &(data.shape)(x), Some(&t), cfg.cluster_tol)?;
        let height = (data.height)(x);
        let fv = eval_with_derivatives(&data.ambient.f, height, 1)?;
        let df_ds = tn * fv[1];
        let theta = (data.angle)(x);
        let s = x[0];
        phis.iter()
            .enumerate()
            .map(|(i, phi)| {
                let lam = spectrum
                    .lambda(i + 1)
                    .ok_or_else(|| GeomError::Constraint(format!("no principal curvature λ_{}", i + 1)))?
                    .value;
                let p = eval_with_derivatives(phi, s, 1)?;
                Ok((p[1] / p[0] - df_ds / (tn * tn * fv[0]) - theta * lam / tn).abs())
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    });
    let mut sup = vec![0.0f64; phis.len()];
    let mut used = 0;
    for o in outs {
        if let Some(v) = o? {
            used += 1;
            for (s, r) in sup.iter_mut().zip(v) {
                *s = s.max(r);
            }
        }
    }
    if used == 0 {
        return Err(GeomError::UndefinedDirection("T vanishes at every grid point".into()));
    }
    let mut report = ResidualReport::new();
    for (i, s) in sup.into_iter().enumerate() {
        let name = format!("log_derivative_{}", i + 1);
        report.push_with(&cfg.tolerances, &name, s, grid.describe()).coverage = Some((used, total));
    }
    Ok(report)
}

/// Leaf-wise invariants at one value of the base parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSample {
    pub s: f64,
    pub lambda_n: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub a: f64,
    pub b: f64,
    pub t_norm2: f64,
}

/// Samples the principal curvatures and ambient invariants of `data` at
/// `(s, 0, …, 0)` for each `s`.
pub fn slice_samples(data: &StructureData, s_values: &[f64], cluster_tol: Option<f64>) -> Result<Vec<SliceSample>> {
    let n = data.dim();
    s_values
        .iter()
        .map(|&s| {
            let mut x = vec![0.0; n];
            x[0] = s;
            let g = data.metric.matrix(&x)?;
            let t = (data.tangent)(&x);
            let spec = decompose(&g, &(data.shape)(&x), Some(&t), cluster_tol)?;
            let amb = data.ambient_at(&x)?;
            let get = |role: usize| {
                spec.role_index(role)
                    .map(|i| spec.clusters[i].value)
                    .ok_or_else(|| GeomError::Constraint(format!("spectrum at s = {s} lacks role {role}")))
            };
            Ok(SliceSample {
                s,
                lambda_n: get(0)?,
                lambda1: get(1)?,
                lambda2: get(2)?,
                a: amb.a,
                b: amb.b,
                t_norm2: g_inner(&g, &t, &t),
            })
        })
        .collect()
}

/// Warping-function system of a two-fiber product:
/// `φ_i'' = (a + b|T|^2 - λ_iλ_n) φ_i`,
/// `(φ_i')^2 + (λ_i^2 - a) φ_i^2 = k_i` (only when `p_i > 1`),
/// `φ_1'φ_2' = (a - λ_1λ_2) φ_1φ_2`.
pub fn check_id_system(spec: &MwpSpec, samples: &[SliceSample], tol: &Tolerances) -> Result<ResidualReport> {
    if spec.fibers.len() != 2 {
        return Err(GeomError::WrongShape(format!(
            "the warping system needs two fibers, got {}",
            spec.fibers.len()
        )));
    }
    let mut id1 = [0.0f64; 2];
    let mut id2 = [0.0f64; 2];
    let mut id3: f64 = 0.0;
    for smp in samples {
        let mut vals = [[0.0; 3]; 2];
        for (i, fiber) in spec.fibers.iter().enumerate() {
            let v = eval_with_derivatives(&fiber.warping, smp.s, 2)?;
            vals[i] = [v[0], v[1], v[2]];
            let lam = if i == 0 { smp.lambda1 } else { smp.lambda2 };
            id1[i] = id1[i].max((v[2] - (smp.a + smp.b * smp.t_norm2 - lam * smp.lambda_n) * v[0]).abs());
            id2[i] = id2[i].max((v[1] * v[1] + (lam * lam - smp.a) * v[0] * v[0] - fiber.curvature).abs());
        }
        id3 = id3.max((vals[0][1] * vals[1][1] - (smp.a - smp.lambda1 * smp.lambda2) * vals[0][0] * vals[1][0]).abs());
    }
    let desc = format!("{} base samples", samples.len());
    let mut report = ResidualReport::new();
    for i in 0..2 {
        report.push_with(tol, &format!("id1_{}", i + 1), id1[i], desc.clone());
        if spec.fibers[i].dim > 1 {
            report.push_with(tol, &format!("id2_{}", i + 1), id2[i], desc.clone());
        } else {
            report.note(format!("id2_{} skipped: fiber {} is one-dimensional", i + 1, i + 1));
        }
    }
    report.push_with(tol, "id3", id3, desc);
    Ok(report)
}

/// Eigen-decomposition at `y` matched to the three roles of the reference
/// spectrum: returns `(λ_n, λ_1, λ_2)`.
fn role_values(data: &StructureData, y: &[f64], tol: Option<f64>) -> Result<[f64; 3]> {
    let spec = principal_decomposition(data, y, tol)?;
    let get = |r: usize| {
        spec.role_index(r)
            .map(|i| spec.clusters[i].value)
            .ok_or_else(|| GeomError::Constraint(format!("expected three principal curvatures at {y:?}")))
    };
    if spec.clusters.len() != 3 {
        return Err(GeomError::Constraint(format!(
            "expected three principal curvatures at {y:?}, found {}",
            spec.clusters.len()
        )));
    }
    Ok([get(0)?, get(1)?, get(2)?])
}

/// Component of `[F_a, F_b]` transverse to `D_i`, where
/// `F = (A - λ_j)(A - λ_k) E` for the two other roles `j, k` and `E_a, E_b`
/// are constant fields equal to eigenvectors of `D_i` at `x`. `role` is 1 or
/// 2. Returns 0 when `p_i < 2` (a line field is always involutive).
pub fn involutivity_residual(data: &StructureData, role: usize, x: &[f64], cfg: &CheckConfig) -> Result<f64> {
    if role != 1 && role != 2 {
        return Err(GeomError::Invalid(format!("cluster role must be 1 or 2, got {role}")));
    }
    let h = cfg.step;
    data.metric.check_margin(x, 2.0 * h)?;
    let spectrum = principal_decomposition(data, x, cfg.cluster_tol)?;
    if spectrum.clusters.len() != 3 {
        return Err(GeomError::Constraint(format!(
            "expected three principal curvatures, found {}",
            spectrum.clusters.len()
        )));
    }
    if spectrum.poorly_separated {
        return Err(GeomError::IllConditioned(format!(
            "principal curvatures {:?} are within 10x the clustering tolerance",
            spectrum.clusters.iter().map(|c| c.value).collect::<Vec<_>>()
        )));
    }
    let ci = spectrum.role_index(role).unwrap();
    let cluster = &spectrum.clusters[ci];
    if cluster.multiplicity < 2 {
        return Ok(0.0);
    }
    let (e_a, e_b) = (cluster.basis[0].clone(), cluster.basis[1].clone());
    let others: Vec<usize> = (0..3).filter(|&r| r != role).collect();

    let projected = |y: &[f64], e: &DVector<f64>| -> Result<DVector<f64>> {
        let lam = role_values(data, y, cfg.cluster_tol)?;
        let a_op = (data.shape)(y);
        let n = e.len();
        let id = DMatrix::<f64>::identity(n, n);
        let p = (&a_op - &id * lam[others[0]]) * (&a_op - &id * lam[others[1]]);
        Ok(p * e)
    };
    let fa = projected(x, &e_a)?;
    let fb = projected(x, &e_b)?;
    let inv2h = 0.5 / h;
    let d_fa = central(x, h, |p, m| -> Result<DVector<f64>> {
        Ok((projected(p, &e_a)? - projected(m, &e_a)?) * inv2h)
    });
    let d_fb = central(x, h, |p, m| -> Result<DVector<f64>> {
        Ok((projected(p, &e_b)? - projected(m, &e_b)?) * inv2h)
    });
    let n = x.len();
    let mut bracket = DVector::zeros(n);
    for j in 0..n {
        bracket += d_fb[j].clone()? * fa[j] - d_fa[j].clone()? * fb[j];
    }
    let g = data.metric.matrix(x)?;
    let mut along = DVector::zeros(n);
    for v in &cluster.basis {
        along += v * g_inner(&g, v, &bracket);
    }
    Ok(g_norm(&g, &(bracket - along)))
}
