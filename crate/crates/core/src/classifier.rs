//! The two-fiber Einstein example with three principal curvatures and its
//! certification, the curvature spread, conformal flatness of single-fiber
//! warped products and the cylinder identities.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    build_mwp_metric, curvature_oracle_with, mwp_sectional_closed_form, orthonormal_frame, sectional_curvature, weyl_norm,
    CoordinateMetric, FiberSpec, MwpSpec, PlaneClass,
};
use crate::error::{GeomError, Result};
use crate::exec::map_collect;
use crate::grid::{GridSpec, SampleGrid};
use crate::hypersurface::{
    check_id_system, check_log_derivative_link, check_multiplicity_laws, check_quadratics, check_t_principal,
    check_theta_gradient, involutivity_residual, principal_decomposition, slice_samples, structure_sweep, Ambient, CheckConfig, Orientation,
    ShapeSpec, StructureData, StructureDataSpec,
};
use crate::report::{ResidualReport, Tolerances};
use crate::scalarfun::{f_ode_residual, solve_f_ode, Expr, IntervalDomain, SlopeBranch, SmoothFn};

/// Parameters of the two-fiber example `M = I ×_{φ_1} S^{p_1}(k_1) ×_{φ_2} S^{p_2}(k_2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleTheorem3Spec {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub k1: f64,
    pub k2: f64,
    pub rho: f64,
    /// Width of the base window when `ρ <= 0` makes the domain unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default)]
    pub branch: SlopeBranch,
}

/// Base window used for `ρ <= 0` when none is given.
pub const DEFAULT_WINDOW: f64 = 3.0;

impl ExampleTheorem3Spec {
    pub fn new(n: usize, p1: usize, p2: usize, k1: f64, k2: f64, rho: f64) -> Self {
        Self { n, p1, p2, k1, k2, rho, window: None, branch: SlopeBranch::Rising }
    }

    /// The `n = 5`, `p = (2, 2)`, `k = (1, 1)`, `ρ = 4` instance.
    pub fn reference() -> Self {
        Self::new(5, 2, 2, 1.0, 1.0, 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 5 {
            return Err(GeomError::Constraint(format!("need n >= 5, got {}", self.n)));
        }
        if self.p1 < 2 || self.p2 < 2 {
            return Err(GeomError::Constraint(format!(
                "need p1, p2 >= 2, got ({}, {})",
                self.p1, self.p2
            )));
        }
        if self.p1 + self.p2 != self.n - 1 {
            return Err(GeomError::Constraint(format!(
                "p1 + p2 = {} but n - 1 = {}",
                self.p1 + self.p2,
                self.n - 1
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k1.is_finite() && self.k2.is_finite()) {
            return Err(GeomError::Constraint(format!("need k1, k2 > 0, got ({}, {})", self.k1, self.k2)));
        }
        if !self.rho.is_finite() {
            return Err(GeomError::Invalid(format!("rho must be finite, got {}", self.rho)));
        }
        if let Some(w) = self.window {
            if !(w > 0.0 && w.is_finite()) {
                return Err(GeomError::Invalid(format!("window must be positive, got {w}")));
            }
        }
        Ok(())
    }

    fn ps(&self) -> [f64; 2] {
        [self.p1 as f64, self.p2 as f64]
    }

    /// `B_i = sqrt((p_i - 1) k_i / (n - 3))`.
    pub fn b_constants(&self) -> [f64; 2] {
        let p = self.ps();
        let k = [self.k1, self.k2];
        let n3 = self.n as f64 - 3.0;
        [((p[0] - 1.0) * k[0] / n3).sqrt(), ((p[1] - 1.0) * k[1] / n3).sqrt()]
    }

    /// `A_i = sqrt((p_j - 1)/(p_i - 1)) B_i`.
    pub fn a_constants(&self) -> [f64; 2] {
        let p = self.ps();
        let b = self.b_constants();
        [((p[1] - 1.0) / (p[0] - 1.0)).sqrt() * b[0], ((p[0] - 1.0) / (p[1] - 1.0)).sqrt() * b[1]]
    }

    /// `f λ_i = (-1)^i sqrt((p_j - 1)/(p_i - 1))`.
    pub fn principal_coefficients(&self) -> [f64; 2] {
        let p = self.ps();
        [-((p[1] - 1.0) / (p[0] - 1.0)).sqrt(), ((p[0] - 1.0) / (p[1] - 1.0)).sqrt()]
    }

    /// Base interval: the maximal solution interval for `ρ > 0`, the window
    /// otherwise.
    pub fn base_domain(&self, f: &SmoothFn) -> Result<IntervalDomain> {
        let d = f.domain();
        if d.is_bounded() {
            return Ok(d);
        }
        let w = self.window.unwrap_or(DEFAULT_WINDOW);
        match self.branch {
            SlopeBranch::Rising => d.truncate(d.t_min, d.t_min + w),
            SlopeBranch::Falling => d.truncate(d.t_max - w, d.t_max),
        }
    }
}

/// Output of [`build_example_theorem3`].
#[derive(Clone, Debug)]
pub struct ExampleBuild {
    pub spec: ExampleTheorem3Spec,
    pub mwp: MwpSpec,
    pub data: StructureData,
    pub rho: f64,
    /// Ambient warping `f`, restricted to the base interval.
    pub f: SmoothFn,
}

/// Builds the multiply warped product metric and the hypersurface datum
/// `T = ∂_s`, `θ = 0`, `π = s`, `A = diag(0, λ_1 Id, λ_2 Id)` in
/// `I ×_f S^n(1)`.
pub fn build_example_theorem3(spec: &ExampleTheorem3Spec) -> Result<ExampleBuild> {
    spec.validate()?;
    let f0 = solve_f_ode(spec.n, spec.rho, spec.branch)?;
    let base = spec.base_domain(&f0)?;
    let f = f0.restricted(base);
    let b = spec.b_constants();
    let mwp = MwpSpec {
        base,
        fibers: vec![
            FiberSpec::new(spec.p1, spec.k1, f.scaled(b[0])),
            FiberSpec::new(spec.p2, spec.k2, f.scaled(b[1])),
        ],
    };
    let metric = build_mwp_metric(&mwp)?;
    let n = spec.n;
    let (p1, coef) = (spec.p1, spec.principal_coefficients());
    let f_shape = f.clone();
    let shape = Arc::new(move |x: &[f64]| {
        let fv = f_shape.value(x[0]);
        DMatrix::from_fn(n, n, |i, j| {
            if i != j || i == 0 {
                0.0
            } else if i <= p1 {
                coef[0] / fv
            } else {
                coef[1] / fv
            }
        })
    });
    let tangent = Arc::new(move |_: &[f64]| {
        let mut t = DVector::zeros(n);
        t[0] = 1.0;
        t
    });
    let data = StructureData {
        metric,
        shape,
        tangent,
        angle: Arc::new(|_| 0.0),
        height: Arc::new(|x: &[f64]| x[0]),
        ambient: Ambient { f: f.clone(), c: 1 },
        orientation: Orientation::Supplied,
    };
    Ok(ExampleBuild { spec: spec.clone(), mwp, data, rho: spec.rho, f })
}

impl ExampleBuild {
    /// The structure datum as a JSON-serializable spec (every component is
    /// a closed-form function of `s`).
    pub fn structure_spec(&self) -> StructureDataSpec {
        let n = self.spec.n;
        let coef = self.spec.principal_coefficients();
        let over_f = |c: f64| SmoothFn::new(Expr::div(Expr::constant(c), self.f.expr().clone()));
        let diagonal = (0..n)
            .map(|i| match i {
                0 => SmoothFn::constant(0.0),
                i if i <= self.spec.p1 => over_f(coef[0]),
                _ => over_f(coef[1]),
            })
            .collect();
        let tangent = (0..n).map(|i| SmoothFn::constant(if i == 0 { 1.0 } else { 0.0 })).collect();
        StructureDataSpec {
            metric: self.mwp.clone(),
            shape: ShapeSpec::Diagonal(diagonal),
            tangent,
            angle: SmoothFn::constant(0.0),
            height: SmoothFn::new(Expr::var()),
            ambient: Ambient { f: self.f.clone(), c: 1 },
            orientation: Orientation::Supplied,
        }
    }
}

/// Range of sampled sectional curvatures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    pub planes: usize,
}

/// Samples sectional curvature at each grid point over the coordinate
/// planes of a g-orthonormal frame plus `random_planes` random planes.
pub fn constant_curvature_spread(
    metric: &CoordinateMetric,
    grid: &SampleGrid,
    random_planes: usize,
    cfg: &CheckConfig,
) -> Result<Spread> {
    let points = grid.points();
    let per_point = map_collect(cfg.execution, &points, |x| -> Result<Vec<f64>> {
        let bundle = curvature_oracle_with(metric, x, cfg.step, cfg.extrapolation)?;
        let n = x.len();
        let frame = orthonormal_frame(&bundle.metric)?;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let u: Vec<f64> = frame.column(i).iter().copied().collect();
                let v: Vec<f64> = frame.column(j).iter().copied().collect();
                out.push(sectional_curvature(&bundle, &bundle.metric, &u, &v)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut made = 0;
        while made < random_planes {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            match sectional_curvature(&bundle, &bundle.metric, &u, &v) {
                Ok(k) => {
                    out.push(k);
                    made += 1;
                }
                Err(GeomError::DegeneratePlane) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    });
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut planes = 0;
    for values in per_point {
        for k in values? {
            min = min.min(k);
            max = max.max(k);
            planes += 1;
        }
    }
    Ok(Spread { min, max, spread: max - min, planes })
}

/// Sup of the Weyl norm over `grid` for a single-fiber warped product.
pub fn two_curvature_lcf_check(spec: &MwpSpec, grid: &SampleGrid, cfg: &CheckConfig) -> Result<ResidualReport> {
    if spec.fibers.len() != 1 {
        return Err(GeomError::WrongShape(format!(
            "conformal flatness check needs exactly one fiber, got {}",
            spec.fibers.len()
        )));
    }
    if spec.total_dim() < 4 {
        return Err(GeomError::WrongShape(format!(
            "Weyl tensor is only meaningful in dimension >= 4, got {}",
            spec.total_dim()
        )));
    }
    let metric = build_mwp_metric(spec)?;
    let points = grid.points();
    let values = map_collect(cfg.execution, &points, |x| {
        curvature_oracle_with(&metric, x, cfg.step, cfg.extrapolation).and_then(|b| weyl_norm(&b, &b.metric))
    });
    let mut sup: f64 = 0.0;
    for v in values {
        sup = sup.max(v?);
    }
    let mut report = ResidualReport::new();
    report.push_with(&cfg.tolerances, "weyl_sup", sup, grid.describe());
    Ok(report)
}

/// Algebraic consequences of an Einstein hypersurface in the cylinder
/// `I × Q^n(c)` with three principal curvatures and `λ_n = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderReport {
    pub n: usize,
    pub c: i32,
    pub rho: f64,
    /// `|T|^2` from `2c|T|^2 = (n-1)c - ρ`.
    pub t_norm2: f64,
    /// `θ = sqrt(1 - |T|^2)` when a solution exists.
    pub theta: Option<f64>,
    /// Whether `|T|^2` lies in `[0, 1]`.
    pub solvable: bool,
    /// Always false when solvable: `θ` is forced constant, which excludes
    /// three distinct principal curvatures.
    pub consistent: bool,
    /// `λ_1λ_2 = -c|T|^2` from the Gauss equation.
    pub lambda_product_gauss: f64,
    /// `λ_1λ_2 = ρ - (n-1)c + c|T|^2` from the trace identity.
    pub lambda_product_trace: f64,
    pub lambda_product_residual: f64,
    pub flags: Vec<String>,
}

pub fn cylinder_identities(n: usize, c: i32, rho: f64) -> Result<CylinderReport> {
    if c != 1 && c != -1 {
        return Err(GeomError::Invalid(format!("cylinder identities need c = ±1, got {c}")));
    }
    if n < 4 {
        return Err(GeomError::Constraint(format!("need n >= 4, got {n}")));
    }
    if !rho.is_finite() {
        return Err(GeomError::Invalid(format!("rho must be finite, got {rho}")));
    }
    let cf = c as f64;
    let t_norm2 = ((n as f64 - 1.0) * cf - rho) / (2.0 * cf);
    let solvable = (0.0..=1.0).contains(&t_norm2);
    let gauss = -cf * t_norm2;
    let trace = rho - (n as f64 - 1.0) * cf + cf * t_norm2;
    let mut flags = Vec::new();
    if !solvable {
        flags.push(format!("no solution: |T|^2 = {t_norm2} lies outside [0, 1]"));
    } else {
        flags.push("theta is forced constant, contradicting three distinct principal curvatures".to_string());
        if t_norm2 == 0.0 {
            flags.push("|T|^2 = 0 contradicts T != 0".to_string());
        }
    }
    Ok(CylinderReport {
        n,
        c,
        rho,
        t_norm2,
        theta: solvable.then(|| (1.0 - t_norm2).sqrt()),
        solvable,
        consistent: false,
        lambda_product_gauss: gauss,
        lambda_product_trace: trace,
        lambda_product_residual: (gauss - trace).abs(),
        flags,
    })
}

/// Evenly spaced base samples, inset by `margin_fraction` of the base width.
pub fn base_samples(base: &IntervalDomain, count: usize, margin_fraction: f64) -> Vec<f64> {
    let inset = margin_fraction * base.width();
    let (a, b) = (base.t_min + inset, base.t_max - inset);
    if count == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
}

/// The relations among `λ_i`, `φ_i`, `A_i`, `B_i`, `k_i` and `f` satisfied by
/// the example, evaluated along `s_values` at fiber origin.
pub fn example_algebraic_laws(build: &ExampleBuild, s_values: &[f64], tol: &Tolerances) -> Result<ResidualReport> {
    let spec = &build.spec;
    let n = spec.n;
    let nf = n as f64;
    let p = spec.ps();
    let k = [spec.k1, spec.k2];
    let samples = slice_samples(&build.data, s_values, None)?;
    let desc = format!("{} base samples", samples.len());

    let mut sup = BTreeMap::<String, f64>::new();
    let mut bump = |name: &str, v: f64| {
        let e = sup.entry(name.to_string()).or_insert(0.0);
        *e = e.max(if v.is_nan() { f64::INFINITY } else { v.abs() });
    };
    let mut flags = BTreeSet::new();
    let mut notes = BTreeSet::new();
    for smp in &samples {
        let x = origin_at(n, smp.s);
        let spectrum = principal_decomposition(&build.data, &x, None)?;
        for part in [
            check_quadratics(&spectrum, build.rho, smp.a, smp.b, smp.t_norm2, tol),
            check_multiplicity_laws(&spectrum, smp.b, smp.t_norm2, n, tol),
        ] {
            for c in &part.checks {
                bump(&c.name, c.residual);
            }
            flags.extend(part.flags);
            notes.extend(part.notes);
        }

        let (l1, l2) = (smp.lambda1, smp.lambda2);
        bump("three_eq_energy", smp.a + smp.t_norm2 * smp.b + build.rho / (nf - 1.0));
        bump("three_eq_product", l1 * l2 + (nf - 2.0) * smp.t_norm2 * smp.b);
        bump("three_eq_sum", (p[0] - 1.0) * l1 + (p[1] - 1.0) * l2);
        if !(l1 < 0.0 && 0.0 < l2) {
            flags.insert(format!("expected λ1 < 0 < λ2, got ({l1}, {l2}) at s = {}", smp.s));
        }
        if !(smp.b > 0.0) {
            flags.insert(format!("b = {} is not positive at s = {}", smp.b, smp.s));
        }

        // Constants measured from the datum: A_i from λ_i φ_i, B_i from φ_i/f.
        let phi = [build.mwp.fibers[0].warping.value(smp.s), build.mwp.fibers[1].warping.value(smp.s)];
        let fv = build.f.value(smp.s);
        let a_meas = [-l1 * phi[0], l2 * phi[1]];
        let b_meas = [phi[0] / fv, phi[1] / fv];
        let a_spec = spec.a_constants();
        bump("linrela_1", a_meas[0] - a_spec[0]);
        bump("linrela_2", a_meas[1] - a_spec[1]);
        bump("multiple", phi[1] / phi[0] - (p[1] - 1.0) * a_meas[1] / ((p[0] - 1.0) * a_meas[0]));
        bump("rela1_ratio", (p[0] - 1.0) * a_meas[0] / b_meas[0] - (p[1] - 1.0) * a_meas[1] / b_meas[1]);
        bump("rela1_k1", k[0] - (nf - 3.0) * a_meas[0] * a_meas[0] / (p[1] - 1.0));
        bump("rela1_k2", k[1] - (nf - 3.0) * a_meas[1] * a_meas[1] / (p[0] - 1.0));
        bump("a1a2_b1b2", a_meas[0] * a_meas[1] - b_meas[0] * b_meas[1]);
        bump("f_ode", f_ode_residual(&build.f, n, build.rho, smp.s)?);
    }
    let mut out = ResidualReport::new();
    for (name, v) in sup {
        out.push_with(tol, &name, v, desc.clone());
    }
    out.flags = flags.into_iter().collect();
    out.notes = notes.into_iter().collect();

    let id = check_id_system(&build.mwp, &samples, tol)?;
    out.merge("", id);

    let axes: Vec<Vec<f64>> =
        std::iter::once(s_values.to_vec()).chain(std::iter::repeat(vec![0.0]).take(n - 1)).collect();
    let line = SampleGrid::from_axes(axes)?;
    let phis: Vec<SmoothFn> = build.mwp.fibers.iter().map(|f| f.warping.clone()).collect();
    let cfg = CheckConfig { tolerances: tol.clone(), ..CheckConfig::default() };
    out.merge("", check_log_derivative_link(&build.data, &phis, &line, &cfg)?);
    Ok(out)
}

fn origin_at(n: usize, s: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = s;
    x
}

/// Options for [`certify_example`].
#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub grid: GridSpec,
    /// Base samples for the algebraic identities.
    pub law_samples: usize,
    /// Random planes per point in the curvature spread (in addition to the
    /// frame coordinate planes).
    pub random_planes: usize,
    /// Points at which involutivity of `D_1`, `D_2` is tested.
    pub involutivity_points: usize,
    /// Also integrate `T/|T|` and check `∇θ`; costs a few metric evaluations
    /// per RK4 step.
    pub theta_gradient: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { grid: GridSpec::default(), law_samples: 50, random_planes: 20, involutivity_points: 3, theta_gradient: true }
    }
}

/// Margin reserved around grid points: two nested central-difference stencils.
pub fn stencil_margin(step: f64) -> f64 {
    4.0 * step
}

/// Full certification of a built example: Einstein residual and (A)–(F) on a
/// tensor grid, plane-class curvatures against the closed form at the base
/// midpoint, algebraic identities along the base, and involutivity.
pub fn certify_example(build: &ExampleBuild, opts: &CertifyOptions, cfg: &CheckConfig) -> Result<ResidualReport> {
    let tol = &cfg.tolerances;
    let data = &build.data;
    let grid = SampleGrid::tensor(data.metric.bounds(), opts.grid, stencil_margin(cfg.step))?;
    let sweep = structure_sweep(data, &grid, cfg, Some(build.rho))?;
    let mut report = ResidualReport::new();
    let ein = sweep.einstein_sup.unwrap_or(f64::NAN);
    report.push_with(tol, "einstein_residual", ein, format!("{}; rho = {}", grid.describe(), build.rho));
    report.merge("", sweep.report);

    // Plane classes at the base midpoint.
    let base = build.mwp.base;
    let s_mid = 0.5 * (base.t_min + base.t_max);
    let x_mid = origin_at(build.spec.n, s_mid);
    let bundle = curvature_oracle_with(&data.metric, &x_mid, cfg.step, cfg.extrapolation)?;
    let g = &bundle.metric;
    let e = |i: usize| {
        let mut v = vec![0.0; build.spec.n];
        v[i] = 1.0 / g[(i, i)].sqrt();
        v
    };
    let o1 = build.mwp.fiber_offset(0);
    let o2 = build.mwp.fiber_offset(1);
    let classes = [
        ("sec_base_fiber1", PlaneClass::BaseFiber(0), (0, o1)),
        ("sec_base_fiber2", PlaneClass::BaseFiber(1), (0, o2)),
        ("sec_within_fiber1", PlaneClass::WithinFiber(0), (o1, o1 + 1)),
        ("sec_within_fiber2", PlaneClass::WithinFiber(1), (o2, o2 + 1)),
        ("sec_mixed", PlaneClass::Mixed, (o1, o2)),
    ];
    let mut class_min = f64::INFINITY;
    let mut class_max = f64::NEG_INFINITY;
    for (name, class, (i, j)) in classes {
        let closed = mwp_sectional_closed_form(&build.mwp, s_mid, class)?;
        let oracle = sectional_curvature(&bundle, g, &e(i), &e(j))?;
        report.push(name, (closed - oracle).abs(), tol_or(tol, name, 1e-3), format!("s = {s_mid}"));
        report.metrics.insert(format!("{name}_value"), oracle);
        class_min = class_min.min(closed);
        class_max = class_max.max(closed);
    }
    let spread = constant_curvature_spread(&data.metric, &SampleGrid::point(&x_mid), opts.random_planes, cfg)?;
    report.metrics.insert("spread".into(), spread.spread);
    report.metrics.insert("spread_min".into(), spread.min);
    report.metrics.insert("spread_max".into(), spread.max);
    // Non-constant curvature: the sampled spread must reach the closed-form
    // class spread, which is positive.
    let need = class_max - class_min;
    report.push(
        "spread_deficit",
        (need - spread.spread).max(0.0) + if need > 0.0 { 0.0 } else { f64::INFINITY },
        tol_or(tol, "spread_deficit", 1e-3),
        format!("s = {s_mid}; {} planes", spread.planes),
    );

    // T principal with λ_n = 0.
    let mut t_principal: f64 = 0.0;
    for x in grid.points() {
        t_principal = t_principal.max(check_t_principal(data, &x)?);
    }
    report.push_with(tol, "T_principal", t_principal, grid.describe());

    let s_values = base_samples(&base, opts.law_samples, opts.grid.margin_fraction);
    report.merge("", example_algebraic_laws(build, &s_values, tol)?);

    if opts.theta_gradient {
        let tg_grid = SampleGrid::tensor(data.metric.bounds(), GridSpec { points_per_axis: 3, ..opts.grid }, stencil_margin(cfg.step))?;
        report.merge("", check_theta_gradient(data, &tg_grid, cfg)?);
    }

    if opts.involutivity_points > 0 {
        let s_inv = base_samples(&base, opts.involutivity_points, 0.25);
        for role in [1, 2] {
            let mut sup: f64 = 0.0;
            for &s in &s_inv {
                let mut x = origin_at(build.spec.n, s);
                // Off-origin fiber coordinates so the chart factors vary.
                for (i, v) in x.iter_mut().enumerate().skip(1) {
                    let (lo, hi) = data.metric.bounds()[i];
                    *v = 0.2 * (hi - lo) * if i % 2 == 0 { 1.0 } else { -1.0 } * 0.5;
                }
                sup = sup.max(involutivity_residual(data, role, &x, cfg)?);
            }
            let name = format!("involutivity_{role}");
            report.push_with(tol, &name, sup, format!("{} base points", s_inv.len()));
        }
    }
    Ok(report)
}

fn tol_or(tol: &Tolerances, name: &str, default: f64) -> f64 {
    if tol.iter().any(|(k, _)| k == name) {
        tol.get(name)
    } else {
        default
    }
}

/// Valid parameter combinations for the sweep over
/// `n ∈ ns`, `p_1 + p_2 = n - 1` with `p_i >= 2`, `k_i ∈ ks`, `ρ ∈ {n-1, 2(n-1)}`.
pub fn sweep_specs(ns: &[usize], ks: &[f64]) -> Vec<ExampleTheorem3Spec> {
    let mut out = Vec::new();
    for &n in ns {
        if n < 5 {
            continue;
        }
        for p1 in 2..=(n - 3) {
            let p2 = n - 1 - p1;
            for &k1 in ks {
                for &k2 in ks {
                    for rho in [(n - 1) as f64, 2.0 * (n - 1) as f64] {
                        out.push(ExampleTheorem3Spec::new(n, p1, p2, k1, k2, rho));
                    }
                }
            }
        }
    }
    out
}

/// One CSV row per sweep spec: parameters, then every check residual.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub spec: ExampleTheorem3Spec,
    pub report: ResidualReport,
}

impl SweepRow {
    pub fn pass(&self) -> bool {
        self.report.all_pass() && self.report.flags.is_empty()
    }
}

/// CSV with header `n,p1,p2,k1,k2,rho,pass,<check>...` using the check order
/// of the first row.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let names: Vec<String> = rows.first().map(|r| r.report.checks.iter().map(|c| c.name.clone()).collect()).unwrap_or_default();
    let mut out = String::from("n,p1,p2,k1,k2,rho,pass");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in rows {
        let s = &r.spec;
        out.push_str(&format!("{},{},{},{},{},{},{}", s.n, s.p1, s.p2, s.k1, s.k2, s.rho, r.pass()));
        for name in &names {
            match r.report.residual(name) {
                Some(v) => out.push_str(&format!(",{v:e}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Certifies every spec, in parallel over specs.
pub fn run_sweep(specs: &[ExampleTheorem3Spec], opts: &CertifyOptions, cfg: &CheckConfig) -> Result<Vec<SweepRow>> {
    let inner = CheckConfig { execution: crate::exec::Execution::Sequential, ..cfg.clone() };
    map_collect(cfg.execution, specs, |spec| -> Result<SweepRow> {
        let build = build_example_theorem3(spec)?;
        let report = certify_example(&build, opts, &inner)?;
        Ok(SweepRow { spec: spec.clone(), report })
    })
    .into_iter()
    .collect()
}

/// `π/2` for the reference example; the midpoint of the base in general.
pub fn base_midpoint(build: &ExampleBuild) -> f64 {
    let b = build.mwp.base;
    0.5 * (b.t_min + b.t_max)
}
