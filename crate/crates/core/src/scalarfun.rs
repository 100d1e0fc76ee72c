//! Closed-form functions of one real variable with exact first and second
//! derivatives.
//!
//! A [`SmoothFn`] wraps an expression tree together with its symbolically
//! differentiated first and second derivative trees, so `f`, `f'` and `f''`
//! are evaluated without any discretization error. This is what lets the
//! ambient invariants and the warping-function identities be checked at
//! residual levels near machine precision.
//!
//! Expression trees serialize as `{"op": <name>, "args": [...]}`:
//!
//! | op      | args                   |
//! |---------|------------------------|
//! | `const` | `[value]`              |
//! | `var`   | `[]`                   |
//! | `add`   | `[lhs, rhs]`           |
//! | `mul`   | `[lhs, rhs]`           |
//! | `div`   | `[num, den]`           |
//! | `powi`  | `[base, exponent]` (exponent is an integer) |
//! | `sin`, `cos`, `sinh`, `cosh`, `exp` | `[arg]` |

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Expression tree over the single variable `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExpr", into = "RawExpr")]
pub enum Expr {
    Const(f64),
    Var,
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Powi(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sinh(Box<Expr>),
    Cosh(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn var() -> Self {
        Expr::Var
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Self {
        match (&lhs, &rhs) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a + b),
            (Expr::Const(z), _) if *z == 0.0 => rhs,
            (_, Expr::Const(z)) if *z == 0.0 => lhs,
            _ => Expr::Add(Box::new(lhs), Box::new(rhs)),
        }
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Self {
        match (&lhs, &rhs) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a * b),
            (Expr::Const(z), _) | (_, Expr::Const(z)) if *z == 0.0 => Expr::Const(0.0),
            (Expr::Const(one), _) if *one == 1.0 => rhs,
            (_, Expr::Const(one)) if *one == 1.0 => lhs,
            _ => Expr::Mul(Box::new(lhs), Box::new(rhs)),
        }
    }

    pub fn div(num: Expr, den: Expr) -> Self {
        match (&num, &den) {
            (Expr::Const(z), _) if *z == 0.0 => Expr::Const(0.0),
            (_, Expr::Const(one)) if *one == 1.0 => num,
            _ => Expr::Div(Box::new(num), Box::new(den)),
        }
    }

    pub fn powi(base: Expr, exponent: i32) -> Self {
        match (&base, exponent) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => base,
            (Expr::Const(c), e) => Expr::Const(c.powi(e)),
            _ => Expr::Powi(Box::new(base), exponent),
        }
    }

    pub fn sub(lhs: Expr, rhs: Expr) -> Self {
        Expr::add(lhs, Expr::mul(Expr::Const(-1.0), rhs))
    }

    pub fn sin(arg: Expr) -> Self {
        Expr::Sin(Box::new(arg))
    }

    pub fn cos(arg: Expr) -> Self {
        Expr::Cos(Box::new(arg))
    }

    pub fn sinh(arg: Expr) -> Self {
        Expr::Sinh(Box::new(arg))
    }

    pub fn cosh(arg: Expr) -> Self {
        Expr::Cosh(Box::new(arg))
    }

    pub fn exp(arg: Expr) -> Self {
        Expr::Exp(Box::new(arg))
    }

    /// `scale * expr`
    pub fn scaled(self, scale: f64) -> Self {
        Expr::mul(Expr::Const(scale), self)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var => t,
            Expr::Add(a, b) => a.eval(t) + b.eval(t),
            Expr::Mul(a, b) => a.eval(t) * b.eval(t),
            Expr::Div(a, b) => a.eval(t) / b.eval(t),
            Expr::Powi(a, e) => a.eval(t).powi(*e),
            Expr::Sin(a) => a.eval(t).sin(),
            Expr::Cos(a) => a.eval(t).cos(),
            Expr::Sinh(a) => a.eval(t).sinh(),
            Expr::Cosh(a) => a.eval(t).cosh(),
            Expr::Exp(a) => a.eval(t).exp(),
        }
    }

    /// Symbolic derivative with respect to `t`. Only trivial constant
    /// folding is applied.
    pub fn derivative(&self) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var => Expr::Const(1.0),
            Expr::Add(a, b) => Expr::add(a.derivative(), b.derivative()),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative()),
            ),
            Expr::Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.derivative(), (**b).clone()),
                    Expr::mul((**a).clone(), b.derivative()),
                ),
                Expr::powi((**b).clone(), 2),
            ),
            Expr::Powi(a, e) => Expr::mul(
                Expr::mul(Expr::Const(*e as f64), Expr::powi((**a).clone(), e - 1)),
                a.derivative(),
            ),
            Expr::Sin(a) => Expr::mul(Expr::cos((**a).clone()), a.derivative()),
            Expr::Cos(a) => Expr::mul(
                Expr::mul(Expr::Const(-1.0), Expr::sin((**a).clone())),
                a.derivative(),
            ),
            Expr::Sinh(a) => Expr::mul(Expr::cosh((**a).clone()), a.derivative()),
            Expr::Cosh(a) => Expr::mul(Expr::sinh((**a).clone()), a.derivative()),
            Expr::Exp(a) => Expr::mul(Expr::exp((**a).clone()), a.derivative()),
        }
    }

    fn op_name(&self) -> &'static str {
        match self {
            Expr::Const(_) => "const",
            Expr::Var => "var",
            Expr::Add(..) => "add",
            Expr::Mul(..) => "mul",
            Expr::Div(..) => "div",
            Expr::Powi(..) => "powi",
            Expr::Sin(_) => "sin",
            Expr::Cos(_) => "cos",
            Expr::Sinh(_) => "sinh",
            Expr::Cosh(_) => "cosh",
            Expr::Exp(_) => "exp",
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var => write!(f, "t"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "({a})/({b})"),
            Expr::Powi(a, e) => write!(f, "({a})^{e}"),
            other => {
                let arg = match other {
                    Expr::Sin(a) | Expr::Cos(a) | Expr::Sinh(a) | Expr::Cosh(a) | Expr::Exp(a) => a,
                    _ => unreachable!(),
                };
                write!(f, "{}({arg})", other.op_name())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawArg {
    Num(f64),
    Expr(Box<RawExpr>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawExpr {
    op: String,
    #[serde(default)]
    args: Vec<RawArg>,
}

impl RawArg {
    fn into_expr(self) -> std::result::Result<Expr, String> {
        match self {
            RawArg::Num(v) => Ok(Expr::Const(v)),
            RawArg::Expr(raw) => Expr::try_from(*raw),
        }
    }
}

impl TryFrom<RawExpr> for Expr {
    type Error = String;

    fn try_from(raw: RawExpr) -> std::result::Result<Self, Self::Error> {
        let op = raw.op.as_str();
        let arity = |want: usize| {
            if raw.args.len() == want {
                Ok(())
            } else {
                Err(format!("op `{op}` takes {want} args, got {}", raw.args.len()))
            }
        };
        match op {
            "const" => {
                arity(1)?;
                match raw.args[0] {
                    RawArg::Num(v) => Ok(Expr::Const(v)),
                    _ => Err("op `const` expects a number".into()),
                }
            }
            "var" => {
                arity(0)?;
                Ok(Expr::Var)
            }
            "add" | "mul" | "div" => {
                arity(2)?;
                let mut it = raw.args.into_iter();
                let a = Box::new(it.next().unwrap().into_expr()?);
                let b = Box::new(it.next().unwrap().into_expr()?);
                Ok(match op {
                    "add" => Expr::Add(a, b),
                    "mul" => Expr::Mul(a, b),
                    _ => Expr::Div(a, b),
                })
            }
            "powi" => {
                arity(2)?;
                let mut it = raw.args.into_iter();
                let base = it.next().unwrap().into_expr()?;
                match it.next().unwrap() {
                    RawArg::Num(e) if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 => {
                        Ok(Expr::Powi(Box::new(base), e as i32))
                    }
                    _ => Err("op `powi` expects an integer exponent".into()),
                }
            }
            "sin" | "cos" | "sinh" | "cosh" | "exp" => {
                arity(1)?;
                let a = Box::new(raw.args.into_iter().next().unwrap().into_expr()?);
                Ok(match op {
                    "sin" => Expr::Sin(a),
                    "cos" => Expr::Cos(a),
                    "sinh" => Expr::Sinh(a),
                    "cosh" => Expr::Cosh(a),
                    _ => Expr::Exp(a),
                })
            }
            other => Err(format!("unknown op `{other}`")),
        }
    }
}

impl From<Expr> for RawExpr {
    fn from(expr: Expr) -> Self {
        let op = expr.op_name().to_string();
        let sub = |e: Box<Expr>| RawArg::Expr(Box::new(RawExpr::from(*e)));
        let args = match expr {
            Expr::Const(c) => vec![RawArg::Num(c)],
            Expr::Var => vec![],
            Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![sub(a), sub(b)],
            Expr::Powi(a, e) => vec![sub(a), RawArg::Num(e as f64)],
            Expr::Sin(a) | Expr::Cos(a) | Expr::Sinh(a) | Expr::Cosh(a) | Expr::Exp(a) => {
                vec![sub(a)]
            }
        };
        RawExpr { op, args }
    }
}

/// Interval of the real line; `t_max` may be `+inf` and `t_min` may be `-inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct IntervalDomain {
    pub t_min: f64,
    pub t_max: f64,
    pub open: bool,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    min: Option<f64>,
    max: Option<f64>,
    #[serde(default = "default_open")]
    open: bool,
}

fn default_open() -> bool {
    true
}

impl TryFrom<RawInterval> for IntervalDomain {
    type Error = String;

    fn try_from(raw: RawInterval) -> std::result::Result<Self, Self::Error> {
        let t_min = raw.min.unwrap_or(f64::NEG_INFINITY);
        let t_max = raw.max.unwrap_or(f64::INFINITY);
        if t_min < t_max {
            Ok(IntervalDomain { t_min, t_max, open: raw.open })
        } else {
            Err(format!("empty interval [{t_min}, {t_max}]"))
        }
    }
}

impl From<IntervalDomain> for RawInterval {
    fn from(d: IntervalDomain) -> Self {
        RawInterval {
            min: d.t_min.is_finite().then_some(d.t_min),
            max: d.t_max.is_finite().then_some(d.t_max),
            open: d.open,
        }
    }
}

impl IntervalDomain {
    pub fn open(t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(t_min, t_max, true)
    }

    pub fn closed(t_min: f64, t_max: f64) -> Result<Self> {
        Self::new(t_min, t_max, false)
    }

    pub fn new(t_min: f64, t_max: f64, open: bool) -> Result<Self> {
        if t_min < t_max {
            Ok(Self { t_min, t_max, open })
        } else {
            Err(GeomError::Invalid(format!("empty interval [{t_min}, {t_max}]")))
        }
    }

    pub fn real_line() -> Self {
        Self { t_min: f64::NEG_INFINITY, t_max: f64::INFINITY, open: true }
    }

    pub fn contains(&self, t: f64) -> bool {
        if self.open {
            t > self.t_min && t < self.t_max
        } else {
            t >= self.t_min && t <= self.t_max
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.t_min.is_finite() && self.t_max.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.t_max - self.t_min
    }

    /// Intersection with `[lo, hi]`, keeping the openness flag.
    pub fn truncate(&self, lo: f64, hi: f64) -> Result<Self> {
        Self::new(self.t_min.max(lo), self.t_max.min(hi), self.open)
    }
}

impl fmt::Display for IntervalDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (l, r) = if self.open { ('(', ')') } else { ('[', ']') };
        write!(f, "{l}{}, {}{r}", self.t_min, self.t_max)
    }
}

/// Expression with cached first and second derivative trees and a domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothFn {
    expr: Expr,
    d1: Expr,
    d2: Expr,
    domain: IntervalDomain,
}

impl SmoothFn {
    pub fn new(expr: Expr) -> Self {
        Self::with_domain(expr, IntervalDomain::real_line())
    }

    pub fn with_domain(expr: Expr, domain: IntervalDomain) -> Self {
        let d1 = expr.derivative();
        let d2 = d1.derivative();
        Self { expr, d1, d2, domain }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Expr::Const(value))
    }

    pub fn restricted(&self, domain: IntervalDomain) -> Self {
        Self { domain, ..self.clone() }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn first_derivative_expr(&self) -> &Expr {
        &self.d1
    }

    pub fn second_derivative_expr(&self) -> &Expr {
        &self.d2
    }

    pub fn domain(&self) -> IntervalDomain {
        self.domain
    }

    /// Derivative as a new function on the same domain.
    pub fn derivative(&self) -> SmoothFn {
        SmoothFn::with_domain(self.d1.clone(), self.domain)
    }

    /// `scale * self`.
    pub fn scaled(&self, scale: f64) -> SmoothFn {
        SmoothFn::with_domain(self.expr.clone().scaled(scale), self.domain)
    }

    /// Unchecked evaluation, for callers that already validated `t`.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.expr.eval(t)
    }

    #[inline]
    pub fn d1(&self, t: f64) -> f64 {
        self.d1.eval(t)
    }

    #[inline]
    pub fn d2(&self, t: f64) -> f64 {
        self.d2.eval(t)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(eval_with_derivatives(self, t, 0)?[0])
    }

    /// Fails unless the function is strictly positive at `samples` evenly
    /// spaced interior points of `domain`.
    pub fn check_positive_on(&self, domain: &IntervalDomain, samples: usize) -> Result<()> {
        let (lo, hi) = (domain.t_min, domain.t_max);
        if !domain.is_bounded() {
            return Err(GeomError::Invalid(format!(
                "positivity can only be sampled on a bounded interval, got {domain}"
            )));
        }
        for i in 1..=samples {
            let t = lo + (hi - lo) * i as f64 / (samples + 1) as f64;
            let v = self.value(t);
            if !(v > 0.0) {
                return Err(GeomError::Positivity { t, value: v });
            }
        }
        Ok(())
    }
}

impl Serialize for SmoothFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.expr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SmoothFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Expr::deserialize(d).map(SmoothFn::new)
    }
}

/// `[f(t), f'(t), …]` up to `order` (at most 2).
pub fn eval_with_derivatives(f: &SmoothFn, t: f64, order: usize) -> Result<Vec<f64>> {
    if order > 2 {
        return Err(GeomError::Unsupported(format!(
            "derivative order {order} (maximum is 2)"
        )));
    }
    if !f.domain.contains(t) {
        return Err(GeomError::Domain { value: t, domain: f.domain.to_string() });
    }
    let trees = [&f.expr, &f.d1, &f.d2];
    let out: Vec<f64> = trees[..=order].iter().map(|e| e.eval(t)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(GeomError::NonFinite(t));
    }
    Ok(out)
}

/// Which of the two mirror-image solutions of the f-equation to return.
///
/// Every solution of `(f')^2 + ρ/(n-1) f^2 = (n-3)/(n-2)` that is positive on
/// an interval is a translate of one of these two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeBranch {
    /// `f(0) = 0`, `f' > 0` at the left end, domain starts at 0.
    #[default]
    Rising,
    /// Reflection `t -> -t` of the rising branch; domain ends at 0.
    Falling,
}

/// Closed-form positive solution of `(f')^2 + ρ/(n-1) f^2 = (n-3)/(n-2)`.
///
/// * `ρ > 0`: `f = C sin(ωt)` on `(0, π/ω)`
/// * `ρ = 0`: `f = sqrt((n-3)/(n-2)) t` on `(0, ∞)`
/// * `ρ < 0`: `f = C sinh(ωt)` on `(0, ∞)`
///
/// with `ω = sqrt(|ρ|/(n-1))` and `C ω = sqrt((n-3)/(n-2))`.
pub fn solve_f_ode(n: usize, rho: f64, branch: SlopeBranch) -> Result<SmoothFn> {
    if n < 5 {
        return Err(GeomError::Constraint(format!(
            "the three-curvature classification needs n >= 5, got n = {n}"
        )));
    }
    if !rho.is_finite() {
        return Err(GeomError::Invalid(format!("rho must be finite, got {rho}")));
    }
    let energy = (n as f64 - 3.0) / (n as f64 - 2.0);
    let mu = rho / (n as f64 - 1.0);
    let sign = match branch {
        SlopeBranch::Rising => 1.0,
        SlopeBranch::Falling => -1.0,
    };
    let arg = |omega: f64| Expr::mul(Expr::Const(sign * omega), Expr::Var);
    let (expr, extent) = if mu > 0.0 {
        let omega = mu.sqrt();
        (Expr::sin(arg(omega)).scaled(energy.sqrt() / omega), PI / omega)
    } else if mu == 0.0 {
        (arg(1.0).scaled(energy.sqrt()), f64::INFINITY)
    } else {
        let omega = (-mu).sqrt();
        (Expr::sinh(arg(omega)).scaled(energy.sqrt() / omega), f64::INFINITY)
    };
    let domain = match branch {
        SlopeBranch::Rising => IntervalDomain::open(0.0, extent)?,
        SlopeBranch::Falling => IntervalDomain::open(-extent, 0.0)?,
    };
    Ok(SmoothFn::with_domain(expr, domain))
}

/// Pointwise residual `|(f')^2 + ρ/(n-1) f^2 - (n-3)/(n-2)|`.
pub fn f_ode_residual(f: &SmoothFn, n: usize, rho: f64, t: f64) -> Result<f64> {
    let v = eval_with_derivatives(f, t, 1)?;
    let energy = (n as f64 - 3.0) / (n as f64 - 2.0);
    Ok((v[1] * v[1] + rho / (n as f64 - 1.0) * v[0] * v[0] - energy).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn central_diff(g: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (g(t + h) - g(t - h)) / (2.0 * h)
    }

    #[test]
    fn sin_at_zero() {
        let f = SmoothFn::new(Expr::sin(Expr::Var));
        assert_eq!(eval_with_derivatives(&f, 0.0, 2).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_one() {
        let f = SmoothFn::constant(1.0);
        assert_eq!(eval_with_derivatives(&f, 0.5, 2).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn scaled_sine_at_half_pi() {
        let c = (2.0f64 / 3.0).sqrt();
        let f = SmoothFn::new(Expr::sin(Expr::Var).scaled(c));
        let v = eval_with_derivatives(&f, PI / 2.0, 2).unwrap();
        assert_abs_diff_eq!(v[0], 0.816496580927726, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], -0.816496580927726, epsilon = 1e-12);
    }

    #[test]
    fn order_and_domain_errors() {
        let f = SmoothFn::with_domain(Expr::Var, IntervalDomain::open(0.0, 1.0).unwrap());
        assert!(matches!(eval_with_derivatives(&f, 0.5, 3), Err(GeomError::Unsupported(_))));
        assert!(matches!(eval_with_derivatives(&f, 1.0, 0), Err(GeomError::Domain { .. })));
        let g = SmoothFn::new(Expr::div(Expr::Const(1.0), Expr::Var));
        assert!(matches!(eval_with_derivatives(&g, 0.0, 0), Err(GeomError::NonFinite(_))));
    }

    #[test]
    fn second_derivative_node_is_derivative_of_first() {
        let f = SmoothFn::new(Expr::div(
            Expr::cosh(Expr::Var),
            Expr::add(Expr::Const(2.0), Expr::sin(Expr::Var)),
        ));
        assert_eq!(f.derivative().first_derivative_expr(), f.second_derivative_expr());
    }

    #[test]
    fn f_ode_examples() {
        let f = solve_f_ode(5, 4.0, SlopeBranch::Rising).unwrap();
        let c = (2.0f64 / 3.0).sqrt();
        assert_eq!(f.domain(), IntervalDomain::open(0.0, PI).unwrap());
        for t in [0.3, 1.0, 2.5] {
            assert_abs_diff_eq!(f.value(t), c * t.sin(), epsilon = 1e-14);
        }

        let f = solve_f_ode(5, 0.0, SlopeBranch::Rising).unwrap();
        assert_eq!(f.domain().t_max, f64::INFINITY);
        assert_abs_diff_eq!(f.value(2.0), 2.0 * c, epsilon = 1e-14);

        let f = solve_f_ode(6, 5.0, SlopeBranch::Rising).unwrap();
        assert_abs_diff_eq!(f.domain().t_max, PI, epsilon = 1e-14);
        assert_abs_diff_eq!(f.value(1.2), 0.75f64.sqrt() * 1.2f64.sin(), epsilon = 1e-14);

        assert!(matches!(solve_f_ode(4, 3.0, SlopeBranch::Rising), Err(GeomError::Constraint(_))));
    }

    #[test]
    fn f_ode_residual_all_sign_cases() {
        for (n, rho) in [(5, 4.0), (7, 12.0), (5, 0.0), (6, -5.0), (5, -0.3)] {
            for branch in [SlopeBranch::Rising, SlopeBranch::Falling] {
                let f = solve_f_ode(n, rho, branch).unwrap();
                let d = f.domain().truncate(-6.0, 6.0).unwrap();
                for i in 1..=100 {
                    let t = d.t_min + d.width() * i as f64 / 101.0;
                    assert!(f_ode_residual(&f, n, rho, t).unwrap() < 1e-10, "n={n} rho={rho} t={t}");
                    assert!(f.value(t) > 0.0);
                }
            }
        }
    }

    #[test]
    fn json_schema_roundtrip() {
        let json = r#"{"op":"mul","args":[{"op":"const","args":[0.5]},{"op":"sin","args":[{"op":"var","args":[]}]}]}"#;
        let e: Expr = serde_json::from_str(json).unwrap();
        assert_abs_diff_eq!(e.eval(PI / 2.0), 0.5);
        let back: Expr = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(e, back);
        let p: Expr = serde_json::from_str(r#"{"op":"powi","args":[{"op":"var"},3]}"#).unwrap();
        assert_eq!(p.eval(2.0), 8.0);
        assert!(serde_json::from_str::<Expr>(r#"{"op":"tan","args":[{"op":"var"}]}"#).is_err());
        assert!(serde_json::from_str::<Expr>(r#"{"op":"powi","args":[{"op":"var"},1.5]}"#).is_err());
    }

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![(-2.0f64..2.0).prop_map(Expr::Const), Just(Expr::Var)]
    }

    /// Expressions that stay finite and well-conditioned on [-1, 1].
    fn bounded_expr() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(
                    Box::new(a),
                    Box::new(Expr::Add(Box::new(Expr::Const(3.0)), Box::new(Expr::Sin(Box::new(b)))))
                )),
                (inner.clone(), 0i32..4).prop_map(|(a, e)| Expr::Powi(Box::new(a), e)),
                inner.clone().prop_map(|a| Expr::Sin(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Cos(Box::new(a))),
                inner.clone().prop_map(|a| Expr::Sinh(Box::new(Expr::Sin(Box::new(a))))),
                inner.clone().prop_map(|a| Expr::Cosh(Box::new(Expr::Cos(Box::new(a))))),
                inner.prop_map(|a| Expr::Exp(Box::new(Expr::Sin(Box::new(a))))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symbolic_derivatives_match_central_differences(expr in bounded_expr(), seed in any::<u64>()) {
            let f = SmoothFn::new(expr);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let h = 1e-5;
            for _ in 0..50 {
                let t: f64 = rng.gen_range(-1.0..1.0);
                let fd1 = central_diff(|s| f.value(s), t, h);
                let fd2 = central_diff(|s| f.d1(s), t, h);
                let scale = 1.0 + f.d1(t).abs().max(f.d2(t).abs());
                prop_assert!((fd1 - f.d1(t)).abs() < 1e-6 * scale, "f' mismatch at {}", t);
                prop_assert!((fd2 - f.d2(t)).abs() < 1e-6 * scale, "f'' mismatch at {}", t);
            }
        }

        #[test]
        fn json_roundtrip_preserves_values(expr in bounded_expr(), t in -1.0f64..1.0) {
            let json = serde_json::to_string(&expr).unwrap();
            let back: Expr = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.eval(t).to_bits(), expr.eval(t).to_bits());
        }
    }
}
