//! Named residual checks with tolerances, serialized to JSON and CSV.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance table keyed by check name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tolerances(BTreeMap<String, f64>);

const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("A", 1e-6),
    ("B", 1e-6),
    ("C", 1e-6),
    ("D", 1e-6),
    ("E", 1e-6),
    ("F", 1e-6),
    ("T_grad_pi", 1e-6),
    ("orientation_flip", 1e-9),
    ("einstein_residual", 1e-6),
    ("ricci_corollary", 1e-6),
    ("T_principal", 1e-6),
    ("eq1_lambda1", 1e-9),
    ("eq1_lambda2", 1e-9),
    ("eq2_lambda_n", 1e-9),
    ("product_law", 1e-9),
    ("sum_law", 1e-9),
    ("square_law_1", 1e-9),
    ("square_law_2", 1e-9),
    ("negative_branch_square", 1e-9),
    ("theta_gradient", 1e-6),
    ("geodesic", 1e-6),
    ("log_derivative_1", 1e-9),
    ("log_derivative_2", 1e-9),
    ("id1_1", 1e-9),
    ("id1_2", 1e-9),
    ("id2_1", 1e-9),
    ("id2_2", 1e-9),
    ("id3", 1e-9),
    ("involutivity_1", 1e-5),
    ("involutivity_2", 1e-5),
    ("weyl_sup", 1e-6),
    ("three_eq_energy", 1e-9),
    ("three_eq_product", 1e-9),
    ("three_eq_sum", 1e-9),
    ("rela1_ratio", 1e-9),
    ("rela1_k1", 1e-9),
    ("rela1_k2", 1e-9),
    ("a1a2_b1b2", 1e-9),
    ("linrela_1", 1e-9),
    ("linrela_2", 1e-9),
    ("multiple", 1e-12),
    ("f_ode", 1e-10),
    ("riemann_symmetry", 1e-6),
    ("bianchi", 1e-6),
    ("cylinder_lambda_product", 1e-12),
];

/// Fallback for names missing from the table.
pub const FALLBACK_TOLERANCE: f64 = 1e-6;

impl Default for Tolerances {
    fn default() -> Self {
        Self(DEFAULT_TOLERANCES.iter().map(|&(k, v)| (k.to_string(), v)).collect())
    }
}

impl Tolerances {
    pub fn get(&self, name: &str) -> f64 {
        self.0.get(name).copied().unwrap_or(FALLBACK_TOLERANCE)
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    /// Applies a `name=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| GeomError::Invalid(format!("tolerance override `{spec}` is not name=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| GeomError::Invalid(format!("tolerance `{value}` is not a number")))?;
        if !(value >= 0.0) {
            return Err(GeomError::Invalid(format!("tolerance for `{name}` must be >= 0")));
        }
        self.set(name.trim(), value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Sup-norm residual over the sample set.
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub grid: String,
    /// `(points used, points sampled)` when some points were skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub checks: Vec<CheckResult>,
    /// Informational values that carry no pass/fail semantics.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    /// Classification-violation and similar falsifier flags.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ResidualReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a check; the pass flag is `residual <= tolerance` (NaN fails).
    pub fn push(&mut self, name: &str, residual: f64, tolerance: f64, grid: impl Into<String>) -> &mut CheckResult {
        self.checks.retain(|c| c.name != name);
        self.checks.push(CheckResult {
            name: name.to_string(),
            residual,
            tolerance,
            pass: residual <= tolerance,
            grid: grid.into(),
            coverage: None,
        });
        self.checks.last_mut().unwrap()
    }

    pub fn push_with(&mut self, tol: &Tolerances, name: &str, residual: f64, grid: impl Into<String>) -> &mut CheckResult {
        self.push(name, residual, tol.get(name), grid)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.get(name).map(|c| c.residual)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        self.flags.push(flag.into());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Appends all checks of `other`, prefixing their names.
    pub fn merge(&mut self, prefix: &str, other: ResidualReport) {
        let name = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}{n}") };
        for mut c in other.checks {
            c.name = name(&c.name);
            self.checks.retain(|x| x.name != c.name);
            self.checks.push(c);
        }
        for (k, v) in other.metrics {
            self.metrics.insert(name(&k), v);
        }
        self.flags.extend(other.flags);
        self.notes.extend(other.notes);
    }

    /// Flat CSV: `check,residual,tolerance,pass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,residual,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&format!("{},{:e},{:e},{}\n", c.name, c.residual, c.tolerance, c.pass));
        }
        out
    }
}
