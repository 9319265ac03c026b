//! TOML problem description shared by the command-line tool and examples.
//!
//! ```toml
//! schema = 1
//!
//! [mesh]
//! dim = 1
//! n = 64
//! gamma = "0"            # facets with positive value carry the Robin-type part
//!
//! [exponents]
//! p = 2
//! q = "3 + x"
//! mu = 0
//!
//! [constraint]
//! kind = "obstacle"      # whole_space | obstacle | box
//! psi = -0.5
//! c_psi = 0.1
//!
//! [f]
//! f1 = 8
//! f2 = 8
//!
//! [bounds]
//! k1 = 8
//! k2 = 8
//! ```
//!
//! Expressions may be given as numbers or strings. Unknown keys are rejected.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, VarSet};
use crate::extremal::{construct_obstacle_bounds, BoundsSpec, OrderedInterval};
use crate::mesh::{FeFunction, Layout, Mesh, MeshSpec, QuadratureField};
use crate::multifun::{Domain, IntervalMultifunction, SelectionRule, TwoArgIntervalMultifunction};
use crate::operator::DoublePhaseOperator;
use crate::spaces::{ExponentData, ModularKind};
use crate::visolve::{ConstraintSet, SolveOptions, VIProblem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ExprValue {
    Number(f64),
    Text(String),
}

impl ExprValue {
    pub fn text(&self) -> String {
        match self {
            ExprValue::Number(v) => format!("{v:?}"),
            ExprValue::Text(s) => s.clone(),
        }
    }

    fn parse(&self, vars: VarSet, what: &str) -> Result<Expr> {
        Expr::parse(&self.text(), vars).map_err(|e| Error::Config(format!("{what}: {e}")))
    }
}

impl From<&str> for ExprValue {
    fn from(s: &str) -> Self {
        ExprValue::Text(s.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub dim: usize,
    pub n: usize,
    #[serde(default = "default_gamma")]
    pub gamma: ExprValue,
}

fn default_gamma() -> ExprValue {
    ExprValue::Number(0.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub p: ExprValue,
    pub q: ExprValue,
    pub mu: ExprValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintName {
    WholeSpace,
    Obstacle,
    Box,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub kind: ConstraintName,
    pub psi: Option<ExprValue>,
    pub psi_upper: Option<ExprValue>,
    pub c_psi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalConfig {
    pub f1: ExprValue,
    pub f2: ExprValue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoArgConfig {
    pub j1: ExprValue,
    pub j2: ExprValue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub k1: Option<ExprValue>,
    pub k2: Option<ExprValue>,
    pub margin: Option<f64>,
    pub u_lower: Option<ExprValue>,
    pub u_upper: Option<ExprValue>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_outer: Option<usize>,
    pub selection: Option<String>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    pub u: ExprValue,
    #[serde(default = "default_norm_kind")]
    pub kind: String,
    /// Exponent for `variable_lp`.
    pub r: Option<ExprValue>,
    pub tol: Option<f64>,
}

fn default_norm_kind() -> String {
    "lebesgue_h".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub radii: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub u0: Option<ExprValue>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema: u32,
    pub mesh: MeshConfig,
    pub exponents: ExponentConfig,
    pub constraint: Option<ConstraintConfig>,
    pub f: Option<IntervalConfig>,
    pub f_gamma: Option<IntervalConfig>,
    pub j: Option<TwoArgConfig>,
    pub bounds: Option<BoundsConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub norm: Option<NormConfig>,
    pub probe: Option<ProbeConfig>,
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn build_mesh(&self) -> Result<Arc<Mesh>> {
        Mesh::build(&MeshSpec {
            dim: self.mesh.dim,
            subdivisions: self.mesh.n,
            gamma_predicate: self.mesh.gamma.parse(VarSet::SPATIAL, "mesh.gamma")?,
        })
    }

    pub fn exponents(&self, mesh: &Mesh) -> Result<ExponentData> {
        let e = &self.exponents;
        ExponentData::from_exprs(
            mesh,
            &e.p.parse(VarSet::SPATIAL, "exponents.p")?,
            &e.q.parse(VarSet::SPATIAL, "exponents.q")?,
            &e.mu.parse(VarSet::SPATIAL, "exponents.mu")?,
        )
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let mut opts = SolveOptions::default();
        let s = &self.solver;
        if let Some(t) = s.tol {
            opts.tol = t;
        }
        if let Some(m) = s.max_iter {
            opts.max_iter = m;
        }
        if let Some(m) = s.max_outer {
            opts.max_outer = m;
        }
        if let Some(sel) = &s.selection {
            opts.selection = SelectionRule::parse(sel).map_err(|e| Error::Config(format!("solver.selection: {e}")))?;
        }
        if !(opts.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be positive, got {}", opts.tol)));
        }
        Ok(opts)
    }

    pub fn seed(&self) -> u64 {
        self.solver.seed.unwrap_or(0)
    }

    fn constraint_set(&self, mesh: &Arc<Mesh>) -> Result<ConstraintSet> {
        let Some(c) = &self.constraint else {
            return Ok(ConstraintSet::whole_space(mesh));
        };
        let fe = |v: &Option<ExprValue>, what: &str| -> Result<FeFunction> {
            let v = v
                .as_ref()
                .ok_or_else(|| Error::Config(format!("constraint.{what} is required for kind {:?}", c.kind)))?;
            FeFunction::interpolate(&v.parse(VarSet::SPATIAL, &format!("constraint.{what}"))?, mesh)
        };
        match c.kind {
            ConstraintName::WholeSpace => Ok(ConstraintSet::whole_space(mesh)),
            ConstraintName::Obstacle => ConstraintSet::obstacle(fe(&c.psi, "psi")?),
            ConstraintName::Box => ConstraintSet::boxed(fe(&c.psi, "psi")?, fe(&c.psi_upper, "psi_upper")?),
        }
    }

    fn interval(block: &IntervalConfig, domain: Domain, name: &str) -> Result<IntervalMultifunction> {
        IntervalMultifunction::new(
            block.f1.parse(VarSet::SPATIAL_S, &format!("{name}.f1"))?,
            block.f2.parse(VarSet::SPATIAL_S, &format!("{name}.f2"))?,
            domain,
        )
    }

    pub fn build_problem(&self) -> Result<VIProblem> {
        let mesh = self.build_mesh()?;
        let ed = self.exponents(&mesh)?;
        let eps = self.solver.epsilon.unwrap_or(1e-8);
        let op = DoublePhaseOperator::new(mesh.clone(), ed, eps)?;
        let mut prob = VIProblem::new(op, self.constraint_set(&mesh)?)?;
        if let Some(f) = &self.f {
            prob = prob.with_f(Self::interval(f, Domain::Interior, "f")?)?;
        }
        if let Some(g) = &self.f_gamma {
            prob = prob.with_f_gamma(Self::interval(g, Domain::Boundary, "f_gamma")?)?;
        }
        Ok(prob)
    }

    pub fn two_arg(&self) -> Result<Option<TwoArgIntervalMultifunction>> {
        self.j
            .as_ref()
            .map(|j| {
                TwoArgIntervalMultifunction::parse(&j.j1.text(), &j.j2.text(), Domain::Interior)
                    .map_err(|e| Error::Config(format!("j: {e}")))
            })
            .transpose()
    }

    /// Ordered interval from the `[bounds]` block: either the constant-shift
    /// construction from `k1`, `k2`, or explicit `u_lower`, `u_upper`.
    pub fn ordered_interval(&self, prob: &VIProblem, opts: &SolveOptions) -> Result<OrderedInterval> {
        let b = self
            .bounds
            .as_ref()
            .ok_or_else(|| Error::Config("a [bounds] block is required for this command".into()))?;
        let mesh = prob.mesh();
        match (&b.k1, &b.k2, &b.u_lower, &b.u_upper) {
            (Some(k1), Some(k2), None, None) => {
                let mut spec = BoundsSpec::new(
                    k1.parse(VarSet::SPATIAL, "bounds.k1")?,
                    k2.parse(VarSet::SPATIAL, "bounds.k2")?,
                );
                spec.c_psi = self.constraint.as_ref().and_then(|c| c.c_psi);
                if let Some(m) = b.margin {
                    spec.margin = m;
                }
                construct_obstacle_bounds(prob, &spec, opts)
            }
            (None, None, Some(lo), Some(hi)) => {
                let lo = FeFunction::interpolate(&lo.parse(VarSet::SPATIAL, "bounds.u_lower")?, mesh)?;
                let hi = FeFunction::interpolate(&hi.parse(VarSet::SPATIAL, "bounds.u_upper")?, mesh)?;
                OrderedInterval::certify(prob, lo, hi, opts.tol)
            }
            _ => Err(Error::Config(
                "[bounds] needs either k1 and k2, or u_lower and u_upper".into(),
            )),
        }
    }

    pub fn norm_request(&self, mesh: &Arc<Mesh>) -> Result<(ModularKind, FeFunction, f64)> {
        let n = self
            .norm
            .as_ref()
            .ok_or_else(|| Error::Config("a [norm] block is required for this command".into()))?;
        let u = FeFunction::interpolate(&n.u.parse(VarSet::SPATIAL, "norm.u")?, mesh)?;
        let kind = match n.kind.as_str() {
            "lebesgue_h" => ModularKind::LebesgueH,
            "sobolev_h" => ModularKind::SobolevH,
            "weighted_lq" => ModularKind::WeightedLq,
            "variable_lp" => {
                let r = n
                    .r
                    .as_ref()
                    .ok_or_else(|| Error::Config("norm.r is required for variable_lp".into()))?;
                ModularKind::VariableLp(QuadratureField::from_expr(
                    mesh,
                    Layout::Interior,
                    &r.parse(VarSet::SPATIAL, "norm.r")?,
                )?)
            }
            other => return Err(Error::Config(format!("unknown norm kind {other:?}"))),
        };
        Ok((kind, u, n.tol.unwrap_or(1e-12)))
    }

    pub fn probe_request(&self, mesh: &Arc<Mesh>) -> Result<(Vec<f64>, usize, FeFunction)> {
        let p = self.probe.as_ref();
        let radii = p.and_then(|p| p.radii.clone()).unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
        let samples = p.and_then(|p| p.samples).unwrap_or(32);
        let u0 = match p.and_then(|p| p.u0.as_ref()) {
            Some(v) => FeFunction::interpolate(&v.parse(VarSet::SPATIAL, "probe.u0")?, mesh)?,
            None => FeFunction::zeros(mesh),
        };
        Ok((radii, samples, u0))
    }
}
