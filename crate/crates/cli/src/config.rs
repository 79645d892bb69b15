//! Run configuration: one TOML file plus dotted `key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hofx_core::fem::{
    build_mesh, Backend, Coefficients, Discretization, DiscretizationConfig, Strategy,
};
use hofx_core::fem::operator::DEFAULT_SEARCH_BUDGET;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for every random choice (mesh perturbation, random states).
    pub seed: u64,
    pub mesh: MeshConfig,
    pub discretization: DiscretizationConfig,
    pub material: MaterialConfig,
    pub operator: OperatorConfig,
    pub solve: SolveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mesh: MeshConfig::default(),
            discretization: DiscretizationConfig::default(),
            material: MaterialConfig::default(),
            operator: OperatorConfig::default(),
            solve: SolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub elements: [usize; 3],
    pub extents: [f64; 3],
    /// Random interior vertex displacement as a fraction of the element size.
    pub perturb: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { elements: [2, 2, 2], extents: [1.0; 3], perturb: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub rho: f64,
    pub bulk_modulus: f64,
    pub coupling: f64,
    pub gravity: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { rho: 1.0, bulk_modulus: 1.0, coupling: 1.0, gravity: hofx_core::fem::quad::STANDARD_GRAVITY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scalar,
    Mma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorConfig {
    pub strategy: Strategy,
    pub backend: BackendKind,
    /// Node budget of the conflict-free mapping search for the MMA backend.
    pub search_budget: u64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { strategy: Strategy::PartialAssembly, backend: BackendKind::Scalar, search_budget: DEFAULT_SEARCH_BUDGET }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialCondition {
    Zero,
    StandingWave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Time step; when absent, one hundredth of the standing-wave period.
    pub dt: Option<f64>,
    pub steps: usize,
    pub initial: InitialCondition,
    /// Amplitude of the sea-floor velocity; zero disables bottom forcing.
    pub bottom_amplitude: f64,
    /// Frequency of the sea-floor velocity in cycles per unit time.
    pub bottom_frequency: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { dt: None, steps: 100, initial: InitialCondition::StandingWave, bottom_amplitude: 0.0, bottom_frequency: 1.0 }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment.split_once('=').with_context(|| format!("override '{assignment}' is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key '{key}' is malformed");
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key '{key}': '{part}' is not a table"),
        };
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("cannot parse config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.elements.contains(&0) {
            bail!("mesh.elements must be positive, got {:?}", self.mesh.elements);
        }
        if self.mesh.extents.iter().any(|e| !(*e > 0.0)) {
            bail!("mesh.extents must be positive, got {:?}", self.mesh.extents);
        }
        if !(0.0..0.5).contains(&self.mesh.perturb) {
            bail!("mesh.perturb must lie in [0, 0.5), got {}", self.mesh.perturb);
        }
        let d = &self.discretization;
        if d.order_p == 0 || d.order_u == 0 || d.num_quad == 0 {
            bail!("discretization orders and num_quad must be positive");
        }
        if let Some(dt) = self.solve.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                bail!("solve.dt must be positive, got {dt}");
            }
        }
        Ok(())
    }

    pub fn discretization(&self) -> Result<Discretization> {
        let [nx, ny, nz] = self.mesh.elements;
        let mut mesh = build_mesh(nx, ny, nz, self.mesh.extents)?;
        if self.mesh.perturb > 0.0 {
            mesh = mesh.perturbed(self.mesh.perturb, self.seed);
        }
        let ne = mesh.num_elements();
        let m = &self.material;
        let coefficients = Coefficients { coupling: m.coupling, gravity: m.gravity, ..Coefficients::uniform(ne, m.rho, m.bulk_modulus) };
        Ok(Discretization::new(mesh, coefficients, self.discretization.clone())?)
    }

    pub fn backend(&self, kind: BackendKind, disc: &Discretization) -> Result<Backend> {
        Ok(match kind {
            BackendKind::Scalar => Backend::Scalar,
            BackendKind::Mma => Backend::mma(&disc.contraction_shapes(), self.operator.search_budget)?.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::load(None, &["mesh.elements=[1,2,3]".into(), "operator.strategy=fused-pa".into(), "solve.dt=0.01".into()]).unwrap();
        assert_eq!(c.mesh.elements, [1, 2, 3]);
        assert_eq!(c.operator.strategy, Strategy::FusedPartialAssembly);
        assert_eq!(c.solve.dt, Some(0.01));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::load(None, &["mesh.size=3".into()]).is_err());
        assert!(RunConfig::load(None, &["colour=1".into()]).is_err());
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &["mesh.elements=[0,1,1]".into()]).is_err());
        assert!(RunConfig::load(None, &["solve.dt=-1".into()]).is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
