//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use gpehho_core::gpe::{project_potential_p0, GPProblem, Mode, Potential, PotentialTable, ProjectionMode, DEFAULT_MIN_SAMPLES, DEFAULT_OVERSAMPLING};
use gpehho_core::mesh::{friedrichs_keller, red_refine, Rect, TriMesh};
use gpehho_core::solver::FlowOptions;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Deepest refinement level accepted from a configuration file.
pub const MAX_LEVEL: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    Harmonic,
    Lattice,
    Disorder,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub grid_size: f64,
    #[serde(default = "default_projection_mode")]
    pub mode: ProjectionMode,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_projection_mode() -> ProjectionMode {
    ProjectionMode::Min
}

fn default_samples() -> usize {
    DEFAULT_MIN_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    /// Lattice quadrature oversampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversampling: Option<usize>,
    /// Disorder grid cell size (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<f64>,
    /// Disorder seed; falls back to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Table file, relative paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionConfig>,
}

/// Stabilisation parameter: a positive number or the string `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Value(f64),
    Keyword(String),
}

impl SigmaSpec {
    pub fn is_auto(&self) -> bool {
        matches!(self, SigmaSpec::Keyword(s) if s == "auto")
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            SigmaSpec::Value(v) => Some(*v),
            SigmaSpec::Keyword(_) => None,
        }
    }
}

/// Where the upper bound on the energy feeding the automatic sigma comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergyUpper {
    Analytic { value: f64 },
    /// Reference energy times `1 + margin`.
    ReferenceRun {
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

fn default_margin() -> f64 {
    1e-3
}

impl Default for EnergyUpper {
    fn default() -> Self {
        EnergyUpper::ReferenceRun { margin: default_margin() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default = "default_extra")]
    pub extra: usize,
    /// Defaults to `k + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_ref: Option<usize>,
    /// Defaults to the experiment's numeric sigma, or 1 when that is automatic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

fn default_extra() -> usize {
    2
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self { extra: default_extra(), k_ref: None, sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Rect,
    pub potential: PotentialConfig,
    pub kappa: f64,
    pub mode: Mode,
    pub k: usize,
    pub sigma: SigmaSpec,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default)]
    pub e_upper: EnergyUpper,
    /// Inclusive range of red-refinement levels of the Friedrichs-Keller root mesh.
    pub levels: [usize; 2],
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub solver: FlowOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_safety() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies a `--seed` override to the experiment and the potential.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if self.potential.seed.is_some() {
            self.potential.seed = Some(seed);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.domain.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let [lo, hi] = self.levels;
        if lo > hi {
            return bad(format!("levels must satisfy m_min <= m_max, got [{lo}, {hi}]"));
        }
        if hi + self.reference.extra > MAX_LEVEL {
            return bad(format!("finest level {} exceeds {MAX_LEVEL}", hi + self.reference.extra));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be finite and non-negative, got {}", self.kappa));
        }
        if self.mode == Mode::Modified && self.k != 0 {
            return bad(format!("modified mode requires k = 0, got k = {}", self.k));
        }
        match &self.sigma {
            SigmaSpec::Value(v) if !(*v > 0.0 && v.is_finite()) => return bad(format!("sigma must be positive, got {v}")),
            SigmaSpec::Keyword(s) if s != "auto" => return bad(format!("sigma must be a number or \"auto\", got {s:?}")),
            SigmaSpec::Keyword(_) if self.mode != Mode::Modified => {
                return bad("sigma = \"auto\" is only available in modified mode".into())
            }
            _ => {}
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.safety));
        }
        match self.e_upper {
            EnergyUpper::Analytic { value } if !value.is_finite() => return bad("analytic E_upper must be finite".into()),
            EnergyUpper::ReferenceRun { margin } if !(margin >= 0.0 && margin.is_finite()) => {
                return bad(format!("margin must be non-negative, got {margin}"))
            }
            _ => {}
        }
        if let Some(s) = self.reference.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("reference sigma must be positive, got {s}"));
            }
        }
        self.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let p = &self.potential;
        match p.kind {
            PotentialKind::Table if p.path.is_none() => return bad("table potential needs a path".into()),
            PotentialKind::Lattice if p.oversampling == Some(0) => return bad("oversampling must be positive".into()),
            PotentialKind::Disorder if p.cell_size.is_some_and(|c| !(c > 0.0)) => {
                return bad("disorder cell_size must be positive".into())
            }
            _ => {}
        }
        if let Some(pr) = &p.projection {
            if !(pr.grid_size > 0.0 && pr.grid_size.is_finite()) || pr.samples == 0 {
                return bad("projection needs a positive grid_size and samples".into());
            }
        }
        Ok(())
    }

    pub fn k_ref(&self) -> usize {
        self.reference.k_ref.unwrap_or(self.k + 1)
    }

    pub fn reference_level(&self) -> usize {
        self.levels[1] + self.reference.extra
    }

    pub fn reference_sigma(&self) -> f64 {
        self.reference.sigma.or(self.sigma.value()).unwrap_or(1.0)
    }

    /// Builds the potential, including the optional piecewise-constant projection.
    pub fn build_potential(&self) -> Result<Potential> {
        let p = &self.potential;
        let raw = match p.kind {
            PotentialKind::Zero => Potential::Zero,
            PotentialKind::Harmonic => Potential::Harmonic,
            PotentialKind::Lattice => Potential::Lattice { oversampling: p.oversampling.unwrap_or(DEFAULT_OVERSAMPLING) },
            PotentialKind::Disorder => {
                Potential::disorder(self.domain, p.cell_size.unwrap_or(1.0), p.seed.unwrap_or(self.seed)).map_err(config_error)?
            }
            PotentialKind::Table => {
                let path = p.path.as_ref().expect("validated");
                let path = if path.is_relative() { self.base_dir.join(path) } else { path.clone() };
                let table = PotentialTable::read(&path).map_err(config_error)?;
                if !table.tiles(&self.domain) {
                    return Err(CliError::Config(format!("table {} does not cover the domain", path.display())));
                }
                Potential::Table(table)
            }
        };
        match &p.projection {
            None => Ok(raw),
            Some(pr) => project_potential_p0(&raw, self.domain, pr.grid_size, pr.mode, pr.samples).map_err(config_error),
        }
    }

    /// Continuous problem with the given sigma; `mode` and `k` may differ from
    /// the experiment's for reference runs.
    pub fn problem(&self, potential: &Potential, mode: Mode, k: usize, sigma: f64) -> GPProblem {
        GPProblem { domain: self.domain, kappa: self.kappa, potential: potential.clone(), mode, k, sigma }
    }
}

fn config_error(e: gpehho_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Meshes of levels `0..=max_level`, each a red refinement of the previous.
pub fn hierarchy(domain: Rect, max_level: usize) -> Result<Vec<TriMesh>> {
    let mut meshes = vec![friedrichs_keller(domain)?];
    for _ in 0..max_level {
        let next = red_refine(meshes.last().expect("non-empty"));
        meshes.push(next);
    }
    Ok(meshes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "domain": {"x0": -8, "x1": 8, "y0": -8, "y1": 8},
        "potential": {"kind": "harmonic"},
        "kappa": 0, "mode": "standard", "k": 1, "sigma": 1.0,
        "levels": [2, 3]
    }"#;

    fn with(patch: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        let p: serde_json::Value = serde_json::from_str(patch).unwrap();
        for (k, x) in p.as_object().unwrap() {
            v[k] = x.clone();
        }
        v.to_string()
    }

    #[test]
    fn defaults() {
        let c = ExperimentConfig::from_json_str(BASE).unwrap();
        assert_eq!(c.reference, ReferenceSpec::default());
        assert_eq!(c.k_ref(), 2);
        assert_eq!(c.reference_level(), 5);
        assert_eq!(c.safety, 1.0);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.solver, FlowOptions::default());
    }

    #[test]
    fn rejects_inverted_levels() {
        let e = ExperimentConfig::from_json_str(&with(r#"{"levels": [4, 3]}"#)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn modified_requires_k0() {
        assert!(ExperimentConfig::from_json_str(&with(r#"{"mode": "modified"}"#)).is_err());
        assert!(ExperimentConfig::from_json_str(&with(r#"{"mode": "modified", "k": 0, "sigma": "auto"}"#)).is_ok());
    }

    #[test]
    fn auto_sigma_only_in_modified_mode() {
        assert!(ExperimentConfig::from_json_str(&with(r#"{"sigma": "auto"}"#)).is_err());
        assert!(ExperimentConfig::from_json_str(&with(r#"{"mode": "modified", "k": 0, "sigma": "automatic"}"#)).is_err());
        assert!(ExperimentConfig::from_json_str(&with(r#"{"sigma": -1.0}"#)).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json_str(&with(r#"{"kapa": 3}"#)).is_err());
    }

    #[test]
    fn energy_upper_sources() {
        let c = ExperimentConfig::from_json_str(&with(r#"{"e_upper": {"source": "analytic", "value": 0.5}}"#)).unwrap();
        assert_eq!(c.e_upper, EnergyUpper::Analytic { value: 0.5 });
        let c = ExperimentConfig::from_json_str(&with(r#"{"e_upper": {"source": "reference_run"}}"#)).unwrap();
        assert_eq!(c.e_upper, EnergyUpper::ReferenceRun { margin: 1e-3 });
    }

    #[test]
    fn projected_potential_is_a_table() {
        let c = ExperimentConfig::from_json_str(&with(
            r#"{"potential": {"kind": "harmonic", "projection": {"grid_size": 4.0}}}"#,
        ))
        .unwrap();
        let v = c.build_potential().unwrap();
        assert_eq!(v.kind(), "table");
        // min over [0,4]^2 of |x|^2/2 sits at the origin
        assert_eq!(v.value([1.0, 1.0]), 0.0);
    }

    #[test]
    fn seed_override_reaches_disorder() {
        let mut c = ExperimentConfig::from_json_str(&with(r#"{"potential": {"kind": "disorder", "seed": 1}}"#)).unwrap();
        c.set_seed(42);
        assert_eq!(c.potential.seed, Some(42));
        assert_eq!(c.seed, 42);
        let a = c.build_potential().unwrap();
        let b = c.build_potential().unwrap();
        assert_eq!(a.table().unwrap().values, b.table().unwrap().values);
    }

    #[test]
    fn hierarchy_links_parents() {
        let h = hierarchy(Rect::centered_square(1.0), 2).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h[2].num_cells(), 32);
        assert!(h[2].parent.iter().all(|p| p.is_some_and(|c| c < 8)));
    }
}
