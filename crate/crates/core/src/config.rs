//! Experiment configuration (TOML) and its translation into solver,
//! stochastic and transport inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BoundarySegment, BoundaryTag, Grid, TimeGrid};
use crate::problem::{Coefficient, Perturbation, Problem, ProblemKind};
use crate::qoi::{QoISpec, Region};
use crate::solver::{
    GateFunction, MobilityFunction, ParamFieldP1, ParamFieldP2, Scheme, SolverOptions, SpaceTimeField, Validation,
};
use crate::stochastic::{Modulation, Profile, RandomParamModel, StageLaw, StochasticError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("config needs a `{0}` section for this command")]
    Missing(&'static str),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    #[default]
    Strict,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub validation: ValidationMode,
    #[serde(default)]
    pub solver: SolverConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomConfig>,
    /// Second model for the comparison commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<RandomConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qoi: Vec<QoIConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glue: Option<GlueConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum SolverConfig {
    #[default]
    Imex,
    Picard {
        tol: f64,
        max_iter: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Vec<usize>,
    pub extent: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary: Vec<BoundarySegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub stages: usize,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MobilityConfig {
    Zero,
    Logistic { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GateConfig {
    Linear,
    Power { exponent: f64 },
}

/// `weight * profile(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTerm {
    pub profile: Profile,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "unit")]
    pub alpha: f64,
    #[serde(default = "unit")]
    pub beta: f64,
    #[serde(default = "unit")]
    pub a: f64,
    #[serde(default = "unit")]
    pub b: f64,
    /// Declared lower bounds; default to the coefficient values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    pub mobility: MobilityConfig,
    pub gate: GateConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub potential: Vec<ProfileTerm>,
    #[serde(default)]
    pub u0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u0_terms: Vec<ProfileTerm>,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            a: 1.0,
            b: 1.0,
            alpha0: None,
            beta0: None,
            a0: None,
            b0: None,
            mobility: MobilityConfig::Zero,
            gate: GateConfig::Linear,
            potential: Vec::new(),
            u0: 0.0,
            u0_terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    pub laws: Vec<StageLaw>,
    #[serde(default)]
    pub memory: f64,
    pub modulations: Vec<Modulation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QoIConfig {
    SubdomainMass { region: Region, t: f64 },
    TimewindowMass { t1: f64, t2: f64 },
    Superlevel { c: f64, eps: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationTerm {
    pub target: Coefficient,
    pub profile: Profile,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Horizons for the growth fit; empty skips the fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbation: Vec<PerturbationTerm>,
    #[serde(default)]
    pub u0_shift: f64,
}

fn default_scales() -> Vec<f64> {
    crate::metrics::LADDER_SCALES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub branching: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundCost {
    /// `d1`/`d2` between realized parameter sets.
    #[default]
    Parameter,
    /// Euclidean-type cost on the `xi` values.
    Xi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    #[serde(default = "unit")]
    pub r: f64,
    #[serde(default)]
    pub ground: GroundCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlueConfig {
    pub observed_stages: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical text of the deterministic parameter set, for hashing.
    pub fn params_toml(&self) -> String {
        format!("problem = {:?}\n{}", self.problem, toml::to_string(&self.params).expect("params serialize"))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            scheme: match self.solver {
                SolverConfig::Imex => Scheme::Imex,
                SolverConfig::Picard { tol, max_iter } => Scheme::Picard { tol, max_iter },
            },
            validation: match self.validation {
                ValidationMode::Strict => Validation::Strict,
                ValidationMode::Test => Validation::Test,
            },
        }
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        let g = &self.grid;
        Grid::build(g.cells.len(), &g.cells, &g.extent, &g.boundary).map_err(|e| invalid("grid", e))
    }

    pub fn build_time_grid(&self) -> Result<TimeGrid, ConfigError> {
        let t = &self.time;
        TimeGrid::with_equal_stages(t.t_final, t.steps, t.stages).map_err(|e| invalid("time", e))
    }

    fn profile_field(grid: &Grid, terms: &[ProfileTerm], offset: f64) -> Vec<f64> {
        (0..grid.num_cells())
            .map(|c| offset + terms.iter().map(|t| t.weight * t.profile.evaluate(grid.cell_center(c), grid.dim())).sum::<f64>())
            .collect()
    }

    /// The deterministic parameter set of the `params` section.
    pub fn build_problem(&self, grid: &Grid) -> Result<Problem, ConfigError> {
        let p = &self.params;
        let n = grid.num_cells();
        let mobility = match p.mobility {
            MobilityConfig::Zero => MobilityFunction::Zero,
            MobilityConfig::Logistic { scale } => MobilityFunction::Logistic { scale },
        };
        let potential = SpaceTimeField::stationary(Self::profile_field(grid, &p.potential, 0.0));
        let u0 = Self::profile_field(grid, &p.u0_terms, p.u0);
        Ok(match self.problem {
            ProblemKind::P1 => Problem::P1(ParamFieldP1 {
                alpha: SpaceTimeField::constant(n, p.alpha),
                beta: SpaceTimeField::constant(n, p.beta),
                potential,
                mobility,
                u0,
                alpha0: p.alpha0.unwrap_or(p.alpha),
                beta0: p.beta0.unwrap_or(p.beta),
                forcing: None,
            }),
            ProblemKind::P2 => {
                let n_in = grid.faces_with_tag(BoundaryTag::Inflow).count();
                let n_out = grid.faces_with_tag(BoundaryTag::Outflow).count();
                Problem::P2(ParamFieldP2 {
                    a: SpaceTimeField::constant(n_in, p.a),
                    b: SpaceTimeField::constant(n_out, p.b),
                    potential,
                    mobility,
                    gate: match p.gate {
                        GateConfig::Linear => GateFunction::Linear,
                        GateConfig::Power { exponent } => GateFunction::Power { exponent },
                    },
                    u0,
                    a0: p.a0.unwrap_or(p.a),
                    b0: p.b0.unwrap_or(p.b),
                })
            }
        })
    }

    fn model_from(&self, section: &RandomConfig, seed: u64) -> Result<RandomParamModel, ConfigError> {
        let grid = self.build_grid()?;
        let tg = self.build_time_grid()?;
        let base = self.build_problem(&grid)?;
        Ok(RandomParamModel::new(base, grid, tg, section.laws.clone(), section.memory, section.modulations.clone(), seed)?)
    }

    /// Model of the `random` section.
    pub fn build_model(&self) -> Result<RandomParamModel, ConfigError> {
        let section = self.random.as_ref().ok_or(ConfigError::Missing("random"))?;
        self.model_from(section, self.seed)
    }

    /// Model of the `compare` section, seeded independently of `random`.
    pub fn build_compare_model(&self) -> Result<RandomParamModel, ConfigError> {
        let section = self.compare.as_ref().ok_or(ConfigError::Missing("compare"))?;
        self.model_from(section, self.seed.wrapping_add(1))
    }

    pub fn build_qois(&self, grid: &Grid, tg: &TimeGrid) -> Result<Vec<QoISpec>, ConfigError> {
        self.qoi
            .iter()
            .enumerate()
            .map(|(i, q)| {
                match q {
                    QoIConfig::SubdomainMass { region, t } => QoISpec::subdomain_mass(grid, tg, region, *t),
                    QoIConfig::TimewindowMass { t1, t2 } => QoISpec::timewindow_mass(grid, tg, *t1, *t2),
                    QoIConfig::Superlevel { c, eps, t } => QoISpec::superlevel(grid, tg, *c, *eps, *t),
                }
                .map_err(|e| invalid(&format!("qoi[{i}]"), e))
            })
            .collect()
    }

    pub fn build_perturbation(&self, grid: &Grid) -> Result<Perturbation, ConfigError> {
        let s = self.stability.as_ref().ok_or(ConfigError::Missing("stability"))?;
        let mut delta = Perturbation::default();
        for term in &s.perturbation {
            let points: Vec<[f64; 2]> = match term.target {
                Coefficient::A => grid.faces_with_tag(BoundaryTag::Inflow).map(|(_, f)| grid.face_center(f)).collect(),
                Coefficient::B => grid.faces_with_tag(BoundaryTag::Outflow).map(|(_, f)| grid.face_center(f)).collect(),
                _ => (0..grid.num_cells()).map(|c| grid.cell_center(c)).collect(),
            };
            let values = points.iter().map(|&x| term.weight * term.profile.evaluate(x, grid.dim())).collect();
            delta = delta.and(Perturbation::coefficient(term.target, SpaceTimeField::stationary(values)));
        }
        if s.u0_shift != 0.0 {
            delta = delta.and(Perturbation::initial(vec![s.u0_shift; grid.num_cells()]));
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
problem = "p2"
seed = 3

[grid]
cells = [16]
extent = [1.0]
boundary = [{ side = "left", tag = "inflow" }, { side = "right", tag = "outflow" }]

[time]
t_final = 1.0
steps = 300
stages = 3

[params]
a = 0.8
b = 0.6
a0 = 0.5
b0 = 0.5
mobility = { kind = "logistic", scale = 1.0 }
gate = { kind = "linear" }
potential = [{ profile = { shape = "linearx" }, weight = -1.0 }]

[random]
laws = [{ law = "uniform", lo = -0.1, hi = 0.1 }]
memory = 0.5
modulations = [{ target = "a", profile = { shape = "constant" }, weight = 1.0 }]

[[qoi]]
kind = "timewindow_mass"
t1 = 0.0
t2 = 1.0

[[qoi]]
kind = "subdomain_mass"
region = { x = [0.0, 0.5] }
t = 0.5
"#;

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn builds_everything() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let g = c.build_grid().unwrap();
        let tg = c.build_time_grid().unwrap();
        assert_eq!(tg.num_stages(), 3);
        let p = c.build_problem(&g).unwrap();
        p.validate(&g, Validation::Strict).unwrap();
        assert_eq!(c.build_qois(&g, &tg).unwrap().len(), 2);
        assert_eq!(c.build_model().unwrap().num_stages(), 3);
    }

    #[test]
    fn unknown_field_is_reported_with_position() {
        let bad = SAMPLE.replace("memory = 0.5", "memroy = 0.5");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("memroy"), "{err}");
        assert!(err.contains("line"), "{err}");
    }
}
