//! JSON scenario files, schema `meanreflect/scenario-v1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use meanreflect::bsde::{Generator, RegressionConfig, ZMode};
use meanreflect::constraints::{LinearEnvelope, LinearObstacles, LossFn, LossPair, TimeSeries};
use meanreflect::grid::{RngSpec, TimeGrid};
use meanreflect::mrbsde::{PenaltyConfig, PicardInit, Scenario, SolverConfig, TerminalSpec};
use meanreflect::skorokhod::ReflectionConfig;

use crate::error::CliError;

pub const SCHEMA: &str = "meanreflect/scenario-v1";
pub const SEED_ENV: &str = "MEANREFLECT_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub horizon: f64,
    pub steps: usize,
    pub particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub terminal: TerminalConfig,
    pub generator: GeneratorConfig,
    /// May be omitted when `obstacles` is given; the obstacle pair is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossPairConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<ObstaclesConfig>,
    #[serde(default)]
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    Brownian {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    Sin {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        shift: f64,
    },
    CentredBrownian {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    Constant {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Zero,
    Constant {
        value: f64,
    },
    /// `y a_y + E[y] a_mean_y + z a_z + E[z] a_mean_z + constant`
    Linear {
        #[serde(default)]
        y: f64,
        #[serde(default)]
        mean_y: f64,
        #[serde(default)]
        z: f64,
        #[serde(default)]
        mean_z: f64,
        #[serde(default)]
        constant: f64,
    },
    /// `(gamma/2) z^2 + y a_y + E[y] a_mean_y + constant`
    Quadratic {
        gamma: f64,
        #[serde(default)]
        y: f64,
        #[serde(default)]
        mean_y: f64,
        #[serde(default)]
        constant: f64,
    },
}

/// A constant or samples on an even grid over `[start, end]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesConfig {
    Constant(f64),
    Sampled { start: f64, end: f64, values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossConfig {
    /// `slope x + intercept`
    Linear { slope: f64, intercept: f64 },
    #[serde(rename = "paper-example-L")]
    ExampleL,
    #[serde(rename = "paper-example-R")]
    ExampleR,
    /// `b_t x - offset_t`; `p` and `q` are accepted as names for the offset.
    AffineEnvelope {
        b: SeriesConfig,
        #[serde(alias = "p", alias = "q")]
        offset: SeriesConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossPairConfig {
    pub lower: LossConfig,
    pub upper: LossConfig,
    /// Bi-Lipschitz constants and gap; inferred from the losses when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

/// `L' = b x - p`, `R' = b x - q`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub b: SeriesConfig,
    pub p: SeriesConfig,
    pub q: SeriesConfig,
}

/// `l_t = int_0^t lower_rate`, `r_t = int_0^t upper_rate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstaclesConfig {
    pub lower_rate: SeriesConfig,
    pub upper_rate: SeriesConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitConfig {
    #[default]
    Zero,
    Unreflected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub picard_tol: f64,
    pub max_iterations: usize,
    pub stat_sigmas: f64,
    pub split_ratio: f64,
    pub allow_split: bool,
    pub min_window_steps: usize,
    pub init: InitConfig,
    pub degree: usize,
    pub ridge: f64,
    pub z_mode: ZMode,
    pub root_tol: f64,
    pub band_min: f64,
    pub stiff_max: f64,
    pub max_substep: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let s = SolverConfig::<f64>::default();
        Self {
            picard_tol: s.picard_tol,
            max_iterations: s.max_iterations,
            stat_sigmas: s.stat_sigmas,
            split_ratio: s.split_ratio,
            allow_split: s.allow_split,
            min_window_steps: s.min_window_steps,
            init: InitConfig::Zero,
            degree: s.regression.degree,
            ridge: s.regression.ridge,
            z_mode: s.regression.z_mode,
            root_tol: s.reflection.root_tol,
            band_min: s.reflection.band_min,
            stiff_max: s.penalty.stiff_max,
            max_substep: s.penalty.max_substep,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl SeriesConfig {
    fn build(&self) -> Result<TimeSeries<f64>, CliError> {
        match self {
            SeriesConfig::Constant(v) => Ok(TimeSeries::constant(*v)),
            SeriesConfig::Sampled { start, end, values } => {
                TimeSeries::sampled(*start, *end, values.clone()).map_err(config_err)
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            SeriesConfig::Constant(v) => (*v, *v),
            SeriesConfig::Sampled { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v))),
        }
    }
}

impl LossConfig {
    fn build(&self) -> Result<LossFn<f64>, CliError> {
        Ok(match self {
            LossConfig::Linear { slope, intercept } => LossFn::linear(*slope, *intercept),
            LossConfig::ExampleL => LossFn::BentLower,
            LossConfig::ExampleR => LossFn::BentUpper,
            LossConfig::AffineEnvelope { b, offset } => LossFn::Affine { b: b.build()?, offset: offset.build()? },
        })
    }

    /// Range of the slope in `x`.
    fn slopes(&self) -> (f64, f64) {
        match self {
            LossConfig::Linear { slope, .. } => (*slope, *slope),
            LossConfig::ExampleL | LossConfig::ExampleR => (0.5, 1.5),
            LossConfig::AffineEnvelope { b, .. } => b.range(),
        }
    }
}

impl LossPairConfig {
    pub fn build(&self) -> Result<LossPair<f64>, CliError> {
        let (a0, a1) = self.lower.slopes();
        let (b0, b1) = self.upper.slopes();
        let c = self.c.unwrap_or(a0.min(b0));
        let big_c = self.big_c.unwrap_or(a1.max(b1));
        LossPair::new(self.lower.build()?, self.upper.build()?, c, big_c, self.gap.unwrap_or(0.0)).map_err(config_err)
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(config_err)?;
        if cfg.schema != SCHEMA {
            return Err(CliError::Config(format!("unsupported schema {:?}, expected {SCHEMA:?}", cfg.schema)));
        }
        Ok(cfg)
    }

    /// `flag`, then the config, then `MEANREFLECT_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV} is not a u64: {v:?}"))),
            Err(_) => Ok(0),
        }
    }

    pub fn to_scenario(&self, seed: u64) -> Result<Scenario<f64>, CliError> {
        let grid = TimeGrid::uniform(self.horizon, self.steps).map_err(config_err)?;
        let terminal = match self.terminal {
            TerminalConfig::Brownian { scale, shift } => TerminalSpec::Brownian { scale, shift },
            TerminalConfig::Sin { amplitude, shift } => TerminalSpec::Sin { amplitude, shift },
            TerminalConfig::CentredBrownian { scale, shift } => TerminalSpec::CentredBrownian { scale, shift },
            TerminalConfig::Constant { value } => TerminalSpec::Constant(value),
        };
        let generator = match self.generator {
            GeneratorConfig::Zero => Generator::zero(),
            GeneratorConfig::Constant { value } => Generator::constant(value),
            GeneratorConfig::Linear { y, mean_y, z, mean_z, constant } => Generator::linear(y, mean_y, z, mean_z, constant),
            GeneratorConfig::Quadratic { gamma, y, mean_y, constant } => {
                Generator::quadratic(gamma, y, mean_y, constant).map_err(config_err)?
            }
        };
        let envelope = match &self.envelope {
            Some(e) => Some(LinearEnvelope::new(e.b.build()?, e.p.build()?, e.q.build()?, &grid).map_err(config_err)?),
            None => None,
        };
        let obstacles = match &self.obstacles {
            Some(o) => Some(LinearObstacles::new(o.lower_rate.build()?, o.upper_rate.build()?, &grid).map_err(config_err)?),
            None => None,
        };
        let losses = match (&self.losses, &obstacles) {
            (Some(l), _) => l.build()?,
            (None, Some(o)) => o.loss_pair(),
            (None, None) => return Err(CliError::Config("either losses or obstacles is required".into())),
        };
        let s = &self.solver;
        let config = SolverConfig {
            regression: RegressionConfig { degree: s.degree, ridge: s.ridge, z_mode: s.z_mode },
            reflection: ReflectionConfig { root_tol: s.root_tol, band_min: s.band_min },
            picard_tol: s.picard_tol,
            max_iterations: s.max_iterations,
            stat_sigmas: s.stat_sigmas,
            split_ratio: s.split_ratio,
            allow_split: s.allow_split,
            min_window_steps: s.min_window_steps,
            init: match s.init {
                InitConfig::Zero => PicardInit::Zero,
                InitConfig::Unreflected => PicardInit::Unreflected,
            },
            penalty: PenaltyConfig { stiff_max: s.stiff_max, max_substep: s.max_substep },
        };
        let sc = Scenario {
            horizon: self.horizon,
            steps: self.steps,
            particles: self.particles,
            rng: RngSpec::new(seed),
            terminal,
            generator,
            losses,
            envelope,
            obstacles,
            config,
        };
        sc.validate().map_err(CliError::Solver)?;
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLAMP: &str = r#"{
        "schema": "meanreflect/scenario-v1",
        "horizon": 1.0, "steps": 10, "particles": 100, "seed": 3,
        "terminal": {"kind": "brownian"},
        "generator": {"kind": "constant", "value": 4.0},
        "losses": {"lower": {"kind": "linear", "slope": 1.0, "intercept": -2.0},
                   "upper": {"kind": "linear", "slope": 1.0, "intercept": 1.0}}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ScenarioConfig::parse(CLAMP).unwrap();
        let sc = cfg.to_scenario(cfg.resolve_seed(None).unwrap()).unwrap();
        assert_eq!(sc.rng.seed, 3);
        assert_eq!(sc.losses.lower_at(0.0, 2.0), 0.0);
        assert_eq!((sc.losses.c, sc.losses.big_c), (1.0, 1.0));
        assert_eq!(cfg.resolve_seed(Some(9)).unwrap(), 9);
    }

    #[test]
    fn rejects_wrong_schema_and_unknown_fields() {
        let bad = CLAMP.replace("scenario-v1", "scenario-v0");
        assert!(matches!(ScenarioConfig::parse(&bad), Err(CliError::Config(_))));
        let extra = CLAMP.replace("\"steps\": 10", "\"steps\": 10, \"stepz\": 3");
        assert!(ScenarioConfig::parse(&extra).is_err());
    }

    #[test]
    fn affine_envelope_accepts_offset_aliases() {
        let text = CLAMP.replace(
            r#"{"kind": "linear", "slope": 1.0, "intercept": -2.0}"#,
            r#"{"kind": "affine-envelope", "b": 1.0, "p": {"start": 0.0, "end": 1.0, "values": [2.0, 3.0]}}"#,
        );
        let cfg = ScenarioConfig::parse(&text).unwrap();
        let lp = cfg.losses.unwrap().build().unwrap();
        assert!((lp.lower_at(0.5, 2.5) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn example_pair_gets_its_constants() {
        let text = CLAMP
            .replace(r#"{"kind": "linear", "slope": 1.0, "intercept": -2.0}"#, r#"{"kind": "paper-example-L"}"#)
            .replace(r#"{"kind": "linear", "slope": 1.0, "intercept": 1.0}"#, r#"{"kind": "paper-example-R"}"#);
        let lp = ScenarioConfig::parse(&text).unwrap().losses.unwrap().build().unwrap();
        assert_eq!((lp.c, lp.big_c), (0.5, 1.5));
    }
}
