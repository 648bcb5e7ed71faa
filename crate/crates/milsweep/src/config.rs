//! Study configuration file (YAML). Parsing is strict: an unknown key anywhere
//! is an error that names the key and the closest valid one.

use std::path::{Path, PathBuf};

use milsweep_core::pruner::PrunerKind;
use milsweep_core::sampler::SamplerKind;
use milsweep_core::space::{Condition, Violation};
use milsweep_core::trial::StudyMode;
use milsweep_core::{Direction, Domain, ParamSpec, PipelineSpace, Stage};
use serde::{Deserialize, Serialize};

use crate::evaluator::MilEvaluator;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("unknown key `{key}`{}{}", .nearest.as_ref().map(|n| format!(", did you mean `{n}`?")).unwrap_or_default(), location(*.line, *.column))]
    UnknownKey {
        key: String,
        nearest: Option<String>,
        line: Option<usize>,
        column: Option<usize>,
    },
    #[error("{message}{}", location(*.line, *.column))]
    Parse {
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },
    #[error("`{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("invalid space: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpace(Vec<Violation>),
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at line {l} column {c}"),
        _ => String::new(),
    }
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Read { .. } => "config_read",
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::Parse { .. } => "config_parse",
            ConfigError::Invalid { .. } => "invalid_config",
            ConfigError::InvalidSpace(_) => "invalid_space",
        }
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// One parameter block as written in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub stage: Stage,
    pub kind: DomainKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Scalar>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionBlock>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    ContinuousLinear,
    ContinuousLog,
    Integer,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionBlock {
    pub parent: String,
    pub values: Vec<Scalar>,
}

/// A YAML scalar kept as text, so `choices: [256, 512]` and
/// `choices: ["256", "512"]` mean the same thing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_yaml::Value", into = "String")]
pub struct Scalar(pub String);

impl TryFrom<serde_yaml::Value> for Scalar {
    type Error = String;
    fn try_from(v: serde_yaml::Value) -> Result<Self, String> {
        match v {
            serde_yaml::Value::String(s) => Ok(Scalar(s)),
            serde_yaml::Value::Number(n) => Ok(Scalar(n.to_string())),
            serde_yaml::Value::Bool(b) => Ok(Scalar(b.to_string())),
            other => Err(format!("expected a scalar, found {other:?}")),
        }
    }
}

impl From<Scalar> for String {
    fn from(s: Scalar) -> String {
        s.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub name: String,
    /// Points per numeric parameter when enumerating the benchmark grid.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub params: Vec<ParamBlock>,
}

fn default_grid_points() -> usize {
    3
}

fn one_u32() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_sampler() -> SamplerKind {
    SamplerKind::Random
}

fn default_pruner() -> PrunerKind {
    PrunerKind::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub mode: StudyMode,
    /// Study id; defaults to the last component of `output_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<String>,
    pub space: SpaceConfig,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_pruner")]
    pub pruner: PrunerKind,
    #[serde(default)]
    pub evaluator: MilEvaluator,
    /// Trial count `T` (optimize mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default = "one_u32")]
    pub repeats: u32,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub concurrency: usize,
    pub output_dir: PathBuf,
    /// Shared artifact cache root; defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Benchmark mode aborts once the failed fraction of finished trials exceeds this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_failure_rate: Option<f64>,
    /// Write per-trial model summaries under `<output_dir>/trials`.
    #[serde(default = "yes")]
    pub persist_artifacts: bool,
}

impl ParamBlock {
    pub fn to_spec(&self) -> Result<ParamSpec, ConfigError> {
        let field = |f: &str| format!("space.params[{}].{f}", self.name);
        let bounds = || -> Result<(f64, f64), ConfigError> {
            let low = self.low.ok_or_else(|| ConfigError::invalid(field("low"), "required for numeric kinds"))?;
            let high = self.high.ok_or_else(|| ConfigError::invalid(field("high"), "required for numeric kinds"))?;
            Ok((low, high))
        };
        let numeric_only = || -> Result<(), ConfigError> {
            match self.choices {
                Some(_) => Err(ConfigError::invalid(field("choices"), "only valid for categorical kind")),
                None => Ok(()),
            }
        };
        let domain = match self.kind {
            DomainKind::ContinuousLinear => {
                numeric_only()?;
                let (low, high) = bounds()?;
                Domain::ContinuousLinear { low, high }
            }
            DomainKind::ContinuousLog => {
                numeric_only()?;
                let (low, high) = bounds()?;
                Domain::ContinuousLog { low, high }
            }
            DomainKind::Integer => {
                numeric_only()?;
                let (low, high) = bounds()?;
                if low.fract() != 0.0 || high.fract() != 0.0 {
                    return Err(ConfigError::invalid(field("low"), "integer bounds must be whole numbers"));
                }
                Domain::Integer {
                    low: low as i64,
                    high: high as i64,
                }
            }
            DomainKind::Categorical => {
                if self.low.is_some() || self.high.is_some() {
                    return Err(ConfigError::invalid(field("low"), "bounds are not valid for categorical kind"));
                }
                let choices = self
                    .choices
                    .as_ref()
                    .ok_or_else(|| ConfigError::invalid(field("choices"), "required for categorical kind"))?;
                Domain::Categorical {
                    choices: choices.iter().map(|c| c.0.clone()).collect(),
                }
            }
        };
        Ok(ParamSpec {
            name: self.name.clone(),
            stage: self.stage,
            domain,
            condition: self.condition.as_ref().map(|c| Condition {
                parent: c.parent.clone(),
                values: c.values.iter().map(|v| v.0.clone()).collect(),
            }),
        })
    }
}

impl SpaceConfig {
    pub fn to_space(&self) -> Result<PipelineSpace, ConfigError> {
        let params = self.params.iter().map(ParamBlock::to_spec).collect::<Result<_, _>>()?;
        Ok(PipelineSpace::new(self.name.clone(), params))
    }
}

/// Parsed and validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: StudyConfig,
    pub space: PipelineSpace,
    pub study_id: String,
    /// SHA-256 of the canonical JSON form, excluding `output_dir`.
    pub fingerprint: String,
}

impl StudyConfig {
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        crate::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn validate(self) -> Result<LoadedConfig, ConfigError> {
        let space = self.space.to_space()?;
        let report = space.validate();
        if !report.is_ok() {
            return Err(ConfigError::InvalidSpace(report.violations));
        }
        match (self.mode, self.budget) {
            (StudyMode::Optimize, None) => return Err(ConfigError::invalid("budget", "required in optimize mode")),
            (_, Some(0)) => return Err(ConfigError::invalid("budget", "must be at least 1")),
            _ => {}
        }
        if self.repeats == 0 {
            return Err(ConfigError::invalid("repeats", "must be at least 1"));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::invalid("concurrency", "must be at least 1"));
        }
        if self.space.grid_points < 2 {
            return Err(ConfigError::invalid("space.grid_points", "must be at least 2"));
        }
        if let Some(r) = self.max_failure_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(ConfigError::invalid("max_failure_rate", "must lie in [0, 1]"));
            }
        }
        milsweep_core::pruner::Pruner::from_kind(&self.pruner)
            .map_err(|e| ConfigError::invalid("pruner", e.to_string()))?;
        self.evaluator
            .synthetic
            .validate()
            .map_err(|e| ConfigError::invalid("evaluator.synthetic", e.to_string()))?;
        if self.evaluator.hidden == 0 {
            return Err(ConfigError::invalid("evaluator.hidden", "must be at least 1"));
        }
        let study_id = match &self.study {
            Some(s) => s.clone(),
            None => self
                .output_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| ConfigError::invalid("output_dir", "has no final path component"))?,
        };
        let fingerprint = self.fingerprint();
        Ok(LoadedConfig {
            config: self,
            space,
            study_id,
            fingerprint,
        })
    }
}

/// Parses YAML text, mapping serde's unknown-field diagnostics to
/// [`ConfigError::UnknownKey`] with the nearest valid key.
pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let config: StudyConfig = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map_or((None, None), |l| (Some(l.line()), Some(l.column())));
        let message = e.to_string();
        match unknown_key(&message) {
            Some((key, nearest)) => ConfigError::UnknownKey {
                key,
                nearest,
                line,
                column,
            },
            None => ConfigError::Parse { message, line, column },
        }
    })?;
    config.validate()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

/// Extracts the offending key and the closest expected key from serde's
/// "unknown field `x`, expected one of `a`, `b`" (or "unknown variant") text.
fn unknown_key(message: &str) -> Option<(String, Option<String>)> {
    let start = message
        .find("unknown field `")
        .map(|i| i + "unknown field `".len())
        .or_else(|| message.find("unknown variant `").map(|i| i + "unknown variant `".len()))?;
    let key_len = message[start..].find('`')?;
    let key = message[start..start + key_len].to_string();
    let rest = &message[start + key_len + 1..];
    let expected = rest.split('`').skip(1).step_by(2);
    let nearest = expected
        .map(|cand| (strsim::damerau_levenshtein(&key, cand), cand))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.to_string());
    Some((key, nearest))
}
