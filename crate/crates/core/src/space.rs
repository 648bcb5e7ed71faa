//! Conditional pipeline search spaces.
//!
//! A [`PipelineSpace`] is an ordered list of [`ParamSpec`]s, each belonging to
//! one of five pipeline [`Stage`]s. A parameter may be conditional on a single
//! categorical parent: it is active only when the parent is active and takes
//! one of the activating values. A [`Configuration`] holds exactly the active
//! parameters of one point in the space, keyed by name in byte order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SpaceError;

/// Default cap on the number of configurations [`enumerate_grid`] will produce.
pub const DEFAULT_GRID_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tiling,
    Normalization,
    FeatureExtractor,
    Aggregator,
    Training,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Tiling,
        Stage::Normalization,
        Stage::FeatureExtractor,
        Stage::Aggregator,
        Stage::Training,
    ];

    /// Stages whose artifacts are reusable across trials (tiles).
    pub const PREPROCESSING: [Stage; 2] = [Stage::Tiling, Stage::Normalization];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tiling => "tiling",
            Stage::Normalization => "normalization",
            Stage::FeatureExtractor => "feature_extractor",
            Stage::Aggregator => "aggregator",
            Stage::Training => "training",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|stage| stage.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The value domain of a parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    ContinuousLinear { low: f64, high: f64 },
    ContinuousLog { low: f64, high: f64 },
    Integer { low: i64, high: i64 },
    Categorical { choices: Vec<String> },
}

impl Domain {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Domain::ContinuousLinear { .. } => "continuous-linear",
            Domain::ContinuousLog { .. } => "continuous-log",
            Domain::Integer { .. } => "integer",
            Domain::Categorical { .. } => "categorical",
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Domain::Categorical { .. })
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::ContinuousLinear { low, high }, Value::Real(x))
            | (Domain::ContinuousLog { low, high }, Value::Real(x)) => {
                x.is_finite() && *low <= *x && *x <= *high
            }
            (Domain::Integer { low, high }, Value::Int(x)) => *low <= *x && *x <= *high,
            (Domain::Categorical { choices }, Value::Str(s)) => choices.iter().any(|c| c == s),
            _ => false,
        }
    }

    /// Grid values for benchmark enumeration. Numeric grids include both
    /// endpoints; log grids are geometric; integer grids are rounded and
    /// deduplicated.
    pub fn grid_values(&self, points: usize) -> Vec<Value> {
        let points = points.max(1);
        match self {
            Domain::Categorical { choices } => choices.iter().cloned().map(Value::Str).collect(),
            Domain::ContinuousLinear { low, high } => (0..points)
                .map(|i| {
                    if points == 1 || i == 0 {
                        Value::Real(*low)
                    } else if i == points - 1 {
                        Value::Real(*high)
                    } else {
                        let t = i as f64 / (points - 1) as f64;
                        Value::Real(low + (high - low) * t)
                    }
                })
                .collect(),
            Domain::ContinuousLog { low, high } => {
                let (a, b) = (libm::log10(*low), libm::log10(*high));
                (0..points)
                    .map(|i| {
                        if points == 1 || i == 0 {
                            Value::Real(*low)
                        } else if i == points - 1 {
                            Value::Real(*high)
                        } else {
                            let t = i as f64 / (points - 1) as f64;
                            Value::Real(libm::pow(10.0, a + (b - a) * t))
                        }
                    })
                    .collect()
            }
            Domain::Integer { low, high } => {
                let mut out: Vec<Value> = Vec::with_capacity(points);
                for i in 0..points {
                    let v = if points == 1 {
                        *low
                    } else {
                        let t = i as f64 / (points - 1) as f64;
                        libm::round(*low as f64 + (*high - *low) as f64 * t) as i64
                    };
                    if out.last() != Some(&Value::Int(v)) {
                        out.push(Value::Int(v));
                    }
                }
                out
            }
        }
    }
}

/// Activation rule: the parameter is active iff `parent` is active and its
/// value is one of `values`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub stage: Stage,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, stage: Stage, domain: Domain) -> Self {
        ParamSpec {
            name: name.into(),
            stage,
            domain,
            condition: None,
        }
    }

    pub fn categorical<I, S>(name: impl Into<String>, stage: Stage, choices: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let choices = choices.into_iter().map(Into::into).collect();
        ParamSpec::new(name, stage, Domain::Categorical { choices })
    }

    pub fn when<I, S>(mut self, parent: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.condition = Some(Condition {
            parent: parent.into(),
            values: values.into_iter().map(Into::into).collect(),
        });
        self
    }
}

/// A single parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            Value::Str(s) => s.parse().ok(),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Canonical rendering: strings verbatim, integers in decimal, reals in
    /// shortest round-trip scientific notation (`1e-3`, `2.5e0`).
    pub fn render(&self) -> Result<String, SpaceError> {
        match self {
            Value::Str(s) => Ok(s.clone()),
            Value::Int(i) => Ok(i.to_string()),
            Value::Real(x) if x.is_finite() => Ok(format!("{x:e}")),
            Value::Real(_) => Err(SpaceError::NonFinite),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(x) => write!(f, "{x:e}"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.into())
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Real(x)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Int(x)
    }
}

/// One concrete point of a space. Entries are kept sorted by name.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Configuration {
    pub space_name: String,
    pub entries: BTreeMap<String, Value>,
}

impl Configuration {
    pub fn new(space_name: impl Into<String>) -> Self {
        Configuration {
            space_name: space_name.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.entries.insert(name.into(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.get(name)
    }

    /// `name=value` lines sorted by name, each newline-terminated.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, SpaceError> {
        let mut out = Vec::new();
        for (name, value) in &self.entries {
            let rendered = value.render().map_err(|_| SpaceError::NonFiniteValue {
                param: name.clone(),
            })?;
            out.extend_from_slice(name.as_bytes());
            out.push(b'=');
            out.extend_from_slice(rendered.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Hex SHA-256 of [`Configuration::canonical_bytes`].
    pub fn digest(&self) -> Result<String, SpaceError> {
        Ok(sha256_hex(&self.canonical_bytes()?))
    }
}

/// Free-function form of [`Configuration::canonical_bytes`].
pub fn canonical_serialize(config: &Configuration) -> Result<Vec<u8>, SpaceError> {
    config.canonical_bytes()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A rule violation found by [`validate_space`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub param: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.param, self.rule)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, param: &str, rule: impl Into<String>) {
        self.violations.push(Violation {
            param: param.into(),
            rule: rule.into(),
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpace {
    pub name: String,
    pub params: Vec<ParamSpec>,
}

impl PipelineSpace {
    pub fn new(name: impl Into<String>, params: Vec<ParamSpec>) -> Self {
        PipelineSpace {
            name: name.into(),
            params,
        }
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_space(self)
    }

    /// Whether `param` is active given the (partial) entries chosen so far.
    /// The parent must already be present in `entries`.
    pub fn is_active(&self, param: &ParamSpec, entries: &BTreeMap<String, Value>) -> bool {
        match &param.condition {
            None => true,
            Some(cond) => match entries.get(&cond.parent) {
                Some(Value::Str(v)) => cond.values.iter().any(|a| a == v),
                _ => false,
            },
        }
    }

    /// Parameter indices ordered so every parent precedes its children;
    /// otherwise declaration order. Assumes a valid (acyclic) space.
    pub fn sampling_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.params.len());
        let mut placed = vec![false; self.params.len()];
        while order.len() < self.params.len() {
            let before = order.len();
            for (i, p) in self.params.iter().enumerate() {
                if placed[i] {
                    continue;
                }
                let ready = match &p.condition {
                    None => true,
                    Some(c) => self
                        .params
                        .iter()
                        .position(|q| q.name == c.parent)
                        .map_or(true, |j| placed[j]),
                };
                if ready {
                    placed[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                // cycle: fall back to declaration order for the rest
                order.extend((0..self.params.len()).filter(|i| !placed[*i]));
                break;
            }
        }
        order
    }

    /// Checks that `config` holds exactly the active parameters of this space
    /// and that every value lies in its domain.
    pub fn check_configuration(&self, config: &Configuration) -> Result<(), SpaceError> {
        if config.space_name != self.name {
            return Err(SpaceError::SpaceMismatch {
                expected: self.name.clone(),
                found: config.space_name.clone(),
            });
        }
        for name in config.entries.keys() {
            if self.param(name).is_none() {
                return Err(SpaceError::UnknownParam(name.clone()));
            }
        }
        for idx in self.sampling_order() {
            let p = &self.params[idx];
            let active = self.is_active(p, &config.entries);
            match (active, config.entries.get(&p.name)) {
                (true, None) => return Err(SpaceError::MissingParam(p.name.clone())),
                (false, Some(_)) => return Err(SpaceError::InactiveParam(p.name.clone())),
                (true, Some(v)) if !p.domain.contains(v) => {
                    return Err(SpaceError::OutOfDomain(p.name.clone()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Restriction of `config` to the parameters of the given stages.
    pub fn subconfig(&self, config: &Configuration, stages: &[Stage]) -> Configuration {
        let entries = config
            .entries
            .iter()
            .filter(|(name, _)| {
                self.param(name)
                    .is_some_and(|p| stages.contains(&p.stage))
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Configuration {
            space_name: config.space_name.clone(),
            entries,
        }
    }

    /// Number of configurations [`enumerate_grid`] would produce.
    pub fn grid_cardinality(&self, numeric_grid_points: usize) -> u128 {
        let sizes: Vec<u128> = self
            .params
            .iter()
            .map(|p| p.domain.grid_values(numeric_grid_points).len() as u128)
            .collect();
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.condition.is_none())
            .fold(1u128, |acc, (i, _)| {
                acc.saturating_mul(self.subtree_count(i, &sizes))
            })
    }

    fn subtree_count(&self, idx: usize, sizes: &[u128]) -> u128 {
        let p = &self.params[idx];
        let children: Vec<usize> = self
            .params
            .iter()
            .enumerate()
            .filter(|(_, c)| c.condition.as_ref().is_some_and(|c| c.parent == p.name))
            .map(|(i, _)| i)
            .collect();
        match &p.domain {
            Domain::Categorical { choices } if !children.is_empty() => {
                choices.iter().fold(0u128, |acc, choice| {
                    let branch = children
                        .iter()
                        .filter(|&&c| {
                            let cond = self.params[c].condition.as_ref().unwrap();
                            cond.values.iter().any(|v| v == choice)
                        })
                        .fold(1u128, |prod, &c| {
                            prod.saturating_mul(self.subtree_count(c, sizes))
                        });
                    acc.saturating_add(branch)
                })
            }
            _ => sizes[idx],
        }
    }

    /// Hex SHA-256 over a canonical rendering of the space definition.
    pub fn fingerprint(&self) -> String {
        let mut params: Vec<&ParamSpec> = self.params.iter().collect();
        params.sort_by(|a, b| a.name.cmp(&b.name));
        let mut text = format!("space={}\n", self.name);
        for p in params {
            text.push_str(&p.name);
            text.push('|');
            text.push_str(p.stage.as_str());
            text.push('|');
            text.push_str(p.domain.kind_name());
            text.push('|');
            match &p.domain {
                Domain::ContinuousLinear { low, high } | Domain::ContinuousLog { low, high } => {
                    text.push_str(&format!("{low:e},{high:e}"))
                }
                Domain::Integer { low, high } => text.push_str(&format!("{low},{high}")),
                Domain::Categorical { choices } => text.push_str(&choices.join("\u{1f}")),
            }
            if let Some(c) = &p.condition {
                text.push_str(&format!("|{}:{}", c.parent, c.values.join("\u{1f}")));
            }
            text.push('\n');
        }
        sha256_hex(text.as_bytes())
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

/// Checks every parameter and space invariant. Violations are data.
pub fn validate_space(space: &PipelineSpace) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();

    for p in &space.params {
        if !is_identifier(&p.name) {
            report.push(&p.name, "name is not an identifier");
        }
        if !seen.insert(p.name.as_str()) {
            report.push(&p.name, "duplicate parameter name");
        }
        match &p.domain {
            Domain::ContinuousLinear { low, high } => {
                if !(low.is_finite() && high.is_finite()) {
                    report.push(&p.name, "bounds must be finite");
                } else if low >= high {
                    report.push(&p.name, "requires low < high");
                }
            }
            Domain::ContinuousLog { low, high } => {
                if !(low.is_finite() && high.is_finite()) {
                    report.push(&p.name, "bounds must be finite");
                } else {
                    if *low <= 0.0 {
                        report.push(&p.name, "log domain requires low > 0");
                    }
                    if low >= high {
                        report.push(&p.name, "requires low < high");
                    }
                }
            }
            Domain::Integer { low, high } => {
                if low >= high {
                    report.push(&p.name, "requires low < high");
                }
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    report.push(&p.name, "categorical requires at least one choice");
                }
                let distinct: BTreeSet<&String> = choices.iter().collect();
                if distinct.len() != choices.len() {
                    report.push(&p.name, "categorical choices must be distinct");
                }
                if choices.iter().any(|c| c.contains('\n') || c.contains('\r')) {
                    report.push(&p.name, "choice contains a line break");
                }
            }
        }
    }

    for p in &space.params {
        let Some(cond) = &p.condition else { continue };
        if cond.parent == p.name {
            report.push(&p.name, "parameter conditioned on itself");
            continue;
        }
        let Some(parent) = space.param(&cond.parent) else {
            report.push(&p.name, format!("unknown parent `{}`", cond.parent));
            continue;
        };
        match &parent.domain {
            Domain::Categorical { choices } => {
                if cond.values.is_empty() {
                    report.push(&p.name, "condition has no activating values");
                }
                for v in &cond.values {
                    if !choices.contains(v) {
                        report.push(
                            &p.name,
                            format!("activating value `{v}` is not a choice of `{}`", parent.name),
                        );
                    }
                }
            }
            _ => report.push(&p.name, format!("parent `{}` is not categorical", parent.name)),
        }
    }

    // each parameter has at most one parent by construction; check for cycles
    for p in &space.params {
        let mut cursor = p;
        let mut steps = 0;
        while let Some(cond) = &cursor.condition {
            let Some(parent) = space.param(&cond.parent) else { break };
            steps += 1;
            if parent.name == p.name || steps > space.params.len() {
                report.push(&p.name, "condition cycle");
                break;
            }
            cursor = parent;
        }
    }

    report
}

/// Enumerates the full benchmark grid: the Cartesian product of categorical
/// choices and numeric grids, omitting inactive conditional parameters on each
/// branch. Ordering is lexicographic over parameter names, with each
/// parameter's values in declaration/grid order and an inactive parameter
/// sorting before any of its values.
pub fn enumerate_grid(
    space: &PipelineSpace,
    numeric_grid_points: usize,
    cap: u64,
) -> Result<Vec<Configuration>, SpaceError> {
    let report = validate_space(space);
    if !report.is_ok() {
        return Err(SpaceError::Invalid(report.violations));
    }
    let cardinality = space.grid_cardinality(numeric_grid_points);
    if cardinality > cap as u128 {
        return Err(SpaceError::GridTooLarge { cardinality });
    }

    let grids: Vec<Vec<Value>> = space
        .params
        .iter()
        .map(|p| p.domain.grid_values(numeric_grid_points))
        .collect();
    // rank of each param in canonical (name) order
    let mut by_name: Vec<usize> = (0..space.params.len()).collect();
    by_name.sort_by(|&a, &b| space.params[a].name.cmp(&space.params[b].name));
    let mut canonical_rank = vec![0usize; space.params.len()];
    for (rank, &idx) in by_name.iter().enumerate() {
        canonical_rank[idx] = rank;
    }

    struct Walk<'a> {
        space: &'a PipelineSpace,
        order: Vec<usize>,
        grids: Vec<Vec<Value>>,
        rank: Vec<usize>,
        out: Vec<(Vec<Option<usize>>, Configuration)>,
    }

    impl Walk<'_> {
        fn go(&mut self, pos: usize, entries: &mut BTreeMap<String, Value>, key: &mut Vec<Option<usize>>) {
            if pos == self.order.len() {
                self.out.push((
                    key.clone(),
                    Configuration {
                        space_name: self.space.name.clone(),
                        entries: entries.clone(),
                    },
                ));
                return;
            }
            let idx = self.order[pos];
            let param = &self.space.params[idx];
            if !self.space.is_active(param, entries) {
                self.go(pos + 1, entries, key);
                return;
            }
            for vi in 0..self.grids[idx].len() {
                entries.insert(param.name.clone(), self.grids[idx][vi].clone());
                key[self.rank[idx]] = Some(vi);
                self.go(pos + 1, entries, key);
            }
            entries.remove(&param.name);
            key[self.rank[idx]] = None;
        }
    }

    let mut walk = Walk {
        space,
        order: space.sampling_order(),
        grids,
        rank: canonical_rank,
        out: Vec::with_capacity(cardinality as usize),
    };
    let mut key = vec![None; space.params.len()];
    walk.go(0, &mut BTreeMap::new(), &mut key);
    walk.out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(walk.out.into_iter().map(|(_, c)| c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_stage() -> PipelineSpace {
        PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("tile_size", Stage::Tiling, ["256", "512"]),
                ParamSpec::categorical("normalization", Stage::Normalization, ["none", "B"]),
                ParamSpec::categorical("feature_extractor", Stage::FeatureExtractor, ["weak", "strong"]),
                ParamSpec::categorical("aggregator", Stage::Aggregator, ["A", "B"]),
                ParamSpec::categorical("heads", Stage::Aggregator, ["1", "2"]).when("aggregator", ["A"]),
                ParamSpec::new(
                    "lr",
                    Stage::Training,
                    Domain::ContinuousLog { low: 1e-4, high: 1e-2 },
                ),
            ],
        )
    }

    #[test]
    fn well_formed_space_is_ok() {
        assert!(five_stage().validate().is_ok());
    }

    #[test]
    fn log_low_zero_is_flagged() {
        let space = PipelineSpace::new(
            "s",
            vec![ParamSpec::new("lr", Stage::Training, Domain::ContinuousLog { low: 0.0, high: 1.0 })],
        );
        let report = validate_space(&space);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].param, "lr");
        assert_eq!(report.violations[0].rule, "log domain requires low > 0");
    }

    #[test]
    fn dangling_parent_is_flagged() {
        let space = PipelineSpace::new(
            "s",
            vec![ParamSpec::categorical("x", Stage::Aggregator, ["a"]).when("missing", ["a"])],
        );
        let report = validate_space(&space);
        assert!(report.violations[0].rule.starts_with("unknown parent"));
    }

    #[test]
    fn cycles_and_bad_choices_are_flagged() {
        let space = PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("a", Stage::Aggregator, ["x", "y"]).when("b", ["u"]),
                ParamSpec::categorical("b", Stage::Aggregator, ["u", "u"]).when("a", ["x"]),
            ],
        );
        let rules: Vec<String> = validate_space(&space).violations.into_iter().map(|v| v.rule).collect();
        assert!(rules.iter().any(|r| r == "condition cycle"));
        assert!(rules.iter().any(|r| r == "categorical choices must be distinct"));
    }

    #[test]
    fn product_count_without_conditions() {
        let space = PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("a", Stage::Aggregator, ["1", "2", "3"]),
                ParamSpec::categorical("b", Stage::Training, ["1", "2", "3", "4"]),
            ],
        );
        assert_eq!(enumerate_grid(&space, 3, DEFAULT_GRID_CAP).unwrap().len(), 12);
    }

    #[test]
    fn conditional_branch_count() {
        let space = PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("aggregator", Stage::Aggregator, ["A", "B"]),
                ParamSpec::categorical("dropout", Stage::Aggregator, ["0", "1"]).when("aggregator", ["A"]),
            ],
        );
        let grid = enumerate_grid(&space, 3, DEFAULT_GRID_CAP).unwrap();
        assert_eq!(grid.len(), 3);
        assert!(grid.iter().all(|c| space.check_configuration(c).is_ok()));
        let b = grid.iter().find(|c| c.get("aggregator") == Some(&"B".into())).unwrap();
        assert!(b.get("dropout").is_none());
    }

    #[test]
    fn log_grid_is_geometric() {
        let d = Domain::ContinuousLog { low: 1e-4, high: 1e-2 };
        assert_eq!(
            d.grid_values(3),
            vec![Value::Real(1e-4), Value::Real(1e-3), Value::Real(1e-2)]
        );
        let lin = Domain::ContinuousLinear { low: 0.0, high: 1.0 };
        assert_eq!(lin.grid_values(5)[2], Value::Real(0.5));
        let int = Domain::Integer { low: 1, high: 3 };
        assert_eq!(int.grid_values(5), vec![Value::Int(1), Value::Int(2), Value::Int(3)]);
    }

    #[test]
    fn grid_cap_reports_cardinality() {
        let err = enumerate_grid(&five_stage(), 10, 20).unwrap_err();
        // 2*2*2*(2*10 heads/lr... ) computed from the condition tree
        assert_eq!(err, SpaceError::GridTooLarge { cardinality: 2 * 2 * 2 * (2 + 1) * 10 });
    }

    #[test]
    fn grid_ordering_is_lexicographic_by_name() {
        let space = PipelineSpace::new(
            "s",
            vec![
                ParamSpec::categorical("z", Stage::Aggregator, ["2", "1"]),
                ParamSpec::categorical("a", Stage::Training, ["y", "x"]),
            ],
        );
        let grid = enumerate_grid(&space, 2, DEFAULT_GRID_CAP).unwrap();
        let rendered: Vec<String> = grid
            .iter()
            .map(|c| String::from_utf8(c.canonical_bytes().unwrap()).unwrap())
            .collect();
        assert_eq!(
            rendered,
            vec!["a=y\nz=2\n", "a=y\nz=1\n", "a=x\nz=2\n", "a=x\nz=1\n"]
        );
    }

    #[test]
    fn canonical_bytes_golden() {
        let c = Configuration::new("s").with("lr", 0.001).with("agg", "abmil");
        assert_eq!(c.canonical_bytes().unwrap(), b"agg=abmil\nlr=1e-3\n".to_vec());
    }

    #[test]
    fn canonical_bytes_order_and_value_sensitivity() {
        let ab = Configuration::new("s").with("b", 2i64).with("a", 1i64);
        let ba = Configuration::new("s").with("a", 1i64).with("b", 2i64);
        assert_eq!(ab.canonical_bytes().unwrap(), ba.canonical_bytes().unwrap());
        let a2 = Configuration::new("s").with("a", 2i64).with("b", 2i64);
        assert_ne!(ab.canonical_bytes().unwrap(), a2.canonical_bytes().unwrap());
        // integer and real renderings never collide
        let real = Configuration::new("s").with("a", 1.0).with("b", 2i64);
        assert_ne!(ab.canonical_bytes().unwrap(), real.canonical_bytes().unwrap());
    }

    #[test]
    fn non_finite_value_is_rejected() {
        let c = Configuration::new("s").with("lr", f64::NAN);
        assert_eq!(
            c.canonical_bytes().unwrap_err(),
            SpaceError::NonFiniteValue { param: "lr".into() }
        );
    }

    #[test]
    fn subconfig_projection() {
        let space = five_stage();
        let full = Configuration::new("s")
            .with("tile_size", "256")
            .with("normalization", "B")
            .with("feature_extractor", "strong")
            .with("aggregator", "A")
            .with("heads", "1")
            .with("lr", 1e-3);
        let pre = space.subconfig(&full, &Stage::PREPROCESSING);
        assert_eq!(pre.entries.len(), 2);
        assert_eq!(space.subconfig(&full, &Stage::ALL), full);

        let mut other = full.clone();
        other.entries.insert("lr".into(), Value::Real(1e-2));
        assert_eq!(
            space.subconfig(&other, &Stage::PREPROCESSING),
            pre
        );
    }

    #[test]
    fn fingerprint_changes_with_space() {
        let a = five_stage();
        let mut b = five_stage();
        b.params[0] = ParamSpec::categorical("tile_size", Stage::Tiling, ["256", "1024"]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), five_stage().fingerprint());
    }
}
