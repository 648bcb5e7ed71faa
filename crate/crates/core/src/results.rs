//! Flattened result rows and the filter/group/plot views over them.
//!
//! Filter grammar (comma means AND):
//!
//! ```text
//! filters := term ("," term)*
//! term    := column "=" value      equality (numeric if both sides parse as numbers)
//!          | column ">=" number    inclusive lower bound
//!          | column "<=" number    inclusive upper bound
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::direction::Direction;
use crate::error::QueryError;
use crate::pruner::median;
use crate::space::Value;
use crate::trial::{StudyMeta, TrialRecord};

/// Marker for conditional parameters that were inactive in a trial.
pub const INACTIVE: &str = "__inactive__";

pub const COL_TRIAL_ID: &str = "trial_id";
pub const COL_STUDY: &str = "study";
pub const COL_SEED: &str = "seed";
pub const COL_STATE: &str = "state";
pub const COL_VALUE: &str = "value";
pub const COL_STEPS: &str = "steps";
pub const CACHE_PREFIX: &str = "cache:";

pub const FIXED_COLUMNS: [&str; 6] = [COL_TRIAL_ID, COL_STUDY, COL_SEED, COL_STATE, COL_VALUE, COL_STEPS];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    /// Conditional parameter not active for this trial.
    Inactive,
    /// No value produced (e.g. no final metric).
    Missing,
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Cell::Int(_) | Cell::Real(_))
    }

    /// Text form used in CSV and group labels. Reals use the shortest
    /// round-trip rendering.
    pub fn render(&self) -> String {
        match self {
            Cell::Inactive => INACTIVE.into(),
            Cell::Missing => String::new(),
            Cell::Bool(b) => b.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) => format!("{x:?}"),
            Cell::Str(s) => s.clone(),
        }
    }

    /// Inverse of [`Cell::render`]. Text is read as a number only when the
    /// number renders back to the same text, so `"007"` stays a string.
    pub fn parse(text: &str) -> Cell {
        let cell = match text {
            "" => return Cell::Missing,
            INACTIVE => return Cell::Inactive,
            "true" => return Cell::Bool(true),
            "false" => return Cell::Bool(false),
            _ => match text.parse::<i64>() {
                Ok(i) => Cell::Int(i),
                Err(_) if looks_real(text) => match text.parse::<f64>() {
                    Ok(x) => Cell::Real(x),
                    Err(_) => return Cell::Str(text.into()),
                },
                Err(_) => return Cell::Str(text.into()),
            },
        };
        if cell.render() == text {
            cell
        } else {
            Cell::Str(text.into())
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Inactive => 0,
            Cell::Missing => 1,
            Cell::Bool(_) => 2,
            Cell::Int(_) | Cell::Real(_) => 3,
            Cell::Str(_) => 4,
        }
    }

    /// Total order: inactive < missing < bools < numbers < strings.
    pub fn total_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Bool(a), Cell::Bool(b)) => a.cmp(b),
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (a, b) if a.is_numeric() && b.is_numeric() => {
                a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
            }
            (Cell::Str(a), Cell::Str(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

fn looks_real(text: &str) -> bool {
    let t = text.trim_start_matches(['-', '+']);
    t.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.')
        || matches!(t, "inf" | "NaN")
}

impl From<&Value> for Cell {
    fn from(v: &Value) -> Self {
        match v {
            Value::Int(i) => Cell::Int(*i),
            Value::Real(x) => Cell::Real(*x),
            Value::Str(s) => Cell::Str(s.clone()),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Inactive => s.serialize_str(INACTIVE),
            Cell::Missing => s.serialize_none(),
            Cell::Bool(b) => s.serialize_bool(*b),
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Real(x) => s.serialize_f64(*x),
            Cell::Str(v) => s.serialize_str(v),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct CellVisitor;
        impl<'de> Visitor<'de> for CellVisitor {
            type Value = Cell;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a scalar cell")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Cell, E> {
                Ok(Cell::Bool(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Cell, E> {
                Ok(Cell::Int(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Cell, E> {
                i64::try_from(v).map(Cell::Int).or(Ok(Cell::Real(v as f64)))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Cell, E> {
                Ok(Cell::Real(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Cell, E> {
                Ok(if v == INACTIVE { Cell::Inactive } else { Cell::Str(v.into()) })
            }
            fn visit_none<E: de::Error>(self) -> Result<Cell, E> {
                Ok(Cell::Missing)
            }
            fn visit_unit<E: de::Error>(self) -> Result<Cell, E> {
                Ok(Cell::Missing)
            }
        }
        d.deserialize_any(CellVisitor)
    }
}

/// One trial flattened into named cells.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResultRow {
    pub cells: BTreeMap<String, Cell>,
}

impl ResultRow {
    pub fn get(&self, column: &str) -> Option<&Cell> {
        self.cells.get(column)
    }

    pub fn trial_id(&self) -> Option<i64> {
        match self.get(COL_TRIAL_ID) {
            Some(Cell::Int(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.get(COL_VALUE).and_then(Cell::as_f64)
    }
}

/// Rows of one or more studies with a consistent column set.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub direction: Direction,
}

impl ResultSet {
    /// One row per trial, in trial-id order. Columns: the fixed columns, every
    /// space parameter by name, then one `cache:<stage set>` column per stage
    /// set seen in the study.
    pub fn from_trials<'a, I>(meta: &StudyMeta, trials: I) -> ResultSet
    where
        I: IntoIterator<Item = &'a TrialRecord>,
    {
        let trials: Vec<&TrialRecord> = trials.into_iter().collect();
        let mut params: Vec<&str> = meta.space.params.iter().map(|p| p.name.as_str()).collect();
        params.sort_unstable();
        let mut stage_sets: Vec<&str> = trials
            .iter()
            .flat_map(|t| t.cache_hits.keys().map(String::as_str))
            .collect();
        stage_sets.sort_unstable();
        stage_sets.dedup();

        let mut columns: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
        columns.extend(params.iter().map(|p| p.to_string()));
        columns.extend(stage_sets.iter().map(|s| format!("{CACHE_PREFIX}{s}")));

        let rows = trials
            .iter()
            .map(|t| {
                let mut cells = BTreeMap::new();
                cells.insert(COL_TRIAL_ID.into(), Cell::Int(t.id as i64));
                cells.insert(COL_STUDY.into(), Cell::Str(meta.study_id.clone()));
                cells.insert(COL_SEED.into(), Cell::Int(t.seed as i64));
                cells.insert(COL_STATE.into(), Cell::Str(t.state.as_str().into()));
                cells.insert(
                    COL_VALUE.into(),
                    t.final_value.map_or(Cell::Missing, Cell::Real),
                );
                cells.insert(COL_STEPS.into(), Cell::Int(t.steps_used() as i64));
                for p in &params {
                    let cell = t.config.get(p).map_or(Cell::Inactive, Cell::from);
                    cells.insert((*p).into(), cell);
                }
                for s in &stage_sets {
                    let cell = t.cache_hits.get(*s).map_or(Cell::Missing, |h| Cell::Bool(*h));
                    cells.insert(format!("{CACHE_PREFIX}{s}"), cell);
                }
                ResultRow { cells }
            })
            .collect();
        ResultSet {
            columns,
            rows,
            direction: meta.direction,
        }
    }

    pub fn has_column(&self, column: &str) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    fn require(&self, column: &str) -> Result<(), QueryError> {
        if self.has_column(column) {
            Ok(())
        } else {
            Err(QueryError::UnknownColumn(column.into()))
        }
    }

    /// Concatenation; columns are unioned and missing cells become [`Cell::Missing`].
    pub fn concat(sets: &[ResultSet]) -> ResultSet {
        let mut columns: Vec<String> = Vec::new();
        for s in sets {
            for c in &s.columns {
                if !columns.contains(c) {
                    columns.push(c.clone());
                }
            }
        }
        let rows = sets
            .iter()
            .flat_map(|s| s.rows.iter())
            .map(|r| {
                let mut row = r.clone();
                for c in &columns {
                    row.cells.entry(c.clone()).or_insert(Cell::Missing);
                }
                row
            })
            .collect();
        ResultSet {
            columns,
            rows,
            direction: sets.first().map(|s| s.direction).unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterOp {
    Eq(String),
    Ge(f64),
    Le(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
}

impl Filter {
    pub fn matches(&self, row: &ResultRow) -> bool {
        let Some(cell) = row.get(&self.column) else {
            return false;
        };
        match &self.op {
            FilterOp::Eq(want) => match (cell.as_f64(), want.parse::<f64>()) {
                (Some(x), Ok(y)) => x == y,
                _ => cell.render() == *want,
            },
            FilterOp::Ge(bound) => cell.as_f64().is_some_and(|x| x >= *bound),
            FilterOp::Le(bound) => cell.as_f64().is_some_and(|x| x <= *bound),
        }
    }
}

/// Parses the comma-conjunction filter grammar. An empty string means no filter.
pub fn parse_filters(expr: &str) -> Result<Vec<Filter>, QueryError> {
    let expr = expr.trim();
    if expr.is_empty() {
        return Ok(Vec::new());
    }
    expr.split(',')
        .map(|term| {
            let malformed = || QueryError::MalformedFilter(term.into());
            let (column, op) = if let Some((c, v)) = term.split_once(">=") {
                (c, FilterOp::Ge(v.trim().parse().map_err(|_| malformed())?))
            } else if let Some((c, v)) = term.split_once("<=") {
                (c, FilterOp::Le(v.trim().parse().map_err(|_| malformed())?))
            } else if let Some((c, v)) = term.split_once('=') {
                (c, FilterOp::Eq(v.trim().into()))
            } else {
                return Err(malformed());
            };
            let column = column.trim();
            if column.is_empty() {
                return Err(malformed());
            }
            Ok(Filter {
                column: column.into(),
                op,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Mean,
    Std,
    Median,
    Count,
    Best,
}

impl Aggregate {
    pub const ALL: [Aggregate; 5] = [
        Aggregate::Mean,
        Aggregate::Std,
        Aggregate::Median,
        Aggregate::Count,
        Aggregate::Best,
    ];

    pub fn parse(s: &str) -> Result<Self, QueryError> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "std" => Ok(Aggregate::Std),
            "median" => Ok(Aggregate::Median),
            "count" => Ok(Aggregate::Count),
            "best" => Ok(Aggregate::Best),
            other => Err(QueryError::UnknownAggregate(other.into())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregate::Mean => "mean",
            Aggregate::Std => "std",
            Aggregate::Median => "median",
            Aggregate::Count => "count",
            Aggregate::Best => "best",
        }
    }

    /// `None` when there are no numeric values to aggregate.
    pub fn apply(self, values: &[f64], direction: Direction) -> Option<f64> {
        if self == Aggregate::Count {
            return Some(values.len() as f64);
        }
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        Some(match self {
            Aggregate::Mean => mean,
            // Sample standard deviation, 0 for a single value. Deviations are
            // taken from the first value so that equal values give exactly 0.
            Aggregate::Std => {
                if values.len() < 2 {
                    0.0
                } else {
                    let shift = values[0];
                    let (s, s2) = values
                        .iter()
                        .fold((0.0, 0.0), |(s, s2), x| (s + (x - shift), s2 + (x - shift) * (x - shift)));
                    libm::sqrt(((s2 - s * s / n) / (n - 1.0)).max(0.0))
                }
            }
            Aggregate::Median => median(values),
            Aggregate::Best => values
                .iter()
                .copied()
                .min_by(|a, b| direction.cmp_best_first(*a, *b))
                .unwrap(),
            Aggregate::Count => unreachable!(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Query {
    pub filters: Vec<Filter>,
    pub group_by: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    /// Column aggregated over; defaults to `value`.
    pub metric: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: Vec<Cell>,
    /// Rows in the group (including those without a numeric metric).
    pub count: usize,
    /// Aggregate name → value (null when nothing to aggregate).
    pub aggregates: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedTable {
    pub group_by: Vec<String>,
    pub metric: String,
    pub groups: Vec<GroupRow>,
}

pub fn filter_rows<'a>(set: &'a ResultSet, filters: &[Filter]) -> Result<Vec<&'a ResultRow>, QueryError> {
    for f in filters {
        set.require(&f.column)?;
    }
    Ok(set
        .rows
        .iter()
        .filter(|r| filters.iter().all(|f| f.matches(r)))
        .collect())
}

/// Filters conjunctively, groups by distinct key tuples (key-sorted), and
/// aggregates the metric column per group.
pub fn query(set: &ResultSet, q: &Query) -> Result<GroupedTable, QueryError> {
    let metric = q.metric.clone().unwrap_or_else(|| COL_VALUE.into());
    set.require(&metric)?;
    for g in &q.group_by {
        set.require(g)?;
    }
    let rows = filter_rows(set, &q.filters)?;

    let mut groups: Vec<(Vec<Cell>, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        let key: Vec<Cell> = q
            .group_by
            .iter()
            .map(|c| row.get(c).cloned().unwrap_or(Cell::Missing))
            .collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(row),
            None => groups.push((key, alloc::vec![row])),
        }
    }
    groups.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });

    let aggregates = if q.aggregates.is_empty() {
        alloc::vec![Aggregate::Count]
    } else {
        q.aggregates.clone()
    };
    let groups = groups
        .into_iter()
        .map(|(key, members)| {
            let values: Vec<f64> = members
                .iter()
                .filter_map(|r| r.get(&metric).and_then(Cell::as_f64))
                .collect();
            let aggregates = aggregates
                .iter()
                .map(|a| (a.as_str().to_string(), a.apply(&values, set.direction)))
                .collect();
            GroupRow {
                key,
                count: members.len(),
                aggregates,
            }
        })
        .collect();
    Ok(GroupedTable {
        group_by: q.group_by.clone(),
        metric,
        groups,
    })
}

/// Top-`k` complete rows, best first, ties to the lower trial id.
pub fn leaderboard(set: &ResultSet, k: usize) -> Vec<&ResultRow> {
    let mut rows: Vec<&ResultRow> = set
        .rows
        .iter()
        .filter(|r| r.get(COL_STATE).is_some_and(|s| s.render() == "complete"))
        .filter(|r| r.value().is_some())
        .collect();
    rows.sort_by(|a, b| {
        set.direction
            .cmp_best_first(a.value().unwrap(), b.value().unwrap())
            .then(a.trial_id().cmp(&b.trial_id()))
    });
    rows.truncate(k);
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(Cell, f64)>,
}

/// One series per group (or a single `all` series), points sorted by x.
/// Rows whose y is missing or inactive are skipped.
pub fn plot_series(set: &ResultSet, x: &str, y: &str, group_by: Option<&str>) -> Result<Vec<Series>, QueryError> {
    set.require(x)?;
    set.require(y)?;
    if let Some(g) = group_by {
        set.require(g)?;
    }
    if set.rows.iter().any(|r| matches!(r.get(y), Some(Cell::Str(_)) | Some(Cell::Bool(_)))) {
        return Err(QueryError::NotNumeric(y.into()));
    }
    let mut series: Vec<(Cell, Series)> = Vec::new();
    for row in &set.rows {
        let Some(yv) = row.get(y).and_then(Cell::as_f64) else { continue };
        let xv = row.get(x).cloned().unwrap_or(Cell::Missing);
        let key = group_by.map_or(Cell::Str("all".into()), |g| row.get(g).cloned().unwrap_or(Cell::Missing));
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, s)) => s.points.push((xv, yv)),
            None => {
                let label = key.render();
                series.push((
                    key,
                    Series {
                        label,
                        points: alloc::vec![(xv, yv)],
                    },
                ))
            }
        }
    }
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(series
        .into_iter()
        .map(|(_, mut s)| {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            s
        })
        .collect())
}

/// Running best (min for minimize, max for maximize).
pub fn best_so_far(values: &[f64], direction: Direction) -> Vec<f64> {
    let mut best: Option<f64> = None;
    values
        .iter()
        .map(|&v| {
            let b = match best {
                Some(b) if !direction.better(v, b) => b,
                _ => v,
            };
            best = Some(b);
            b
        })
        .collect()
}
