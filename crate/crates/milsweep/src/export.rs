//! `results.csv`: one row per trial, header of column names.
//!
//! Columns, in order: `trial_id, study, seed, state, value, steps`, then every
//! space parameter sorted by name, then `cache:<stage set>` booleans. Inactive
//! conditional parameters hold `__inactive__`; a missing value is an empty
//! field. Reals use the shortest representation that parses back to the same
//! number.

use std::fs;
use std::path::Path;

use milsweep_core::results::{Cell, ResultRow, ResultSet};
use milsweep_core::trial::StudyState;
use milsweep_core::Direction;

use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";

pub fn result_set(state: &StudyState) -> Result<ResultSet> {
    let meta = state.meta.as_ref().ok_or_else(|| Error::MissingHeader("<journal>".into()))?;
    Ok(ResultSet::from_trials(meta, state.trials.values()))
}

pub fn to_csv_bytes(set: &ResultSet) -> Result<Vec<u8>> {
    let csv_err = |source| Error::Csv {
        path: "<memory>".into(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&set.columns).map_err(csv_err)?;
    for row in &set.rows {
        w.write_record(
            set.columns
                .iter()
                .map(|c| row.get(c).map_or_else(String::new, Cell::render)),
        )
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| csv_err(e.into_error().into()))
}

/// Writes atomically (temporary file, then rename).
pub fn export_csv(set: &ResultSet, path: &Path) -> Result<()> {
    let bytes = to_csv_bytes(set)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(dir))?;
    fs::write(tmp.path(), &bytes).map_err(Error::io(tmp.path()))?;
    tmp.persist(path).map_err(|e| Error::io(path)(e.error))?;
    Ok(())
}

pub fn import_csv(path: &Path, direction: Direction) -> Result<ResultSet> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let columns: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let cells = columns
            .iter()
            .zip(record.iter())
            .map(|(c, v)| (c.clone(), Cell::parse(v)))
            .collect();
        rows.push(ResultRow { cells });
    }
    Ok(ResultSet {
        columns,
        rows,
        direction,
    })
}
