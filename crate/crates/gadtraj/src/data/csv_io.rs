//! Tabular CSV ingestion: one row per trajectory step, grouped by person.
//!
//! Header: `Person,Sequence step,XCoord,YCoord[,GAD-Label]`. A label applies
//! to the whole group and may be stated on any row of it. Datasets with more
//! than two coordinates declare their column names through `CsvSchema`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

use super::{GroupDataset, Trajectory, TrajectoryPoint};

pub const PERSON_COL: &str = "Person";
pub const STEP_COL: &str = "Sequence step";
pub const LABEL_COL: &str = "GAD-Label";

/// Names of the coordinate columns, in feature order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub coord_columns: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { coord_columns: vec!["XCoord".to_string(), "YCoord".to_string()] }
    }
}

impl CsvSchema {
    /// Two coordinates keep the paper names; higher dims add C3..C_V.
    pub fn with_dims(v: usize) -> Self {
        assert!(v >= 1);
        let mut cols = vec!["XCoord".to_string()];
        if v >= 2 {
            cols.push("YCoord".to_string());
        }
        for i in 3..=v {
            cols.push(format!("C{i}"));
        }
        CsvSchema { coord_columns: cols }
    }
}

struct RawGroup {
    rows: BTreeMap<usize, Vec<f64>>,
    label: Option<u8>,
    first_seen: usize,
}

pub fn load_tabular_csv(path: &Path, schema: &CsvSchema) -> Result<GroupDataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.to_string(), path: path.to_path_buf() })
    };
    let person_idx = col_index(PERSON_COL)?;
    let step_idx = col_index(STEP_COL)?;
    let coord_idx: Vec<usize> = schema
        .coord_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_, _>>()?;
    let label_idx = headers.iter().position(|h| h == LABEL_COL);

    let mut groups: BTreeMap<String, RawGroup> = BTreeMap::new();
    let mut order = 0usize;

    for (line, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1; data starts at line 2.
        let row_no = line + 2;
        let parse_num = |idx: usize, column: &str| -> Result<f64, DataError> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| DataError::Parse {
                row: row_no,
                column: column.to_string(),
                value: raw.to_string(),
            })
        };

        let person = record.get(person_idx).unwrap_or("").trim().to_string();
        let step_raw = record.get(step_idx).unwrap_or("").trim();
        let step: usize = step_raw.parse().map_err(|_| DataError::Parse {
            row: row_no,
            column: STEP_COL.to_string(),
            value: step_raw.to_string(),
        })?;
        let mut attrs = Vec::with_capacity(coord_idx.len());
        for (ci, name) in coord_idx.iter().zip(&schema.coord_columns) {
            attrs.push(parse_num(*ci, name)?);
        }

        let entry = groups.entry(person.clone()).or_insert_with(|| {
            order += 1;
            RawGroup { rows: BTreeMap::new(), label: None, first_seen: order }
        });
        if entry.rows.insert(step, attrs).is_some() {
            return Err(DataError::DuplicateStep { person, step });
        }

        if let Some(li) = label_idx {
            let raw = record.get(li).unwrap_or("").trim();
            if !raw.is_empty() {
                let label: u8 = raw.parse().map_err(|_| DataError::Parse {
                    row: row_no,
                    column: LABEL_COL.to_string(),
                    value: raw.to_string(),
                })?;
                match entry.label {
                    None => entry.label = Some(label),
                    Some(existing) if existing != label => {
                        return Err(DataError::ConflictingLabel { person, a: existing, b: label })
                    }
                    Some(_) => {}
                }
            }
        }
    }

    // Keep the file's first-appearance order for groups.
    let mut ordered: Vec<(String, RawGroup)> = groups.into_iter().collect();
    ordered.sort_by_key(|(_, g)| g.first_seen);

    let mut trajectories = Vec::with_capacity(ordered.len());
    for (person, group) in ordered {
        let steps: Vec<usize> = group.rows.keys().copied().collect();
        if steps.first() != Some(&0) {
            return Err(DataError::BadStepOrder { person });
        }
        let points: Vec<TrajectoryPoint> =
            group.rows.into_values().map(TrajectoryPoint::new).collect();
        trajectories.push(Trajectory::new(person, points, group.label)?);
    }
    Ok(GroupDataset::new(trajectories))
}

/// Write a dataset back out in the same tabular layout. Steps are emitted as
/// 0..len-1 in point order; the group label is stated on the first row.
pub fn save_tabular_csv(ds: &GroupDataset, path: &Path, schema: &CsvSchema) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    let has_labels = ds.trajectories.iter().any(|t| t.label.is_some());

    let mut header = vec![PERSON_COL.to_string(), STEP_COL.to_string()];
    header.extend(schema.coord_columns.iter().cloned());
    if has_labels {
        header.push(LABEL_COL.to_string());
    }
    writeln!(w, "{}", header.join(",")).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;

    for t in &ds.trajectories {
        for (step, p) in t.points.iter().enumerate() {
            let coords: Vec<String> = p.attributes.iter().map(|v| format!("{v}")).collect();
            let mut line = format!("{},{},{}", t.id, step, coords.join(","));
            if has_labels {
                line.push(',');
                if step == 0 {
                    if let Some(l) = t.label {
                        line.push_str(&l.to_string());
                    }
                }
            }
            writeln!(w, "{line}").map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        }
    }
    w.flush().map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}
