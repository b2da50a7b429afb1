//! Household and score CSV files.
//!
//! Household rows: `household_id,child_id,female,birth_order,educ_years,n_c,parent_educ`.
//! `female` is `0`/`1` (or `true`/`false`). Rows of a household need not be
//! contiguous; output groups follow the order of first appearance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ChildRecord, HouseholdRecord};
use crate::error::{Error, Result};
use crate::model::ParentEduc;

const COLUMNS: [&str; 7] = [
    "household_id",
    "child_id",
    "female",
    "birth_order",
    "educ_years",
    "n_c",
    "parent_educ",
];

fn data_err(line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

struct Pending {
    record: HouseholdRecord,
    n_c: usize,
    first_line: usize,
}

/// Parse and validate a household CSV. `q_max` bounds `educ_years`.
pub fn read_population<R: Read>(reader: R, q_max: f64) -> Result<Vec<HouseholdRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 7];
    for (k, name) in COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| data_err(1, format!("missing column `{name}`")))?;
    }

    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Pending> = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let parse_u64 = |k: usize| -> Result<u64> {
            field(k)
                .parse::<u64>()
                .map_err(|_| data_err(line, format!("`{}` is not a nonnegative integer: `{}`", COLUMNS[k], field(k))))
        };
        let household_id = parse_u64(0)?;
        let child_id = parse_u64(1)?;
        let female = parse_bool(field(2)).ok_or_else(|| data_err(line, format!("`female` must be 0 or 1, got `{}`", field(2))))?;
        let birth_order = parse_u64(3)? as u32;
        if birth_order == 0 {
            return Err(data_err(line, "`birth_order` starts at 1"));
        }
        let educ_years: f64 = field(4)
            .parse()
            .map_err(|_| data_err(line, format!("`educ_years` is not a number: `{}`", field(4))))?;
        if !(0.0..=q_max).contains(&educ_years) {
            return Err(data_err(line, format!("`educ_years` = {educ_years} is outside [0, {q_max}]")));
        }
        let n_c = parse_u64(5)? as usize;
        let parent_educ: ParentEduc = field(6).parse().map_err(|e: Error| data_err(line, e.to_string()))?;

        let entry = groups.entry(household_id).or_insert_with(|| {
            order.push(household_id);
            Pending {
                record: HouseholdRecord {
                    household_id,
                    parent_educ,
                    children: Vec::new(),
                },
                n_c,
                first_line: line,
            }
        });
        if entry.n_c != n_c || entry.record.parent_educ != parent_educ {
            return Err(data_err(line, format!("household {household_id}: `n_c` or `parent_educ` differs from line {}", entry.first_line)));
        }
        if entry.record.children.iter().any(|c| c.birth_order == birth_order) {
            return Err(Error::Household {
                household_id,
                message: format!("duplicate birth_order {birth_order} (line {line})"),
            });
        }
        entry.record.children.push(ChildRecord {
            child_id,
            female,
            birth_order,
            educ_years,
        });
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut p = groups.remove(&id).expect("every ordered id has a group");
        p.record.children.sort_by_key(|c| c.birth_order);
        let n = p.record.children.len();
        if n != p.n_c {
            return Err(Error::Household {
                household_id: id,
                message: format!("n_c = {} but {n} children listed", p.n_c),
            });
        }
        if p.record.children.iter().enumerate().any(|(i, c)| c.birth_order != i as u32 + 1) {
            return Err(Error::Household {
                household_id: id,
                message: "birth orders must be 1..n_c".into(),
            });
        }
        out.push(p.record);
    }
    Ok(out)
}

pub fn load_population(path: impl AsRef<Path>, q_max: f64) -> Result<Vec<HouseholdRecord>> {
    read_population(File::open(path)?, q_max)
}

pub fn write_population<W: Write>(writer: W, households: &[HouseholdRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for h in households {
        let n_c = h.n_children().to_string();
        for c in &h.children {
            w.write_record([
                h.household_id.to_string(),
                c.child_id.to_string(),
                (c.female as u8).to_string(),
                c.birth_order.to_string(),
                c.educ_years.to_string(),
                n_c.clone(),
                h.parent_educ.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Relative scores from a CSV with a `score` column, each in (0, 1).
pub fn read_scores<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| data_err(1, "missing column `score`"))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let s = rec.get(col).unwrap_or("");
        let x: f64 = s.parse().map_err(|_| data_err(line, format!("`score` is not a number: `{s}`")))?;
        if !(x > 0.0 && x < 1.0) {
            return Err(data_err(line, format!("score {x} is outside (0, 1); clip before fitting")));
        }
        out.push(x);
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_scores(File::open(path)?)
}

pub fn write_scores<W: Write>(writer: W, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["score"])?;
    for s in scores {
        w.write_record([s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
