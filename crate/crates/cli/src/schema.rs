//! Long-format CSV schema for MRT data.
//!
//! Required columns: `id, decision_point, available, treatment, rand_prob,
//! sub_outcome`. Any number of extra `mod_*` (moderator) and `ctl_*`
//! (control) columns may follow. Rows are sorted by `(id, decision_point)`
//! with consecutive decision points starting at 0; each individual must
//! carry exactly `delta` follow-up rows past their last decision point,
//! holding only sub-outcomes (`available = treatment = 0`,
//! `rand_prob = 0`, feature values ignored).
//!
//! The writer emits floats in shortest round-trip form, so an
//! ingest → emit → re-ingest cycle reproduces the dataset exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use excursion_core::data::{MrtDataset, Person};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const REQUIRED_COLUMNS: [&str; 6] = [
    "id",
    "decision_point",
    "available",
    "treatment",
    "rand_prob",
    "sub_outcome",
];

/// Where a model term comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    /// A `mod_*`/`ctl_*` column, by exact header name.
    Column(String),
    /// The 0-based decision-point index (`Day_t`-style moderators).
    DayIndex,
}

/// Transformations applicable to a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    /// Subtract the pooled mean over available decision points.
    Center,
}

/// One moderator or control term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub source: TermSource,
    #[serde(default)]
    pub transform: Transform,
}

impl Term {
    pub fn column(name: &str) -> Self {
        Term {
            source: TermSource::Column(name.into()),
            transform: Transform::Identity,
        }
    }

    pub fn day_index() -> Self {
        Term {
            source: TermSource::DayIndex,
            transform: Transform::Identity,
        }
    }

    fn name(&self) -> String {
        let base = match &self.source {
            TermSource::Column(c) => c.clone(),
            TermSource::DayIndex => "day_index".into(),
        };
        match self.transform {
            Transform::Identity => base,
            Transform::Center => format!("{base}_centered"),
        }
    }
}

/// A validated dataset plus the column names behind its feature tensors
/// (exclusive of the implicit leading intercept columns).
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedDataset {
    pub data: MrtDataset<f64>,
    pub moderator_names: Vec<String>,
    pub control_names: Vec<String>,
}

struct RawPerson {
    id: String,
    rows: Vec<RawRow>,
}

struct RawRow {
    line: usize,
    decision_point: u64,
    available: u8,
    treatment: u8,
    rand_prob: f64,
    sub_outcome: u8,
    features: Vec<f64>,
}

struct RawTable {
    feature_names: Vec<String>,
    persons: Vec<RawPerson>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {line}: {msg}"))
}

fn parse_table(path: &Path) -> CliResult<RawTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Data("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    for required in REQUIRED_COLUMNS {
        if !columns.contains(&required) {
            return Err(CliError::Data(format!(
                "missing required column `{required}`"
            )));
        }
    }
    let idx = |name: &str| columns.iter().position(|&c| c == name).unwrap();
    let id_col = idx("id");
    let dp_col = idx("decision_point");
    let av_col = idx("available");
    let tr_col = idx("treatment");
    let rp_col = idx("rand_prob");
    let so_col = idx("sub_outcome");
    let feature_cols: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("mod_") || c.starts_with("ctl_"))
        .map(|(i, _)| i)
        .collect();
    let feature_names: Vec<String> = feature_cols
        .iter()
        .map(|&i| columns[i].to_string())
        .collect();
    {
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name) {
                return Err(CliError::Data(format!("duplicate feature column `{name}`")));
            }
        }
    }

    let mut persons: Vec<RawPerson> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                line_no,
                format!("{} fields, expected {}", fields.len(), columns.len()),
            ));
        }
        let get_binary = |col: usize, name: &str| -> CliResult<u8> {
            match fields[col] {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(parse_err(
                    line_no,
                    format!("{name} must be 0/1, got `{other}`"),
                )),
            }
        };
        let id = fields[id_col].to_string();
        let decision_point: u64 = fields[dp_col]
            .parse()
            .map_err(|_| parse_err(line_no, "decision_point must be a nonnegative integer"))?;
        let rand_prob: f64 = fields[rp_col]
            .parse()
            .map_err(|_| parse_err(line_no, "rand_prob must be a real number"))?;
        let features: Vec<f64> = feature_cols
            .iter()
            .map(|&c| {
                fields[c].parse().map_err(|_| {
                    parse_err(line_no, format!("`{}` must be a real number", columns[c]))
                })
            })
            .collect::<CliResult<_>>()?;
        let row = RawRow {
            line: line_no,
            decision_point,
            available: get_binary(av_col, "available")?,
            treatment: get_binary(tr_col, "treatment")?,
            rand_prob,
            sub_outcome: get_binary(so_col, "sub_outcome")?,
            features,
        };
        match persons.last_mut() {
            Some(last) if last.id == id => {
                let expected = last.rows.len() as u64;
                if row.decision_point != expected {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "individual {id}: decision_point {} out of order (expected {expected})",
                            row.decision_point
                        ),
                    ));
                }
                last.rows.push(row);
            }
            _ => {
                if finished.contains(&id) {
                    return Err(parse_err(
                        line_no,
                        format!("rows for individual {id} are not contiguous"),
                    ));
                }
                if let Some(last) = persons.last() {
                    finished.insert(last.id.clone());
                }
                if row.decision_point != 0 {
                    return Err(parse_err(
                        line_no,
                        format!("individual {id} must start at decision_point 0"),
                    ));
                }
                persons.push(RawPerson {
                    id,
                    rows: vec![row],
                });
            }
        }
    }
    if persons.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    Ok(RawTable {
        feature_names,
        persons,
    })
}

/// Ingest a long-format CSV, materializing all `mod_*` columns as
/// moderators and all `ctl_*` columns as controls (in header order), each
/// tensor behind an implicit leading intercept column.
pub fn ingest_csv(path: &Path, delta: usize) -> CliResult<IngestedDataset> {
    let table = parse_table(path)?;
    let mods: Vec<Term> = table
        .feature_names
        .iter()
        .filter(|n| n.starts_with("mod_"))
        .map(|n| Term::column(n))
        .collect();
    let ctls: Vec<Term> = table
        .feature_names
        .iter()
        .filter(|n| n.starts_with("ctl_"))
        .map(|n| Term::column(n))
        .collect();
    build_dataset(table, delta, &mods, &ctls)
}

/// Ingest with explicit moderator/control term lists.
pub fn ingest_csv_with_terms(
    path: &Path,
    delta: usize,
    moderators: &[Term],
    controls: &[Term],
) -> CliResult<IngestedDataset> {
    let table = parse_table(path)?;
    build_dataset(table, delta, moderators, controls)
}

fn build_dataset(
    table: RawTable,
    delta: usize,
    moderators: &[Term],
    controls: &[Term],
) -> CliResult<IngestedDataset> {
    if delta == 0 {
        return Err(CliError::Config("delta must be a positive integer".into()));
    }
    let resolve = |term: &Term| -> CliResult<Option<usize>> {
        match &term.source {
            TermSource::DayIndex => Ok(None),
            TermSource::Column(name) => table
                .feature_names
                .iter()
                .position(|n| n == name)
                .map(Some)
                .ok_or_else(|| CliError::Config(format!("unknown feature column `{name}`"))),
        }
    };
    let mod_srcs: Vec<Option<usize>> = moderators.iter().map(resolve).collect::<CliResult<_>>()?;
    let ctl_srcs: Vec<Option<usize>> = controls.iter().map(resolve).collect::<CliResult<_>>()?;

    // raw value of a term at a trial row
    let raw_value = |src: &Option<usize>, row: &RawRow| -> f64 {
        match src {
            Some(col) => row.features[*col],
            None => row.decision_point as f64,
        }
    };
    // pooled means over available trial rows, for centering
    let mut means_mod = vec![0.0; moderators.len()];
    let mut means_ctl = vec![0.0; controls.len()];
    let mut avail_rows = 0.0;
    for person in &table.persons {
        let t_len = person.rows.len().saturating_sub(delta);
        for row in &person.rows[..t_len] {
            if row.available == 1 {
                avail_rows += 1.0;
                for (m, src) in means_mod.iter_mut().zip(&mod_srcs) {
                    *m += raw_value(src, row);
                }
                for (m, src) in means_ctl.iter_mut().zip(&ctl_srcs) {
                    *m += raw_value(src, row);
                }
            }
        }
    }
    if avail_rows > 0.0 {
        for m in means_mod.iter_mut().chain(means_ctl.iter_mut()) {
            *m /= avail_rows;
        }
    }
    let term_value = |term: &Term, src: &Option<usize>, row: &RawRow, mean: f64| -> f64 {
        let v = raw_value(src, row);
        match term.transform {
            Transform::Identity => v,
            Transform::Center => v - mean,
        }
    };

    let mut persons = Vec::with_capacity(table.persons.len());
    for person in &table.persons {
        if person.rows.len() <= delta {
            return Err(CliError::Data(format!(
                "individual {}: {} rows, but delta = {delta} requires at least {} (one decision point plus {delta} follow-up sub_outcome rows)",
                person.id,
                person.rows.len(),
                delta + 1
            )));
        }
        let t_len = person.rows.len() - delta;
        for row in &person.rows[t_len..] {
            if row.available != 0 || row.treatment != 0 {
                return Err(parse_err(
                    row.line,
                    format!(
                        "individual {}: follow-up rows must have available = treatment = 0",
                        person.id
                    ),
                ));
            }
            if row.rand_prob != 0.0 {
                return Err(parse_err(
                    row.line,
                    format!(
                        "individual {}: follow-up rows must have rand_prob = 0",
                        person.id
                    ),
                ));
            }
        }
        let trial = &person.rows[..t_len];
        let mut p = Person {
            availability: trial.iter().map(|r| r.available).collect(),
            treatment: trial.iter().map(|r| r.treatment).collect(),
            rand_prob: trial.iter().map(|r| r.rand_prob).collect(),
            sub_outcome: person.rows.iter().map(|r| r.sub_outcome).collect(),
            moderators: Vec::with_capacity(t_len * (1 + moderators.len())),
            controls: Vec::with_capacity(t_len * (1 + controls.len())),
        };
        for row in trial {
            p.moderators.push(1.0);
            for ((term, src), mean) in moderators.iter().zip(&mod_srcs).zip(&means_mod) {
                p.moderators.push(term_value(term, src, row, *mean));
            }
            p.controls.push(1.0);
            for ((term, src), mean) in controls.iter().zip(&ctl_srcs).zip(&means_ctl) {
                p.controls.push(term_value(term, src, row, *mean));
            }
        }
        persons.push(p);
    }
    let data = MrtDataset::new(persons, delta, 1 + moderators.len(), 1 + controls.len())?;
    Ok(IngestedDataset {
        data,
        moderator_names: moderators.iter().map(Term::name).collect(),
        control_names: controls.iter().map(Term::name).collect(),
    })
}

fn ensure_prefix(name: &str, prefix: &str) -> String {
    if name.starts_with("mod_") || name.starts_with("ctl_") {
        format!("{prefix}{}", &name[4..])
    } else {
        format!("{prefix}{name}")
    }
}

/// Format a float so that parsing it back recovers the exact value.
pub fn format_f64(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x}").unwrap();
    s
}

/// Canonical CSV serialization of an ingested dataset (the inverse of
/// [`ingest_csv`] for identity terms).
pub fn dataset_to_csv(ing: &IngestedDataset) -> String {
    let mut out = String::new();
    out.push_str("id,decision_point,available,treatment,rand_prob,sub_outcome");
    for name in &ing.moderator_names {
        out.push(',');
        out.push_str(&ensure_prefix(name, "mod_"));
    }
    for name in &ing.control_names {
        out.push(',');
        out.push_str(&ensure_prefix(name, "ctl_"));
    }
    out.push('\n');
    let delta = ing.data.delta();
    let n_mod = ing.data.n_moderators();
    let n_ctl = ing.data.n_controls();
    for i in 0..ing.data.n() {
        let person = ing.data.person(i);
        let t_len = person.t_len();
        for t in 0..t_len + delta {
            let trial = t < t_len;
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                i,
                t,
                if trial { person.availability[t] } else { 0 },
                if trial { person.treatment[t] } else { 0 },
                if trial {
                    format_f64(person.rand_prob[t])
                } else {
                    "0".into()
                },
                person.sub_outcome[t],
            ));
            for c in 1..n_mod {
                out.push(',');
                out.push_str(&if trial {
                    format_f64(ing.data.moderator_row(i, t)[c])
                } else {
                    "0".into()
                });
            }
            for c in 1..n_ctl {
                out.push(',');
                out.push_str(&if trial {
                    format_f64(ing.data.control_row(i, t)[c])
                } else {
                    "0".into()
                });
            }
            out.push('\n');
        }
    }
    out
}

/// Write the canonical CSV form atomically.
pub fn write_dataset_csv(ing: &IngestedDataset, path: &Path) -> CliResult<()> {
    crate::report::write_atomic(path, &dataset_to_csv(ing))
}
