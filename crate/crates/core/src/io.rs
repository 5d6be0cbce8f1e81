//! Scenario files (TOML), trajectory tables (CSV) and metrics documents (JSON).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::frames::Vec3;
use crate::metrics::RunMetrics;
use crate::scenario::{builtin, Scenario, TrajectoryLog, TrajectoryRecord, BUILTIN_NAMES};
use crate::{Error, Result};

/// Column order of the trajectory table.
pub const TRAJECTORY_COLUMNS: [&str; 33] = [
    "t",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "roll",
    "pitch",
    "yaw",
    "tx",
    "ty",
    "tz",
    "cmdx",
    "cmdy",
    "cmdz",
    "term_att_px",
    "term_att_py",
    "term_att_pz",
    "term_rep_px",
    "term_rep_py",
    "term_rep_pz",
    "term_att_vx",
    "term_att_vy",
    "term_att_vz",
    "term_rep_vx",
    "term_rep_vy",
    "term_rep_vz",
    "term_closex",
    "term_closey",
    "term_closez",
    "gates",
    "sat",
];

const SECTIONS: [&str; 8] = [
    "sim",
    "start",
    "flags",
    "plant",
    "params",
    "gains",
    "target",
    "obstacles",
];

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A validated scenario plus a note for every value that was not written in
/// the source file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub provenance: Vec<String>,
}

fn scenario_table(s: &Scenario) -> Table {
    let text = toml::to_string(s).expect("scenario serialises to TOML");
    text.parse::<Table>().expect("serialised scenario parses")
}

/// Recursively overlays `over` onto `base`. Arrays and scalars replace.
pub fn merge_tables(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

/// Applies one `section.key=value` override to a scenario table.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override `{spec}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidArgument(format!("override `{spec}` has an empty key")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("override `{spec}`: `{k}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn unknown_builtin(name: &str) -> Error {
    Error::InvalidArgument(format!(
        "unknown builtin `{name}`; available: {}",
        BUILTIN_NAMES.join(", ")
    ))
}

/// Builds a scenario from TOML text. A `builtin = "<name>"` key selects a base
/// scenario that the rest of the document and then `overrides` modify.
pub fn scenario_from_str(text: &str, overrides: &[String]) -> Result<LoadedScenario> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut provenance = Vec::new();
    let mut table = match doc.remove("builtin") {
        Some(Value::String(name)) => {
            let base = builtin(&name).ok_or_else(|| unknown_builtin(&name))?;
            provenance.push(format!("base: builtin `{name}`"));
            scenario_table(&base)
        }
        Some(_) => return Err(Error::validation("builtin", "must be a string")),
        None => Table::new(),
    };
    let written: Vec<String> = doc.keys().cloned().collect();
    merge_tables(&mut table, doc);
    for o in overrides {
        apply_override(&mut table, o)?;
        provenance.push(format!("override: {o}"));
    }
    let scenario: Scenario = Table::try_into(table).map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    scenario.validate()?;
    for section in SECTIONS {
        if !written.iter().any(|w| w == section) && !overrides.iter().any(|o| o.starts_with(&format!("{section}."))) {
            let from = if provenance.first().is_some_and(|p| p.starts_with("base")) {
                "builtin"
            } else {
                "default"
            };
            provenance.push(format!("{from}: {section}"));
        }
    }
    Ok(LoadedScenario { scenario, provenance })
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    load_scenario_with(path, &[])
}

pub fn load_scenario_with(path: &Path, overrides: &[String]) -> Result<LoadedScenario> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    scenario_from_str(&text, overrides).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Resolves a builtin name or a scenario file path.
pub fn resolve_scenario(source: &str, overrides: &[String]) -> Result<LoadedScenario> {
    if builtin(source).is_some() {
        return scenario_from_str(&format!("builtin = {source:?}"), overrides);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(unknown_builtin(source));
    }
    load_scenario_with(path, overrides)
}

pub fn scenario_to_string(s: &Scenario) -> Result<String> {
    toml::to_string(s).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    fs::write(path, scenario_to_string(s)?).map_err(|e| io_err(path, e))
}

/// One parsed line of the trajectory table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub values: [f64; 31],
    pub gates: u8,
    pub sat: bool,
}

impl TrajectoryRow {
    pub fn from_record(r: &TrajectoryRecord) -> Self {
        let s = &r.state;
        let mut values = [0.0; 31];
        values[0] = r.t;
        let vecs: [&Vec3; 3] = [&s.p, &s.v, &Vec3::new(s.att.roll, s.att.pitch, s.att.yaw)];
        let tail: [&Vec3; 7] = [
            &r.target,
            &r.cmd_earth,
            &r.terms.att_p,
            &r.terms.rep_p,
            &r.terms.att_v,
            &r.terms.rep_v,
            &r.terms.close,
        ];
        for (i, v) in vecs.iter().chain(tail.iter()).enumerate() {
            values[1 + 3 * i..4 + 3 * i].copy_from_slice(v.as_slice());
        }
        TrajectoryRow {
            values,
            gates: r.gates(),
            sat: r.saturated,
        }
    }
}

pub fn write_trajectory_to<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(TRAJECTORY_COLUMNS).map_err(csv_err)?;
    for (i, r) in log.records.iter().enumerate() {
        let row = TrajectoryRow::from_record(r);
        if let Some(j) = row.values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record {i}: column `{}` is not finite",
                TRAJECTORY_COLUMNS[j]
            )));
        }
        let mut fields: Vec<String> = row.values.iter().map(|x| format!("{x:.11e}")).collect();
        fields.push(row.gates.to_string());
        fields.push(u8::from(row.sat).to_string());
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_trajectory(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_trajectory_to(log, std::io::BufWriter::new(f)).map_err(|e| match e {
        Error::Parse(msg) => io_err(path, std::io::Error::other(msg)),
        other => other,
    })
}

pub fn read_trajectory_from<R: Read>(input: R) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if !header.iter().eq(TRAJECTORY_COLUMNS.iter().copied()) {
        return Err(Error::Parse("unexpected trajectory header".to_string()));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let bad = |col: usize| Error::Parse(format!("row {}: bad value in `{}`", line + 1, TRAJECTORY_COLUMNS[col]));
        let mut values = [0.0; 31];
        for (j, v) in values.iter_mut().enumerate() {
            *v = rec[j].parse().map_err(|_| bad(j))?;
        }
        let gates = rec[31].parse().map_err(|_| bad(31))?;
        let sat = match &rec[32] {
            "0" => false,
            "1" => true,
            _ => return Err(bad(32)),
        };
        rows.push(TrajectoryRow { values, gates, sat });
    }
    Ok(rows)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_trajectory_from(std::io::BufReader::new(f))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn metrics_to_string(m: &RunMetrics) -> Result<String> {
    if let Some(field) = m.non_finite_field() {
        return Err(Error::InvalidArgument(format!("metrics field `{field}` is not finite")));
    }
    to_json(m)
}

pub fn write_metrics(m: &RunMetrics, path: &Path) -> Result<()> {
    fs::write(path, metrics_to_string(m)?).map_err(|e| io_err(path, e))
}

pub fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes any serialisable document as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(value)?).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
