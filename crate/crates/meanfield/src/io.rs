//! Schema-versioned file formats: cost matrices and trajectory/path
//! tables as CSV, catalogs and reports as JSON.
//!
//! Every CSV file opens with a `# schema: <name>` line ahead of the
//! column header, and every JSON file is an `{"schema", "data"}`
//! envelope. Readers check the schema before parsing, so a file is
//! never silently interpreted as the wrong kind of table. Writers print
//! floats in shortest round-trip form; plain tables read back bit-exact,
//! while measure columns pass through simplex re-validation, which may
//! renormalize entries by one ulp.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::action::PathGrid;
use crate::error::{Error, Result};
use crate::fw::CostMatrix;
use crate::model::{BlockModel, Category, EmpiricalVector};
use crate::num::Cost;
use crate::sim::Event;

pub const COST_MATRIX_SCHEMA: &str = "meanfield-cost-matrix/1";
pub const PATH_SCHEMA: &str = "meanfield-path/1";
pub const EVENTS_SCHEMA: &str = "meanfield-events/1";
pub const REPLICAS_SCHEMA: &str = "meanfield-replicas/1";
pub const RATES_SCHEMA: &str = "meanfield-rates/1";
pub const CATALOG_SCHEMA: &str = "meanfield-catalog/1";
pub const GRAPH_SCHEMA: &str = "meanfield-graph-report/1";
pub const CYCLES_SCHEMA: &str = "meanfield-cycles-report/1";
pub const ACTION_SCHEMA: &str = "meanfield-action-report/1";
pub const QPOT_SCHEMA: &str = "meanfield-qpot-report/1";
pub const EXPERIMENT_SCHEMA: &str = "meanfield-experiment-report/1";

fn schema_line(schema: &str) -> String {
    format!("# schema: {schema}\n")
}

/// Splits off and checks the schema line, returning the CSV body.
fn strip_schema<'a>(content: &'a str, expected: &str, path: &Path) -> Result<&'a str> {
    let (first, rest) = content.split_once('\n').unwrap_or((content, ""));
    match first.trim().strip_prefix("# schema:").map(str::trim) {
        Some(found) if found == expected => Ok(rest),
        Some(found) => Err(Error::InvalidInput(format!(
            "{} holds schema `{found}`, expected `{expected}`",
            path.display()
        ))),
        None => Err(Error::InvalidInput(format!(
            "{} has no `# schema:` header line",
            path.display()
        ))),
    }
}

fn finish_csv(path: &Path, schema: &str, writer: csv::Writer<Vec<u8>>) -> Result<()> {
    let body = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer error: {e}")))?;
    let mut out = schema_line(schema).into_bytes();
    out.extend_from_slice(&body);
    fs::write(path, out)?;
    Ok(())
}

fn cost_token(c: Cost) -> String {
    match c {
        Cost::Finite(v) => v.to_string(),
        Cost::Infinite => "inf".to_string(),
    }
}

fn parse_cost(token: &str, path: &Path) -> Result<Cost> {
    let token = token.trim();
    if token.eq_ignore_ascii_case("inf") {
        return Ok(Cost::Infinite);
    }
    token
        .parse::<f64>()
        .map(Cost::Finite)
        .map_err(|_| Error::InvalidInput(format!("{}: bad cost token `{token}`", path.display())))
}

fn parse_f64(token: &str, path: &Path) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| {
        Error::InvalidInput(format!("{}: bad numeric token `{token}`", path.display()))
    })
}

/// Column names for the flat measure layout: block, then category, then
/// color, matching `EmpiricalVector::data()`.
pub fn measure_headers(model: &BlockModel) -> Vec<String> {
    let k = model.colors();
    let mut out = Vec::with_capacity(model.blocks().len() * 2 * k);
    for j in 0..model.blocks().len() {
        for cat in Category::ALL {
            for z in 0..k {
                out.push(format!("mu_b{j}_{}_{z}", cat.label()));
            }
        }
    }
    out
}

/// Column names for the flat rate-channel layout, one per
/// (block, category, edge).
pub fn channel_headers(model: &BlockModel) -> Vec<String> {
    (0..model.channel_count())
        .map(|ch| {
            let (block, cat, edge) = model.channel_decode(ch);
            let (from, to) = model.graph().edges()[edge];
            format!("l_b{block}_{}_{from}to{to}", cat.label())
        })
        .collect()
}

fn check_headers(found: &csv::StringRecord, expected: &[String], path: &Path) -> Result<()> {
    let found: Vec<&str> = found.iter().collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::InvalidInput(format!(
            "{}: column header does not match the model \
             (expected {} columns starting `{}`, found {} starting `{}`)",
            path.display(),
            expected.len(),
            expected.first().map(String::as_str).unwrap_or(""),
            found.len(),
            found.first().copied().unwrap_or("")
        )));
    }
    Ok(())
}

/// Writes a square cost matrix; `inf` marks impossible connections.
pub fn write_cost_matrix(path: &Path, matrix: &CostMatrix) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for i in 0..matrix.len() {
        let row: Vec<String> = matrix.row(i).iter().map(|&c| cost_token(c)).collect();
        writer.write_record(&row)?;
    }
    finish_csv(path, COST_MATRIX_SCHEMA, writer)
}

pub fn read_cost_matrix(path: &Path) -> Result<CostMatrix> {
    let content = fs::read_to_string(path)?;
    let body = strip_schema(&content, COST_MATRIX_SCHEMA, path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<Cost> =
            record.iter().map(|tok| parse_cost(tok, path)).collect::<Result<_>>()?;
        rows.push(row);
    }
    CostMatrix::new(rows)
}

/// Writes a measure path: a `time` column plus one column per flat
/// measure entry. The same format serves ODE solutions and action paths.
pub fn write_path_grid(path: &Path, model: &BlockModel, grid: &PathGrid) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["time".to_string()];
    headers.extend(measure_headers(model));
    writer.write_record(&headers)?;
    for (t, knot) in grid.times().iter().zip(grid.knots()) {
        let mut row = vec![t.to_string()];
        row.extend(knot.data().iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    finish_csv(path, PATH_SCHEMA, writer)
}

pub fn read_path_grid(path: &Path, model: &BlockModel) -> Result<PathGrid> {
    let content = fs::read_to_string(path)?;
    let body = strip_schema(&content, PATH_SCHEMA, path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut expected = vec!["time".to_string()];
    expected.extend(measure_headers(model));
    check_headers(reader.headers()?, &expected, path)?;
    let (r, k) = (model.blocks().len(), model.colors());
    let mut times = Vec::new();
    let mut knots = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut fields = record.iter();
        let t = parse_f64(fields.next().unwrap_or(""), path)?;
        let data: Vec<f64> = fields.map(|tok| parse_f64(tok, path)).collect::<Result<_>>()?;
        times.push(t);
        knots.push(EmpiricalVector::new(r, k, data)?);
    }
    PathGrid::new(times, knots)
}

/// Writes a jump-event table: time, block, category, from, to.
pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["time", "block", "category", "from", "to"])?;
    for e in events {
        writer.write_record([
            e.time.to_string(),
            e.block.to_string(),
            e.category.label().to_string(),
            e.from.to_string(),
            e.to.to_string(),
        ])?;
    }
    finish_csv(path, EVENTS_SCHEMA, writer)
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let content = fs::read_to_string(path)?;
    let body = strip_schema(&content, EVENTS_SCHEMA, path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let expected: Vec<String> =
        ["time", "block", "category", "from", "to"].iter().map(|s| s.to_string()).collect();
    check_headers(reader.headers()?, &expected, path)?;
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::InvalidInput(format!(
                "{}: event row has {} fields, expected 5",
                path.display(),
                record.len()
            )));
        }
        let category = match record[2].trim() {
            "central" => Category::Central,
            "peripheral" => Category::Peripheral,
            other => {
                return Err(Error::InvalidInput(format!(
                    "{}: bad category `{other}`",
                    path.display()
                )))
            }
        };
        events.push(Event {
            time: parse_f64(&record[0], path)?,
            block: parse_f64(&record[1], path)? as usize,
            category,
            from: parse_f64(&record[3], path)? as usize,
            to: parse_f64(&record[4], path)? as usize,
        });
    }
    Ok(events)
}

/// Writes one terminal empirical vector per replica.
pub fn write_replica_summary(
    path: &Path,
    model: &BlockModel,
    rows: &[(u64, EmpiricalVector)],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["replica".to_string()];
    headers.extend(measure_headers(model));
    writer.write_record(&headers)?;
    for (replica, terminal) in rows {
        let mut row = vec![replica.to_string()];
        row.extend(terminal.data().iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    finish_csv(path, REPLICAS_SCHEMA, writer)
}

pub fn read_replica_summary(
    path: &Path,
    model: &BlockModel,
) -> Result<Vec<(u64, EmpiricalVector)>> {
    let content = fs::read_to_string(path)?;
    let body = strip_schema(&content, REPLICAS_SCHEMA, path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut expected = vec!["replica".to_string()];
    expected.extend(measure_headers(model));
    check_headers(reader.headers()?, &expected, path)?;
    let (r, k) = (model.blocks().len(), model.colors());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut fields = record.iter();
        let replica = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::InvalidInput(format!("{}: bad replica id", path.display())))?;
        let data: Vec<f64> = fields.map(|tok| parse_f64(tok, path)).collect::<Result<_>>()?;
        rows.push((replica, EmpiricalVector::new(r, k, data)?));
    }
    Ok(rows)
}

/// Writes per-segment rate rows, one column per flat channel.
pub fn write_rate_rows(path: &Path, model: &BlockModel, rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut headers = vec!["segment".to_string()];
    headers.extend(channel_headers(model));
    writer.write_record(&headers)?;
    for (segment, rates) in rows.iter().enumerate() {
        if rates.len() != model.channel_count() {
            return Err(Error::ShapeMismatch(format!(
                "rate row {segment} has {} entries, expected {}",
                rates.len(),
                model.channel_count()
            )));
        }
        let mut row = vec![segment.to_string()];
        row.extend(rates.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    finish_csv(path, RATES_SCHEMA, writer)
}

pub fn read_rate_rows(path: &Path, model: &BlockModel) -> Result<Vec<Vec<f64>>> {
    let content = fs::read_to_string(path)?;
    let body = strip_schema(&content, RATES_SCHEMA, path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut expected = vec!["segment".to_string()];
    expected.extend(channel_headers(model));
    check_headers(reader.headers()?, &expected, path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let data: Vec<f64> =
            record.iter().skip(1).map(|tok| parse_f64(tok, path)).collect::<Result<_>>()?;
        rows.push(data);
    }
    Ok(rows)
}

/// Writes any serializable value inside a `{"schema", "data"}` envelope.
pub fn write_json<T: Serialize>(path: &Path, schema: &str, data: &T) -> Result<()> {
    let envelope = serde_json::json!({ "schema": schema, "data": data });
    let mut body = serde_json::to_string_pretty(&envelope)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

/// Reads a JSON envelope, verifying its schema before decoding `data`.
pub fn read_json<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let content = fs::read_to_string(path)?;
    let envelope: serde_json::Value = serde_json::from_str(&content)?;
    let found = envelope.get("schema").and_then(|v| v.as_str()).ok_or_else(|| {
        Error::InvalidInput(format!("{} has no `schema` field", path.display()))
    })?;
    if found != schema {
        return Err(Error::InvalidInput(format!(
            "{} holds schema `{found}`, expected `{schema}`",
            path.display()
        )));
    }
    let data = envelope
        .get("data")
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no `data` field", path.display())))?;
    Ok(serde_json::from_value(data)?)
}
