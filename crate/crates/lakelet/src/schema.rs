//! Schema-on-read: infer a schema from raw CSV/JSON-lines files at query time
//! and project raw bytes into typed rows.
//!
//! Dtypes form the total lattice `bool < int < float < string`; conflicting
//! observations widen along it, so adding rows can never narrow a column.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::Format;
use crate::error::{LakeError, Result};
use crate::store::{LakeStore, ObjectRef, Zone};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Bool,
    Int,
    Float,
    String,
}

impl Dtype {
    /// Least upper bound in the `bool < int < float < string` lattice.
    pub fn widen(self, other: Dtype) -> Dtype {
        self.max(other)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dtype::Bool => "bool",
            Dtype::Int => "int",
            Dtype::Float => "float",
            Dtype::String => "string",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    pub dtype: Dtype,
    pub nullable: bool,
}

/// Ordered field list inferred at read time. Field order is first-seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDescriptor {
    pub fields: Vec<FieldDescriptor>,
}

impl SchemaDescriptor {
    /// Header-names-only hint: every column string and nullable.
    pub fn from_header_names<S: AsRef<str>>(names: &[S]) -> Self {
        SchemaDescriptor {
            fields: names
                .iter()
                .map(|n| FieldDescriptor {
                    name: n.as_ref().to_string(),
                    dtype: Dtype::String,
                    nullable: true,
                })
                .collect(),
        }
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }
}

/// One cell of a projected row.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Rendering used by CSV output and the ASCII report tables.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::Str(s) => s.clone(),
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    Strict,
    Lenient,
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

#[derive(Default)]
struct ColumnObservation {
    dtype: Option<Dtype>,
    saw_null: bool,
    occurrences: u64,
}

struct SchemaBuilder {
    names: Vec<String>,
    columns: Vec<ColumnObservation>,
    records: u64,
}

impl SchemaBuilder {
    fn new() -> Self {
        SchemaBuilder {
            names: Vec::new(),
            columns: Vec::new(),
            records: 0,
        }
    }

    fn column(&mut self, name: &str) -> &mut ColumnObservation {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            &mut self.columns[i]
        } else {
            self.names.push(name.to_string());
            self.columns.push(ColumnObservation::default());
            self.columns.last_mut().unwrap()
        }
    }

    fn observe(&mut self, name: &str, dtype: Option<Dtype>) {
        let col = self.column(name);
        col.occurrences += 1;
        match dtype {
            Some(d) => col.dtype = Some(col.dtype.map_or(d, |prev| prev.widen(d))),
            None => col.saw_null = true,
        }
    }

    fn finish(self) -> SchemaDescriptor {
        let records = self.records;
        let fields = self
            .names
            .into_iter()
            .zip(self.columns)
            .map(|(name, col)| FieldDescriptor {
                name,
                dtype: col.dtype.unwrap_or(Dtype::String),
                nullable: col.saw_null || col.occurrences < records,
            })
            .collect();
        SchemaDescriptor { fields }
    }
}

/// Dtype of one CSV cell; `None` means null (empty cell).
fn classify_csv_cell(cell: &str) -> Option<Dtype> {
    if cell.is_empty() {
        return None;
    }
    if cell.eq_ignore_ascii_case("true") || cell.eq_ignore_ascii_case("false") {
        return Some(Dtype::Bool);
    }
    if cell.parse::<i64>().is_ok() {
        return Some(Dtype::Int);
    }
    if cell.parse::<f64>().is_ok() {
        return Some(Dtype::Float);
    }
    Some(Dtype::String)
}

/// Dtype of one JSON value; `None` means null. Nested structures stay
/// string-typed (no flattening below the top level).
fn classify_json_value(v: &serde_json::Value) -> Option<Dtype> {
    use serde_json::Value as J;
    match v {
        J::Null => None,
        J::Bool(_) => Some(Dtype::Bool),
        J::Number(n) => {
            if n.is_i64() {
                Some(Dtype::Int)
            } else {
                Some(Dtype::Float)
            }
        }
        J::String(_) => Some(Dtype::String),
        J::Array(_) | J::Object(_) => Some(Dtype::String),
    }
}

/// Infers a schema for a committed dataset by scanning up to `sample_rows`
/// records (all records when `None`). Deterministic for identical bytes.
pub fn infer_schema(
    store: &LakeStore,
    format: Format,
    dataset: &str,
    zone: Zone,
    sample_rows: Option<u64>,
    mode: ReadMode,
) -> Result<SchemaDescriptor> {
    let files = store.list_objects(dataset, zone, None)?;
    if files.is_empty() {
        return Err(LakeError::EmptyDataset(format!("{zone}/{dataset}")));
    }
    let mut builder = SchemaBuilder::new();
    let limit = sample_rows.unwrap_or(u64::MAX);

    'files: for file in &files {
        let bytes = store.read_object(file)?;
        match format {
            Format::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .flexible(true)
                    .from_reader(bytes.as_slice());
                let headers: Vec<String> = match reader.headers() {
                    Ok(h) => h.iter().map(|s| s.to_string()).collect(),
                    Err(e) => match mode {
                        ReadMode::Strict => {
                            return Err(LakeError::InferFailed(format!("{}: {e}", file.key)))
                        }
                        ReadMode::Lenient => continue 'files,
                    },
                };
                // Register columns even for data-less files so headers alone
                // still yield a field list.
                for h in &headers {
                    builder.column(h);
                }
                for record in reader.records() {
                    if builder.records >= limit {
                        break 'files;
                    }
                    let record = match record {
                        Ok(r) => r,
                        Err(e) => match mode {
                            ReadMode::Strict => {
                                return Err(LakeError::InferFailed(format!(
                                    "{}: {e}",
                                    file.key
                                )))
                            }
                            ReadMode::Lenient => continue,
                        },
                    };
                    builder.records += 1;
                    for (i, name) in headers.iter().enumerate() {
                        let dtype = record.get(i).and_then(classify_csv_cell);
                        builder.observe(name, dtype);
                    }
                }
            }
            Format::Jsonl => {
                let text = match std::str::from_utf8(&bytes) {
                    Ok(t) => t,
                    Err(e) => match mode {
                        ReadMode::Strict => {
                            return Err(LakeError::InferFailed(format!("{}: {e}", file.key)))
                        }
                        ReadMode::Lenient => continue 'files,
                    },
                };
                for line in text.lines() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if builder.records >= limit {
                        break 'files;
                    }
                    match serde_json::from_str::<serde_json::Value>(line) {
                        Ok(serde_json::Value::Object(map)) => {
                            builder.records += 1;
                            for (k, v) in &map {
                                builder.observe(k, classify_json_value(v));
                            }
                        }
                        Ok(_) | Err(_) => match mode {
                            ReadMode::Strict => {
                                return Err(LakeError::InferFailed(format!(
                                    "{}: line is not a JSON object",
                                    file.key
                                )))
                            }
                            ReadMode::Lenient => continue,
                        },
                    }
                }
            }
        }
    }

    if builder.records == 0 && builder.names.is_empty() {
        return Err(LakeError::EmptyDataset(format!("{zone}/{dataset}")));
    }
    Ok(builder.finish())
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

enum FileCursor {
    Csv {
        records: std::vec::IntoIter<std::result::Result<csv::StringRecord, csv::Error>>,
        /// schema index for each source column, when the name resolves
        header_map: Vec<Option<usize>>,
        header_len: usize,
    },
    Jsonl {
        lines: std::vec::IntoIter<String>,
    },
}

/// Streaming reader projecting raw records onto a schema. Lenient mode
/// coerces every failure to null and counts it; strict mode aborts on the
/// first violation.
pub struct RowReader {
    schema: SchemaDescriptor,
    format: Format,
    mode: ReadMode,
    files: std::vec::IntoIter<(ObjectRef, Vec<u8>)>,
    current: Option<(String, FileCursor)>,
    line: u64,
    malformed: u64,
    rows: u64,
}

pub fn open_reader(
    store: &LakeStore,
    format: Format,
    dataset: &str,
    zone: Zone,
    schema: &SchemaDescriptor,
    mode: ReadMode,
) -> Result<RowReader> {
    let refs = store.list_objects(dataset, zone, None)?;
    let mut files = Vec::with_capacity(refs.len());
    for r in refs {
        let bytes = store.read_object(&r)?;
        files.push((r, bytes));
    }
    Ok(RowReader {
        schema: schema.clone(),
        format,
        mode,
        files: files.into_iter(),
        current: None,
        line: 0,
        malformed: 0,
        rows: 0,
    })
}

impl RowReader {
    /// Count of cells (or whole records) coerced to null in lenient mode.
    pub fn malformed_count(&self) -> u64 {
        self.malformed
    }

    pub fn rows_read(&self) -> u64 {
        self.rows
    }

    pub fn schema(&self) -> &SchemaDescriptor {
        &self.schema
    }

    fn advance_file(&mut self) -> Result<bool> {
        let Some((r, bytes)) = self.files.next() else {
            return Ok(false);
        };
        let name = r.key.to_string();
        let cursor = match self.format {
            Format::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .flexible(matches!(self.mode, ReadMode::Lenient))
                    .from_reader(bytes.as_slice());
                let headers: Vec<String> = reader
                    .headers()
                    .map_err(|e| self.abort(&name, 0, &e.to_string()))?
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                let header_map = headers
                    .iter()
                    .map(|h| self.schema.field_index(h))
                    .collect();
                FileCursor::Csv {
                    records: reader.into_records().collect::<Vec<_>>().into_iter(),
                    header_map,
                    header_len: headers.len(),
                }
            }
            Format::Jsonl => {
                let text = String::from_utf8_lossy(&bytes).into_owned();
                FileCursor::Jsonl {
                    lines: text
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| l.to_string())
                        .collect::<Vec<_>>()
                        .into_iter(),
                }
            }
        };
        self.current = Some((name, cursor));
        self.line = 0;
        Ok(true)
    }

    fn abort(&self, file: &str, line: u64, reason: &str) -> LakeError {
        LakeError::ReadAborted {
            file: file.to_string(),
            line,
            reason: reason.to_string(),
        }
    }

    /// Next projected row; `Ok(None)` at end of the dataset.
    pub fn next_row(&mut self) -> Result<Option<Row>> {
        loop {
            if self.current.is_none() && !self.advance_file()? {
                return Ok(None);
            }
            let raw = {
                let (_, cursor) = self.current.as_mut().unwrap();
                match cursor {
                    FileCursor::Csv { records, .. } => match records.next() {
                        Some(r) => RawRecord::Csv(r),
                        None => RawRecord::FileDone,
                    },
                    FileCursor::Jsonl { lines } => match lines.next() {
                        Some(l) => RawRecord::Line(l),
                        None => RawRecord::FileDone,
                    },
                }
            };
            if matches!(raw, RawRecord::FileDone) {
                self.current = None;
                continue;
            }
            self.line += 1;
            let file = self.current.as_ref().unwrap().0.clone();

            let (row, violations) = match raw {
                RawRecord::Csv(Err(e)) => {
                    (vec![Value::Null; self.schema.fields.len()], vec![e.to_string()])
                }
                RawRecord::Csv(Ok(record)) => {
                    let FileCursor::Csv {
                        header_map,
                        header_len,
                        ..
                    } = &self.current.as_ref().unwrap().1
                    else {
                        unreachable!()
                    };
                    project_csv_record(&record, header_map, *header_len, &self.schema)
                }
                RawRecord::Line(line) => project_json_line(&line, &self.schema),
                RawRecord::FileDone => unreachable!(),
            };

            if !violations.is_empty() {
                match self.mode {
                    ReadMode::Strict => {
                        return Err(self.abort(&file, self.line, &violations[0]))
                    }
                    ReadMode::Lenient => self.malformed += violations.len() as u64,
                }
            }
            self.rows += 1;
            return Ok(Some(row));
        }
    }
}

enum RawRecord {
    Csv(std::result::Result<csv::StringRecord, csv::Error>),
    Line(String),
    FileDone,
}

fn project_csv_record(
    record: &csv::StringRecord,
    header_map: &[Option<usize>],
    header_len: usize,
    schema: &SchemaDescriptor,
) -> (Row, Vec<String>) {
    let mut row = vec![Value::Null; schema.fields.len()];
    let mut violations = Vec::new();
    for (i, cell) in record.iter().enumerate() {
        let Some(Some(field_idx)) = header_map.get(i).copied() else {
            continue;
        };
        match project_csv_cell(cell, schema.fields[field_idx].dtype) {
            Ok(v) => row[field_idx] = v,
            Err(reason) => violations.push(reason),
        }
    }
    if record.len() != header_len {
        violations.push("ragged row".to_string());
    }
    (row, violations)
}

fn project_json_line(line: &str, schema: &SchemaDescriptor) -> (Row, Vec<String>) {
    let mut row = vec![Value::Null; schema.fields.len()];
    let mut violations = Vec::new();
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(map)) => {
            for (idx, field) in schema.fields.iter().enumerate() {
                let Some(v) = map.get(&field.name) else {
                    continue;
                };
                match project_json_value(v, field.dtype) {
                    Ok(val) => row[idx] = val,
                    Err(reason) => violations.push(reason),
                }
            }
        }
        Ok(_) | Err(_) => violations.push("line is not a JSON object".to_string()),
    }
    (row, violations)
}

impl Iterator for RowReader {
    type Item = Result<Row>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row().transpose()
    }
}

fn project_csv_cell(cell: &str, dtype: Dtype) -> std::result::Result<Value, String> {
    if cell.is_empty() {
        return Ok(Value::Null);
    }
    match dtype {
        Dtype::Bool => {
            if cell.eq_ignore_ascii_case("true") {
                Ok(Value::Bool(true))
            } else if cell.eq_ignore_ascii_case("false") {
                Ok(Value::Bool(false))
            } else {
                Err(format!("{cell:?} is not a bool"))
            }
        }
        Dtype::Int => cell
            .parse::<i64>()
            .map(Value::Int)
            .map_err(|_| format!("{cell:?} is not an int")),
        Dtype::Float => cell
            .parse::<f64>()
            .map(Value::Float)
            .map_err(|_| format!("{cell:?} is not a float")),
        Dtype::String => Ok(Value::Str(cell.to_string())),
    }
}

fn project_json_value(
    v: &serde_json::Value,
    dtype: Dtype,
) -> std::result::Result<Value, String> {
    use serde_json::Value as J;
    match (v, dtype) {
        (J::Null, _) => Ok(Value::Null),
        (J::Bool(b), Dtype::Bool) => Ok(Value::Bool(*b)),
        (J::Number(n), Dtype::Int) => n
            .as_i64()
            .map(Value::Int)
            .ok_or_else(|| format!("{n} does not fit int")),
        (J::Number(n), Dtype::Float) => n
            .as_f64()
            .map(Value::Float)
            .ok_or_else(|| format!("{n} is not a float")),
        (J::String(s), Dtype::String) => Ok(Value::Str(s.clone())),
        (J::Bool(b), Dtype::String) => Ok(Value::Str(b.to_string())),
        (J::Number(n), Dtype::String) => Ok(Value::Str(n.to_string())),
        (other @ (J::Array(_) | J::Object(_)), Dtype::String) => {
            Ok(Value::Str(serde_json::to_string(other).unwrap_or_default()))
        }
        (other, want) => Err(format!("{other} does not conform to {want}")),
    }
}
