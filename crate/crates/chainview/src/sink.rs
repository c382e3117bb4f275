//! Pluggable record persistence: line-delimited JSON documents, RFC-4180
//! CSV, and a portable SQL script, standing in for a document store and a
//! relational database respectively.
//!
//! A sink is opened with a view schema, written record by record, and
//! closed. Output is deterministic: the same records produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::Error;
use crate::views::{ViewKind, ViewRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Hash,
    Date,
    Integer,
    Decimal,
    String,
    Hex,
    NestedList,
}

/// Ordered field names and semantic types for one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSchema {
    pub view: &'static str,
    pub fields: &'static [(&'static str, FieldType)],
}

impl ViewSchema {
    pub fn has_nested(&self) -> bool {
        self.fields.iter().any(|(_, t)| *t == FieldType::NestedList)
    }

    pub fn field_names(&self) -> Vec<&'static str> {
        self.fields.iter().map(|(n, _)| *n).collect()
    }
}

/// A single rendered field, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Hash(String),
    Date(NaiveDate),
    Int(i64),
    Dec(f64),
    Str(String),
    Hex(String),
    Nested(serde_json::Value),
}

impl FieldValue {
    fn to_plain_string(&self) -> String {
        match self {
            FieldValue::Hash(s) | FieldValue::Str(s) | FieldValue::Hex(s) => s.clone(),
            FieldValue::Date(d) => d.to_string(),
            FieldValue::Int(i) => i.to_string(),
            FieldValue::Dec(f) => f.to_string(),
            FieldValue::Nested(v) => v.to_string(),
        }
    }

    fn to_sql_literal(&self) -> String {
        fn quoted(s: &str) -> String {
            format!("'{}'", s.replace('\'', "''"))
        }
        match self {
            FieldValue::Int(i) => i.to_string(),
            FieldValue::Dec(f) => f.to_string(),
            FieldValue::Hash(s) | FieldValue::Str(s) | FieldValue::Hex(s) => quoted(s),
            FieldValue::Date(d) => quoted(&d.to_string()),
            FieldValue::Nested(v) => quoted(&v.to_string()),
        }
    }
}

pub trait RecordSink {
    fn open(&mut self, schema: &ViewSchema) -> Result<(), Error>;
    fn write(&mut self, record: &ViewRecord) -> Result<(), Error>;
    fn close(&mut self) -> Result<(), Error>;
    fn records_written(&self) -> u64;
}

enum SinkState {
    Created,
    Open(ViewSchema),
    Closed,
}

impl SinkState {
    fn schema(&self) -> Result<&ViewSchema, Error> {
        match self {
            SinkState::Open(schema) => Ok(schema),
            _ => Err(Error::SinkClosed),
        }
    }
}

fn check_kind(schema: &ViewSchema, record: &ViewRecord) -> Result<(), Error> {
    let got = record.kind().schema();
    if got.view != schema.view {
        return Err(Error::SchemaMismatch {
            expected: schema.view.to_string(),
            got: got.view.to_string(),
        });
    }
    Ok(())
}

/// One JSON object per line, UTF-8, LF line endings, keys in schema order.
pub struct DocumentSink {
    out: BufWriter<File>,
    state: SinkState,
    written: u64,
}

impl DocumentSink {
    pub fn create(path: impl AsRef<Path>) -> Result<DocumentSink, Error> {
        Ok(DocumentSink {
            out: BufWriter::new(File::create(path)?),
            state: SinkState::Created,
            written: 0,
        })
    }
}

impl RecordSink for DocumentSink {
    fn open(&mut self, schema: &ViewSchema) -> Result<(), Error> {
        self.state = SinkState::Open(*schema);
        Ok(())
    }

    fn write(&mut self, record: &ViewRecord) -> Result<(), Error> {
        check_kind(self.state.schema()?, record)?;
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<(), Error> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        self.state = SinkState::Closed;
        Ok(())
    }

    fn records_written(&self) -> u64 {
        self.written
    }
}

/// RFC-4180 CSV with a header row. Views with nested-list fields (the
/// basic view) are rejected.
pub struct CsvSink {
    out: Option<csv::Writer<BufWriter<File>>>,
    state: SinkState,
    written: u64,
}

impl CsvSink {
    pub fn create(path: impl AsRef<Path>) -> Result<CsvSink, Error> {
        Ok(CsvSink {
            out: Some(csv::Writer::from_writer(BufWriter::new(File::create(
                path,
            )?))),
            state: SinkState::Created,
            written: 0,
        })
    }
}

impl RecordSink for CsvSink {
    fn open(&mut self, schema: &ViewSchema) -> Result<(), Error> {
        if schema.has_nested() {
            return Err(Error::UnsupportedSchema {
                view: schema.view.to_string(),
                reason: "nested-list fields cannot be rendered as CSV columns".to_string(),
            });
        }
        let out = self.out.as_mut().ok_or(Error::SinkClosed)?;
        out.write_record(schema.field_names())
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.state = SinkState::Open(*schema);
        Ok(())
    }

    fn write(&mut self, record: &ViewRecord) -> Result<(), Error> {
        check_kind(self.state.schema()?, record)?;
        let out = self.out.as_mut().ok_or(Error::SinkClosed)?;
        let fields: Vec<String> = record
            .field_values()
            .iter()
            .map(FieldValue::to_plain_string)
            .collect();
        out.write_record(&fields)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.written += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<(), Error> {
        if let Some(out) = self.out.take() {
            let mut inner = out
                .into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            inner.flush()?;
            inner.get_ref().sync_all()?;
        }
        self.state = SinkState::Closed;
        Ok(())
    }

    fn records_written(&self) -> u64 {
        self.written
    }
}

/// Batch size for multi-row INSERT statements.
pub const SQL_INSERT_BATCH: usize = 500;

/// A portable SQL script: one CREATE TABLE named after the view, then
/// batched multi-row INSERTs. Loads into any standard SQL engine.
pub struct SqlSink {
    out: BufWriter<File>,
    state: SinkState,
    written: u64,
    pending: Vec<String>,
}

impl SqlSink {
    pub fn create(path: impl AsRef<Path>) -> Result<SqlSink, Error> {
        Ok(SqlSink {
            out: BufWriter::new(File::create(path)?),
            state: SinkState::Created,
            written: 0,
            pending: Vec::new(),
        })
    }

    fn column_type(field: FieldType) -> &'static str {
        match field {
            FieldType::Hash => "CHAR(64)",
            FieldType::Date => "DATE",
            FieldType::Integer => "BIGINT",
            FieldType::Decimal => "DECIMAL(16,8)",
            FieldType::String | FieldType::Hex | FieldType::NestedList => "TEXT",
        }
    }

    fn flush_batch(&mut self) -> Result<(), Error> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let schema = self.state.schema()?;
        writeln!(
            self.out,
            "INSERT INTO {} ({}) VALUES",
            schema.view,
            schema.field_names().join(", ")
        )?;
        let last = self.pending.len() - 1;
        for (i, row) in self.pending.iter().enumerate() {
            let terminator = if i == last { ";" } else { "," };
            writeln!(self.out, "({row}){terminator}")?;
        }
        self.pending.clear();
        Ok(())
    }
}

impl RecordSink for SqlSink {
    fn open(&mut self, schema: &ViewSchema) -> Result<(), Error> {
        let columns: Vec<String> = schema
            .fields
            .iter()
            .map(|(name, ty)| format!("  {name} {}", SqlSink::column_type(*ty)))
            .collect();
        writeln!(
            self.out,
            "CREATE TABLE {} (\n{}\n);",
            schema.view,
            columns.join(",\n")
        )?;
        self.state = SinkState::Open(*schema);
        Ok(())
    }

    fn write(&mut self, record: &ViewRecord) -> Result<(), Error> {
        check_kind(self.state.schema()?, record)?;
        let row = record
            .field_values()
            .iter()
            .map(FieldValue::to_sql_literal)
            .collect::<Vec<_>>()
            .join(", ");
        self.pending.push(row);
        self.written += 1;
        if self.pending.len() >= SQL_INSERT_BATCH {
            self.flush_batch()?;
        }
        Ok(())
    }

    fn close(&mut self) -> Result<(), Error> {
        self.flush_batch()?;
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        self.state = SinkState::Closed;
        Ok(())
    }

    fn records_written(&self) -> u64 {
        self.written
    }
}

/// Read records back from a document-sink file.
pub fn read_jsonl(path: impl AsRef<Path>, kind: ViewKind) -> Result<Vec<ViewRecord>, Error> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        records.push(
            ViewRecord::from_json(kind, &line)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?,
        );
    }
    Ok(records)
}

/// Read records back from a csv-sink file (flat views only).
pub fn read_csv(path: impl AsRef<Path>, kind: ViewKind) -> Result<Vec<ViewRecord>, Error> {
    let map_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut reader = csv::Reader::from_path(path).map_err(map_err)?;
    let records = match kind {
        ViewKind::Basic => {
            return Err(Error::UnsupportedSchema {
                view: "basic".to_string(),
                reason: "the basic view is not CSV-representable".to_string(),
            })
        }
        ViewKind::OpReturn => reader
            .deserialize()
            .map(|r| r.map(ViewRecord::OpReturn))
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_err)?,
        ViewKind::Rates => reader
            .deserialize()
            .map(|r| r.map(ViewRecord::Rates))
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_err)?,
        ViewKind::Fees => reader
            .deserialize()
            .map(|r| r.map(ViewRecord::Fees))
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_err)?,
        ViewKind::Tags => reader
            .deserialize()
            .map(|r| r.map(ViewRecord::Tags))
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_err)?,
    };
    Ok(records)
}
