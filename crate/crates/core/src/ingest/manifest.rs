// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Coast;

pub const CSV_HEADER: [&str; 7] = [
    "record_id",
    "image_path",
    "coast",
    "family",
    "genus",
    "species",
    "shell_class",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShellClass {
    Gastropod,
    Bivalve,
}

impl FromStr for ShellClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gastropod" => Ok(ShellClass::Gastropod),
            "bivalve" => Ok(ShellClass::Bivalve),
            other => Err(format!("`{other}` is not Gastropod or Bivalve")),
        }
    }
}

impl fmt::Display for ShellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShellClass::Gastropod => "Gastropod",
            ShellClass::Bivalve => "Bivalve",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub record_id: String,
    pub image_path: String,
    pub coast: Coast,
    pub family: String,
    pub genus: String,
    pub species: String,
    pub shell_class: ShellClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    Csv,
    Jsonl,
}

impl ManifestFormat {
    /// `.jsonl`/`.ndjson` are JSON lines, anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ManifestFormat::Jsonl,
            _ => ManifestFormat::Csv,
        }
    }
}

/// Validated dataset listing. Record ids are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            validate_record(r, &format!("record {}", i + 1))?;
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::DuplicateId {
                    context: format!("record {}", i + 1),
                    id: r.record_id.clone(),
                });
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.record_id.as_str(),
                r.image_path.as_str(),
                r.coast.as_str(),
                r.family.as_str(),
                r.genus.as_str(),
                r.species.as_str(),
                &r.shell_class.to_string(),
            ])?;
        }
        w.flush()
    }
}

fn validate_record(r: &ManifestRecord, context: &str) -> Result<()> {
    for (field, value) in [
        ("record_id", &r.record_id),
        ("family", &r.family),
        ("species", &r.species),
    ] {
        if value.trim().is_empty() {
            return Err(Error::MissingField {
                context: context.to_string(),
                field: field.to_string(),
            });
        }
    }
    Ok(())
}

/// Reads and validates a manifest file.
pub fn parse_manifest(path: &Path, format: ManifestFormat) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    match format {
        ManifestFormat::Csv => parse_csv(file, &source),
        ManifestFormat::Jsonl => parse_jsonl(BufReader::new(file), &source),
    }
}

/// Parses CSV manifest text. `source` names the input in error messages.
pub fn parse_csv<R: Read>(input: R, source: &str) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(source, 1, e))?
        .clone();
    let mut columns = [0usize; 7];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingField {
                context: format!("{source}:1 (header)"),
                field: name.to_string(),
            })?;
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_error(source, line, e))?;
        let ctx = format!("{source}:{line}");
        let field = |k: usize| -> Result<&str> {
            row.get(columns[k]).ok_or_else(|| Error::MissingField {
                context: ctx.clone(),
                field: CSV_HEADER[k].to_string(),
            })
        };
        records.push(build_record(
            [
                field(0)?,
                field(1)?,
                field(2)?,
                field(3)?,
                field(4)?,
                field(5)?,
                field(6)?,
            ],
            &ctx,
        )?);
    }
    finish(records, source, |i| i + 2)
}

/// Parses JSON-lines manifest text, one object per non-blank line.
pub fn parse_jsonl<R: BufRead>(input: R, source: &str) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = format!("{source}:{line_no}");
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::InvalidField {
                context: ctx.clone(),
                field: "line".into(),
                message: e.to_string(),
            })?;
        let mut fields = [""; 7];
        for (slot, name) in fields.iter_mut().zip(CSV_HEADER) {
            *slot = match value.get(name) {
                Some(serde_json::Value::String(s)) => s.as_str(),
                Some(_) => {
                    return Err(Error::InvalidField {
                        context: ctx,
                        field: name.to_string(),
                        message: "expected a string".into(),
                    })
                }
                None => {
                    return Err(Error::MissingField {
                        context: ctx,
                        field: name.to_string(),
                    })
                }
            };
        }
        records.push(build_record(fields, &ctx)?);
        lines.push(line_no);
    }
    finish(records, source, |i| lines[i])
}

fn build_record(f: [&str; 7], ctx: &str) -> Result<ManifestRecord> {
    let coast = f[2].parse::<Coast>().map_err(|_| Error::UnknownCoast {
        context: ctx.to_string(),
        value: f[2].to_string(),
    })?;
    let shell_class = f[6]
        .parse::<ShellClass>()
        .map_err(|message| Error::InvalidField {
            context: ctx.to_string(),
            field: "shell_class".into(),
            message,
        })?;
    let record = ManifestRecord {
        record_id: f[0].trim().to_string(),
        image_path: f[1].trim().to_string(),
        coast,
        family: f[3].trim().to_string(),
        genus: f[4].trim().to_string(),
        species: f[5].trim().to_string(),
        shell_class,
    };
    validate_record(&record, ctx)?;
    Ok(record)
}

fn finish(
    records: Vec<ManifestRecord>,
    source: &str,
    line_of: impl Fn(usize) -> usize,
) -> Result<DatasetManifest> {
    let mut seen = HashSet::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(r.record_id.as_str()) {
            return Err(Error::DuplicateId {
                context: format!("{source}:{}", line_of(i)),
                id: r.record_id.clone(),
            });
        }
    }
    Ok(DatasetManifest { records })
}

fn csv_error(source: &str, line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(source, io),
        csv::ErrorKind::UnequalLengths { .. } => Error::MissingField {
            context: format!("{source}:{line}"),
            field: "(row has the wrong number of columns)".into(),
        },
        other => Error::InvalidField {
            context: format!("{source}:{line}"),
            field: "row".into(),
            message: format!("{other:?}"),
        },
    }
}
