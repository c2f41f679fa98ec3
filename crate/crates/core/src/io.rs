//! Count tables (CSV), configurations and results (JSON).
//!
//! Formats are described in `docs/formats.md`. Reals are written with the
//! shortest representation that parses back to the same value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angle::ChshAngles;
use crate::apparatus::{ApparatusConfig, CountRecord, Dials, PumpSource};
use crate::error::{Error, Result};
use crate::estimation::{ChshResult, FitResult, StateDiagnostics};

pub const SCHEMA_VERSION: u32 = 1;

pub const COUNT_HEADER: [&str; 6] = ["alpha_deg", "beta_deg", "duration_s", "n_a", "n_b", "n_coinc"];

/// Parse a count table. Records keep file order; line numbers in errors
/// count the header as line 1.
pub fn parse_counts(text: &str) -> Result<Vec<CountRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse { line: 1, message: "missing header row".into() });
    }
    if header.iter().ne(COUNT_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", COUNT_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut records = Vec::new();
    for (k, row) in reader.deserialize::<CountRecord>().enumerate() {
        let fallback_line = k as u64 + 2;
        let record = row.map_err(|e| csv_error(e, fallback_line))?;
        let line = fallback_line;
        for (name, v) in [("alpha_deg", record.alpha), ("beta_deg", record.beta)] {
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("{name} must be finite") });
            }
        }
        if !(record.duration_t > 0.0) || !record.duration_t.is_finite() {
            return Err(Error::Parse { line, message: format!("duration_s must be > 0, got {}", record.duration_t) });
        }
        records.push(record);
    }
    Ok(records)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(i) => format!("column {}: {}", COUNT_HEADER.get(i as usize).unwrap_or(&"?"), err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<Vec<CountRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_counts(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

pub fn format_counts(records: &[CountRecord]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(COUNT_HEADER).expect("in-memory write");
    for r in records {
        writer.serialize(r).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn save_counts(records: &[CountRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_counts(records)).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to set up a simulated bench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default)]
    pub apparatus: ApparatusConfig,
    #[serde(default)]
    pub source: PumpSource,
    #[serde(default)]
    pub dials: Dials,
    #[serde(default)]
    pub angles: ChshAngles,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            schema_version: SCHEMA_VERSION,
            apparatus: ApparatusConfig::default(),
            source: PumpSource::default(),
            dials: Dials::default(),
            angles: ChshAngles::default(),
        }
    }
}

impl ConfigFile {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.apparatus.validate()?;
        self.source.validate()
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ConfigFile = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
    config.validate()?;
    Ok(config)
}

/// An analysis result of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum AnalysisResult {
    Chsh(ChshResult),
    Diagnostics(StateDiagnostics),
    Fit(FitResult),
}

impl From<ChshResult> for AnalysisResult {
    fn from(r: ChshResult) -> Self {
        AnalysisResult::Chsh(r)
    }
}

impl From<StateDiagnostics> for AnalysisResult {
    fn from(r: StateDiagnostics) -> Self {
        AnalysisResult::Diagnostics(r)
    }
}

impl From<FitResult> for AnalysisResult {
    fn from(r: FitResult) -> Self {
        AnalysisResult::Fit(r)
    }
}

/// A saved result with the digest of the inputs it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub inputs_sha256: String,
    pub result: AnalysisResult,
}

impl ResultDocument {
    pub fn new(result: impl Into<AnalysisResult>, inputs: &[u8]) -> Self {
        ResultDocument {
            schema_version: SCHEMA_VERSION,
            inputs_sha256: sha256_hex(inputs),
            result: result.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }
}

pub fn save_result(document: &ResultDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, document.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let document: ResultDocument =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
    if document.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
            path.display(),
            document.schema_version
        )));
    }
    Ok(document)
}
