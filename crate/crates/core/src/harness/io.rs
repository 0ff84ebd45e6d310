//! JSON-lines files with a run manifest on the first record, model files and
//! CSV tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::{ModelFile, PredictorModel};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance of an output file: what produced it and from which inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    /// The resolved configuration that produced the file.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new<C: Serialize>(kind: &str, config: &C, seeds: BTreeMap<String, u64>) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::format("manifest config", e))?;
        Ok(Manifest {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            kind: kind.to_string(),
            config_sha256: sha256_hex(&config),
            seeds,
            config,
        })
    }
}

/// Hex SHA-256 of the compact JSON encoding (object keys sorted).
pub fn sha256_hex(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("JSON values always serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Line<T> {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<Manifest>,
    #[serde(flatten)]
    record: T,
}

#[derive(Serialize)]
struct LineRef<'a, T> {
    schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<&'a Manifest>,
    #[serde(flatten)]
    record: &'a T,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// One record per line; the manifest rides on the first line.
pub fn write_jsonl<T: Serialize>(path: &Path, manifest: &Manifest, records: &[T]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid(format!("refusing to write empty {}", path.display())));
    }
    let mut w = create(path)?;
    for (i, record) in records.iter().enumerate() {
        let line = LineRef {
            schema_version: SCHEMA_VERSION,
            manifest: (i == 0).then_some(manifest),
            record,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Manifest>, Vec<T>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = None;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{} line {}", path.display(), i + 1);
        let parsed: Line<T> = serde_json::from_str(&line).map_err(|e| Error::format(ctx(), e))?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                ctx(),
                format!("unsupported schema_version {}", parsed.schema_version),
            ));
        }
        if parsed.manifest.is_some() {
            manifest = parsed.manifest;
        }
        out.push(parsed.record);
    }
    Ok((manifest, out))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path.display().to_string(), e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::format(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path.display().to_string(), e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path.display().to_string(), e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredModel {
    schema_version: u32,
    manifest: Option<Manifest>,
    model: ModelFile,
}

pub fn save_model(path: &Path, model: &PredictorModel, manifest: Option<Manifest>) -> Result<()> {
    write_json(
        path,
        &StoredModel {
            schema_version: SCHEMA_VERSION,
            manifest,
            model: model.to_file_format(),
        },
    )
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    let stored: StoredModel = read_json(path)?;
    if stored.schema_version != SCHEMA_VERSION {
        return Err(Error::format(path.display().to_string(), "unsupported schema_version"));
    }
    PredictorModel::from_file_format(stored.model)
}
