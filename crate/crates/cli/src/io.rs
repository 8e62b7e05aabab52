use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hfpc::error::{Error, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tool_version: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_s: f64,
}

pub struct RunRecorder {
    started: Instant,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn new(seed: u64) -> Self {
        RunRecorder {
            started: Instant::now(),
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, cfg: &T) {
        self.config = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Hashes inputs and outputs and writes `<manifest_path>` atomically.
    pub fn finish(self, outputs: &[PathBuf], manifest_path: &Path) -> Result<()> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<FileHash>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileHash {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(outputs)?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let body = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        write_atomic(manifest_path, &body)
    }
}

/// `<output>.manifest.json` beside a file output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let name = output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{name}.manifest.json"))
}

/// Feature rows keyed by wafermap file.
pub struct FeatureCsv {
    pub columns: Vec<String>,
    pub files: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn render_feature_csv(columns: &[String], files: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("file").chain(columns.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (f, r) in files.iter().zip(rows) {
        let rec: Vec<String> = std::iter::once(f.clone()).chain(r.iter().map(|v| format!("{v:?}"))).collect();
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_feature_csv(path: &Path) -> Result<FeatureCsv> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.get(0) != Some("file") {
        return Err(Error::Parse(format!("{}: first column must be `file`", path.display())));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        files.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("{}: bad number `{v}`", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != columns.len() {
            return Err(Error::FeatureLengthMismatch {
                expected: columns.len(),
                got: row.len(),
            });
        }
        rows.push(row);
    }
    Ok(FeatureCsv { columns, files, rows })
}
