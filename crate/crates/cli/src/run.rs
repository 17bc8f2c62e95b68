//! Input hashing, fixed-name outputs and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use tof_core::corpus::{read_jsonl, read_multiwoz, Corpus};
use tof_core::flowchart::{Flowchart, Sidecar};
use tof_core::mermaid;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One subcommand invocation: every input read and output written passes
/// through here so the manifest can list their hashes.
pub struct Run {
    subcommand: &'static str,
    out: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    config: Map<String, Value>,
}

impl Run {
    pub fn new(subcommand: &'static str, out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::data(out.display(), e))?;
        Ok(Run {
            subcommand,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: Map::new(),
        })
    }

    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::data(path.display(), e))?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes).map_err(|e| CliError::data(path.display(), e))
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T, CliError> {
        let text = self.read(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))
    }

    /// Parses a Mermaid chart and applies `<stem>.sidecar.json` when it
    /// sits next to it. The chart is named after the file stem.
    pub fn load_chart(&mut self, path: &Path) -> Result<Flowchart, CliError> {
        let text = self.read(path)?;
        let mut chart = mermaid::parse_unvalidated(&text).map_err(|e| CliError::data(path.display(), e))?;
        let sidecar = path.with_extension("sidecar.json");
        if sidecar.is_file() {
            let meta: Sidecar = self.read_json(&sidecar)?;
            chart
                .apply_sidecar(&meta)
                .map_err(|e| CliError::data(sidecar.display(), e))?;
        }
        let violations = chart.validate();
        if !violations.is_empty() {
            return Err(CliError::data(path.display(), format!("invalid chart: {violations:?}")));
        }
        chart.name = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.trim_end_matches(".mmd").to_string())
            .unwrap_or_else(|| "chart".into());
        Ok(chart)
    }

    pub fn load_corpus(&mut self, path: &Path) -> Result<Corpus, CliError> {
        let text = self.read(path)?;
        read_jsonl(text.as_bytes()).map_err(|e| CliError::data(path.display(), e))
    }

    pub fn load_multiwoz(&mut self, data: &Path, acts: Option<&Path>) -> Result<Corpus, CliError> {
        let text = self.read(data)?;
        let acts = acts.map(|p| self.read(p)).transpose()?;
        read_multiwoz(&text, acts.as_deref()).map_err(|e| CliError::data(data.display(), e))
    }

    /// Records a resolved setting for the manifest.
    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("settings serialize");
        self.config.insert(key.to_string(), v);
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::data(path.display(), e))?;
        self.outputs.push(FileHash {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
        text.push('\n');
        self.write(name, &text)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let text: String = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect();
        self.write(name, &text)
    }

    /// Writes `manifest.json`. It holds no timestamps, so identical runs
    /// give identical manifests.
    pub fn finish(self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            subcommand: &'static str,
            inputs: &'a [FileHash],
            config: &'a Map<String, Value>,
            outputs: &'a [FileHash],
        }
        let manifest = Manifest {
            tool: "tof",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            inputs: &self.inputs,
            config: &self.config,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::data(path.display(), e))
    }
}
