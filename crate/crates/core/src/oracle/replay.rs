//! Record/replay of oracle transcripts keyed by the rendered prompt.
//!
//! Each JSONL line holds `{"hash", "prompt", "response"}` where `hash` is the
//! hex SHA-256 of the prompt.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OracleBackend, OracleError, OracleRequest, TemplateRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub hash: String,
    pub prompt: String,
    pub response: String,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Answers from a recorded transcript; unknown prompts are an error.
pub struct ReplayBackend {
    templates: TemplateRegistry,
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>, templates: TemplateRegistry) -> Result<Self, OracleError> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| OracleError::ReplayFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rec.hash != prompt_hash(&rec.prompt) {
                return Err(OracleError::ReplayFormat {
                    line: i + 1,
                    message: "hash does not match prompt".into(),
                });
            }
            records.push(rec);
        }
        Ok(Self::from_records(records, templates))
    }

    /// Later records for the same prompt replace earlier ones.
    pub fn from_records(records: impl IntoIterator<Item = ReplayRecord>, templates: TemplateRegistry) -> Self {
        ReplayBackend {
            templates,
            responses: records.into_iter().map(|r| (r.hash, r.response)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl OracleBackend for ReplayBackend {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let hash = prompt_hash(&self.templates.render(req)?);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(OracleError::ReplayMiss(hash))
    }
}

/// Forwards to `inner` and appends every exchange to a transcript file.
pub struct Recorder<B> {
    inner: B,
    templates: TemplateRegistry,
    out: Mutex<File>,
}

impl<B: OracleBackend> Recorder<B> {
    pub fn create(inner: B, templates: TemplateRegistry, path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Recorder {
            inner,
            templates,
            out: Mutex::new(out),
        })
    }
}

impl<B: OracleBackend> OracleBackend for Recorder<B> {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let prompt = self.templates.render(req)?;
        let response = self.inner.complete(req)?;
        let rec = ReplayRecord {
            hash: prompt_hash(&prompt),
            prompt,
            response: response.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| OracleError::Malformed(e.to_string()))?;
        let mut out = self.out.lock().expect("recorder poisoned");
        writeln!(out, "{line}")?;
        Ok(response)
    }
}
