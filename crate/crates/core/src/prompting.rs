//! Flowchart-augmented system prompts and node tracking in agent replies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowchart::Flowchart;
use crate::mermaid;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("node `{node}` of chart `{chart}` references undefined schema `{schema}`")]
    DanglingSchema { chart: String, node: String, schema: String },
    #[error("schema `{schema}` declares parameter `{parameter}` twice")]
    DuplicateParameter { schema: String, parameter: String },
    #[error("chart `{0}` is invalid")]
    InvalidChart(String),
    #[error("schema file is malformed: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: String,
    #[serde(default)]
    pub required: bool,
}

/// Parameters an action node needs before it can run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSchema {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<Parameter>,
}

pub type SchemaMap = BTreeMap<String, NodeSchema>;

/// Parses `{schemaRef: {"description", "parameters": [{"name", "type",
/// "required"}]}}`.
pub fn parse_schemas(json: &str) -> Result<SchemaMap, PromptError> {
    let map: SchemaMap = serde_json::from_str(json)?;
    for (id, s) in &map {
        let mut seen = BTreeSet::new();
        for p in &s.parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(PromptError::DuplicateParameter {
                    schema: id.clone(),
                    parameter: p.name.clone(),
                });
            }
        }
    }
    Ok(map)
}

pub const TRACKING_INSTRUCTION: &str = "Before every reply, state the node you are currently at as [node: X], where X is the node id from the flowcharts above, then continue with the reply on the same line.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PromptBundle {
    pub global_description: String,
    pub charts: Vec<String>,
    pub schema_refs: Vec<String>,
    pub tracking_instruction: Option<String>,
    pub rendered: String,
}

fn schema_table(id: &str, schema: &NodeSchema) -> String {
    let mut out = format!("Schema {id}");
    if !schema.description.is_empty() {
        out.push_str(&format!(": {}", schema.description));
    }
    out.push('\n');
    let width = schema.parameters.iter().map(|p| p.name.len()).max().unwrap_or(0).max("parameter".len());
    out.push_str(&format!("{:width$}  type\n", "parameter"));
    for p in &schema.parameters {
        let req = if p.required { "required" } else { "optional" };
        out.push_str(&format!("{:width$}  {}, {req}\n", p.name, p.semantic_type));
    }
    out
}

/// Description, then each chart as a fenced Mermaid block followed by the
/// tables of the schemas its nodes reference, then the tracking
/// instruction when enabled.
pub fn compose_prompt(
    nl: &str,
    charts: &[Flowchart],
    schemas: &SchemaMap,
    tracking: bool,
) -> Result<PromptBundle, PromptError> {
    let mut rendered = nl.trim_end().to_string();
    let mut used = BTreeSet::new();
    for chart in charts {
        let mut refs = BTreeSet::new();
        for n in chart.nodes() {
            if let Some(s) = &n.schema_ref {
                if !schemas.contains_key(s) {
                    return Err(PromptError::DanglingSchema {
                        chart: chart.name.clone(),
                        node: n.id.clone(),
                        schema: s.clone(),
                    });
                }
                refs.insert(s.as_str());
            }
        }
        let text = mermaid::serialize(chart).map_err(|_| PromptError::InvalidChart(chart.name.clone()))?;
        rendered.push_str("\n\n```mermaid\n");
        rendered.push_str(&text);
        if !text.ends_with('\n') {
            rendered.push('\n');
        }
        rendered.push_str("```\n");
        for r in &refs {
            rendered.push('\n');
            rendered.push_str(&schema_table(r, &schemas[*r]));
        }
        used.extend(refs.into_iter().map(str::to_string));
    }
    if tracking {
        rendered.push('\n');
        rendered.push_str(TRACKING_INSTRUCTION);
        rendered.push('\n');
    }
    Ok(PromptBundle {
        global_description: nl.to_string(),
        charts: charts.iter().map(|c| c.name.clone()).collect(),
        schema_refs: used.into_iter().collect(),
        tracking_instruction: tracking.then(|| TRACKING_INSTRUCTION.to_string()),
        rendered,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackedReply {
    pub node: Option<String>,
    pub reply: String,
    /// Set when a node tag names no node of the supplied chart.
    pub unknown_node: bool,
}

pub fn format_tracked(node: &str, reply: &str) -> String {
    format!("[node: {node}] {reply}")
}

/// Splits a leading `[node: X]` tag from the reply text. With `charts`
/// given, a tag naming none of their nodes is flagged.
pub fn parse_tracked_reply(text: &str, charts: &[Flowchart]) -> TrackedReply {
    let untagged = || TrackedReply {
        node: None,
        reply: text.to_string(),
        unknown_node: false,
    };
    let Some(rest) = text.trim_start().strip_prefix("[node:") else {
        return untagged();
    };
    let Some(close) = rest.find(']') else {
        return untagged();
    };
    let id = rest[..close].trim();
    if id.is_empty() {
        return untagged();
    }
    let after = &rest[close + 1..];
    let known = charts.is_empty() || charts.iter().any(|c| c.node(id).is_some());
    TrackedReply {
        node: Some(id.to_string()),
        reply: after.strip_prefix(' ').unwrap_or(after).to_string(),
        unknown_node: !known,
    }
}
