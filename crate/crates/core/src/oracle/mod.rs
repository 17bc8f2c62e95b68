//! Oracle requests, prompt templates and the backend interface.
//!
//! Construction, evaluation, merging and dialogue generation ask questions
//! of an [`OracleBackend`]: the deterministic [`RuleOracle`], a remote
//! chat-completion endpoint ([`RemoteBackend`]) or a recorded transcript
//! ([`ReplayBackend`]).

mod remote;
mod replay;
mod rules;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowchart::NodeType;

pub use remote::{BackendConfig, RemoteBackend, Sleeper, ThreadSleeper};
pub use replay::{prompt_hash, Recorder, ReplayBackend, ReplayRecord};
pub use rules::{Lexicons, RuleOracle, DOMAIN_FALLBACK, INTENT_FALLBACK};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no template registered under `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` needs payload field `{field}`")]
    MissingField { template: String, field: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no recorded response for prompt hash {0}")]
    ReplayMiss(String),
    #[error("replay file line {line}: {message}")]
    ReplayFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OracleKind {
    Domain,
    Intent,
    NodeType,
    UtteranceMatch,
    Coherence,
    DialogueGen,
}

impl OracleKind {
    pub const ALL: [OracleKind; 6] = [
        OracleKind::Domain,
        OracleKind::Intent,
        OracleKind::NodeType,
        OracleKind::UtteranceMatch,
        OracleKind::Coherence,
        OracleKind::DialogueGen,
    ];

    /// Identifier of the template registered by default for this kind.
    pub fn default_template(self) -> &'static str {
        match self {
            OracleKind::Domain => "domain-detection",
            OracleKind::Intent => "intent-identification",
            OracleKind::NodeType => "node-type-selection",
            OracleKind::UtteranceMatch => "utterance-node-matching",
            OracleKind::Coherence => "cluster-coherence",
            OracleKind::DialogueGen => "dialogue-generation",
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.default_template())
    }
}

/// Payload field names, matching the placeholders in the templates.
pub mod field {
    pub const CUSTOMER: &str = "customer";
    pub const AGENT: &str = "agent";
    pub const DOMAIN: &str = "current domain";
    pub const INTENT: &str = "intent";
    pub const UTTERANCE: &str = "utterance";
    pub const NODE_LIST: &str = "node list";
    pub const STEPS: &str = "steps";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleRequest {
    pub kind: OracleKind,
    pub template_id: String,
    pub payload: BTreeMap<String, String>,
}

impl OracleRequest {
    pub fn new<K: Into<String>, V: Into<String>>(
        kind: OracleKind,
        fields: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        OracleRequest {
            kind,
            template_id: kind.default_template().to_string(),
            payload: fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn domain(customer: &str, agent: &str) -> Self {
        Self::new(OracleKind::Domain, [(field::CUSTOMER, customer), (field::AGENT, agent)])
    }

    pub fn intent(customer: &str, agent: &str, domain: &str) -> Self {
        Self::new(
            OracleKind::Intent,
            [(field::CUSTOMER, customer), (field::AGENT, agent), (field::DOMAIN, domain)],
        )
    }

    pub fn node_type(intent: &str, domain: &str) -> Self {
        Self::new(OracleKind::NodeType, [(field::INTENT, intent), (field::DOMAIN, domain)])
    }

    /// `nodes` are `(id, label)` pairs rendered one per line as `id: label`.
    pub fn utterance_match<'a>(utterance: &str, nodes: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(
            OracleKind::UtteranceMatch,
            [(field::UTTERANCE, utterance.to_string()), (field::NODE_LIST, node_list(nodes))],
        )
    }

    pub fn coherence<'a>(nodes: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(OracleKind::Coherence, [(field::NODE_LIST, node_list(nodes))])
    }

    /// `steps` are rendered as a numbered list.
    pub fn dialogue_gen<S: AsRef<str>>(steps: &[S]) -> Self {
        let text = steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s.as_ref()))
            .collect::<Vec<_>>()
            .join("\n");
        Self::new(OracleKind::DialogueGen, [(field::STEPS, text)])
    }

    pub fn with_template(mut self, id: impl Into<String>) -> Self {
        self.template_id = id.into();
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.payload.get(name).map(String::as_str)
    }
}

fn node_list<'a>(nodes: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    nodes
        .into_iter()
        .map(|(id, label)| format!("{id}: {label}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits a rendered node list back into `(id, label)` pairs.
pub fn parse_node_list(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(id, label)| (id.trim().to_string(), label.trim().to_string()))
        .filter(|(id, _)| !id.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub kind: OracleKind,
    /// Instruction text with `{field}` placeholders.
    pub text: String,
    pub examples: Vec<(String, String)>,
}

impl Template {
    pub fn render(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let mut out = String::new();
        if !self.examples.is_empty() {
            out.push_str("Examples:\n");
            for (input, output) in &self.examples {
                out.push_str(&format!("Input: {input}\nOutput: {output}\n\n"));
            }
        }
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else {
                break;
            };
            let name = &rest[open + 1..open + close];
            out.push_str(&rest[..open]);
            let value = req.get(name).ok_or_else(|| OracleError::MissingField {
                template: self.id.clone(),
                field: name.to_string(),
            })?;
            out.push_str(value);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Template>,
}

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|&(a, b)| (a.to_string(), b.to_string())).collect()
}

impl Default for TemplateRegistry {
    /// The construction and matching instructions, each with five
    /// illustrative input/output pairs written for this library.
    fn default() -> Self {
        let mut r = TemplateRegistry { templates: BTreeMap::new() };
        r.register(Template {
            id: "domain-detection".into(),
            kind: OracleKind::Domain,
            text: "Given customer utterance: \"{customer}\" and agent utterance: \"{agent}\", identify the primary domain (restaurant, hotel, attraction, train, taxi, or multi). Output only the domain name(s) comma-separated.".into(),
            examples: pairs(&[
                ("customer: \"I need a table for two tonight.\" agent: \"Which area do you prefer?\"", "restaurant"),
                ("customer: \"Can you find me a guesthouse with parking?\" agent: \"There are 5 options.\"", "hotel"),
                ("customer: \"When does the next train leave for Ely?\" agent: \"At 10:15.\"", "train"),
                ("customer: \"Book a taxi to the museum.\" agent: \"What time should it arrive?\"", "taxi"),
                ("customer: \"I need a hotel and a table nearby.\" agent: \"Sure, any price range?\"", "hotel, restaurant"),
            ]),
        });
        r.register(Template {
            id: "intent-identification".into(),
            kind: OracleKind::Intent,
            text: "Given customer utterance: \"{customer}\" and agent utterance: \"{agent}\" in {current domain} domain, identify the abstract intent (e.g., \"Inquire price requirement of restaurant\"). Output only the intent description, concise and starting with a capitalized verb.".into(),
            examples: pairs(&[
                ("customer: \"Anything cheap in the centre?\" agent: \"Yes, three places.\" domain: restaurant", "Inquire price requirement of restaurant"),
                ("customer: \"Book it for 4 people.\" agent: \"Done, reference AB12.\" domain: hotel", "Book hotel room"),
                ("customer: \"What time does it leave?\" agent: \"08:30.\" domain: train", "Provide departure time"),
                ("customer: \"Is there free wifi?\" agent: \"Yes, it has wifi.\" domain: hotel", "Confirm hotel amenities"),
                ("customer: \"That is all, thanks.\" agent: \"Have a nice day.\" domain: taxi", "Close conversation"),
            ]),
        });
        r.register(Template {
            id: "node-type-selection".into(),
            kind: OracleKind::NodeType,
            text: "Given intent: \"{intent}\" in {current domain} domain, select a node type from the Task-Oriented Flowchart: start (initiates), prompt (requests input), decision (conditional, e.g., valid?), action (system query, e.g., retrieve), output (delivers info), reflection (evaluates state, e.g., goals met?), end (concludes). Output only the type (lowercase).".into(),
            examples: pairs(&[
                ("intent: \"Greet customer\" domain: hotel", "start"),
                ("intent: \"Request travel date\" domain: train", "prompt"),
                ("intent: \"Search available restaurants\" domain: restaurant", "action"),
                ("intent: \"Check booking availability\" domain: hotel", "decision"),
                ("intent: \"Confirm customer satisfaction\" domain: taxi", "reflection"),
            ]),
        });
        r.register(Template {
            id: "utterance-node-matching".into(),
            kind: OracleKind::UtteranceMatch,
            text: "Given the following utterance and flowchart node descriptions, identify which node the utterance corresponds to based on the semantics. Output only the Node ID or 'None'.\n\nUtterance: {utterance}\n\nNodes: {node list}".into(),
            examples: pairs(&[
                ("Utterance: \"What's my balance?\" Nodes: B: Determine Type of Enquiry; E: Display Balance/Limit Information", "B"),
                ("Utterance: \"Your balance is 200 pounds.\" Nodes: B: Determine Type of Enquiry; E: Display Balance/Limit Information", "E"),
                ("Utterance: \"Nice weather today.\" Nodes: B: Determine Type of Enquiry; E: Display Balance/Limit Information", "None"),
                ("Utterance: \"Are you happy with that?\" Nodes: R: Confirm User Satisfaction; J: Execute Closing Script", "R"),
                ("Utterance: \"Thanks for calling, goodbye.\" Nodes: R: Confirm User Satisfaction; J: Execute Closing Script", "J"),
            ]),
        });
        r.register(Template {
            id: "cluster-coherence".into(),
            kind: OracleKind::Coherence,
            text: "Given the following flowchart node descriptions taken from different service procedures, decide whether they all describe the same step and can be merged into one node. Output only yes or no.\n\nNodes: {node list}".into(),
            examples: pairs(&[
                ("Nodes: A1: Inquire account balance; B4: Inquire balance", "yes"),
                ("Nodes: A1: Inquire account balance; B4: Book taxi", "no"),
                ("Nodes: C2: Confirm booking; D7: Confirm reservation; E1: Confirm the booking", "yes"),
                ("Nodes: C2: Provide address; D7: Request address", "no"),
                ("Nodes: F3: Execute closing script", "yes"),
            ]),
        });
        r.register(Template {
            id: "dialogue-generation".into(),
            kind: OracleKind::DialogueGen,
            text: "Write a customer service dialogue that follows the procedure steps below in order. Alternate turns starting with the customer, one customer turn and one agent turn per step. Prefix every turn with \"Customer:\" or \"Agent:\".\n\nSteps:\n{steps}".into(),
            examples: pairs(&[
                ("Steps: 1. Greet customer 2. Close conversation", "Customer: Hi there.\nAgent: Hello, how can I help?\nCustomer: Nothing else, bye.\nAgent: Goodbye."),
                ("Steps: 1. Request travel date", "Customer: I need a train.\nAgent: Which day are you travelling?"),
                ("Steps: 1. Display balance", "Customer: What's my balance?\nAgent: It is 120 pounds."),
                ("Steps: 1. Check availability 2. Book room", "Customer: Any rooms free Friday?\nAgent: Yes, one double.\nCustomer: Book it.\nAgent: Booked, reference 7Q."),
                ("Steps: 1. Confirm satisfaction", "Customer: That works.\nAgent: Is there anything else?"),
            ]),
        });
        r
    }
}

impl TemplateRegistry {
    pub fn empty() -> Self {
        TemplateRegistry { templates: BTreeMap::new() }
    }

    pub fn register(&mut self, t: Template) {
        self.templates.insert(t.id.clone(), t);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, req: &OracleRequest) -> Result<String, OracleError> {
        self.get(&req.template_id)
            .ok_or_else(|| OracleError::UnknownTemplate(req.template_id.clone()))?
            .render(req)
    }
}

/// Answers oracle requests. Implementations must be safe to share across
/// threads.
pub trait OracleBackend: Send + Sync {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError>;
}

impl<B: OracleBackend + ?Sized> OracleBackend for &B {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        (**self).complete(req)
    }
}

impl<B: OracleBackend + ?Sized> OracleBackend for Box<B> {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        (**self).complete(req)
    }
}

impl<B: OracleBackend + ?Sized> OracleBackend for std::sync::Arc<B> {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        (**self).complete(req)
    }
}

/// Parses a node-type answer. `prompt` (a request for input) maps to
/// [`NodeType::Output`], the closest of the five chart types.
pub fn parse_node_type(answer: &str) -> Option<NodeType> {
    let word = answer
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match word.as_str() {
        "prompt" => Some(NodeType::Output),
        w => w.parse().ok(),
    }
}

/// Parses a domain answer into its comma-separated labels.
pub fn parse_domains(answer: &str) -> Vec<String> {
    answer
        .split(',')
        .map(crate::corpus::normalize_intent)
        .filter(|d| !d.is_empty())
        .collect()
}

/// Parses a yes/no verdict; anything else is `None`.
pub fn parse_verdict(answer: &str) -> Option<bool> {
    match answer.trim().trim_end_matches('.').to_lowercase().as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}
