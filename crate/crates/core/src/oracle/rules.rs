//! Deterministic keyword oracle used offline and in tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{field, parse_node_list, OracleBackend, OracleError, OracleKind, OracleRequest};
use crate::corpus::normalize_intent;
use crate::flowchart::{Flowchart, NodeType};
use crate::text::{jaccard, keywords, tokens};

/// Domain answer when no keyword matches.
pub const DOMAIN_FALLBACK: &str = "other";
/// Intent answer when no keyword matches.
pub const INTENT_FALLBACK: &str = "handle-other";

const COHERENCE_THRESHOLD: f64 = 0.6;

/// Keyword tables driving the [`RuleOracle`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct Lexicons {
    /// Domain label to keywords.
    pub domains: BTreeMap<String, BTreeSet<String>>,
    /// Verb-initial hyphenated intent to keywords.
    pub intents: BTreeMap<String, BTreeSet<String>>,
    /// Node type per intent.
    pub node_types: BTreeMap<String, NodeType>,
    /// Node type per leading verb, used when the intent has no entry.
    pub verb_types: BTreeMap<String, NodeType>,
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Lexicons {
    /// Tables for common service domains.
    pub fn builtin() -> Self {
        let mut lx = Lexicons::default();
        for (d, words) in [
            ("attraction", &["attraction", "museum", "park", "gallery", "entrance", "sightseeing"][..]),
            ("banking", &["balance", "account", "card", "credit", "payment", "repay", "loan"]),
            ("hotel", &["hotel", "room", "guesthouse", "stay", "nights", "wifi", "parking"]),
            ("restaurant", &["restaurant", "table", "food", "cuisine", "dinner", "lunch", "menu"]),
            ("taxi", &["taxi", "cab", "driver", "pickup"]),
            ("train", &["train", "station", "depart", "arrive", "departure", "platform"]),
        ] {
            lx.domains.insert(d.into(), set(words));
        }
        for (i, words) in [
            ("book-room", &["book", "room", "stay", "nights"][..]),
            ("book-table", &["book", "table", "reserve", "reservation"]),
            ("book-taxi", &["taxi", "cab", "pickup"]),
            ("check-availability", &["available", "availability", "free", "vacancy"]),
            ("close-conversation", &["bye", "goodbye", "thanks", "thank"]),
            ("confirm-booking", &["confirm", "confirmed", "reference", "booked"]),
            ("greet-customer", &["hello", "hi", "morning", "evening"]),
            ("inquire-balance", &["balance", "limit", "owe"]),
            ("inquire-price", &["cost", "price", "much", "expensive", "cheap"]),
            ("provide-phone-number", &["phone", "number", "contact"]),
            ("request-address", &["address", "where", "located", "location"]),
            ("search-train", &["train", "depart", "leave", "arrive", "departure"]),
        ] {
            lx.intents.insert(i.into(), set(words));
        }
        for (v, t) in [
            ("book", NodeType::Action),
            ("check", NodeType::Decision),
            ("close", NodeType::End),
            ("confirm", NodeType::Reflection),
            ("determine", NodeType::Decision),
            ("display", NodeType::Output),
            ("greet", NodeType::Start),
            ("inquire", NodeType::Action),
            ("provide", NodeType::Output),
            ("request", NodeType::Output),
            ("search", NodeType::Action),
        ] {
            lx.verb_types.insert(v.into(), t);
        }
        lx
    }

    /// Tables that recover a chart's own steps: one intent per node label,
    /// typed as the node, and one domain per subgraph (the chart name, or
    /// `general`, for nodes without a domain).
    pub fn from_flowchart(chart: &Flowchart) -> Self {
        let default_domain = match normalize_intent(&chart.name) {
            d if d.is_empty() => "general".to_string(),
            d => d,
        };
        let mut lx = Lexicons::default();
        for node in chart.nodes() {
            let intent = Self::intent_of_label(&node.label);
            if intent.is_empty() {
                continue;
            }
            let words = keywords(&node.label);
            let domain = node
                .domain
                .as_deref()
                .map(normalize_intent)
                .unwrap_or_else(|| default_domain.clone());
            lx.domains.entry(domain).or_default().extend(words.iter().cloned());
            lx.intents.entry(intent.clone()).or_default().extend(words);
            lx.node_types.insert(intent, node.node_type);
        }
        lx
    }

    /// Intent string for a step label: its tokens, hyphen-joined.
    pub fn intent_of_label(label: &str) -> String {
        normalize_intent(label)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| OracleError::Malformed(e.to_string()))
    }

    /// Union with `other`; on conflicting node types `other` wins.
    pub fn extend(&mut self, other: Lexicons) {
        for (k, v) in other.domains {
            self.domains.entry(k).or_default().extend(v);
        }
        for (k, v) in other.intents {
            self.intents.entry(k).or_default().extend(v);
        }
        self.node_types.extend(other.node_types);
        self.verb_types.extend(other.verb_types);
    }

    /// Leading verbs of every intent plus the verb table.
    pub fn verbs(&self) -> BTreeSet<String> {
        self.intents
            .keys()
            .filter_map(|i| i.split('-').next())
            .map(str::to_string)
            .chain(self.verb_types.keys().cloned())
            .collect()
    }
}

/// Key with the largest keyword overlap; ties go to the smallest key.
fn best_match<'a>(table: &'a BTreeMap<String, BTreeSet<String>>, text: &str) -> Option<&'a str> {
    let words: BTreeSet<String> = tokens(text).into_iter().collect();
    let mut best: Option<(&str, usize)> = None;
    for (key, kws) in table {
        let score = kws.intersection(&words).count();
        if score > 0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((key, score));
        }
    }
    best.map(|(k, _)| k)
}

/// Step text inside a dialogue-generation request line: the first quoted
/// segment when present, otherwise the line without its list number.
fn step_text(line: &str) -> &str {
    let line = line.trim();
    if let Some(start) = line.find('"') {
        if let Some(len) = line[start + 1..].find('"') {
            return &line[start + 1..start + 1 + len];
        }
    }
    match line.split_once(". ") {
        Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest,
        _ => line,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleOracle {
    pub lexicons: Lexicons,
}

impl RuleOracle {
    pub fn new(lexicons: Lexicons) -> Self {
        RuleOracle { lexicons }
    }

    /// Answer for `req`; a pure function of the request and the lexicons.
    pub fn answer(&self, req: &OracleRequest) -> String {
        let get = |name: &str| req.get(name).unwrap_or("");
        let lx = &self.lexicons;
        match req.kind {
            OracleKind::Domain => {
                let text = format!("{} {}", get(field::CUSTOMER), get(field::AGENT));
                best_match(&lx.domains, &text).unwrap_or(DOMAIN_FALLBACK).to_string()
            }
            OracleKind::Intent => {
                let text = format!("{} {}", get(field::CUSTOMER), get(field::AGENT));
                best_match(&lx.intents, &text).unwrap_or(INTENT_FALLBACK).to_string()
            }
            OracleKind::NodeType => {
                let intent = normalize_intent(get(field::INTENT));
                let verb = intent.split('-').next().unwrap_or("");
                lx.node_types
                    .get(&intent)
                    .or_else(|| lx.verb_types.get(verb))
                    .copied()
                    .unwrap_or(NodeType::Action)
                    .as_str()
                    .to_string()
            }
            OracleKind::UtteranceMatch => {
                let words = keywords(get(field::UTTERANCE));
                let mut nodes = parse_node_list(get(field::NODE_LIST));
                nodes.sort();
                let mut best: Option<(String, usize)> = None;
                for (id, label) in nodes {
                    let score = keywords(&label).intersection(&words).count();
                    if score > 0 && best.as_ref().is_none_or(|(_, s)| score > *s) {
                        best = Some((id, score));
                    }
                }
                best.map_or_else(|| "None".to_string(), |(id, _)| id)
            }
            OracleKind::Coherence => {
                let sets: Vec<_> = parse_node_list(get(field::NODE_LIST))
                    .iter()
                    .map(|(_, l)| keywords(l))
                    .collect();
                let coherent = sets.iter().enumerate().all(|(i, a)| {
                    sets[i + 1..].iter().all(|b| jaccard(a, b) >= COHERENCE_THRESHOLD)
                });
                if coherent { "yes" } else { "no" }.to_string()
            }
            OracleKind::DialogueGen => get(field::STEPS)
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let step = step_text(l);
                    format!("Customer: I would like {step}.\nAgent: Sure, {step}.")
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

impl OracleBackend for RuleOracle {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        Ok(self.answer(req))
    }
}
