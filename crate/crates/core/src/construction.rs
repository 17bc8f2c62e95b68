//! Intent-aware flowchart construction from selected dialogues.
//!
//! Dialogues are split into customer/agent pairs. For every pair the domain
//! oracle routes it to a per-domain subgraph, the intent oracle names it,
//! and the pair either reuses the subgraph's node with the same intent or
//! creates a node whose type comes from the node-type oracle. Consecutive
//! pairs are linked by edges, so a dialogue becomes a walk from the global
//! root through its domain entry node to the domain's end node.
//!
//! A first pair typed `start` is absorbed by the root and entry nodes, and a
//! last pair typed `end` by the domain's end node; in any other position
//! those two types are downgraded to `action`.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Dialogue, Speaker, Utterance};
use crate::evaluation::NodeAssignment;
use crate::flowchart::{canonical_id, FlowEdge, FlowNode, Flowchart, NodeType, Violation};
use crate::oracle::{parse_domains, parse_node_type, OracleBackend, OracleError, OracleRequest, DOMAIN_FALLBACK};

pub const ROOT_LABEL: &str = "Begin service dialogue";

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("no dialogues to build from")]
    NoDialogues,
    #[error("dialogue `{dialogue}`, pair {pair}: {source}")]
    Oracle {
        dialogue: String,
        pair: usize,
        #[source]
        source: OracleError,
    },
    #[error("dialogue `{dialogue}`, pair {pair}: unusable node type answer `{answer}`")]
    NodeTypeAnswer { dialogue: String, pair: usize, answer: String },
    #[error("built chart is invalid: {0:?}")]
    Invalid(Vec<Violation>),
}

/// A customer turn and the agent turn answering it. Consecutive turns by
/// the same speaker are joined with a space first.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePair {
    /// 1-based position within the dialogue.
    pub index: usize,
    pub customer: Utterance,
    pub agent: Utterance,
    /// Indices of the original utterances folded into each side.
    pub customer_sources: Vec<usize>,
    pub agent_sources: Vec<usize>,
}

fn coalesce(d: &Dialogue) -> Vec<(Utterance, Vec<usize>)> {
    let mut out: Vec<(Utterance, Vec<usize>)> = Vec::new();
    for u in &d.utterances {
        match out.last_mut() {
            Some((last, sources)) if last.speaker == u.speaker => {
                last.text.push(' ');
                last.text.push_str(&u.text);
                last.intents.extend(u.intents.iter().cloned());
                sources.push(u.index);
            }
            _ => out.push((u.clone(), vec![u.index])),
        }
    }
    out
}

/// Pairs customer turns with the following agent turns. A leading agent
/// turn and a trailing unanswered customer turn are dropped.
pub fn pair_up(d: &Dialogue) -> Vec<UtterancePair> {
    let turns = coalesce(d);
    let skip = usize::from(turns.first().is_some_and(|(u, _)| u.speaker == Speaker::Agent));
    turns[skip..]
        .chunks_exact(2)
        .enumerate()
        .map(|(i, pair)| {
            let (c, cs) = pair[0].clone();
            let (a, asrc) = pair[1].clone();
            UtterancePair {
                index: i + 1,
                customer: c,
                agent: a,
                customer_sources: cs,
                agent_sources: asrc,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Reused,
    Created,
    /// Absorbed by the root/entry nodes or by the domain end node.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEntry {
    pub dialogue_id: String,
    pub pair_index: usize,
    pub domain: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alternate_domains: Vec<String>,
    pub intent: String,
    pub decision: Decision,
    /// Node the pair maps to; for an absorbed first pair, the entry node.
    pub node_id: String,
    pub customer_node: String,
    pub agent_node: String,
    pub customer_utterances: Vec<usize>,
    pub agent_utterances: Vec<usize>,
    pub edges_added: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub edges_skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildTrace {
    pub entries: Vec<TraceEntry>,
}

impl BuildTrace {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace entries serialize") + "\n")
            .collect()
    }

    /// Oracle calls spent: domain and intent for every pair, plus the node
    /// type for every pair that did not reuse a node.
    pub fn oracle_calls(&self) -> usize {
        self.entries
            .iter()
            .map(|e| if e.decision == Decision::Reused { 2 } else { 3 })
            .sum()
    }

    /// Node assignment implied by the build: every utterance maps to the node
    /// its pair produced. Utterances outside any pair stay unmatched.
    pub fn assignment(&self, d: &Dialogue) -> NodeAssignment {
        let mut out = vec![None; d.utterances.len()];
        for e in self.entries.iter().filter(|e| e.dialogue_id == d.id) {
            for &i in &e.customer_utterances {
                out[i] = Some(e.customer_node.clone());
            }
            for &i in &e.agent_utterances {
                out[i] = Some(e.agent_node.clone());
            }
        }
        NodeAssignment::new(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub pairs: usize,
    /// Every pair consults all three oracles.
    pub max_calls: usize,
    /// Every pair reuses a node, so the node-type oracle is never asked.
    pub min_calls: usize,
    pub max_time: Duration,
    pub min_time: Duration,
}

pub fn estimate_cost(dialogues: &[Dialogue], latency: Duration) -> CostEstimate {
    let pairs: usize = dialogues.iter().map(|d| pair_up(d).len()).sum();
    CostEstimate {
        pairs,
        max_calls: 3 * pairs,
        min_calls: 2 * pairs,
        max_time: latency * (3 * pairs) as u32,
        min_time: latency * (2 * pairs) as u32,
    }
}

/// Intent text shown as a node label: hyphens become spaces and the first
/// letter is capitalized.
pub fn intent_label(intent: &str) -> String {
    let text = intent.replace('-', " ");
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => text,
    }
}

/// Incremental builder; dialogues added later only ever add nodes and edges.
#[derive(Debug, Clone)]
pub struct Builder {
    chart: Flowchart,
    trace: BuildTrace,
    root: String,
    entries: BTreeMap<String, String>,
    ends: BTreeMap<String, String>,
    by_intent: HashMap<(String, String), String>,
}

impl Builder {
    pub fn new(name: impl Into<String>) -> Self {
        let mut chart = Flowchart::new(name);
        let root = canonical_id(0);
        chart
            .add_node(FlowNode::new(root.clone(), NodeType::Start, ROOT_LABEL))
            .expect("fresh chart");
        Builder {
            chart,
            trace: BuildTrace::default(),
            root,
            entries: BTreeMap::new(),
            ends: BTreeMap::new(),
            by_intent: HashMap::new(),
        }
    }

    pub fn chart(&self) -> &Flowchart {
        &self.chart
    }

    pub fn trace(&self) -> &BuildTrace {
        &self.trace
    }

    fn new_node(&mut self, node_type: NodeType, label: String, domain: &str) -> String {
        let id = canonical_id(self.chart.node_count());
        self.chart
            .add_node(FlowNode::new(id.clone(), node_type, label).with_domain(domain))
            .expect("sequential ids are fresh");
        id
    }

    fn entry(&mut self, domain: &str) -> String {
        if let Some(id) = self.entries.get(domain) {
            return id.clone();
        }
        let id = self.new_node(NodeType::Action, format!("Route {} request", domain.replace('-', " ")), domain);
        self.chart
            .add_edge(FlowEdge::new(self.root.clone(), id.clone()))
            .expect("known endpoints");
        self.entries.insert(domain.to_string(), id.clone());
        id
    }

    fn end(&mut self, domain: &str) -> String {
        if let Some(id) = self.ends.get(domain) {
            return id.clone();
        }
        let id = self.new_node(NodeType::End, format!("Complete {} task", domain.replace('-', " ")), domain);
        self.ends.insert(domain.to_string(), id.clone());
        id
    }

    /// Whether `to` already reaches `from` through start/action/decision
    /// nodes, so that `from -> to` would close a cycle without a
    /// loop-closing node.
    fn closes_illegal_cycle(&self, from: &str, to: &str) -> bool {
        let restricted = |id: &str| !self.chart.node(id).expect("known").node_type.closes_loops();
        if !restricted(from) || !restricted(to) {
            return false;
        }
        let mut stack = vec![to.to_string()];
        let mut seen = std::collections::HashSet::new();
        while let Some(v) = stack.pop() {
            if v == from {
                return true;
            }
            if !seen.insert(v.clone()) {
                continue;
            }
            for (e, n) in self.chart.successors(&v).expect("known") {
                if restricted(&n.id) {
                    stack.push(e.to.clone());
                }
            }
        }
        false
    }

    /// Adds `from -> to` unless it exists, is a self-loop, or would create
    /// an illegal cycle. Returns whether it was added.
    fn link(&mut self, from: &str, to: &str, entry: &mut TraceEntry) -> bool {
        if from == to || self.chart.contains_edge(from, to) {
            return false;
        }
        if self.closes_illegal_cycle(from, to) {
            entry.edges_skipped.push((from.to_string(), to.to_string()));
            return false;
        }
        self.chart
            .add_edge(FlowEdge::new(from, to))
            .expect("known endpoints");
        entry.edges_added.push((from.to_string(), to.to_string()));
        true
    }

    pub fn add_dialogue(&mut self, d: &Dialogue, oracle: &dyn OracleBackend) -> Result<(), ConstructionError> {
        let pairs = pair_up(d);
        let last = pairs.len().saturating_sub(1);
        let mut prev: Option<String> = None;
        let mut domain: Option<String> = None;
        let mut ended = false;
        for (i, pair) in pairs.iter().enumerate() {
            let fail = |source| ConstructionError::Oracle {
                dialogue: d.id.clone(),
                pair: pair.index,
                source,
            };
            let answer = oracle
                .complete(&OracleRequest::domain(&pair.customer.text, &pair.agent.text))
                .map_err(fail)?;
            let mut domains = parse_domains(&answer);
            if domains.is_empty() {
                domains.push(DOMAIN_FALLBACK.to_string());
            }
            let dom = domains.remove(0);

            if domain.as_deref() != Some(dom.as_str()) {
                // A domain switch closes the running segment.
                if let (Some(p), Some(old)) = (prev.take(), domain.take()) {
                    let end = self.end(&old);
                    let mut scratch = self.blank_placeholder();
                    self.link(&p, &end, &mut scratch);
                    self.attach_edges(scratch);
                }
                prev = Some(self.entry(&dom));
                domain = Some(dom.clone());
            }
            let from = prev.clone().expect("set above");

            let raw = oracle
                .complete(&OracleRequest::intent(&pair.customer.text, &pair.agent.text, &dom))
                .map_err(fail)?;
            let intent = crate::corpus::normalize_intent(&raw);

            let mut entry = self.blank_entry(d, pair, &dom);
            entry.alternate_domains = domains;
            entry.intent = intent.clone();

            let key = (dom.clone(), intent.clone());
            let target = if let Some(id) = self.by_intent.get(&key).cloned() {
                entry.decision = Decision::Reused;
                id
            } else {
                let answer = oracle
                    .complete(&OracleRequest::node_type(&intent, &dom))
                    .map_err(fail)?;
                let t = parse_node_type(&answer).ok_or_else(|| ConstructionError::NodeTypeAnswer {
                    dialogue: d.id.clone(),
                    pair: pair.index,
                    answer: answer.clone(),
                })?;
                if t == NodeType::Start && i == 0 {
                    entry.decision = Decision::Structural;
                    entry.node_id = from.clone();
                    entry.customer_node = self.root.clone();
                    entry.agent_node = from.clone();
                    self.trace.entries.push(entry);
                    continue;
                }
                if t == NodeType::End && i == last {
                    let end = self.end(&dom);
                    entry.decision = Decision::Structural;
                    self.link(&from, &end, &mut entry);
                    entry.node_id = end.clone();
                    entry.customer_node = end.clone();
                    entry.agent_node = end;
                    self.trace.entries.push(entry);
                    ended = true;
                    continue;
                }
                let t = match t {
                    NodeType::Start | NodeType::End => NodeType::Action,
                    t => t,
                };
                let id = self.new_node(t, intent_label(&intent), &dom);
                if let Some(n) = self.chart.node_mut(&id) {
                    n.intent = Some(intent.clone());
                }
                self.by_intent.insert(key, id.clone());
                entry.decision = Decision::Created;
                id
            };
            self.link(&from, &target, &mut entry);
            entry.node_id = target.clone();
            entry.customer_node = target.clone();
            entry.agent_node = target.clone();
            self.trace.entries.push(entry);
            prev = Some(target);
        }
        if !ended {
            if let (Some(p), Some(dom)) = (prev, domain) {
                let end = self.end(&dom);
                let mut scratch = self.blank_placeholder();
                self.link(&p, &end, &mut scratch);
                self.attach_edges(scratch);
            }
        }
        Ok(())
    }

    fn blank_entry(&self, d: &Dialogue, pair: &UtterancePair, domain: &str) -> TraceEntry {
        TraceEntry {
            dialogue_id: d.id.clone(),
            pair_index: pair.index,
            domain: domain.to_string(),
            alternate_domains: Vec::new(),
            intent: String::new(),
            decision: Decision::Created,
            node_id: String::new(),
            customer_node: String::new(),
            agent_node: String::new(),
            customer_utterances: pair.customer_sources.clone(),
            agent_utterances: pair.agent_sources.clone(),
            edges_added: Vec::new(),
            edges_skipped: Vec::new(),
        }
    }

    fn blank_placeholder(&self) -> TraceEntry {
        TraceEntry {
            dialogue_id: String::new(),
            pair_index: 0,
            domain: String::new(),
            alternate_domains: Vec::new(),
            intent: String::new(),
            decision: Decision::Structural,
            node_id: String::new(),
            customer_node: String::new(),
            agent_node: String::new(),
            customer_utterances: Vec::new(),
            agent_utterances: Vec::new(),
            edges_added: Vec::new(),
            edges_skipped: Vec::new(),
        }
    }

    /// Credits segment-closing edges to the latest trace entry.
    fn attach_edges(&mut self, scratch: TraceEntry) {
        if let Some(e) = self.trace.entries.last_mut() {
            e.edges_added.extend(scratch.edges_added);
            e.edges_skipped.extend(scratch.edges_skipped);
        }
    }

    /// The finished chart; fails only if construction produced an invalid
    /// chart, which would be a bug.
    pub fn finish(self) -> Result<(Flowchart, BuildTrace), ConstructionError> {
        let violations = self.chart.validate();
        if !violations.is_empty() {
            return Err(ConstructionError::Invalid(violations));
        }
        Ok((self.chart, self.trace))
    }
}

pub fn build_flowchart(
    name: &str,
    dialogues: &[Dialogue],
    oracle: &dyn OracleBackend,
) -> Result<(Flowchart, BuildTrace), ConstructionError> {
    if dialogues.is_empty() {
        return Err(ConstructionError::NoDialogues);
    }
    let mut b = Builder::new(name);
    for d in dialogues {
        b.add_dialogue(d, oracle)?;
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker::{Agent, Customer};
    use crate::oracle::{Lexicons, RuleOracle};

    fn dialogue(id: &str, turns: &[(Speaker, &str)]) -> Dialogue {
        Dialogue::from_turns(id, turns.iter().map(|&(s, t)| (s, t))).unwrap()
    }

    fn oracle() -> RuleOracle {
        RuleOracle::new(Lexicons::builtin())
    }

    #[test]
    fn pairing_rules() {
        let four = dialogue("d", &[(Customer, "a"), (Agent, "b"), (Customer, "c"), (Agent, "d")]);
        assert_eq!(pair_up(&four).len(), 2);
        let five = dialogue("d", &[(Customer, "a"), (Agent, "b"), (Customer, "c"), (Agent, "d"), (Customer, "e")]);
        assert_eq!(pair_up(&five).len(), 2);
        let merged = pair_up(&dialogue("d", &[(Customer, "a"), (Customer, "b"), (Agent, "c")]));
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].customer.text, "a b");
        assert_eq!(merged[0].customer_sources, vec![0, 1]);
        assert_eq!(merged[0].agent_sources, vec![2]);
        let agent_first = pair_up(&dialogue("d", &[(Agent, "x"), (Customer, "a"), (Agent, "b")]));
        assert_eq!(agent_first.len(), 1);
        assert_eq!(agent_first[0].customer.text, "a");
    }

    #[test]
    fn two_pair_dialogue_gives_five_nodes() {
        let d = dialogue(
            "d1",
            &[
                (Customer, "how much is the table"),
                (Agent, "the price is fair"),
                (Customer, "what is the address of the restaurant"),
                (Agent, "it is located in town"),
            ],
        );
        let (chart, trace) = build_flowchart("t", &[d], &oracle()).unwrap();
        assert_eq!(chart.node_count(), 5);
        assert_eq!(chart.edge_count(), 4);
        assert_eq!(trace.entries.len(), 2);
        let ids: Vec<_> = trace.entries.iter().map(|e| e.node_id.as_str()).collect();
        assert_eq!(ids, vec!["C", "D"]);
        assert!(chart.contains_edge("A", "B"));
        assert!(chart.contains_edge("B", "C"));
        assert!(chart.contains_edge("C", "D"));
        assert!(chart.contains_edge("D", "E"));
        assert_eq!(chart.node("E").unwrap().node_type, NodeType::End);
        assert_eq!(chart.node("E").unwrap().label, "Complete restaurant task");
        assert_eq!(trace.oracle_calls(), 6);
    }

    #[test]
    fn repeating_a_dialogue_changes_nothing() {
        let d = dialogue(
            "d1",
            &[(Customer, "how much is the table"), (Agent, "fair price"), (Customer, "address of the restaurant"), (Agent, "in town")],
        );
        let mut d2 = d.clone();
        d2.id = "d2".into();
        let (one, _) = build_flowchart("t", std::slice::from_ref(&d), &oracle()).unwrap();
        let (two, trace) = build_flowchart("t", &[d, d2], &oracle()).unwrap();
        assert_eq!(one, two);
        assert!(trace.entries[2..].iter().all(|e| e.decision == Decision::Reused));
        assert!(trace.entries[2..].iter().all(|e| e.edges_added.is_empty()));
    }

    #[test]
    fn shared_prefix_branches() {
        let a = dialogue("a", &[(Customer, "how much does the restaurant cost"), (Agent, "fair"), (Customer, "address of the restaurant"), (Agent, "ok")]);
        let b = dialogue("b", &[(Customer, "how much does the restaurant cost"), (Agent, "fair"), (Customer, "phone number of the restaurant"), (Agent, "ok")]);
        let (chart, _) = build_flowchart("t", &[a, b], &oracle()).unwrap();
        let shared = chart.nodes().find(|n| n.intent.as_deref() == Some("inquire-price")).unwrap();
        assert_eq!(chart.out_degree(&shared.id), 2);
    }

    #[test]
    fn start_and_end_pairs_are_absorbed() {
        let d = dialogue(
            "g",
            &[
                (Customer, "hello restaurant"),
                (Agent, "hi"),
                (Customer, "book a table"),
                (Agent, "booked"),
                (Customer, "thanks bye restaurant"),
                (Agent, "goodbye"),
            ],
        );
        let (chart, trace) = build_flowchart("t", std::slice::from_ref(&d), &oracle()).unwrap();
        let decisions: Vec<_> = trace.entries.iter().map(|e| e.decision).collect();
        assert_eq!(decisions, vec![Decision::Structural, Decision::Created, Decision::Structural]);
        // root, entry, book-table, end
        assert_eq!(chart.node_count(), 4);
        let a = trace.assignment(&d);
        let seq: Vec<_> = a.per_utterance.iter().map(|n| n.as_deref().unwrap()).collect();
        assert_eq!(seq, vec!["A", "B", "C", "C", "D", "D"]);
    }

    #[test]
    fn start_typed_intents_mid_dialogue_become_actions() {
        let d = dialogue(
            "g",
            &[(Customer, "book a table"), (Agent, "ok"), (Customer, "hello restaurant"), (Agent, "hi"), (Customer, "book a table"), (Agent, "ok")],
        );
        let (chart, _) = build_flowchart("t", &[d], &oracle()).unwrap();
        let greet = chart.nodes().find(|n| n.intent.as_deref() == Some("greet-customer")).unwrap();
        assert_eq!(greet.node_type, NodeType::Action);
        // book-table -> greet -> book-table would be an action cycle.
        assert!(chart.is_valid());
    }

    #[test]
    fn domain_switch_closes_the_segment() {
        let d = dialogue("m", &[(Customer, "a table at the restaurant"), (Agent, "ok"), (Customer, "a taxi please"), (Agent, "ok")]);
        let (chart, _) = build_flowchart("t", &[d], &oracle()).unwrap();
        assert_eq!(chart.nodes_of_type(NodeType::End).count(), 2);
        assert!(chart.is_valid());
    }

    #[test]
    fn cost_estimate_bounds() {
        let d = dialogue("x", &[(Customer, "a"), (Agent, "b"), (Customer, "c"), (Agent, "d"), (Customer, "e"), (Agent, "f"), (Customer, "g"), (Agent, "h")]);
        let ds: Vec<_> = (0..10).map(|i| { let mut c = d.clone(); c.id = i.to_string(); c }).collect();
        let est = estimate_cost(&ds, Duration::from_millis(100));
        assert_eq!((est.pairs, est.max_calls, est.min_calls), (40, 120, 80));
        assert_eq!(est.max_time, Duration::from_secs(12));
        assert_eq!(estimate_cost(&[], Duration::from_secs(1)).max_calls, 0);
    }
}
