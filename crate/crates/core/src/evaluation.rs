//! Utterance Matching Ratio (UMR) and Complete Path Coverage (CPC).
//!
//! Both metrics start from a [`NodeAssignment`]: each utterance of a
//! dialogue is mapped to a chart node or left unmatched. UMR is the matched
//! fraction. A dialogue counts towards CPC when, from the first utterance
//! mapped to a start node up to the next one mapped to an end node, no
//! utterance is unmatched and the mapped nodes (with repeats collapsed) form
//! a walk along chart edges. The relaxed variant accepts any such window.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Dialogue, Speaker};
use crate::flowchart::{Flowchart, NodeType};
use crate::oracle::{OracleBackend, OracleError, OracleRequest};
use crate::text::{keywords, tokens};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dialogue `{dialogue}` has {expected} utterances but {got} assignments")]
    LengthMismatch { dialogue: String, expected: usize, got: usize },
    #[error("{dialogues} dialogues but {assignments} assignments")]
    CountMismatch { dialogues: usize, assignments: usize },
    #[error("dialogue `{dialogue}` is assigned to unknown node `{node}`")]
    UnknownNode { dialogue: String, node: String },
    #[error("no dialogues to evaluate")]
    EmptyDataset,
    #[error("dialogue `{dialogue}`, utterance {utterance}: {source}")]
    Oracle {
        dialogue: String,
        utterance: usize,
        #[source]
        source: OracleError,
    },
}

/// Node (or no match) per utterance, in utterance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeAssignment {
    pub per_utterance: Vec<Option<String>>,
}

impl NodeAssignment {
    pub fn new(per_utterance: Vec<Option<String>>) -> Self {
        NodeAssignment { per_utterance }
    }

    pub fn len(&self) -> usize {
        self.per_utterance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_utterance.is_empty()
    }

    pub fn matched(&self) -> usize {
        self.per_utterance.iter().filter(|n| n.is_some()).count()
    }
}

pub fn umr(d: &Dialogue, a: &NodeAssignment) -> Result<f64, EvalError> {
    check_length(d, a)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.matched() as f64 / a.len() as f64)
}

fn check_length(d: &Dialogue, a: &NodeAssignment) -> Result<(), EvalError> {
    if d.utterances.len() != a.len() {
        return Err(EvalError::LengthMismatch {
            dialogue: d.id.clone(),
            expected: d.utterances.len(),
            got: a.len(),
        });
    }
    Ok(())
}

fn node_type(chart: &Flowchart, id: &Option<String>) -> Option<NodeType> {
    id.as_deref().and_then(|i| chart.node(i)).map(|n| n.node_type)
}

/// Whether `seq[i..]` starting at a start node reaches an end node without
/// gaps or jumps; returns the end position.
fn walk_from(chart: &Flowchart, seq: &[Option<String>], i: usize) -> Option<usize> {
    let mut current = seq[i].as_deref()?;
    for (j, step) in seq.iter().enumerate().skip(i + 1) {
        let next = step.as_deref()?;
        if next != current {
            if !chart.contains_edge(current, next) {
                return None;
            }
            current = next;
        }
        if node_type(chart, step) == Some(NodeType::End) {
            return Some(j);
        }
    }
    None
}

/// Strict or relaxed complete-path test for one mapped sequence.
pub fn is_complete_path(chart: &Flowchart, seq: &[Option<String>], relaxed: bool) -> bool {
    let starts = seq
        .iter()
        .enumerate()
        .filter(|(_, n)| node_type(chart, n) == Some(NodeType::Start))
        .map(|(i, _)| i);
    if relaxed {
        starts.into_iter().any(|i| walk_from(chart, seq, i).is_some())
    } else {
        let mut starts = starts;
        let Some(i) = starts.next() else {
            return false;
        };
        // The strict window ends at the first end node after the start; the
        // walk must reach exactly that position.
        let Some(first_end) = seq[i + 1..]
            .iter()
            .position(|n| node_type(chart, n) == Some(NodeType::End))
            .map(|p| p + i + 1)
        else {
            return false;
        };
        walk_from(chart, seq, i) == Some(first_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DialogueScore {
    pub dialogue_id: String,
    pub umr: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageReport {
    pub umr_per_dialogue: Vec<DialogueScore>,
    pub umr_avg: f64,
    pub cpc: f64,
    pub relaxed: bool,
}

/// UMR per dialogue and the dataset CPC.
pub fn cpc(
    chart: &Flowchart,
    dialogues: &[Dialogue],
    assignments: &[NodeAssignment],
    relaxed: bool,
) -> Result<CoverageReport, EvalError> {
    if dialogues.len() != assignments.len() {
        return Err(EvalError::CountMismatch {
            dialogues: dialogues.len(),
            assignments: assignments.len(),
        });
    }
    if dialogues.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut scores = Vec::with_capacity(dialogues.len());
    for (d, a) in dialogues.iter().zip(assignments) {
        check_length(d, a)?;
        if let Some(bad) = a.per_utterance.iter().flatten().find(|n| chart.node(n).is_none()) {
            return Err(EvalError::UnknownNode {
                dialogue: d.id.clone(),
                node: bad.clone(),
            });
        }
        scores.push(DialogueScore {
            dialogue_id: d.id.clone(),
            umr: umr(d, a)?,
            complete: is_complete_path(chart, &a.per_utterance, relaxed),
        });
    }
    let n = scores.len() as f64;
    Ok(CoverageReport {
        umr_avg: scores.iter().map(|s| s.umr).sum::<f64>() / n,
        cpc: scores.iter().filter(|s| s.complete).count() as f64 / n,
        umr_per_dialogue: scores,
        relaxed,
    })
}

/// Keyword to node table for [`classify_by_rules`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordLexicon {
    pub keywords: BTreeMap<String, BTreeSet<String>>,
}

impl KeywordLexicon {
    /// Every node's label keywords point at the node.
    pub fn from_flowchart(chart: &Flowchart) -> Self {
        let mut lx = KeywordLexicon::default();
        for n in chart.nodes() {
            for k in keywords(&n.label) {
                lx.insert(&k, &n.id);
            }
        }
        lx
    }

    pub fn insert(&mut self, keyword: &str, node: &str) {
        self.keywords
            .entry(keyword.to_lowercase())
            .or_default()
            .insert(node.to_string());
    }
}

/// Assigns each utterance to the node sharing the most lexicon keywords with
/// it; ties go to the smallest node id and zero overlap is unmatched.
pub fn classify_by_rules(dialogue: &Dialogue, lexicon: &KeywordLexicon) -> NodeAssignment {
    let per_utterance = dialogue
        .utterances
        .iter()
        .map(|u| {
            let words: BTreeSet<String> = tokens(&u.text).into_iter().collect();
            let mut score: BTreeMap<&str, usize> = BTreeMap::new();
            for w in &words {
                for node in lexicon.keywords.get(w).into_iter().flatten() {
                    *score.entry(node).or_default() += 1;
                }
            }
            let mut best: Option<(&str, usize)> = None;
            for (node, s) in score {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((node, s));
                }
            }
            best.map(|(n, _)| n.to_string())
        })
        .collect();
    NodeAssignment::new(per_utterance)
}

/// An oracle answer that was neither a node id nor `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ParseWarning {
    pub dialogue_id: String,
    pub utterance: usize,
    pub response: String,
}

/// Reads a matching answer: a bare node id, or `None`. Anything else is
/// unmatched and reported.
pub fn parse_match(chart: &Flowchart, answer: &str) -> Result<Option<String>, ()> {
    let cleaned = answer
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.')
        .trim();
    if cleaned.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    if chart.node(cleaned).is_some() {
        return Ok(Some(cleaned.to_string()));
    }
    Err(())
}

/// Asks the oracle for every utterance with at most `max_in_flight`
/// requests outstanding.
pub fn classify_by_oracle(
    chart: &Flowchart,
    dialogue: &Dialogue,
    oracle: &dyn OracleBackend,
    max_in_flight: usize,
) -> Result<(NodeAssignment, Vec<ParseWarning>), EvalError> {
    let nodes: Vec<(&str, &str)> = chart.nodes().map(|n| (n.id.as_str(), n.label.as_str())).collect();
    let n = dialogue.utterances.len();
    let results: Mutex<Vec<Option<Result<String, OracleError>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let req = OracleRequest::utterance_match(&dialogue.utterances[i].text, nodes.iter().copied());
                let r = oracle.complete(&req);
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    let mut per_utterance = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for (i, r) in results.into_inner().expect("results poisoned").into_iter().enumerate() {
        let answer = r.expect("every index visited").map_err(|source| EvalError::Oracle {
            dialogue: dialogue.id.clone(),
            utterance: i,
            source,
        })?;
        match parse_match(chart, &answer) {
            Ok(m) => per_utterance.push(m),
            Err(()) => {
                log::warn!("dialogue {} utterance {i}: unparseable match `{answer}`", dialogue.id);
                warnings.push(ParseWarning {
                    dialogue_id: dialogue.id.clone(),
                    utterance: i,
                    response: answer,
                });
                per_utterance.push(None);
            }
        }
    }
    Ok((NodeAssignment::new(per_utterance), warnings))
}

/// How utterances are mapped to nodes during [`evaluate`].
pub enum Classifier<'a> {
    Rules(KeywordLexicon),
    Oracle { backend: &'a dyn OracleBackend, max_in_flight: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub relaxed: bool,
    /// Evaluate only this speaker's utterances.
    pub speaker: Option<Speaker>,
}

/// Classifies every dialogue and scores the dataset.
pub fn evaluate(
    chart: &Flowchart,
    dialogues: &[Dialogue],
    classifier: &Classifier<'_>,
    opts: EvalOptions,
) -> Result<(CoverageReport, Vec<ParseWarning>), EvalError> {
    let dialogues: Vec<Dialogue> = match opts.speaker {
        Some(s) => dialogues.iter().map(|d| d.restricted_to(s)).collect(),
        None => dialogues.to_vec(),
    };
    let mut assignments = Vec::with_capacity(dialogues.len());
    let mut warnings = Vec::new();
    for d in &dialogues {
        match classifier {
            Classifier::Rules(lx) => assignments.push(classify_by_rules(d, lx)),
            Classifier::Oracle { backend, max_in_flight } => {
                let (a, w) = classify_by_oracle(chart, d, *backend, *max_in_flight)?;
                assignments.push(a);
                warnings.extend(w);
            }
        }
    }
    Ok((cpc(chart, &dialogues, &assignments, opts.relaxed)?, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker::{Agent, Customer};
    use crate::fixtures::account_inquiry;
    use crate::oracle::{Lexicons, RuleOracle};

    fn dialogue(n: usize) -> Dialogue {
        let turns = (0..n).map(|i| (if i % 2 == 0 { Customer } else { Agent }, format!("u{i}")));
        Dialogue::from_turns("d", turns).unwrap()
    }

    fn seq(ids: &[&str]) -> Vec<Option<String>> {
        ids.iter()
            .map(|s| if s.is_empty() { None } else { Some(s.to_string()) })
            .collect()
    }

    #[test]
    fn umr_values() {
        let d = dialogue(4);
        assert_eq!(umr(&d, &NodeAssignment::new(seq(&["A", "B", "", "J"]))).unwrap(), 0.75);
        assert_eq!(umr(&d, &NodeAssignment::new(seq(&["A", "B", "C", "J"]))).unwrap(), 1.0);
        assert_eq!(umr(&d, &NodeAssignment::new(seq(&["", "", "", ""]))).unwrap(), 0.0);
        assert!(matches!(
            umr(&d, &NodeAssignment::new(seq(&["A"]))),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn complete_paths_on_the_reference_chart() {
        let f = account_inquiry();
        assert!(is_complete_path(&f, &seq(&["A", "B", "N", "R", "J"]), false));
        assert!(is_complete_path(&f, &seq(&["A", "A", "B", "B", "N", "R", "J"]), false));
        // Gap between the endpoints.
        assert!(!is_complete_path(&f, &seq(&["A", "B", "", "R", "J"]), false));
        // B -> R is not an edge.
        assert!(!is_complete_path(&f, &seq(&["A", "B", "R", "J"]), false));
        // Loop back to the triage node is a legal walk.
        assert!(is_complete_path(&f, &seq(&["A", "B", "N", "R", "B", "N", "R", "J"]), false));
        assert!(!is_complete_path(&f, &seq(&["B", "N", "R", "J"]), false));
        assert!(!is_complete_path(&f, &seq(&["A", "B", "N", "R"]), false));
    }

    #[test]
    fn relaxed_accepts_a_later_window() {
        let f = account_inquiry();
        let s = seq(&["A", "", "J", "A", "B", "N", "R", "J"]);
        assert!(!is_complete_path(&f, &s, false));
        assert!(is_complete_path(&f, &s, true));
    }

    #[test]
    fn dataset_cpc_and_empty_dataset() {
        let f = account_inquiry();
        let d = dialogue(5);
        let mut d2 = d.clone();
        d2.id = "e".into();
        let good = NodeAssignment::new(seq(&["A", "B", "N", "R", "J"]));
        let bad = NodeAssignment::new(seq(&["A", "B", "", "R", "J"]));
        let r = cpc(&f, &[d, d2], &[good, bad], false).unwrap();
        assert_eq!(r.cpc, 0.5);
        assert_eq!(r.umr_avg, 0.9);
        assert!(matches!(cpc(&f, &[], &[], false), Err(EvalError::EmptyDataset)));
    }

    #[test]
    fn unknown_nodes_are_rejected() {
        let f = account_inquiry();
        let d = dialogue(1);
        let err = cpc(&f, &[d], &[NodeAssignment::new(seq(&["ZZ"]))], false).unwrap_err();
        assert!(matches!(err, EvalError::UnknownNode { .. }));
    }

    #[test]
    fn rule_classifier() {
        let mut lx = KeywordLexicon::default();
        lx.insert("balance", "E");
        lx.insert("tie", "E");
        lx.insert("tie", "D");
        let d = Dialogue::from_turns("d", [(Customer, "check my balance"), (Agent, "nothing here"), (Customer, "a tie")]).unwrap();
        let a = classify_by_rules(&d, &lx);
        assert_eq!(a.per_utterance, seq(&["E", "", "D"]));
    }

    struct Scripted(Vec<&'static str>);

    impl OracleBackend for Scripted {
        fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
            let u = req.get("utterance").unwrap();
            let i: usize = u[1..].parse().unwrap();
            Ok(self.0[i].to_string())
        }
    }

    #[test]
    fn oracle_answers_are_parsed_leniently() {
        let f = account_inquiry();
        let d = dialogue(4);
        let o = Scripted(vec!["E", "None", "I think node E", " 'R'. "]);
        let (a, w) = classify_by_oracle(&f, &d, &o, 2).unwrap();
        assert_eq!(a.per_utterance, seq(&["E", "", "", "R"]));
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].utterance, 2);
        assert_eq!(w[0].response, "I think node E");
    }

    #[test]
    fn evaluate_with_rule_oracle_backend() {
        let f = account_inquiry();
        let d = Dialogue::from_turns(
            "d",
            [(Customer, "Begin Customer Account Inquiry"), (Agent, "Perform Charge Check"), (Customer, "weather")],
        )
        .unwrap();
        let o = RuleOracle::new(Lexicons::default());
        let (r, _) = evaluate(
            &f,
            std::slice::from_ref(&d),
            &Classifier::Oracle { backend: &o, max_in_flight: 4 },
            EvalOptions { relaxed: false, speaker: Some(Customer) },
        )
        .unwrap();
        assert_eq!(r.umr_per_dialogue[0].umr, 0.5);
    }
}
