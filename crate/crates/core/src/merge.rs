//! Merging locally built flowcharts into one global chart.
//!
//! All nodes of all input charts are pooled and clustered by token
//! similarity. A cluster judged coherent collapses into one representative
//! node that inherits every predecessor and successor edge of its members;
//! an incoherent cluster keeps its members as they were. Only node labels
//! and edges cross chart boundaries, never dialogue text.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::flowchart::{canonical_id, FlowEdge, FlowNode, Flowchart, Violation};
use crate::mermaid;
use crate::oracle::{parse_verdict, OracleBackend, OracleError, OracleRequest};
use crate::text::{jaccard, keywords};

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.5;
pub const DEFAULT_COHERENCE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("no charts to merge")]
    NoCharts,
    #[error("input chart {index} (`{name}`) is invalid: {violations:?}")]
    InvalidInput { index: usize, name: String, violations: Vec<Violation> },
    #[error("merged chart is invalid: {0:?}")]
    InvalidOutput(Vec<Violation>),
    #[error("coherence oracle failed: {0}")]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    /// Position of the origin chart in the (canonically sorted) input.
    pub chart: usize,
    pub node: FlowNode,
    pub tokens: BTreeSet<String>,
}

/// Every node of every chart, with provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodePool {
    pub entries: Vec<PoolEntry>,
}

/// Tokens used for similarity: label keywords plus intent keywords.
pub fn node_tokens(node: &FlowNode) -> BTreeSet<String> {
    let mut t = keywords(&node.label);
    if let Some(i) = &node.intent {
        t.extend(keywords(i));
    }
    t
}

impl NodePool {
    pub fn from_charts(charts: &[Flowchart]) -> Self {
        let entries = charts
            .iter()
            .enumerate()
            .flat_map(|(c, chart)| {
                chart.nodes().map(move |n| PoolEntry {
                    chart: c,
                    node: n.clone(),
                    tokens: node_tokens(n),
                })
            })
            .collect();
        NodePool { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        jaccard(&self.entries[a].tokens, &self.entries[b].tokens)
    }
}

/// Average-linkage agglomerative clustering cut at `threshold`. Two nodes of
/// the same chart never share a cluster. Clusters come out ordered by their
/// smallest member; members are ascending.
pub fn cluster_nodes(pool: &NodePool, threshold: f64) -> Vec<Vec<usize>> {
    let n = pool.len();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| pool.similarity(a, b)).collect())
        .collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[j]);
                let shares_chart = a
                    .iter()
                    .any(|&x| b.iter().any(|&y| pool.entries[x].chart == pool.entries[y].chart));
                if shares_chart {
                    continue;
                }
                let total: f64 = a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).map(|(x, y)| sim[x][y]).sum();
                let avg = total / (a.len() * b.len()) as f64;
                if avg >= threshold && best.is_none_or(|(_, _, s)| avg > s) {
                    best = Some((i, j, avg));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let absorbed = clusters.remove(j);
        clusters[i].extend(absorbed);
        clusters[i].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Decides whether a cluster may collapse into one node.
pub trait CoherenceJudge {
    fn judge(&self, pool: &NodePool, members: &[usize]) -> Result<bool, MergeError>;
}

fn same_type(pool: &NodePool, members: &[usize]) -> bool {
    members
        .windows(2)
        .all(|w| pool.entries[w[0]].node.node_type == pool.entries[w[1]].node.node_type)
}

/// Coherent iff all members share a node type and every pair has Jaccard
/// similarity at least `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleJudge {
    pub threshold: f64,
}

impl Default for RuleJudge {
    fn default() -> Self {
        RuleJudge { threshold: DEFAULT_COHERENCE_THRESHOLD }
    }
}

impl CoherenceJudge for RuleJudge {
    fn judge(&self, pool: &NodePool, members: &[usize]) -> Result<bool, MergeError> {
        if !same_type(pool, members) {
            return Ok(false);
        }
        Ok(members.iter().enumerate().all(|(k, &a)| {
            members[k + 1..].iter().all(|&b| pool.similarity(a, b) >= self.threshold)
        }))
    }
}

/// Asks an oracle for a yes/no verdict on same-typed clusters. Singletons
/// are coherent without a call; unclear answers count as no.
pub struct OracleJudge<'a> {
    pub backend: &'a dyn OracleBackend,
}

impl CoherenceJudge for OracleJudge<'_> {
    fn judge(&self, pool: &NodePool, members: &[usize]) -> Result<bool, MergeError> {
        if members.len() < 2 {
            return Ok(true);
        }
        if !same_type(pool, members) {
            return Ok(false);
        }
        let ids: Vec<String> = members
            .iter()
            .map(|&m| format!("{}.{}", pool.entries[m].chart, pool.entries[m].node.id))
            .collect();
        let req = OracleRequest::coherence(
            ids.iter()
                .zip(members)
                .map(|(id, &m)| (id.as_str(), pool.entries[m].node.label.as_str())),
        );
        let answer = self.backend.complete(&req)?;
        Ok(parse_verdict(&answer).unwrap_or_else(|| {
            log::warn!("unclear coherence verdict `{answer}`; keeping nodes apart");
            false
        }))
    }
}

/// Cluster member with the highest average similarity to the others; ties
/// go to the lexicographically smallest label, then to pool order.
pub fn medoid(pool: &NodePool, members: &[usize]) -> usize {
    let avg = |m: usize| -> f64 {
        if members.len() == 1 {
            return 1.0;
        }
        members.iter().filter(|&&o| o != m).map(|&o| pool.similarity(m, o)).sum::<f64>()
            / (members.len() - 1) as f64
    };
    let mut best = members[0];
    let mut best_avg = avg(best);
    for &m in &members[1..] {
        let a = avg(m);
        let better = a > best_avg
            || (a == best_avg && pool.entries[m].node.label < pool.entries[best].node.label);
        if better {
            best = m;
            best_avg = a;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub name: String,
    pub threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            name: "global".into(),
            threshold: DEFAULT_CLUSTER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemberRef {
    pub chart: String,
    pub node: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterReport {
    pub members: Vec<MemberRef>,
    pub coherent: bool,
    pub representative: Option<MemberRef>,
    /// Ids of the nodes this cluster became in the global chart.
    pub global_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MergeReport {
    pub threshold: f64,
    pub input_nodes: usize,
    pub input_edges: usize,
    pub output_nodes: usize,
    pub output_edges: usize,
    pub dropped_self_loops: usize,
    pub clusters: Vec<ClusterReport>,
}

/// Merges `charts`. Inputs are put in canonical order first, so the result
/// does not depend on the order they are given in.
pub fn merge_global(
    charts: &[Flowchart],
    config: &MergeConfig,
    judge: &dyn CoherenceJudge,
) -> Result<(Flowchart, MergeReport), MergeError> {
    if charts.is_empty() {
        return Err(MergeError::NoCharts);
    }
    let mut keyed = Vec::with_capacity(charts.len());
    for (index, c) in charts.iter().enumerate() {
        let text = mermaid::serialize(c).map_err(|_| MergeError::InvalidInput {
            index,
            name: c.name.clone(),
            violations: c.validate(),
        })?;
        keyed.push((text, c.name.clone(), index));
    }
    keyed.sort();
    let charts: Vec<&Flowchart> = keyed.iter().map(|&(_, _, i)| &charts[i]).collect();
    let owned: Vec<Flowchart> = charts.iter().map(|c| (*c).clone()).collect();
    let pool = NodePool::from_charts(&owned);
    let clusters = cluster_nodes(&pool, config.threshold);

    // Global node per pool entry, in order of first appearance.
    let mut global_of = vec![usize::MAX; pool.len()];
    let mut global_nodes: Vec<(usize, FlowNode)> = Vec::new();
    let mut verdicts = Vec::with_capacity(clusters.len());
    for members in &clusters {
        let coherent = members.len() == 1 || judge.judge(&pool, members)?;
        verdicts.push(coherent);
        if coherent {
            let rep = medoid(&pool, members);
            let g = global_nodes.len();
            global_nodes.push((members[0], pool.entries[rep].node.clone()));
            for &m in members {
                global_of[m] = g;
            }
        } else {
            for &m in members {
                global_of[m] = global_nodes.len();
                global_nodes.push((m, pool.entries[m].node.clone()));
            }
        }
    }
    let mut order: Vec<usize> = (0..global_nodes.len()).collect();
    order.sort_by_key(|&g| global_nodes[g].0);
    let mut id_of = vec![String::new(); global_nodes.len()];
    for (rank, &g) in order.iter().enumerate() {
        id_of[g] = canonical_id(rank);
    }

    let mut out = Flowchart::new(config.name.clone());
    for &g in &order {
        let mut node = global_nodes[g].1.clone();
        node.id = id_of[g].clone();
        out.add_node(node).expect("fresh ids");
    }
    let mut entry_of: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (k, e) in pool.entries.iter().enumerate() {
        entry_of.insert((e.chart, e.node.id.as_str()), k);
    }
    let mut dropped = 0;
    let mut input_edges = 0;
    for (c, chart) in owned.iter().enumerate() {
        for e in chart.edges() {
            input_edges += 1;
            let from = &id_of[global_of[entry_of[&(c, e.from.as_str())]]];
            let to = &id_of[global_of[entry_of[&(c, e.to.as_str())]]];
            if from == to && e.from != e.to {
                dropped += 1;
                continue;
            }
            let edge = FlowEdge {
                from: from.clone(),
                to: to.clone(),
                condition: e.condition.clone(),
            };
            out.add_edge(edge).expect("known endpoints");
        }
    }
    let violations = out.validate();
    if !violations.is_empty() {
        return Err(MergeError::InvalidOutput(violations));
    }

    let member = |m: usize| MemberRef {
        chart: owned[pool.entries[m].chart].name.clone(),
        node: pool.entries[m].node.id.clone(),
        label: pool.entries[m].node.label.clone(),
    };
    let report = MergeReport {
        threshold: config.threshold,
        input_nodes: pool.len(),
        input_edges,
        output_nodes: out.node_count(),
        output_edges: out.edge_count(),
        dropped_self_loops: dropped,
        clusters: clusters
            .iter()
            .zip(&verdicts)
            .map(|(members, &coherent)| {
                let mut ids: Vec<String> = members.iter().map(|&m| id_of[global_of[m]].clone()).collect();
                ids.dedup();
                ClusterReport {
                    members: members.iter().map(|&m| member(m)).collect(),
                    coherent,
                    representative: coherent.then(|| member(medoid(&pool, members))),
                    global_ids: ids,
                }
            })
            .collect(),
    };
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    /// `node X` or `edge X -> Y`.
    pub location: String,
    pub pattern: String,
    pub matched: String,
}

/// Patterns flagging personal data in labels before a chart is shared.
#[derive(Debug, Clone)]
pub struct PrivacyPatterns {
    pub patterns: Vec<(String, Regex)>,
    /// Lowercase personal names matched as whole tokens.
    pub names: BTreeSet<String>,
}

impl Default for PrivacyPatterns {
    fn default() -> Self {
        PrivacyPatterns {
            patterns: vec![
                ("digit-run".into(), Regex::new(r"\d{6,}").expect("valid regex")),
                (
                    "email".into(),
                    Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}").expect("valid regex"),
                ),
            ],
            names: BTreeSet::new(),
        }
    }
}

impl PrivacyPatterns {
    /// Adds names, one per line; blank lines and `#` comments are ignored.
    pub fn with_names_text(mut self, text: &str) -> Self {
        self.names.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase),
        );
        self
    }

    fn scan(&self, location: &str, text: &str, out: &mut Vec<Finding>) {
        for (name, re) in &self.patterns {
            for m in re.find_iter(text) {
                out.push(Finding {
                    location: location.to_string(),
                    pattern: name.clone(),
                    matched: m.as_str().to_string(),
                });
            }
        }
        for token in crate::text::tokens(text) {
            if self.names.contains(&token) {
                out.push(Finding {
                    location: location.to_string(),
                    pattern: "name".into(),
                    matched: token,
                });
            }
        }
    }
}

/// Labels and conditions matching a pattern. An empty result clears the
/// chart for release.
pub fn privacy_scan(chart: &Flowchart, patterns: &PrivacyPatterns) -> Vec<Finding> {
    let mut out = Vec::new();
    for n in chart.nodes() {
        patterns.scan(&format!("node {}", n.id), &n.label, &mut out);
    }
    for e in chart.edges() {
        if let Some(c) = &e.condition {
            patterns.scan(&format!("edge {} -> {}", e.from, e.to), c, &mut out);
        }
    }
    out
}
