//! The task-oriented flowchart: typed nodes, condition-labeled edges and the
//! structural rules a chart must satisfy.
//!
//! Loops are allowed, but every cycle must pass through an output,
//! reflection or end node: those are the places where a dialogue can
//! re-prompt, recover, or start over. Equivalently, the subgraph induced by
//! start, action and decision nodes must be acyclic, which is how
//! [`Flowchart::validate`] checks it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowchartError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}` has an empty label")]
    EmptyLabel(String),
    #[error("invalid node id `{0}`")]
    InvalidId(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Start,
    Action,
    Decision,
    Output,
    Reflection,
    End,
}

impl NodeType {
    pub const ALL: [NodeType; 6] = [
        NodeType::Start,
        NodeType::Action,
        NodeType::Decision,
        NodeType::Output,
        NodeType::Reflection,
        NodeType::End,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Start => "start",
            NodeType::Action => "action",
            NodeType::Decision => "decision",
            NodeType::Output => "output",
            NodeType::Reflection => "reflection",
            NodeType::End => "end",
        }
    }

    /// Label prefix written in Mermaid files. Action and decision nodes share
    /// one prefix; the shape tells them apart.
    pub fn label_prefix(self) -> &'static str {
        match self {
            NodeType::Start => "Start",
            NodeType::Action | NodeType::Decision => "Action/Decision",
            NodeType::Output => "Output",
            NodeType::Reflection => "Reflection",
            NodeType::End => "End",
        }
    }

    /// Node types through which a cycle may legally pass.
    pub fn closes_loops(self) -> bool {
        matches!(self, NodeType::Output | NodeType::Reflection | NodeType::End)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeType {
    type Err = FlowchartError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "start" => Ok(NodeType::Start),
            "action" => Ok(NodeType::Action),
            "decision" => Ok(NodeType::Decision),
            "output" => Ok(NodeType::Output),
            "reflection" => Ok(NodeType::Reflection),
            "end" => Ok(NodeType::End),
            other => Err(FlowchartError::UnknownNodeType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowNode {
    pub id: String,
    pub node_type: NodeType,
    pub label: String,
    pub intent: Option<String>,
    pub domain: Option<String>,
    pub schema_ref: Option<String>,
}

impl FlowNode {
    pub fn new(id: impl Into<String>, node_type: NodeType, label: impl Into<String>) -> Self {
        FlowNode {
            id: id.into(),
            node_type,
            label: label.into(),
            intent: None,
            domain: None,
            schema_ref: None,
        }
    }

    pub fn with_intent(mut self, intent: impl Into<String>) -> Self {
        self.intent = Some(intent.into());
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn with_schema(mut self, schema_ref: impl Into<String>) -> Self {
        self.schema_ref = Some(schema_ref.into());
        self
    }
}

/// Edges order by `(from, to, condition)`, unlabeled before labeled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowEdge {
    pub from: String,
    pub to: String,
    pub condition: Option<String>,
}

impl FlowEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        FlowEdge {
            from: from.into(),
            to: to.into(),
            condition: None,
        }
    }

    pub fn labeled(from: impl Into<String>, to: impl Into<String>, condition: impl Into<String>) -> Self {
        FlowEdge {
            from: from.into(),
            to: to.into(),
            condition: Some(condition.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    NoStart,
    NoEnd,
    Unreachable(String),
    IllegalCycle(Vec<String>),
    StartIncoming { start: String, from: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStart => f.write_str("no start node"),
            Violation::NoEnd => f.write_str("no end node"),
            Violation::Unreachable(id) => write!(f, "unreachable: {id}"),
            Violation::IllegalCycle(ids) => write!(
                f,
                "cycle without output, reflection or end node: {}",
                ids.join(", ")
            ),
            Violation::StartIncoming { start, from } => {
                write!(f, "start node {start} has incoming edge from {from}")
            }
        }
    }
}

/// Identifier for the `n`-th generated node: `A`..`Z`, then `AA`, `AB`, ...
pub fn canonical_id(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Label comparison key: lowercase with whitespace runs collapsed.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Flowchart {
    pub name: String,
    nodes: BTreeMap<String, FlowNode>,
    edges: BTreeSet<FlowEdge>,
}

impl Flowchart {
    pub fn new(name: impl Into<String>) -> Self {
        Flowchart {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_node(&mut self, node: FlowNode) -> Result<(), FlowchartError> {
        if !is_valid_id(&node.id) {
            return Err(FlowchartError::InvalidId(node.id));
        }
        if node.label.trim().is_empty() {
            return Err(FlowchartError::EmptyLabel(node.id));
        }
        if self.nodes.contains_key(&node.id) {
            return Err(FlowchartError::DuplicateNode(node.id));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Adds an edge; returns `false` when the identical edge already exists.
    pub fn add_edge(&mut self, edge: FlowEdge) -> Result<bool, FlowchartError> {
        for end in [&edge.from, &edge.to] {
            if !self.nodes.contains_key(end) {
                return Err(FlowchartError::UnknownNode(end.clone()));
            }
        }
        Ok(self.edges.insert(edge))
    }

    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut FlowNode> {
        self.nodes.get_mut(id)
    }

    pub fn contains_edge(&self, from: &str, to: &str) -> bool {
        self.edges_from(from).any(|e| e.to == to)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &FlowNode> {
        self.nodes.values()
    }

    /// Edges in `(from, to, condition)` order.
    pub fn edges(&self) -> impl Iterator<Item = &FlowEdge> {
        self.edges.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes_of_type(&self, t: NodeType) -> impl Iterator<Item = &FlowNode> {
        self.nodes.values().filter(move |n| n.node_type == t)
    }

    fn edges_from<'a>(&'a self, id: &str) -> impl Iterator<Item = &'a FlowEdge> + 'a {
        let id = id.to_string();
        let first = FlowEdge {
            from: id.clone(),
            to: String::new(),
            condition: None,
        };
        self.edges.range(first..).take_while(move |e| e.from == id)
    }

    pub fn out_degree(&self, id: &str) -> usize {
        self.edges_from(id).count()
    }

    pub fn in_degree(&self, id: &str) -> usize {
        self.edges.iter().filter(|e| e.to == id).count()
    }

    /// Outgoing edges with their targets, ordered by target id then condition.
    pub fn successors(&self, id: &str) -> Result<Vec<(&FlowEdge, &FlowNode)>, FlowchartError> {
        if !self.nodes.contains_key(id) {
            return Err(FlowchartError::UnknownNode(id.to_string()));
        }
        Ok(self.edges_from(id).map(|e| (e, &self.nodes[&e.to])).collect())
    }

    /// Successors restricted to the nodes of one domain subgraph.
    pub fn successors_within(
        &self,
        id: &str,
        domain: &str,
    ) -> Result<Vec<(&FlowEdge, &FlowNode)>, FlowchartError> {
        Ok(self
            .successors(id)?
            .into_iter()
            .filter(|(_, n)| n.domain.as_deref() == Some(domain))
            .collect())
    }

    pub fn predecessors(&self, id: &str) -> Vec<&FlowEdge> {
        self.edges.iter().filter(|e| e.to == id).collect()
    }

    /// Domain subgraphs: each domain label with the ids of its nodes.
    pub fn subgraphs(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for n in self.nodes.values() {
            if let Some(d) = &n.domain {
                out.entry(d.clone()).or_default().insert(n.id.clone());
            }
        }
        out
    }

    fn adjacency(&self) -> HashMap<&str, Vec<&str>> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            adj.entry(e.from.as_str()).or_default().push(e.to.as_str());
        }
        adj
    }

    /// Ids reachable from any start node.
    pub fn reachable_from_starts(&self) -> BTreeSet<&str> {
        let adj = self.adjacency();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut queue: VecDeque<&str> = self
            .nodes_of_type(NodeType::Start)
            .map(|n| n.id.as_str())
            .collect();
        seen.extend(queue.iter().copied());
        while let Some(id) = queue.pop_front() {
            for &next in adj.get(id).map(Vec::as_slice).unwrap_or_default() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    /// Structural violations; empty iff the chart is a legal flowchart.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.nodes_of_type(NodeType::Start).next().is_none() {
            out.push(Violation::NoStart);
        }
        if self.nodes_of_type(NodeType::End).next().is_none() {
            out.push(Violation::NoEnd);
        }
        let reachable = self.reachable_from_starts();
        for id in self.nodes.keys() {
            if !reachable.contains(id.as_str()) {
                out.push(Violation::Unreachable(id.clone()));
            }
        }
        for e in &self.edges {
            let to = &self.nodes[&e.to];
            let from = &self.nodes[&e.from];
            if to.node_type == NodeType::Start
                && !matches!(from.node_type, NodeType::Reflection | NodeType::End)
            {
                out.push(Violation::StartIncoming {
                    start: to.id.clone(),
                    from: from.id.clone(),
                });
            }
        }
        for component in self.loop_free_violations() {
            out.push(Violation::IllegalCycle(component));
        }
        out.dedup();
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Strongly connected components of the start/action/decision subgraph
    /// that contain a cycle.
    fn loop_free_violations(&self) -> Vec<Vec<String>> {
        let ids: Vec<&str> = self
            .nodes
            .values()
            .filter(|n| !n.node_type.closes_loops())
            .map(|n| n.id.as_str())
            .collect();
        let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        let mut self_loop = vec![false; ids.len()];
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) {
                adj[a].push(b);
                if a == b {
                    self_loop[a] = true;
                }
            }
        }
        strongly_connected(&adj)
            .into_iter()
            .filter(|c| c.len() > 1 || self_loop[c[0]])
            .map(|c| {
                let mut names: Vec<String> = c.iter().map(|&i| ids[i].to_string()).collect();
                names.sort();
                names
            })
            .collect()
    }

    /// Lowest canonical id not yet used in this chart.
    pub fn fresh_id(&self) -> String {
        (0..)
            .map(canonical_id)
            .find(|id| !self.nodes.contains_key(id))
            .expect("unbounded id space")
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            nodes: self
                .nodes
                .values()
                .map(|n| {
                    (
                        n.id.clone(),
                        SidecarNode {
                            node_type: n.node_type.as_str().to_string(),
                            intent: n.intent.clone(),
                            domain: n.domain.clone(),
                            schema_ref: n.schema_ref.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overrides node metadata (including any type inferred from labels).
    pub fn apply_sidecar(&mut self, sidecar: &Sidecar) -> Result<(), FlowchartError> {
        for (id, meta) in &sidecar.nodes {
            let node = self
                .nodes
                .get_mut(id)
                .ok_or_else(|| FlowchartError::UnknownNode(id.clone()))?;
            node.node_type = meta.node_type.parse()?;
            node.intent = meta.intent.clone();
            node.domain = meta.domain.clone();
            node.schema_ref = meta.schema_ref.clone();
        }
        Ok(())
    }

    /// True iff some node bijection preserves types, normalized labels and
    /// the conditioned edge structure.
    pub fn isomorphic(&self, other: &Flowchart) -> bool {
        isomorphic(self, other)
    }
}

/// JSON sidecar stored next to a Mermaid file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sidecar {
    pub nodes: BTreeMap<String, SidecarNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarNode {
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub intent: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default, rename = "schemaRef")]
    pub schema_ref: Option<String>,
}

/// Tarjan's algorithm, iterative.
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut next)) = work.last_mut() {
            if *next == 0 && index[v] == usize::MAX {
                index[v] = counter;
                low[v] = counter;
                counter += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(*next) {
                *next += 1;
                if index[w] == usize::MAX {
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(component);
            }
        }
    }
    out
}

type NodeKey = (NodeType, String);

pub fn isomorphic(a: &Flowchart, b: &Flowchart) -> bool {
    if a.node_count() != b.node_count() || a.edge_count() != b.edge_count() {
        return false;
    }
    let key = |n: &FlowNode| -> NodeKey { (n.node_type, normalize_label(&n.label)) };
    let mut groups_a: BTreeMap<NodeKey, Vec<&str>> = BTreeMap::new();
    let mut groups_b: BTreeMap<NodeKey, Vec<&str>> = BTreeMap::new();
    for n in a.nodes() {
        groups_a.entry(key(n)).or_default().push(&n.id);
    }
    for n in b.nodes() {
        groups_b.entry(key(n)).or_default().push(&n.id);
    }
    if groups_a.len() != groups_b.len()
        || groups_a
            .iter()
            .zip(&groups_b)
            .any(|((ka, va), (kb, vb))| ka != kb || va.len() != vb.len())
    {
        return false;
    }

    // Cheap necessary condition: edge multisets over node keys agree.
    let keyed_edges = |f: &Flowchart| {
        let mut v: Vec<(NodeKey, NodeKey, Option<String>)> = f
            .edges()
            .map(|e| {
                (
                    key(f.node(&e.from).unwrap()),
                    key(f.node(&e.to).unwrap()),
                    e.condition.clone(),
                )
            })
            .collect();
        v.sort();
        v
    };
    if keyed_edges(a) != keyed_edges(b) {
        return false;
    }

    // Backtracking bijection search inside key groups. With distinct labels
    // every group is a singleton and this is a single pass.
    let order: Vec<(&str, &Vec<&str>)> = groups_a
        .iter()
        .flat_map(|(k, ids)| {
            let group = &groups_b[k];
            ids.iter().map(move |id| (*id, group))
        })
        .collect();
    let edges_b: BTreeSet<(&str, &str, Option<&str>)> = b
        .edges()
        .map(|e| (e.from.as_str(), e.to.as_str(), e.condition.as_deref()))
        .collect();
    let mut mapping: HashMap<&str, &str> = HashMap::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    extend_mapping(a, &order, 0, &edges_b, &mut mapping, &mut used)
}

fn extend_mapping<'a>(
    a: &'a Flowchart,
    order: &[(&'a str, &Vec<&'a str>)],
    depth: usize,
    edges_b: &BTreeSet<(&str, &str, Option<&str>)>,
    mapping: &mut HashMap<&'a str, &'a str>,
    used: &mut BTreeSet<&'a str>,
) -> bool {
    let Some(&(node, candidates)) = order.get(depth) else {
        return true;
    };
    for &candidate in candidates.iter() {
        if used.contains(candidate) {
            continue;
        }
        mapping.insert(node, candidate);
        let consistent = a.edges().all(|e| {
            match (mapping.get(e.from.as_str()), mapping.get(e.to.as_str())) {
                (Some(f), Some(t)) => edges_b.contains(&(*f, *t, e.condition.as_deref())),
                _ => true,
            }
        });
        if consistent {
            used.insert(candidate);
            if extend_mapping(a, order, depth + 1, edges_b, mapping, used) {
                return true;
            }
            used.remove(candidate);
        }
        mapping.remove(node);
    }
    false
}
