//! Start-to-end walks through a chart, sampling over them, generation jobs
//! for synthetic dialogues and packaging of training samples.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, Speaker};
use crate::flowchart::{Flowchart, NodeType, Violation};
use crate::mermaid;
use crate::oracle::OracleRequest;

pub const DEFAULT_PATH_CAP: usize = 100_000;
pub const DEFAULT_MAX_LEN: usize = 32;
pub const DEFAULT_REVISIT_BUDGET: usize = 1;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("chart is invalid: {0:?}")]
    InvalidChart(Vec<Violation>),
    #[error("more than {cap} paths; lower the length limit or revisit budget")]
    TooManyPaths { cap: usize },
    #[error("no start-to-end path within the limits")]
    NoPaths,
    #[error("generation template has no phrasing for node type `{0}`")]
    MissingNodeType(NodeType),
    #[error("path `{path}` references unknown node `{node}`")]
    UnknownNode { path: String, node: String },
    #[error("dialogue `{id}` is malformed: {message}")]
    MalformedDialogue { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PathSample {
    /// Stable identifier derived from the enumeration position.
    pub id: String,
    pub nodes: Vec<String>,
    /// Condition on each traversed edge, `None` when unlabelled.
    pub edge_conditions: Vec<Option<String>>,
    pub length: usize,
}

impl PathSample {
    /// Re-checks the path against `chart`: typed endpoints, adjacency and
    /// the revisit budget.
    pub fn check(&self, chart: &Flowchart, revisit_budget: usize) -> Result<(), String> {
        if self.nodes.len() != self.length || self.edge_conditions.len() + 1 != self.length {
            return Err("length fields disagree".into());
        }
        let type_of = |id: &str| chart.node(id).map(|n| n.node_type).ok_or(format!("unknown node {id}"));
        if type_of(&self.nodes[0])? != NodeType::Start {
            return Err("does not begin at a start node".into());
        }
        if type_of(self.nodes.last().expect("nonempty"))? != NodeType::End {
            return Err("does not finish at an end node".into());
        }
        for (w, cond) in self.nodes.windows(2).zip(&self.edge_conditions) {
            let edge = chart
                .edges()
                .find(|e| e.from == w[0] && e.to == w[1])
                .ok_or(format!("no edge {} -> {}", w[0], w[1]))?;
            if &edge.condition != cond {
                return Err(format!("condition mismatch on {} -> {}", w[0], w[1]));
            }
        }
        let mut visits: HashMap<&str, usize> = HashMap::new();
        for n in &self.nodes {
            let v = visits.entry(n).or_default();
            *v += 1;
            if *v > revisit_budget + 1 {
                return Err(format!("node {n} revisited too often"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerateOptions {
    pub max_len: usize,
    pub revisit_budget: usize,
    pub cap: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            max_len: DEFAULT_MAX_LEN,
            revisit_budget: DEFAULT_REVISIT_BUDGET,
            cap: DEFAULT_PATH_CAP,
        }
    }
}

/// Depth-first enumeration of every start-to-end walk in which no node
/// appears more than `revisit_budget + 1` times and which has at most
/// `max_len` nodes. Walks stop at the first end node. Output follows
/// lexicographic node-id order.
pub fn enumerate_paths(chart: &Flowchart, opts: EnumerateOptions) -> Result<Vec<PathSample>, PathError> {
    let violations = chart.validate();
    if !violations.is_empty() {
        return Err(PathError::InvalidChart(violations));
    }
    let adjacency: BTreeMap<&str, Vec<(&str, Option<&str>)>> = chart
        .nodes()
        .map(|n| {
            let succ = chart
                .edges()
                .filter(|e| e.from == n.id)
                .map(|e| (e.to.as_str(), e.condition.as_deref()))
                .collect();
            (n.id.as_str(), succ)
        })
        .collect();
    let is_end = |id: &str| chart.node(id).is_some_and(|n| n.node_type == NodeType::End);

    struct Walk<'a> {
        nodes: Vec<&'a str>,
        conds: Vec<Option<&'a str>>,
        visits: HashMap<&'a str, usize>,
    }
    fn dfs<'a>(
        at: &'a str,
        walk: &mut Walk<'a>,
        adjacency: &BTreeMap<&'a str, Vec<(&'a str, Option<&'a str>)>>,
        is_end: &dyn Fn(&str) -> bool,
        opts: &EnumerateOptions,
        out: &mut Vec<PathSample>,
    ) -> Result<(), PathError> {
        if is_end(at) {
            if out.len() == opts.cap {
                return Err(PathError::TooManyPaths { cap: opts.cap });
            }
            out.push(PathSample {
                id: String::new(),
                nodes: walk.nodes.iter().map(|s| s.to_string()).collect(),
                edge_conditions: walk.conds.iter().map(|c| c.map(str::to_string)).collect(),
                length: walk.nodes.len(),
            });
            return Ok(());
        }
        if walk.nodes.len() == opts.max_len {
            return Ok(());
        }
        for &(next, cond) in &adjacency[at] {
            let seen = walk.visits.get(next).copied().unwrap_or(0);
            if seen > opts.revisit_budget {
                continue;
            }
            walk.nodes.push(next);
            walk.conds.push(cond);
            *walk.visits.entry(next).or_default() += 1;
            let r = dfs(next, walk, adjacency, is_end, opts, out);
            *walk.visits.get_mut(next).expect("just inserted") -= 1;
            walk.nodes.pop();
            walk.conds.pop();
            r?;
        }
        Ok(())
    }

    let mut out = Vec::new();
    if opts.max_len == 0 {
        return Ok(out);
    }
    for start in chart.nodes_of_type(NodeType::Start) {
        let mut walk = Walk {
            nodes: vec![start.id.as_str()],
            conds: Vec::new(),
            visits: HashMap::from([(start.id.as_str(), 1)]),
        };
        dfs(&start.id, &mut walk, &adjacency, &is_end, &opts, &mut out)?;
    }
    let width = out.len().to_string().len().max(4);
    for (i, p) in out.iter_mut().enumerate() {
        p.id = format!("path-{i:0width$}");
    }
    Ok(out)
}

/// Picks `count` path indices from `paths`.
pub trait SamplingPolicy {
    fn sample(&self, paths: &[PathSample], count: usize, rng: &mut SplitMix64) -> Vec<usize>;
}

/// Splits paths into three strata by length rank and draws round-robin
/// from the strata, starting at a random one, uniformly without
/// replacement inside each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TercileSampler;

impl TercileSampler {
    /// Path indices of each stratum, shortest first.
    pub fn strata(paths: &[PathSample]) -> [Vec<usize>; 3] {
        let mut order: Vec<usize> = (0..paths.len()).collect();
        order.sort_by_key(|&i| (paths[i].length, i));
        let n = order.len();
        std::array::from_fn(|k| order[k * n / 3..(k + 1) * n / 3].to_vec())
    }
}

impl SamplingPolicy for TercileSampler {
    fn sample(&self, paths: &[PathSample], count: usize, rng: &mut SplitMix64) -> Vec<usize> {
        let mut strata = Self::strata(paths);
        let mut picked = Vec::with_capacity(count);
        let mut k = rng.random_range(0..3);
        while picked.len() < count && strata.iter().any(|s| !s.is_empty()) {
            let s = &mut strata[k];
            if !s.is_empty() {
                let i = rng.random_range(0..s.len());
                picked.push(s.swap_remove(i));
            }
            k = (k + 1) % 3;
        }
        picked
    }
}

/// `count` paths chosen by `policy`. Asking for at least as many paths as
/// exist returns all of them once, in enumeration order.
pub fn sample_paths(
    paths: &[PathSample],
    count: usize,
    seed: u64,
    policy: &dyn SamplingPolicy,
) -> Result<Vec<PathSample>, PathError> {
    if paths.is_empty() {
        return Err(PathError::NoPaths);
    }
    if count >= paths.len() {
        return Ok(paths.to_vec());
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    Ok(policy
        .sample(paths, count, &mut rng)
        .into_iter()
        .map(|i| paths[i].clone())
        .collect())
}

/// How each node type is phrased as a procedure step. `{label}` is replaced
/// by the node label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTemplate {
    pub phrasings: BTreeMap<NodeType, String>,
    /// Instruction template used for the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

impl Default for GenerationTemplate {
    fn default() -> Self {
        let phrasings = [
            (NodeType::Start, "The customer opens the conversation: \"{label}\""),
            (NodeType::Action, "The agent carries out \"{label}\""),
            (NodeType::Decision, "The agent settles \"{label}\""),
            (NodeType::Output, "The agent tells the customer \"{label}\""),
            (NodeType::Reflection, "The agent checks \"{label}\""),
            (NodeType::End, "The agent wraps up: \"{label}\""),
        ]
        .into_iter()
        .map(|(t, s)| (t, s.to_string()))
        .collect();
        GenerationTemplate { phrasings, template_id: None }
    }
}

impl GenerationTemplate {
    pub fn check(&self) -> Result<(), PathError> {
        match NodeType::ALL.iter().find(|t| !self.phrasings.contains_key(t)) {
            Some(&t) => Err(PathError::MissingNodeType(t)),
            None => Ok(()),
        }
    }

    /// Step lines for `path`; a labelled edge adds its condition to the
    /// step it leads into.
    pub fn steps(&self, chart: &Flowchart, path: &PathSample) -> Result<Vec<String>, PathError> {
        self.check()?;
        path.nodes
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let node = chart.node(id).ok_or_else(|| PathError::UnknownNode {
                    path: path.id.clone(),
                    node: id.clone(),
                })?;
                let mut step = self.phrasings[&node.node_type].replace("{label}", &node.label);
                if let Some(Some(c)) = i.checked_sub(1).map(|k| &path.edge_conditions[k]) {
                    step.push_str(&format!(" (because: {c})"));
                }
                Ok(step)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationJob {
    pub path_id: String,
    pub node_sequence: Vec<String>,
    pub prompt: String,
}

/// The oracle request that generates a dialogue for `path`.
pub fn generation_request(
    chart: &Flowchart,
    path: &PathSample,
    template: &GenerationTemplate,
) -> Result<OracleRequest, PathError> {
    let req = OracleRequest::dialogue_gen(&template.steps(chart, path)?);
    Ok(match &template.template_id {
        Some(id) => req.with_template(id.clone()),
        None => req,
    })
}

/// One job per path with the rendered generation prompt. Nothing is sent.
pub fn emit_generation_jobs(
    chart: &Flowchart,
    paths: &[PathSample],
    template: &GenerationTemplate,
    registry: &crate::oracle::TemplateRegistry,
) -> Result<Vec<GenerationJob>, PathError> {
    template.check()?;
    paths
        .iter()
        .map(|p| {
            let req = generation_request(chart, p, template)?;
            let prompt = registry.render(&req).map_err(|e| PathError::MalformedDialogue {
                id: p.id.clone(),
                message: e.to_string(),
            })?;
            Ok(GenerationJob {
                path_id: p.id.clone(),
                node_sequence: p.nodes.clone(),
                prompt,
            })
        })
        .collect()
}

/// Reads `Customer:` / `Agent:` prefixed turns. Unprefixed lines continue
/// the previous turn; text before the first turn is ignored.
pub fn parse_transcript(id: &str, text: &str) -> Result<Dialogue, PathError> {
    let mut turns: Vec<(Speaker, String)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let prefixed = [Speaker::Customer, Speaker::Agent].into_iter().find_map(|s| {
            let rest = line.strip_prefix(s.title())?;
            rest.strip_prefix(':').map(|r| (s, r.trim().to_string()))
        });
        match (prefixed, turns.last_mut()) {
            (Some(turn), _) => turns.push(turn),
            (None, Some((_, t))) => {
                t.push(' ');
                t.push_str(line);
            }
            (None, None) => {}
        }
    }
    if turns.is_empty() {
        return Err(PathError::MalformedDialogue {
            id: id.to_string(),
            message: "no speaker-prefixed turns".into(),
        });
    }
    Dialogue::from_turns(id, turns).map_err(|e| PathError::MalformedDialogue {
        id: id.to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub flowchart: String,
    pub context: String,
    pub target: String,
}

fn coalesce(d: &Dialogue) -> Result<Vec<(Speaker, String)>, PathError> {
    let mut turns: Vec<(Speaker, String)> = Vec::new();
    for u in &d.utterances {
        let text = u.text.trim();
        if text.is_empty() {
            return Err(PathError::MalformedDialogue {
                id: d.id.clone(),
                message: format!("utterance {} is empty", u.index),
            });
        }
        match turns.last_mut() {
            Some((s, t)) if *s == u.speaker => {
                t.push(' ');
                t.push_str(text);
            }
            _ => turns.push((u.speaker, text.to_string())),
        }
    }
    Ok(turns)
}

/// One sample per agent turn: the chart text, every earlier turn as
/// context, and the agent turn as target.
pub fn package_training_samples(dialogues: &[Dialogue], chart: &Flowchart) -> Result<Vec<TrainingSample>, PathError> {
    let flowchart = mermaid::serialize(chart).map_err(|_| PathError::InvalidChart(chart.validate()))?;
    let mut out = Vec::new();
    for d in dialogues {
        let turns = coalesce(d)?;
        for (k, (speaker, text)) in turns.iter().enumerate() {
            if *speaker != Speaker::Agent {
                continue;
            }
            let context = turns[..k]
                .iter()
                .map(|(s, t)| format!("{}: {t}", s.title()))
                .collect::<Vec<_>>()
                .join("\n");
            out.push(TrainingSample {
                flowchart: flowchart.clone(),
                context,
                target: text.clone(),
            });
        }
    }
    Ok(out)
}
