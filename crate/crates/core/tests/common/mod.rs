//! Generators and independent reference implementations shared by the
//! integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use tof_core::flowchart::{FlowEdge, FlowNode, Flowchart, NodeType};
use tof_core::wdic::CoverInstance;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Feasible instance with `intents` intents and `sets` sets, integer costs
/// in 1..=10.
pub fn random_instance(rng: &mut impl Rng, intents: usize, sets: usize) -> CoverInstance {
    let mut raw: Vec<(String, Vec<usize>, f64)> = (0..sets)
        .map(|i| {
            let members = (0..intents).filter(|_| rng.random_bool(0.3)).collect();
            (format!("s{i}"), members, rng.random_range(1..=10) as f64)
        })
        .collect();
    for intent in 0..intents {
        if !raw.iter().any(|(_, m, _)| m.contains(&intent)) {
            let k = rng.random_range(0..sets);
            raw[k].1.push(intent);
        }
    }
    CoverInstance::from_indices(intents, raw).expect("feasible by construction")
}

/// Minimum cover cost by dynamic programming over intent bitmasks.
pub fn exact_min_cost(inst: &CoverInstance) -> f64 {
    let n = inst.universe_size();
    assert!(n <= 16, "bitmask oracle is for small universes");
    let masks: Vec<(usize, f64)> = inst
        .sets()
        .iter()
        .map(|s| (s.intents.ones().fold(0usize, |m, i| m | (1 << i)), s.cost))
        .collect();
    let full = (1usize << n) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    best[0] = 0.0;
    for covered in 0..=full {
        if best[covered].is_infinite() {
            continue;
        }
        for &(m, c) in &masks {
            let next = covered | m;
            if next != covered && best[covered] + c < best[next] {
                best[next] = best[covered] + c;
            }
        }
    }
    best[full]
}

const WORDS: &[&str] = &[
    "check", "balance", "verify", "identity", "offer", "refund", "confirm", "booking", "cancel", "order",
    "provide", "address", "request", "payment", "schedule", "visit", "explain", "fees", "reset", "password",
];

fn random_label(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=4);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s
}

/// Random valid chart with `n` nodes: node `A` is the start, the last node
/// an end. Forward edges form a DAG reaching every node; backward edges
/// leave only output, reflection and end nodes, so every cycle passes one.
pub fn random_chart(rng: &mut impl Rng, n: usize) -> Flowchart {
    assert!(n >= 2);
    let mut chart = Flowchart::new("random");
    let middle = [NodeType::Action, NodeType::Decision, NodeType::Output, NodeType::Reflection, NodeType::End];
    let ids: Vec<String> = (0..n).map(tof_core::flowchart::canonical_id).collect();
    for (i, id) in ids.iter().enumerate() {
        let t = match i {
            0 => NodeType::Start,
            _ if i == n - 1 => NodeType::End,
            _ => middle[rng.random_range(0..middle.len())],
        };
        chart.add_node(FlowNode::new(id.clone(), t, random_label(rng))).unwrap();
    }
    let condition = |rng: &mut dyn rand::RngCore| -> Option<String> {
        if rng.random_bool(0.3) {
            Some(WORDS[rng.random_range(0..WORDS.len())].to_string())
        } else {
            None
        }
    };
    for j in 1..n {
        let parent = rng.random_range(0..j);
        let edge = FlowEdge { from: ids[parent].clone(), to: ids[j].clone(), condition: condition(rng) };
        chart.add_edge(edge).unwrap();
        for i in 0..j {
            if i != parent && rng.random_bool(0.2) {
                let edge = FlowEdge { from: ids[i].clone(), to: ids[j].clone(), condition: condition(rng) };
                chart.add_edge(edge).unwrap();
            }
        }
    }
    for j in 1..n {
        let closes = chart.node(&ids[j]).unwrap().node_type.closes_loops();
        if closes && rng.random_bool(0.3) {
            let target = rng.random_range(1..=j);
            if target != j {
                chart.add_edge(FlowEdge::new(ids[j].clone(), ids[target].clone())).unwrap();
            }
        }
    }
    assert!(chart.is_valid(), "{:?}", chart.validate());
    chart
}

/// Simple start-to-end paths (stopping at the first end node), counted by
/// plain recursion over the edge list.
pub fn brute_force_simple_paths(chart: &Flowchart) -> usize {
    fn go(chart: &Flowchart, at: &str, seen: &mut Vec<String>) -> usize {
        if chart.node(at).unwrap().node_type == NodeType::End {
            return 1;
        }
        let mut total = 0;
        let nexts: Vec<String> = chart.edges().filter(|e| e.from == at).map(|e| e.to.clone()).collect();
        for next in nexts {
            if !seen.contains(&next) {
                seen.push(next.clone());
                total += go(chart, &next, seen);
                seen.pop();
            }
        }
        total
    }
    chart
        .nodes()
        .filter(|n| n.node_type == NodeType::Start)
        .map(|s| go(chart, &s.id, &mut vec![s.id.clone()]))
        .sum()
}

/// Walks with at most one extra visit per node, counted the same way.
pub fn brute_force_paths_with_budget(chart: &Flowchart, budget: usize) -> usize {
    fn go(chart: &Flowchart, at: &str, visits: &mut std::collections::HashMap<String, usize>, budget: usize) -> usize {
        if chart.node(at).unwrap().node_type == NodeType::End {
            return 1;
        }
        let nexts: Vec<String> = chart.edges().filter(|e| e.from == at).map(|e| e.to.clone()).collect();
        let mut total = 0;
        for next in nexts {
            let v = visits.get(&next).copied().unwrap_or(0);
            if v <= budget {
                visits.insert(next.clone(), v + 1);
                total += go(chart, &next, visits, budget);
                visits.insert(next.clone(), v);
            }
        }
        total
    }
    chart
        .nodes()
        .filter(|n| n.node_type == NodeType::Start)
        .map(|s| {
            let mut visits = std::collections::HashMap::from([(s.id.clone(), 1)]);
            go(chart, &s.id, &mut visits, budget)
        })
        .sum()
}
