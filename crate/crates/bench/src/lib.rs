//! Seeded workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use tof_core::flowchart::{canonical_id, FlowEdge, FlowNode, Flowchart, NodeType};
use tof_core::wdic::CoverInstance;

/// Feasible instance with sets of 2..=8 intents and costs in 1..=20.
pub fn cover_instance(seed: u64, intents: usize, sets: usize) -> CoverInstance {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut raw: Vec<(String, Vec<usize>, f64)> = (0..sets)
        .map(|i| {
            let size = rng.random_range(2..=8).min(intents);
            let members = (0..size).map(|_| rng.random_range(0..intents)).collect();
            (format!("d{i}"), members, rng.random_range(1..=20) as f64)
        })
        .collect();
    for intent in 0..intents {
        let k = rng.random_range(0..sets);
        raw[k].1.push(intent);
    }
    CoverInstance::from_indices(intents, raw).expect("every intent placed")
}

/// Layered chart: a start, `layers` rows of `width` nodes each wired to
/// two nodes of the next row, reflection nodes looping back one row, and
/// a single end.
pub fn layered_chart(seed: u64, layers: usize, width: usize) -> Flowchart {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut chart = Flowchart::new("bench");
    let mut next = 0;
    let mut add = |chart: &mut Flowchart, t: NodeType| {
        let id = canonical_id(next);
        next += 1;
        chart.add_node(FlowNode::new(id.clone(), t, format!("Step {id}"))).unwrap();
        id
    };
    let start = add(&mut chart, NodeType::Start);
    let mut rows: Vec<Vec<String>> = Vec::new();
    for l in 0..layers {
        let row: Vec<String> = (0..width)
            .map(|_| {
                let t = if l > 0 && rng.random_bool(0.2) { NodeType::Reflection } else { NodeType::Action };
                add(&mut chart, t)
            })
            .collect();
        rows.push(row);
    }
    let end = add(&mut chart, NodeType::End);
    for id in &rows[0] {
        chart.add_edge(FlowEdge::new(start.clone(), id.clone())).unwrap();
    }
    for l in 0..layers {
        for id in &rows[l] {
            match rows.get(l + 1) {
                Some(below) => {
                    for _ in 0..2 {
                        let to = &below[rng.random_range(0..width)];
                        chart.add_edge(FlowEdge::new(id.clone(), to.clone())).unwrap();
                    }
                }
                None => {
                    chart.add_edge(FlowEdge::new(id.clone(), end.clone())).unwrap();
                }
            }
            let t = chart.node(id).unwrap().node_type;
            if t == NodeType::Reflection {
                let up = &rows[l - 1][rng.random_range(0..width)];
                chart.add_edge(FlowEdge::new(id.clone(), up.clone())).unwrap();
            }
        }
    }
    assert!(chart.is_valid(), "{:?}", chart.validate());
    chart
}
