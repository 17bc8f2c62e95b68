mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use tof_core::corpus::{normalize_intent, read_jsonl, Corpus, Dialogue, Speaker};
use tof_core::evaluation::{cpc, NodeAssignment};
use tof_core::fixtures::account_inquiry;
use tof_core::flowchart::Flowchart;
use tof_core::merge::{merge_global, MergeConfig, RuleJudge};
use tof_core::mermaid;
use tof_core::paths::{enumerate_paths, package_training_samples, sample_paths, EnumerateOptions, TercileSampler};
use tof_core::prompting::{compose_prompt, format_tracked, parse_tracked_reply, SchemaMap};
use tof_core::wdic::{lp_round, solve_greedy, solve_ilp, solve_lp};

use common::{brute_force_paths_with_budget, random_chart, random_instance};

fn chart_from(seed: u64, n: usize) -> Flowchart {
    random_chart(&mut SplitMix64::seed_from_u64(seed), n)
}

fn dialogue_strategy() -> impl Strategy<Value = Dialogue> {
    let turn = (any::<bool>(), "[a-z]{1,6}( [a-z]{1,6}){0,4}", prop::collection::btree_set("[a-z]{1,4}(-[a-z]{1,4})?", 0..3));
    (
        "[a-z0-9]{1,8}",
        prop::collection::vec(turn, 1..8),
        prop::collection::btree_set("[a-z]{2,6}", 0..3),
    )
        .prop_map(|(id, turns, domains)| {
            let mut d = Dialogue::from_turns(
                id,
                turns.iter().map(|(c, t, _)| (if *c { Speaker::Customer } else { Speaker::Agent }, t.clone())),
            )
            .unwrap();
            for (u, (_, _, intents)) in d.utterances.iter_mut().zip(turns) {
                u.intents = intents;
            }
            d.domains = domains;
            d
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn solver_ordering_holds(seed in any::<u64>(), n in 1usize..=10, k in 1usize..=14) {
        let inst = random_instance(&mut SplitMix64::seed_from_u64(seed), n, k);
        let lp = solve_lp(&inst).unwrap().objective;
        let ilp = solve_ilp(&inst).unwrap();
        let greedy = solve_greedy(&inst).unwrap();
        let rounded = lp_round(&inst, seed).unwrap();
        prop_assert!(lp <= ilp.total_cost + 1e-7 * ilp.total_cost.max(1.0));
        prop_assert!(ilp.total_cost <= greedy.total_cost);
        prop_assert!(ilp.total_cost <= rounded.total_cost);
        for sol in [&ilp, &greedy, &rounded] {
            prop_assert!(inst.covers(&sol.indices(&inst)));
            prop_assert_eq!(sol.total_cost, inst.cost_of(&sol.indices(&inst)));
        }
    }

    #[test]
    fn intent_normalization_is_idempotent(raw in "\\PC{0,30}") {
        let once = normalize_intent(&raw);
        prop_assert_eq!(normalize_intent(&once), once.clone());
        prop_assert!(!once.starts_with('-') && !once.ends_with('-') && !once.contains("--"));
    }

    #[test]
    fn corpus_jsonl_round_trips(dialogues in prop::collection::vec(dialogue_strategy(), 1..6)) {
        let mut seen = BTreeSet::new();
        let unique: Vec<Dialogue> = dialogues.into_iter().filter(|d| seen.insert(d.id.clone())).collect();
        let corpus = Corpus::new(unique).unwrap();
        let back = read_jsonl(corpus.to_jsonl().as_bytes()).unwrap();
        prop_assert_eq!(back.dialogues(), corpus.dialogues());
    }

    #[test]
    fn umr_is_invariant_under_dialogue_order(
        script in prop::collection::vec(prop::collection::vec(prop::option::of(0usize..12), 1..9), 1..7),
        rotate in 0usize..7,
    ) {
        let chart = account_inquiry();
        let ids: Vec<String> = chart.nodes().map(|n| n.id.clone()).collect();
        let dialogues: Vec<Dialogue> = script.iter().enumerate().map(|(k, s)| {
            Dialogue::from_turns(format!("d{k}"), s.iter().map(|_| (Speaker::Customer, "x"))).unwrap()
        }).collect();
        let assignments: Vec<NodeAssignment> = script.iter()
            .map(|s| NodeAssignment::new(s.iter().map(|o| o.map(|i| ids[i].clone())).collect()))
            .collect();
        let base = cpc(&chart, &dialogues, &assignments, false).unwrap();
        let r = rotate % dialogues.len();
        let (mut d2, mut a2) = (dialogues.clone(), assignments.clone());
        d2.rotate_left(r);
        a2.rotate_left(r);
        d2.reverse();
        a2.reverse();
        let moved = cpc(&chart, &d2, &a2, false).unwrap();
        prop_assert!((base.umr_avg - moved.umr_avg).abs() <= 1e-12);
        prop_assert!((base.cpc - moved.cpc).abs() <= 1e-12);
        for s in &base.umr_per_dialogue {
            let t = moved.umr_per_dialogue.iter().find(|t| t.dialogue_id == s.dialogue_id).unwrap();
            prop_assert_eq!(s, t);
        }
    }

    #[test]
    fn tracked_replies_round_trip(node in "[A-Z][A-Z0-9_]{0,4}", reply in "\\PC{0,40}") {
        let parsed = parse_tracked_reply(&format_tracked(&node, &reply), &[]);
        prop_assert_eq!(parsed.node.as_deref(), Some(node.as_str()));
        prop_assert_eq!(parsed.reply, reply);
        prop_assert!(!parsed.unknown_node);
    }

    #[test]
    fn prompts_are_injective(
        a in ("[A-Za-z.,]( ?[A-Za-z.,]){0,20}", prop::collection::vec(0u64..4, 0..3), any::<bool>()),
        b in ("[A-Za-z.,]( ?[A-Za-z.,]){0,20}", prop::collection::vec(0u64..4, 0..3), any::<bool>()),
    ) {
        let charts = |seeds: &[u64]| -> Vec<Flowchart> { seeds.iter().map(|&s| chart_from(s, 3 + s as usize)).collect() };
        let pa = compose_prompt(&a.0, &charts(&a.1), &SchemaMap::new(), a.2).unwrap();
        let pb = compose_prompt(&b.0, &charts(&b.1), &SchemaMap::new(), b.2).unwrap();
        prop_assert_eq!(a == b, pa.rendered == pb.rendered);
    }

    #[test]
    fn packaging_is_local_to_each_dialogue(dialogues in prop::collection::vec(dialogue_strategy(), 1..5)) {
        let chart = account_inquiry();
        let together = package_training_samples(&dialogues, &chart).unwrap();
        let apart: Vec<_> = dialogues
            .iter()
            .flat_map(|d| package_training_samples(std::slice::from_ref(d), &chart).unwrap())
            .collect();
        prop_assert_eq!(&together, &apart);
        let agent_turns: usize = dialogues.iter().map(|d| {
            let mut runs = 0;
            let mut last = None;
            for u in &d.utterances {
                if last != Some(u.speaker) && u.speaker == Speaker::Agent {
                    runs += 1;
                }
                last = Some(u.speaker);
            }
            runs
        }).sum();
        prop_assert_eq!(together.len(), agent_turns);
    }

    #[test]
    fn enumerated_paths_check_out(seed in any::<u64>(), n in 2usize..=7, budget in 0usize..=1) {
        let chart = chart_from(seed, n);
        let paths = enumerate_paths(&chart, EnumerateOptions { revisit_budget: budget, ..Default::default() }).unwrap();
        prop_assert!(!paths.is_empty());
        prop_assert_eq!(paths.len(), brute_force_paths_with_budget(&chart, budget));
        let distinct: BTreeSet<_> = paths.iter().map(|p| p.nodes.clone()).collect();
        prop_assert_eq!(distinct.len(), paths.len());
        for p in &paths {
            prop_assert!(p.check(&chart, budget).is_ok(), "{:?}", p.check(&chart, budget));
        }
    }

    #[test]
    fn sampling_is_a_seeded_subset(seed in any::<u64>(), n in 3usize..=9, count in 0usize..12) {
        let chart = chart_from(seed, n);
        let paths = enumerate_paths(&chart, EnumerateOptions::default()).unwrap();
        let a = sample_paths(&paths, count, seed, &TercileSampler).unwrap();
        let b = sample_paths(&paths, count, seed, &TercileSampler).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), count.min(paths.len()));
        let ids: BTreeSet<_> = a.iter().map(|p| p.id.clone()).collect();
        prop_assert_eq!(ids.len(), a.len());
        prop_assert!(a.iter().all(|p| paths.contains(p)));
    }

    #[test]
    fn valid_charts_have_paths_and_round_trip(seed in any::<u64>(), n in 2usize..=12) {
        let chart = chart_from(seed, n);
        prop_assert!(chart.is_valid());
        let simple = EnumerateOptions { revisit_budget: 0, ..Default::default() };
        prop_assert!(!enumerate_paths(&chart, simple).unwrap().is_empty());
        let text = mermaid::serialize(&chart).unwrap();
        prop_assert!(mermaid::parse(&text).unwrap().isomorphic(&chart));
    }

    #[test]
    fn merging_preserves_structure(seeds in prop::collection::vec(any::<u64>(), 1..4)) {
        let charts: Vec<Flowchart> = seeds.iter().enumerate().map(|(i, &s)| chart_from(s, 3 + i * 2)).collect();
        let judge = RuleJudge::default();
        let cfg = MergeConfig::default();
        match merge_global(&charts, &cfg, &judge) {
            Ok((merged, report)) => {
                prop_assert!(merged.is_valid());
                prop_assert!(merged.node_count() <= charts.iter().map(Flowchart::node_count).sum());
                prop_assert_eq!(report.input_nodes, charts.iter().map(Flowchart::node_count).sum::<usize>());
                let members: usize = report.clusters.iter().map(|c| c.members.len()).sum();
                prop_assert_eq!(members, report.input_nodes);
                prop_assert_eq!(report.output_nodes, merged.node_count());
            }
            Err(e) => prop_assert!(charts.len() > 1, "single chart failed to merge: {e}"),
        }
        let single = merge_global(&charts[..1], &cfg, &judge).unwrap().0;
        prop_assert!(single.isomorphic(&charts[0]));
    }
}
