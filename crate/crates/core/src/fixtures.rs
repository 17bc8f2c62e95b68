//! Reference charts and instances shipped with the library.

/// Account-inquiry flowchart for a banking service desk: 12 nodes, 17 edges,
/// with a reflection node looping back to the enquiry triage.
pub const ACCOUNT_INQUIRY_MMD: &str = r#"flowchart TD
    A["Start: Begin Customer Account Inquiry"] --> B{"Action/Decision: Determine Type of Enquiry"}
    B -- Account Balance/Credit Limit --> C{"Action/Decision: Is customer an active online banking/Connect App user?"}
    C -- No --> D["Output: Provide Assistance"]
    D --> E["Output: Display Balance/Limit Information"]
    C -- Yes --> F["Output: Would you like me to guide you through the app/online banking or do it for you?"]
    F -- Assistance --> D
    F -- Guidance --> G{"Action/Decision: App or Online Banking?"}
    G -- App --> H["Output: Provide App Guidance"]
    G -- Online Banking --> I["Output: Provide Online Banking Guidance"]
    B -- Transaction --> G
    B -- Unrecognized Charges --> N["Action/Decision: Perform Charge Check"]
    E --> R["Reflection: Confirm User Satisfaction"]
    H --> R
    I --> R
    N --> R
    R -- Satisfied --> J["End: Execute Closing Script"]
    R -- Not Satisfied --> B
"#;

/// The account-inquiry chart, parsed.
pub fn account_inquiry() -> crate::flowchart::Flowchart {
    let mut chart = crate::mermaid::parse(ACCOUNT_INQUIRY_MMD).expect("bundled chart is valid");
    chart.name = "account-inquiry".into();
    chart
}

/// Number of intents in [`benchmark_instance`].
pub const BENCHMARK_INTENTS: usize = 264;

/// Seeded selection instance over 264 intents: 400 dialogues, each covering
/// 4 to 18 intents and costing 6 to 40 utterances. Every intent is covered.
pub fn benchmark_instance(seed: u64) -> crate::wdic::CoverInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::SplitMix64::seed_from_u64(seed);
    let mut sets: Vec<(String, Vec<usize>, f64)> = (0..400)
        .map(|i| {
            let size = rng.random_range(4..=18);
            let members = (0..size).map(|_| rng.random_range(0..BENCHMARK_INTENTS)).collect();
            (format!("d{i:03}"), members, rng.random_range(6..=40) as f64)
        })
        .collect();
    for intent in 0..BENCHMARK_INTENTS {
        if !sets.iter().any(|(_, m, _)| m.contains(&intent)) {
            let k = rng.random_range(0..sets.len());
            sets[k].1.push(intent);
        }
    }
    crate::wdic::CoverInstance::from_indices(BENCHMARK_INTENTS, sets).expect("every intent is covered")
}
