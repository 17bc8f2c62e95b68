//! Task-oriented flowcharts (TOFs) for customer-service automation.
//!
//! The crate covers the whole offline pipeline: selecting a cost-minimal set
//! of dialogues that covers every intent ([`wdic`]), building flowcharts from
//! them ([`construction`]), measuring how well a chart covers real dialogues
//! ([`evaluation`]), merging locally built charts ([`merge`]), sampling
//! start-to-end paths for synthetic data ([`paths`]) and composing
//! flowchart-augmented prompts ([`prompting`]). Language-model calls go
//! through the [`oracle`] backends, which include a deterministic rule-based
//! implementation for offline use.

pub mod construction;
pub mod corpus;
pub mod evaluation;
pub mod fixtures;
pub mod flowchart;
pub mod merge;
pub mod mermaid;
pub mod oracle;
pub mod paths;
pub mod prompting;
pub mod text;
pub mod wdic;

pub use corpus::{Corpus, Dialogue, IntentUniverse, Speaker, Utterance};
pub use flowchart::{FlowEdge, FlowNode, Flowchart, NodeType, Violation};
pub use wdic::{CoverInstance, CoverSolution, LpSolution, Method};
