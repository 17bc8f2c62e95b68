//! Dialogue corpora: ingestion from JSONL, validation, and intent universes.
//!
//! A corpus is immutable once ingested. Intent labels attached to
//! utterances are normalized to lowercase hyphen-joined strings such as
//! `inquire-price`; [`build_intent_universe`] folds them into the per-dialogue
//! intent sets consumed by the selection solvers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate dialogue id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("corpus is empty")]
    Empty,
    #[error("dialogue `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("labeling dialogue `{dialogue}` failed: {message}")]
    Labeler { dialogue: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Customer,
    Agent,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Customer => "customer",
            Speaker::Agent => "agent",
        }
    }

    /// Display name used when rendering transcripts.
    pub fn title(self) -> &'static str {
        match self {
            Speaker::Customer => "Customer",
            Speaker::Agent => "Agent",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub intents: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub domains: BTreeSet<String>,
}

impl Dialogue {
    /// Builds a dialogue from `(speaker, text)` turns, checking the utterance
    /// invariants.
    pub fn from_turns<S: Into<String>>(
        id: impl Into<String>,
        turns: impl IntoIterator<Item = (Speaker, S)>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let utterances = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Utterance {
                index,
                speaker,
                text: text.into(),
                intents: BTreeSet::new(),
            })
            .collect();
        let dialogue = Dialogue {
            id,
            utterances,
            domains: BTreeSet::new(),
        };
        dialogue.check()?;
        Ok(dialogue)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Keeps only one side of the conversation, re-indexing from zero.
    pub fn restricted_to(&self, speaker: Speaker) -> Dialogue {
        let utterances = self
            .utterances
            .iter()
            .filter(|u| u.speaker == speaker)
            .enumerate()
            .map(|(index, u)| Utterance {
                index,
                ..u.clone()
            })
            .collect();
        Dialogue {
            id: self.id.clone(),
            utterances,
            domains: self.domains.clone(),
        }
    }

    fn check(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty dialogue id".into()));
        }
        if self.utterances.is_empty() {
            return Err(invalid("dialogue has no turns".into()));
        }
        for (position, u) in self.utterances.iter().enumerate() {
            if u.index != position {
                return Err(invalid(format!(
                    "utterance index {} at position {position}",
                    u.index
                )));
            }
            if u.text.trim().is_empty() {
                return Err(invalid(format!("turn {position} has empty text")));
            }
        }
        Ok(())
    }
}

/// On-disk record, one per JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub id: String,
    pub turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intents: Option<Vec<String>>,
}

impl From<&Dialogue> for DialogueRecord {
    fn from(d: &Dialogue) -> Self {
        DialogueRecord {
            id: d.id.clone(),
            turns: d
                .utterances
                .iter()
                .map(|u| TurnRecord {
                    speaker: u.speaker,
                    text: u.text.clone(),
                    intents: (!u.intents.is_empty()).then(|| u.intents.iter().cloned().collect()),
                })
                .collect(),
            domains: (!d.domains.is_empty()).then(|| d.domains.iter().cloned().collect()),
        }
    }
}

impl DialogueRecord {
    fn into_dialogue(self) -> Result<Dialogue, CorpusError> {
        let utterances = self
            .turns
            .into_iter()
            .enumerate()
            .map(|(index, t)| Utterance {
                index,
                speaker: t.speaker,
                text: t.text,
                intents: t
                    .intents
                    .unwrap_or_default()
                    .iter()
                    .map(|i| normalize_intent(i))
                    .filter(|i| !i.is_empty())
                    .collect(),
            })
            .collect();
        let dialogue = Dialogue {
            id: self.id,
            utterances,
            domains: self
                .domains
                .unwrap_or_default()
                .into_iter()
                .map(|d| d.trim().to_lowercase())
                .filter(|d| !d.is_empty())
                .collect(),
        };
        dialogue.check()?;
        Ok(dialogue)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self, CorpusError> {
        if dialogues.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut seen = HashSet::new();
        for (i, d) in dialogues.iter().enumerate() {
            d.check()?;
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: d.id.clone(),
                });
            }
        }
        Ok(Corpus { dialogues })
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    /// Serializes the corpus back to JSONL (one record per line, LF endings).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            let record = DialogueRecord::from(d);
            out.push_str(&serde_json::to_string(&record).expect("records always serialize"));
            out.push('\n');
        }
        out
    }
}

/// Reads a corpus from a JSONL file.
pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path)?;
    read_jsonl(file)
}

/// Reads a corpus from any JSONL stream. Blank lines are skipped.
pub fn read_jsonl(reader: impl Read) -> Result<Corpus, CorpusError> {
    let mut dialogues = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let dialogue = record.into_dialogue().map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(dialogue.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: dialogue.id,
            });
        }
        dialogues.push(dialogue);
    }
    if dialogues.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus { dialogues })
}

/// Normalizes an intent label: lowercase, trimmed, with every run of
/// non-alphanumeric characters collapsed into a single hyphen.
pub fn normalize_intent(raw: &str) -> String {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// Intent label for dialogue-act annotated data: `domain-act` or
/// `domain-act-slot`.
pub fn dialogue_act_intent(domain: &str, act: &str, slot: Option<&str>) -> String {
    let joined = match slot {
        Some(slot) if !slot.trim().is_empty() => format!("{domain}-{act}-{slot}"),
        _ => format!("{domain}-{act}"),
    };
    normalize_intent(&joined)
}

/// Reads a MultiWOZ-format `data.json`: an object of dialogues keyed by id,
/// each with a `log` of alternating customer/agent turns. Dialogue acts come
/// from each turn's `dialog_act` field or, when given, from a separate
/// `dialogue_acts.json` keyed by dialogue id (without `.json`) and turn
/// number (1-based over the whole log). Acts become `domain-act-slot`
/// intents; a slot of `none` gives `domain-act`.
pub fn read_multiwoz(data: &str, acts: Option<&str>) -> Result<Corpus, CorpusError> {
    use serde_json::Value;
    let parse = |what: &str, text: &str| {
        serde_json::from_str::<Value>(text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: format!("{what}: {e}"),
        })
    };
    let data = parse("data", data)?;
    let acts = acts.map(|a| parse("dialogue acts", a)).transpose()?;
    let Some(entries) = data.as_object() else {
        return Err(CorpusError::Parse { line: 1, message: "expected an object of dialogues".into() });
    };
    let mut dialogues = Vec::with_capacity(entries.len());
    for (key, dialogue) in entries {
        let id = key.trim_end_matches(".json");
        let log = dialogue.get("log").and_then(Value::as_array).ok_or_else(|| CorpusError::Invalid {
            id: id.to_string(),
            message: "missing `log`".into(),
        })?;
        let mut utterances = Vec::with_capacity(log.len());
        let mut domains = BTreeSet::new();
        for (index, turn) in log.iter().enumerate() {
            let text = turn.get("text").and_then(Value::as_str).unwrap_or_default();
            let turn_acts = match &acts {
                Some(a) => a.get(id).and_then(|d| d.get((index + 1).to_string())),
                None => turn.get("dialog_act"),
            };
            let mut intents = BTreeSet::new();
            if let Some(map) = turn_acts.and_then(Value::as_object) {
                for (name, slots) in map {
                    let (domain, act) = name.split_once('-').unwrap_or((name, ""));
                    let domain_lc = domain.to_lowercase();
                    if !["general", "booking"].contains(&domain_lc.as_str()) {
                        domains.insert(domain_lc);
                    }
                    let pairs = slots.as_array().map(Vec::as_slice).unwrap_or_default();
                    if pairs.is_empty() {
                        intents.insert(dialogue_act_intent(domain, act, None));
                    }
                    for pair in pairs {
                        let slot = pair.get(0).and_then(Value::as_str).filter(|s| !s.eq_ignore_ascii_case("none"));
                        intents.insert(dialogue_act_intent(domain, act, slot));
                    }
                }
            }
            utterances.push(Utterance {
                index,
                speaker: if index % 2 == 0 { Speaker::Customer } else { Speaker::Agent },
                text: if text.trim().is_empty() { "(silence)".to_string() } else { text.to_string() },
                intents,
            });
        }
        let d = Dialogue { id: id.to_string(), utterances, domains };
        d.check()?;
        dialogues.push(d);
    }
    Corpus::new(dialogues)
}

/// Produces the intent set expressed by one utterance.
pub trait IntentLabeler {
    fn label(&self, dialogue: &Dialogue, utterance: &Utterance) -> Result<BTreeSet<String>, String>;
}

/// Uses the intents recorded in the corpus file.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnnotatedLabeler;

impl IntentLabeler for AnnotatedLabeler {
    fn label(&self, _: &Dialogue, utterance: &Utterance) -> Result<BTreeSet<String>, String> {
        Ok(utterance.intents.clone())
    }
}

/// Restricts another labeler to one speaker's turns.
#[derive(Debug, Clone)]
pub struct SpeakerFilter<L> {
    pub inner: L,
    pub speaker: Speaker,
}

impl<L: IntentLabeler> IntentLabeler for SpeakerFilter<L> {
    fn label(&self, dialogue: &Dialogue, utterance: &Utterance) -> Result<BTreeSet<String>, String> {
        if utterance.speaker == self.speaker {
            self.inner.label(dialogue, utterance)
        } else {
            Ok(BTreeSet::new())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntentUniverse {
    labels: BTreeSet<String>,
    per_dialogue: BTreeMap<String, BTreeSet<String>>,
    order: Vec<String>,
}

impl IntentUniverse {
    /// Assembles a universe from explicit per-dialogue sets, in the given order.
    pub fn from_sets<I, S>(sets: I) -> Self
    where
        I: IntoIterator<Item = (S, BTreeSet<String>)>,
        S: Into<String>,
    {
        let mut universe = IntentUniverse::default();
        for (id, set) in sets {
            let id = id.into();
            let set: BTreeSet<String> = set.iter().map(|s| normalize_intent(s)).collect();
            universe.labels.extend(set.iter().cloned());
            universe.order.push(id.clone());
            universe.per_dialogue.insert(id, set);
        }
        universe
    }

    pub fn labels(&self) -> &BTreeSet<String> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn intents_of(&self, dialogue_id: &str) -> Option<&BTreeSet<String>> {
        self.per_dialogue.get(dialogue_id)
    }

    /// Dialogue ids with their intent sets, in corpus order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.order
            .iter()
            .map(move |id| (id.as_str(), &self.per_dialogue[id]))
    }

    /// Dialogues whose intent set came out empty. They stay in the corpus but
    /// cannot contribute to coverage.
    pub fn empty_dialogues(&self) -> Vec<&str> {
        self.iter()
            .filter(|(_, s)| s.is_empty())
            .map(|(id, _)| id)
            .collect()
    }
}

pub fn build_intent_universe(
    corpus: &Corpus,
    labeler: &dyn IntentLabeler,
) -> Result<IntentUniverse, CorpusError> {
    let mut sets = Vec::with_capacity(corpus.len());
    for d in corpus.dialogues() {
        let mut set = BTreeSet::new();
        for u in &d.utterances {
            let labels = labeler.label(d, u).map_err(|message| CorpusError::Labeler {
                dialogue: d.id.clone(),
                message,
            })?;
            set.extend(labels.iter().map(|l| normalize_intent(l)).filter(|l| !l.is_empty()));
        }
        sets.push((d.id.clone(), set));
    }
    Ok(IntentUniverse::from_sets(sets))
}
