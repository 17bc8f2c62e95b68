use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use serde::Deserialize;
use tof_core::construction::build_flowchart;
use tof_core::corpus::{build_intent_universe, AnnotatedLabeler, Corpus, Dialogue, Speaker};
use tof_core::evaluation::{cpc, evaluate, Classifier, EvalOptions, KeywordLexicon, NodeAssignment, DEFAULT_MAX_IN_FLIGHT};
use tof_core::flowchart::Flowchart;
use tof_core::merge::{
    merge_global, privacy_scan, CoherenceJudge, MergeConfig, OracleJudge, PrivacyPatterns, RuleJudge,
    DEFAULT_CLUSTER_THRESHOLD, DEFAULT_COHERENCE_THRESHOLD,
};
use tof_core::mermaid;
use tof_core::oracle::{
    BackendConfig, Lexicons, OracleBackend, Recorder, RemoteBackend, ReplayBackend, RuleOracle, TemplateRegistry,
};
use tof_core::paths::{
    emit_generation_jobs, enumerate_paths, package_training_samples, parse_transcript, sample_paths,
    EnumerateOptions, GenerationTemplate, PathSample, TercileSampler, DEFAULT_MAX_LEN, DEFAULT_PATH_CAP,
    DEFAULT_REVISIT_BUDGET,
};
use tof_core::prompting::{compose_prompt, parse_schemas, SchemaMap};
use tof_core::wdic::{self, CostModel, CoverInstance, Method};

use crate::config::{pick, FileConfig};
use crate::error::CliError;
use crate::run::Run;
use crate::{ClassifierArg, CoherenceArg, Command, CorpusFormat, MethodArg, OracleArgs, SpeakerArg};

pub fn dispatch(command: Command, cfg: &FileConfig) -> Result<(), CliError> {
    match command {
        Command::Select { corpus, format, acts, method, weighted, seed, out } => {
            select(cfg, &corpus, format, acts.as_deref(), method, weighted, seed, &out)
        }
        Command::Build { corpus, name, oracle, out } => build(cfg, &corpus, name, &oracle, &out),
        Command::Eval { chart, corpus, relaxed, classifier, assignments, speaker, oracle, out } => {
            let opts = EvalArgs { relaxed, classifier, assignments, speaker };
            eval(cfg, &chart, &corpus, opts, &oracle, &out)
        }
        Command::Merge { charts, threshold, coherence, coherence_threshold, name, names, oracle, out } => {
            let opts = MergeArgs { threshold, coherence, coherence_threshold, name, names };
            merge(cfg, &charts, opts, &oracle, &out)
        }
        Command::Sample { chart, count, max_len, revisit, cap, seed, out } => {
            sample(cfg, &chart, count, max_len, revisit, cap, seed, &out)
        }
        Command::GenJobs { chart, paths, template, repeat, out } => {
            gen_jobs(cfg, &chart, &paths, template.as_deref(), repeat, &out)
        }
        Command::Package { chart, dialogues, transcripts, out } => {
            package(&chart, dialogues.as_deref(), transcripts.as_deref(), &out)
        }
        Command::Prompt { charts, schemas, description, description_file, tracking, out } => {
            prompt(cfg, &charts, schemas.as_deref(), description, description_file.as_deref(), tracking, &out)
        }
    }
}

/// Parses a value-enum setting taken from the config file.
fn enum_setting<T: ValueEnum>(key: &str, raw: Option<&String>) -> Result<Option<T>, CliError> {
    raw.map(|s| T::from_str(s, true).map_err(|_| CliError::Usage(format!("config `{key}`: unknown value `{s}`"))))
        .transpose()
}

#[allow(clippy::too_many_arguments)]
fn select(
    cfg: &FileConfig,
    corpus_path: &Path,
    format: CorpusFormat,
    acts: Option<&Path>,
    method: Option<MethodArg>,
    weighted: Option<bool>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let method = pick(method, enum_setting("method", cfg.method.as_ref())?, MethodArg::Greedy);
    let weighted = pick(weighted, cfg.weighted, false);
    let seed = pick(seed, cfg.seed, 0);
    let mut run = Run::new("select", out)?;
    let corpus = match format {
        CorpusFormat::Jsonl => run.load_corpus(corpus_path)?,
        CorpusFormat::Multiwoz => run.load_multiwoz(corpus_path, acts)?,
    };
    let method = match method {
        MethodArg::Greedy => Method::Greedy,
        MethodArg::Ilp => Method::Ilp,
        MethodArg::LpRounding => Method::LpRounding,
    };
    run.set("method", method);
    run.set("weighted", weighted);
    run.set("seed", seed);
    let universe = build_intent_universe(&corpus, &AnnotatedLabeler).map_err(|e| CliError::data("labeling", e))?;
    for id in universe.empty_dialogues() {
        log::info!("dialogue `{id}` expresses no intent and is left out");
    }
    let costs = if weighted { CostModel::Utterances } else { CostModel::Unit };
    let inst = CoverInstance::from_universe(&universe, &corpus, costs).map_err(|e| CliError::data("instance", e))?;
    // Timing goes to stdout only so output files stay reproducible.
    let started = Instant::now();
    let sol = wdic::solve(&inst, method, seed).map_err(|e| CliError::data("solver", e))?;
    let elapsed = started.elapsed();
    let utterances: usize = sol.selected.iter().filter_map(|id| corpus.get(id)).map(Dialogue::len).sum();
    println!(
        "{method}: {} of {} dialogues, cost {}, {utterances} utterances, {} intents, {:.1} ms",
        sol.len(),
        corpus.len(),
        sol.total_cost,
        inst.universe_size(),
        elapsed.as_secs_f64() * 1000.0
    );
    run.write_json("solution.json", &sol)?;
    run.finish()
}

fn lexicons(run: &mut Run, cfg: &FileConfig, args: &OracleArgs) -> Result<Lexicons, CliError> {
    let mut lx = Lexicons::builtin();
    if let Some(path) = args.lexicons.as_ref().or(cfg.lexicons.as_ref()) {
        let extra: Lexicons = run.read_json(path)?;
        lx.extend(extra);
    }
    if let Some(path) = &args.lexicon_chart {
        let chart = run.load_chart(path)?;
        lx.extend(Lexicons::from_flowchart(&chart));
    }
    Ok(lx)
}

/// The oracle selected by `args`; only `--backend` reaches the network.
fn oracle(run: &mut Run, cfg: &FileConfig, args: &OracleArgs) -> Result<Box<dyn OracleBackend>, CliError> {
    let templates = TemplateRegistry::default();
    let inner: Box<dyn OracleBackend> = if let Some(path) = &args.replay {
        run.set("oracle", "replay");
        run.read(path)?;
        Box::new(ReplayBackend::open(path, templates.clone())?)
    } else if let Some(url) = &args.backend {
        let mut bc: BackendConfig = cfg.backend.clone().unwrap_or_default();
        bc.base_url = url.clone();
        if let Some(m) = &args.model {
            bc.model = m.clone();
        }
        run.set("oracle", "remote");
        run.set("backend", &bc);
        Box::new(RemoteBackend::new(bc, templates.clone())?)
    } else {
        run.set("oracle", "rules");
        Box::new(RuleOracle::new(lexicons(run, cfg, args)?))
    };
    Ok(match &args.record {
        Some(path) => Box::new(Recorder::create(inner, templates, path)?),
        None => inner,
    })
}

fn write_chart(run: &mut Run, chart: &Flowchart) -> Result<(), CliError> {
    let text = mermaid::serialize(chart).map_err(|e| CliError::data("serialize", e))?;
    run.write("chart.mmd", &text)?;
    run.write_json("chart.sidecar.json", &chart.sidecar())
}

fn build(cfg: &FileConfig, corpus: &Path, name: Option<String>, args: &OracleArgs, out: &Path) -> Result<(), CliError> {
    let name = pick(name, cfg.name.clone(), "chart".to_string());
    let mut run = Run::new("build", out)?;
    let corpus = run.load_corpus(corpus)?;
    run.set("name", &name);
    let backend = oracle(&mut run, cfg, args)?;
    let (chart, trace) = build_flowchart(&name, corpus.dialogues(), &backend)?;
    println!(
        "{}: {} nodes, {} edges from {} dialogues ({} oracle calls)",
        name,
        chart.node_count(),
        chart.edge_count(),
        corpus.len(),
        trace.oracle_calls()
    );
    write_chart(&mut run, &chart)?;
    run.write("trace.jsonl", &trace.to_jsonl())?;
    run.finish()
}

pub struct EvalArgs {
    relaxed: Option<bool>,
    classifier: Option<ClassifierArg>,
    assignments: Option<PathBuf>,
    speaker: Option<SpeakerArg>,
}

#[derive(Deserialize)]
struct AssignmentRecord {
    id: String,
    nodes: Vec<Option<String>>,
}

fn scripted(run: &mut Run, path: &Path, dialogues: &[Dialogue]) -> Result<Vec<NodeAssignment>, CliError> {
    let text = run.read(path)?;
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: AssignmentRecord =
            serde_json::from_str(line).map_err(|e| CliError::data(format!("{}:{}", path.display(), i + 1), e))?;
        by_id.insert(rec.id, rec.nodes);
    }
    dialogues
        .iter()
        .map(|d| {
            by_id
                .remove(&d.id)
                .map(NodeAssignment::new)
                .ok_or_else(|| CliError::Data(format!("no assignment for dialogue `{}`", d.id)))
        })
        .collect()
}

fn eval(cfg: &FileConfig, chart: &Path, corpus: &Path, opts: EvalArgs, args: &OracleArgs, out: &Path) -> Result<(), CliError> {
    let relaxed = pick(opts.relaxed, cfg.relaxed, false);
    let classifier = pick(opts.classifier, enum_setting("classifier", cfg.classifier.as_ref())?, ClassifierArg::Rules);
    let speaker = opts.speaker.or(enum_setting("speaker", cfg.speaker.as_ref())?).map(|s| match s {
        SpeakerArg::Customer => Speaker::Customer,
        SpeakerArg::Agent => Speaker::Agent,
    });
    let mut run = Run::new("eval", out)?;
    let chart = run.load_chart(chart)?;
    let corpus = run.load_corpus(corpus)?;
    run.set("relaxed", relaxed);
    run.set("speaker", speaker);
    let eval_opts = EvalOptions { relaxed, speaker };
    let (report, warnings) = if let Some(path) = &opts.assignments {
        run.set("classifier", "scripted");
        let dialogues: Vec<Dialogue> = match speaker {
            Some(s) => corpus.dialogues().iter().map(|d| d.restricted_to(s)).collect(),
            None => corpus.dialogues().to_vec(),
        };
        let assignments = scripted(&mut run, path, &dialogues)?;
        (cpc(&chart, &dialogues, &assignments, relaxed)?, Vec::new())
    } else {
        match classifier {
            ClassifierArg::Rules => {
                run.set("classifier", "rules");
                let c = Classifier::Rules(KeywordLexicon::from_flowchart(&chart));
                evaluate(&chart, corpus.dialogues(), &c, eval_opts)?
            }
            ClassifierArg::Oracle => {
                let max_in_flight = pick(args.max_in_flight, cfg.max_in_flight, DEFAULT_MAX_IN_FLIGHT);
                run.set("classifier", "oracle");
                run.set("maxInFlight", max_in_flight);
                let backend = oracle(&mut run, cfg, args)?;
                let c = Classifier::Oracle { backend: &backend, max_in_flight };
                evaluate(&chart, corpus.dialogues(), &c, eval_opts)?
            }
        }
    };
    for w in &warnings {
        log::warn!("dialogue `{}` utterance {}: unparsed answer `{}`", w.dialogue_id, w.utterance, w.response);
    }
    println!(
        "UMR {:.4}, {} CPC {:.4} over {} dialogues",
        report.umr_avg,
        if relaxed { "relaxed" } else { "strict" },
        report.cpc,
        report.umr_per_dialogue.len()
    );
    run.write_json("report.json", &serde_json::json!({ "coverage": report, "warnings": warnings }))?;
    run.finish()
}

pub struct MergeArgs {
    threshold: Option<f64>,
    coherence: Option<CoherenceArg>,
    coherence_threshold: Option<f64>,
    name: Option<String>,
    names: Option<PathBuf>,
}

fn merge(cfg: &FileConfig, paths: &[PathBuf], opts: MergeArgs, args: &OracleArgs, out: &Path) -> Result<(), CliError> {
    let threshold = pick(opts.threshold, cfg.threshold, DEFAULT_CLUSTER_THRESHOLD);
    let coherence = pick(opts.coherence, enum_setting("coherence", cfg.coherence.as_ref())?, CoherenceArg::Rules);
    let name = pick(opts.name, cfg.name.clone(), "global".to_string());
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} is outside [0, 1]")));
    }
    let mut run = Run::new("merge", out)?;
    let charts = paths.iter().map(|p| run.load_chart(p)).collect::<Result<Vec<_>, _>>()?;
    run.set("threshold", threshold);
    run.set("name", &name);
    let config = MergeConfig { name, threshold };
    let (global, report) = match coherence {
        CoherenceArg::Rules => {
            let t = pick(opts.coherence_threshold, cfg.coherence_threshold, DEFAULT_COHERENCE_THRESHOLD);
            run.set("coherence", "rules");
            run.set("coherenceThreshold", t);
            merge_global(&charts, &config, &RuleJudge { threshold: t })?
        }
        CoherenceArg::Oracle => {
            run.set("coherence", "oracle");
            let backend = oracle(&mut run, cfg, args)?;
            let judge: &dyn CoherenceJudge = &OracleJudge { backend: &backend };
            merge_global(&charts, &config, judge)?
        }
    };
    let mut patterns = PrivacyPatterns::default();
    if let Some(p) = &opts.names {
        let text = run.read(p)?;
        patterns = patterns.with_names_text(&text);
    }
    let findings = privacy_scan(&global, &patterns);
    for f in &findings {
        log::warn!("privacy: {} matches {} (`{}`)", f.location, f.pattern, f.matched);
    }
    println!(
        "{} charts, {} nodes -> {} nodes, {} edges; {} privacy findings",
        charts.len(),
        report.input_nodes,
        report.output_nodes,
        report.output_edges,
        findings.len()
    );
    write_chart(&mut run, &global)?;
    run.write_json("report.json", &serde_json::json!({ "merge": report, "privacy": findings }))?;
    run.finish()
}

#[allow(clippy::too_many_arguments)]
fn sample(
    cfg: &FileConfig,
    chart: &Path,
    count: Option<usize>,
    max_len: Option<usize>,
    revisit: Option<usize>,
    cap: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let opts = EnumerateOptions {
        max_len: pick(max_len, cfg.max_len, DEFAULT_MAX_LEN),
        revisit_budget: pick(revisit, cfg.revisit, DEFAULT_REVISIT_BUDGET),
        cap: pick(cap, cfg.cap, DEFAULT_PATH_CAP),
    };
    let count = count.or(cfg.count);
    let seed = pick(seed, cfg.seed, 0);
    let mut run = Run::new("sample", out)?;
    let chart = run.load_chart(chart)?;
    run.set("maxLen", opts.max_len);
    run.set("revisit", opts.revisit_budget);
    run.set("cap", opts.cap);
    run.set("count", count);
    run.set("seed", seed);
    let all = enumerate_paths(&chart, opts).map_err(|e| CliError::data("enumeration", e))?;
    let picked = sample_paths(&all, count.unwrap_or(usize::MAX), seed, &TercileSampler)
        .map_err(|e| CliError::data("sampling", e))?;
    println!("{} of {} paths", picked.len(), all.len());
    run.write_jsonl("paths.jsonl", &picked)?;
    run.finish()
}

fn read_paths(run: &mut Run, path: &Path) -> Result<Vec<PathSample>, CliError> {
    let text = run.read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

fn gen_jobs(
    cfg: &FileConfig,
    chart: &Path,
    paths: &Path,
    template: Option<&Path>,
    repeat: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let repeat = pick(repeat, cfg.repeat, 1);
    if repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let mut run = Run::new("gen-jobs", out)?;
    let chart = run.load_chart(chart)?;
    let paths = read_paths(&mut run, paths)?;
    let template: GenerationTemplate = match template {
        Some(p) => run.read_json(p)?,
        None => GenerationTemplate::default(),
    };
    run.set("repeat", repeat);
    let jobs = emit_generation_jobs(&chart, &paths, &template, &TemplateRegistry::default())
        .map_err(|e| CliError::data("generation jobs", e))?;
    let jobs: Vec<_> = if repeat == 1 {
        jobs
    } else {
        jobs.into_iter()
            .flat_map(|j| {
                (0..repeat).map(move |k| {
                    let mut j = j.clone();
                    j.path_id = format!("{}#{k}", j.path_id);
                    j
                })
            })
            .collect()
    };
    println!("{} jobs", jobs.len());
    run.write_jsonl("jobs.jsonl", &jobs)?;
    run.finish()
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct TranscriptRecord {
    #[serde(alias = "pathId")]
    id: String,
    text: String,
}

fn package(chart: &Path, dialogues: Option<&Path>, transcripts: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut run = Run::new("package", out)?;
    let chart = run.load_chart(chart)?;
    let dialogues: Vec<Dialogue> = match (dialogues, transcripts) {
        (Some(p), _) => run.load_corpus(p)?.dialogues().to_vec(),
        (None, Some(p)) => {
            let text = run.read(p)?;
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: TranscriptRecord =
                    serde_json::from_str(line).map_err(|e| CliError::data(format!("{}:{}", p.display(), i + 1), e))?;
                out.push(parse_transcript(&rec.id, &rec.text).map_err(|e| CliError::data(p.display(), e))?);
            }
            Corpus::new(out.clone()).map_err(|e| CliError::data(p.display(), e))?;
            out
        }
        (None, None) => return Err(CliError::Usage("give --dialogues or --transcripts".into())),
    };
    let samples = package_training_samples(&dialogues, &chart).map_err(|e| CliError::data("packaging", e))?;
    println!("{} samples from {} dialogues", samples.len(), dialogues.len());
    run.write_jsonl("train.jsonl", &samples)?;
    run.finish()
}

fn prompt(
    cfg: &FileConfig,
    paths: &[PathBuf],
    schemas: Option<&Path>,
    description: Option<String>,
    description_file: Option<&Path>,
    tracking: Option<bool>,
    out: &Path,
) -> Result<(), CliError> {
    let tracking = pick(tracking, cfg.tracking, false);
    let mut run = Run::new("prompt", out)?;
    let description = match (description, description_file) {
        (Some(d), _) => d,
        (None, Some(p)) => run.read(p)?,
        (None, None) => cfg.description.clone().unwrap_or_default(),
    };
    let charts = paths.iter().map(|p| run.load_chart(p)).collect::<Result<Vec<_>, _>>()?;
    let schemas = match schemas {
        Some(p) => {
            let text = run.read(p)?;
            parse_schemas(&text).map_err(|e| CliError::data(p.display(), e))?
        }
        None => SchemaMap::new(),
    };
    run.set("tracking", tracking);
    let bundle = compose_prompt(&description, &charts, &schemas, tracking).map_err(|e| CliError::data("prompt", e))?;
    println!("{} charts, {} schemas, {} bytes", charts.len(), bundle.schema_refs.len(), bundle.rendered.len());
    run.write("prompt.txt", &bundle.rendered)?;
    run.finish()
}
