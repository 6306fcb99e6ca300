//! Subcommand implementations. Exit-code contract: 0 on success, 2 on
//! input/validation problems, 3 on backend failure (partial classify
//! results are flushed before exiting).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use crisis_core::backend::{scripted_mock, ChatBackend, HttpBackend, ScriptEntry, ScriptedBackend};
use crisis_core::corpus::{
    self, compute_stats, parse_label_tsv, parse_text_tsv, read_jsonl, write_jsonl, Split,
    TweetRecord,
};
use crisis_core::embedding::adapter::{embed_pairs, make_pairs, train_adapter, TrainConfig};
use crisis_core::embedding::EmbeddingBackend;
use crisis_core::eval::{
    correction_ceiling, read_relabels_jsonl, score, top_confusion_pairs, write_confusion_csv,
    PredOutcome,
};
use crisis_core::loraplan::{count_params, LoraConfig, LoraTarget, ModelDims};
use crisis_core::prompting::{
    load_manual_demos, select_dynamic, select_static_stratified, Demonstration, ShotStrategy,
};
use crisis_core::schema::{lenient_near_miss, HumanitarianLabel};
use crisis_core::strategies::{
    classify_adaptive, classify_few_shot, classify_hybrid, classify_standard_rag,
    classify_zero_shot, run_batch, OutcomeRecord, StrategyError, StrategyMode, StrategyOutcome,
};
use crisis_core::tfidf::TfidfModel;
use crisis_core::vindex::VectorIndex;

use crate::config::{BackendKind, ExperimentConfig};

/// Marker error for failures that must exit with code 3.
#[derive(Debug)]
pub struct BackendFailure(pub String);

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "backend failure: {}", self.0)
    }
}

impl std::error::Error for BackendFailure {}

#[derive(Serialize)]
struct Provenance {
    config_hash: String,
    seed: u64,
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

pub fn preprocess(raw_dir: &Path, out_dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut all_records: Vec<TweetRecord> = Vec::new();
    let mut orphans: HashMap<String, Vec<String>> = HashMap::new();
    for split in Split::ALL {
        let label_name = format!("all_{split}.tsv");
        let label_path = find_file(raw_dir, &label_name)?.ok_or_else(|| {
            anyhow!(
                "missing label file `{label_name}` under {}",
                raw_dir.display()
            )
        })?;
        let labels = parse_label_tsv(&label_path)?;

        let mut texts = HashMap::new();
        for path in find_text_files(raw_dir, split)? {
            parse_text_tsv(&path, &mut texts)?;
        }

        let joined = corpus::join(&labels, &texts, split)?;
        let out_path = out_dir.join(format!("{split}.jsonl"));
        write_jsonl(&joined.records, &out_path)?;
        println!(
            "{split}: {} records -> {} ({} orphan label ids)",
            joined.records.len(),
            out_path.display(),
            joined.orphan_ids.len()
        );
        orphans.insert(split.to_string(), joined.orphan_ids);
        all_records.extend(joined.records);
    }

    let stats = compute_stats(&all_records)?;
    #[derive(Serialize)]
    struct StatsDoc<'a> {
        provenance: Provenance,
        stats: &'a corpus::CorpusStats,
        orphans: &'a HashMap<String, Vec<String>>,
    }
    let doc = StatsDoc {
        provenance: Provenance {
            config_hash: hash_args(&("preprocess", raw_dir, out_dir)),
            seed,
        },
        stats: &stats,
        orphans: &orphans,
    };
    let stats_path = out_dir.join("stats.json");
    std::fs::write(&stats_path, serde_json::to_string_pretty(&doc)?)?;
    println!(
        "total {} (imbalance ratio {:.2}) -> {}",
        stats.total,
        stats.imbalance_ratio,
        stats_path.display()
    );
    Ok(())
}

fn find_file(root: &Path, name: &str) -> Result<Option<PathBuf>> {
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.with_context(|| format!("cannot walk {}", root.display()))?;
        if entry.file_type().is_file() && entry.file_name() == name {
            return Ok(Some(entry.into_path()));
        }
    }
    Ok(None)
}

fn find_text_files(root: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let suffix = format!("_{split}.tsv");
    let all_name = format!("all_{split}.tsv");
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.with_context(|| format!("cannot walk {}", root.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_string();
        if name.ends_with(&suffix) && name != all_name {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

pub fn index(config: &ExperimentConfig, enriched: bool, out: &Path) -> Result<()> {
    let corpus_path = config.require_corpus()?;
    let records = read_jsonl(corpus_path, Split::Train)?;
    if records.is_empty() {
        bail!("corpus {} is empty", corpus_path.display());
    }
    let embedder = config.build_embedder()?;
    let index = VectorIndex::build(&records, &embedder, enriched)?;
    index.save(out)?;

    let norms: Vec<f64> = (0..index.len())
        .map(|i| {
            index
                .vector(i)
                .iter()
                .map(|&v| v as f64 * v as f64)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let (min, max) = norms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| {
            (lo.min(n), hi.max(n))
        });
    println!(
        "indexed {} entries (d={}, enriched={}) -> {}.{{json,vec,meta.jsonl}}",
        index.len(),
        index.dimension(),
        enriched,
        out.display()
    );
    println!("row norms: min {min:.9}, max {max:.9}");
    Ok(())
}

// ---------------------------------------------------------------------------
// train-adapter
// ---------------------------------------------------------------------------

pub fn train_adapter_cmd(
    config: &ExperimentConfig,
    steps: usize,
    learning_rate: f64,
    out: &Path,
) -> Result<()> {
    let corpus_path = config.require_corpus()?;
    let records = read_jsonl(corpus_path, Split::Train)?;
    let tuples: Vec<(String, HumanitarianLabel)> =
        records.iter().map(|r| (r.tweet.clone(), r.label)).collect();
    let pairs = make_pairs(&tuples, config.seed)?;
    let embedder = config.build_embedder()?;
    let vector_pairs = embed_pairs(&pairs, &embedder)?;
    let train_config = TrainConfig {
        steps,
        learning_rate,
    };
    let (adapter, trace) = train_adapter(&vector_pairs, &train_config)?;
    adapter.save(out)?;

    #[derive(Serialize)]
    struct AdapterMeta {
        provenance: Provenance,
        pairs: usize,
        steps: usize,
        learning_rate: f64,
        initial_loss: f64,
        final_loss: f64,
        loss_trace: Vec<f64>,
    }
    let meta = AdapterMeta {
        provenance: Provenance {
            config_hash: config.hash(),
            seed: config.seed,
        },
        pairs: vector_pairs.len(),
        steps,
        learning_rate,
        initial_loss: trace[0],
        final_loss: *trace.last().unwrap(),
        loss_trace: trace.clone(),
    };
    let meta_path = meta_sidecar(out);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    println!(
        "trained adapter on {} pairs for {steps} steps: loss {:.6} -> {:.6}",
        vector_pairs.len(),
        trace[0],
        trace.last().unwrap()
    );
    println!(
        "adapter -> {}, meta -> {}",
        out.display(),
        meta_path.display()
    );
    Ok(())
}

fn meta_sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

enum PreparedStrategy {
    ZeroShot,
    FewShotFixed(Vec<Demonstration>),
    FewShotDynamic {
        train: Vec<TweetRecord>,
        tfidf: TfidfModel,
    },
    Rag {
        index: VectorIndex,
        embedder: Box<dyn EmbeddingBackend>,
    },
}

enum Backends {
    Shared(HttpBackend),
    PerSample(Vec<ScriptedBackend>),
}

impl Backends {
    fn for_sample(&self, i: usize) -> &dyn ChatBackend {
        match self {
            Backends::Shared(b) => b,
            Backends::PerSample(v) => &v[i],
        }
    }
}

/// Per-sample mock script line: completion queue plus optional per-entry
/// token logprobs, consumed in order by that sample's backend calls.
#[derive(serde::Deserialize)]
struct MockLine {
    completions: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<Vec<f64>>>,
}

fn load_mock_backends(path: &Path, n: usize, skip: usize) -> Result<Vec<ScriptedBackend>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read mock script {}", path.display()))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() < skip + n {
        bail!(
            "mock script {} has {} lines but {} samples need one line each",
            path.display(),
            lines.len(),
            skip + n
        );
    }
    lines[skip..skip + n]
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let parsed: MockLine = serde_json::from_str(line)
                .with_context(|| format!("mock script {} line {}", path.display(), skip + i + 1))?;
            let entries: Vec<ScriptEntry> = parsed
                .completions
                .into_iter()
                .enumerate()
                .map(|(j, text)| ScriptEntry {
                    text,
                    token_logprobs: parsed.token_logprobs.get(j).cloned().flatten(),
                })
                .collect();
            Ok(scripted_mock(entries))
        })
        .collect()
}

pub fn classify(config: &ExperimentConfig, skip_existing: bool) -> Result<()> {
    config.validate_for_classify()?;
    let corpus_path = config.require_corpus()?;
    let output_path = config.require_output()?;
    let records = read_jsonl(corpus_path, config.corpus_split)?;
    if records.is_empty() {
        bail!("corpus {} is empty", corpus_path.display());
    }

    let skip = if skip_existing && output_path.exists() {
        let existing = BufReader::new(File::open(output_path)?)
            .lines()
            .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(false))
            .count();
        existing.min(records.len())
    } else {
        0
    };
    let todo = &records[skip..];
    if todo.is_empty() {
        println!(
            "all {} samples already classified -> {}",
            records.len(),
            output_path.display()
        );
        return Ok(());
    }

    let strategy = prepare_strategy(config)?;
    let backends = match config.backend {
        BackendKind::Env => {
            Backends::Shared(HttpBackend::from_env().map_err(|e| anyhow!(e.to_string()))?)
        }
        BackendKind::Mock => {
            let script = config.mock_script.as_deref().expect("validated");
            Backends::PerSample(load_mock_backends(script, todo.len(), skip)?)
        }
    };

    let mode = config.strategy.mode;
    let results: Vec<Result<StrategyOutcome, StrategyError>> =
        run_batch(todo, config.in_flight, |i, record| {
            classify_one(record, &strategy, backends.for_sample(i), config)
        });

    // Flush completed outcomes in input order up to the first failure.
    let file = if skip > 0 {
        std::fs::OpenOptions::new().append(true).open(output_path)?
    } else {
        File::create(output_path)?
    };
    let mut out = BufWriter::new(file);
    let config_hash = config.hash();
    let mut written = 0usize;
    let mut failure: Option<StrategyError> = None;
    let mut outcomes: Vec<&StrategyOutcome> = Vec::new();
    for (record, result) in todo.iter().zip(&results) {
        match result {
            Ok(outcome) => {
                let mut line = OutcomeRecord::new(record.tweet_id.clone(), mode, outcome);
                line.config_hash = Some(config_hash.clone());
                line.seed = Some(config.seed);
                writeln!(out, "{}", serde_json::to_string(&line)?)?;
                written += 1;
                outcomes.push(outcome);
            }
            Err(e) => {
                failure = Some(clone_strategy_error(e));
                break;
            }
        }
    }
    out.flush()?;

    let triggered = outcomes.iter().filter(|o| o.rag_triggered).count();
    let failures = outcomes.iter().filter(|o| o.prediction.is_err()).count();
    println!(
        "classified {written}/{} samples ({} skipped), trigger rate {:.2}%, parse failures {failures} -> {}",
        todo.len(),
        skip,
        if written == 0 { 0.0 } else { 100.0 * triggered as f64 / written as f64 },
        output_path.display()
    );

    match failure {
        None => Ok(()),
        Some(StrategyError::Backend(e)) => Err(BackendFailure(e.to_string()).into()),
        Some(other) => Err(anyhow!("sample {written} failed: {other}")),
    }
}

// StrategyError is not Clone (sources are not); keep the message.
fn clone_strategy_error(e: &StrategyError) -> StrategyError {
    match e {
        StrategyError::Backend(inner) => StrategyError::Backend(
            crisis_core::backend::BackendError::Transport(inner.to_string()),
        ),
        other => StrategyError::InvalidConfig(other.to_string()),
    }
}

fn prepare_strategy(config: &ExperimentConfig) -> Result<PreparedStrategy> {
    match config.strategy.mode {
        StrategyMode::ZeroShot => Ok(PreparedStrategy::ZeroShot),
        StrategyMode::FewShot => match config.shots.strategy {
            ShotStrategy::Manual => {
                let path = config
                    .manual_demos
                    .as_deref()
                    .context("manual shot strategy needs `manual_demos`")?;
                let demos = load_manual_demos(path)?;
                if demos.len() != config.shots.k {
                    bail!(
                        "manual demo file has {} demonstrations, shots.k is {}",
                        demos.len(),
                        config.shots.k
                    );
                }
                Ok(PreparedStrategy::FewShotFixed(demos))
            }
            ShotStrategy::Static => {
                let train = load_train(config)?;
                let demos = select_static_stratified(&train, config.shots.k, config.shots.seed)?;
                Ok(PreparedStrategy::FewShotFixed(demos))
            }
            ShotStrategy::Dynamic => {
                let train = load_train(config)?;
                let docs: Vec<&str> = train.iter().map(|r| r.tweet.as_str()).collect();
                let tfidf = TfidfModel::fit(&docs).map_err(|e| anyhow!(e.to_string()))?;
                Ok(PreparedStrategy::FewShotDynamic { train, tfidf })
            }
        },
        StrategyMode::RagStandard | StrategyMode::RagAdaptive | StrategyMode::RagHybrid => {
            let base = config
                .index
                .as_deref()
                .context("RAG modes need an `index` path")?;
            let index = VectorIndex::load(base)?;
            let embedder = config.build_embedder()?;
            if embedder.dimension() != index.dimension() {
                bail!(
                    "embedder dimension {} does not match index dimension {}",
                    embedder.dimension(),
                    index.dimension()
                );
            }
            Ok(PreparedStrategy::Rag { index, embedder })
        }
    }
}

fn load_train(config: &ExperimentConfig) -> Result<Vec<TweetRecord>> {
    let path = config
        .train_corpus
        .as_deref()
        .context("few-shot strategies need a `train_corpus` path")?;
    Ok(read_jsonl(path, Split::Train)?)
}

fn classify_one(
    record: &TweetRecord,
    strategy: &PreparedStrategy,
    backend: &dyn ChatBackend,
    config: &ExperimentConfig,
) -> Result<StrategyOutcome, StrategyError> {
    let decoding = crisis_core::backend::DecodingConfig::default();
    match strategy {
        PreparedStrategy::ZeroShot => classify_zero_shot(&record.tweet, backend, &decoding),
        PreparedStrategy::FewShotFixed(demos) => {
            classify_few_shot(&record.tweet, demos, backend, &decoding)
        }
        PreparedStrategy::FewShotDynamic { train, tfidf } => {
            let demos = select_dynamic(&record.tweet, train, config.shots.k, tfidf)?;
            classify_few_shot(&record.tweet, &demos, backend, &decoding)
        }
        PreparedStrategy::Rag { index, embedder } => match config.strategy.mode {
            StrategyMode::RagStandard => {
                classify_standard_rag(&record.tweet, index, embedder, backend, &config.strategy)
            }
            StrategyMode::RagAdaptive => {
                classify_adaptive(&record.tweet, index, embedder, backend, &config.strategy)
            }
            StrategyMode::RagHybrid => {
                classify_hybrid(&record.tweet, index, embedder, backend, &config.strategy)
            }
            _ => unreachable!("prepared as RAG"),
        },
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    outcomes_path: &Path,
    gold_path: &Path,
    split: Split,
    relabels_path: Option<&Path>,
    top_pairs: usize,
    focus: Option<HumanitarianLabel>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let gold = read_jsonl(gold_path, split)?;
    if gold.is_empty() {
        bail!("gold corpus {} is empty", gold_path.display());
    }

    let text = std::fs::read_to_string(outcomes_path)
        .with_context(|| format!("cannot read outcomes {}", outcomes_path.display()))?;
    let mut by_id: HashMap<String, OutcomeRecord> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: OutcomeRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", outcomes_path.display(), i + 1))?;
        by_id.insert(record.tweet_id.clone(), record);
    }

    let missing: Vec<&str> = gold
        .iter()
        .filter(|r| !by_id.contains_key(&r.tweet_id))
        .map(|r| r.tweet_id.as_str())
        .collect();
    if !missing.is_empty() {
        bail!(
            "{} gold samples have no outcome (first missing id: {})",
            missing.len(),
            missing[0]
        );
    }

    let golds: Vec<(HumanitarianLabel, crisis_core::EventType)> =
        gold.iter().map(|r| (r.label, r.event_type)).collect();
    let ordered: Vec<&OutcomeRecord> = gold.iter().map(|r| &by_id[&r.tweet_id]).collect();
    let preds: Vec<PredOutcome> = ordered
        .iter()
        .map(|o| o.to_result().map(|p| (p.humanitarian, p.event)))
        .collect();
    let report = score(&golds, &preds)?;

    let near_misses = ordered
        .iter()
        .filter(|o| o.parse_error.is_some() && lenient_near_miss(&o.raw).is_some())
        .count() as u64;
    let triggered = ordered.iter().filter(|o| o.rag_triggered).count();
    let trigger_rate = triggered as f64 / ordered.len() as f64;
    let seed = ordered.first().and_then(|o| o.seed).unwrap_or(0);

    #[derive(Serialize)]
    struct ReportDoc<'a> {
        provenance: Provenance,
        trigger_rate: f64,
        near_misses: u64,
        report: &'a crisis_core::eval::EvalReport,
    }
    let provenance = || Provenance {
        config_hash: hash_args(&(
            "evaluate",
            outcomes_path,
            gold_path,
            relabels_path,
            top_pairs,
        )),
        seed,
    };
    let doc = ReportDoc {
        provenance: provenance(),
        trigger_rate,
        near_misses,
        report: &report,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;

    let csv_file = File::create(out_dir.join("confusion.csv"))?;
    write_confusion_csv(&report, BufWriter::new(csv_file))?;

    #[derive(Serialize)]
    struct PairsDoc<T: Serialize> {
        provenance: Provenance,
        pairs: T,
    }
    let pairs = top_confusion_pairs(&report, top_pairs, focus);
    std::fs::write(
        out_dir.join("pairs.json"),
        serde_json::to_string_pretty(&PairsDoc {
            provenance: provenance(),
            pairs: &pairs,
        })?,
    )?;

    println!(
        "n={} accuracy_h={:.4} accuracy_e={:.4} macro_f1={:.4} weighted_f1={:.4} trigger_rate={:.2}%",
        report.n,
        report.accuracy_h,
        report.accuracy_e,
        report.macro_f1,
        report.weighted_f1,
        100.0 * trigger_rate
    );
    println!(
        "parse failures {} (format {}, repetition {}, label {}; near misses {})",
        report.parse_failures,
        report.violations.format,
        report.violations.repetition,
        report.violations.label,
        near_misses
    );

    if let Some(relabels_path) = relabels_path {
        let relabels = read_relabels_jsonl(relabels_path)?;
        let ceiling = correction_ceiling(&report, &relabels)?;
        #[derive(Serialize)]
        struct CeilingDoc<'a> {
            provenance: Provenance,
            ceiling: &'a crisis_core::eval::CorrectionCeiling,
        }
        std::fs::write(
            out_dir.join("ceiling.json"),
            serde_json::to_string_pretty(&CeilingDoc {
                provenance: provenance(),
                ceiling: &ceiling,
            })?,
        )?;
        println!(
            "oracle ceiling: {:.2}% -> {:.2}% (+{:.2}%), {} corrections, oracle accuracy on errors {:.2}%",
            100.0 * ceiling.base_accuracy,
            100.0 * ceiling.ceiling_accuracy,
            100.0 * ceiling.delta,
            ceiling.total_corrected,
            100.0 * ceiling.oracle_accuracy_on_errors
        );
    }
    println!("reports -> {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// plan-lora
// ---------------------------------------------------------------------------

pub fn plan_lora(
    dims: ModelDims,
    rank: u64,
    alpha: f64,
    targets: &str,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let targets = parse_targets(targets)?;
    let config = LoraConfig::new(rank, alpha, targets).map_err(|e| anyhow!(e.to_string()))?;
    let plan = count_params(&dims, &config).map_err(|e| anyhow!(e.to_string()))?;

    #[derive(Serialize)]
    struct PlanDoc<'a> {
        provenance: Provenance,
        dims: &'a ModelDims,
        plan: &'a crisis_core::loraplan::LoraPlan,
    }
    let doc = PlanDoc {
        provenance: Provenance {
            config_hash: hash_args(&("plan-lora", rank, alpha.to_bits(), &config.targets)),
            seed,
        },
        dims: &dims,
        plan: &plan,
    };
    let json = serde_json::to_string_pretty(&doc)?;
    match out {
        Some(path) => {
            std::fs::write(path, &json)?;
            println!("plan -> {}", path.display());
        }
        None => println!("{json}"),
    }
    println!(
        "trainable {} of {} ({:.2}%), scaling alpha/r = {}",
        plan.trainable,
        plan.total_params,
        100.0 * plan.trainable_ratio,
        plan.scaling
    );
    Ok(())
}

fn parse_targets(spec: &str) -> Result<Vec<LoraTarget>> {
    if spec == "all" {
        return Ok(LoraTarget::ALL.to_vec());
    }
    spec.split(',')
        .map(|t| {
            LoraTarget::parse(t.trim())
                .ok_or_else(|| anyhow!("unknown target `{t}` (expected q,k,v,o,gate,up,down)"))
        })
        .collect()
}

fn hash_args<T: Serialize>(args: &T) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_string(args).expect("args serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}
