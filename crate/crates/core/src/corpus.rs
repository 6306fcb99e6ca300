//! Corpus ETL: raw tab-separated label and text files are joined on tweet id,
//! event names are normalized into the four disaster types, and the result is
//! written as one JSON object per line with a fixed five-key layout
//! (`tweet_id, tweet, label, event_name, event_type`) so repeated runs diff
//! byte-for-byte.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EventType, HumanitarianLabel};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column `{column}` in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: unknown label `{value}`")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },
    #[error("{path}: duplicate tweet id `{id}`")]
    DuplicateId { path: PathBuf, id: String },
    #[error("event name `{0}` matches no disaster-type keyword")]
    UnmappableEvent(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{path}: line {line}: {reason}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Train/dev/test partition a record belongs to.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One normalized corpus row. Serialization order of the first five fields is
/// the canonical JSONL layout; `split` is carried in memory only (it is
/// implied by which file a record lives in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub tweet: String,
    pub label: HumanitarianLabel,
    pub event_name: String,
    pub event_type: EventType,
    #[serde(skip)]
    pub split: Split,
}

/// Tuple produced by [`parse_label_tsv`]: (tweet_id, label, raw event name).
pub type LabelRow = (String, HumanitarianLabel, String);

/// Parses a label TSV with header columns `tweet_id`, `class_label`,
/// `event_name` (any column order; extra columns ignored).
pub fn parse_label_tsv(path: &Path) -> Result<Vec<LabelRow>, CorpusError> {
    let mut reader = tsv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|source| CorpusError::Csv {
            path: path.into(),
            source,
        })?
        .clone();
    let id_col = column(&headers, path, "tweet_id")?;
    let label_col = column(&headers, path, "class_label")?;
    let event_col = column(&headers, path, "event_name")?;

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CorpusError::Csv {
            path: path.into(),
            source,
        })?;
        let id = field(&record, id_col, path, i)?;
        let label_raw = field(&record, label_col, path, i)?;
        let event = field(&record, event_col, path, i)?;
        let label = HumanitarianLabel::from_str_strict(&label_raw).ok_or_else(|| {
            CorpusError::UnknownLabel {
                path: path.into(),
                row: i,
                value: label_raw.clone(),
            }
        })?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.into(),
                id,
            });
        }
        rows.push((id, label, event));
    }
    Ok(rows)
}

/// Parses an event text TSV with header columns `tweet_id`, `tweet_text`
/// into an id-to-text map, merging into `texts`.
pub fn parse_text_tsv(path: &Path, texts: &mut HashMap<String, String>) -> Result<(), CorpusError> {
    let mut reader = tsv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|source| CorpusError::Csv {
            path: path.into(),
            source,
        })?
        .clone();
    let id_col = column(&headers, path, "tweet_id")?;
    let text_col = column(&headers, path, "tweet_text")?;

    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CorpusError::Csv {
            path: path.into(),
            source,
        })?;
        let id = field(&record, id_col, path, i)?;
        let text = field(&record, text_col, path, i)?;
        texts.insert(id, text);
    }
    Ok(())
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    // Raw tweet dumps are unquoted; a stray `"` inside a tweet must not start
    // a quoted field.
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, path: &Path, name: &str) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CorpusError::MissingColumn {
            path: path.into(),
            column: name.into(),
        })
}

fn field(
    record: &csv::StringRecord,
    col: usize,
    path: &Path,
    row: usize,
) -> Result<String, CorpusError> {
    record
        .get(col)
        .map(|s| s.trim().to_string())
        .ok_or_else(|| CorpusError::InvalidRecord {
            path: path.into(),
            line: row + 2,
            reason: format!("row has no column {col}"),
        })
}

/// Maps a raw event name onto one of the four disaster types by keyword
/// containment, checked in the fixed priority order earthquake, fire, flood,
/// hurricane ("wildfire" is covered by the `fire` keyword, "cyclone" counts
/// as hurricane).
pub fn normalize_event(event_name: &str) -> Result<EventType, CorpusError> {
    let name = event_name.to_lowercase();
    if name.contains("earthquake") {
        Ok(EventType::Earthquake)
    } else if name.contains("fire") {
        Ok(EventType::Fire)
    } else if name.contains("flood") {
        Ok(EventType::Flood)
    } else if name.contains("hurricane") || name.contains("cyclone") {
        Ok(EventType::Hurricane)
    } else {
        Err(CorpusError::UnmappableEvent(event_name.to_string()))
    }
}

/// Result of joining label rows with tweet texts. Label ids with no matching
/// text are reported, never silently dropped.
#[derive(Debug, Clone)]
pub struct JoinOutcome {
    pub records: Vec<TweetRecord>,
    pub orphan_ids: Vec<String>,
}

/// Joins label tuples with their tweet texts and normalizes the event type.
/// Output preserves the order of `labels`. Record invariants (digit-only
/// ids, non-blank text) are enforced here, where records come into being.
pub fn join(
    labels: &[LabelRow],
    texts: &HashMap<String, String>,
    split: Split,
) -> Result<JoinOutcome, CorpusError> {
    let mut records = Vec::with_capacity(labels.len());
    let mut orphan_ids = Vec::new();
    for (row, (id, label, event_name)) in labels.iter().enumerate() {
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CorpusError::InvalidRecord {
                path: PathBuf::new(),
                line: row + 1,
                reason: format!("tweet_id `{id}` is not a digit string"),
            });
        }
        match texts.get(id) {
            Some(text) if text.trim().is_empty() => {
                return Err(CorpusError::InvalidRecord {
                    path: PathBuf::new(),
                    line: row + 1,
                    reason: format!("tweet text for id `{id}` is blank"),
                });
            }
            Some(text) => records.push(TweetRecord {
                tweet_id: id.clone(),
                tweet: text.clone(),
                label: *label,
                event_name: event_name.clone(),
                event_type: normalize_event(event_name)?,
                split,
            }),
            None => orphan_ids.push(id.clone()),
        }
    }
    Ok(JoinOutcome {
        records,
        orphan_ids,
    })
}

/// Writes records as JSONL, one compact object per line, keys in the
/// canonical order.
pub fn write_jsonl(records: &[TweetRecord], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.into(),
            source,
        })?;
    }
    out.flush().map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })
}

/// Reads a JSONL corpus file, assigning every record the given split.
/// Validates the record invariants: digit-only unique ids, non-blank text,
/// event type consistent with the event name.
pub fn read_jsonl(path: &Path, split: Split) -> Result<Vec<TweetRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.into(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: TweetRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::InvalidRecord {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        record.split = split;
        validate_record(&record, path, i + 1)?;
        if !seen.insert(record.tweet_id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.into(),
                id: record.tweet_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

fn validate_record(record: &TweetRecord, path: &Path, line: usize) -> Result<(), CorpusError> {
    let fail = |reason: String| CorpusError::InvalidRecord {
        path: path.into(),
        line,
        reason,
    };
    if record.tweet_id.is_empty() || !record.tweet_id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(fail(format!(
            "tweet_id `{}` is not a digit string",
            record.tweet_id
        )));
    }
    if record.tweet.trim().is_empty() {
        return Err(fail("tweet text is blank".into()));
    }
    let derived = normalize_event(&record.event_name)?;
    if derived != record.event_type {
        return Err(fail(format!(
            "event_type `{}` does not match event_name `{}` (expected `{}`)",
            record.event_type, record.event_name, derived
        )));
    }
    Ok(())
}

/// Per-(label, event, split) cell counts plus split totals and the class
/// imbalance ratio (largest label total over smallest, over labels present).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: BTreeMap<HumanitarianLabel, BTreeMap<EventType, BTreeMap<Split, u64>>>,
    pub split_totals: BTreeMap<Split, u64>,
    pub label_totals: BTreeMap<HumanitarianLabel, u64>,
    pub total: u64,
    pub imbalance_ratio: f64,
}

pub fn compute_stats(corpus: &[TweetRecord]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: BTreeMap<HumanitarianLabel, BTreeMap<EventType, BTreeMap<Split, u64>>> =
        BTreeMap::new();
    let mut split_totals = BTreeMap::new();
    let mut label_totals = BTreeMap::new();
    for record in corpus {
        *counts
            .entry(record.label)
            .or_default()
            .entry(record.event_type)
            .or_default()
            .entry(record.split)
            .or_default() += 1;
        *split_totals.entry(record.split).or_default() += 1;
        *label_totals.entry(record.label).or_default() += 1;
    }
    let max = label_totals.values().copied().max().unwrap_or(0);
    let min = label_totals.values().copied().min().unwrap_or(0);
    Ok(CorpusStats {
        counts,
        split_totals,
        label_totals,
        total: corpus.len() as u64,
        imbalance_ratio: max as f64 / min as f64,
    })
}
