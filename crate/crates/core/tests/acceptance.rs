//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime (run with `--nocapture` to see them). Every tolerance is
//! pinned in the assertions below.
//!
//! Criterion 3's full-corpus half needs the raw HumAID dump, which is not
//! redistributable; it runs only when `CRISIS_HUMAID_RAW` points at the raw
//! directory and otherwise checks the published arithmetic plus the bundled
//! 60-record fixture.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use crisis_core::backend::{scripted_mock, ScriptEntry};
use crisis_core::corpus::{self, compute_stats, normalize_event, Split, TweetRecord};
use crisis_core::embedding::adapter::{
    gradient, loss, train_adapter, LinearAdapter, TrainConfig, VectorPair,
};
use crisis_core::embedding::metrics::separation_ratio;
use crisis_core::embedding::{EmbeddingBackend, EmbeddingError, EmbeddingVector};
use crisis_core::eval::{correction_ceiling, cost_per_point, score, OracleRelabel, PredOutcome};
use crisis_core::loraplan::{count_params, lora_forward, LoraConfig, LoraTarget, ModelDims};
use crisis_core::rng::SplitMix64;
use crisis_core::schema::{
    format_prediction_json, parse_prediction, EventType, HumanitarianLabel, ParseViolation,
};
use crisis_core::strategies::{
    classify_adaptive, classify_standard_rag, classify_zero_shot, rerank_hybrid, run_batch,
    StrategyConfig, StrategyMode,
};
use crisis_core::vindex::{EntryMeta, Neighbor, VectorIndex};

use HumanitarianLabel as H;

fn finish(criterion: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "{criterion} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("ACCEPTANCE {criterion}: PASS ({elapsed:.2?})");
}

/// Embedder that replays externally supplied vectors, keyed by text.
struct Passthrough {
    rows: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl EmbeddingBackend for Passthrough {
    fn dimension(&self) -> usize {
        self.dim
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector::new(self.rows[*t].clone()))
            .collect())
    }
}

fn fixture_corpus() -> Vec<TweetRecord> {
    let root = format!("{}/tests/fixtures/mini_raw", env!("CARGO_MANIFEST_DIR"));
    let mut all = Vec::new();
    for split in Split::ALL {
        let labels =
            corpus::parse_label_tsv(format!("{root}/all_combined/all_{split}.tsv").as_ref())
                .unwrap();
        let mut texts = HashMap::new();
        for entry in walk_tsvs(&root, &format!("_{split}.tsv")) {
            if !entry.ends_with(&format!("all_{split}.tsv")) {
                corpus::parse_text_tsv(entry.as_ref(), &mut texts).unwrap();
            }
        }
        let joined = corpus::join(&labels, &texts, split).unwrap();
        assert!(joined.orphan_ids.is_empty(), "fixture must join cleanly");
        all.extend(joined.records);
    }
    all
}

fn walk_tsvs(root: &str, suffix: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut stack = vec![std::path::PathBuf::from(root)];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .ends_with(suffix)
            {
                found.push(path.to_string_lossy().to_string());
            }
        }
    }
    found.sort();
    found
}

// ---------------------------------------------------------------------------
// 1. Correction-ceiling arithmetic
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_correction_ceiling_arithmetic() {
    let start = Instant::now();

    // Confusion geometry consistent with the published error analysis:
    // 12,054 correct predictions on n = 15,160 (79.51%), ten dominant error
    // cells totalling 1,917, and 1,189 residual errors spread over smaller
    // cells.
    let top_pairs: [(H, H, u64); 10] = [
        (
            H::InfrastructureAndUtilityDamage,
            H::OtherRelevantInformation,
            118,
        ),
        (H::CautionAndAdvice, H::OtherRelevantInformation, 197),
        (H::NotHumanitarian, H::OtherRelevantInformation, 277),
        (
            H::RequestsOrUrgentNeeds,
            H::RescueVolunteeringOrDonationEffort,
            130,
        ),
        (H::OtherRelevantInformation, H::CautionAndAdvice, 201),
        (H::OtherRelevantInformation, H::NotHumanitarian, 277),
        (
            H::DisplacedPeopleAndEvacuations,
            H::OtherRelevantInformation,
            250,
        ),
        (
            H::OtherRelevantInformation,
            H::RescueVolunteeringOrDonationEffort,
            200,
        ),
        (
            H::SympathyAndSupport,
            H::RescueVolunteeringOrDonationEffort,
            150,
        ),
        (H::InjuredOrDeadPeople, H::OtherRelevantInformation, 117),
    ];
    let filler: [(H, H, u64); 11] = [
        (H::CautionAndAdvice, H::NotHumanitarian, 116),
        (
            H::DisplacedPeopleAndEvacuations,
            H::RescueVolunteeringOrDonationEffort,
            116,
        ),
        (H::InfrastructureAndUtilityDamage, H::NotHumanitarian, 116),
        (H::InjuredOrDeadPeople, H::SympathyAndSupport, 116),
        (H::MissingOrFoundPeople, H::InjuredOrDeadPeople, 116),
        (H::NotHumanitarian, H::SympathyAndSupport, 116),
        (
            H::OtherRelevantInformation,
            H::InfrastructureAndUtilityDamage,
            116,
        ),
        (H::RequestsOrUrgentNeeds, H::OtherRelevantInformation, 116),
        (
            H::RescueVolunteeringOrDonationEffort,
            H::RequestsOrUrgentNeeds,
            116,
        ),
        (H::SympathyAndSupport, H::NotHumanitarian, 116),
        (H::MissingOrFoundPeople, H::NotHumanitarian, 29),
    ];
    let mut golds: Vec<(H, EventType)> = Vec::new();
    let mut preds: Vec<PredOutcome> = Vec::new();
    for (i, label) in H::ALL.iter().enumerate() {
        let diag = if i == 9 { 1200 } else { 1206 };
        for _ in 0..diag {
            golds.push((*label, EventType::Flood));
            preds.push(Ok((*label, EventType::Flood)));
        }
    }
    for &(g, p, count) in top_pairs.iter().chain(&filler) {
        for _ in 0..count {
            golds.push((g, EventType::Flood));
            preds.push(Ok((p, EventType::Flood)));
        }
    }
    assert_eq!(golds.len(), 15_160);
    let report = score(&golds, &preds).unwrap();
    assert_eq!(report.trace(), 12_054);
    assert_eq!(format!("{:.2}", 100.0 * report.accuracy_h), "79.51");

    // Thirty oracle relabels per dominant pair, with the per-pair hit counts
    // that reproduce the published per-pair accuracies.
    let correct_of_30: [u64; 10] = [11, 10, 9, 8, 8, 1, 3, 5, 5, 5];
    let mut relabels = Vec::new();
    for (&(g, p, _), &hits) in top_pairs.iter().zip(&correct_of_30) {
        for j in 0..30 {
            relabels.push(OracleRelabel {
                sample_id: format!("{g}->{p}#{j}"),
                gold: g,
                model_pred: p,
                oracle_pred: if j < hits { g } else { p },
            });
        }
    }
    let ceiling = correction_ceiling(&report, &relabels).unwrap();

    let corrected_of = |g: H, p: H| {
        ceiling
            .per_pair
            .iter()
            .find(|c| c.gold == g && c.predicted == p)
            .map(|c| c.corrected)
            .unwrap()
    };
    assert_eq!(
        corrected_of(
            H::InfrastructureAndUtilityDamage,
            H::OtherRelevantInformation
        ),
        43
    );
    assert_eq!(
        corrected_of(H::CautionAndAdvice, H::OtherRelevantInformation),
        66
    );
    assert_eq!(
        corrected_of(H::NotHumanitarian, H::OtherRelevantInformation),
        83
    );
    assert_eq!(
        corrected_of(
            H::RequestsOrUrgentNeeds,
            H::RescueVolunteeringOrDonationEffort
        ),
        35
    );
    assert_eq!(
        corrected_of(H::OtherRelevantInformation, H::CautionAndAdvice),
        54
    );
    assert_eq!(
        corrected_of(H::OtherRelevantInformation, H::NotHumanitarian),
        9
    );

    assert_eq!(ceiling.total_corrected, 393);
    assert_eq!(format!("{:.2}", 100.0 * ceiling.base_accuracy), "79.51");
    assert_eq!(format!("{:.2}", 100.0 * ceiling.ceiling_accuracy), "82.10");
    assert_eq!(format!("{:.2}", 100.0 * ceiling.delta), "2.59");
    assert_eq!(
        format!("{:.2}", 100.0 * ceiling.oracle_accuracy_on_errors),
        "21.67"
    );

    finish(
        "1 correction-ceiling arithmetic",
        start,
        Duration::from_secs(1),
    );
}

// ---------------------------------------------------------------------------
// 2. Cost per point
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_cost_per_point() {
    let start = Instant::now();
    let cost = cost_per_point(22.0, 2.59).unwrap();
    assert!((cost - 8.49).abs() <= 0.02, "got {cost}");
    finish("2 cost-per-point", start, Duration::from_secs(1));
}

// ---------------------------------------------------------------------------
// 3. Dataset bookkeeping
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_dataset_bookkeeping() {
    let start = Instant::now();

    // Bundled 60-record fixture: split totals 42/6/12.
    let records = fixture_corpus();
    let stats = compute_stats(&records).unwrap();
    assert_eq!(stats.total, 60);
    assert_eq!(stats.split_totals[&Split::Train], 42);
    assert_eq!(stats.split_totals[&Split::Dev], 6);
    assert_eq!(stats.split_totals[&Split::Test], 12);

    // Published imbalance arithmetic: 21,278 / 358 is the ~59:1 ratio.
    let ratio = 21_278f64 / 358f64;
    assert!((ratio - 59.44).abs() < 0.01, "got {ratio}");
    assert_eq!(ratio.round() as u64, 59);

    // Nineteen event names, enumerated by hand, all map; the twentieth has
    // no keyword and must be rejected.
    let table: [(&str, EventType); 19] = [
        ("ecuador_earthquake_2016", EventType::Earthquake),
        ("nepal_earthquake_2015", EventType::Earthquake),
        ("mexico_earthquake_2017", EventType::Earthquake),
        ("chiapas_earthquake_2017", EventType::Earthquake),
        ("iran_iraq_earthquake_2017", EventType::Earthquake),
        ("california_wildfires_2018", EventType::Fire),
        ("canada_wildfires_2016", EventType::Fire),
        ("greece_wildfires_2018", EventType::Fire),
        ("italy_wildfires_2017", EventType::Fire),
        ("socal_fires_2017", EventType::Fire),
        ("kerala_floods_2018", EventType::Flood),
        ("srilanka_floods_2017", EventType::Flood),
        ("maryland_floods_2018", EventType::Flood),
        ("pakistan_floods_2010", EventType::Flood),
        ("hurricane_harvey_2017", EventType::Hurricane),
        ("hurricane_irma_2017", EventType::Hurricane),
        ("hurricane_maria_2017", EventType::Hurricane),
        ("hurricane_florence_2018", EventType::Hurricane),
        ("cyclone_idai_2019", EventType::Hurricane),
    ];
    for (name, expected) in table {
        assert_eq!(normalize_event(name).unwrap(), expected, "{name}");
    }
    assert!(normalize_event("midwest_blizzard_2019").is_err());

    // Full-corpus totals run only when the user supplies the raw dump.
    match std::env::var("CRISIS_HUMAID_RAW") {
        Err(_) => println!(
            "ACCEPTANCE 3: full-corpus totals skipped (set CRISIS_HUMAID_RAW to run; \
             expected 53,531/7,793/15,160 = 76,484)"
        ),
        Ok(raw) => {
            let mut all = Vec::new();
            for split in Split::ALL {
                let labels =
                    corpus::parse_label_tsv(format!("{raw}/all_combined/all_{split}.tsv").as_ref())
                        .unwrap();
                let mut texts = HashMap::new();
                for file in walk_tsvs(&raw, &format!("_{split}.tsv")) {
                    if !file.ends_with(&format!("all_{split}.tsv")) {
                        corpus::parse_text_tsv(file.as_ref(), &mut texts).unwrap();
                    }
                }
                all.extend(corpus::join(&labels, &texts, split).unwrap().records);
            }
            let stats = compute_stats(&all).unwrap();
            assert_eq!(stats.split_totals[&Split::Train], 53_531);
            assert_eq!(stats.split_totals[&Split::Dev], 7_793);
            assert_eq!(stats.split_totals[&Split::Test], 15_160);
            assert_eq!(stats.total, 76_484);
            assert_eq!(stats.imbalance_ratio.round() as u64, 59);
        }
    }

    finish("3 dataset bookkeeping", start, Duration::from_secs(30));
}

// ---------------------------------------------------------------------------
// 4. LoRA accounting
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_lora_accounting() {
    let start = Instant::now();

    let dims = ModelDims::standard_8b();
    let plan = count_params(
        &dims,
        &LoraConfig::new(64, 128.0, LoraTarget::ALL.to_vec()).unwrap(),
    )
    .unwrap();
    assert_eq!(plan.trainable, 167_772_160);
    assert!(
        (100.0 * plan.trainable_ratio - 2.09).abs() < 0.005,
        "ratio {}",
        plan.trainable_ratio
    );

    // Rank 32 with the same targets is half of that; the 167M figure is a
    // rank-64 count on these dimensions.
    let plan32 = count_params(
        &dims,
        &LoraConfig::new(32, 64.0, LoraTarget::ALL.to_vec()).unwrap(),
    )
    .unwrap();
    assert_eq!(plan32.trainable, 83_886_080);

    // Merged-weight equivalence on one hundred random 8x8 instances.
    let mut rng = SplitMix64::new(40_404);
    for _ in 0..100 {
        let d = 8;
        let r = 1 + rng.index(4);
        let mat = |rng: &mut SplitMix64, rows: usize, cols: usize| {
            ndarray::Array2::from_shape_fn((rows, cols), |_| rng.f64() * 2.0 - 1.0)
        };
        let w0 = mat(&mut rng, d, d);
        let a = mat(&mut rng, r, d);
        let b = mat(&mut rng, d, r);
        let x = ndarray::Array1::from_shape_fn(d, |_| rng.f64() * 2.0 - 1.0);
        let alpha = 1.0 + 127.0 * rng.f64();
        let direct = lora_forward(&w0, &a, &b, alpha, r as u64, &x).unwrap();
        let merged = (&w0 + &(b.dot(&a) * (alpha / r as f64))).dot(&x);
        for (p, q) in direct.iter().zip(merged.iter()) {
            assert!((p - q).abs() <= 1e-10, "deviation {}", (p - q).abs());
        }
    }

    finish("4 lora accounting", start, Duration::from_secs(5));
}

// ---------------------------------------------------------------------------
// 5. Metric oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_metric_oracle() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(20_26);
    for instance in 0..200 {
        let n = 1 + rng.index(100);
        let golds: Vec<(H, EventType)> = (0..n)
            .map(|_| (H::ALL[rng.index(10)], EventType::ALL[rng.index(4)]))
            .collect();
        let preds: Vec<PredOutcome> = (0..n)
            .map(|_| {
                if rng.index(12) == 0 {
                    Err(ParseViolation::Format {
                        detail: "scrambled".into(),
                    })
                } else {
                    Ok((H::ALL[rng.index(10)], EventType::ALL[rng.index(4)]))
                }
            })
            .collect();
        let report = score(&golds, &preds).unwrap();

        // Brute-force counting oracle, recomputed from scratch.
        let correct_h = golds
            .iter()
            .zip(&preds)
            .filter(|((g, _), p)| matches!(p, Ok((h, _)) if h == g))
            .count();
        let correct_e = golds
            .iter()
            .zip(&preds)
            .filter(|((_, g), p)| matches!(p, Ok((_, e)) if e == g))
            .count();
        assert!((report.accuracy_h - correct_h as f64 / n as f64).abs() <= 1e-9);
        assert!((report.accuracy_e - correct_e as f64 / n as f64).abs() <= 1e-9);

        let mut macro_sum = 0.0;
        let mut weighted_sum = 0.0;
        for label in H::ALL {
            let tp = golds
                .iter()
                .zip(&preds)
                .filter(|((g, _), p)| *g == label && matches!(p, Ok((h, _)) if *h == label))
                .count() as f64;
            let fp = golds
                .iter()
                .zip(&preds)
                .filter(|((g, _), p)| *g != label && matches!(p, Ok((h, _)) if *h == label))
                .count() as f64;
            let support = golds.iter().filter(|(g, _)| *g == label).count() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if support == 0.0 { 0.0 } else { tp / support };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            let got = &report.per_class[&label];
            assert!(
                (got.precision - precision).abs() <= 1e-9,
                "instance {instance}"
            );
            assert!((got.recall - recall).abs() <= 1e-9);
            assert!((got.f1 - f1).abs() <= 1e-9);
            macro_sum += f1;
            weighted_sum += f1 * support;
        }
        assert!((report.macro_f1 - macro_sum / 10.0).abs() <= 1e-9);
        assert!((report.weighted_f1 - weighted_sum / n as f64).abs() <= 1e-9);
    }
    finish("5 metric oracle", start, Duration::from_secs(10));
}

// ---------------------------------------------------------------------------
// 6. Retrieval exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_retrieval_exactness() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(606);
    for _ in 0..100 {
        let n = 1 + rng.index(500);
        let d = 16;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.f64() * 2.0 - 1.0).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect();
        let records: Vec<TweetRecord> = (0..n)
            .map(|i| TweetRecord {
                tweet_id: format!("{i}"),
                tweet: format!("row {i}"),
                label: H::ALL[i % 10],
                event_name: "x_fire_y".into(),
                event_type: EventType::Fire,
                split: Split::Train,
            })
            .collect();
        let backend = Passthrough {
            rows: records
                .iter()
                .zip(&rows)
                .map(|(r, v)| (r.tweet.clone(), v.clone()))
                .collect(),
            dim: d,
        };
        let index = VectorIndex::build(&records, &backend, false).unwrap();

        // Full ordering equals the brute-force dot-product sort.
        let mut q: Vec<f64> = (0..d).map(|_| rng.f64() * 2.0 - 1.0).collect();
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.iter_mut().for_each(|x| *x /= qn);
        let hits = index.search(&q, n).unwrap();
        assert_eq!(hits.len(), n);
        let mut brute: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                (
                    i,
                    index
                        .vector(i)
                        .iter()
                        .zip(&q)
                        .map(|(&a, &b)| a as f64 * b)
                        .sum::<f64>(),
                )
            })
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(
            hits.iter().map(|h| h.position).collect::<Vec<_>>(),
            brute.iter().map(|b| b.0).collect::<Vec<_>>()
        );

        // Self-retrieval: a handful of stored vectors per instance.
        for _ in 0..5 {
            let i = rng.index(n);
            let stored: Vec<f64> = index.vector(i).iter().map(|&v| v as f64).collect();
            let top = index.search(&stored, 1).unwrap();
            assert_eq!(top[0].position, i);
            assert!((top[0].score - 1.0).abs() <= 1e-6, "score {}", top[0].score);
        }
    }
    finish("6 retrieval exactness", start, Duration::from_secs(30));
}

// ---------------------------------------------------------------------------
// 7. Hybrid arbitration
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_hybrid_arbitration() {
    let start = Instant::now();

    let alphabet = [
        H::CautionAndAdvice,
        H::NotHumanitarian,
        H::OtherRelevantInformation,
        H::SympathyAndSupport,
    ];
    let neighbor = |pos: usize, label: H| Neighbor {
        position: pos,
        score: 1.0 - pos as f64 * 0.01,
        meta: EntryMeta {
            tweet_id: format!("{pos}"),
            tweet: format!("n{pos}"),
            label,
            event: EventType::Fire,
            corpus_position: pos,
        },
    };

    // Direct transcription of the arbitration procedure, kept independent of
    // the implementation: supporters first, then a >= 50% dominant label
    // (ties to the smallest label), then the original order.
    let oracle = |labels: &[H], phase1: H, k: usize| -> Vec<usize> {
        let supporters: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == phase1).collect();
        if !supporters.is_empty() {
            return supporters.into_iter().take(k).collect();
        }
        let mut counts: Vec<(H, usize)> = Vec::new();
        for &l in labels {
            match counts.iter_mut().find(|(c, _)| *c == l) {
                Some((_, n)) => *n += 1,
                None => counts.push((l, 1)),
            }
        }
        let max = counts.iter().map(|(_, n)| *n).max().unwrap();
        let dominant = counts
            .iter()
            .filter(|(_, n)| *n == max)
            .map(|(l, _)| *l)
            .min()
            .unwrap();
        if 2 * max >= labels.len() {
            return (0..labels.len())
                .filter(|&i| labels[i] == dominant)
                .take(k)
                .collect();
        }
        (0..labels.len().min(k)).collect()
    };

    // Exhaustive label sequences of length 1..=4 over the 4-letter alphabet,
    // against every phase-1 label and every k in 1..=4.
    let mut cases = 0usize;
    for len in 1..=4usize {
        let total = 4usize.pow(len as u32);
        for code in 0..total {
            let mut labels = Vec::with_capacity(len);
            let mut c = code;
            for _ in 0..len {
                labels.push(alphabet[c % 4]);
                c /= 4;
            }
            let neighbors: Vec<Neighbor> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| neighbor(i, l))
                .collect();
            for &phase1 in &alphabet {
                for k in 1..=4usize {
                    let got: Vec<usize> = rerank_hybrid(&neighbors, phase1, k)
                        .iter()
                        .map(|n| n.position)
                        .collect();
                    let want = oracle(&labels, phase1, k);
                    assert_eq!(got, want, "labels {labels:?} phase1 {phase1} k {k}");
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, (4 + 16 + 64 + 256) * 4 * 4);

    // The three designated behaviors.
    let consistency = rerank_hybrid(
        &[
            neighbor(0, H::CautionAndAdvice),
            neighbor(1, H::NotHumanitarian),
            neighbor(2, H::CautionAndAdvice),
        ],
        H::CautionAndAdvice,
        2,
    );
    assert!(consistency
        .iter()
        .all(|n| n.meta.label == H::CautionAndAdvice));

    let correction = rerank_hybrid(
        &[
            neighbor(0, H::NotHumanitarian),
            neighbor(1, H::NotHumanitarian),
            neighbor(2, H::OtherRelevantInformation),
        ],
        H::CautionAndAdvice,
        2,
    );
    assert!(correction
        .iter()
        .all(|n| n.meta.label == H::NotHumanitarian));

    let fallback = rerank_hybrid(
        &[
            neighbor(0, H::NotHumanitarian),
            neighbor(1, H::OtherRelevantInformation),
            neighbor(2, H::SympathyAndSupport),
        ],
        H::CautionAndAdvice,
        2,
    );
    assert_eq!(
        fallback.iter().map(|n| n.position).collect::<Vec<_>>(),
        vec![0, 1]
    );

    finish("7 hybrid arbitration", start, Duration::from_secs(5));
}

// ---------------------------------------------------------------------------
// 8. Adaptive gating
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_adaptive_gating() {
    let start = Instant::now();

    // Tiny index for the retrieval leg of phase 2.
    let records: Vec<TweetRecord> = (0..4)
        .map(|i| TweetRecord {
            tweet_id: format!("{i}"),
            tweet: format!("indexed tweet number {i} about rain"),
            label: H::ALL[i],
            event_name: "x_flood_y".into(),
            event_type: EventType::Flood,
            split: Split::Train,
        })
        .collect();
    let embedder = crisis_core::embedding::HashedEmbedder::new(64);
    let index = VectorIndex::build(&records, &embedder, false).unwrap();

    let answer = format_prediction_json(H::SympathyAndSupport, EventType::Flood);
    let confidences = [0.95f64, 0.6, 0.3, 0.8, 0.97, 0.45];

    for tau in [0.0f64, 0.5, 0.7, 1.0] {
        let config = StrategyConfig {
            mode: StrategyMode::RagAdaptive,
            tau,
            ..Default::default()
        };
        let mut triggered = 0usize;
        for &c in &confidences {
            // One backend per sample: phase-1 completion with logprob ln(c),
            // plus a spare phase-2 completion.
            let backend = scripted_mock(vec![
                ScriptEntry::with_logprobs(&answer, vec![c.ln()]),
                ScriptEntry::text_only(&answer),
            ]);
            let outcome =
                classify_adaptive("some tweet text", &index, &embedder, &backend, &config).unwrap();
            if outcome.rag_triggered {
                triggered += 1;
            }
        }
        let expected = confidences.iter().filter(|&&c| c < tau).count();
        assert_eq!(triggered, expected, "tau = {tau}");
    }

    // Standard RAG triggers on every sample.
    let config = StrategyConfig {
        mode: StrategyMode::RagStandard,
        ..Default::default()
    };
    let mut triggered = 0usize;
    for i in 0..6 {
        let backend = scripted_mock(vec![ScriptEntry::text_only(&answer)]);
        let outcome = classify_standard_rag(
            &format!("query number {i}"),
            &index,
            &embedder,
            &backend,
            &config,
        )
        .unwrap();
        if outcome.rag_triggered {
            triggered += 1;
        }
    }
    assert_eq!(triggered, 6, "standard retrieval rate must be 100%");

    finish("8 adaptive gating", start, Duration::from_secs(5));
}

// ---------------------------------------------------------------------------
// 9. Contrastive adapter
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_contrastive_adapter() {
    let start = Instant::now();

    // Seeded two-cluster set: 20 points in d=8 around the oblique means
    // (2,1,0,..) and (1,2,0,..) (cosine ~0.8 apart), sigma 0.3 via
    // Box-Muller over the splitmix stream. Driving negative pairs toward
    // orthogonality pulls these clusters apart.
    let mut rng = SplitMix64::new(909);
    let mut gauss = move || {
        let mut u1 = rng.f64();
        if u1 < 1e-12 {
            u1 = 1e-12;
        }
        let u2 = rng.f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let d = 8;
    let point = |mean: [f64; 2], gauss: &mut dyn FnMut() -> f64| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let center = if j < 2 { mean[j] } else { 0.0 };
                center + 0.3 * gauss()
            })
            .collect()
    };
    let cluster_a: Vec<Vec<f64>> = (0..10).map(|_| point([2.0, 1.0], &mut gauss)).collect();
    let cluster_b: Vec<Vec<f64>> = (0..10).map(|_| point([1.0, 2.0], &mut gauss)).collect();

    // One positive and one negative pair per anchor.
    let mut pairs = Vec::new();
    for i in 0..10 {
        pairs.push(VectorPair {
            u: cluster_a[i].clone(),
            v: cluster_a[(i + 1) % 10].clone(),
            target: 1.0,
        });
        pairs.push(VectorPair {
            u: cluster_a[i].clone(),
            v: cluster_b[i].clone(),
            target: 0.0,
        });
        pairs.push(VectorPair {
            u: cluster_b[i].clone(),
            v: cluster_b[(i + 1) % 10].clone(),
            target: 1.0,
        });
        pairs.push(VectorPair {
            u: cluster_b[i].clone(),
            v: cluster_a[i].clone(),
            target: 0.0,
        });
    }

    // Analytic gradient at the identity matches central finite differences
    // within 1e-4 relative (Frobenius norm).
    let identity = LinearAdapter::identity(d);
    let analytic = gradient(&identity, &pairs).unwrap();
    let eps = 1e-6;
    let mut numeric = ndarray::Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let bump = |delta: f64| {
                let mut w = identity.weight().clone();
                w[[i, j]] += delta;
                LinearAdapter::from_weight(w, 0)
            };
            numeric[[i, j]] = (loss(&bump(eps), &pairs).unwrap()
                - loss(&bump(-eps), &pairs).unwrap())
                / (2.0 * eps);
        }
    }
    let diff = (&analytic - &numeric).mapv(|x| x * x).sum().sqrt();
    let denom = numeric.mapv(|x| x * x).sum().sqrt();
    assert!(diff <= 1e-4 * denom, "gradient mismatch {diff} vs {denom}");

    // Loss after 200 steps at learning rate 0.05 beats the initial loss.
    let config = TrainConfig {
        steps: 200,
        learning_rate: 0.05,
    };
    let (adapter, trace) = train_adapter(&pairs, &config).unwrap();
    assert_eq!(trace.len(), 201);
    assert!(
        trace[200] < trace[0],
        "loss must decrease: {} -> {}",
        trace[0],
        trace[200]
    );

    // The trained adapter strictly improves the separation ratio.
    let all_points: Vec<Vec<f64>> = cluster_a.iter().chain(&cluster_b).cloned().collect();
    let labels: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let base = separation_ratio(&all_points, &labels).unwrap();
    let adapted: Vec<Vec<f64>> = all_points.iter().map(|p| adapter.apply(p)).collect();
    let tuned = separation_ratio(&adapted, &labels).unwrap();
    assert!(
        tuned.ratio > base.ratio,
        "separation ratio must increase: {} -> {}",
        base.ratio,
        tuned.ratio
    );

    // Hand fixture: R = (20 + 2*sqrt(101))/4 = 10.0249...
    let fixture_points = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 0.0],
        vec![10.0, 1.0],
    ];
    let fixture_labels = vec![0usize, 0, 1, 1];
    let stats = separation_ratio(&fixture_points, &fixture_labels).unwrap();
    assert!((stats.ratio - 10.025).abs() <= 1e-3, "got {}", stats.ratio);

    finish("9 contrastive adapter", start, Duration::from_secs(30));
}

// ---------------------------------------------------------------------------
// 10. Schema strictness
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_schema_strictness() {
    let start = Instant::now();

    // The three documented failure modes.
    let free_form = parse_prediction("#disasterrelief stay safe everyone, praying for you all");
    assert!(matches!(
        free_form.unwrap_err(),
        ParseViolation::Format { .. }
    ));

    let vague = parse_prediction(
        "The tweet belongs to the category of condolences... Explanation: it expresses sympathy.",
    );
    assert!(matches!(vague.unwrap_err(), ParseViolation::Format { .. }));

    let non_standard = parse_prediction(
        "{\"humanitarian_label\": \"Support and Solidarity\", \"event_type\": \"flood\"}",
    );
    assert!(matches!(
        non_standard.unwrap_err(),
        ParseViolation::Label { .. }
    ));

    // All forty valid label pairs round-trip.
    let mut round_trips = 0;
    for h in H::ALL {
        for e in EventType::ALL {
            let parsed = parse_prediction(&format_prediction_json(h, e)).unwrap();
            assert_eq!((parsed.humanitarian, parsed.event), (h, e));
            round_trips += 1;
        }
    }
    assert_eq!(round_trips, 40);

    // Ten thousand random byte strings never crash the parser.
    let mut rng = SplitMix64::new(1_010);
    for _ in 0..10_000 {
        let len = rng.index(200);
        let bytes: Vec<u8> = (0..len).map(|_| (rng.next_u64() & 0xFF) as u8).collect();
        let text = String::from_utf8_lossy(&bytes);
        let _ = parse_prediction(&text);
    }

    finish("10 schema strictness", start, Duration::from_secs(30));
}

// ---------------------------------------------------------------------------
// 11. End-to-end mock run
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_end_to_end_mock_run() {
    let start = Instant::now();

    let records = fixture_corpus();
    assert_eq!(records.len(), 60);

    // Script: echo the gold labels except at six planned humanitarian errors
    // and two planned event errors, so accuracy_h = 54/60 and
    // accuracy_e = 58/60 by construction.
    let wrong_h: [usize; 6] = [3, 10, 17, 31, 44, 58];
    let wrong_e: [usize; 2] = [10, 25];
    let scripted_answer = |i: usize, r: &TweetRecord| -> String {
        let h = if wrong_h.contains(&i) {
            if r.label == H::NotHumanitarian {
                H::OtherRelevantInformation
            } else {
                H::NotHumanitarian
            }
        } else {
            r.label
        };
        let e = if wrong_e.contains(&i) {
            if r.event_type == EventType::Flood {
                EventType::Fire
            } else {
                EventType::Flood
            }
        } else {
            r.event_type
        };
        format_prediction_json(h, e)
    };

    // One scripted backend per sample keeps the run deterministic under
    // parallel in-flight processing.
    let backends: Vec<_> = records
        .iter()
        .enumerate()
        .map(|(i, r)| scripted_mock(vec![ScriptEntry::text_only(scripted_answer(i, r))]))
        .collect();

    let outcomes = run_batch(&records, 8, |i, record: &TweetRecord| {
        let outcome = classify_zero_shot(
            &record.tweet,
            &backends[i],
            &crisis_core::backend::DecodingConfig::default(),
        )
        .unwrap();
        (record.tweet_id.clone(), outcome)
    });

    // Output order equals input order.
    assert_eq!(
        outcomes
            .iter()
            .map(|(id, _)| id.clone())
            .collect::<Vec<_>>(),
        records
            .iter()
            .map(|r| r.tweet_id.clone())
            .collect::<Vec<_>>()
    );
    assert!(outcomes.iter().all(|(_, o)| !o.rag_triggered));

    let golds: Vec<(H, EventType)> = records.iter().map(|r| (r.label, r.event_type)).collect();
    let preds: Vec<PredOutcome> = outcomes
        .iter()
        .map(|(_, o)| o.prediction.clone().map(|p| (p.humanitarian, p.event)))
        .collect();
    let report = score(&golds, &preds).unwrap();

    assert!(
        (report.accuracy_h - 54.0 / 60.0).abs() < 1e-12,
        "got {}",
        report.accuracy_h
    );
    assert!(
        (report.accuracy_e - 58.0 / 60.0).abs() < 1e-12,
        "got {}",
        report.accuracy_e
    );
    assert_eq!(report.parse_failures, 0);

    finish("11 end-to-end mock run", start, Duration::from_secs(30));
}
