use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::bench::{self, Dataset, RunSpec};
use crate::fixture;
use crate::gateway::{Gateway, RateLimiter};
use crate::index::MockEmbedder;
use crate::kb::Document;
use crate::rag::{KnowledgeBase, RagEngine, RagTrace, RetrievalHit, StrategyConfig};

fn doc(id: usize, source: Source) -> Document {
    Document {
        id: format!("d{id}"),
        text: format!("text {id}"),
        source,
        meta: json!({}),
    }
}

fn record(item: &str, strategy: StrategyConfig, hits: Vec<Document>, kept: usize) -> EvaluationRecord {
    let kept_docs = hits.iter().take(kept).cloned().collect();
    EvaluationRecord {
        run_id: "r".into(),
        dataset: "d".into(),
        item_id: item.into(),
        task: TaskKind::BlendMc,
        country: "UK".into(),
        strategy,
        sample: 0,
        trace: RagTrace {
            hits: hits
                .into_iter()
                .enumerate()
                .map(|(rank, doc)| RetrievalHit { doc, score: 0.5, rank })
                .collect(),
            kept: kept_docs,
            ..RagTrace::default()
        },
        answer: None,
        correct: Some(false),
    }
}

fn five(source: Source) -> Vec<Document> {
    (0..5).map(|i| doc(i, source)).collect()
}

#[test]
fn counting_examples() {
    let sel = StrategyConfig::kb(true, false);
    let records = vec![
        record("q1", sel.clone(), five(Source::Cube), 1),
        record("q2", sel.clone(), five(Source::Cube), 0),
    ];
    let before = source_distribution(&records, Stage::BeforeCheck);
    assert_eq!(before.counts[&Source::Cube], 10);
    assert_eq!(before.total(), 10);
    let after = source_distribution(&records, Stage::AfterCheck);
    assert_eq!(after.total(), 1);
    assert_eq!(after.non_selective, 0);

    let none_kept = vec![
        record("q1", sel.clone(), five(Source::Cube), 0),
        record("q2", sel, five(Source::SeeGull), 0),
    ];
    let hist = kept_histogram(&none_kept);
    assert_eq!(hist.bins[&0], 2);
    assert_eq!(hist.bins.len(), 6);
    assert_eq!(hist.bins.values().sum::<usize>(), hist.questions);

    let nonsel = StrategyConfig::kb(false, false);
    let all_kept = vec![
        record("q1", nonsel.clone(), five(Source::CultureAtlas), 5),
        record("q2", nonsel, five(Source::Cube), 5),
    ];
    let hist = kept_histogram(&all_kept);
    assert_eq!(hist.bins[&5], 2);
    let after = source_distribution(&all_kept, Stage::AfterCheck);
    assert_eq!(after.non_selective, 2);
    assert_eq!(after.counts, source_distribution(&all_kept, Stage::BeforeCheck).counts);
}

#[test]
fn other_strategies_are_ignored() {
    let records = vec![record("q1", StrategyConfig::vanilla(), vec![], 0)];
    assert_eq!(source_distribution(&records, Stage::BeforeCheck).traces, 0);
    assert_eq!(kept_histogram(&records).questions, 0);
}

#[test]
fn tables_cover_every_source_and_k() {
    let records = vec![
        record("q1", StrategyConfig::kb(true, false), five(Source::Cube), 2),
        record("q1", StrategyConfig::kb(false, false), five(Source::Cube), 5),
    ];
    let sources = source_table(&records);
    // selective: two stages, non-selective: one; four sources each
    assert_eq!(sources.len(), 3 * 4);
    let kept = kept_table(&records);
    assert_eq!(kept.len(), 2 * 6);
    let pct: f64 = kept
        .iter()
        .filter(|r| r.strategy == "kb_selective")
        .map(|r| r.percent)
        .sum();
    assert!((pct - 100.0).abs() < 1e-9);

    let mut out = Vec::new();
    write_source_csv(&mut out, &sources).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("dataset,task,strategy,stage,source,count,share\n"));
    assert!(text.contains("d,blend_mc,kb_selective,after_check,Cube,2,1\n"));
    let mut out = Vec::new();
    write_kept_csv(&mut out, &kept).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 13);
}

#[test]
fn quoted_attributes() {
    assert_eq!(
        quoted_attribute("I know a person who is \"a fighter.\"  The person is:"),
        Some("a fighter")
    );
    assert_eq!(
        quoted_attribute("I know a person who is \"Exciting.\""),
        Some("Exciting")
    );
    assert_eq!(quoted_attribute("no quotes"), None);
}

fn stereotype_run(strategies: Vec<StrategyConfig>) -> (Dataset, Vec<EvaluationRecord>) {
    let ds = fixture::datasets()
        .into_iter()
        .find(|d| d.task == TaskKind::StereotypeAvoidance)
        .unwrap();
    let mut gw = Gateway::new().with_sleeper(|_| {});
    gw.register(fixture::backend_arc(), RateLimiter::unlimited());
    let kb = KnowledgeBase::build(Arc::new(MockEmbedder::default()), fixture::documents()).unwrap();
    let engine = RagEngine::new(&gw, fixture::BACKEND).with_kb(&kb);
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("log.jsonl");
    bench::run(&ds, &RunSpec::new("s", strategies), &engine, &path).unwrap();
    (ds, bench::read_records(&path).unwrap())
}

#[test]
fn stereotype_fixture_matches_and_flips() {
    let (ds, records) = stereotype_run(vec![StrategyConfig::vanilla(), StrategyConfig::kb(true, false)]);
    let reports = stereotype_match_report(&records, &ds.items);
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.questions, 5);
    assert!(r.exact_match >= 1, "{r:?}");
    assert!(r.exact_match <= r.retrieved_any && r.retrieved_any <= r.questions);
    assert_eq!(r.flips, Some(1), "{r:?}");
    let fighter = records
        .iter()
        .find(|x| x.item_id == "stereo-fighter" && x.strategy.selective)
        .unwrap();
    assert!(fighter
        .trace
        .hits
        .iter()
        .any(|h| h.doc.text == "One stereotype of Albanian is a fighter."));
}

#[test]
fn missing_vanilla_skips_flips() {
    let (ds, records) = stereotype_run(vec![StrategyConfig::kb(true, false)]);
    let r = &stereotype_match_report(&records, &ds.items)[0];
    assert!(r.exact_match >= 1);
    assert_eq!(r.flips, None);
    assert!(r.warnings.iter().any(|w| w.contains("flip analysis skipped")));
}

#[test]
fn no_stereotypes_in_kb() {
    let (ds, mut records) = stereotype_run(vec![StrategyConfig::vanilla(), StrategyConfig::kb(false, false)]);
    for r in &mut records {
        r.trace.hits.retain(|h| h.doc.source != Source::SeeGull);
    }
    let r = &stereotype_match_report(&records, &ds.items)[0];
    assert_eq!((r.retrieved_any, r.exact_match, r.flips), (0, 0, Some(0)));
}

proptest! {
    #[test]
    fn aggregations_ignore_order(spec in proptest::collection::vec((0usize..4, 0usize..=5, any::<bool>()), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let records: Vec<_> = spec
            .iter()
            .enumerate()
            .map(|(i, &(s, k, sel))| record(&format!("q{i}"), StrategyConfig::kb(sel, false), five(Source::ALL[s]), k))
            .collect();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        for stage in [Stage::BeforeCheck, Stage::AfterCheck] {
            prop_assert_eq!(source_distribution(&records, stage), source_distribution(&shuffled, stage));
        }
        prop_assert_eq!(kept_histogram(&records), kept_histogram(&shuffled));

        let after = source_distribution(&records, Stage::AfterCheck);
        let before = source_distribution(&records, Stage::BeforeCheck);
        prop_assert_eq!(after.total(), records.iter().map(|r| r.trace.k()).sum::<usize>());
        for s in Source::ALL {
            prop_assert!(after.counts[&s] <= before.counts[&s]);
        }
        let hist = kept_histogram(&records);
        prop_assert_eq!(hist.bins.values().sum::<usize>(), hist.questions);
    }
}
