mod common;

use std::collections::BTreeSet;

use mgdspr_core::corpus::*;
use mgdspr_core::error::CoreError;
use mgdspr_core::eval::{recall_at_k, test_queries};

fn small(noise: f64, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_items: 2000,
        n_users: 300,
        n_queries: 4000,
        noise_rate: noise,
        seed,
        caps: SeqCaps { realtime: 10, short: 20, long: 20, history: 4 },
        ..GeneratorConfig::default()
    }
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    generate(&small(0.1, 4)).unwrap().write(&a).unwrap();
    generate(&small(0.1, 4)).unwrap().write(&b).unwrap();
    generate(&small(0.1, 5)).unwrap().write(&c).unwrap();
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&c));
    let names: Vec<String> = files(&a).into_iter().map(|f| f.0).collect();
    for want in ["items.jsonl", "users.jsonl", "clicks_train.jsonl", "clicks_test.jsonl", "purchases_aux.jsonl", "vocab.txt"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
}

#[test]
fn noise_rate_controls_bad_clicks() {
    let cfg = GeneratorConfig { n_queries: 10_000, ..small(0.3, 8) };
    let c = generate(&cfg).unwrap();
    let all: Vec<&ClickRecord> = c.clicks_train.iter().chain(&c.clicks_test).collect();
    assert_eq!(all.len(), 10_000);
    let bad = all.iter().filter(|r| r.relevance_label == Relevance::Bad).count() as f64 / all.len() as f64;
    assert!((bad - 0.3).abs() <= 0.02, "{bad}");
    for r in &all {
        let good = c.is_good(&r.query_tokens, r.clicked_item_id).unwrap();
        assert_eq!(good, r.relevance_label == Relevance::Good);
    }

    let clean = generate(&small(0.0, 8)).unwrap();
    assert!(clean.clicks_train.iter().chain(&clean.clicks_test).all(|r| r.relevance_label == Relevance::Good));
}

#[test]
fn every_query_has_a_relevant_item_and_queries_are_short() {
    let c = generate(&small(0.2, 2)).unwrap();
    let clicks: Vec<&ClickRecord> = c.clicks_train.iter().chain(&c.clicks_test).collect();
    for r in &clicks {
        assert!(c.items.iter().any(|it| is_good(&r.query_tokens, it, &c.category_tokens)));
    }
    let mean = clicks.iter().map(|r| r.query_tokens.len()).sum::<usize>() as f64 / clicks.len() as f64;
    assert!(mean < 3.0, "{mean}");
}

#[test]
fn round_trip_preserves_counts_and_caps() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate(&small(0.1, 3)).unwrap();
    c.write(dir.path()).unwrap();
    let back = Corpus::load(dir.path(), SeqCaps { realtime: 3, short: 5, long: 4, history: 2 }).unwrap();
    assert_eq!(back.items, c.items);
    assert_eq!(back.clicks_train.len(), c.clicks_train.len());
    assert_eq!(back.clicks_test.len(), c.clicks_test.len());
    assert_eq!(back.purchases_aux.len(), c.purchases_aux.len());
    assert_eq!(back.users.len(), c.users.len());
    for (u, orig) in back.users.iter().zip(&c.users) {
        assert!(u.realtime_seq.len() <= 3 && u.short_seq.len() <= 5 && u.historical_queries.len() <= 2);
        // truncation keeps the newest entries
        assert!(orig.short_seq.ends_with(&u.short_seq));
        for (a, b) in u.long_attr_seqs.item.lists().iter().zip(orig.long_attr_seqs.item.lists()) {
            assert!(a.len() <= 4 && b.ends_with(a));
        }
    }
}

#[test]
fn loader_reports_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small(0.1, 3)).unwrap().write(dir.path()).unwrap();
    let caps = SeqCaps::default();

    let empty = tempfile::tempdir().unwrap();
    generate(&small(0.1, 3)).unwrap().write(empty.path()).unwrap();
    std::fs::write(empty.path().join("clicks_train.jsonl"), "").unwrap();
    assert!(Corpus::load(empty.path(), caps).unwrap().clicks_train.is_empty());

    let path = dir.path().join("clicks_test.jsonl");
    let good = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = good.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(good.lines().nth(1).unwrap()).unwrap();
    rec["clicked_item_id"] = 987654.into();
    lines[1] = rec.to_string();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = Corpus::load(dir.path(), caps).unwrap_err();
    assert!(err.to_string().contains("987654"), "{err}");

    lines[1] = "{\"user_id\": 1,".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    match Corpus::load(dir.path(), caps).unwrap_err() {
        CoreError::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn tiny_vocab_is_rejected() {
    let cfg = GeneratorConfig { vocab_size: 10, ..small(0.1, 1) };
    assert!(generate(&cfg).is_err());
}

#[test]
fn lexical_matcher_recovers_planted_relevance() {
    let c = generate(&GeneratorConfig { n_items: 10_000, n_queries: 20_000, ..small(0.0, 6) }).unwrap();
    let queries = test_queries(&c, Some(500));
    let mut total = 0.0;
    let mut n = 0;
    for q in &queries {
        let mut scored: Vec<(usize, u32)> = c
            .items
            .iter()
            .filter(|it| q.query_tokens.contains(&c.category_tokens[it.category as usize]))
            .map(|it| {
                let shared: BTreeSet<&u32> = it.title_tokens.iter().filter(|t| q.query_tokens.contains(t)).collect();
                (shared.len(), it.item_id)
            })
            .filter(|&(s, _)| s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let top: Vec<u32> = scored.iter().take(100).map(|s| s.1).collect();
        if let Some(r) = recall_at_k(&top, &q.targets) {
            total += r;
            n += 1;
        }
    }
    let recall = total / n as f64;
    assert!(recall >= 0.9, "{recall}");
}
