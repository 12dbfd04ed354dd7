mod common;

use std::collections::BTreeSet;

use mgdspr_ann::Hit;
use mgdspr_core::relevance::*;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hits(ids: &[u32]) -> Vec<Hit> {
    ids.iter().enumerate().map(|(i, &item_id)| Hit { item_id, score: -(i as f32) }).collect()
}

fn ids(h: &[Hit]) -> Vec<u32> {
    h.iter().map(|h| h.item_id).collect()
}

/// Document terms for `item`: title tokens plus attribute terms.
fn contains(doc: &[String], term: &KeyTerm) -> bool {
    doc.iter().any(|t| *t == term.token || *t == term.attribute())
}

#[test]
fn adidas_query_drops_the_nike_shoe() {
    let lex = Lexicons::new().with(TermClass::Brand, &["adidas", "nike"]).with(TermClass::Category, &["shoes"]);
    let index = InvertedIndex::build([
        (0u32, vec!["nike", "sports", "shoes", "brand:nike", "category:shoes"]),
        (1u32, vec!["adidas", "running", "shoes", "brand:adidas", "category:shoes"]),
    ]);
    let required = extract_key_terms(&["adidas", "shoes"], &KeyTermRule::default(), &lex);
    let want: BTreeSet<KeyTerm> = [KeyTerm::new(TermClass::Brand, "adidas"), KeyTerm::new(TermClass::Category, "shoes")].into();
    assert_eq!(required, want);
    let out = filter(&hits(&[0, 1]), &required, &index);
    assert_eq!(ids(&out.kept), vec![1]);
    assert_eq!(out.dropped, 1);
}

#[test]
fn no_lexicon_hits_means_passthrough() {
    let lex = Lexicons::new().with(TermClass::Brand, &["adidas"]);
    let required = extract_key_terms(&["red", "dress"], &KeyTermRule::default(), &lex);
    assert!(required.is_empty());
    let index = InvertedIndex::build([(0u32, vec!["red"])]);
    let input = hits(&[5, 0, 9]);
    let out = filter(&input, &required, &index);
    assert_eq!(out.kept, input);
    assert_eq!(out.dropped, 0);
    // an empty mandatory rule turns the filter off too
    let lex = Lexicons::new().with(TermClass::Brand, &["red"]);
    assert!(extract_key_terms(&["red"], &KeyTermRule::none(), &lex).is_empty());
}

#[test]
fn single_item_postings_and_sorted_lists() {
    let one = InvertedIndex::build([(42u32, vec!["a", "b", "a"])]);
    assert_eq!(one.postings("a"), &[42]);
    assert_eq!(one.postings("b"), &[42]);
    assert!(one.postings("c").is_empty());
    assert_eq!(one.len(), 2);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
    let docs: Vec<(u32, Vec<String>)> = (0..1000u32)
        .rev()
        .map(|id| (id, (0..rng.random_range(1..6)).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect()))
        .collect();
    let index = InvertedIndex::build(docs.clone());
    for (_, list) in index.terms() {
        assert!(list.windows(2).all(|w| w[0] < w[1]));
    }
    for _ in 0..1000 {
        let term = vocab.choose(&mut rng).unwrap();
        let id = rng.random_range(0..1000u32);
        let scan = docs.iter().any(|(d, terms)| *d == id && terms.contains(term));
        assert_eq!(index.postings(term).binary_search(&id).is_ok(), scan);
    }
}

struct Instance {
    docs: Vec<(u32, Vec<String>)>,
    lex: Lexicons,
    query: Vec<String>,
    results: Vec<u32>,
}

fn instance(rng: &mut ChaCha8Rng, n_items: u32) -> Instance {
    let brands = ["adidas", "nike", "puma"];
    let cats = ["shoes", "bags", "hats"];
    let words = ["red", "light", "run", "tote", "x"];
    let lex = Lexicons::new().with(TermClass::Brand, &brands).with(TermClass::Category, &cats).with(TermClass::Color, &["red"]);
    let docs: Vec<(u32, Vec<String>)> = (0..n_items)
        .map(|id| {
            let mut t: Vec<String> = (0..rng.random_range(1..4)).map(|_| words.choose(rng).unwrap().to_string()).collect();
            if rng.random_bool(0.5) {
                t.push(format!("brand:{}", brands.choose(rng).unwrap()));
            }
            if rng.random_bool(0.7) {
                t.push(format!("category:{}", cats.choose(rng).unwrap()));
            }
            if rng.random_bool(0.2) {
                t.push(brands.choose(rng).unwrap().to_string());
            }
            (id, t)
        })
        .collect();
    let pool: Vec<&str> = brands.iter().chain(&cats).chain(&words).copied().collect();
    let query = (0..rng.random_range(0..4)).map(|_| pool.choose(rng).unwrap().to_string()).collect();
    let mut results: Vec<u32> = (0..n_items).filter(|_| rng.random_bool(0.3)).collect();
    results.reverse();
    Instance { docs, lex, query, results }
}

fn oracle(inst: &Instance, required: &BTreeSet<KeyTerm>) -> Vec<u32> {
    inst.results
        .iter()
        .copied()
        .filter(|&id| {
            let doc = &inst.docs[id as usize].1;
            required.iter().all(|t| contains(doc, t))
        })
        .collect()
}

#[test]
fn filter_matches_linear_scan_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let inst = instance(&mut rng, 60);
        let index = InvertedIndex::build(inst.docs.clone());
        let required = extract_key_terms(&inst.query, &KeyTermRule::default(), &inst.lex);
        let out = filter(&hits(&inst.results), &required, &index);
        assert_eq!(ids(&out.kept), oracle(&inst, &required));
        assert_eq!(out.kept.len() + out.dropped, inst.results.len());
    }
}

#[test]
fn filter_matches_linear_scan_on_500_items() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut inst = instance(&mut rng, 500);
    inst.query = vec!["nike".into(), "shoes".into(), "red".into()];
    inst.results = (0..500).rev().collect();
    let index = InvertedIndex::build(inst.docs.clone());
    let rule = KeyTermRule { mandatory: [TermClass::Brand, TermClass::Category, TermClass::Color].into() };
    let required = extract_key_terms(&inst.query, &rule, &inst.lex);
    assert_eq!(required.len(), 3);
    let out = filter(&hits(&inst.results), &required, &index);
    let want = oracle(&inst, &required);
    assert!(!want.is_empty());
    assert_eq!(ids(&out.kept), want);
}

#[test]
fn corpus_filter_keeps_items_naming_the_brand() {
    let corpus = common::tiny_corpus();
    let f = RelevanceFilter::from_corpus(&corpus, KeyTermRule::default());
    // adidas is brand 0, shoes is category 0
    let out = f.apply(&["adidas", "shoes"], &hits(&[3, 2, 1, 0]));
    assert_eq!(ids(&out.kept), vec![0]);
    let out = f.apply(&["bags"], &hits(&[3, 2, 1, 0]));
    assert_eq!(ids(&out.kept), vec![3, 2]);
}

fn sorted_set() -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::btree_set(0u32..200, 0..60).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn intersection_equals_set_arithmetic(lists in proptest::collection::vec(sorted_set(), 1..5)) {
        let refs: Vec<&[u32]> = lists.iter().map(Vec::as_slice).collect();
        let got = intersect_sorted(&refs);
        let want: Vec<u32> = lists[0].iter().copied().filter(|x| lists.iter().all(|l| l.contains(x))).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn filter_is_sound_complete_and_monotone(seed in 0u64..10_000, extra in 0usize..11) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng, 40);
        let index = InvertedIndex::build(inst.docs.clone());
        let required = extract_key_terms(&inst.query, &KeyTermRule::default(), &inst.lex);
        let out = filter(&hits(&inst.results), &required, &index);
        let kept = ids(&out.kept);
        for &id in &inst.results {
            let all = required.iter().all(|t| contains(&inst.docs[id as usize].1, t));
            prop_assert_eq!(kept.contains(&id), all);
        }
        // order preserved: kept is a subsequence of the input
        let mut it = inst.results.iter();
        prop_assert!(kept.iter().all(|k| it.any(|r| r == k)));

        let pool = ["adidas", "nike", "puma", "shoes", "bags", "hats"];
        let mut more = required.clone();
        let tok = pool[extra % pool.len()];
        more.insert(KeyTerm::new(inst.lex.tag(tok).unwrap(), tok));
        let narrower = ids(&filter(&hits(&inst.results), &more, &index).kept);
        prop_assert!(narrower.iter().all(|id| kept.contains(id)));
    }
}
