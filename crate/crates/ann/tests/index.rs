use std::collections::HashSet;

use mgdspr_ann::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit_vectors(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix::from_rows(
        d,
        (0..n).map(|_| {
            let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        }),
    )
    .unwrap()
}

fn cfg(n_columns: usize, branching: usize, depth: usize) -> IndexConfig {
    IndexConfig {
        n_columns,
        branching,
        depth,
        leaf_cap: 4,
        seed: 11,
        ..IndexConfig::default()
    }
}

#[test]
fn flat_single_column_is_exhaustive() {
    let m = unit_vectors(300, 8, 1);
    let idx = AnnIndex::build(&m, &cfg(1, 8, 0)).unwrap();
    let col = &idx.columns()[0];
    assert_eq!(col.nodes().len(), 1);
    assert_eq!(col.n_leaves(), 1);
    let q = m.row(17).to_vec();
    // even the smallest budget is the whole scan when there is one leaf and ratio 1
    let r = idx.search(&q, 10, 1.0).unwrap();
    assert_eq!(r.hits, idx.exact_top_k(&q, 10));
    assert_eq!(r.columns[0].scanned, 300);
}

#[test]
fn round_robin_sharding_and_leaf_partition() {
    let m = unit_vectors(1000, 8, 2);
    let idx = AnnIndex::build(&m, &cfg(6, 4, 3)).unwrap();
    assert_eq!(idx.len(), 1000);
    for col in idx.columns() {
        let c = col.column() as u32;
        let mut seen = HashSet::new();
        for l in 0..col.n_leaves() {
            for &id in col.leaf_items(l) {
                assert_eq!(id % 6, c);
                assert!(seen.insert(id), "item {id} in two leaves");
            }
        }
        let expected: HashSet<u32> = (0..1000u32).filter(|i| i % 6 == c).collect();
        assert_eq!(seen, expected);
        for n in col.nodes() {
            if let NodeKind::Internal { count, .. } = n.kind {
                assert!(count as usize <= 4 && count >= 2);
            }
        }
    }
}

#[test]
fn every_vector_reachable_by_nearest_centroid_descent() {
    let m = unit_vectors(1000, 16, 3);
    let idx = AnnIndex::build(&m, &cfg(1, 8, 2)).unwrap();
    let col = &idx.columns()[0];
    assert!(col.n_leaves() > 8);
    for i in 0..m.len() {
        let leaf = col.greedy_leaf(m.row(i));
        assert!(col.leaf_items(leaf).contains(&(i as u32)), "item {i} not under its greedy leaf");
    }
    let all = idx.search(m.row(0), 1000, 1.0).unwrap();
    assert_eq!(all.hits.len(), 1000);
}

#[test]
fn full_scan_equals_exact_over_dequantized() {
    let m = unit_vectors(2000, 16, 4);
    let idx = AnnIndex::build(&m, &cfg(6, 8, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let q = m.row(rng.random_range(0..2000)).to_vec();
        assert_eq!(idx.search(&q, 50, 1.0).unwrap().hits, idx.exact_top_k(&q, 50));
    }
}

#[test]
fn even_quota_splits_k_across_columns() {
    assert_eq!(ColumnQuota::Even.per_column(9600, 6), 1600);
    assert_eq!(ColumnQuota::Even.per_column(100, 6), 17);
    assert_eq!(ColumnQuota::Full.per_column(100, 6), 100);

    let m = unit_vectors(12_000, 4, 5);
    let config = IndexConfig {
        quota: ColumnQuota::Even,
        ..cfg(6, 8, 1)
    };
    let idx = AnnIndex::build(&m, &config).unwrap();
    let r = idx.search(m.row(0), 9600, 1.0).unwrap();
    assert!(r.columns.iter().all(|c| c.returned == 1600));
    assert_eq!(r.hits.len(), 9600);
}

#[test]
fn search_argument_errors() {
    let m = unit_vectors(100, 4, 6);
    let idx = AnnIndex::build(&m, &cfg(6, 4, 1)).unwrap();
    let q = m.row(0);
    assert!(matches!(idx.search(q, 5, 0.5), Err(AnnError::KTooSmall { k: 5, columns: 6 })));
    assert!(matches!(idx.search(&q[..3], 10, 0.5), Err(AnnError::Dim { .. })));
    assert!(idx.search(q, 10, 0.0).is_err());
    assert!(idx.search(q, 10, 1.5).is_err());
    assert!(idx.search(&[f32::NAN, 0.0, 0.0, 0.0], 10, 0.5).is_err());
    assert!(AnnIndex::build(&m, &IndexConfig { n_columns: 0, ..cfg(1, 4, 1) }).is_err());
    assert!(AnnIndex::build(&m, &IndexConfig { max_scan_ratio: 0.0, ..cfg(1, 4, 1) }).is_err());
}

#[test]
fn scan_budget_is_respected() {
    let m = unit_vectors(3000, 8, 7);
    let idx = AnnIndex::build(&m, &cfg(3, 8, 2)).unwrap();
    let r = idx.search(m.row(1), 30, 0.05).unwrap();
    for (c, s) in idx.columns().iter().zip(&r.columns) {
        assert_eq!(s.scanned, (0.05 * c.len() as f64).ceil() as usize);
    }
}

#[test]
fn builds_are_byte_identical_and_round_trip() {
    let m = unit_vectors(1500, 8, 8);
    let config = cfg(3, 8, 2);
    let a = AnnIndex::build(&m, &config).unwrap();
    let b = AnnIndex::build(&m, &config).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = a.save(da.path()).unwrap();
    let pb = b.save(db.path()).unwrap();
    assert_eq!(pa.len(), 3);
    for (x, y) in pa.iter().zip(&pb) {
        let bytes = std::fs::read(x).unwrap();
        assert_eq!(&bytes[..4], b"MGX1");
        assert_eq!(bytes, std::fs::read(y).unwrap());
    }
    let loaded = AnnIndex::load(da.path()).unwrap();
    assert_eq!(loaded, a);
    let q = m.row(3);
    assert_eq!(loaded.search(q, 20, 0.1).unwrap().hits, a.search(q, 20, 0.1).unwrap().hits);

    // a different seed gives a different tree
    let c = AnnIndex::build(&m, &IndexConfig { seed: 12, ..config }).unwrap();
    assert_ne!(c.columns()[0].nodes(), a.columns()[0].nodes());
}

#[test]
fn corrupt_column_files_are_rejected() {
    let m = unit_vectors(200, 4, 9);
    let idx = AnnIndex::build(&m, &cfg(1, 4, 2)).unwrap();
    let mut buf = Vec::new();
    idx.columns()[0].write_to(&mut buf).unwrap();
    assert!(Column::read_from(&buf[..]).is_ok());
    assert!(Column::read_from(&buf[..buf.len() - 1]).is_err());
    let mut extra = buf.clone();
    extra.push(0);
    assert!(Column::read_from(&extra[..]).is_err());
    let mut magic = buf.clone();
    magic[0] = b'X';
    assert!(Column::read_from(&magic[..]).is_err());
}

#[test]
fn embedding_file_feeds_the_index() {
    let m = unit_vectors(64, 4, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("items.mge");
    m.save(&path).unwrap();
    let back = EmbeddingMatrix::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(AnnIndex::build(&back, &cfg(2, 4, 1)).unwrap(), AnnIndex::build(&m, &cfg(2, 4, 1)).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_matches_direct_sort(
        lists in prop::collection::vec(prop::collection::vec((0u32..50, -3i32..3), 0..20), 1..6),
        k in 1usize..40,
    ) {
        // disjoint ids per list, as columns are disjoint shards
        let lists: Vec<Vec<Hit>> = lists
            .into_iter()
            .enumerate()
            .map(|(c, l)| {
                let mut ids = HashSet::new();
                l.into_iter()
                    .filter(|(id, _)| ids.insert(*id))
                    .map(|(id, s)| Hit { item_id: id * 8 + c as u32, score: s as f32 * 0.5 })
                    .collect()
            })
            .collect();
        let merged = merge_top_k(lists.clone(), k);
        let mut all: Vec<Hit> = lists.into_iter().flatten().collect();
        all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.item_id.cmp(&b.item_id)));
        all.truncate(k);
        prop_assert_eq!(merged, all);
    }

    #[test]
    fn recall_non_decreasing_in_scan_ratio(seed in 0u64..1000) {
        let m = unit_vectors(600, 8, seed);
        let idx = AnnIndex::build(&m, &IndexConfig { seed, ..cfg(3, 4, 2) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let queries: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random::<f32>() - 0.5).collect())
            .collect();
        let mut prev = 0.0;
        for sr in [0.01f32, 0.05, 0.2, 0.5, 1.0] {
            let recall: f64 = queries
                .iter()
                .map(|q| set_recall(&idx.search(q, 10, sr).unwrap().hits, &idx.exact_top_k(q, 10)))
                .sum();
            prop_assert!(recall >= prev, "scan {sr}: {recall} < {prev}");
            prev = recall;
        }
        prop_assert_eq!(prev, queries.len() as f64);
    }

    #[test]
    fn quantized_score_error_bound(
        v in prop::collection::vec(-5.0f32..5.0, 16),
        q in prop::collection::vec(-5.0f32..5.0, 16),
    ) {
        let (codes, scale) = quantize_int8(&v).unwrap();
        let exact: f64 = v.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum();
        let approx = dot_quantized(&q, &codes, scale) as f64;
        let l1: f64 = q.iter().map(|x| x.abs() as f64).sum();
        prop_assert!((approx - exact).abs() <= l1 * scale as f64 / 2.0 + 1e-4);
    }
}
