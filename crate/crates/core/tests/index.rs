use std::collections::HashSet;

use limo_core::index::*;
use limo_core::late_interaction::{interaction_matrix, maxsim_score};
use limo_core::encoders::{PatchEmbeddings, TokenEmbeddings};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn gallery(rng: &mut ChaCha8Rng, g: usize, rows: usize, dim: usize) -> Vec<(String, Array2<f64>)> {
    (0..g).map(|i| (format!("m{i:04}"), random(rng, rows, dim))).collect()
}

fn stored(index: &GalleryIndex, g: usize) -> Array2<f64> {
    let v = index.item_vectors(g).unwrap();
    Array2::from_shape_fn((index.item_rows(g), index.dim()), |(r, c)| v[r * index.dim() + c] as f64)
}

/// Exhaustive scan: every cosine, max per query row, mean, then sort.
fn brute_ranking(index: &GalleryIndex, query: ArrayView2<f64>) -> Vec<(String, f64)> {
    let norm = |r: ndarray::ArrayView1<f64>| {
        let mut s = 0.0;
        for &x in r {
            s += x * x;
        }
        s.sqrt()
    };
    let mut out = Vec::new();
    for g in 0..index.len() {
        let v = stored(index, g);
        let mut sum = 0.0;
        for q in query.rows() {
            let mut best = f64::NEG_INFINITY;
            for row in v.rows() {
                let mut dot = 0.0;
                for k in 0..q.len() {
                    dot += q[k] * row[k];
                }
                let c = dot / (norm(q) * norm(row));
                if c > best {
                    best = c;
                }
            }
            sum += best;
        }
        out.push((index.ids()[g].clone(), sum / query.nrows() as f64));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    out
}

#[test]
fn payload_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let one = build_index(vec![("a".into(), random(&mut rng, 196, 256))]).unwrap();
    assert_eq!(one.payload_bytes(), 200_704);
    assert_eq!(StorageMode::Float32.payload_size(196, 256, 64), 200_704);

    let mib = StorageMode::Float32.payload_size(4380 * 196, 256, 64) as f64 / (1024.0 * 1024.0);
    assert!((837.0..839.0).contains(&mib), "{mib}");
    assert!((mib - 837.21).abs() / 837.21 < 0.005);
    assert_eq!(StorageMode::Pq.payload_size(1, 256, 64), 64);
    assert_eq!(StorageMode::Binary.payload_size(1, 256, 64), 32);
}

#[test]
fn build_rejects_bad_galleries() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random(&mut rng, 3, 8);
    assert!(matches!(
        build_index(vec![("x".into(), m.clone()), ("x".into(), m.clone())]),
        Err(limo_core::Error::DuplicateId(id)) if id == "x"
    ));
    assert!(matches!(build_index(vec![]), Err(limo_core::Error::EmptyGallery)));
    assert!(build_index(vec![("x".into(), m.clone()), ("y".into(), random(&mut rng, 3, 9))]).is_err());
    let mut zero = m.clone();
    zero.row_mut(1).fill(0.0);
    assert!(build_index(vec![("x".into(), zero)]).is_err());
}

#[test]
fn stored_rows_are_unit_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let index = build_index(gallery(&mut rng, 5, 7, 32)).unwrap();
    for g in 0..5 {
        for r in stored(&index, g).rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn exact_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let index = build_index(gallery(&mut rng, 50, 20, 24)).unwrap();
    for _ in 0..5 {
        let q = random(&mut rng, 6, 24);
        let hits = index.search(q.view(), 50, Direction::T2M).unwrap();
        let want = brute_ranking(&index, q.view());
        assert_eq!(hits.len(), 50);
        for (h, (id, s)) in hits.iter().zip(&want) {
            assert_eq!(&h.id, id);
            assert_eq!(h.score.to_bits(), s.to_bits());
        }
    }
}

#[test]
fn exact_scores_equal_maxsim_of_interaction_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let index = build_index(gallery(&mut rng, 8, 30, 16)).unwrap();
    let q = random(&mut rng, 5, 16);
    let scores = index.score_all(q.view(), Direction::T2M).unwrap();
    let l = TokenEmbeddings {
        ids: vec![0; 5],
        matrix: q.clone(),
    };
    for (g, &s) in scores.iter().enumerate() {
        let v = PatchEmbeddings { matrix: stored(&index, g) };
        let want = maxsim_score(interaction_matrix(&l, &v).unwrap().scores.view());
        assert_eq!(s.to_bits(), want.to_bits());
    }
}

#[test]
fn reverse_direction_averages_over_gallery_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let texts = build_index(gallery(&mut rng, 6, 4, 16)).unwrap();
    let patches = random(&mut rng, 30, 16);
    let scores = texts.score_all(patches.view(), Direction::M2T).unwrap();
    for (g, &s) in scores.iter().enumerate() {
        let l = TokenEmbeddings {
            ids: vec![0; texts.item_rows(g)],
            matrix: stored(&texts, g),
        };
        let v = PatchEmbeddings { matrix: patches.clone() };
        let want = interaction_matrix(&l, &v).unwrap().maxsim();
        assert_eq!(s.to_bits(), want.to_bits());
    }
}

#[test]
fn exact_copy_ranks_first_and_ties_break_by_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut items = gallery(&mut rng, 30, 12, 16);
    let target = items[17].1.clone();
    let hits = build_index(items.clone())
        .unwrap()
        .search(target.slice(ndarray::s![2..6, ..]).view(), 3, Direction::T2M)
        .unwrap();
    assert_eq!(hits[0].id, "m0017");
    assert!((hits[0].score - 1.0).abs() < 1e-6);
    assert!(hits[0].score > hits[1].score);

    items.push(("a-copy".into(), target.clone()));
    let index = build_index(items).unwrap();
    let hits = index.search(target.view(), 2, Direction::T2M).unwrap();
    assert_eq!(hits[0].id, "a-copy");
    assert_eq!(hits[1].id, "m0017");
    assert_eq!(hits[0].score, hits[1].score);
}

#[test]
fn k_larger_than_gallery_returns_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let index = build_index(gallery(&mut rng, 1, 5, 8)).unwrap();
    let hits = index.search(random(&mut rng, 2, 8).view(), 10, Direction::T2M).unwrap();
    assert_eq!(hits.len(), 1);
    assert!(index.search(random(&mut rng, 2, 9).view(), 1, Direction::T2M).is_err());
}

#[test]
fn kmeans_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f32> = (0..600 * 4).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let km = kmeans(&data, 4, 32, 25, &mut rng).unwrap();
    assert_eq!(km.sse.len(), 26);
    for w in km.sse.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
    }
    assert!(kmeans(&data, 4, 601, 5, &mut rng).is_err());
}

#[test]
fn kmeans_repairs_empty_clusters() {
    // 40 copies of two points; more clusters than distinct points
    let mut data = Vec::new();
    for i in 0..40 {
        data.extend_from_slice(if i % 2 == 0 { &[0.0f32, 0.0] } else { &[1.0, 1.0] });
    }
    let km = kmeans(&data, 2, 4, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(km.centroids.iter().all(|v| v.is_finite()));
    assert_eq!(*km.sse.last().unwrap(), 0.0);
}

#[test]
fn pq_recovers_small_point_sets_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<f32> = (0..256 * 16).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let cb = train_pq(&data, 16, 4, 8, 25, 0).unwrap();
    assert_eq!(cb.ksub, 256);
    let mut codes = [0u8; 4];
    for v in data.chunks_exact(16) {
        cb.encode(v, &mut codes);
        assert_eq!(cb.decode(&codes), v);
    }
}

#[test]
fn single_centroid_is_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<f32> = (0..50 * 8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let cb = train_pq(&data, 8, 2, 0, 5, 0).unwrap();
    assert_eq!(cb.ksub, 1);
    for t in 0..8 {
        let mean: f64 = data.chunks_exact(8).map(|r| r[t] as f64).sum::<f64>() / 50.0;
        assert!((cb.centroids[t] as f64 - mean).abs() < 1e-6);
    }
    assert!(train_pq(&data, 8, 3, 8, 5, 0).is_err());
}

#[test]
fn small_training_sets_lower_the_centroid_count() {
    let data = vec![0.5f32; 10 * 8];
    let cb = train_pq(&data, 8, 4, 8, 3, 0).unwrap();
    assert_eq!(cb.ksub, 10);
}

#[test]
fn compression_ratios_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let index = build_index(gallery(&mut rng, 12, 20, 256)).unwrap();
    let cb = train_pq(&index.sample_rows(DEFAULT_TRAIN_ROWS, 0).unwrap(), 256, DEFAULT_SUBSPACES, 8, 5, 0).unwrap();
    let pq = index.encode_pq(&cb).unwrap();
    let bin = index.encode_binary().unwrap();
    assert_eq!(index.payload_bytes(), 240 * 1024);
    assert_eq!(pq.payload_bytes() * 16, index.payload_bytes());
    assert_eq!(bin.payload_bytes() * 32, index.payload_bytes());
    assert_eq!(pq.aux_bytes(), 64 * 240 * 4 * 4);
    assert!(pq.aux_bytes() <= 256 * 256 * 4);
    assert_eq!(bin.aux_bytes(), 256 * 4);
    assert_eq!(pq.mode(), StorageMode::Pq);
    // the source keeps its floats
    assert_eq!(index.mode(), StorageMode::Float32);
    assert!(pq.encode_binary().is_err());
}

#[test]
fn reconstruction_error_is_below_vector_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let index = build_index(gallery(&mut rng, 40, 25, 64)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 64, 16, 8, 10, 1).unwrap();
    let pq = index.encode_pq(&cb).unwrap();
    let mut total = 0.0;
    for g in 0..index.len() {
        let codes = pq.item_codes(g).unwrap();
        let orig = index.item_vectors(g).unwrap();
        for (c, x) in codes.chunks_exact(16).zip(orig.chunks_exact(64)) {
            let xh = cb.decode(c);
            total += x.iter().zip(&xh).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
        }
    }
    let mean = total / index.total_rows() as f64;
    assert!(mean < 1.0, "{mean}");
}

#[test]
fn centroid_concatenation_reconstructs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let index = build_index(gallery(&mut rng, 20, 20, 32)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 32, 8, 4, 10, 2).unwrap();
    let codes = [3u8, 0, 7, 15, 1, 2, 9, 4];
    let v = cb.decode(&codes);
    let mut again = [0u8; 8];
    cb.encode(&v, &mut again);
    assert_eq!(cb.decode(&again), v);
}

#[test]
fn adc_matches_reconstruct_then_dot() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let index = build_index(gallery(&mut rng, 50, 16, 64)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 64, 16, 8, 10, 3).unwrap();
    let pq = index.encode_pq(&cb).unwrap();
    for _ in 0..3 {
        let q = random(&mut rng, 5, 64);
        let qn = unit_rows(&q);
        let got = pq.score_all(q.view(), Direction::T2M).unwrap();
        for g in 0..pq.len() {
            let codes = pq.item_codes(g).unwrap();
            let recon: Vec<Vec<f32>> = codes.chunks_exact(16).map(|c| cb.decode(c)).collect();
            let mut sum = 0.0;
            for qi in qn.rows() {
                let best = recon
                    .iter()
                    .map(|x| qi.iter().zip(x).map(|(a, &b)| a * b as f64).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                sum += best;
            }
            assert!((got[g] - sum / 5.0).abs() < 1e-5);
        }
    }
}

#[test]
fn lossless_codebook_keeps_exact_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let index = build_index(gallery(&mut rng, 10, 20, 32)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 32, 8, 8, 25, 0).unwrap();
    let pq = index.encode_pq(&cb).unwrap();
    for _ in 0..5 {
        let q = random(&mut rng, 4, 32);
        let a: Vec<String> = index.search(q.view(), 10, Direction::T2M).unwrap().into_iter().map(|h| h.id).collect();
        let b: Vec<String> = pq.search(q.view(), 10, Direction::T2M).unwrap().into_iter().map(|h| h.id).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn codebook_width_must_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let index = build_index(gallery(&mut rng, 4, 10, 32)).unwrap();
    let cb = train_pq(&vec![0.1f32; 64 * 16], 16, 4, 2, 2, 0).unwrap();
    assert!(matches!(index.encode_pq(&cb), Err(limo_core::Error::CodebookMismatch(_))));
}

#[test]
fn negated_vector_flips_every_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&mut rng, 1, 64);
    let index = build_index(vec![("pos".into(), x.clone()), ("neg".into(), -x)]).unwrap();
    let bin = index.encode_binary().unwrap();
    assert!(bin.binary_codes().unwrap().means.iter().all(|&m| m == 0.0));
    let a = bin.item_codes(0).unwrap();
    let b = bin.item_codes(1).unwrap();
    assert_eq!(a.len(), 8);
    for (x, y) in a.iter().zip(b) {
        assert_eq!(*x, !*y);
    }
}

#[test]
fn binary_score_is_signed_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let index = build_index(gallery(&mut rng, 20, 10, 32)).unwrap();
    let bin = index.encode_binary().unwrap();
    let codes = bin.binary_codes().unwrap();
    let q = random(&mut rng, 3, 32);
    let qn = unit_rows(&q);
    let got = bin.score_all(q.view(), Direction::T2M).unwrap();
    for g in 0..20 {
        let mut sum = 0.0;
        for qi in qn.rows() {
            let mut best = f64::NEG_INFINITY;
            for r in 0..10 {
                let s = codes.signs(g * 10 + r);
                best = best.max(qi.iter().zip(&s).map(|(a, b)| a * b).sum());
            }
            sum += best;
        }
        assert!((got[g] - sum / 3.0).abs() < 1e-12);
    }
}

#[test]
fn query_aligned_with_a_code_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let index = build_index(gallery(&mut rng, 40, 8, 64)).unwrap();
    let bin = index.encode_binary().unwrap();
    let signs = bin.binary_codes().unwrap().signs(23 * 8 + 5);
    let q = Array2::from_shape_vec((1, 64), signs).unwrap();
    let hits = bin.search(q.view(), 1, Direction::T2M).unwrap();
    assert_eq!(hits[0].id, "m0023");
    assert!((hits[0].score - 8.0).abs() < 1e-12);
}

#[test]
fn index_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let index = build_index(gallery(&mut rng, 6, 9, 32)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 32, 8, 4, 5, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for ix in [index.clone(), index.encode_pq(&cb).unwrap(), index.encode_binary().unwrap()] {
        let path = dir.path().join(format!("{}.liix", ix.mode()));
        ix.save(&path).unwrap();
        let back = GalleryIndex::load(&path).unwrap();
        assert_eq!(back, ix);
        let bytes = ix.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LIIX");
        assert!(GalleryIndex::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(1);
        assert!(GalleryIndex::from_bytes(&extra).is_err());
    }
    assert!(GalleryIndex::load(&dir.path().join("missing.liix")).is_err());
}

#[test]
fn oracle_and_reversed_rankings() {
    let ids: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
    let relevant: Vec<HashSet<String>> = ids.iter().map(|id| HashSet::from([id.clone()])).collect();
    let oracle: Vec<Vec<String>> = ids
        .iter()
        .map(|id| {
            let mut r = vec![id.clone()];
            r.extend(ids.iter().filter(|x| *x != id).cloned());
            r
        })
        .collect();
    let rep = evaluate(&oracle, &relevant, &DEFAULT_KS, Direction::T2M).unwrap();
    assert_eq!(rep.recall_at(1), Some(100.0));
    assert_eq!(rep.median_rank, 1.0);
    let reversed: Vec<Vec<String>> = oracle
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.reverse();
            r
        })
        .collect();
    let rep = evaluate(&reversed, &relevant, &DEFAULT_KS, Direction::M2T).unwrap();
    assert_eq!(rep.recall_at(1), Some(0.0));
    assert_eq!(rep.recall_at(10), Some(100.0));
    assert_eq!(rep.median_rank, 10.0);
    assert_eq!(rep.csv_header(), "direction,R@1,R@2,R@3,R@5,R@10,MedR");
    assert_eq!(rep.csv_row(), "M2T,0.00,0.00,0.00,0.00,100.00,10");
}

#[test]
fn first_relevant_rank_counts() {
    let rankings = vec![vec!["a".to_string(), "b".into(), "c".into()]];
    let relevant = vec![HashSet::from(["c".to_string(), "b".to_string()])];
    let rep = evaluate(&rankings, &relevant, &[1, 2], Direction::T2M).unwrap();
    assert_eq!(rep.ranks, vec![2]);
    assert!(matches!(
        evaluate(&rankings, &[HashSet::new()], &[1], Direction::T2M),
        Err(limo_core::Error::NoRelevantItem(_))
    ));
}

#[test]
fn random_rankings_give_chance_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ids: Vec<String> = (0..100).map(|i| format!("g{i}")).collect();
    let mut rankings = Vec::new();
    let mut relevant = Vec::new();
    for q in 0..1000 {
        let mut r = ids.clone();
        r.shuffle(&mut rng);
        rankings.push(r);
        relevant.push(HashSet::from([ids[q % 100].clone()]));
    }
    let rep = evaluate(&rankings, &relevant, &DEFAULT_KS, Direction::T2M).unwrap();
    let r10 = rep.recall_at(10).unwrap();
    assert!((r10 - 10.0).abs() <= 3.0, "{r10}");
}

#[test]
fn evaluate_index_uses_full_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let items = gallery(&mut rng, 15, 6, 16);
    let queries: Vec<Array2<f64>> = items.iter().map(|(_, m)| m.slice(ndarray::s![..3, ..]).to_owned()).collect();
    let relevant: Vec<HashSet<String>> = items.iter().map(|(id, _)| HashSet::from([id.clone()])).collect();
    let index = build_index(items).unwrap();
    let rep = evaluate_index(&index, &queries, &relevant, Direction::T2M, &DEFAULT_KS).unwrap();
    assert_eq!(rep.recall_at(1), Some(100.0));
    assert_eq!(rep.queries, 15);
}

#[test]
fn latency_report_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let index = build_index(gallery(&mut rng, 20, 10, 64)).unwrap();
    let cb = train_pq(index.vectors().unwrap(), 64, 16, 8, 5, 0).unwrap();
    let pq = index.encode_pq(&cb).unwrap();
    let queries: Vec<Array2<f64>> = (0..7).map(|_| random(&mut rng, 4, 64)).collect();
    let rep = bench_latency(&index, &queries, Direction::T2M, 5, 0, 0).unwrap();
    assert_eq!(rep.multi_vector.measured, 100);
    assert!(rep.multi_vector.p50_ms <= rep.multi_vector.p95_ms);
    assert!(rep.multi_vector.mean_ms > 0.0);
    let prep = bench_latency(&pq, &queries, Direction::T2M, 5, 10, 100).unwrap();
    assert!(prep.bytes < rep.bytes);
    assert_eq!(rep.csv_row().split(',').count(), LatencyReport::CSV_HEADER.split(',').count());
    let single = SingleVectorIndex::from_index(&index).unwrap();
    let base = bench_single_vector(&single, &queries, 5, 10, 100).unwrap();
    assert_eq!(base.measured, 100);
    assert!(SingleVectorIndex::from_index(&pq).is_err());
}

#[test]
fn latency_grows_with_gallery_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let queries: Vec<Array2<f64>> = (0..5).map(|_| random(&mut rng, 4, 32)).collect();
    let mut means = Vec::new();
    for g in [100, 1000, 10000] {
        let index = build_index(gallery(&mut rng, g, 4, 32)).unwrap();
        means.push(bench_latency(&index, &queries, Direction::T2M, 10, 10, 100).unwrap().multi_vector.mean_ms);
    }
    // a 10× gallery should never look faster; allow timer noise between neighbours
    assert!(means[1] > means[0] * 0.8, "{means:?}");
    assert!(means[2] > means[1] * 0.8, "{means:?}");
    assert!(means[2] > means[0], "{means:?}");
}

#[test]
fn pooled_baseline_ranks_copies_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let items = gallery(&mut rng, 30, 6, 32);
    let q = items[4].1.clone();
    let single = SingleVectorIndex::from_index(&build_index(items).unwrap()).unwrap();
    assert_eq!(single.search(q.view(), 1).unwrap()[0].id, "m0004");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recall_is_monotone_and_medr_consistent(seed in any::<u64>(), g in 2usize..30, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..g).map(|i| format!("g{i}")).collect();
        let mut rankings = Vec::new();
        let mut relevant = Vec::new();
        for _ in 0..n {
            let mut r = ids.clone();
            r.shuffle(&mut rng);
            rankings.push(r);
            let k = rng.random_range(1..=g.min(3));
            relevant.push(ids.choose_multiple(&mut rng, k).cloned().collect::<HashSet<_>>());
        }
        let rep = evaluate(&rankings, &relevant, &DEFAULT_KS, Direction::T2M).unwrap();
        for w in rep.recall.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        prop_assert!(rep.median_rank >= 1.0);
        let recomputed: Vec<usize> = rankings
            .iter()
            .zip(&relevant)
            .map(|(r, rel)| r.iter().position(|id| rel.contains(id)).unwrap() + 1)
            .collect();
        prop_assert_eq!(&rep.ranks, &recomputed);
        prop_assert_eq!(rep.median_rank, median(&recomputed));
    }

    #[test]
    fn exact_search_is_brute_force_on_small_galleries(seed in any::<u64>(), g in 1usize..40, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..12);
        let index = build_index(gallery(&mut rng, g, rows, 8)).unwrap();
        let q = random(&mut rng, m, 8);
        let hits = index.search(q.view(), g, Direction::T2M).unwrap();
        let want = brute_ranking(&index, q.view());
        for (h, (id, s)) in hits.iter().zip(&want) {
            prop_assert_eq!(&h.id, id);
            prop_assert_eq!(h.score.to_bits(), s.to_bits());
        }
    }
}
