use limo_core::encoders::*;
use limo_core::kinematics::Skeleton;
use limo_core::motion_image::{ChannelStats, FeatureLayout, MotionImage, IMAGE_SIZE, NUM_PATCHES};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(vocab: usize, seed: u64) -> EncoderParams {
    EncoderParams::init(vocab, &FeatureLayout::from_skeleton(&Skeleton::smpl22()), seed)
}

fn random_image(rng: &mut ChaCha8Rng) -> MotionImage {
    MotionImage {
        pixels: Array2::from_shape_fn((IMAGE_SIZE, IMAGE_SIZE), |_| rng.random_range(-1.0..1.0)),
        valid_frames: IMAGE_SIZE,
    }
}

fn vocab() -> Vocabulary {
    Vocabulary::build(["a person walks", "a person runs forward"], 64).unwrap()
}

#[test]
fn tokenize_folds_case_and_punctuation() {
    let v = vocab();
    let ids = tokenize("A person walks.", &v).unwrap();
    assert_eq!(ids, vec![v.id("a"), v.id("person"), v.id("walks")]);
    assert!(ids.iter().all(|&i| i > UNK));
    let twice = tokenize("Walks, walks", &v).unwrap();
    assert_eq!(twice.len(), 2);
    assert_eq!(twice[0], twice[1]);
    assert_eq!(tokenize("jumps!", &v).unwrap(), vec![UNK]);
    assert!(matches!(tokenize("", &v), Err(limo_core::Error::EmptyQuery)));
    assert!(matches!(tokenize(" ,.! ", &v), Err(limo_core::Error::EmptyQuery)));
}

#[test]
fn vocabulary_specials_and_json() {
    let v = vocab();
    assert_eq!(v.token(PAD), Some("[PAD]"));
    assert_eq!(v.token(MASK), Some("[MASK]"));
    assert_eq!(v.token(UNK), Some("[UNK]"));
    // "a" and "person" appear twice, then alphabetical
    assert_eq!(&v.tokens()[3..], &["a", "person", "forward", "runs", "walks"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.json");
    v.save(&path).unwrap();
    assert_eq!(Vocabulary::load(&path).unwrap(), v);
    assert!(Vocabulary::from_json(r#"{"tokens": ["a", "b", "c"]}"#).is_err());
}

#[test]
fn encode_text_without_mixing_is_a_lookup() {
    let mut p = params(10, 1);
    p.alpha = 0.0;
    let ids = [3, 7, 3, 9];
    let l = encode_text(&ids, &p).unwrap();
    for (i, &id) in ids.iter().enumerate() {
        assert_eq!(l.matrix.row(i), p.token_table.row(id as usize));
    }
}

#[test]
fn single_token_ignores_alpha() {
    let mut p = params(10, 2);
    for alpha in [0.0, 0.3, 1.0] {
        p.alpha = alpha;
        let l = encode_text(&[5], &p).unwrap();
        for (a, b) in l.matrix.row(0).iter().zip(p.token_table.row(5)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn mixing_matches_direct_arithmetic() {
    let mut p = params(10, 3);
    p.alpha = 0.5;
    let ids = [4, 6, 8];
    let l = encode_text(&ids, &p).unwrap();
    let t = |i: u32| p.token_table.row(i as usize).to_owned();
    let middle = &t(6) * 0.5 + &((&t(4) + &t(6) + &t(8)) * (0.5 / 3.0));
    let first = &t(4) * 0.5 + &((&t(4) + &t(6)) * 0.25);
    for k in 0..EMBED_DIM {
        assert!((l.matrix[[1, k]] - middle[k]).abs() < 1e-15);
        assert!((l.matrix[[0, k]] - first[k]).abs() < 1e-15);
    }
}

#[test]
fn encode_text_rejects_bad_ids() {
    let p = params(10, 1);
    assert!(matches!(
        encode_text(&[3, 10], &p),
        Err(limo_core::Error::UnknownToken { id: 10, vocab_size: 10 })
    ));
    assert!(encode_text(&[], &p).is_err());
}

#[test]
fn zero_image_and_offsets_give_zero_patches() {
    let mut p = params(10, 1);
    p.positions.fill(0.0);
    let v = encode_motion(&MotionImage::zeros(), &p).unwrap();
    assert_eq!(v.matrix.dim(), (NUM_PATCHES, EMBED_DIM));
    assert!(v.matrix.iter().all(|&x| x == 0.0));
}

#[test]
fn patch_change_is_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = params(10, 4);
    let a = random_image(&mut rng);
    let mut b = a.clone();
    // patch 7 is band 0, window 7: rows 0..16, columns 112..128
    b.pixels[[3, 115]] += 1.0;
    let va = encode_motion(&a, &p).unwrap().matrix;
    let vb = encode_motion(&b, &p).unwrap().matrix;
    for j in 0..NUM_PATCHES {
        let same = va.row(j) == vb.row(j);
        assert_eq!(same, j != 7, "row {j}");
    }
}

#[test]
fn patch_embedding_matches_dot_product_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = params(10, 5);
    p.patch_bias = Array1::from_shape_fn(EMBED_DIM, |_| rng.random_range(-1.0..1.0));
    p.pixel_stats = ChannelStats { mean: 0.1, std: 0.8 };
    let img = random_image(&mut rng);
    let v = encode_motion(&img, &p).unwrap().matrix;
    for j in [0, 15, 100, 195] {
        let (k, w) = (j / 14, j % 14);
        for o in [0, 17, 255] {
            let mut acc = 0.0;
            for r in 0..16 {
                for c in 0..16 {
                    let x = (img.pixels[[16 * k + r, 16 * w + c]] - 0.1) / 0.8;
                    acc += p.patch_weight[[o, r * 16 + c]] * x;
                }
            }
            acc += p.patch_bias[o] + p.positions[[j, o]];
            assert!((v[[j, o]] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn patch_embedding_is_linear_without_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = params(10, 6);
    let (i1, i2) = (random_image(&mut rng), random_image(&mut rng));
    let (a, b) = (0.7, -1.3);
    let mix = MotionImage {
        pixels: &i1.pixels * a + &i2.pixels * b,
        valid_frames: IMAGE_SIZE,
    };
    let off = |img: &MotionImage| encode_motion(img, &p).unwrap().matrix - &p.positions - &p.patch_bias;
    let lhs = off(&mix);
    let rhs = off(&i1) * a + off(&i2) * b;
    assert!((lhs - rhs).iter().all(|d| d.abs() < 1e-9));
}

#[test]
fn encoding_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = random_image(&mut rng);
    let (p, q) = (params(12, 9), params(12, 9));
    assert_eq!(p, q);
    assert_eq!(encode_motion(&img, &p).unwrap(), encode_motion(&img, &q).unwrap());
    assert_eq!(encode_text(&[3, 4, 5], &p).unwrap(), encode_text(&[3, 4, 5], &q).unwrap());
}

#[test]
fn masking_counts_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = mask_tokens(&[7], 0.15, &mut rng).unwrap();
    assert_eq!(one.positions, vec![0]);
    assert_eq!(one.masked, vec![MASK]);

    let ids: Vec<u32> = (3..23).collect();
    let a = mask_tokens(&ids, 0.15, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let b = mask_tokens(&ids, 0.15, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.positions.len(), 3);
    assert!(a.positions.windows(2).all(|w| w[0] < w[1]));
    for (i, (&o, &m)) in a.original.iter().zip(&a.masked).enumerate() {
        assert_eq!(m == MASK, a.positions.contains(&i));
        if m != MASK {
            assert_eq!(o, m);
        }
    }
    assert!(mask_tokens(&ids, 0.0, &mut rng).is_err());
    assert!(mask_tokens(&ids, 1.0, &mut rng).is_err());
}

#[test]
fn zero_output_matrix_gives_uniform_predictions() {
    let mut p = params(37, 1);
    p.mlm_weight.fill(0.0);
    let l = encode_text(&[3, 4, 5], &p).unwrap();
    let logits = mlm_logits(l.matrix.view(), &p).unwrap();
    for row in logits.rows() {
        let lp = log_softmax(row.as_slice().unwrap());
        for v in lp {
            assert!((v + (37f64).ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn aligned_output_matrix_recovers_token() {
    let mut p = params(8, 1);
    p.alpha = 0.0;
    p.token_table.fill(0.0);
    p.mlm_weight.fill(0.0);
    for v in 0..8 {
        p.token_table[[v, v]] = 1.0;
        p.mlm_weight[[v, v]] = 5.0;
    }
    let l = encode_text(&[6], &p).unwrap();
    let logits = mlm_logits(l.matrix.view(), &p).unwrap();
    let row = logits.row(0);
    let best = (0..8).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
    assert_eq!(best, 6);
}

#[test]
fn softmax_matches_high_precision_oracle() {
    // mpmath, 40 digits
    let p = softmax(&[1.5, -0.3, 2.2, 0.0]);
    let want = [
        0.293_929_034_885_719_894_9,
        0.048_586_142_682_653_423_05,
        0.591_900_389_805_302_583_9,
        0.065_584_432_626_324_098_22,
    ];
    for (a, b) in p.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let lp = log_softmax(&[1.5, -0.3, 2.2, 0.0]);
    assert!((lp[0] + 1.224_416_918_719_527_258).abs() < 1e-14);
    // stable for large logits
    let big = softmax(&[1000.0, 1000.0, -1000.0]);
    assert!((big[0] - 0.5).abs() < 1e-12 && (big[1] - 0.5).abs() < 1e-12);
    assert_eq!(big[2], 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let mut p = params(20, 3);
    p.alpha = 0.25;
    p.pixel_stats = ChannelStats { mean: 0.5, std: 2.0 };
    let bytes = checkpoint_to_bytes(&p);
    assert_eq!(&bytes[..4], b"LIEP");
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(checkpoint_to_bytes(&back), bytes);
    assert_eq!(back.vocab_size(), 20);
    assert_eq!(back.alpha, 0.25);
    assert_eq!(back.parts.seed, p.parts.seed);
    assert_eq!(back.patch_weight[[3, 4]], p.patch_weight[[3, 4]] as f32 as f64);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.liep");
    save_checkpoint(&path, &p).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), back);

    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(checkpoint_from_bytes(&extra).is_err());
}

#[test]
fn positional_table_is_sinusoidal_over_band_and_window() {
    let p = params(8, 0);
    assert_eq!(p.positions, sinusoidal_positions(EMBED_DIM, POSITION_SCALE));
    let t = sinusoidal_positions(8, 2.0);
    // patch (band 3, window 5); column frequencies 1 and 1/100
    let j = 3 * 14 + 5;
    let want = [
        2.0 * 5f64.sin(),
        2.0 * 5f64.cos(),
        2.0 * 0.05f64.sin(),
        2.0 * 0.05f64.cos(),
        2.0 * 3f64.sin(),
        2.0 * 3f64.cos(),
        2.0 * 0.03f64.sin(),
        2.0 * 0.03f64.cos(),
    ];
    for (o, w) in want.iter().enumerate() {
        assert!((t[[j, o]] - w).abs() < 1e-12, "column {o}");
    }
    // every patch gets its own code
    for a in 0..NUM_PATCHES {
        for b in a + 1..NUM_PATCHES {
            let d: f64 = (0..EMBED_DIM).map(|o| (p.positions[[a, o]] - p.positions[[b, o]]).powi(2)).sum();
            assert!(d > 1e-3, "patches {a} and {b} share a position");
        }
    }
}
