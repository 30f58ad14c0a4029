use limo_core::encoders::Vocabulary;
use limo_core::interaction_map::*;
use limo_core::late_interaction::InteractionMatrix;
use limo_core::motion_image::{patch_index, NUM_PATCHES};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(scores: Array2<f64>) -> InteractionMatrix {
    let ids = (3..3 + scores.nrows() as u32).collect();
    InteractionMatrix { scores, token_ids: ids }
}

fn names() -> Vec<String> {
    (0..14).map(|k| format!("joint {k}")).collect()
}

#[test]
fn single_winner_lights_one_cell() {
    let mut s = Array2::from_elem((1, NUM_PATCHES), 0.1);
    s[[0, patch_index(3, 5).unwrap()]] = 0.9;
    let map = compute_map(&matrix(s), None).unwrap();
    assert_eq!(map.grid[[3, 5]], 0.9);
    assert_eq!(map.grid.iter().filter(|&&v| v != 0.0).count(), 1);
    assert_eq!(map.argmax_cell(), (3, 5));
    let a = &map.attributions[0];
    assert_eq!((a.joint, a.window, a.token.as_str()), (3, 5, "3"));
}

#[test]
fn negative_similarities_clip_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = Array2::from_shape_fn((4, NUM_PATCHES), |_| rng.random_range(-1.0..-0.01));
    let map = compute_map(&matrix(s), None).unwrap();
    assert!(map.grid.iter().all(|&v| v == 0.0));
    assert_eq!(map.attributions.len(), 4);
    assert!(map.attributions.iter().all(|a| a.similarity < 0.0));
}

#[test]
fn random_matrix_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let s = Array2::from_shape_fn((6, NUM_PATCHES), |_| rng.random_range(-1.0..1.0));
        let map = compute_map(&matrix(s.clone()), None).unwrap();
        let mut want = Array2::<f64>::zeros((14, 14));
        let mut conserved = 0.0;
        for i in 0..6 {
            let mut best = 0;
            for j in 0..NUM_PATCHES {
                if s[[i, j]] > s[[i, best]] {
                    best = j;
                }
            }
            want[[best / 14, best % 14]] += s[[i, best]].max(0.0);
            conserved += s[[i, best]].max(0.0);
        }
        assert_eq!(map.grid, want);
        assert!((map.total() - conserved).abs() < 1e-9);
        assert!(map.grid.iter().all(|&v| v >= 0.0));
        assert!(map.attributions.iter().all(|a| a.patch < NUM_PATCHES));
    }
}

#[test]
fn tokens_are_named_from_the_vocabulary() {
    let vocab = Vocabulary::build(["bends knee"], 16).unwrap();
    let mut s = Array2::zeros((2, NUM_PATCHES));
    s[[0, 0]] = 0.5;
    s[[1, 1]] = 0.5;
    let m = InteractionMatrix {
        scores: s,
        token_ids: vec![vocab.id("knee"), vocab.id("bends")],
    };
    let map = compute_map(&m, Some(&vocab)).unwrap();
    assert_eq!(map.attributions[0].token, "knee");
    assert_eq!(map.attributions[1].token, "bends");
}

#[test]
fn geometry_is_checked() {
    let s = Array2::zeros((2, 100));
    assert!(compute_map(&matrix(s.clone()), None).is_err());
    assert!(token_heatmap(&matrix(s), 0).is_err());
}

#[test]
fn token_heatmap_reshapes_a_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Array2::from_shape_fn((3, NUM_PATCHES), |_| rng.random_range(-1.0..1.0));
    let h = token_heatmap(&matrix(s.clone()), 2).unwrap();
    for k in 0..14 {
        for w in 0..14 {
            assert_eq!(h[[k, w]], s[[2, k * 14 + w]]);
        }
    }
    assert!(token_heatmap(&matrix(s), 3).is_err());
}

#[test]
fn csv_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = Array2::from_shape_fn((9, NUM_PATCHES), |_| rng.random_range(-1.0..1.0));
    let map = compute_map(&matrix(s), None).unwrap();
    assert_eq!(grid_from_csv(&map.to_csv()).unwrap(), map.grid);
    let zero = Array2::<f64>::zeros((14, 14));
    let csv = limo_core::late_interaction::matrix_csv(zero.view());
    assert!(csv.lines().all(|l| l.split(',').all(|c| c == "0.0")));
    assert!(grid_from_csv("1,2\n3").is_err());
}

#[test]
fn images_scale_to_eight_bits() {
    let zero = Array2::<f64>::zeros((14, 14));
    let pgm = encode_pgm(&zero);
    let header = b"P5\n14 14\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert!(pgm[header.len()..].iter().all(|&b| b == 0));

    let mut hot = zero.clone();
    hot[[2, 9]] = 0.4;
    let pgm = encode_pgm(&hot);
    let px = &pgm[header.len()..];
    assert_eq!(px.iter().filter(|&&b| b == 255).count(), 1);
    assert_eq!(px[2 * 14 + 9], 255);
    assert_eq!(px.iter().filter(|&&b| b != 0).count(), 1);
}

#[test]
fn export_writes_sidecar_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Array2::zeros((1, NUM_PATCHES));
    s[[0, patch_index(6, 1).unwrap()]] = 0.7;
    let map = compute_map(&matrix(s), None).unwrap();

    let csv = dir.path().join("map.csv");
    map.export(&csv, MapFormat::Csv, &names(), 200).unwrap();
    assert_eq!(grid_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap(), map.grid);

    for (fmt, name) in [(MapFormat::Png, "map.png"), (MapFormat::Pgm, "map.pgm")] {
        let path = dir.path().join(name);
        map.export(&path, fmt, &names(), 200).unwrap();
        assert!(path.exists());
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side["rows"][6], "joint 6");
        assert_eq!(side["windows"][1]["columns"], serde_json::json!([16, 31]));
        assert_eq!(side["windows"][1]["frames"], serde_json::json!([16, 31]));
        // 200 frames fill twelve and a half windows
        assert_eq!(side["windows"][12]["frames"], serde_json::json!([192, 199]));
        assert!(side["windows"][13]["frames"].is_null());
    }
    let png = std::fs::read(dir.path().join("map.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    assert!(map
        .export(&dir.path().join("no/such/dir/map.png"), MapFormat::Png, &names(), 200)
        .is_err());
}

#[test]
fn long_sequences_label_subsampled_frames() {
    let grid = Array2::<f64>::zeros((14, 14));
    let side: serde_json::Value = serde_json::from_str(&sidecar_json(&grid, &names(), 448).unwrap()).unwrap();
    assert_eq!(side["windows"][0]["frames"], serde_json::json!([0, 30]));
    assert_eq!(side["windows"][13]["frames"], serde_json::json!([416, 446]));
    assert!(sidecar_json(&grid, &names()[..3], 448).is_err());
}
