use proptest::prelude::*;

use super::*;

fn pattern_images() -> (Vec<f32>, Vec<f32>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in 0..28 {
        for c in 0..28 {
            a.push((0.5 + 0.5 * (r as f64 * 0.37).sin() * (c as f64 * 0.21).cos()) as f32);
            b.push(((r * 7 + c * 3) % 11) as f32 / 10.0);
        }
    }
    (a, b)
}

#[test]
fn perfect_predictions_score_one() {
    let l: Vec<usize> = (0..30).map(|i| i % 10).collect();
    assert_eq!(micro_f1(&l, &l).unwrap(), 1.0);
    assert_eq!(weighted_f1(&l, &l).unwrap(), 1.0);
}

#[test]
fn f1_hand_example() {
    let (labels, preds) = ([0, 0, 1, 1], [0, 1, 1, 1]);
    assert!((micro_f1(&preds, &labels).unwrap() - 0.75).abs() < 1e-12);
    assert!((weighted_f1(&preds, &labels).unwrap() - (0.5 * 2.0 / 3.0 + 0.5 * 0.8)).abs() < 1e-12);
}

#[test]
fn f1_matches_library_reference() {
    let labels: Vec<usize> = (0..50).map(|i| (i * 7) % 10).collect();
    let preds: Vec<usize> = (0..50).map(|i| if i % 4 != 0 { (i * 3) % 10 } else { (i * 7) % 10 }).collect();
    assert!((micro_f1(&preds, &labels).unwrap() - 0.4).abs() < 1e-12);
    assert!((weighted_f1(&preds, &labels).unwrap() - 0.397979797979798).abs() < 1e-12);
}

#[test]
fn f1_rejects_empty_and_ragged() {
    assert!(matches!(micro_f1(&[], &[]), Err(crate::Error::Input(_))));
    assert!(weighted_f1(&[1], &[1, 2]).is_err());
    assert!(micro_f1(&[10], &[1]).is_err());
}

#[test]
fn random_predictions_score_near_chance() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<usize> = (0..10_000).map(|i| i % 10).collect();
    let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..10)).collect();
    let (mi, w) = (micro_f1(&preds, &labels).unwrap(), weighted_f1(&preds, &labels).unwrap());
    assert!((mi - 0.1).abs() <= 0.02 && (w - 0.1).abs() <= 0.02, "{mi} {w}");
}

proptest! {
    #[test]
    fn micro_f1_is_accuracy_and_close_to_weighted_when_balanced(
        preds in prop::collection::vec(0usize..10, 200),
    ) {
        let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
        let m = micro_f1(&preds, &labels).unwrap();
        prop_assert!((m - accuracy(&preds, &labels).unwrap()).abs() < 1e-12);
        let w = weighted_f1(&preds, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn psnr_falls_as_error_grows(e1 in 0.001f32..0.2, extra in 0.001f32..0.2) {
        let a = vec![0.5f32; 64];
        let b: Vec<f32> = a.iter().map(|v| v + e1).collect();
        let c: Vec<f32> = a.iter().map(|v| v + e1 + extra).collect();
        prop_assert!(psnr(&a, &b).unwrap() > psnr(&a, &c).unwrap());
    }

    #[test]
    fn ssim_of_an_image_with_itself_is_one(img in prop::collection::vec(0.0f32..=1.0, 784)) {
        prop_assert!((ssim(&img, &img, 28, 28).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_matrix_is_symmetric_bounded_and_scale_invariant(
        raw in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 6), 40),
        scales in prop::collection::vec(0.1f32..10.0, 40),
    ) {
        let labels: Vec<usize> = (0..40).map(|i| i % 10).collect();
        let m = class_cosine_matrix(&raw, &labels, 100, 1).unwrap();
        let scaled: Vec<Vec<f32>> = raw.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        let ms = class_cosine_matrix(&scaled, &labels, 100, 1).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                prop_assert!((m[i][j] - m[j][i]).abs() <= 1e-6);
                prop_assert!((-1.0..=1.0).contains(&m[i][j]));
                prop_assert!((m[i][j] - ms[i][j]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn psnr_examples() {
    let a = vec![0.2f32; 100];
    let b = vec![0.3f32; 100];
    // MSE 0.01 up to f32 rounding of the inputs.
    assert!((psnr(&a, &b).unwrap() - 68.1308).abs() < 1e-3);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!(matches!(psnr(&a, &b[..99]), Err(crate::Error::Shape(_))));
    let (x, y) = pattern_images();
    assert!((psnr(&x, &y).unwrap() - 56.232737723536076).abs() < 1e-6);
}

#[test]
fn ssim_examples() {
    let (c1, c2) = (vec![0.2f32; 784], vec![0.8f32; 784]);
    let expected = (2.0 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4);
    assert!((ssim(&c1, &c2, 28, 28).unwrap() - expected).abs() < 1e-6);
    assert!((ssim(&c1, &c2, 28, 28).unwrap() - 0.4707).abs() < 1e-4);
    assert!(ssim(&c1, &c2[..700], 28, 28).is_err());
}

#[test]
fn ssim_matches_library_reference() {
    let (a, b) = pattern_images();
    assert!((ssim(&a, &b, 28, 28).unwrap() - 0.005370996428271224).abs() < 1e-6);
    let shifted: Vec<f32> = a.iter().map(|v| (v * 0.8 + 0.1).clamp(0.0, 1.0)).collect();
    assert!((ssim(&a, &shifted, 28, 28).unwrap() - 0.9663792020816598).abs() < 1e-6);
}

#[test]
fn laplacian_examples() {
    assert!(laplacian_filter(&[0.0; 784], 28, 28).iter().all(|&v| v == 0.0));
    // Zero padding: a nonzero constant image responds only along its border.
    let r = laplacian_response(&[0.6; 784], 28, 28);
    assert!(r[29..55].iter().all(|&v| v == 0.0));
    assert!((r[0] + 1.2).abs() < 1e-6 && (r[1] + 0.6).abs() < 1e-6);
    let mut img = vec![0.0f32; 25];
    img[12] = 0.7;
    let r = laplacian_response(&img, 5, 5);
    assert!((r[12] + 2.8).abs() < 1e-6);
    for k in [7, 11, 13, 17] {
        assert!((r[k] - 0.7).abs() < 1e-6);
    }
    let f = laplacian_filter(&img, 5, 5);
    assert_eq!(f[12], 0.0);
    assert_eq!(f[7], 1.0);
}

#[test]
fn cosine_examples() {
    let s = [0.3f32, -1.0, 2.0];
    let neg: Vec<f32> = s.iter().map(|v| -v).collect();
    assert!((cosine_similarity(&s, &s) - 1.0).abs() < 1e-12);
    assert!((cosine_similarity(&s, &neg) + 1.0).abs() < 1e-12);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
}

#[test]
fn identical_stimuli_give_all_ones() {
    let stim = vec![vec![0.1f32, 0.5, 0.2]; 30];
    let labels: Vec<usize> = (0..30).map(|i| i % 10).collect();
    let m = class_cosine_matrix(&stim, &labels, 100, 0).unwrap();
    assert!(m.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-9));
    assert!(class_cosine_matrix(&stim[..15], &labels[..15], 100, 0).is_err());
}

fn sample_report() -> MetricsReport {
    use crate::config::LossKind;
    use crate::data::Resolution;
    let mut m = [[0.25; CLASSES]; CLASSES];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 0.5 + i as f64 / 100.0;
    }
    let row = |label: usize| GalleryRow {
        label,
        original: vec![0.5; 784],
        stimulus_28: vec![1.0; 784],
        percept_28: vec![0.1; 784],
        stimulus_6x10: (0..60).map(|i| i as f32 / 60.0).collect(),
        percept_6x10: vec![0.0; 784],
    };
    MetricsReport {
        config_hash: "abc".into(),
        seed: 7,
        created: 1,
        f1: vec![
            F1Row {
                resolution: Resolution::Full28,
                method: "none".into(),
                micro_f1: 0.7728,
                weighted_f1: 0.77,
                surrogate: None,
            },
            F1Row {
                resolution: Resolution::Argus6x10,
                method: "unet-ce".into(),
                micro_f1: 0.9684,
                weighted_f1: 0.968,
                surrogate: Some((0.97, 1.0 / 3.0)),
            },
        ],
        quality: vec![QualityRow {
            comparison: "mse-stimulus-vs-laplacian".into(),
            psnr_db: 62.822,
            ssim: 0.179,
        }],
        cosine: vec![(LossKind::Mse, m), (LossKind::Ce, m)],
        gallery: vec![(LossKind::Mse, vec![row(0), row(1)]), (LossKind::Ce, vec![row(2)])],
    }
}

#[test]
fn report_text_round_trips() {
    let r = sample_report();
    assert_eq!(MetricsReport::from_text(&r.to_text()).unwrap(), r);
    assert!(MetricsReport::from_text("f1 28x28 none x").is_err());
}

#[test]
fn emitted_report_is_deterministic_and_well_formed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r = sample_report();
    let files = emit_report(&r, a.path()).unwrap();
    emit_report(&MetricsReport::from_text(&r.to_text()).unwrap(), b.path()).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
    let csv = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + r.f1.len());
    assert!(csv.contains("6x10,unet-ce,0.968400,0.968000,0.970000,0.333333"));
    assert_eq!(std::fs::read_to_string(a.path().join("cosine_ce.csv")).unwrap().lines().count(), 11);
    let (w, h, px) = read_pgm(&std::fs::read(a.path().join("gallery_mse.pgm")).unwrap()).unwrap();
    assert_eq!((w, h), (5 * 30 + 6 * 2, 2 * 30 + 3 * 2));
    assert_eq!(px.len(), w * h);
}

#[test]
fn pgm_round_trip_and_rejects_other_formats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.pgm");
    write_pgm(&p, 3, 2, &[0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap();
    let (w, h, px) = read_pgm(&std::fs::read(&p).unwrap()).unwrap();
    assert_eq!((w, h, px), (3, 2, vec![0, 128, 255, 255, 0, 64]));
    assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(read_pgm(b"P5\n2 2\n255\n\x00").is_err());
}
