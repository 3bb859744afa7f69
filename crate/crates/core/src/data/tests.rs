use std::io::Write;
use std::path::Path;
use std::time::Duration;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

use super::*;
use crate::phosphene::{AxonMapParams, Trajectory};

fn idx_images(count: u32, rows: u32, cols: u32, data: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0803, count, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(data);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0801, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

/// Four tiny IDX files in `dir`, returned with their digests.
fn tiny_mirror(dir: &Path) -> Vec<MnistFile> {
    let n = 3u32;
    let img: Vec<u8> = (0..n as usize * 784).map(|i| (i % 251) as u8).collect();
    let payloads = [
        ("a-images.gz", idx_images(n, 28, 28, &img)),
        ("a-labels.gz", idx_labels(&[5, 0, 4])),
        ("b-images.gz", idx_images(1, 28, 28, &img[..784])),
        ("b-labels.gz", idx_labels(&[7])),
    ];
    payloads
        .iter()
        .map(|(name, raw)| {
            std::fs::write(dir.join(name), gz(raw)).unwrap();
            MnistFile::new(name, &hex::encode(Sha256::digest(raw)))
        })
        .collect()
}

fn quick() -> FetchPolicy {
    FetchPolicy {
        attempts: 3,
        backoff: Duration::from_millis(1),
    }
}

#[test]
fn parses_image_and_label_headers() {
    let data = vec![9u8; 2 * 3 * 4];
    match parse_idx(&idx_images(2, 3, 4, &data)).unwrap() {
        Idx::Images { count, rows, cols, data: d } => {
            assert_eq!((count, rows, cols), (2, 3, 4));
            assert_eq!(d, data);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(parse_idx(&idx_labels(&[5, 0, 4])).unwrap(), Idx::Labels(vec![5, 0, 4]));
}

#[test]
fn rejects_bad_magic_and_truncation() {
    let mut bad = idx_labels(&[1, 2]);
    bad[3] = 0x02;
    assert!(matches!(parse_idx(&bad), Err(crate::Error::Format(_))));
    let short = idx_images(2, 3, 4, &[0; 23]);
    assert!(matches!(parse_idx(&short), Err(crate::Error::Format(_))));
    assert!(matches!(parse_idx(&idx_labels(&[1, 2])[..9]), Err(crate::Error::Format(_))));
    assert!(matches!(parse_idx(&[0, 0, 8]), Err(crate::Error::Format(_))));
}

#[test]
fn mnist_set_validates_labels_and_shapes() {
    assert!(MnistSet::new(vec![0; 784], vec![10]).is_err());
    assert!(MnistSet::new(vec![0; 783], vec![1]).is_err());
    let s = MnistSet::new((0..2 * 784).map(|i| (i / 784) as u8).collect(), vec![3, 4]).unwrap();
    let sub = s.subset(&[1]);
    assert_eq!(sub.labels(), &[4]);
    assert!(sub.image(0).iter().all(|&v| v == 1));
}

#[test]
fn fetch_copies_verifies_and_is_idempotent() {
    let mirror = tempfile::tempdir().unwrap();
    let dest = tempfile::tempdir().unwrap();
    let files = tiny_mirror(mirror.path());
    let url = format!("file://{}", mirror.path().display());
    let first = fetch_mnist(&url, dest.path(), &files, quick()).unwrap();
    assert_eq!(first.downloaded.len(), 4);
    // A second run finds verified files even with the mirror gone.
    drop(mirror);
    let again = fetch_mnist(&url, dest.path(), &files, quick()).unwrap();
    assert!(again.downloaded.is_empty());
    assert_eq!(again.present.len(), 4);

    let set = load_mnist(dest.path(), &files).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set.labels(), &[5, 0, 4, 7]);
}

#[test]
fn corrupted_download_is_an_integrity_error_and_removed() {
    let mirror = tempfile::tempdir().unwrap();
    let dest = tempfile::tempdir().unwrap();
    let files = tiny_mirror(mirror.path());
    let target = mirror.path().join(&files[1].name);
    let raw = idx_labels(&[5, 0, 9]);
    std::fs::write(&target, gz(&raw)).unwrap();
    let err = fetch_mnist(mirror.path().to_str().unwrap(), dest.path(), &files, quick()).unwrap_err();
    assert!(matches!(err, crate::Error::Integrity(_)), "{err}");
    assert!(!dest.path().join(&files[1].name).exists());
    assert!(!dest.path().join(format!("{}.part", files[1].name)).exists());
}

#[test]
fn unreachable_mirror_is_a_network_error_after_retries() {
    let dest = tempfile::tempdir().unwrap();
    let files = vec![MnistFile::new("x.gz", "00")];
    match fetch_mnist("/nonexistent/mirror", dest.path(), &files, quick()).unwrap_err() {
        crate::Error::Network { attempts, .. } => assert_eq!(attempts, 3),
        e => panic!("{e}"),
    }
}

#[test]
fn split_sizes_disjointness_and_determinism() {
    let [a, b, c] = split_indices(42);
    assert_eq!((a.len(), b.len(), c.len()), (50_000, 10_000, 10_000));
    let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..70_000).collect::<Vec<_>>());
    assert_eq!(split_indices(42), [a.clone(), b, c]);
    assert_ne!(split_indices(43)[0], a);

    let small = MnistSet::new(vec![0; 784], vec![1]).unwrap();
    assert!(split_5_1_1(&small, 0).is_err());
}

#[test]
fn unit_interval_examples() {
    assert_eq!(to_unit_interval(&[0, 255, 128]), vec![0.0, 1.0, 128.0 / 255.0]);
    assert!((to_unit_interval(&[128])[0] - 0.50196).abs() < 1e-5);
}

#[test]
fn downsample_constant_and_zero() {
    assert!(downsample_6x10(&[0.37; 784]).iter().all(|&v| (v - 0.37).abs() < 1e-6));
    assert!(downsample_6x10(&[0.0; 784]).iter().all(|&v| v == 0.0));
    assert_eq!(downsample_6x10(&[0.0; 784]).len(), 60);
}

#[test]
fn area_resample_exact_block_average() {
    let src: Vec<f32> = (0..16).map(|v| v as f32).collect();
    assert_eq!(area_resample(&src, 4, 4, 2, 2), vec![2.5, 4.5, 10.5, 12.5]);
}

proptest! {
    #[test]
    fn downsample_conserves_mass_and_range(img in prop::collection::vec(0.0f32..=1.0, 784)) {
        let out = downsample_6x10(&img);
        let mean_in: f64 = img.iter().map(|&v| v as f64).sum::<f64>() / 784.0;
        let mean_out: f64 = out.iter().map(|&v| v as f64).sum::<f64>() / 60.0;
        prop_assert!((mean_in - mean_out).abs() < 1e-6);
        prop_assert!(out.iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
    }
}

fn straight_renderer(res: Resolution) -> crate::phosphene::AxonMapRenderer {
    let params = AxonMapParams::new(150.0, 500.0, 64, Trajectory::straight((4340.0, 420.0))).unwrap();
    percept_renderer(res.grid(), params).unwrap()
}

fn digits(images: Vec<Vec<u8>>) -> MnistSet {
    let labels = (0..images.len() as u8).collect();
    MnistSet::new(images.concat(), labels).unwrap()
}

#[test]
fn dataset_cache_round_trip_and_hit() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = vec![0u8; 784];
    a[10 * 28 + 12..10 * 28 + 16].fill(255);
    let set = digits(vec![a, vec![0; 784], vec![90; 784]]);
    let r = straight_renderer(Resolution::Argus6x10);
    let first = build_percept_dataset(&set, Split::Val, Resolution::Argus6x10, &r, dir.path()).unwrap();
    assert_eq!(first.rendered, 3);
    let ds = &first.dataset;
    assert_eq!((ds.len(), ds.in_h, ds.in_w, ds.out_h, ds.out_w), (3, 6, 10, 28, 28));
    assert!(ds.inputs.iter().chain(&ds.targets).all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(ds.targets.iter().copied().fold(0.0, f32::max), 1.0);
    // The blank image renders to a blank target.
    assert!(ds.target(1).iter().all(|&v| v == 0.0));

    let second = build_percept_dataset(&set, Split::Val, Resolution::Argus6x10, &r, dir.path()).unwrap();
    assert_eq!(second.rendered, 0);
    assert_eq!(second.dataset, first.dataset);
    let bytes = std::fs::read(&first.path).unwrap();
    assert_eq!(&bytes[..8], PDST_MAGIC);
    assert_eq!(bytes, first.dataset.to_bytes());

    // Different images under the same key invalidate the cache.
    let other = digits(vec![vec![1; 784], vec![0; 784], vec![90; 784]]);
    let third = build_percept_dataset(&other, Split::Val, Resolution::Argus6x10, &r, dir.path()).unwrap();
    assert_eq!(third.rendered, 3);
    assert_ne!(third.dataset.params_hash, first.dataset.params_hash);
}

#[test]
fn dataset_rejects_mismatched_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let set = digits(vec![vec![0; 784]]);
    let r = straight_renderer(Resolution::Full28);
    assert!(build_percept_dataset(&set, Split::Test, Resolution::Argus6x10, &r, dir.path()).is_err());
}

#[test]
fn center_pixel_percept_peaks_at_its_window_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = vec![0u8; 784];
    img[14 * 28 + 14] = 255;
    let r = straight_renderer(Resolution::Full28);
    let ds = build_percept_dataset(&digits(vec![img]), Split::Test, Resolution::Full28, &r, dir.path())
        .unwrap()
        .dataset;
    let t = ds.target(0);
    let k = (0..784).max_by(|&i, &j| t[i].total_cmp(&t[j])).unwrap();
    let (row, col) = (k / 28, k % 28);
    // Electrode (14, 14) in window pixel units at the 28-pixel output.
    let (ex, ey) = r.grid().position(14, 14);
    let w = r.window();
    let px = 2.0 * w.half_extent() / 28.0;
    let fc = (ex - (w.center().0 - w.half_extent())) / px - 0.5;
    let fr = (ey - (w.center().1 - w.half_extent())) / px - 0.5;
    assert!((col as f64 - fc).abs() <= 1.0 && (row as f64 - fr).abs() <= 1.0, "peak ({row},{col}) vs ({fr},{fc})");
}

#[test]
fn resolution_names_round_trip() {
    for r in [Resolution::Full28, Resolution::Argus6x10] {
        assert_eq!(r.as_str().parse::<Resolution>().unwrap(), r);
    }
    assert!("7x7".parse::<Resolution>().is_err());
}
