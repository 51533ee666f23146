use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use ppa_core::array::{AReg, AnalogPlane, ArrayGeometry, BitPlane, DReg, PeArray};
use ppa_core::mnist::{self, IdxError, Split};
use ppa_core::netplan::Preset;
use ppa_core::pgm::{self, Gray};
use proptest::prelude::*;

fn idx_images(n: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut v = Vec::new();
    for w in [mnist::IMAGE_MAGIC, n, rows, cols] {
        v.extend_from_slice(&w.to_be_bytes());
    }
    v.extend((0..(n * rows * cols) as usize).map(fill));
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for w in [mnist::LABEL_MAGIC, labels.len() as u32] {
        v.extend_from_slice(&w.to_be_bytes());
    }
    v.extend_from_slice(labels);
    v
}

#[test]
fn vendored_test_set_has_10000_items() {
    let d = mnist::load_split(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist").as_path(), Split::Test)
        .unwrap();
    assert_eq!(d.len(), 10_000);
    assert_eq!((d.rows, d.cols), (28, 28));
    assert_eq!(d.labels[0], 7);
}

#[test]
fn raw_and_gzip_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = idx_images(3, 2, 2, |i| (i * 20) as u8);
    let labs = idx_labels(&[1, 2, 3]);
    std::fs::write(dir.path().join("a"), &imgs).unwrap();
    std::fs::write(dir.path().join("b"), &labs).unwrap();
    let mut gz = GzEncoder::new(Vec::new(), Compression::fast());
    gz.write_all(&imgs).unwrap();
    std::fs::write(dir.path().join("a.gz"), gz.finish().unwrap()).unwrap();
    let raw = mnist::load_idx(&dir.path().join("a"), &dir.path().join("b")).unwrap();
    let zip = mnist::load_idx(&dir.path().join("a.gz"), &dir.path().join("b")).unwrap();
    assert_eq!(raw, zip);
    assert_eq!(raw.image(2), &[160, 180, 200, 220]);
}

#[test]
fn truncated_file_is_a_length_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut imgs = idx_images(3, 2, 2, |_| 0);
    imgs.pop();
    std::fs::write(dir.path().join("a"), &imgs).unwrap();
    std::fs::write(dir.path().join("b"), idx_labels(&[1, 2, 3])).unwrap();
    let e = mnist::load_idx(&dir.path().join("a"), &dir.path().join("b")).unwrap_err();
    assert!(matches!(e, IdxError::Length { got: 11, want: 12, .. }), "{e}");
}

#[test]
fn swapped_files_are_a_magic_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a"), idx_images(1, 2, 2, |_| 0)).unwrap();
    std::fs::write(dir.path().join("b"), idx_labels(&[1])).unwrap();
    let e = mnist::load_idx(&dir.path().join("b"), &dir.path().join("a")).unwrap_err();
    assert!(matches!(e, IdxError::Magic { got: 2049, want: 2051, .. }), "{e}");
}

#[test]
fn count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a"), idx_images(2, 2, 2, |_| 0)).unwrap();
    std::fs::write(dir.path().join("b"), idx_labels(&[1])).unwrap();
    let e = mnist::load_idx(&dir.path().join("a"), &dir.path().join("b")).unwrap_err();
    assert!(matches!(e, IdxError::Count { images: 2, labels: 1 }), "{e}");
}

#[test]
fn preprocess_extremes() {
    let zero = mnist::preprocess(&[0; 784], 28, 28, Preset::TwoLayer);
    assert_eq!(zero, AnalogPlane::zeros(32, 32));
    let full = mnist::preprocess(&[255; 784], 28, 28, Preset::ThreeLayer);
    assert_eq!(full, AnalogPlane::constant(64, 64, 1.0));
}

#[test]
fn threshold_is_inclusive_at_128() {
    assert_eq!(mnist::binarize(&[127, 128, 0, 255], 2, 2, 2), vec![0, 1, 0, 1]);
}

#[test]
fn checker_upscale_follows_index_map() {
    let checker: Vec<u8> = (0..784).map(|i| if (i / 28 + i % 28) % 2 == 0 { 255 } else { 0 }).collect();
    let out = mnist::binarize(&checker, 28, 28, 64);
    for y in 0..64 {
        for x in 0..64 {
            let (sy, sx) = (y * 28 / 64, x * 28 / 64);
            assert_eq!(out[y * 64 + x], u8::from((sy + sx) % 2 == 0));
        }
    }
    // every source pixel covers 2 or 3 target pixels per axis, ⌈64/28⌉ = 3 at most
    let mut runs = vec![0usize; 28];
    for x in 0..64 {
        runs[x * 28 / 64] += 1;
    }
    assert!(runs.iter().all(|&r| (2..=3).contains(&r)));
}

#[test]
fn pgm_of_zero_analog_plane_is_mid_gray() {
    let g = pgm::analog_to_gray(&AnalogPlane::zeros(5, 3), 128.0);
    assert!(g.pixels.iter().all(|&p| p == 128));
    let full = pgm::bits_to_gray(&BitPlane::ones(7, 2));
    assert!(full.pixels.iter().all(|&p| p == 255));
}

#[test]
fn pgm_rejects_garbage() {
    assert!(Gray::decode(b"P2\n1 1\n255\n\0").is_err());
    assert!(Gray::decode(b"P5\n2 2\n255\n\0").is_err());
    assert!(Gray::decode(b"P5\n1 1\n65535\n\0\0").is_err());
}

#[test]
fn dump_state_writes_every_plane() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = PeArray::new(ArrayGeometry::new(16, 8).unwrap());
    s.load_analog(AReg::R2, &AnalogPlane::constant(16, 8, 64.0)).unwrap();
    let files = pgm::dump_state(&s, dir.path()).unwrap();
    assert_eq!(files.len(), 7 + 13 + 1 + 1);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 21);
    assert!(manifest.contains("R2 R2.pgm"));
    let r2 = Gray::read(&dir.path().join("R2.pgm")).unwrap();
    assert!(r2.pixels.iter().all(|&p| p == 191));
    let flag = Gray::read(&dir.path().join("FLAG.pgm")).unwrap();
    assert!(flag.pixels.iter().all(|&p| p == 255));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bit_plane_pgm_round_trip(seed in any::<u64>(), w in 1usize..90, h in 1usize..40) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = BitPlane::from_fn(w, h, |_, _| r.random_bool(0.5));
        let back = pgm::gray_to_bits(&Gray::decode(&pgm::bits_to_gray(&p).encode()).unwrap());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn preprocess_is_idempotent_on_binary_targets(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<u8> = (0..32 * 32).map(|_| if r.random_bool(0.3) { 255 } else { 0 }).collect();
        let once = mnist::binarize(&img, 32, 32, 32);
        let scaled: Vec<u8> = once.iter().map(|&b| b * 255).collect();
        prop_assert_eq!(mnist::binarize(&scaled, 32, 32, 32), once);
    }
}

#[test]
fn dump_uses_each_register_name_once() {
    let names: std::collections::HashSet<_> = DReg::ALL.iter().map(|r| r.name()).chain(AReg::ALL.iter().map(|r| r.name())).collect();
    assert_eq!(names.len(), 20);
}
