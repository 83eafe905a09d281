mod common;

use std::fs;

use common::*;
use fedcontrol::data::{read_idx, read_idx_images, read_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
use fedcontrol::Error;

fn write(dir: &std::path::Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn fixture_round_trips_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fixture_images();
    let img_bytes = idx_images(IMAGE_MAGIC, 3, 3, &raw);
    let lbl_bytes = idx_labels(LABEL_MAGIC, &[7, 2]);
    let img = write(dir.path(), "img.idx", &img_bytes);
    let lbl = write(dir.path(), "lbl.idx", &lbl_bytes);

    let images = read_idx_images(&img).unwrap();
    assert_eq!((images.count, images.rows, images.cols), (2, 3, 3));
    let expected: Vec<f64> = raw.iter().flatten().map(|&b| f64::from(b) / 255.0).collect();
    assert_eq!(images.pixels, expected);
    assert_eq!(images.pixels[8], 1.0);
    assert_eq!(images.pixels[0], 0.0);

    // Re-encode from the parsed values and compare with the original bytes.
    let back: Vec<Vec<u8>> = images
        .pixels
        .chunks(9)
        .map(|c| c.iter().map(|p| (p * 255.0).round() as u8).collect())
        .collect();
    assert_eq!(idx_images(IMAGE_MAGIC, 3, 3, &back), img_bytes);

    let labels = read_idx_labels(&lbl).unwrap();
    assert_eq!(labels, vec![7, 2]);

    let data = read_idx(&img, &lbl).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.input_dim(), 9);
    assert_eq!(data.num_classes(), 8);
    assert_eq!(data.features(1), &expected[9..]);
}

#[test]
fn malformed_files_fail_with_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = idx_images(IMAGE_MAGIC, 3, 3, &fixture_images());

    let bad_magic = write(dir.path(), "magic.idx", &idx_images(0x0803_0000, 3, 3, &fixture_images()));
    assert!(matches!(read_idx_images(&bad_magic), Err(Error::BadMagic { found: 0x0803_0000, .. })));

    let label_magic = write(dir.path(), "swapped.idx", &idx_labels(IMAGE_MAGIC, &[1]));
    assert!(matches!(read_idx_labels(&label_magic), Err(Error::BadMagic { expected: LABEL_MAGIC, .. })));

    let short = write(dir.path(), "short.idx", &good[..good.len() - 1]);
    assert!(matches!(
        read_idx_images(&short),
        Err(Error::Truncated { expected: 34, actual: 33, .. })
    ));

    let header_only = write(dir.path(), "header.idx", &good[..6]);
    assert!(matches!(read_idx_images(&header_only), Err(Error::Truncated { .. })));

    let mut long = good.clone();
    long.push(0);
    let long = write(dir.path(), "long.idx", &long);
    assert!(matches!(read_idx_images(&long), Err(Error::TrailingBytes { extra: 1, .. })));

    let img = write(dir.path(), "img.idx", &good);
    let three = write(dir.path(), "three.idx", &idx_labels(LABEL_MAGIC, &[0, 1, 2]));
    assert!(matches!(
        read_idx(&img, &three),
        Err(Error::CountMismatch { images: 2, labels: 3 })
    ));

    let missing = dir.path().join("absent.idx");
    assert!(matches!(read_idx_images(&missing), Err(Error::Io { .. })));
}
