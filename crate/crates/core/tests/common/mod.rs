#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

/// The 1x2 tensor [[1.0, 100.0]] at k=4, n=1, assembled field by field.
///
/// mean = 50.5 and std = 49.5, so both entries sit exactly on the
/// threshold and count as outliers. Both columns are then empty, get scale
/// 1.0, and store level 0 as code 0 - l_min = 7 in each nibble.
pub fn golden_bytes() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"EZQT");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&[4, 0, 0, 0]);
    b.extend_from_slice(&1.0f32.to_le_bytes());
    b.extend_from_slice(&50.5f64.to_le_bytes());
    b.extend_from_slice(&49.5f64.to_le_bytes());
    b.extend_from_slice(&1u64.to_le_bytes());
    b.extend_from_slice(&2u64.to_le_bytes());
    b.extend_from_slice(&1.0f32.to_le_bytes());
    b.extend_from_slice(&1.0f32.to_le_bytes());
    b.extend_from_slice(&2u64.to_le_bytes());
    for (row, col, value) in [(0u32, 0u32, 1.0f32), (0, 1, 100.0)] {
        b.extend_from_slice(&row.to_le_bytes());
        b.extend_from_slice(&col.to_le_bytes());
        b.extend_from_slice(&value.to_le_bytes());
    }
    b.push(0x77);
    b
}

/// Files in `dir`, sorted by name, with their contents.
pub fn dir_contents(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
