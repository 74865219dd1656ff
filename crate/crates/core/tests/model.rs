mod common;

use common::dir_contents;
use ezquant::manifest::read_raw_f32;
use ezquant::model::{
    load_entry, quantize_model, sweep_manifest, write_synthetic_model, EntryKind,
    QUANTIZED_MANIFEST_FILE,
};
use ezquant::{dequantize_model, Mode, QuantConfig};
use statrs::function::erf::erfc;

#[test]
fn output_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let manifest = write_synthetic_model(&src, 6, 48, 40, 0.01, 4, 11).unwrap();
    let cfg = QuantConfig {
        steps: 50,
        ..QuantConfig::default()
    };
    let mut outputs = Vec::new();
    for workers in [1, 3, 8] {
        let out = dir.path().join(format!("out{workers}"));
        let model = quantize_model(&manifest, &src, &out, &cfg, Mode::Easyquant, workers).unwrap();
        assert!(model.is_complete());
        outputs.push(dir_contents(&out));
    }
    assert_eq!(outputs[0].len(), 7);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn round_trip_respects_half_step_bound() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let manifest = write_synthetic_model(&src, 3, 64, 32, 0.005, 0, 5).unwrap();
    let out = dir.path().join("q");
    let model = quantize_model(
        &manifest,
        &src,
        &out,
        &QuantConfig::default(),
        Mode::Easyquant,
        2,
    )
    .unwrap();
    assert!(out.join(QUANTIZED_MANIFEST_FILE).exists());
    let deq = dir.path().join("deq");
    let back = dequantize_model(&out, &deq).unwrap();
    assert_eq!(back.tensors.len(), 3);

    for ((spec, entry), rec) in manifest
        .tensors
        .iter()
        .zip(&model.manifest.tensors)
        .zip(&back.tensors)
    {
        assert_eq!(entry.kind, EntryKind::Quantized);
        let q = load_entry(&out, entry).unwrap();
        let orig = read_raw_f32(src.join(&spec.file), spec.len()).unwrap();
        let recon = read_raw_f32(deq.join(&rec.file), spec.len()).unwrap();
        let cols = q.cols;
        for (i, (&x, &y)) in orig.iter().zip(&recon).enumerate() {
            let (r, c) = (i / cols, i % cols);
            if q.outliers.contains(r, c) {
                assert_eq!(x.to_bits(), y.to_bits());
                continue;
            }
            let s = q.scales.get(c) as f64;
            let x = x as f64;
            if (-7.0 * s..=8.0 * s).contains(&x) {
                assert!((y as f64 - x).abs() <= s / 2.0 * (1.0 + 1e-6));
            }
        }
    }
}

#[test]
fn sweep_matches_gaussian_tails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_model(dir.path(), 2, 500, 500, 0.0, 0, 9).unwrap();
    let cfg = QuantConfig {
        steps: 0,
        ..QuantConfig::default()
    };
    let rows = sweep_manifest(&manifest, dir.path(), &[1.0, 2.0, 4.0], &cfg).unwrap();
    // 2 * Phi(-n); at n=4 only ~30 hits are expected, too few for a tight check.
    for row in &rows[..2] {
        let expected = erfc(row.sigma_n as f64 / std::f64::consts::SQRT_2);
        let rel = (row.outlier_fraction - expected).abs() / expected;
        assert!(
            rel < 0.15,
            "n={} fraction {}",
            row.sigma_n,
            row.outlier_fraction
        );
    }
    assert!(rows[2].outlier_fraction < 2e-4);
    for row in &rows {
        assert_eq!(row.elements, 500_000);
        assert!(row.final_error < row.rtn_error);
    }
}
