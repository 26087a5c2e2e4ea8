use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use plaf_cli::exit;
use plaf_core::storage::ingest::{write_feature_map, write_masks, MaskEncoding};
use plaf_core::{DenseFeatureMap, MaskSet};
use serde_json::Value;

fn plaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plaf"))
        .args(args)
        .output()
        .expect("plaf runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 200 disjoint 24x64 tiles on a 480x640 raster.
fn tile_masks() -> MaskSet {
    let masks = (0..200)
        .map(|k| {
            let (r0, c0) = ((k / 10) * 24, (k % 10) * 64);
            (0..480 * 640)
                .map(|px| {
                    let (r, c) = (px / 640, px % 640);
                    (r0..r0 + 24).contains(&r) && (c0..c0 + 64).contains(&c)
                })
                .collect()
        })
        .collect();
    MaskSet::new(480, 640, masks).unwrap()
}

#[test]
fn vga_shaped_ingest_reports_storage() {
    let dir = tempfile::tempdir().unwrap();
    let feat = DenseFeatureMap::from_fn(30, 40, 1024, |r, c| {
        (0..1024).map(|ch| ((r * 7 + c * 3 + ch) % 17) as f32 / 17.0).collect()
    })
    .unwrap();
    let (fp, mp, out) = (dir.path().join("f.f32"), dir.path().join("m.rle"), dir.path().join("f.plaf2d"));
    write_feature_map(&fp, &feat).unwrap();
    write_masks(&mp, &tile_masks(), MaskEncoding::Rle).unwrap();

    let o = plaf(&["ingest", "--features", p(&fp), "--masks", p(&mp), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1.26 GB / 1.43 MB / 0.11%"), "{}", stdout(&o));
    assert_eq!(fs::metadata(&out).unwrap().len(), 1_433_600 + 64);

    let s = json(&plaf(&["stats", p(&out), "--json"]));
    assert_eq!(s["masks"], 200);
    assert_eq!(s["storage"]["dense_2d_bytes"], 1_258_291_200u64);
    assert_eq!(s["storage"]["mask_indexed_2d_bytes"], 1_433_600);
    assert_eq!(s["mask_area_histogram"][0]["count"], 200);
}

#[test]
fn maskless_ingest_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let feat = DenseFeatureMap::new(4, 4, 2, vec![0.5; 32]).unwrap();
    let (fp, mp, out) = (dir.path().join("f.f32"), dir.path().join("m.rle"), dir.path().join("f.plaf2d"));
    write_feature_map(&fp, &feat).unwrap();
    write_masks(&mp, &MaskSet::new(4, 4, Vec::new()).unwrap(), MaskEncoding::Rle).unwrap();
    let o = plaf(&["ingest", "--features", p(&fp), "--masks", p(&mp), "--out", p(&out), "--json"]);
    assert!(stderr(&o).contains("warning"));
    let j = json(&o);
    assert_eq!(j["masks"], 0);
    assert_eq!(j["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(fs::metadata(&out).unwrap().len(), 4 * 4 * 2 + 64);
}

#[test]
fn truncated_feature_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let feat = DenseFeatureMap::new(4, 4, 2, vec![0.5; 32]).unwrap();
    let mask = MaskSet::new(4, 4, vec![vec![true; 16]]).unwrap();
    let (fp, mp, out) = (dir.path().join("f.f32"), dir.path().join("m.rle"), dir.path().join("f.plaf2d"));
    write_feature_map(&fp, &feat).unwrap();
    write_masks(&mp, &mask, MaskEncoding::Raw).unwrap();
    let bytes = fs::read(&fp).unwrap();
    fs::write(&fp, &bytes[..bytes.len() - 6]).unwrap();
    let o = plaf(&["ingest", "--features", p(&fp), "--masks", p(&mp), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(exit::FORMAT));
    assert!(stderr(&o).contains("truncated payload"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_camera_is_input_missing() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let o = plaf(&["synth", "--objects", "2", "--dim", "4", "--height", "12", "--width", "16", "--frames", "1", "--out", p(&scene)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frame = dir.path().join("f.plaf2d");
    let o = plaf(&[
        "ingest",
        "--features", p(&scene.join("frame_000.feat.f32")),
        "--masks", p(&scene.join("frame_000.masks.rle")),
        "--out", p(&frame),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = plaf(&["build", "--frame", p(&frame), "--camera", p(&dir.path().join("nope.json")), "--out", p(&dir.path().join("m.plaf3d"))]);
    assert_eq!(o.status.code(), Some(exit::INPUT_MISSING));
}

#[test]
fn mismatched_frame_and_camera_counts_are_usage_errors() {
    let o = plaf(&["build", "--frame", "a", "--frame", "b", "--camera", "c", "--out", "m"]);
    assert_eq!(o.status.code(), Some(exit::USAGE));
}

#[test]
fn dry_run_prices_the_large_map() {
    let j = json(&plaf(&["stats", "--dry-run", "--n", "10000000", "--dim", "1024", "--m", "10000", "--json"]));
    assert_eq!(j["storage"]["dense_3d_bytes"], 40_960_000_000u64);
    assert_eq!(j["storage"]["index_ref_3d_bytes"], 60_960_000);
    let o = plaf(&["stats", "--dry-run", "--n", "10000000", "--dim", "1024", "--m", "10000"]);
    assert!(stdout(&o).contains("40.96 GB / 60.96 MB"), "{}", stdout(&o));
}

#[test]
fn dry_run_without_shape_is_invalid() {
    let o = plaf(&["stats", "--dry-run"]);
    assert_eq!(o.status.code(), Some(exit::INVALID_DATA));
}

#[test]
fn bad_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("junk.plaf3d");
    fs::write(&f, b"NOTPLAF!xxxxxxxx").unwrap();
    assert_eq!(plaf(&["stats", p(&f)]).status.code(), Some(exit::FORMAT));
}

#[test]
fn inline_query_on_a_frame_writes_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    assert!(plaf(&["synth", "--objects", "2", "--dim", "4", "--height", "12", "--width", "16", "--frames", "1", "--noise", "0", "--out", p(&scene)]).status.success());
    let frame = dir.path().join("f.plaf2d");
    assert!(plaf(&[
        "ingest",
        "--features", p(&scene.join("frame_000.feat.f32")),
        "--masks", p(&scene.join("frame_000.masks.rle")),
        "--out", p(&frame),
    ])
    .status
    .success());
    let pgm = dir.path().join("h.pgm");
    let j = json(&plaf(&[
        "query", p(&frame), "--vector", "1,-0.5,0,0", "--theta", "-1", "--topk", "3", "--out", p(&pgm), "--json",
    ]));
    assert_eq!(j["target"], "frame");
    assert_eq!(j["selected_count"], 3);
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n16 12\n255\n"));
    assert_eq!(bytes.len(), b"P5\n16 12\n255\n".len() + 12 * 16);
    assert!(dir.path().join("h.pgm.f32").exists());
}
