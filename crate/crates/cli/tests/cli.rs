use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raterfuse::fusion::{weighted_majority_vote, VoteConfig};
use raterfuse::io::{read_label_volume, read_scalar_volume, report, write_volume};
use raterfuse::metrics::{
    kappa_from_volumes, region_metrics, two_sample_ttest, KappaMode, KappaOptions, TTestKind,
};
use raterfuse::{LabelSchema, LabelVolume, VolumeGeometry};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raterfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_labels(dir: &Path, name: &str, dims: [usize; 3], data: Vec<u16>) -> PathBuf {
    let path = dir.join(name);
    let vol = LabelVolume::new(VolumeGeometry::unit(dims).unwrap(), data).unwrap();
    write_volume(&vol, &path).unwrap();
    path
}

fn phantom_case(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join("phantom");
    ok_json(&["phantom", "--out-dir", s(&out), "--seed", seed]);
    out.join("case_000")
}

#[test]
fn encode_manifest_lists_code_channels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "encode",
        "--raters",
        "4",
        "--rater",
        "0",
        "--out",
        s(dir.path()),
        "--dims",
        "3",
        "3",
        "2",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let manifest: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["code_channels"], 2);
    assert_eq!(manifest["image_channels"], 0);
    let values: Vec<f64> = manifest["channels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["value"].as_f64().unwrap())
        .collect();
    assert_eq!(values, [1.0, 0.0]);
    let ch = read_scalar_volume(dir.path().join("channel_00.nii.gz")).unwrap();
    assert!(ch.data().iter().all(|&v| v == 1.0));
}

#[test]
fn encode_with_image_keeps_codes_and_normalizes_image() {
    let dir = tempfile::tempdir().unwrap();
    let truth = phantom_case(dir.path(), "3").join("image.nii.gz");
    let out_dir = dir.path().join("enc");
    let manifest = ok_json(&[
        "encode",
        "--image",
        s(&truth),
        "--raters",
        "3",
        "--rater",
        "1",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(manifest["code"], serde_json::json!([-1, 0]));
    assert_eq!(manifest["image_channels"], 1);
    let image = read_scalar_volume(out_dir.join("channel_00.nii.gz")).unwrap();
    let n = image.data().len() as f64;
    let mean: f64 = image.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-4);
    let code = read_scalar_volume(out_dir.join("channel_01.nii.gz")).unwrap();
    assert!(code.data().iter().all(|&v| v == -1.0));
}

#[test]
fn encode_rejects_rater_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "encode",
        "--raters",
        "4",
        "--rater",
        "4",
        "--out",
        s(dir.path()),
        "--dims",
        "2",
        "2",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rater index out of range"));
}

#[test]
fn json_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--json-errors",
        "encode",
        "--raters",
        "2",
        "--rater",
        "5",
        "--out",
        s(dir.path()),
        "--dims",
        "2",
        "2",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"]
        .as_str()
        .unwrap()
        .contains("rater index out of range"));
}

#[test]
fn vote_single_voxel_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let preds: Vec<PathBuf> = [0u16, 1, 2, 2]
        .iter()
        .enumerate()
        .map(|(i, &l)| write_labels(dir.path(), &format!("p{i}.nii"), [1, 1, 1], vec![l]))
        .collect();
    let fused = dir.path().join("fused.nii");
    let unc = dir.path().join("unc.nii");
    let mut args = vec![
        "vote",
        "--wfg",
        "3",
        "--out-label",
        s(&fused),
        "--out-uncertainty",
        s(&unc),
    ];
    for p in &preds {
        args.extend(["--pred", s(p)]);
    }
    let summary = ok_json(&args);
    assert_eq!(summary["label_counts"][2]["voxels"], 1);
    assert_eq!(read_label_volume(&fused).unwrap().data(), [2]);
    assert_eq!(read_scalar_volume(&unc).unwrap().data(), [2.0]);
}

#[test]
fn vote_majority_on_identical_predictions_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom_case(dir.path(), "5");
    let truth = case.join("truth.nii.gz");
    let fused = dir.path().join("fused.nii.gz");
    let unc = dir.path().join("unc.nii.gz");
    ok_json(&[
        "vote",
        "--wfg",
        "1",
        "--pred",
        s(&truth),
        "--pred",
        s(&truth),
        "--pred",
        s(&truth),
        "--out-label",
        s(&fused),
        "--out-uncertainty",
        s(&unc),
    ]);
    assert_eq!(
        read_label_volume(&fused).unwrap().data(),
        read_label_volume(&truth).unwrap().data()
    );
    assert!(read_scalar_volume(&unc)
        .unwrap()
        .data()
        .iter()
        .all(|&d| d == 0.0));
}

#[test]
fn vote_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom_case(dir.path(), "11");
    let paths: Vec<PathBuf> = (0..4)
        .map(|r| case.join(format!("rater_{r}.nii.gz")))
        .collect();
    let fused = dir.path().join("fused.nii.gz");
    let unc = dir.path().join("unc.nii.gz");
    let mut args = vec![
        "vote",
        "--wfg",
        "3",
        "--out-label",
        s(&fused),
        "--out-uncertainty",
        s(&unc),
    ];
    for p in &paths {
        args.extend(["--pred", s(p)]);
    }
    ok_json(&args);
    let preds: Vec<LabelVolume> = paths
        .iter()
        .map(|p| read_label_volume(p).unwrap())
        .collect();
    let (expected, disagreement) =
        weighted_majority_vote(&preds, 3, &VoteConfig::new(3).unwrap()).unwrap();
    assert_eq!(read_label_volume(&fused).unwrap().data(), expected.data());
    assert_eq!(
        read_scalar_volume(&unc).unwrap().data(),
        disagreement.scores().data()
    );
}

#[test]
fn vote_collapses_rater_specific_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    fs::write(
        &schema,
        r#"{"foreground_names": ["A", "B"], "num_raters": 3}"#,
    )
    .unwrap();
    // ids for R = 3: region 1 -> 1..=3, region 2 -> 4..=6
    let preds = [vec![1u16, 0], vec![6, 4], vec![5, 0]];
    let paths: Vec<PathBuf> = preds
        .into_iter()
        .enumerate()
        .map(|(i, d)| write_labels(dir.path(), &format!("r{i}.mlvr"), [2, 1, 1], d))
        .collect();
    let fused = dir.path().join("fused.mlvr");
    let unc = dir.path().join("unc.mlvr");
    let summary = ok_json(&[
        "vote",
        "--schema",
        s(&schema),
        "--wfg",
        "1",
        "--pred",
        s(&paths[0]),
        "--pred",
        s(&paths[1]),
        "--pred",
        s(&paths[2]),
        "--out-label",
        s(&fused),
        "--out-uncertainty",
        s(&unc),
    ]);
    assert_eq!(summary["input_space"], "rater");
    assert_eq!(read_label_volume(&fused).unwrap().data(), [2, 0]);
}

#[test]
fn vote_rejects_geometry_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_labels(dir.path(), "a.nii", [2, 2, 2], vec![0; 8]);
    let b = write_labels(dir.path(), "b.nii", [2, 2, 1], vec![0; 4]);
    let out = run(&[
        "vote",
        "--pred",
        s(&a),
        "--pred",
        s(&b),
        "--out-label",
        s(&dir.path().join("f.nii")),
        "--out-uncertainty",
        s(&dir.path().join("u.nii")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometry mismatch"));
}

fn read_csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn metrics_identical_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let truth = phantom_case(dir.path(), "2").join("truth.nii.gz");
    let out = run(&[
        "metrics",
        "--pred",
        s(&truth),
        "--ref",
        s(&truth),
        "--case",
        "self",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("case,region,dsc,v_rel,v_mm3,bound_lower,bound_upper,in_bounds\n"));
    let rows = read_csv_rows(&text);
    let regions: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(regions, ["anterior", "middle", "posterior", "foreground"]);
    for row in &rows {
        assert_eq!(row[2], "1.0");
        assert_eq!(row[3], "1.0");
        assert_eq!(row[7], "true");
    }
}

#[test]
fn metrics_bound_columns_at_0806() {
    let dir = tempfile::tempdir().unwrap();
    // tp 403, fn 97, fp 97 -> DSC = 806 / 1000
    let mut pred = vec![0u16; 1000];
    let mut reference = vec![0u16; 1000];
    reference[..500].iter_mut().for_each(|v| *v = 1);
    pred[..403].iter_mut().for_each(|v| *v = 1);
    pred[500..597].iter_mut().for_each(|v| *v = 1);
    let p = write_labels(dir.path(), "p.nii.gz", [10, 10, 10], pred);
    let r = write_labels(dir.path(), "r.nii.gz", [10, 10, 10], reference);
    let csv_path = dir.path().join("m.csv");
    let out = run(&[
        "metrics",
        "--pred",
        s(&p),
        "--ref",
        s(&r),
        "--out",
        s(&csv_path),
    ]);
    assert!(out.status.success());
    let rows = read_csv_rows(&fs::read_to_string(&csv_path).unwrap());
    let anterior = &rows[0];
    assert_eq!(anterior[0], "p");
    let dsc: f64 = anterior[2].parse().unwrap();
    let lower: f64 = anterior[5].parse().unwrap();
    let upper: f64 = anterior[6].parse().unwrap();
    assert!((dsc - 0.806).abs() < 1e-12);
    assert!((lower - 0.6750).abs() < 5e-4);
    assert!((upper - 1.4814).abs() < 5e-4);
    // empty middle region: no bounds and no relative volume
    assert_eq!(rows[1][3], "");
    assert_eq!(rows[1][5], "");
}

#[test]
fn metrics_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom_case(dir.path(), "9");
    let pred = case.join("rater_2.nii.gz");
    let truth = case.join("truth.nii.gz");
    let out = run(&[
        "metrics",
        "--pred",
        s(&pred),
        "--ref",
        s(&truth),
        "--case",
        "c9",
    ]);
    assert!(out.status.success());
    let schema = LabelSchema::three_region(1).unwrap();
    let rows: Vec<_> = region_metrics(
        &read_label_volume(&pred).unwrap(),
        &read_label_volume(&truth).unwrap(),
        &schema,
    )
    .unwrap()
    .iter()
    .map(|r| r.to_row("c9"))
    .collect();
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        report::csv_string(&rows).unwrap()
    );
}

#[test]
fn metrics_missing_reference_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_labels(dir.path(), "p.nii", [2, 2, 2], vec![0; 8]);
    let out = run(&[
        "metrics",
        "--pred",
        s(&p),
        "--ref",
        s(&dir.path().join("absent.nii")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["metrics", "--pred", s(&p)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn irr_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let case = phantom_case(dir.path(), "4");
    let paths: Vec<PathBuf> = (0..4)
        .map(|r| case.join(format!("rater_{r}.nii.gz")))
        .collect();
    let annots: Vec<LabelVolume> = paths
        .iter()
        .map(|p| read_label_volume(p).unwrap())
        .collect();
    let mut args = vec!["irr", "--mode", "multiclass"];
    for p in &paths {
        args.extend(["--annot", s(p)]);
    }
    let report = ok_json(&args);
    let expected = kappa_from_volumes(
        &annots,
        KappaMode::MultiClass,
        None,
        KappaOptions::default(),
    )
    .unwrap();
    assert_eq!(report["kappa"].as_f64().unwrap(), expected.kappa.unwrap());
    assert_eq!(report["num_categories"], 4);

    let out_path = dir.path().join("irr.json");
    args.extend(["--bbox", "--out", s(&out_path)]);
    let out = run(&args);
    assert!(out.status.success());
    let written: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let options = KappaOptions {
        restrict_to_bbox: true,
    };
    let expected = kappa_from_volumes(&annots, KappaMode::MultiClass, None, options).unwrap();
    assert_eq!(written["kappa"].as_f64().unwrap(), expected.kappa.unwrap());
}

#[test]
fn bounds_prints_json() {
    let b = ok_json(&["bounds", "--dsc", "0.806"]);
    assert!((b["lower"].as_f64().unwrap() - 0.6750).abs() < 5e-4);
    assert!((b["upper"].as_f64().unwrap() - 1.4814).abs() < 5e-4);
    assert_eq!(run(&["bounds", "--dsc", "1.5"]).status.code(), Some(2));
}

#[test]
fn ttest_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let a = [0.71, 0.74, 0.69, 0.80, 0.77];
    let b = [0.65, 0.70, 0.62, 0.68];
    let write = |name: &str, values: &[f64]| {
        let path = dir.path().join(name);
        let mut text = String::from("case,region,dsc\n");
        for (i, v) in values.iter().enumerate() {
            text.push_str(&format!("c{i},foreground,{v}\nc{i},anterior,0.1\n"));
        }
        fs::write(&path, text).unwrap();
        path
    };
    let pa = write("a.csv", &a);
    let pb = write("b.csv", &b);
    for welch in [false, true] {
        let mut args = vec![
            "ttest",
            "--group-a",
            s(&pa),
            "--group-b",
            s(&pb),
            "--region",
            "foreground",
        ];
        if welch {
            args.push("--welch");
        }
        let r = ok_json(&args);
        let kind = if welch {
            TTestKind::Welch
        } else {
            TTestKind::Student
        };
        let expected = two_sample_ttest(&a, &b, kind, 0.05).unwrap();
        assert_eq!(r["t"].as_f64().unwrap(), expected.t);
        assert_eq!(r["p"].as_f64().unwrap(), expected.p);
        assert_eq!(r["n_a"], 5);
    }
}

#[test]
fn phantom_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let m1 = run(&[
        "phantom",
        "--out-dir",
        s(&one),
        "--cases",
        "4",
        "--seed",
        "21",
        "--threads",
        "1",
    ]);
    let m4 = run(&[
        "phantom",
        "--out-dir",
        s(&four),
        "--cases",
        "4",
        "--seed",
        "21",
        "--threads",
        "4",
    ]);
    assert!(m1.status.success() && m4.status.success());
    assert_eq!(m1.stdout, m4.stdout);
    for case in 0..4 {
        for file in [
            "truth.nii.gz",
            "image.nii.gz",
            "rater_0.nii.gz",
            "rater_3.nii.gz",
        ] {
            let rel = format!("case_{case:03}/{file}");
            assert_eq!(
                fs::read(one.join(&rel)).unwrap(),
                fs::read(four.join(&rel)).unwrap(),
                "{rel}"
            );
        }
    }
}

#[test]
fn phantom_with_style_files() {
    let dir = tempfile::tempdir().unwrap();
    let style = dir.path().join("style.json");
    fs::write(
        &style,
        r#"{"dilation_mm": 0.0, "branch_dropout_prob": 0.0, "boundary_flip_prob": 0.0, "seed": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let manifest = ok_json(&[
        "phantom",
        "--out-dir",
        s(&out),
        "--styles",
        s(&style),
        s(&style),
    ]);
    let raters = manifest["cases"][0]["raters"].as_array().unwrap();
    assert_eq!(raters.len(), 2);
    assert_eq!(raters[0]["dsc_vs_truth"], 1.0);

    fs::write(
        &style,
        r#"{"dilation_mm": 0.0, "branch_dropout_prob": 1.0, "boundary_flip_prob": 0.0, "seed": 1}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["phantom", "--out-dir", s(&out), "--styles", s(&style)])
            .status
            .code(),
        Some(2)
    );
}
