use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn histoeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histoeval"))
        .args(args)
        .env_remove("HISTOEVAL_JOBS")
        .env_remove("HISTOEVAL_RADIUS")
        .output()
        .expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn synth(root: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out",
        root.to_str().unwrap(),
        "--cases",
        "3",
        "--seed",
        "9",
    ];
    args.extend_from_slice(extra);
    let out = histoeval(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn expected_totals(root: &Path) -> Vec<(u64, u64, u64)> {
    let expected = json(&fs::read(root.join("expected.json")).unwrap());
    let mut totals = vec![(0, 0, 0); 3];
    for case in expected.as_object().unwrap().values() {
        for (i, c) in case["detection"]["per_class"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
        {
            totals[i].0 += c["tp"].as_u64().unwrap();
            totals[i].1 += c["fp"].as_u64().unwrap();
            totals[i].2 += c["fn"].as_u64().unwrap();
        }
    }
    totals
}

#[test]
fn eval_on_synthetic_fixtures_recovers_counts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, &["--drop", "2", "--spurious", "3", "--jitter", "3"]);
    let report = root.join("report.json");
    let gt = root.join("gt");
    let pred = root.join("pred");
    let out = histoeval(&[
        "eval",
        "--track",
        "1",
        "--gt-dir",
        gt.to_str().unwrap(),
        "--pred-dir",
        pred.to_str().unwrap(),
        "--radius",
        "15",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&fs::read(&report).unwrap());
    let totals = expected_totals(root);
    for (i, class) in r["nuclei"]["classes"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
    {
        let c = &class["counts"];
        let got = (
            c["tp"].as_u64().unwrap(),
            c["fp"].as_u64().unwrap(),
            c["fn"].as_u64().unwrap(),
        );
        assert_eq!(got, totals[i]);
    }
    assert_eq!(r["config"]["case_count"], 3);
    assert_eq!(r["tissue"]["macro_dice"]["value"], 1.0);
}

#[test]
fn eval_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, &["--drop", "1", "--spurious", "1", "--erosion", "1"]);
    let gt = root.join("gt");
    let pred = root.join("pred");
    let run = |jobs: &str| {
        histoeval(&[
            "eval",
            "--gt-dir",
            gt.to_str().unwrap(),
            "--pred-dir",
            pred.to_str().unwrap(),
            "--jobs",
            jobs,
        ])
        .stdout
    };
    let a = run("1");
    assert!(!a.is_empty());
    assert_eq!(a, run("1"));
    assert_eq!(a, run("4"));
}

#[test]
fn missing_gt_dir_is_a_usage_error() {
    let out = histoeval(&["eval", "--pred-dir", "."]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gt-dir"));
}

#[test]
fn conflicting_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = histoeval(&[
        "eval",
        "--gt-dir",
        d,
        "--pred-dir",
        d,
        "--extra-class",
        "mitosis",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = histoeval(&[
        "eval-tissue",
        "--gt-dir",
        d,
        "--pred-dir",
        d,
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = histoeval(&["eval", "--gt-dir", d, "--pred-dir", d, "--radius", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_prediction_case_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, &[]);
    fs::remove_file(root.join("pred/nuclei/synth_0001.json")).unwrap();
    let out = histoeval(&[
        "eval-nuclei",
        "--gt-dir",
        root.join("gt").to_str().unwrap(),
        "--pred-dir",
        root.join("pred").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r = json(&out.stdout);
    assert_eq!(r["config"]["failed_cases"], 1);
    assert_eq!(r["config"]["case_count"], 3);
    assert!(r.get("tissue").is_none());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth_0001"));
}

#[test]
fn radius_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_histoeval"))
        .args([
            "eval-nuclei",
            "--gt-dir",
            root.join("gt").to_str().unwrap(),
            "--pred-dir",
            root.join("pred").to_str().unwrap(),
        ])
        .env("HISTOEVAL_RADIUS", "12.5")
        .env("HISTOEVAL_JOBS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&out.stdout)["config"]["radius"], 12.5);
}

#[test]
fn split_produces_requested_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("cases.csv");
    let mut text = String::from("case_id,stratum\n");
    for i in 0..206 {
        let stratum = if i < 103 { "primary" } else { "metastatic" };
        text.push_str(&format!("case_{i:03},{stratum}\n"));
    }
    fs::write(&manifest, text).unwrap();
    let run = || {
        histoeval(&[
            "split",
            "--manifest",
            manifest.to_str().unwrap(),
            "--sizes",
            "154,26,26",
            "--seed",
            "7",
            "--stratified",
        ])
    };
    let out = run();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = json(&out.stdout);
    assert_eq!(s["train"].as_array().unwrap().len(), 154);
    assert_eq!(s["validation"].as_array().unwrap().len(), 26);
    assert_eq!(s["test"].as_array().unwrap().len(), 26);
    assert_eq!(out.stdout, run().stdout);

    let bad = histoeval(&[
        "split",
        "--manifest",
        manifest.to_str().unwrap(),
        "--sizes",
        "150,26,26",
        "--seed",
        "7",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn loss_check_passes_on_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("loss.json");
    fs::write(
        &fixture,
        r#"{"width":2,"height":1,"classes":3,"logits":[0.5,-1.0,2.0,3.0,0.0,-2.5],"labels":[2,0],"mask":[true,true]}"#,
    )
    .unwrap();
    let out = histoeval(&["loss-check", "--input", fixture.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&out.stdout);
    assert_eq!(r["pass"], true);
    assert_eq!(r["annotated_pixels"], 2);

    fs::write(
        &fixture,
        r#"{"width":1,"height":1,"classes":2,"logits":[0.0],"labels":[0],"mask":[true]}"#,
    )
    .unwrap();
    let out = histoeval(&["loss-check", "--input", fixture.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

const SQUARE: &str = r#"{"type":"FeatureCollection","features":[{"type":"Feature","geometry":{"type":"Polygon","coordinates":[[[2,2],[6,2],[6,6],[2,6],[2,2]]]},"properties":{"classification":{"name":"Stroma"}}}]}"#;

#[test]
fn rasterize_writes_a_label_mask() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.json");
    let png = dir.path().join("a.png");
    fs::write(&input, SQUARE).unwrap();
    let out = histoeval(&[
        "rasterize",
        "--input",
        input.to_str().unwrap(),
        "--width",
        "8",
        "--height",
        "8",
        "--out",
        png.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mask = histoeval::mask_io::read_mask(&fs::read(&png).unwrap()).unwrap();
    assert_eq!(mask.count(2), 16);
    assert_eq!(mask.count(0), 48);
}

#[test]
fn map_taxonomy_relabels_to_track1() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("n.json");
    fs::write(
        &input,
        r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,1]},"properties":{"classification":{"name":"plasma"}}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":[5,5]},"properties":{"classification":{"name":"mitosis"}}}]}"#,
    )
    .unwrap();
    let path = input.to_str().unwrap();
    let out = histoeval(&[
        "map-taxonomy",
        "--input",
        path,
        "--width",
        "8",
        "--height",
        "8",
    ]);
    // `mitosis` is not a Track 2 class without --extra-class
    assert_eq!(out.status.code(), Some(2));
    let out = histoeval(&[
        "map-taxonomy",
        "--input",
        path,
        "--width",
        "8",
        "--height",
        "8",
        "--extra-class",
        "mitosis",
        "--extra-maps-to",
        "tumor",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&out.stdout);
    let names: Vec<&str> = r["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["properties"]["classification"]["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["tils", "tumor"]);
}

#[cfg(unix)]
#[test]
fn run_isolates_failing_cases() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth(root, &[]);
    let images = root.join("images");
    fs::create_dir_all(&images).unwrap();
    for id in ["synth_0000", "synth_0001", "synth_0002"] {
        fs::write(images.join(format!("{id}.tif")), b"").unwrap();
    }
    // copy the prediction of each case as model output; case 1 fails
    let template = format!(
        "sh -c 'test \"$3\" = synth_0001 && exit 4; cp {pred}/nuclei/$3.json \"$2/nuclei.json\"' sh {{input_image}} {{output_dir}} {{case_id}}",
        pred = root.join("pred").display()
    );
    let work = root.join("work");
    let gt = root.join("gt");
    let args = [
        "run",
        "--command",
        &template,
        "--images-dir",
        images.to_str().unwrap(),
        "--gt-dir",
        gt.to_str().unwrap(),
        "--work-dir",
        work.to_str().unwrap(),
        "--outputs",
        "nuclei",
        "--max-parallel",
        "2",
        "--timeout",
        "20",
    ];
    let out = histoeval(&args);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("synth_0001: nonzero_exit"), "{stderr}");
    let r = json(&out.stdout);
    assert_eq!(r["config"]["case_count"], 3);
    assert_eq!(r["config"]["failed_cases"], 1);
    assert_eq!(r["nuclei"]["macro_f1"]["value"], 1.0);
    assert_eq!(out.stdout, histoeval(&args).stdout);
}
