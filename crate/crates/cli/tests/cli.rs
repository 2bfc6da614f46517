use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_globustvp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn field(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    row[i].to_string()
}

#[test]
fn synth_solve_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, result) = (p(dir.path(), "scene.json"), p(dir.path(), "result.json"));
    ok(&["synth", "--out", &scene, "--seed", "11"]);
    ok(&["solve", "--in", &scene, "--out", &result, "--seed", "11"]);
    let csv = ok(&["eval", "--scene", &scene, "--result", &result]);
    assert_eq!(field(&csv, "scene_id"), "scene");
    assert_eq!(field(&csv, "method"), "globustvp");
    assert_eq!(field(&csv, "f1"), "1.0");
    assert_eq!(field(&csv, "aa3"), "1.0");
    assert_eq!(field(&csv, "runtime_ms"), "");
}

#[test]
fn ransac_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = p(dir.path(), "scene.json");
    ok(&["synth", "--out", &scene, "--seed", "2"]);
    let json = ok(&["solve", "--in", &scene, "--method", "ransac"]);
    assert!(json.contains("\"method\": \"ransac\""));
}

#[test]
fn malformed_input_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(dir.path(), "bad.json");
    std::fs::write(
        &bad,
        r#"{"intrinsics": {"fx": 800, "fy": 800, "cx": 320, "cy": 240},
            "lines": [{"p1": [1, 1], "p2": [1, 1]}]}"#,
    )
    .unwrap();
    let out = run(&["solve", "--in", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lines[0]"), "{err}");

    let out = run(&["solve", "--in", &p(dir.path(), "missing.json")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn label_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, r) = (p(dir.path(), "a.json"), p(dir.path(), "b.json"), p(dir.path(), "r.json"));
    ok(&["synth", "--out", &a, "--n-lines", "20"]);
    ok(&["synth", "--out", &b, "--n-lines", "30"]);
    ok(&["solve", "--in", &a, "--out", &r]);
    let out = run(&["eval", "--scene", &b, "--result", &r]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels"));
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = p(dir.path(), "scene.json");
    let synth = ["synth", "--seed", "5", "--sigma", "1", "--outlier-ratio", "0.3"];
    let s1 = ok(&synth);
    assert_eq!(s1, ok(&synth));
    std::fs::write(&scene, &s1).unwrap();
    let solve = ["solve", "--in", &scene, "--seed", "9"];
    assert_eq!(ok(&solve), ok(&solve));
    let bench = ["bench", "--trials", "2", "--sweep", "outlier-ratio=0:0.2:0.2", "--n-lines", "30"];
    assert_eq!(ok(&bench), ok(&bench));
}

#[test]
fn timing_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let scene = p(dir.path(), "scene.json");
    ok(&["synth", "--out", &scene, "--n-lines", "20"]);
    assert!(ok(&["solve", "--in", &scene]).contains("\"timing_ms\": null"));
    assert!(!ok(&["solve", "--in", &scene, "--timing"]).contains("\"timing_ms\": null"));
}

#[test]
fn certify_three_lines() {
    let dir = tempfile::tempdir().unwrap();
    let scene = p(dir.path(), "three.json");
    // One segment per image axis direction plus a line through the principal point.
    std::fs::write(
        &scene,
        r#"{"intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240},
            "lines": [
              {"p1": [100, 100], "p2": [300, 100], "gt_label": 0},
              {"p1": [500, 50], "p2": [500, 400], "gt_label": 1},
              {"p1": [320, 240], "p2": [400, 300], "gt_label": 2}
            ]}"#,
    )
    .unwrap();
    let text = ok(&["certify", "--in", &scene]);
    assert!(text.contains("globustvp: skipped"), "{text}");
    let gap: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("full sdp relative gap: "))
        .expect("gap line")
        .parse()
        .unwrap();
    assert!(gap <= 1e-6, "{text}");
    assert!(text.contains("full sdp <= grid + 1e-6: true"), "{text}");
}

#[test]
fn bench_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let plot = p(dir.path(), "plot.csv");
    let csv = ok(&[
        "bench", "--trials", "2", "--n-lines", "24", "--methods", "ransac", "--plot-data", &plot,
    ]);
    assert_eq!(csv.lines().count(), 3);
    let agg = std::fs::read_to_string(&plot).unwrap();
    assert!(agg.starts_with("param,value,method,metric,count,q1,median,q3"));
    assert!(agg.contains(",ransac,f1,2,"), "{agg}");
}

#[test]
fn bad_sweep_and_defaults() {
    let out = run(&["bench", "--sweep", "speed=0:1:0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let help = ok(&["solve", "--help"]);
    for flag in ["--c", "--sample-size", "--rounds", "--method", "--seed"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(help.contains("[default: 0.03]"));
}
