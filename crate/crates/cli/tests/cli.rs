use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sinkbary_cli::{EXIT_CONVERGENCE, EXIT_INPUT, EXIT_OUTPUT};

fn sinkbary(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinkbary"))
        .current_dir(dir)
        .args(args)
        .env_remove("SINKBARY_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("left.json"), r#"{"dim": 2, "points": [[0, 0]]}"#).unwrap();
    fs::write(p.join("right.csv"), "x1,x2,w\n1,0,1\n").unwrap();
    fs::write(
        p.join("spread.json"),
        r#"{"dim": 2, "points": [[0, 0], [0.3, 0.4], [0.9, 0.1]], "weights": [0.2, 0.5, 0.3]}"#,
    )
    .unwrap();
    dir
}

#[test]
fn barycenter_of_two_diracs_writes_all_outputs() {
    let dir = setup();
    let o = sinkbary(dir.path(), &["barycenter", "left.json", "right.csv", "--iters", "50", "--out-dir", "o"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("o");
    let summary = json(&out.join("summary.json"));
    let mean = summary["mean"].as_array().unwrap();
    assert!((mean[0].as_f64().unwrap() - 0.5).abs() < 0.1);
    assert_eq!(summary["iterations"], 50);
    assert_eq!(summary["seed"], 20_190_101);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "k,objective,gap,x1,x2,sinkhorn_iters_total");
    assert_eq!(lines.len(), 52);
    let result = json(&out.join("barycenter.json"));
    assert_eq!(result["dim"], 2);
}

#[test]
fn weights_and_seed_are_routed() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_sinkbary"))
        .current_dir(dir.path())
        .args(["barycenter", "left.json", "right.csv", "--weights", "0.8,0.2", "--iters", "30", "--out-dir", "o"])
        .env("SINKBARY_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let summary = json(&dir.path().join("o/summary.json"));
    assert_eq!(summary["seed"], 99);
    assert_eq!(summary["weights"], serde_json::json!([0.8, 0.2]));
    let mean = summary["mean"][0].as_f64().unwrap();
    assert!((mean - 0.2).abs() < 0.1, "mean {mean}");
}

#[test]
fn grid_file_restricts_selected_points() {
    let dir = setup();
    fs::write(dir.path().join("grid.csv"), "x1,x2\n0,0\n0.25,0\n0.5,0\n0.75,0\n1,0\n").unwrap();
    let o = sinkbary(
        dir.path(),
        &["barycenter", "left.json", "right.csv", "--minimize", "grid", "--grid-file", "grid.csv", "--iters", "10", "--out-dir", "o"],
    );
    assert_eq!(code(&o), 0);
    let trace = fs::read_to_string(dir.path().join("o/trace.csv")).unwrap();
    for line in trace.lines().skip(1).take(10) {
        let f: Vec<&str> = line.split(',').collect();
        let x: f64 = f[3].parse().unwrap();
        assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&x));
        assert_eq!(f[4], "0");
    }
    let o = sinkbary(dir.path(), &["barycenter", "left.json", "right.csv", "--grid-file", "grid.csv"]);
    assert_eq!(code(&o), i32::from(EXIT_INPUT));
}

#[test]
fn input_errors_exit_with_input_code() {
    let dir = setup();
    for args in [
        vec!["barycenter", "missing.json"],
        vec!["barycenter", "left.json", "--epsilon", "0"],
        vec!["barycenter", "left.json", "--iters", "0"],
        vec!["barycenter", "left.json", "--no-such-flag"],
        vec!["kmeans", "left.json", "right.csv", "--k", "3"],
        vec!["render", "left.json", "--rows", "0"],
    ] {
        let o = sinkbary(dir.path(), &args);
        assert_eq!(code(&o), i32::from(EXIT_INPUT), "{args:?}");
    }
}

#[test]
fn disconnected_graph_is_rejected() {
    let dir = setup();
    fs::write(
        dir.path().join("g.json"),
        r#"{"vertices": 3, "edges": [[0, 1, 1.0]], "known": {"0": "left.json"}, "unknown": [1, 2]}"#,
    )
    .unwrap();
    let o = sinkbary(dir.path(), &["propagate", "g.json"]);
    assert_eq!(code(&o), i32::from(EXIT_INPUT));
}

#[test]
fn sinkhorn_budget_exhaustion_keeps_partial_outputs() {
    let dir = setup();
    let o = sinkbary(
        dir.path(),
        &["compress", "spread.json", "--iters", "5", "--epsilon", "0.01", "--max-sink-iters", "1", "--out-dir", "o"],
    );
    assert_eq!(code(&o), i32::from(EXIT_CONVERGENCE));
    let summary = json(&dir.path().join("o/summary.json"));
    assert!(summary["nonconverged_solves"].as_u64().unwrap() > 0);
    assert!(dir.path().join("o/compressed.json").exists());
}

#[test]
fn unwritable_output_exits_with_output_code() {
    let dir = setup();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = sinkbary(dir.path(), &["render", "left.json", "--out-dir", "blocker/sub"]);
    assert_eq!(code(&o), i32::from(EXIT_OUTPUT));
}

#[test]
fn render_places_mass_in_pixels() {
    let dir = setup();
    fs::write(
        dir.path().join("two.json"),
        r#"{"dim": 2, "points": [[0.1, 0.1], [0.6, 0.9]], "weights": [0.25, 0.75]}"#,
    )
    .unwrap();
    let o = sinkbary(dir.path(), &["render", "two.json", "--rows", "4", "--cols", "4", "--out-dir", "o", "--output", "r.pgm"]);
    assert_eq!(code(&o), 0);
    let bytes = fs::read(dir.path().join("o/r.pgm")).unwrap();
    let header = b"P5\n4 4\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let px = &bytes[header.len()..];
    assert_eq!(px.len(), 16);
    // x selects the column, y the row; extent 1/4
    assert_eq!(px[0], 85);
    assert_eq!(px[3 * 4 + 2], 255);
    assert_eq!(px.iter().filter(|&&v| v > 0).count(), 2);
}

#[test]
fn image_round_trips_through_compress_and_render() {
    let dir = setup();
    let mut img = b"P5\n4 4\n255\n".to_vec();
    let pixels = [0u8, 0, 0, 0, 0, 200, 0, 0, 0, 0, 0, 100, 0, 0, 0, 0];
    img.extend_from_slice(&pixels);
    fs::write(dir.path().join("img.pgm"), img).unwrap();
    let o = sinkbary(
        dir.path(),
        &["compress", "img.pgm", "--minimize", "grid", "--iters", "20", "--epsilon", "0.05", "--out-dir", "o"],
    );
    assert_eq!(code(&o), 0);
    let o = sinkbary(dir.path(), &["render", "o/compressed.json", "--rows", "4", "--cols", "4", "--out-dir", "o"]);
    assert_eq!(code(&o), 0);
    let bytes = fs::read(dir.path().join("o/render.pgm")).unwrap();
    let px = &bytes[bytes.len() - 16..];
    let lit: Vec<usize> = (0..16).filter(|&i| px[i] > 0).collect();
    assert_eq!(lit, vec![5, 11]);
    assert_eq!(px[5], 255);
}

#[test]
fn bench_suite_selection() {
    let dir = setup();
    let o = sinkbary(dir.path(), &["bench", "--suite", "lipschitz-tv", "--quick", "--out-dir", "o"]);
    assert_eq!(code(&o), 0);
    let mut names: Vec<String> = fs::read_dir(dir.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["lipschitz-tv.csv", "lipschitz-tv.json"]);
    let report = json(&dir.path().join("o/lipschitz-tv.json"));
    assert_eq!(report["pass"], true);
}

fn render_pixels(dir: &Path, measure: &str, size: &str) -> Vec<u8> {
    fs::write(dir.join("m.json"), measure).unwrap();
    let o = sinkbary(dir, &["render", "m.json", "--rows", size, "--cols", size, "--out-dir", "r"]);
    assert_eq!(code(&o), 0);
    let bytes = fs::read(dir.join("r/render.pgm")).unwrap();
    let n: usize = size.parse().unwrap();
    bytes[bytes.len() - n * n..].to_vec()
}

#[test]
fn render_center_dirac_on_three_by_three() {
    let dir = setup();
    let px = render_pixels(dir.path(), r#"{"dim": 2, "points": [[0.5, 0.5]]}"#, "3");
    assert_eq!(px, vec![0, 0, 0, 0, 255, 0, 0, 0, 0]);
}

#[test]
fn render_uniform_pair_gives_equal_pixels() {
    let dir = setup();
    let px = render_pixels(dir.path(), r#"{"dim": 2, "points": [[0.1, 0.1], [0.9, 0.6]]}"#, "4");
    let lit: Vec<u8> = px.iter().copied().filter(|&v| v > 0).collect();
    assert_eq!(lit, vec![255, 255]);
}
