use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tabclean(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabclean"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn tabclean")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = tabclean(dir, args);
    assert!(
        out.status.success(),
        "tabclean {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthetic FD table plus its schema, with a fixed seed.
fn synth(dir: &Path, rows: usize) {
    ok(
        dir,
        &[
            "synth",
            "--rows",
            &rows.to_string(),
            "--seed",
            "42",
            "--out",
            "clean.csv",
            "--schema-out",
            "schema.json",
        ],
    );
}

fn xorshift(state: &mut u64) -> u64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    *state
}

#[test]
fn profile_reports_one_record_per_attribute() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("id,label\n");
    for i in 0..40 {
        csv.push_str(&format!("{i},w{}\n", i % 3));
    }
    fs::write(dir.path().join("t.csv"), csv).unwrap();
    ok(dir.path(), &["profile", "t.csv", "--out", "p.json"]);
    let p = json(dir.path().join("p.json"));
    let attrs = p["attributes"].as_array().unwrap();
    assert_eq!(attrs.len(), 2);
    assert_eq!(attrs[0]["kind"], "numeric");
    assert_eq!(attrs[1]["kind"], "text");
    assert_eq!(p["manifest"]["command"], "profile");
    assert_eq!(
        p["manifest"]["inputs"][0]["sha256"].as_str().unwrap().len(),
        64
    );
}

#[test]
fn profile_of_empty_file_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = tabclean(dir.path(), &["profile", "empty.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data rows"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(tabclean(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(tabclean(dir.path(), &["learn"]).status.code(), Some(1));
    assert_eq!(tabclean(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn learn_finds_fd_edges_and_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 500);
    let d = dir.path();
    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "learn",
            "clean.csv",
            "--out",
            "m1.json",
            "--dot",
            "s.dot",
        ],
    );
    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "learn",
            "clean.csv",
            "--out",
            "m2.json",
        ],
    );
    let dot = fs::read_to_string(d.join("s.dot")).unwrap();
    assert!(
        dot.contains("\"city\" -> \"zip\"") || dot.contains("\"zip\" -> \"city\""),
        "{dot}"
    );
    assert!(
        dot.contains("\"name\" -> \"provider\"") || dot.contains("\"provider\" -> \"name\""),
        "{dot}"
    );
    assert!(d.join("m2.dot").exists());
    assert_eq!(
        fs::read(d.join("m1.json")).unwrap(),
        fs::read(d.join("m2.json")).unwrap()
    );
    assert_eq!(json(d.join("m1.json"))["manifest"]["command"], "learn");
}

#[test]
fn learn_on_independent_columns_gives_no_edges() {
    let dir = TempDir::new().unwrap();
    let mut s = 0x9e3779b97f4a7c15_u64;
    let mut csv = String::from("a,b,c\n");
    for _ in 0..400 {
        let row: Vec<String> = (0..3)
            .map(|_| format!("v{}", xorshift(&mut s) % 6))
            .collect();
        csv.push_str(&(row.join(",") + "\n"));
    }
    fs::write(dir.path().join("ind.csv"), csv).unwrap();
    ok(dir.path(), &["learn", "ind.csv", "--out", "m.json"]);
    let dot = fs::read_to_string(dir.path().join("m.dot")).unwrap();
    assert!(!dot.contains("->"), "{dot}");
}

fn model_body(path: PathBuf) -> Value {
    let mut v = json(path);
    v.as_object_mut().unwrap().remove("manifest");
    v
}

#[test]
fn edit_scripts_round_trip_fail_with_step_index_and_merge() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), 300);
    let d = dir.path();
    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "learn",
            "clean.csv",
            "--out",
            "m.json",
        ],
    );
    let dot = fs::read_to_string(d.join("m.dot")).unwrap();
    assert!(!dot.contains("\"kind\" -> \"state\""), "{dot}");

    fs::write(
        d.join("rt.json"),
        r#"[{"op": "add_edge", "parent": "kind", "child": "state"},
            {"op": "remove_edge", "parent": "kind", "child": "state"}]"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "edit",
            "m.json",
            "rt.json",
            "clean.csv",
            "--out",
            "rt_out.json",
        ],
    );
    assert_eq!(
        model_body(d.join("m.json")),
        model_body(d.join("rt_out.json"))
    );

    // city -> zip exists, so zip -> city closes a cycle at step 1.
    fs::write(
        d.join("cyc.json"),
        r#"[{"op": "add_edge", "parent": "zip", "child": "state"},
            {"op": "add_edge", "parent": "zip", "child": "city"}]"#,
    )
    .unwrap();
    let out = tabclean(
        d,
        &[
            "--schema",
            "schema.json",
            "edit",
            "m.json",
            "cyc.json",
            "clean.csv",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("edit step 1") && err.contains("cycle"),
        "{err}"
    );

    fs::write(
        d.join("merge.json"),
        r#"[{"op": "merge", "nodes": ["state", "kind"]}]"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "edit",
            "m.json",
            "merge.json",
            "clean.csv",
            "--out",
            "merged.json",
        ],
    );
    let merged = json(d.join("merged.json"));
    let names: Vec<&str> = merged["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"state⊕kind"), "{names:?}");
}

fn write_ucs(dir: &Path) {
    fs::write(
        dir.join("ucs.json"),
        r#"{"zip": {"pattern": "[1-9][0-9]{4}", "allow_null": false},
            "provider": {"pattern": "[1-9][0-9]{4}", "allow_null": false}}"#,
    )
    .unwrap();
}

fn dirty_pipeline(dir: &Path) {
    synth(dir, 400);
    ok(
        dir,
        &[
            "--schema",
            "schema.json",
            "inject",
            "clean.csv",
            "--out",
            "dirty.csv",
            "--mask",
            "mask.json",
            "--typo",
            "0.02",
            "--missing",
            "0.02",
            "--inconsistency",
            "0.02",
            "--seed",
            "7",
        ],
    );
    ok(
        dir,
        &[
            "--schema",
            "schema.json",
            "learn",
            "dirty.csv",
            "--out",
            "m.json",
        ],
    );
    write_ucs(dir);
}

fn clean_args<'a>(out: &'a str, report: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "--schema",
        "schema.json",
        "clean",
        "dirty.csv",
        "--model",
        "m.json",
        "--ucs",
        "ucs.json",
        "--out",
        out,
        "--report",
        report,
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn full_pipeline_partition_and_thread_invariance() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    dirty_pipeline(d);
    ok(d, &clean_args("a.csv", "a.json", &[]));
    ok(d, &clean_args("b.csv", "b.json", &["--no-partition"]));
    ok(d, &clean_args("c.csv", "c.json", &["--threads", "1"]));
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    assert_eq!(a, fs::read(d.join("c.csv")).unwrap());
    assert_eq!(
        fs::read(d.join("a.json")).unwrap(),
        fs::read(d.join("c.json")).unwrap()
    );

    // Report rows are exactly the changed cells.
    let report = json(d.join("a.json"));
    let dirty = fs::read_to_string(d.join("dirty.csv")).unwrap();
    let cleaned = String::from_utf8(a).unwrap();
    let changed: usize = dirty
        .lines()
        .zip(cleaned.lines())
        .map(|(x, y)| {
            x.split(',')
                .zip(y.split(','))
                .filter(|(p, q)| p != q)
                .count()
        })
        .sum();
    assert_eq!(report["repairs"].as_array().unwrap().len(), changed);
    assert_eq!(report["manifest"]["inputs"].as_array().unwrap().len(), 4);

    ok(
        d,
        &[
            "--schema",
            "schema.json",
            "eval",
            "--clean",
            "clean.csv",
            "--dirty",
            "dirty.csv",
            "--cleaned",
            "a.csv",
            "--mask",
            "mask.json",
            "--out",
            "metrics.json",
        ],
    );
    let m = json(d.join("metrics.json"));
    assert!(m["metrics"]["f1"].as_f64().unwrap() > 0.5, "{m}");
}

#[test]
fn corr_cache_is_reused_without_changing_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    dirty_pipeline(d);
    ok(
        d,
        &clean_args("a.csv", "a.json", &["--corr-cache", "corr.bin"]),
    );
    assert!(d.join("corr.bin").exists());
    ok(
        d,
        &clean_args("b.csv", "b.json", &["--corr-cache", "corr.bin"]),
    );
    ok(d, &clean_args("c.csv", "c.json", &[]));
    assert_eq!(
        fs::read(d.join("a.csv")).unwrap(),
        fs::read(d.join("b.csv")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("a.csv")).unwrap(),
        fs::read(d.join("c.csv")).unwrap()
    );
}

#[test]
fn unsatisfiable_constraints_are_skipped_with_warning_exit() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut csv = String::from("a,b\n");
    for i in 0..30 {
        csv.push_str(&format!("x{},y{}\n", i % 3, i % 3));
    }
    fs::write(d.join("t.csv"), csv).unwrap();
    fs::write(d.join("ucs.json"), r#"{"a": {"pattern": "[0-9]+"}}"#).unwrap();
    ok(d, &["learn", "t.csv", "--out", "m.json"]);
    let out = tabclean(
        d,
        &[
            "clean", "t.csv", "--model", "m.json", "--ucs", "ucs.json", "--out", "o.csv",
            "--report", "r.json",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(d.join("r.json"));
    assert_eq!(r["skipped_cells"], 30);
    assert!(!r["warnings"].as_array().unwrap().is_empty());
    assert_eq!(
        fs::read_to_string(d.join("o.csv")).unwrap(),
        fs::read_to_string(d.join("t.csv")).unwrap()
    );
}

#[test]
fn out_of_range_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    dirty_pipeline(d);
    let out = tabclean(d, &clean_args("a.csv", "a.json", &["--tau-clean", "1.5"]));
    assert_eq!(out.status.code(), Some(1));
    let out = tabclean(d, &clean_args("a.csv", "a.json", &["--top-k", "0"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inject_rate_zero_and_seed_reuse() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d, 200);
    ok(
        d,
        &["inject", "clean.csv", "--out", "z.csv", "--mask", "z.json"],
    );
    assert_eq!(json(d.join("z.json")).as_array().unwrap().len(), 0);
    assert_eq!(
        fs::read(d.join("z.csv")).unwrap(),
        fs::read(d.join("clean.csv")).unwrap()
    );

    for name in ["m1", "m2"] {
        ok(
            d,
            &[
                "inject",
                "clean.csv",
                "--out",
                &format!("{name}.csv"),
                "--mask",
                &format!("{name}.json"),
                "--typo",
                "0.05",
                "--swap",
                "0.02",
                "--seed",
                "3",
            ],
        );
    }
    assert_eq!(
        fs::read(d.join("m1.json")).unwrap(),
        fs::read(d.join("m2.json")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("m1.csv")).unwrap(),
        fs::read(d.join("m2.csv")).unwrap()
    );
    let sidecar = json(d.join("m1.json.manifest.json"));
    assert_eq!(sidecar["manifest"]["params"]["seed"], 3);
}

#[test]
fn eval_matches_hand_counted_fixture() {
    // 10 errors; 8 modified cells of which 6 restore the clean value.
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (mut clean, mut dirty, mut cleaned) = (
        String::from("v\n"),
        String::from("v\n"),
        String::from("v\n"),
    );
    for i in 0..20 {
        let c = format!("c{i}");
        let e = if i < 10 { format!("e{i}") } else { c.clone() };
        let r = match i {
            0..=5 => c.clone(),
            6 | 7 => "wrong".to_string(),
            _ => e.clone(),
        };
        clean.push_str(&(c + "\n"));
        dirty.push_str(&(e + "\n"));
        cleaned.push_str(&(r + "\n"));
    }
    fs::write(d.join("clean.csv"), clean).unwrap();
    fs::write(d.join("dirty.csv"), dirty).unwrap();
    fs::write(d.join("cleaned.csv"), cleaned).unwrap();
    let out = ok(
        d,
        &[
            "eval",
            "--clean",
            "clean.csv",
            "--dirty",
            "dirty.csv",
            "--cleaned",
            "cleaned.csv",
            "--out",
            "m.json",
        ],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("0.7500") && text.contains("0.6000") && text.contains("0.6667"),
        "{text}"
    );
    let m = &json(d.join("m.json"))["metrics"];
    assert_eq!(m["modified"], 8);
    assert_eq!(m["correct"], 6);
    assert_eq!(m["errors"], 10);
}
