//! End-to-end checks of the command-line surface: exit codes, file
//! outputs and the wire formats.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_restrictlab"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn check_conditions_pass_and_fail_codes() {
    let out = bin()
        .args([
            "check-conditions",
            "--surface",
            "paraboloid",
            "--d",
            "2",
            "--box1",
            "-0.5,0:0.4",
            "--box2",
            "0.5,0:0.4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 4);

    // coincident boxes: the gap matrix degenerates and the checks fail
    let out = bin()
        .args([
            "check-conditions",
            "--surface",
            "paraboloid",
            "--d",
            "2",
            "--box1",
            "0,0:0.4",
            "--box2",
            "0,0:0.4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn whitney_csv_shape() {
    let out = bin().args(["whitney", "--levels", "3", "--dim", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "level,side,a0,b0");
    // the first selected pair in dimension 1 appears at level 2
    assert!(lines.next().unwrap().starts_with("2,0.25,"));
}

#[test]
fn demo_complex_reports_null_direction() {
    let out = bin().args(["demo-complex", "--d-matrix", "1,0,0,-1"]).output().unwrap();
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(parsed["condition_value"].as_f64().unwrap() < 1e-9);
    assert_eq!(parsed["report"]["pass"], false);
}

#[test]
fn decompose_extend_and_field_dump() {
    let input = tmp("input.json");
    std::fs::write(
        &input,
        r#"{"box": {"center": [0.0, 0.0], "side": 2.0}, "n": 128, "generator": "random", "seed": 7}"#,
    )
    .unwrap();
    let packets = tmp("packets.jsonl");
    let out = bin()
        .args([
            "decompose",
            "--surface",
            "paraboloid",
            "--d",
            "2",
            "--input",
            input.to_str().unwrap(),
            "--r",
            "16",
            "--out",
            packets.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&packets).unwrap();
    assert!(text.lines().count() > 10);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["c"].as_array().unwrap().len(), 2);

    // feed the packets back through the incidence summary
    let out = bin()
        .args([
            "incidence",
            "--surface",
            "paraboloid",
            "--d",
            "2",
            "--packets",
            packets.to_str().unwrap(),
            "--r",
            "16",
            "--delta",
            "0.05",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["double_counting_exact"], true);

    // small field dump with the documented header layout
    let field = tmp("field.bin");
    let input_small = tmp("input-small.json");
    std::fs::write(
        &input_small,
        r#"{"box": {"center": [0.0, 0.0], "side": 2.0}, "n": 16, "generator": "bump"}"#,
    )
    .unwrap();
    let out = bin()
        .args([
            "extend",
            "--surface",
            "paraboloid",
            "--d",
            "2",
            "--input",
            input_small.to_str().unwrap(),
            "--q",
            "0,0,0:4",
            "--out",
            field.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&field).unwrap();
    assert_eq!(&bytes[0..4], b"RLF1");
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let nt = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    assert_eq!((d, k), (2, 1));
    let mut nx = 1usize;
    for a in 0..d {
        nx *= u32::from_le_bytes(bytes[16 + 4 * a..20 + 4 * a].try_into().unwrap()) as usize;
    }
    let header = 16 + 4 * d + 8 * d + 8 + 8 * (d + k);
    assert_eq!(bytes.len(), header + 16 * nt * nx);
}

#[test]
fn run_exit_codes() {
    let bad = tmp("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let empty = tmp("empty.json");
    std::fs::write(
        &empty,
        r#"{"surface": {"kind": "paraboloid", "d": 2}, "experiments": []}"#,
    )
    .unwrap();
    let out_dir = tmp("empty-out");
    let out = bin()
        .args(["run", empty.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.json").exists());

    // a failing gate exits 3: growth sweep refused on a degenerate pair
    let refused = tmp("refused.json");
    std::fs::write(
        &refused,
        r#"{
            "surface": {"kind": "complex-paraboloid", "n": 2, "D": [1.0, 0.0, 0.0, 1.0]},
            "box1": {"center": [0.0, 0.0, 0.0, 0.0], "side": 0.05},
            "box2": {"center": [0.9, 0.0, 0.0, 0.9], "side": 0.05},
            "experiments": [
                {"name": "refused-growth", "type": "bilinear-growth", "q": 2.0,
                 "data": "random", "r_list": [16, 32, 64, 128]}
            ]
        }"#,
    )
    .unwrap();
    let out_dir = tmp("refused-out");
    let out = bin()
        .args(["run", refused.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert!(report["results"][0]["status"].as_str().unwrap().starts_with("refused"));
}
