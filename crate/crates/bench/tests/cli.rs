//! End-to-end checks of the CLI's argument handling and exit codes.

use std::path::Path;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bimanual-bench"))
}

fn shelf() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes/shelf.toml")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn help_exits_zero() {
    let out = bench().arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("suite"));
}

#[test]
fn missing_scene_exits_two() {
    let out = bench()
        .args(["sample-config", "--scene", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_method_exits_two() {
    let out = bench()
        .args(["run", "--scene", &shelf(), "--method", "warp-drive", "--query", "move_a"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp-drive"));
}

#[test]
fn unknown_query_exits_two() {
    let out = bench()
        .args(["run", "--scene", &shelf(), "--method", "ik-birrt", "--query", "move_z"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_config_is_deterministic_scene_syntax() {
    let run = || {
        bench()
            .args(["sample-config", "--scene", &shelf(), "--seed", "5"])
            .output()
            .unwrap()
    };
    let a = run();
    let b = run();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.starts_with("{ theta_l = ["), "got: {text}");
    assert!(text.contains("psi_r ="), "got: {text}");
}
