// End-to-end checks of the `ura` binary.

use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--b", "32", "--bp", "8", "--bc", "24", "--lp", "32", "--l", "200", "--m", "4", "--ka", "3", "--seed", "11",
];

fn ura(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ura")).args(args).output().expect("spawn ura")
}

fn with_small<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

#[test]
fn invalid_config_exits_with_2() {
    let out = ura(&with_small(&["run", "--trials", "1"], &["--m", "0"]));
    assert_eq!(out.status.code(), Some(2));
    let out = ura(&with_small(&["run", "--trials", "1"], &["--ebn0_db", "loud"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_sweep_point_exits_with_2_and_keeps_other_rows() {
    let out = ura(&with_small(&["sweep", "--trials", "1", "--axis", "L", "--values", "20,200"], &[]));
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("L,20,,"));
    assert!(lines[2].starts_with("L,200,1,"));
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let path = dir.path().join(format!("t{threads}.csv"));
        let p = path.to_str().unwrap();
        let args = with_small(
            &["sweep", "--trials", "6", "--axis", "ebn0_db", "--values", "4,10", "--threads", threads, "--out", p],
            &[],
        );
        assert!(ura(&args).status.success());
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(outputs[0].starts_with(b"axis,value,trials,"));
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    std::fs::write(&path, "b = 32\nbp = 8\nbc = 24\nlp = 32\nl = 200\nm = 4\nka = 3\nseed = 11\n").unwrap();
    let a = ura(&["run", "--trials", "2", "--config", path.to_str().unwrap(), "--ebn0_db", "8"]);
    let b = ura(&with_small(&["run", "--trials", "2"], &["--ebn0_db", "8"]));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn collision_analytics_table() {
    let out = ura(&["collision-analytics", "--ka", "8", "--bp", "4", "--b0", "2", "--rounds", "3", "--mc-trials", "200"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("round,analytic_collided,bound"));
}

#[test]
fn ldpc_gen_writes_alist() {
    let out = ura(&with_small(&["ldpc-gen"], &[]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut first = text.lines().next().unwrap().split_whitespace();
    assert_eq!(first.next(), Some("48"));
    assert_eq!(first.next(), Some("24"));
}

#[test]
fn codebook_gen_is_deterministic() {
    let a = ura(&with_small(&["codebook-gen"], &[]));
    let b = ura(&with_small(&["codebook-gen"], &[]));
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}
