use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shapprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapprune")).current_dir(dir).args(args).output().unwrap()
}

fn tree(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        }
        out.push(path.to_string_lossy().into_owned());
    }
    out.sort();
    out
}

#[test]
fn help_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(shapprune(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(shapprune(tmp.path(), &["toy", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(shapprune(tmp.path(), &["attribute", "--metric", "sv"]).status.code(), Some(1));
    assert_eq!(
        shapprune(tmp.path(), &["attribute", "--model", "missing.atpr", "--metric", "bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(
        shapprune(tmp.path(), &["prune", "--model", "missing.atpr", "--ranking", "median"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_or_corrupt_inputs_exit_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shapprune(tmp.path(), &["randinit", "--data", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    fs::write(tmp.path().join("bad.atpr"), b"ATPR\x01\x00\x00\x00garbage").unwrap();
    let out = shapprune(tmp.path(), &["sv-dist", "--model", "bad.atpr", "--data", "."]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_writes_only_into_out_and_prints_one_summary_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shapprune(tmp.path(), &["toy", "--attrib-samples", "500", "--exact", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("command=toy "));
    assert!(stdout.split_whitespace().all(|kv| kv.contains('=')));
    let root = tmp.path().to_string_lossy().into_owned();
    assert_eq!(tree(tmp.path()), [format!("{root}/o"), format!("{root}/o/toy.csv")]);
}
