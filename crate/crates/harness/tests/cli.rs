use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

/// Runs the binary; each "{}" in `args` is replaced by the next path.
fn ibcsim(args: &[&str], paths: &[&Path]) -> Output {
    let mut paths = paths.iter();
    let args: Vec<std::ffi::OsString> = args
        .iter()
        .map(|a| if *a == "{}" { paths.next().unwrap().as_os_str().to_owned() } else { (*a).into() })
        .collect();
    Command::new(env!("CARGO_BIN_EXE_ibcsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn record_trace(dir: &Path) -> PathBuf {
    let trace = dir.join("trace.jsonl");
    let out = ibcsim(&["run", "--scenario", "{}", "--seed", "3", "--trace", "{}"], &[&scenario("round_trip.json"), &trace]);
    assert!(out.status.success(), "{}", stdout(&out));
    trace
}

#[test]
fn run_reports_every_check_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let trace = record_trace(dir.path());
    let out = ibcsim(&["verify", "--trace", "{}"], &[&trace]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 8, "{text}");
    assert!(text.lines().all(|l| l.ends_with(": pass")), "{text}");
}

#[test]
fn selected_checks_only() {
    let dir = tempfile::tempdir().unwrap();
    let trace = record_trace(dir.path());
    let out = ibcsim(&["verify", "--trace", "{}", "--checks", "ordering,liveness"], &[&trace]);
    assert_eq!(stdout(&out), "ordering: pass\nliveness: pass\n");
}

#[test]
fn injected_duplicate_receipt_fails_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let trace = record_trace(dir.path());
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let recv = lines.iter().position(|l| l.contains(r#""kind":"recv""#)).expect("trace has a receipt");
    let dup = lines[recv];
    lines.insert(recv + 1, dup);
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();

    let out = ibcsim(&["verify", "--trace", "{}", "--checks", "exactly_once"], &[&tampered]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.starts_with("exactly_once: FAIL"), "{text}");
    assert!(text.contains(&format!("record {}", recv + 1)), "{text}");
}

#[test]
fn truncated_trace_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = record_trace(dir.path());
    let text = std::fs::read_to_string(&trace).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let out = ibcsim(&["verify", "--trace", "{}"], &[&cut]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = ibcsim(&["run", "--scenario", "{}", "--seed", "1"], &[&missing]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"ledgers": [{"id": "a"}, {"id": "a"}]}"#).unwrap();
    let out = ibcsim(&["run", "--scenario", "{}", "--seed", "1"], &[&bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ledgers[1]"));

    let out = ibcsim(&["verify", "--trace", "{}", "--checks", "bogus"], &[&missing]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn step_bound_is_reported() {
    let out = ibcsim(&["run", "--scenario", "{}", "--seed", "1", "--max-steps", "3"], &[&scenario("round_trip.json")]);
    let text = stdout(&out);
    assert!(text.starts_with("steps: 3 (step bound reached)"), "{text}");
}
