use std::path::Path;
use std::process::{Command, Output};

fn diagd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diagd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tester_present_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["req", "--hex", "3E00"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("response 7e00  TesterPresent ok"), "{}", stdout(&o));
}

#[test]
fn negative_response_exits_one_with_decode() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["req", "--hex", "2701"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("7f277f"), "{out}");
    assert!(out.contains("serviceNotSupportedInActiveSession"), "{out}");
}

#[test]
fn session_flag_enters_first() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["req", "--session", "0x03", "--hex", "2701"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("response 6701"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(diagd(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(diagd(&["req"], dir.path()).status.code(), Some(2));
    assert_eq!(diagd(&["req", "--hex", "zz"], dir.path()).status.code(), Some(2));
    assert_eq!(diagd(&["--ecu", "missing.json", "req", "--hex", "3e00"], dir.path()).status.code(), Some(2));
    assert_eq!(diagd(&["record", "--trigger", "sometimes", "--out", "x.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(diagd(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn unlock_and_dtc_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["unlock", "--level", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("unlocked"));

    let o = diagd(&["unlock", "--level", "1", "--key-fn", "xor5a"], dir.path());
    assert_eq!(o.status.code(), Some(1), "wrong key function must fail");

    let o = diagd(&["dtc", "read", "--mask", "0x08"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("P0123-45") && out.contains("U0100-00") && !out.contains("C0100-11"), "{out}");

    let o = diagd(&["dtc", "clear", "--group", "123456"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("requestOutOfRange"));
}

#[test]
fn gateway_mode_hides_vehicle_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let open = stdout(&diagd(&["sim", "--duration", "200"], dir.path()));
    let gated = stdout(&diagd(&["--gateway", "sim", "--duration", "200"], dir.path()));
    assert!(open.contains(" other "));
    assert!(!gated.contains(" other "), "{gated}");
    assert!(gated.contains("0 frames on the OBD2 port"));
}

#[test]
fn poll_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("list.json"), r#"[{"did":"0x0D00","period_ms":100}]"#).unwrap();
    let o = diagd(&["poll", "--list", "list.json", "--duration", "1000", "--out", "s.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("s.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|row| &row[1] == "0d00" && &row[5] == "km/h"));
    assert_eq!(&rows[0][4], "60");
}

#[test]
fn record_keeps_trigger_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(
        &[
            "record", "--trigger", "nrc=0x24", "--pre", "50", "--post", "50", "--out", "w.csv", "--send", "1003",
            "--send", "2702aabbccdd", "--gap", "300", "--duration", "1000",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("w.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let t: Vec<u64> = rows.iter().map(|row| row[0].parse().unwrap()).collect();
    let fire = rows.iter().position(|row| row[6].starts_with("037f2724")).expect("trigger frame kept");
    let t0 = t[fire];
    assert!(t.iter().all(|&x| x + 50_000_000 >= t0 && x <= t0 + 50_000_000));
    assert!(rows.iter().any(|row| row[6].starts_with("062702aabbccdd")));
}

#[test]
fn record_without_match_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["record", "--trigger", "sid=0x31", "--out", "w.csv", "--duration", "100"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("w.csv").exists());
}

#[test]
fn fuzz_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = diagd(&["fuzz", "--out", "report.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("total 2298 / 2298 passed"));
    let text = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2298);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["pass"], true);
}
