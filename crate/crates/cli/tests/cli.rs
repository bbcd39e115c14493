use std::path::Path;
use std::process::{Command, Output};

fn ranloc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranloc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, body: &str) {
    std::fs::write(dir.join("sc.toml"), body).unwrap();
}

fn simulate(dir: &Path, out: &str) -> Output {
    let o = ranloc(&["simulate", "--scenario", "sc.toml", "--out", out], dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn checksums(stdout: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(stdout)
        .lines()
        .filter(|l| l.starts_with("sha256,"))
        .map(|l| l.rsplit(',').next().unwrap().to_owned())
        .collect()
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "seed = 5\nfleet_size = 20\nduration_hours = 4.0\n");
    let a = simulate(tmp.path(), "a");
    let b = simulate(tmp.path(), "b");
    assert_eq!(checksums(&a.stdout).len(), 3);
    assert_eq!(checksums(&a.stdout), checksums(&b.stdout));
    let c = ranloc(&["simulate", "--scenario", "sc.toml", "--out", "c", "--seed", "6"], tmp.path());
    assert_ne!(checksums(&a.stdout), checksums(&c.stdout));
    for f in ["cells.csv", "events.csv", "ground_truth.csv"] {
        assert!(tmp.path().join("a").join(f).is_file());
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ranloc(&["simulate", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());

    scenario(tmp.path(), "fleet_size = 3\nnas_prob = 2.0\n");
    let o = ranloc(&["simulate", "--scenario", "sc.toml", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nas_prob"));

    let o = ranloc(&["detect", "--cells", "nope.csv", "--events", "nope.csv", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(1));

    scenario(tmp.path(), "fleet_size = 3\nduration_hours = 2.0\n");
    simulate(tmp.path(), "d");
    let o = ranloc(
        &["detect", "--cells", "d/cells.csv", "--events", "d/events.csv", "--out", "r", "--queue-m", "0", "--queue-n", "0"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_row_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "fleet_size = 3\nduration_hours = 2.0\n");
    simulate(tmp.path(), "d");
    let events = tmp.path().join("d/events.csv");
    let mut text = std::fs::read_to_string(&events).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let broken = lines[3].replacen(',', ",x", 1).replacen(char::is_numeric, "z", 1);
    text = [lines[..3].join("\n"), broken, lines[4..].join("\n")].join("\n");
    std::fs::write(&events, text).unwrap();
    let o = ranloc(&["detect", "--cells", "d/cells.csv", "--events", "d/events.csv", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn detect_exit_codes_and_redaction() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "seed = 42\nfleet_size = 60\nduration_hours = 12.0\n");
    simulate(tmp.path(), "clean");
    let o = ranloc(&["detect", "--cells", "clean/cells.csv", "--events", "clean/events.csv", "--out", "rc"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(tmp.path().join("rc/findings.jsonl")).unwrap(), "");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("rc/report.json")).unwrap()).unwrap();
    assert_eq!(report["finding_count"], 0);
    assert_eq!(report["settings"]["v_max_kmh"], 160.0);

    scenario(tmp.path(), "seed = 42\nfleet_size = 60\nduration_hours = 12.0\nattack_count = 1\n");
    simulate(tmp.path(), "spoof");
    let truth = std::fs::read_to_string(tmp.path().join("spoof/ground_truth.csv")).unwrap();
    let victim = truth.lines().find(|l| l.ends_with(",spoof")).unwrap().split(',').next().unwrap().to_owned();

    let args = ["detect", "--cells", "spoof/cells.csv", "--events", "spoof/events.csv"];
    let o = ranloc(&[&args[..], &["--out", "rs"]].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), victim);
    let plain = std::fs::read_to_string(tmp.path().join("rs/findings.jsonl")).unwrap();
    assert!(plain.contains("ATK0_"));

    let o = ranloc(&[&args[..], &["--out", "rn", "--no-prefilter"]].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l == victim));

    let o = ranloc(&[&args[..], &["--out", "rr", "--redact"]].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let redacted = std::fs::read_to_string(tmp.path().join("rr/findings.jsonl")).unwrap();
    assert!(!redacted.is_empty());
    let cells = std::fs::read_to_string(tmp.path().join("spoof/cells.csv")).unwrap();
    for line in cells.lines().skip(1) {
        let mut f = line.split(',');
        let id = f.next().unwrap();
        let (lat, lon) = (f.next().unwrap(), f.next().unwrap());
        assert!(!redacted.contains(&format!("\"{id}\"")));
        assert!(!redacted.contains(lat) && !redacted.contains(lon));
    }
    assert!(!redacted.contains("cell_id"));
}

#[test]
fn workers_do_not_change_findings() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "seed = 3\nfleet_size = 80\nduration_hours = 8.0\nattack_count = 3\n");
    simulate(tmp.path(), "d");
    let mut outputs = Vec::new();
    for w in ["1", "4"] {
        let out = format!("r{w}");
        let o = ranloc(
            &["detect", "--cells", "d/cells.csv", "--events", "d/events.csv", "--no-prefilter", "--workers", w, "--out", &out],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(2));
        outputs.push(std::fs::read(tmp.path().join(&out).join("findings.jsonl")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "fleet_size = 5\nduration_hours = 2.0\n");
    simulate(tmp.path(), "d");
    std::fs::write(
        tmp.path().join("det.toml"),
        "v_max_kmh = 200.0\nd_min_km = 40.0\n[[overrides]]\nbetween = [\"rural\", \"rural\"]\nv_max_kmh = 250.0\n",
    )
    .unwrap();
    let o = ranloc(
        &["detect", "--cells", "d/cells.csv", "--events", "d/events.csv", "--out", "r", "--config", "det.toml", "--vmax", "180"],
        tmp.path(),
    );
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"v_max_kmh\":180.0"), "{err}");
    assert!(err.contains("\"d_min_km\":40.0"), "{err}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["settings"]["overrides"][0]["v_max_kmh"], 250.0);
}

#[test]
fn bench_and_report_csv() {
    let tmp = tempfile::tempdir().unwrap();
    scenario(tmp.path(), "fleet_size = 10\nduration_hours = 3.0\nattack_count = 1\n");
    simulate(tmp.path(), "d");
    let o = ranloc(&["bench", "--cells", "d/cells.csv", "--events", "d/events.csv", "--out", "b"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("b/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "events,imsis,i_all,i_nas,i_final,with_prefilter_s,without_prefilter_s,speedup");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 8);
    assert!(fields[5].parse::<f64>().unwrap() >= 0.0 && fields[6].parse::<f64>().unwrap() >= 0.0);
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);

    let o = ranloc(&["bench", "--scenario", "sc.toml", "--out", "b2"], tmp.path());
    assert_eq!(o.status.code(), Some(0));

    std::fs::copy(tmp.path().join("d/events.csv"), tmp.path().join("day2.csv")).unwrap();
    let o = ranloc(
        &["report", "--cells", "d/cells.csv", "--events", "d/events.csv", "--events", "day2.csv", "--out", "s"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let summary = std::fs::read_to_string(tmp.path().join("s/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "day,events,active_imsis,i_nas,i_final,findings,mean_c_out_km");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("events,") && rows[2].starts_with("day2,"));
    assert_eq!(rows[1].split_once(',').unwrap().1, rows[2].split_once(',').unwrap().1);
}
