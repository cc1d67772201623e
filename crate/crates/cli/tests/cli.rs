use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lmsgain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmsgain"))
        .args(args)
        .current_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../.."))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_field(line: &str, idx: usize) -> String {
    // Quoted model labels contain commas; split after the closing quote.
    let rest = match line.strip_prefix('"') {
        Some(r) => &r[r.find('"').unwrap() + 2..],
        None => &line[line.find(',').unwrap() + 1..],
    };
    rest.split(',').nth(idx - 1).unwrap().to_string()
}

#[test]
fn supgain_table_for_example() {
    let o = lmsgain(&["supgain", "--example", "1A"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for (name, value) in [("theorem1", "0.5000"), ("corollary2", "0.5000"), ("widrow_lambda_max", "2.0000"), ("widrow_trace", "1.0000"), ("zhu_criterion", "2.0000")] {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        assert!(line.contains(value), "{line}");
    }
}

#[test]
fn supgain_csv_for_gaussian_flags() {
    let o = lmsgain(&["supgain", "--sigma1", "1", "--sigma2", "2", "--rho", "0", "--format", "csv", "--criteria", "corollary2,widrow_trace"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("model,criterion,sup_a,"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    let cor: f64 = csv_field(rows[0], 2).parse().unwrap();
    assert!((cor - 8.0 / 52.0).abs() < 1e-6);
    assert_eq!(csv_field(rows[1], 2), "0.4");
}

#[test]
fn explicit_moments_skip_theorem_by_default() {
    let o = lmsgain(&["supgain", "--model", "explicit", "--moments-file", "fixtures/example2_moments.txt"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("corollary2") && l.contains("0.0716")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("theorem1") && l.contains("skipped")), "{text}");
}

#[test]
fn configuration_errors_exit_with_code_2() {
    for args in [
        vec!["supgain", "--example", "9"],
        vec!["supgain", "--example", "1A", "--sigma1", "1"],
        vec!["supgain", "--model", "explicit", "--moments-file", "fixtures/example2_moments.txt", "--criteria", "theorem1"],
        vec!["supgain", "--example", "1A", "--criteria", "nonsense"],
        vec!["simulate", "--example", "1A", "--gain", "-1"],
        vec!["supgain", "--sigma1", "1", "--sigma2", "1", "--rho", "1.5"],
    ] {
        let o = lmsgain(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).lines().any(|l| l.starts_with("error:")));
    }
}

#[test]
fn errorbound_reports_infinity_for_singular_design() {
    let o = lmsgain(&["errorbound", "--example", "1D", "--format", "jsonl"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("\"bound_corollary2\"")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["infinite"], true);
    assert!(v["value"].is_null());
    let t1 = text.lines().find(|l| l.contains("\"bound_theorem1\"")).unwrap();
    let v: serde_json::Value = serde_json::from_str(t1).unwrap();
    assert_eq!(v["tolerance_limited"], true);
    assert!(v["value"].as_f64().unwrap().is_finite());

    let o = lmsgain(&["errorbound", "--example", "1D"]);
    assert!(stdout(&o).contains("Inf"));
}

#[test]
fn report_writes_fixed_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lmsgain(&["report", "--no-simulate", "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let head = |name: &str| fs::read_to_string(dir.path().join(name)).unwrap();
    assert!(head("table3.csv").starts_with("criterion,1A,1B,1C,1D,2\n"));
    assert!(head("table3_cells.csv").starts_with("example,criterion,sup_a,tolerance_limited,inapplicable,sim_gain,terminal_mse,classification,note,error\n"));
    assert!(head("table4.csv").starts_with("quantity,1A,1B,1C,1D\n"));
    assert!(head("table4_cells.csv").starts_with("example,quantity,value,tolerance_limited,note,error\n"));
    let t4 = head("table4.csv");
    let small = t4.lines().find(|l| l.starts_with("bound_small_gain,")).unwrap();
    assert!(small.ends_with(",Inf"), "{small}");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[model]\nexample = \"1B\"\n\n[protocol]\ncriteria = [\"corollary2\"]\n\n[output]\nformat = \"csv\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = lmsgain(&["supgain", "--config", cfg]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("1B,corollary2,0.1538"), "{text}");

    let o = lmsgain(&["supgain", "--config", cfg, "--example", "1A", "--format", "table"]);
    let text = stdout(&o);
    assert!(text.contains("model: 1A"), "{text}");
    assert!(!text.contains("widrow"));

    fs::write(dir.path().join("bad.toml"), "[model]\nsigma3 = 1.0\n").unwrap();
    let o = lmsgain(&["supgain", "--config", dir.path().join("bad.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_one_record_per_replication() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("reps.jsonl");
    let o = lmsgain(&[
        "simulate", "--example", "1B", "--criterion", "corollary2", "--reps", "12", "--iters", "200",
        "--records", records.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("0.1537"));
    let lines: Vec<String> = fs::read_to_string(&records).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 12);
    for (r, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["replication"], r);
        assert_eq!(v["classification"], "bounded");
    }
    let again = lmsgain(&["simulate", "--example", "1B", "--criterion", "corollary2", "--reps", "12", "--iters", "200"]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn ingest_check_parses_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("data.prn");
    fs::write(&good, "1 2 3\n4 5 6.5\n7 8 9\n").unwrap();
    let canonical = dir.path().join("data.csv");
    let o = lmsgain(&[
        "ingest-check", "--data", good.to_str().unwrap(), "--recipe", "constant(1), column(0)", "--response-col", "2",
        "--canonical", canonical.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("design dim       2"));
    assert_eq!(fs::read_to_string(&canonical).unwrap().lines().nth(1).unwrap(), "4,5,6.5");

    let bad = dir.path().join("ragged.prn");
    fs::write(&bad, "1 2\n3\n").unwrap();
    let o = lmsgain(&["ingest-check", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}
