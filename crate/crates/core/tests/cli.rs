use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kmmr::io::read_report_json;

fn kmmr(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmmr"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_writes_three_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kmmr(&["generate", "--scenarios", "LS", "--f-star", "abs", "--n", "100"], tmp.path());
    assert_ok(&o);
    let data = tmp.path().join("data");
    for split in ["train", "valid", "test"] {
        let text = fs::read_to_string(data.join(format!("LS_abs_n100_seed527_{split}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,z1,split");
        assert_eq!(lines.len(), 101);
        assert!(lines[1..].iter().all(|l| l.ends_with(split)));
    }
    assert!(data.join("LS_abs_n100_seed527_meta.json").exists());
}

#[test]
fn generate_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["generate", "--scenarios", "LW,NS", "--f-star", "sin", "--n", "50", "--seed", "9"];
    assert_ok(&kmmr(&args, &a));
    assert_ok(&kmmr(&args, &b));
    let mut names: Vec<_> = fs::read_dir(a.join("data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in names {
        assert_eq!(fs::read(a.join("data").join(&name)).unwrap(), fs::read(b.join("data").join(&name)).unwrap());
    }
}

#[test]
fn lw_has_six_instrument_columns() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&kmmr(&["generate", "--scenarios", "LW", "--f-star", "linear", "--n", "20"], tmp.path()));
    let text = fs::read_to_string(tmp.path().join("data/LW_linear_n20_seed527_train.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x,y,z1,z2,z3,z4,z5,z6,split");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "alpha = 0.05\nbandwidth = 3\n").unwrap();
    let o = kmmr(&["experiment", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bandwidth"));

    let o = kmmr(&["select", "--alpha", "1.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = kmmr(&["select", "--candidates", "G-0"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = kmmr(&["select", "--config", "/nonexistent/cfg.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = kmmr(&["select", "--data-dir", tmp.path().to_str().unwrap(), "--stem", "missing"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn select_report_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kmmr(&["select", "--model", "poly:2", "--f-star", "quad", "--n", "200"], tmp.path());
    assert_ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("test mse"));
    let json = fs::read_to_string(tmp.path().join("select_LS_quad_n200_seed527.json")).unwrap();
    let result = read_report_json(&json).unwrap();
    assert_eq!(result.candidates.len(), 10);
    assert_eq!(result.candidates.iter().filter(|r| r.chosen).count(), 1);
    assert_eq!(kmmr::io::to_json_pretty(&result).unwrap(), json);
    let table = fs::read_to_string(tmp.path().join("select_LS_quad_n200_seed527_candidates.csv")).unwrap();
    assert_eq!(table.lines().count(), 11);
}

#[test]
fn select_reads_generated_files() {
    let tmp = tempfile::tempdir().unwrap();
    assert_ok(&kmmr(&["generate", "--f-star", "abs", "--n", "120"], tmp.path()));
    let data = tmp.path().join("data");
    let from_files = kmmr(
        &["select", "--model", "poly:2", "--data-dir", data.to_str().unwrap(), "--stem", "LS_abs_n120_seed527"],
        &tmp.path().join("files"),
    );
    let generated = kmmr(&["select", "--model", "poly:2", "--f-star", "abs", "--n", "120"], &tmp.path().join("gen"));
    assert_ok(&from_files);
    assert_ok(&generated);
    let name = "select_LS_abs_n120_seed527.json";
    assert_eq!(
        fs::read(tmp.path().join("files").join(name)).unwrap(),
        fs::read(tmp.path().join("gen").join(name)).unwrap()
    );
}

#[test]
fn experiment_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kmmr(
        &["experiment", "--model", "poly:1", "--f-star", "linear", "--n", "60", "--replications", "1"],
        tmp.path(),
    );
    assert_ok(&o);
    let agg = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 4);
    let rows = fs::read_to_string(tmp.path().join("rows_n60.csv")).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "scenario,f_star,method,rep,mse,chosen_label,path");
    assert_eq!(rows.lines().count(), 4);
    assert!(tmp.path().join("run.json").exists());
}

#[test]
fn plotdata_is_max_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kmmr(&["plotdata", "--model", "poly:2", "--f-star", "linear", "--n", "100,200"], tmp.path());
    assert_ok(&o);
    let text = fs::read_to_string(tmp.path().join("plot_LS_linear.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 21);
    let normalized: Vec<f64> = rows[..20].iter().map(|r| r[3].parse().unwrap()).collect();
    let max = normalized.iter().cloned().fold(f64::MIN, f64::max);
    assert!((max - 1.0).abs() < 1e-12);
    assert!(normalized.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(&rows[20][1], "threshold");
}
