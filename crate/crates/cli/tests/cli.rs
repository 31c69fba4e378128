use std::path::Path;
use std::process::{Command, Output};

use mdep_core::rng::stream_rng;
use mdep_core::simlab::{dgp_generate, metrics, DgpId, DgpSpec};
use tempfile::TempDir;

fn mdep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
}

fn noiseless_rows(n: usize) -> Vec<Vec<String>> {
    (0..n)
        .map(|i| {
            let a = ((i * 37) % 101) as f64 / 25.0 - 2.0;
            let b = ((i * 53 + 11) % 97) as f64 / 24.0 - 2.0;
            vec![(0.4 + a - b).to_string(), a.to_string(), b.to_string()]
        })
        .collect()
}

/// `term,estimator -> (estimate, se_asymptotic, se_bootstrap)` from a CSV report.
fn fit_records(text: &str) -> Vec<(String, String, f64, Option<f64>, Option<f64>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let num = |k: usize| rec.get(k).filter(|s| !s.is_empty()).map(|s| s.parse::<f64>().unwrap());
            (
                rec[0].to_string(),
                rec[1].to_string(),
                num(2).unwrap(),
                num(3),
                num(4),
            )
        })
        .collect()
}

#[test]
fn noiseless_fit_recovers_coefficients() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("noiseless.csv");
    write_csv(&path, &["y", "a", "b"], &noiseless_rows(60));
    let o = mdep(&[
        "fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "a,b",
        "--boot", "30", "--format", "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let recs = fit_records(&stdout(&o));
    let mdep: Vec<_> = recs.iter().filter(|r| r.1 == "MDep").collect();
    assert_eq!(mdep.len(), 3);
    assert!((mdep[0].2 - 0.4).abs() < 1e-6);
    assert!((mdep[1].2 - 1.0).abs() < 1e-6);
    assert!((mdep[2].2 + 1.0).abs() < 1e-6);
    for r in &mdep[1..] {
        assert!(r.4.unwrap() < 1e-6, "bootstrap SE {:?}", r.4);
    }
}

#[test]
fn malformed_cell_reports_its_row() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    let mut rows = noiseless_rows(20);
    rows[6][1] = "abc".into();
    write_csv(&path, &["y", "a", "b"], &rows);
    let o = mdep(&["fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "a,b"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("row 7"), "{msg}");
    assert!(msg.contains("`a`"), "{msg}");
}

#[test]
fn missing_value_and_missing_column_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("gap.csv");
    let mut rows = noiseless_rows(20);
    rows[3][2] = String::new();
    write_csv(&path, &["y", "a", "b"], &rows);
    let o = mdep(&["fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "a,b"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing value"));
    assert!(stderr(&o).contains("row 4"));

    write_csv(&path, &["y", "a", "b"], &noiseless_rows(20));
    let o = mdep(&["fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "a,c"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`c` not found"));
}

#[test]
fn identification_order_error_is_surfaced() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("order.csv");
    write_csv(&path, &["y", "a", "b"], &noiseless_rows(20));
    let o = mdep(&[
        "fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "a,b",
        "--instruments", "a",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("identification order condition fails"), "{}", stderr(&o));
}

#[test]
fn outcome_cannot_double_as_covariate() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("roles.csv");
    write_csv(&path, &["y", "a", "b"], &noiseless_rows(20));
    let o = mdep(&["fit", "--input", path.to_str().unwrap(), "--outcome", "a", "--covariates", "a,b"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulated_iv_sample_both_estimators_near_truth() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("lin_ii.csv");
    let spec = DgpSpec::new(DgpId::LinII, 500).unwrap();
    let draw = dgp_generate(&spec, &mut stream_rng(2024, 0)).unwrap();
    let d = &draw.data;
    // instruments: x1 (exogenous) and the excluded one
    assert_eq!(d.x().column(0), d.z().column(0));
    let rows: Vec<Vec<String>> = (0..d.n())
        .map(|i| {
            vec![
                d.y()[i].to_string(),
                d.x()[(i, 0)].to_string(),
                d.x()[(i, 1)].to_string(),
                d.z()[(i, 1)].to_string(),
            ]
        })
        .collect();
    write_csv(&path, &["y", "x1", "x2", "w"], &rows);
    let o = mdep(&[
        "fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--covariates", "x1,x2",
        "--instruments", "x1,w", "--format", "csv", "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let recs = fit_records(&stdout(&o));
    for est in ["MDep", "2SLS"] {
        for (term, truth) in [("x1", 1.0), ("x2", -1.0)] {
            let r = recs.iter().find(|r| r.0 == term && r.1 == est).unwrap();
            let se = r.3.unwrap();
            assert!((r.2 - truth).abs() < 3.0 * se, "{est} {term}: {} (se {se})", r.2);
        }
    }
}

#[test]
fn simulate_is_byte_identical_across_runs_and_workers() {
    let args = ["simulate", "--spec", "lin-i", "--n", "100", "--reps", "50", "--seed", "1"];
    let a = mdep(&args);
    let b = mdep(&args);
    let mut with_workers = args.to_vec();
    with_workers.extend(["--workers", "3"]);
    let c = mdep(&with_workers);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let text = stdout(&a);
    assert!(text.contains("# seed: 1"));
    assert!(text.contains("# reps: 50"));
    assert!(text.contains(concat!("# mdep ", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn coverage_is_byte_identical_across_workers() {
    let args = ["coverage", "--spec", "cov-i", "--n", "40", "--reps", "6", "--boot", "20", "--seed", "3"];
    let a = mdep(&args);
    let mut more = args.to_vec();
    more.extend(["--workers", "2"]);
    let b = mdep(&more);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn huge_cells_are_masked() {
    let o = mdep(&[
        "simulate", "--spec", "lin2-iii", "--n", "50", "--reps", "20", "--seed", "4", "--estimators", "ols",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("OLS")).unwrap();
    assert!(row.split_whitespace().any(|c| c == "-"), "{row}");

    let o = mdep(&[
        "simulate", "--spec", "lin2-iii", "--n", "50", "--reps", "20", "--seed", "4", "--estimators", "ols",
        "--format", "csv",
    ]);
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(o.stdout.as_slice());
    let rmse: Vec<f64> = r.records().map(|rec| rec.unwrap()[4].parse().unwrap()).collect();
    assert!(rmse.iter().any(|v| 100.0 * v > 500.0));
}

#[test]
fn per_rep_csv_reproduces_the_table() {
    let dir = TempDir::new().unwrap();
    let per_rep = dir.path().join("reps.csv");
    let o = mdep(&[
        "simulate", "--spec", "lin-v", "--n", "60", "--reps", "30", "--seed", "8", "--per-rep",
        per_rep.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);

    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&per_rep).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["rep", "estimator", "converged", "theta1", "theta2"]
    );
    let mut values: std::collections::BTreeMap<(String, usize), Vec<f64>> = Default::default();
    let mut order = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        if !order.contains(&rec[1].to_string()) {
            order.push(rec[1].to_string());
        }
        for k in 0..2 {
            if !rec[3 + k].is_empty() {
                values.entry((rec[1].to_string(), k)).or_default().push(rec[3 + k].parse().unwrap());
            }
        }
    }
    assert_eq!(order, ["MDep", "2SLS"]);
    let truth = [1.0, -1.0];
    for est in &order {
        let mut expected = vec![est.clone()];
        for (k, t) in truth.iter().enumerate() {
            let m = metrics(&values[&(est.clone(), k)], *t).unwrap();
            expected.extend(
                m.masked()
                    .iter()
                    .map(|v| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))),
            );
        }
        let row: Vec<String> = table
            .lines()
            .find(|l| l.split_whitespace().next() == Some(est))
            .unwrap()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        assert_eq!(row, expected);
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"command": "simulate", "spec": "lin-i", "n": 40, "reps": 8, "seed": 1, "estimators": ["mdep", "ols"]}"#,
    )
    .unwrap();
    let from_file = mdep(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "2"]);
    let direct = mdep(&[
        "simulate", "--spec", "lin-i", "--n", "40", "--reps", "8", "--seed", "2", "--estimators", "mdep,ols",
    ]);
    assert_eq!(from_file.status.code(), Some(0), "{}", stderr(&from_file));
    assert_eq!(from_file.stdout, direct.stdout);
    assert!(stdout(&from_file).contains("--seed 2"));

    std::fs::write(&cfg, r#"{"spec": "lin-i", "bogus": 1}"#).unwrap();
    let o = mdep(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn out_flag_writes_the_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("table.txt");
    let args = ["simulate", "--spec", "lin-i", "--n", "30", "--reps", "4", "--seed", "6"];
    let direct = mdep(&args);
    let mut to_file = args.to_vec();
    to_file.extend(["--out", out.to_str().unwrap()]);
    let o = mdep(&to_file);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), direct.stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(mdep(&["--help"]).status.code(), Some(0));
    assert_eq!(mdep(&["--version"]).status.code(), Some(0));
    assert_eq!(mdep(&[]).status.code(), Some(1));
    assert_eq!(mdep(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(mdep(&["simulate", "--spec", "lin-xx", "--n", "50", "--reps", "2", "--seed", "1"]).status.code(), Some(1));
    // seed is mandatory for simulations
    assert_eq!(mdep(&["simulate", "--spec", "lin-i", "--n", "50", "--reps", "2"]).status.code(), Some(1));
    assert_eq!(mdep(&["fit", "--input", "/nonexistent.csv", "--outcome", "y", "--covariates", "a"]).status.code(), Some(2));
}

#[test]
fn tests_refuse_small_b() {
    let o = mdep(&["test-spec", "--spec", "lin2-i", "--n", "60", "--boot", "50"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 99"));
    let o = mdep(&["test-relevance", "--spec", "lin-ii", "--n", "60", "--boot", "98"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn relevance_test_on_strong_instrument() {
    let o = mdep(&["test-relevance", "--spec", "lin-ii", "--n", "500", "--seed", "3", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("not pivotal"));
    assert!(text.contains("# boot: 199"));
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(&recs[0][0], "pdC_n");
    assert_eq!(&recs[1][0], "pdC_n^nl");
    let p: f64 = recs[0][2].parse().unwrap();
    assert!(p < 0.01, "p = {p}");
}

#[test]
fn relevance_roles_from_csv() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("rel.csv");
    let spec = DgpSpec::new(DgpId::LinII, 200).unwrap();
    let d = dgp_generate(&spec, &mut stream_rng(9, 0)).unwrap().data;
    let rows: Vec<Vec<String>> = (0..d.n())
        .map(|i| vec![d.x()[(i, 0)].to_string(), d.x()[(i, 1)].to_string(), d.z()[(i, 1)].to_string()])
        .collect();
    write_csv(&path, &["c", "e", "w"], &rows);
    let o = mdep(&[
        "test-relevance", "--input", path.to_str().unwrap(), "--covariates", "c,e", "--instruments", "c,w",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("endogenous e, excluded instruments w, controls c"));

    // two endogenous covariates cannot be tested
    let o = mdep(&["test-relevance", "--input", path.to_str().unwrap(), "--covariates", "c,e", "--instruments", "w"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spec_test_reports_p_value() {
    let o = mdep(&["test-spec", "--spec", "lin2-i", "--n", "80", "--seed", "4", "--boot", "99"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("T_n")).unwrap();
    let p: f64 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(text.contains("# seed: 4"));
}
